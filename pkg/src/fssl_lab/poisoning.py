"""Trigger embedding, poison-set selection, and update-constraint machinery.

The dual constraints keep a malicious model both near the global model
(radius projection in parameter space) and quiet in well-trained
directions (attack gradients masked onto historically least-updated
coordinates, tracked by a per-coordinate moving average of clean-gradient
activity).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import RngStream
from .encoder import ModelParams
from .errors import (
    DimMismatch,
    IndexOutOfRange,
    InsufficientTargetSamples,
    LayoutMismatch,
    SingleClient,
)


@dataclass(frozen=True)
class TriggerSpec:
    """Fixed input pattern written over selected coordinates."""

    coords: tuple[int, ...]
    values: tuple[float, ...]
    target_class: int

    def __post_init__(self):
        if len(self.coords) != len(self.values):
            raise ValueError("coords and values must have equal length")
        if len(set(self.coords)) != len(self.coords):
            raise ValueError("trigger coordinates must be distinct")


@dataclass(eq=False)
class GradStats:
    """EWMA of clean-gradient magnitudes plus participation count."""

    zeta: np.ndarray
    rounds_participated: int = 0
    k_frac: float = 0.2
    magnitude: bool = True   # False: bottom-k as a 0/1 indicator instead of |g|

    def __post_init__(self):
        self.zeta = np.asarray(self.zeta, dtype=np.float64)
        if not 0.0 < self.k_frac <= 1.0:
            raise ValueError("k_frac must lie in (0, 1]")


def embed_trigger(x: np.ndarray, trig: TriggerSpec) -> np.ndarray:
    """Copy of x with the trigger pattern written in; idempotent."""
    x = np.asarray(x, dtype=np.float64)
    out = x.copy()
    for c, v in zip(trig.coords, trig.values):
        if not 0 <= c < x.shape[-1]:
            raise IndexOutOfRange(f"trigger coordinate {c} outside dim {x.shape[-1]}")
        out[..., c] = v
    return out


def make_poison_set(
    samples: np.ndarray,
    labels: np.ndarray,
    ratio: float,
    trig: TriggerSpec,
    rng: RngStream,
) -> tuple[np.ndarray, np.ndarray]:
    """Pick ceil(ratio*|D|) target-class samples and embed the trigger.

    Returns (selected indices into ``samples``, triggered copies).
    """
    labels = np.asarray(labels)
    n_poison = int(np.ceil(ratio * len(labels)))
    if n_poison == 0:
        return np.empty(0, dtype=np.int64), np.empty((0, samples.shape[1]))
    candidates = np.nonzero(labels == trig.target_class)[0]
    if len(candidates) < n_poison:
        raise InsufficientTargetSamples(
            f"class {trig.target_class} has {len(candidates)} samples, need {n_poison}"
        )
    chosen = np.sort(candidates[rng.choice(len(candidates), size=n_poison, replace=False)])
    poisoned = np.stack([embed_trigger(samples[i], trig) for i in chosen])
    return chosen, poisoned


def project_eps_ball(w: ModelParams, w_star: ModelParams, eps: float) -> ModelParams:
    """Pull w back onto the eps-ball around w_star (identity if inside)."""
    if w.layout != w_star.layout:
        raise LayoutMismatch("cannot project across different layouts")
    delta = w.flat - w_star.flat
    dist = float(np.linalg.norm(delta))
    if dist <= eps:
        return w
    return ModelParams(w_star.flat + (eps / dist) * delta, w.layout)


def model_replace(
    w_k: ModelParams, w_star: ModelParams, client_sizes: list[int], k: int
) -> ModelParams:
    """Upload-time rescaling that offsets the other clients' updates.

    Computed term by term as sum_{j != k} n_j / (sum_{j != k} n_j) * (w_k - w*);
    the weights telescope to 1, so the result is 2*w_k - w* for any sizes.
    """
    if w_k.layout != w_star.layout:
        raise LayoutMismatch("cannot replace across different layouts")
    if len(client_sizes) < 2:
        raise SingleClient("model replacement needs >= 2 participating clients")
    others = [n for j, n in enumerate(client_sizes) if j != k]
    total = float(sum(others))
    diff = w_k.flat - w_star.flat
    adjusted = w_k.flat.copy()
    for n_j in others:
        adjusted = adjusted + (n_j / total) * diff
    return ModelParams(adjusted, w_k.layout)


def _bottom_k_vector(g: np.ndarray, k_frac: float, magnitude: bool) -> np.ndarray:
    """|g| (or 1) on the ceil(k_frac*dim) smallest-|g| coordinates, 0 elsewhere."""
    mag = np.abs(g)
    k = int(np.ceil(k_frac * g.size))
    order = np.argsort(mag, kind="stable")   # ties resolved by lowest index
    out = np.zeros_like(g)
    sel = order[:k]
    out[sel] = mag[sel] if magnitude else 1.0
    return out


def update_zeta(gs: GradStats, g_clean: np.ndarray) -> GradStats:
    """EWMA step: zeta <- (1 - 1/p) * zeta + (1/p) * bottom_k(g_clean)."""
    g_clean = np.asarray(g_clean, dtype=np.float64)
    if g_clean.shape != gs.zeta.shape:
        raise DimMismatch(f"gradient shape {g_clean.shape} vs zeta {gs.zeta.shape}")
    gs.rounds_participated += 1
    p = gs.rounds_participated
    bk = _bottom_k_vector(g_clean, gs.k_frac, gs.magnitude)
    gs.zeta = (1.0 - 1.0 / p) * gs.zeta + (1.0 / p) * bk
    return gs


def bottom_k_support(gs: GradStats) -> np.ndarray:
    """Indices of the ceil(k_frac*dim) smallest zeta entries (ties: lowest index)."""
    k = int(np.ceil(gs.k_frac * gs.zeta.size))
    return np.sort(np.argsort(gs.zeta, kind="stable")[:k])


def mask_to_bottom_k(g_attack: np.ndarray, gs: GradStats) -> np.ndarray:
    """Zero the attack gradient outside the bottom-k support set."""
    g_attack = np.asarray(g_attack, dtype=np.float64)
    if g_attack.shape != gs.zeta.shape:
        raise DimMismatch(f"gradient shape {g_attack.shape} vs zeta {gs.zeta.shape}")
    out = np.zeros_like(g_attack)
    sel = bottom_k_support(gs)
    out[sel] = g_attack[sel]
    return out


def cold_support(gs: GradStats) -> np.ndarray:
    """Coordinates the EWMA marks as persistently least-updated.

    The moving average only ever deposits mass on coordinates that land in
    the per-round bottom-k of clean-gradient magnitude, so a durably cold
    coordinate is one with LARGE zeta; everything the benign task keeps
    moving stays at zero. Selection takes the ceil(k_frac*dim) largest
    entries (ties: lowest index) so the set size matches the masked count.
    """
    k = int(np.ceil(gs.k_frac * gs.zeta.size))
    return np.sort(np.argsort(-gs.zeta, kind="stable")[:k])


def mask_to_cold(g_attack: np.ndarray, gs: GradStats) -> np.ndarray:
    """Zero the attack gradient outside the identified cold-coordinate set."""
    g_attack = np.asarray(g_attack, dtype=np.float64)
    if g_attack.shape != gs.zeta.shape:
        raise DimMismatch(f"gradient shape {g_attack.shape} vs zeta {gs.zeta.shape}")
    out = np.zeros_like(g_attack)
    sel = cold_support(gs)
    out[sel] = g_attack[sel]
    return out

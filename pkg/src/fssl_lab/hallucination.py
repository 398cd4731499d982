"""Synthetic hard-positive generation on the unit sphere.

Positives for a poisoned anchor are drawn along the geodesic from the
anchor toward a randomly chosen prototype, with the step capped at the
largest value for which the point still falls in the anchor's prototype
cell (the hierarchy constraint). Prototypes come from spherical k-means
over the most recent queue entries, so they track the drifting encoder.
Everything emitted here is detached: generated keys never carry gradients.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import RngStream, cosine_sim, normalize, spherical_kmeans
from .errors import DegenerateGeodesic, InsufficientQueue
from .losses import MemoryQueue

_PARALLEL_TOL = 1e-9


@dataclass(frozen=True)
class PrototypeSet:
    """Unit-norm cluster centers acting as semantic anchors."""

    prototypes: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.prototypes) < 2:
            raise ValueError("need >= 2 prototypes to express a hierarchy constraint")

    def __len__(self) -> int:
        return len(self.prototypes)

    def as_matrix(self) -> np.ndarray:
        return np.stack(self.prototypes)


@dataclass(frozen=True)
class HallucinationConfig:
    hardness: float = 0.8          # cap on the interpolation fraction of t*
    candidates: int = 4            # positives attempted per anchor
    top_k: int = 256               # most recent queue entries clustered
    n_prototypes: int = 10
    grid_step: float = 0.02
    refine_tol: float = 1e-4

    def __post_init__(self):
        if not 0.0 < self.hardness <= 1.0:
            raise ValueError("hardness must lie in (0, 1]")
        if self.candidates < 1:
            raise ValueError("need >= 1 candidate per anchor")
        if self.top_k < self.n_prototypes:
            raise ValueError("top_k must be >= number of prototypes")
        if not 0.0 < self.grid_step <= 1.0:
            raise ValueError("grid_step must lie in (0, 1]")
        if self.refine_tol <= 0.0:
            raise ValueError("refine_tol must be > 0")


def build_prototypes(
    queue: MemoryQueue, cfg: HallucinationConfig, rng: RngStream
) -> PrototypeSet:
    """Cluster the top_k most recent queue entries into unit-norm prototypes."""
    if len(queue) < cfg.top_k:
        raise InsufficientQueue(
            f"queue holds {len(queue)} entries, prototype build needs {cfg.top_k}"
        )
    pts = queue.recent(cfg.top_k)
    cents = spherical_kmeans(pts, cfg.n_prototypes, rng)
    return PrototypeSet(tuple(normalize(c) for c in cents))


def closest_prototype(v, ps: PrototypeSet) -> tuple[int, np.ndarray]:
    """Index and value of the max-cosine prototype; ties go to the lowest index."""
    sims = ps.as_matrix() @ np.asarray(v, dtype=np.float64)
    idx = int(np.argmax(sims))
    return idx, ps.prototypes[idx]


def geodesic_offset(t: float, p_base: np.ndarray, v_k: np.ndarray) -> np.ndarray:
    """Offset d(t) such that v_k + d(t) slerps from v_k (t=0) to p_base (t=1)."""
    cos_phi = cosine_sim(p_base, v_k)
    if abs(cos_phi) >= 1.0 - _PARALLEL_TOL:
        raise DegenerateGeodesic("anchor and base prototype are (anti-)parallel")
    phi = np.arccos(cos_phi)
    sin_phi = np.sin(phi)
    return (
        np.sin((1.0 - t) * phi) / sin_phi * np.asarray(v_k, dtype=np.float64)
        + np.sin(t * phi) / sin_phi * np.asarray(p_base, dtype=np.float64)
        - v_k
    )


def _in_cell(point: np.ndarray, proto_matrix: np.ndarray, cell: int) -> bool:
    sims = proto_matrix @ point
    return int(np.argmax(sims)) == cell


def _slerp_points(ts: np.ndarray, p_base: np.ndarray, v_k: np.ndarray) -> np.ndarray:
    """v_k + d(t) for a whole vector of ts at once; rows are unit-norm."""
    cos_phi = cosine_sim(p_base, v_k)
    if abs(cos_phi) >= 1.0 - _PARALLEL_TOL:
        raise DegenerateGeodesic("anchor and base prototype are (anti-)parallel")
    phi = np.arccos(cos_phi)
    sin_phi = np.sin(phi)
    return (
        np.outer(np.sin((1.0 - ts) * phi) / sin_phi, np.asarray(v_k, dtype=np.float64))
        + np.outer(np.sin(ts * phi) / sin_phi, np.asarray(p_base, dtype=np.float64))
    )


def search_t_star(
    v_k: np.ndarray,
    p_base: np.ndarray,
    ps: PrototypeSet,
    cfg: HallucinationConfig,
) -> float:
    """Largest step along the geodesic that keeps the anchor's cell.

    Scans t over a grid of spacing grid_step, takes the last feasible grid
    point, then bisects against the next (infeasible) grid point down to
    refine_tol. t=0 is always feasible; a fully feasible grid yields 1.
    """
    proto = ps.as_matrix()
    cell, _ = closest_prototype(v_k, ps)

    grid = np.append(np.arange(0.0, 1.0, cfg.grid_step), 1.0)
    cells = np.argmax(_slerp_points(grid, p_base, v_k) @ proto.T, axis=1)
    feasible = cells == cell
    if feasible.all():
        return 1.0
    last_ok = int(np.max(np.nonzero(feasible)[0]))
    lo = float(grid[last_ok])
    hi = float(grid[last_ok + 1])   # exists and is infeasible: last_ok is the max feasible index

    while hi - lo > cfg.refine_tol:
        mid = 0.5 * (lo + hi)
        if _in_cell(v_k + geodesic_offset(mid, p_base, v_k), proto, cell):
            lo = mid
        else:
            hi = mid
    return lo


def generate_positives(
    v_k: np.ndarray,
    ps: PrototypeSet,
    cfg: HallucinationConfig,
    rng: RngStream,
) -> tuple[list[np.ndarray], int]:
    """Sample constraint-checked hard positives for one anchor.

    Each candidate draws its own base prototype and a step t_c uniform in
    (0, hardness * t*). Candidates landing outside the anchor's prototype
    cell are discarded, so the returned count can be below cfg.candidates.
    """
    proto = ps.as_matrix()
    cell, _ = closest_prototype(v_k, ps)
    kept: list[np.ndarray] = []
    for _ in range(cfg.candidates):
        offset = None
        for _attempt in range(len(ps)):
            p_base = ps.prototypes[int(rng.integers(len(ps)))]
            try:
                t_star = search_t_star(v_k, p_base, ps, cfg)
                t_c = float(rng.uniform(0.0, cfg.hardness * t_star))
                offset = geodesic_offset(t_c, p_base, v_k)
                break
            except DegenerateGeodesic:
                continue
        if offset is None:
            continue
        cand = v_k + offset
        if _in_cell(cand, proto, cell):
            kept.append(cand)
    return kept, len(kept)

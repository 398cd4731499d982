"""Finite-difference oracles for every analytic gradient in the package.

Each check draws seeded random instances, compares the hand-derived
gradient against central differences, and reports the worst relative
error with denominator max(1, ||grad||_inf). The ``perturb`` knob exists
so tests can prove the checks actually catch a wrong gradient.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .core import RngStream, normalize
from .encoder import LayerLayout, ModelParams, backward, forward, init
from .losses import MemoryQueue, info_nce, loss_bfe, loss_he

FD_STEP = 1e-5
THRESHOLD = 1e-4


@dataclass(frozen=True)
class CheckReport:
    name: str
    max_rel_err: float
    threshold: float
    n_instances: int
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.threshold


def central_diff(f, x: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    g = np.zeros_like(x, dtype=np.float64)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += step
        xm[i] -= step
        g[i] = (f(xp) - f(xm)) / (2.0 * step)
    return g


def rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = max(1.0, float(np.max(np.abs(analytic))))
    return float(np.max(np.abs(analytic - numeric))) / denom


def _random_unit(rng: RngStream, dim: int) -> np.ndarray:
    return normalize(rng.normal(size=dim))


def check_encoder_backward(n: int = 100, seed: int = 7, perturb: float = 0.0) -> CheckReport:
    """backward() vs central differences of d_emb . forward(p, x) in p."""
    t0 = time.perf_counter()
    rng = RngStream(seed, (1,))
    worst = 0.0
    layout = LayerLayout((3, 4, 2), "tanh")
    for _ in range(n):
        p = init(layout, rng)
        p.flat += rng.normal(0.0, 0.3, size=p.flat.shape)   # move away from zero biases
        x = rng.normal(size=3)
        d_emb = rng.normal(size=2)
        emb, cache = forward(p, x)
        g = backward(p, cache, d_emb) + perturb

        def f(flat, x=x, d_emb=d_emb):
            e, _ = forward(ModelParams(flat, layout), x)
            return float(d_emb @ e)

        worst = max(worst, rel_err(g, central_diff(f, p.flat)))
    return CheckReport("encoder_backward", worst, THRESHOLD, n, time.perf_counter() - t0)


def check_info_nce(n: int = 100, seed: int = 11, perturb: float = 0.0) -> CheckReport:
    t0 = time.perf_counter()
    rng = RngStream(seed, (2,))
    worst = 0.0
    dim = 6
    for _ in range(n):
        v_q = _random_unit(rng, dim)
        v_k = _random_unit(rng, dim)
        q = MemoryQueue(16).enqueue([_random_unit(rng, dim) for _ in range(5)])
        tau = float(rng.uniform(0.1, 1.0))
        _, g = info_nce(v_q, v_k, q, tau)
        g = g + perturb
        fd = central_diff(lambda v: info_nce(v, v_k, q, tau)[0], v_q)
        worst = max(worst, rel_err(g, fd))
    return CheckReport("info_nce_grad", worst, THRESHOLD, n, time.perf_counter() - t0)


def check_loss_he(n: int = 100, seed: int = 13, perturb: float = 0.0) -> CheckReport:
    t0 = time.perf_counter()
    rng = RngStream(seed, (3,))
    worst = 0.0
    dim = 6
    for _ in range(n):
        v_q = _random_unit(rng, dim)
        pos = [_random_unit(rng, dim) for _ in range(int(rng.integers(1, 5)))]
        tau = float(rng.uniform(0.1, 1.0))
        _, g = loss_he(v_q, pos, tau)
        g = g + perturb
        fd = central_diff(lambda v: loss_he(v, pos, tau)[0], v_q)
        worst = max(worst, rel_err(g, fd))
    return CheckReport("loss_he_grad", worst, THRESHOLD, n, time.perf_counter() - t0)


def check_loss_bfe(n: int = 100, seed: int = 17, perturb: float = 0.0) -> CheckReport:
    t0 = time.perf_counter()
    rng = RngStream(seed, (4,))
    worst = 0.0
    dim = 6
    for _ in range(n):
        v_q = _random_unit(rng, dim)
        pos = [_random_unit(rng, dim) for _ in range(int(rng.integers(1, 4)))]
        q = MemoryQueue(16).enqueue([_random_unit(rng, dim) for _ in range(6)])
        tau = float(rng.uniform(0.1, 1.0))
        _, g = loss_bfe(v_q, pos, q, tau)
        g = g + perturb
        fd = central_diff(lambda v: loss_bfe(v, pos, q, tau)[0], v_q)
        worst = max(worst, rel_err(g, fd))
    return CheckReport("loss_bfe_grad", worst, THRESHOLD, n, time.perf_counter() - t0)


def run_all(n: int = 100, perturb: float = 0.0) -> list[CheckReport]:
    return [
        check_encoder_backward(n, perturb=perturb),
        check_info_nce(n, perturb=perturb),
        check_loss_he(n, perturb=perturb),
        check_loss_bfe(n, perturb=perturb),
    ]

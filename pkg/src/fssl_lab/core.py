"""Shared vector math, unit-sphere primitives, and seeded randomness.

All arithmetic is float64; vectors are plain 1-D numpy arrays. Functions
here are pure, so they are safe to call from concurrently running client
workers as long as each worker owns its RngStream.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimMismatch, TooFewPoints, ZeroNorm

UNIT_NORM_TOL = 1e-9
_ZERO_NORM_TOL = 1e-12


@dataclass
class RngStream:
    """Deterministic random stream keyed by (seed, stream path).

    The same (seed, path) always yields the same draw sequence, independent
    of thread scheduling, because every stream owns a private generator.
    ``child`` derives a statistically independent substream; handing one
    substream to each client keeps whole runs reproducible under any
    worker interleaving.
    """

    seed: int
    path: tuple[int, ...] = ()
    _gen: np.random.Generator | None = field(default=None, repr=False, compare=False)

    @property
    def generator(self) -> np.random.Generator:
        if self._gen is None:
            ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.path)
            self._gen = np.random.Generator(np.random.PCG64(ss))
        return self._gen

    def child(self, *ids: int) -> "RngStream":
        return RngStream(self.seed, self.path + tuple(ids))

    # Thin pass-throughs so call sites read naturally.
    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.generator.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)

    def choice(self, n, size, replace=False):
        return self.generator.choice(n, size=size, replace=replace)

    def dirichlet(self, alpha):
        return self.generator.dirichlet(alpha)

    def permutation(self, n):
        return self.generator.permutation(n)


def as_vector(v) -> np.ndarray:
    return np.asarray(v, dtype=np.float64)


def normalize(v) -> np.ndarray:
    """Project ``v`` onto the unit sphere; raises ZeroNorm below 1e-12."""
    v = as_vector(v)
    n = float(np.linalg.norm(v))
    if n < _ZERO_NORM_TOL:
        raise ZeroNorm(f"cannot normalize vector with norm {n:.3e}")
    return v / n


def is_unit(v, tol: float = UNIT_NORM_TOL) -> bool:
    return abs(float(np.linalg.norm(v)) - 1.0) <= tol


def cosine_sim(a, b) -> float:
    """Dot product of two unit vectors, clamped to [-1, 1].

    The clamp absorbs rounding overshoot so downstream arccos never sees
    a value outside its domain.
    """
    a = as_vector(a)
    b = as_vector(b)
    if a.shape != b.shape:
        raise DimMismatch(f"shapes {a.shape} vs {b.shape}")
    return float(np.clip(np.dot(a, b), -1.0, 1.0))


def spherical_kmeans(
    points: list[np.ndarray] | np.ndarray,
    n_clusters: int,
    rng: RngStream,
    max_iter: int = 50,
) -> list[np.ndarray]:
    """Cosine-similarity k-means on the unit sphere.

    Centroids are the renormalized mean of their assigned points, which is
    the maximizer of total within-cluster cosine similarity, so the
    objective is non-decreasing across iterations. An empty cluster is
    re-seeded from the point least similar to every current centroid.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    n = pts.shape[0]
    if n_clusters < 1 or n < n_clusters:
        raise TooFewPoints(f"{n} points for {n_clusters} clusters")

    init_idx = rng.choice(n, size=n_clusters, replace=False)
    centroids = pts[np.sort(init_idx)].copy()
    assign = np.full(n, -1, dtype=np.int64)

    for _ in range(max_iter):
        sims = pts @ centroids.T                        # (n, L)
        new_assign = np.argmax(sims, axis=1)            # argmax ties -> lowest index

        for c in range(n_clusters):
            if not np.any(new_assign == c):
                # farthest point: minimal best-similarity to any centroid
                worst = int(np.argmin(np.max(pts @ centroids.T, axis=1)))
                centroids[c] = pts[worst]
                new_assign[worst] = c

        if np.array_equal(new_assign, assign):
            break
        assign = new_assign

        for c in range(n_clusters):
            members = pts[assign == c]
            mean = members.mean(axis=0)
            norm = np.linalg.norm(mean)
            if norm >= _ZERO_NORM_TOL:                  # antipodal cancellation: keep old centroid
                centroids[c] = mean / norm

    return [centroids[c].copy() for c in range(n_clusters)]

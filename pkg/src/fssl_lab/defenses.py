"""Server-side robust aggregation and detection baselines.

All functions are pure given their inputs; any state a defense needs
across rounds (cumulative client histories) is owned by the caller.
Updates may be passed as ModelParams or bare 1-D arrays.
"""
from __future__ import annotations

import numpy as np

from .core import RngStream
from .encoder import ModelParams
from .errors import ClassTooSmall, EmptyUpdateSet, TooFewClients


def _flat(u) -> np.ndarray:
    return u.flat if isinstance(u, ModelParams) else np.asarray(u, dtype=np.float64)


def _stack(updates) -> np.ndarray:
    if len(updates) == 0:
        raise EmptyUpdateSet("no updates supplied")
    return np.stack([_flat(u) for u in updates])


def krum(updates, f: int) -> int:
    """Index of the update with the smallest sum of n-f-2 closest squared distances."""
    mat = _stack(updates)
    n = mat.shape[0]
    if n < f + 3:
        raise TooFewClients(f"krum needs >= f+3 = {f + 3} updates, got {n}")
    diffs = mat[:, None, :] - mat[None, :, :]
    sq = np.sum(diffs * diffs, axis=2)
    scores = np.empty(n)
    for i in range(n):
        others = np.delete(sq[i], i)
        scores[i] = np.sum(np.sort(others)[: n - f - 2])
    return int(np.argmin(scores))


def foolsgold(history) -> np.ndarray:
    """Per-client learning-rate weights in [0, 1] from cumulative update similarity.

    Clients whose histories point the same way (sybils) end up near 0;
    mutually dissimilar clients keep weight 1.
    """
    mat = _stack(history)
    n = mat.shape[0]
    if n < 2:
        raise TooFewClients("foolsgold needs >= 2 clients")
    norms = np.linalg.norm(mat, axis=1)
    safe = np.where(norms > 1e-15, norms, 1.0)
    unit = mat / safe[:, None]
    cs = unit @ unit.T - np.eye(n)

    maxcs = np.max(cs, axis=1)
    for i in range(n):
        for j in range(n):
            if i != j and maxcs[j] > 0 and maxcs[i] < maxcs[j]:
                cs[i, j] *= maxcs[i] / maxcs[j]

    wv = 1.0 - np.max(cs, axis=1)
    wv = np.clip(wv, 0.0, 1.0)
    top = np.max(wv)
    if top == 0.0:
        return wv
    wv = wv / top
    wv[wv == 1.0] = 0.99
    with np.errstate(divide="ignore"):
        wv = np.log(wv / (1.0 - wv)) + 0.5
    wv[np.isinf(wv) | (wv > 1.0)] = 1.0
    wv[wv < 0.0] = 0.0
    return wv


def _single_linkage_clusters(dist: np.ndarray) -> list[list[int]]:
    """Agglomerate to one cluster, then cut at the largest merge-distance gap."""
    n = dist.shape[0]
    merges: list[tuple[float, int, int]] = []
    cl = [[i] for i in range(n)]
    while len(cl) > 1:
        best = (np.inf, -1, -1)
        for a in range(len(cl)):
            for b in range(a + 1, len(cl)):
                d = min(dist[i, j] for i in cl[a] for j in cl[b])
                if d < best[0]:
                    best = (d, a, b)
        d, a, b = best
        merges.append((d, a, b))
        cl[a] = cl[a] + cl[b]
        del cl[b]

    dists = np.array([m[0] for m in merges])
    if np.max(dists) - np.min(dists) <= 1e-12:
        return [list(range(n))]
    gaps = np.diff(dists)
    cut_after = int(np.argmax(gaps))             # first largest gap
    threshold = 0.5 * (dists[cut_after] + dists[cut_after + 1])

    cl = [[i] for i in range(n)]
    for d, _, _ in merges:
        if d > threshold:
            break
        best = (np.inf, -1, -1)
        for a in range(len(cl)):
            for b in range(a + 1, len(cl)):
                dd = min(dist[i, j] for i in cl[a] for j in cl[b])
                if dd < best[0]:
                    best = (dd, a, b)
        _, a, b = best
        cl[a] = cl[a] + cl[b]
        del cl[b]
    return cl


def flame_lite(
    updates, w_star: ModelParams, rng: RngStream, noise_factor: float = 0.01
) -> tuple[ModelParams, dict]:
    """Cosine clustering, median-norm clipping, then Gaussian noise.

    Returns the aggregated model plus a verdict dict naming the surviving
    client indices.
    """
    mat = _stack(updates)
    n = mat.shape[0]
    if n < 3:
        raise TooFewClients("flame needs >= 3 clients")
    deltas = mat - w_star.flat[None, :]
    norms = np.linalg.norm(deltas, axis=1)
    safe = np.where(norms > 1e-15, norms, 1.0)
    unit = deltas / safe[:, None]
    dist = 1.0 - unit @ unit.T
    np.fill_diagonal(dist, 0.0)

    clusters = _single_linkage_clusters(dist)
    clusters.sort(key=lambda c: (-len(c), min(c)))
    survivors = sorted(clusters[0])

    med = float(np.median(norms))
    clipped = []
    for i in survivors:
        scale = min(1.0, med / norms[i]) if norms[i] > 1e-15 else 1.0
        clipped.append(deltas[i] * scale)
    agg = np.mean(clipped, axis=0)
    sigma = noise_factor * med
    if sigma > 0:
        agg = agg + rng.normal(0.0, sigma, size=agg.shape)
    return ModelParams(w_star.flat + agg, w_star.layout), {"survivors": survivors}


def fltrust(updates, server_update) -> tuple[np.ndarray, np.ndarray]:
    """Trust-weighted aggregation of client deltas against a clean server delta.

    Returns (aggregated delta, per-client trust scores). Every trusted
    update is rescaled to the server delta's norm before averaging; if no
    client earns positive trust the server delta itself is returned.
    """
    mat = _stack(updates)
    s = _flat(server_update)
    s_norm = float(np.linalg.norm(s))
    norms = np.linalg.norm(mat, axis=1)
    safe = np.where(norms > 1e-15, norms, 1.0)
    trust = np.maximum(0.0, (mat @ s) / (safe * max(s_norm, 1e-15)))
    trust[norms <= 1e-15] = 0.0
    if trust.sum() <= 0.0:
        return s.copy(), trust      # all-zero trust: fall back to the server update
    rescaled = mat * (s_norm / safe)[:, None]
    agg = (trust[:, None] * rescaled).sum(axis=0) / trust.sum()
    return agg, trust


def norm_clip(updates, bound: float) -> list[np.ndarray]:
    """Scale each update down so its norm is at most ``bound``."""
    if not bound > 0:
        raise ValueError("bound must be > 0")
    out = []
    for u in updates:
        v = _flat(u)
        n = float(np.linalg.norm(v))
        out.append(v * (bound / n) if n > bound else v.copy())
    return out


def _two_means(points: np.ndarray, max_iter: int = 100) -> np.ndarray:
    """Deterministic 2-means labels; farthest-pair initialization."""
    center = points.mean(axis=0)
    c0 = points[int(np.argmax(np.linalg.norm(points - center, axis=1)))]
    c1 = points[int(np.argmax(np.linalg.norm(points - c0, axis=1)))]
    cents = np.stack([c0, c1])
    labels = np.full(len(points), -1, dtype=np.int64)
    for _it in range(max_iter):
        d = np.linalg.norm(points[:, None, :] - cents[None, :, :], axis=2)
        new_labels = np.argmin(d, axis=1)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for c in range(2):
            if np.any(labels == c):
                cents[c] = points[labels == c].mean(axis=0)
    return labels


def activation_clustering_score(embeddings_per_class: dict) -> dict:
    """Mean silhouette of a 2-means split, per class.

    High scores flag classes whose embeddings fall in two well-separated
    blobs; degenerate splits (all-duplicate points, empty cluster) score 0.
    """
    scores = {}
    for cls, emb in embeddings_per_class.items():
        pts = np.atleast_2d(np.asarray(emb, dtype=np.float64))
        n = pts.shape[0]
        if n < 2:
            raise ClassTooSmall(f"class {cls} has {n} samples")
        dist = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=2)
        if np.max(dist) <= 1e-12:
            scores[cls] = 0.0
            continue
        labels = _two_means(pts)
        if len(np.unique(labels)) < 2:
            scores[cls] = 0.0
            continue
        sil = np.zeros(n)
        for i in range(n):
            own = labels == labels[i]
            other = ~own
            if own.sum() <= 1:
                sil[i] = 0.0
                continue
            a = dist[i, own].sum() / (own.sum() - 1)
            b = dist[i, other].mean()
            sil[i] = (b - a) / max(a, b) if max(a, b) > 0 else 0.0
        scores[cls] = float(sil.mean())
    return scores

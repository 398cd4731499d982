"""Contrastive objectives and their analytic gradients w.r.t. the query.

Three losses share the same conventions: similarities are plain dot
products of unit vectors scaled by a temperature, log-sum-exp is computed
with max subtraction, and queue/key embeddings are constants (gradients
flow only into the query embedding). The entanglement loss keeps its
printed form: the denominator holds negatives only, so its value may be
negative; that asymmetry against the InfoNCE denominator is intentional.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import as_vector
from .errors import (
    EmptyPositives,
    EmptyQueue,
    MuOutOfRange,
    NonPositiveTemperature,
    NoSelectedPositives,
)


class MemoryQueue:
    """Fixed-capacity FIFO of detached key embeddings (the negatives pool).

    Backed by a ring buffer sized on first enqueue. ``as_matrix`` exposes
    the stored keys in arbitrary order (losses only ever sum over them);
    ``entries``/``recent`` reconstruct true FIFO order.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("queue capacity must be >= 1")
        self.capacity = int(capacity)
        self._buf: np.ndarray | None = None
        self._count = 0
        self._next = 0     # slot the next key lands in

    def __len__(self) -> int:
        return self._count

    def enqueue(self, keys) -> "MemoryQueue":
        """Append keys in order, evicting the oldest past capacity."""
        keys = np.atleast_2d(np.asarray(keys, dtype=np.float64))
        if keys.shape[0] == 0 or keys.size == 0:
            return self
        if self._buf is None:
            self._buf = np.empty((self.capacity, keys.shape[1]))
        n = keys.shape[0]
        if n >= self.capacity:
            self._buf[:] = keys[-self.capacity :]
            self._count = self.capacity
            self._next = 0
            return self
        slots = (self._next + np.arange(n)) % self.capacity
        self._buf[slots] = keys
        self._next = int((self._next + n) % self.capacity)
        self._count = min(self._count + n, self.capacity)
        return self

    def _fifo_index(self) -> np.ndarray:
        oldest = self._next if self._count == self.capacity else 0
        return (oldest + np.arange(self._count)) % self.capacity

    def entries(self) -> list[np.ndarray]:
        if self._count == 0:
            return []
        return [self._buf[i].copy() for i in self._fifo_index()]

    def recent(self, k: int) -> np.ndarray:
        """The k most recently enqueued entries, oldest-of-them first."""
        if k > self._count:
            raise ValueError(f"asked for {k} entries, queue holds {self._count}")
        return self._buf[self._fifo_index()[-k:]]

    def as_matrix(self) -> np.ndarray:
        if self._count == 0:
            raise EmptyQueue("memory queue is empty")
        return self._buf[: self._count]


@dataclass
class LossBreakdown:
    l_cl: float
    l_he: float
    l_bfe: float
    l_total: float
    grad_vq: np.ndarray


def _check_temperature(tau: float) -> float:
    if not tau > 0.0:
        raise NonPositiveTemperature(f"temperature {tau} must be > 0")
    return float(tau)


def info_nce(v_q, v_k_pos, queue: MemoryQueue, tau: float) -> tuple[float, np.ndarray]:
    """One-positive InfoNCE against the queue; returns (loss, d loss/d v_q)."""
    tau = _check_temperature(tau)
    v_q = as_vector(v_q)
    v_k = as_vector(v_k_pos)
    negs = queue.as_matrix()

    s_pos = np.dot(v_q, v_k) / tau
    s_neg = negs @ v_q / tau
    m = max(s_pos, float(np.max(s_neg)))
    e_pos = np.exp(s_pos - m)
    e_neg = np.exp(s_neg - m)
    z = e_pos + e_neg.sum()
    loss = -(s_pos - m - np.log(z))

    p_pos = e_pos / z
    p_neg = e_neg / z
    grad = ((p_pos - 1.0) * v_k + p_neg @ negs) / tau
    return float(loss), grad


def info_nce_batch(
    v_q: np.ndarray, v_k_pos: np.ndarray, negs: np.ndarray, tau: float
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized InfoNCE for n queries sharing one negatives matrix."""
    tau = _check_temperature(tau)
    if negs.size == 0:
        raise EmptyQueue("no negatives supplied")
    s_pos = np.sum(v_q * v_k_pos, axis=1) / tau          # (n,)
    s_neg = v_q @ negs.T / tau                           # (n, M)
    m = np.maximum(s_pos, s_neg.max(axis=1))
    e_pos = np.exp(s_pos - m)
    e_neg = np.exp(s_neg - m[:, None])
    z = e_pos + e_neg.sum(axis=1)
    losses = -(s_pos - m - np.log(z))
    p_pos = e_pos / z
    grads = ((p_pos - 1.0)[:, None] * v_k_pos + (e_neg / z[:, None]) @ negs) / tau
    return losses, grads


def loss_he(v_q, hallucinated, tau: float) -> tuple[float, np.ndarray]:
    """Mean negative scaled similarity to the hallucinated keys (linear in v_q)."""
    tau = _check_temperature(tau)
    if len(hallucinated) == 0:
        raise NoSelectedPositives("no hallucinated positives to attract")
    v_q = as_vector(v_q)
    h = np.atleast_2d(np.asarray(hallucinated, dtype=np.float64))
    loss = -float(np.mean(h @ v_q)) / tau
    grad = -h.mean(axis=0) / tau
    return loss, grad


def loss_bfe(v_q, pos_keys, queue: MemoryQueue, tau: float) -> tuple[float, np.ndarray]:
    """Entanglement loss binding v_q to the poisoned keys.

    loss = -(1/|B|) * log( sum_m exp(v_q.v_m/tau) / sum_i exp(v_q.v_i^Q/tau) )

    The positive set does not appear in the denominator, so the value is
    unbounded below as the query aligns with its positives.
    """
    tau = _check_temperature(tau)
    if len(pos_keys) == 0:
        raise EmptyPositives("entanglement needs at least one positive key")
    v_q = as_vector(v_q)
    pos = np.atleast_2d(np.asarray(pos_keys, dtype=np.float64))
    negs = queue.as_matrix()
    b = pos.shape[0]

    s_pos = pos @ v_q / tau
    s_neg = negs @ v_q / tau

    m_pos = float(np.max(s_pos))
    m_neg = float(np.max(s_neg))
    lse_pos = m_pos + np.log(np.sum(np.exp(s_pos - m_pos)))
    lse_neg = m_neg + np.log(np.sum(np.exp(s_neg - m_neg)))
    loss = -(lse_pos - lse_neg) / b

    soft_pos = np.exp(s_pos - m_pos)
    soft_pos /= soft_pos.sum()
    soft_neg = np.exp(s_neg - m_neg)
    soft_neg /= soft_neg.sum()
    grad = -(soft_pos @ pos - soft_neg @ negs) / (b * tau)
    return float(loss), grad


def total_loss(
    mu: float,
    l_cl: float,
    grad_cl: np.ndarray,
    l_he: float = 0.0,
    grad_he: np.ndarray | None = None,
    l_bfe: float = 0.0,
    grad_bfe: np.ndarray | None = None,
) -> LossBreakdown:
    """Mix benign and attack terms: (1-mu)*L_CL + mu*(L_HE + L_BFE)."""
    if not 0.0 <= mu <= 1.0:
        raise MuOutOfRange(f"mu={mu} outside [0, 1]")
    grad_cl = as_vector(grad_cl)
    g_he = as_vector(grad_he) if grad_he is not None else np.zeros_like(grad_cl)
    g_bfe = as_vector(grad_bfe) if grad_bfe is not None else np.zeros_like(grad_cl)
    l_total = (1.0 - mu) * l_cl + mu * (l_he + l_bfe)
    grad = (1.0 - mu) * grad_cl + mu * (g_he + g_bfe)
    return LossBreakdown(float(l_cl), float(l_he), float(l_bfe), float(l_total), grad)

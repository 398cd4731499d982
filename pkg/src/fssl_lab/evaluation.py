"""Downstream evaluation of frozen encoders.

The probe is a single linear layer trained by full-batch gradient descent
from a zero initialization, so probe training is deterministic and never
touches the encoder. Attack success is measured only on test samples
whose true class differs from the trigger's target class.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .encoder import ModelParams, forward_batch
from .errors import EmptyTestSet, NoEligibleSamples, SingleClass
from .poisoning import TriggerSpec, embed_trigger


@dataclass(eq=False)
class LinearProbe:
    weights: np.ndarray   # (n_classes, emb_dim)
    bias: np.ndarray      # (n_classes,)

    def logits(self, emb: np.ndarray) -> np.ndarray:
        return emb @ self.weights.T + self.bias

    def predict(self, emb: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits(emb), axis=1)


def embed_dataset(encoder: ModelParams, samples: np.ndarray) -> np.ndarray:
    emb, _ = forward_batch(encoder, samples)
    return emb


def linear_probe(
    encoder: ModelParams,
    train: Dataset,
    epochs: int = 200,
    lr: float = 0.1,
) -> LinearProbe:
    """Multinomial logistic regression on frozen embeddings."""
    classes = np.unique(train.labels)
    if classes.size < 2:
        raise SingleClass("probe training needs >= 2 classes")
    emb = embed_dataset(encoder, train.samples)
    n, d = emb.shape
    c = train.n_classes
    onehot = np.zeros((n, c))
    onehot[np.arange(n), train.labels] = 1.0

    w = np.zeros((c, d))
    b = np.zeros(c)
    for _ in range(epochs):
        logits = emb @ w.T + b
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        g = (p - onehot) / n
        w -= lr * (g.T @ emb)
        b -= lr * g.sum(axis=0)
    return LinearProbe(w, b)


def acc(probe: LinearProbe, encoder: ModelParams, test: Dataset) -> float:
    """Fraction of clean test samples classified correctly."""
    if len(test) == 0:
        raise EmptyTestSet("no clean test samples")
    pred = probe.predict(embed_dataset(encoder, test.samples))
    return float(np.mean(pred == test.labels))


def asr(probe: LinearProbe, encoder: ModelParams, test: Dataset, trig: TriggerSpec) -> float:
    """Fraction of triggered non-target samples predicted as the target class."""
    eligible = test.labels != trig.target_class
    if not np.any(eligible):
        raise NoEligibleSamples(f"every test sample has class {trig.target_class}")
    triggered = np.stack([embed_trigger(x, trig) for x in test.samples[eligible]])
    pred = probe.predict(embed_dataset(encoder, triggered))
    return float(np.mean(pred == trig.target_class))


def persistence_curve(
    rounds: list[int],
    asr_by_round: dict[int, float],
    stop_round: int | None,
) -> list[tuple[int, float, float | None]]:
    """(round, ASR, retention%) at each requested round.

    Retention is the ASR as a percentage of its value at the attack's
    stopping round; it is None when no attack ever ran or the stopping
    ASR is zero.
    """
    out = []
    peak = asr_by_round.get(stop_round) if stop_round is not None else None
    for r in rounds:
        a = asr_by_round[r]
        if peak is None or peak <= 0.0:
            out.append((r, a, None))
        else:
            out.append((r, a, 100.0 * a / peak))
    return out


def clean_contrastive_loss(
    encoder: ModelParams,
    views_q: np.ndarray,
    views_k: np.ndarray,
    tau: float,
) -> float:
    """Mean InfoNCE of the global model over fixed clean view pairs.

    Sample i's positive is its own key; the other samples' keys act as the
    negatives pool. Views are fixed at experiment start, so the trace
    responds to model movement only.
    """
    vq = embed_dataset(encoder, views_q)
    vk = embed_dataset(encoder, views_k)
    logits = vq @ vk.T / tau
    m = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    pos = np.diag(e)
    losses = -np.log(pos / e.sum(axis=1))
    return float(np.mean(losses))

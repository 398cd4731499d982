"""Round orchestration: partitioning, local training, aggregation, metrics.

The server is the only writer of global state. Each client owns its
encoder pair, memory queue, and RNG substream, so local training for
different clients can run on worker threads without affecting results:
every array a client touches is private, and uploads are combined in
client-id order regardless of completion order.
"""
from __future__ import annotations

import concurrent.futures as cf
import os
from dataclasses import dataclass, field

import numpy as np

from . import defenses as defense_ops
from .config import ExperimentConfig
from .core import RngStream
from .data import Dataset, augment_batch, ingest_cifar10, synth_blobs, view_batch
from .encoder import (
    EncoderPair,
    LayerLayout,
    ModelParams,
    backward_batch,
    forward_batch,
    init,
    momentum_update,
)
from .errors import EmptyUpdateSet, InsufficientTargetSamples, LayoutMismatch
from .evaluation import acc, asr, clean_contrastive_loss, linear_probe
from .hallucination import build_prototypes, generate_positives
from .losses import MemoryQueue, info_nce_batch, loss_bfe, loss_he
from .poisoning import (
    GradStats,
    TriggerSpec,
    embed_trigger,
    make_poison_set,
    mask_to_cold,
    model_replace,
    project_eps_ball,
    update_zeta,
)

THREADS_ENV = "FSSL_LAB_THREADS"

# RNG substream ids, fixed so runs stay reproducible as code evolves.
_RNG_DATA_TRAIN = 0
_RNG_DATA_TEST = 1
_RNG_PARTITION = 2
_RNG_INIT = 3
_RNG_SERVER = 4
_RNG_EVAL_VIEWS = 5
_RNG_FLTRUST = 6
_RNG_CLIENT_BASE = 100
_RNG_POISON_BASE = 10_000


# ---------------------------------------------------------------------------
# partitioning

@dataclass(frozen=True)
class PartitionPlan:
    assignment: tuple[tuple[int, ...], ...]
    alpha: float
    seed: int


def dirichlet_partition(labels: np.ndarray, k: int, alpha: float, rng: RngStream) -> PartitionPlan:
    """Split sample indices across k clients with per-class Dirichlet proportions.

    Class by class, proportions ~ Dir(alpha * 1_k) become integer counts by
    largest-remainder rounding. Empty clients are repaired by moving one
    sample from the largest client.
    """
    labels = np.asarray(labels)
    buckets: list[list[int]] = [[] for _ in range(k)]
    for cls in np.unique(labels):
        idx = np.nonzero(labels == cls)[0]
        idx = idx[rng.permutation(len(idx))]
        props = rng.dirichlet(np.full(k, alpha))
        raw = props * len(idx)
        counts = np.floor(raw).astype(int)
        short = len(idx) - counts.sum()
        if short > 0:
            order = np.argsort(-(raw - counts), kind="stable")
            counts[order[:short]] += 1
        pos = 0
        for c in range(k):
            buckets[c].extend(idx[pos : pos + counts[c]].tolist())
            pos += counts[c]

    for c in range(k):           # repair: no client may be left empty
        if not buckets[c]:
            donor = max(range(k), key=lambda j: (len(buckets[j]), -j))
            buckets[c].append(buckets[donor].pop())

    return PartitionPlan(tuple(tuple(sorted(b)) for b in buckets), alpha, rng.seed)


def partition_chi2(plan: PartitionPlan, labels: np.ndarray, n_classes: int) -> float:
    """Chi-squared heterogeneity of per-client class counts vs the global mix."""
    labels = np.asarray(labels)
    global_frac = np.bincount(labels, minlength=n_classes) / len(labels)
    stat = 0.0
    for idx in plan.assignment:
        counts = np.bincount(labels[list(idx)], minlength=n_classes)
        expected = len(idx) * global_frac
        mask = expected > 0
        stat += float(np.sum((counts[mask] - expected[mask]) ** 2 / expected[mask]))
    return stat


# ---------------------------------------------------------------------------
# client state and local training

@dataclass(eq=False)
class AttackState:
    """Per-malicious-client attack bookkeeping."""

    trigger: TriggerSpec
    poison_indices: np.ndarray           # positions within the client's local arrays
    poisoned_samples: np.ndarray
    grad_stats: GradStats | None
    epsilon: float | None                # resolved radius; None while "auto" is unresolved
    epsilon_auto: bool
    warmup_update_norms: list[float] = field(default_factory=list)


@dataclass(eq=False)
class ClientState:
    id: int
    samples: np.ndarray                  # training view (triggered rows at poisoned indices)
    clean_samples: np.ndarray
    pair: EncoderPair
    queue: MemoryQueue
    rng: RngStream
    malicious: bool = False
    attack: AttackState | None = None

    def __post_init__(self):
        if (self.attack is not None) != self.malicious:
            raise ValueError("attack state must accompany exactly the malicious flag")

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]


@dataclass
class StepLosses:
    l_cl: float = 0.0
    l_he: float = 0.0
    l_bfe: float = 0.0
    n_steps: int = 0
    n_attack_steps: int = 0


def _epoch_batches(n: int, batch_size: int, rng: RngStream) -> list[np.ndarray]:
    order = rng.permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def client_step_benign(
    client: ClientState, batch_idx: np.ndarray, lr: float, tau: float,
    noise: float, mask_frac: float, losses: StepLosses | None = None,
) -> ClientState:
    """One benign step: two views, InfoNCE against the queue, SGD, momentum, enqueue.

    The very first step of a fresh client only fills the queue: with no
    negatives yet there is no loss to take a gradient of.
    """
    losses = losses if losses is not None else StepLosses()
    batch = client.samples[batch_idx]
    x_q, x_k = augment_batch(batch, noise, mask_frac, client.rng)
    v_k, _ = forward_batch(client.pair.target, x_k)

    if len(client.queue) > 0:
        v_q, cache = forward_batch(client.pair.online, x_q)
        per_loss, per_grad = info_nce_batch(v_q, v_k, client.queue.as_matrix(), tau)
        if lr > 0:
            grad = backward_batch(client.pair.online, cache, per_grad / len(batch_idx))
            client.pair.online.flat = client.pair.online.flat - lr * grad
        losses.l_cl += float(per_loss.mean())
        losses.n_steps += 1

    momentum_update(client.pair)
    client.queue.enqueue(v_k)
    return client


def _clean_gradient(client: ClientState, cfg: ExperimentConfig) -> np.ndarray:
    """Benign-loss gradient on clean (untriggered) local data, for the EWMA."""
    n = client.clean_samples.shape[0]
    take = min(cfg.federation.batch_size, n)
    batch_idx = client.rng.permutation(n)[:take]
    batch = client.clean_samples[batch_idx]
    x_q, x_k = augment_batch(batch, cfg.augment.noise, cfg.augment.mask_frac, client.rng)
    v_k, _ = forward_batch(client.pair.target, x_k)
    v_q, cache = forward_batch(client.pair.online, x_q)
    _, per_grad = info_nce_batch(v_q, v_k, client.queue.as_matrix(), cfg.temperature)
    return backward_batch(client.pair.online, cache, per_grad / take)


def client_step_malicious(
    client: ClientState, batch_idx: np.ndarray, w_star: ModelParams,
    cfg: ExperimentConfig, losses: StepLosses,
) -> ClientState:
    """Attack step: InfoNCE plus hallucination/entanglement terms on poisoned anchors.

    Falls back to the benign step when mu = 0 (bitwise identical; no extra
    RNG is consumed) or while the queue is too short to build prototypes.
    The attack gradient component is masked onto the bottom-k coordinate
    set before the optimizer step; afterwards the online model is pulled
    back into the epsilon ball around the received global model.
    """
    atk = cfg.attack
    fed = cfg.federation
    if atk.mu == 0.0:
        return client_step_benign(client, batch_idx, fed.lr, cfg.temperature,
                                  cfg.augment.noise, cfg.augment.mask_frac, losses)
    st = client.attack
    if len(client.queue) < atk.top_k or st.poison_indices.size == 0:
        return client_step_benign(client, batch_idx, fed.lr, cfg.temperature,
                                  cfg.augment.noise, cfg.augment.mask_frac, losses)

    batch = client.samples[batch_idx]
    x_q, x_k = augment_batch(batch, cfg.augment.noise, cfg.augment.mask_frac, client.rng)
    v_k, _ = forward_batch(client.pair.target, x_k)
    v_q, cache = forward_batch(client.pair.online, x_q)
    n = len(batch_idx)
    tau = cfg.temperature

    per_loss, per_grad = info_nce_batch(v_q, v_k, client.queue.as_matrix(), tau)
    losses.l_cl += float(per_loss.mean())

    # Attack terms run over the attacker's own poison set every step; the
    # anchors get fresh views independent of the benign batch draw.
    hall_cfg = atk.hallucination()
    prototypes = build_prototypes(client.queue, hall_cfg, client.rng)

    aq_views = view_batch(st.poisoned_samples, cfg.augment.noise,
                          cfg.augment.mask_frac, client.rng)
    ak_views = view_batch(st.poisoned_samples, cfg.augment.noise,
                          cfg.augment.mask_frac, client.rng)
    va_k, _ = forward_batch(client.pair.target, ak_views)
    va_q, cache_a = forward_batch(client.pair.online, aq_views)

    pos_keys = va_k                      # B: keys of the poisoned target-class set
    if atk.bfe_positives is not None and atk.bfe_positives < len(pos_keys):
        sel = client.rng.choice(len(pos_keys), size=atk.bfe_positives, replace=False)
        pos_keys = pos_keys[np.sort(sel)]

    n_anchor = va_q.shape[0]
    d_attack = np.zeros_like(va_q)
    l_he_sum = 0.0
    l_bfe_sum = 0.0
    for i in range(n_anchor):
        positives, g_sel = generate_positives(va_k[i], prototypes, hall_cfg, client.rng)
        if g_sel > 0:
            lh, gh = loss_he(va_q[i], positives, tau)
        else:
            lh, gh = 0.0, np.zeros_like(va_q[i])
        lb, gb = loss_bfe(va_q[i], pos_keys, client.queue, tau)
        l_he_sum += lh
        l_bfe_sum += lb
        d_attack[i] = (gh + gb) / n_anchor

    losses.l_he += l_he_sum / n_anchor
    losses.l_bfe += l_bfe_sum / n_anchor
    losses.n_attack_steps += 1
    losses.n_steps += 1

    if fed.lr > 0:
        step = backward_batch(client.pair.online, cache, (1.0 - atk.mu) * per_grad / n)
        grad_attack = backward_batch(client.pair.online, cache_a, atk.mu * d_attack)
        if st.grad_stats is not None and st.grad_stats.rounds_participated > 0:
            grad_attack = mask_to_cold(grad_attack, st.grad_stats)
        step = step + atk.lr_scale * grad_attack
        client.pair.online.flat = client.pair.online.flat - fed.lr * step
        if st.epsilon is not None:
            client.pair.online = project_eps_ball(client.pair.online, w_star, st.epsilon)

    momentum_update(client.pair)
    client.queue.enqueue(v_k)
    return client


@dataclass(eq=False)
class ClientRoundResult:
    upload: ModelParams
    losses: StepLosses
    attacked: bool                        # attack terms were eligible this round


def _client_round(
    client: ClientState, w_star: ModelParams, cfg: ExperimentConfig, attack_active: bool,
) -> ClientRoundResult:
    """Local epochs for one client on a snapshot of the global model."""
    fed = cfg.federation
    client.pair.online = w_star.copy()
    losses = StepLosses()

    attacking = (
        client.malicious and attack_active and cfg.attack.enabled and cfg.attack.mu > 0.0
    )
    # Attack activation is decided at round granularity so warmup rounds
    # stay fully benign and their update norms can calibrate epsilon.
    use_attack = attacking and len(client.queue) >= cfg.attack.top_k
    if use_attack:
        st = client.attack
        if st.epsilon_auto and st.epsilon is None and st.warmup_update_norms:
            st.epsilon = 0.5 * float(np.median(st.warmup_update_norms))
        if st.grad_stats is not None:
            update_zeta(st.grad_stats, _clean_gradient(client, cfg))

    for _ in range(fed.local_epochs):
        for batch_idx in _epoch_batches(client.n_samples, fed.batch_size, client.rng):
            if use_attack:
                client_step_malicious(client, batch_idx, w_star, cfg, losses)
            else:
                client_step_benign(client, batch_idx, fed.lr, cfg.temperature,
                                   cfg.augment.noise, cfg.augment.mask_frac, losses)

    if (client.malicious and not use_attack
            and client.attack.epsilon_auto and client.attack.epsilon is None):
        client.attack.warmup_update_norms.append(
            float(np.linalg.norm(client.pair.online.flat - w_star.flat))
        )

    return ClientRoundResult(client.pair.online.copy(), losses, use_attack)


# ---------------------------------------------------------------------------
# server: aggregation and defenses

def fedavg(updates: list[ModelParams], weights: list[int]) -> ModelParams:
    """Weighted mean of flat parameter vectors."""
    if not updates:
        raise EmptyUpdateSet("fedavg needs >= 1 update")
    layout = updates[0].layout
    for u in updates:
        if u.layout != layout:
            raise LayoutMismatch("updates come from different layouts")
    if len(weights) != len(updates) or any(w <= 0 for w in weights):
        raise ValueError("weights must be positive and match updates")
    w = np.asarray(weights, dtype=np.float64)
    w = w / w.sum()
    flat = np.zeros_like(updates[0].flat)
    for wi, u in zip(w, updates):
        flat += wi * u.flat
    return ModelParams(flat, layout)


@dataclass(eq=False)
class ServerState:
    global_params: ModelParams
    rng: RngStream
    foolsgold_history: dict[int, np.ndarray] = field(default_factory=dict)
    fltrust_root: ClientState | None = None


def aggregate(
    server: ServerState,
    uploads: list[ModelParams],
    sizes: list[int],
    client_ids: list[int],
    cfg: ExperimentConfig,
) -> tuple[ModelParams, str]:
    """Apply the configured defense and produce the next global model.

    Returns (new global, compact verdict string for the metrics row).
    """
    method = cfg.defense.method
    w_star = server.global_params

    if method == "none":
        return fedavg(uploads, sizes), ""

    if method == "krum":
        pick = defense_ops.krum(uploads, cfg.defense.krum_f)
        return uploads[pick].copy(), f"krum_selected={client_ids[pick]}"

    if method == "foolsgold":
        for cid, up in zip(client_ids, uploads):
            delta = up.flat - w_star.flat
            hist = server.foolsgold_history.get(cid)
            server.foolsgold_history[cid] = delta if hist is None else hist + delta
        history = [server.foolsgold_history[cid] for cid in client_ids]
        wv = defense_ops.foolsgold(history)
        verdict = "foolsgold_w=" + ";".join(f"{v:.4f}" for v in wv)
        if wv.sum() <= 0:
            return w_star.copy(), verdict
        agg = np.zeros_like(w_star.flat)
        for v, up in zip(wv, uploads):
            agg += v * (up.flat - w_star.flat)
        agg /= wv.sum()
        return ModelParams(w_star.flat + agg, w_star.layout), verdict

    if method == "flame":
        agg, info = defense_ops.flame_lite(
            uploads, w_star, server.rng, cfg.defense.flame_noise
        )
        kept = [client_ids[i] for i in info["survivors"]]
        return agg, "flame_kept=" + ";".join(str(c) for c in kept)

    if method == "fltrust":
        root = server.fltrust_root
        res = _client_round(root, w_star, cfg, attack_active=False)
        server_delta = ModelParams(res.upload.flat - w_star.flat, w_star.layout)
        deltas = [ModelParams(u.flat - w_star.flat, w_star.layout) for u in uploads]
        agg, trust = defense_ops.fltrust(deltas, server_delta)
        verdict = "fltrust_t=" + ";".join(f"{t:.4f}" for t in trust)
        return ModelParams(w_star.flat + agg, w_star.layout), verdict

    if method == "norm_clip":
        bound = cfg.defense.clip_bound
        deltas = [u.flat - w_star.flat for u in uploads]
        if bound is not None:
            deltas = defense_ops.norm_clip(deltas, bound)
        w = np.asarray(sizes, dtype=np.float64)
        w /= w.sum()
        agg = np.zeros_like(w_star.flat)
        for wi, d in zip(w, deltas):
            agg += wi * d
        return ModelParams(w_star.flat + agg, w_star.layout), f"norm_clip_bound={bound}"

    raise ValueError(f"unknown defense {method!r}")


# ---------------------------------------------------------------------------
# rounds and experiments

@dataclass
class RoundMetrics:
    round: int
    acc: float
    asr: float
    l_cl: float | None
    l_he: float | None
    l_bfe: float | None
    clean_loss: float
    dist_to_global: float | None
    defense: str

    CSV_FIELDS = ("round", "acc", "asr", "l_cl", "l_he", "l_bfe",
                  "clean_loss", "dist_to_global", "defense")

    def csv_row(self) -> list[str]:
        def fmt(v):
            if v is None:
                return ""
            return repr(v) if isinstance(v, float) else str(v)
        return [fmt(getattr(self, f)) for f in self.CSV_FIELDS]


def resolve_threads(cfg: ExperimentConfig) -> int:
    env = os.environ.get(THREADS_ENV)
    if env is not None:
        try:
            return max(1, int(env))
        except ValueError:
            return 1
    return max(1, cfg.threads)


@dataclass(eq=False)
class Experiment:
    """Everything a run needs: data, clients, server, evaluation fixtures."""

    cfg: ExperimentConfig
    train: Dataset
    test: Dataset
    plan: PartitionPlan
    clients: list[ClientState]
    server: ServerState
    trigger: TriggerSpec
    eval_views: tuple[np.ndarray, np.ndarray]
    metrics: list[RoundMetrics] = field(default_factory=list)

    @property
    def target_class(self) -> int:
        return self.trigger.target_class


def _client_participates(ex: Experiment, round_idx: int) -> list[int]:
    cfg = ex.cfg
    k = cfg.federation.clients
    want = cfg.federation.participating or k
    malicious = [c.id for c in ex.clients if c.malicious]
    benign = [c.id for c in ex.clients if not c.malicious]

    chosen_mal = []
    for cid in malicious:
        if cfg.attack.participation >= 1.0 or ex.server.rng.uniform() < cfg.attack.participation:
            chosen_mal.append(cid)
    if want >= k:
        return sorted(chosen_mal + benign)
    chosen_mal = chosen_mal[: want]
    n_benign = want - len(chosen_mal)
    picked = ex.server.rng.choice(len(benign), size=min(n_benign, len(benign)), replace=False)
    return sorted(chosen_mal + [benign[i] for i in np.sort(picked)])


def run_round(ex: Experiment, round_idx: int) -> RoundMetrics:
    """One federated round: broadcast, local training, defense, aggregate, evaluate."""
    cfg = ex.cfg
    stop = cfg.attack.stop_round
    attack_active = stop is None or round_idx <= stop
    ids = _client_participates(ex, round_idx)
    parts = [ex.clients[i] for i in ids]
    w_star = ex.server.global_params

    threads = resolve_threads(cfg)
    if threads > 1 and len(parts) > 1:
        with cf.ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(
                lambda c: _client_round(c, w_star, cfg, attack_active), parts
            ))
    else:
        results = [_client_round(c, w_star, cfg, attack_active) for c in parts]

    uploads = []
    sizes = [c.n_samples for c in parts]
    for pos, res in enumerate(results):
        up = res.upload
        if res.attacked and cfg.attack.model_replace:
            up = model_replace(up, w_star, sizes, pos)
        uploads.append(up)

    new_global, verdict = aggregate(ex.server, uploads, sizes, ids, cfg)

    dist = None
    for c, up in zip(parts, uploads):
        if c.malicious:
            dist = float(np.linalg.norm(up.flat - w_star.flat))
            break
    if dist is None:
        dist = float(np.mean([np.linalg.norm(u.flat - w_star.flat) for u in uploads]))

    ex.server.global_params = new_global

    cl_vals = [r.losses.l_cl / r.losses.n_steps for r in results if r.losses.n_steps > 0]
    he = be = 0.0
    att = [r.losses for r in results if r.losses.n_attack_steps > 0]
    if att:
        he = float(np.mean([l.l_he / l.n_attack_steps for l in att]))
        be = float(np.mean([l.l_bfe / l.n_attack_steps for l in att]))

    m = _evaluate(ex, round_idx,
                  l_cl=float(np.mean(cl_vals)) if cl_vals else None,
                  l_he=he, l_bfe=be, dist=dist, verdict=verdict)
    ex.metrics.append(m)
    return m


def _evaluate(ex: Experiment, round_idx: int, l_cl, l_he, l_bfe, dist, verdict) -> RoundMetrics:
    cfg = ex.cfg
    params = ex.server.global_params
    probe = linear_probe(params, ex.train, cfg.eval.probe_epochs, cfg.eval.probe_lr)
    a = acc(probe, params, ex.test)
    s = asr(probe, params, ex.test, ex.trigger)
    clean = clean_contrastive_loss(params, *ex.eval_views, cfg.temperature)
    return RoundMetrics(round_idx, a, s, l_cl, l_he, l_bfe, clean, dist, verdict)


def _build_dataset(cfg: ExperimentConfig, rng_train: RngStream, rng_test: RngStream):
    ds = cfg.dataset
    if ds.kind == "blobs":
        train = synth_blobs(ds.classes, ds.dim, ds.per_class, ds.spread, rng_train)
        test = synth_blobs(ds.classes, ds.dim, ds.test_per_class, ds.spread, rng_test)
        return train, test
    full = ingest_cifar10(ds.path)
    n_test = min(ds.test_per_class * full.n_classes, len(full) // 5)
    train = Dataset(full.samples[:-n_test], full.labels[:-n_test], full.n_classes)
    test = Dataset(full.samples[-n_test:], full.labels[-n_test:], full.n_classes)
    return train, test


def _auto_target(cfg, train, plan, global0, malicious_ids) -> int:
    """Attacker-side target selection from its own data and the initial model.

    Picks the local class (with enough samples to cover the poison budget)
    whose clean embedding centroid lies closest to the centroid of its
    triggered versions: the class the trigger naturally attaches to, hence
    the cheapest one to entangle. Falls back to 0 for benign runs.
    """
    if not malicious_ids:
        return 0
    first = min(malicious_ids)
    idx = list(plan.assignment[first])
    local_x = train.samples[idx]
    local_y = train.labels[idx]
    need = max(1, int(np.ceil(cfg.attack.poison_ratio * len(idx))))
    trig_probe = cfg.attack.trigger(0)    # target id irrelevant for embedding
    counts = np.bincount(local_y, minlength=train.n_classes)

    best_cls, best_score = None, -np.inf
    for c in range(train.n_classes):
        if counts[c] < need:
            continue
        rows = local_x[local_y == c]
        clean_emb, _ = forward_batch(global0, rows)
        trig_rows = np.stack([embed_trigger(x, trig_probe) for x in rows])
        trig_emb, _ = forward_batch(global0, trig_rows)
        m_c = clean_emb.mean(axis=0)
        m_t = trig_emb.mean(axis=0)
        score = float(m_c @ m_t / (np.linalg.norm(m_c) * np.linalg.norm(m_t)))
        if score > best_score:
            best_cls, best_score = c, score
    if best_cls is None:
        raise InsufficientTargetSamples(
            f"no local class of client {first} can cover a poison budget of {need}"
        )
    return best_cls


def build_experiment(cfg: ExperimentConfig) -> Experiment:
    """Materialize datasets, partition, clients, and the initial server state."""
    root = RngStream(cfg.seed)
    train, test = _build_dataset(cfg, root.child(_RNG_DATA_TRAIN), root.child(_RNG_DATA_TEST))
    plan = dirichlet_partition(train.labels, cfg.federation.clients,
                               cfg.federation.alpha, root.child(_RNG_PARTITION))

    layout = LayerLayout((train.dim, *cfg.encoder.hidden, cfg.encoder.emb_dim),
                         cfg.encoder.activation)
    global0 = init(layout, root.child(_RNG_INIT))

    malicious_ids = set(cfg.attack.clients) if cfg.attack.enabled else set()
    target = cfg.attack.target_class
    if target == "auto":
        target = _auto_target(cfg, train, plan, global0, malicious_ids)
    trigger = cfg.attack.trigger(int(target))

    clients = []
    for cid in range(cfg.federation.clients):
        idx = list(plan.assignment[cid])
        local = train.samples[idx].copy()
        local_labels = train.labels[idx]
        pair = EncoderPair(global0.copy(), global0.copy(), cfg.federation.momentum)
        state = ClientState(
            id=cid,
            samples=local,
            clean_samples=local.copy(),
            pair=pair,
            queue=MemoryQueue(cfg.federation.queue_capacity),
            rng=root.child(_RNG_CLIENT_BASE + cid),
        )
        if cid in malicious_ids:
            p_idx, poisoned = make_poison_set(
                local, local_labels, cfg.attack.poison_ratio, trigger,
                root.child(_RNG_POISON_BASE + cid),
            )
            if p_idx.size:
                state.samples[p_idx] = poisoned
            eps_cfg = cfg.attack.epsilon
            gs = None
            if cfg.attack.k_frac is not None:
                gs = GradStats(np.zeros(layout.n_params), 0, cfg.attack.k_frac,
                               magnitude=cfg.attack.zeta_mode == "magnitude")
            state.malicious = True
            state.attack = AttackState(
                trigger=trigger,
                poison_indices=p_idx,
                poisoned_samples=poisoned,
                grad_stats=gs,
                epsilon=None if eps_cfg in ("auto", None) else float(eps_cfg),
                epsilon_auto=eps_cfg == "auto",
            )
        clients.append(state)

    server = ServerState(global_params=global0.copy(), rng=root.child(_RNG_SERVER))
    if cfg.defense.method == "fltrust":
        root_rng = root.child(_RNG_FLTRUST)
        n_root = min(cfg.defense.fltrust_root_samples, len(train))
        ridx = np.sort(root_rng.choice(len(train), size=n_root, replace=False))
        root_samples = train.samples[ridx].copy()
        server.fltrust_root = ClientState(
            id=-1,
            samples=root_samples,
            clean_samples=root_samples.copy(),
            pair=EncoderPair(global0.copy(), global0.copy(), cfg.federation.momentum),
            queue=MemoryQueue(cfg.federation.queue_capacity),
            rng=root_rng.child(0),
        )

    eval_rng = root.child(_RNG_EVAL_VIEWS)
    n_eval = min(cfg.eval.eval_batch, len(train))
    eidx = np.sort(eval_rng.choice(len(train), size=n_eval, replace=False))
    vq, vk = augment_batch(train.samples[eidx], cfg.augment.noise,
                           cfg.augment.mask_frac, eval_rng)

    return Experiment(cfg, train, test, plan, clients, server, trigger, (vq, vk))


@dataclass(eq=False)
class ExperimentResult:
    cfg: ExperimentConfig
    metrics: list[RoundMetrics]
    final_params: ModelParams
    target_class: int
    epsilon: float | None

    def asr_by_round(self) -> dict[int, float]:
        return {m.round: m.asr for m in self.metrics}

    def summary(self) -> dict:
        from .evaluation import persistence_curve

        stop = self.cfg.attack.stop_round
        persist = None
        if stop is not None and self.cfg.attack.enabled and self.cfg.attack.mu > 0:
            rounds = sorted({stop, (stop + self.metrics[-1].round) // 2, self.metrics[-1].round})
            rounds = [r for r in rounds if r >= stop]
            persist = [
                {"round": r, "asr": a, "retention_pct": p}
                for r, a, p in persistence_curve(rounds, self.asr_by_round(), stop)
            ]
        final = self.metrics[-1]
        return {
            "config": self.cfg.to_dict(),
            "target_class": self.target_class,
            "epsilon_resolved": self.epsilon,
            "rounds_run": final.round,
            "final": {"acc": final.acc, "asr": final.asr, "clean_loss": final.clean_loss},
            "persistence": persist,
        }


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Round 0 evaluation of the initial model, then E federated rounds."""
    ex = build_experiment(cfg)
    ex.metrics.append(_evaluate(ex, 0, l_cl=None, l_he=None, l_bfe=None,
                                dist=None, verdict=""))
    for r in range(1, cfg.federation.rounds + 1):
        run_round(ex, r)

    eps = None
    for c in ex.clients:
        if c.malicious and c.attack is not None:
            eps = c.attack.epsilon
            break
    return ExperimentResult(cfg, ex.metrics, ex.server.global_params.copy(),
                            ex.target_class, eps)

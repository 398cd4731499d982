"""Experiment configuration: schema, defaults, YAML loading, overrides.

A config is a nested mapping; every field has a default, and validation
reports the dotted path of the first offending field. The fully resolved
mapping is embedded in each run's JSON summary, which makes any run
reproducible from its summary alone.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import yaml

from .errors import ConfigInvalid
from .hallucination import HallucinationConfig
from .poisoning import TriggerSpec

_DEFENSES = ("none", "krum", "foolsgold", "flame", "fltrust", "norm_clip")


@dataclass(frozen=True)
class DatasetConfig:
    kind: str = "blobs"
    classes: int = 10
    dim: int = 32
    per_class: int = 200
    test_per_class: int = 50
    spread: float = 0.15
    path: str | None = None


@dataclass(frozen=True)
class AugmentConfig:
    noise: float = 0.1
    mask_frac: float = 0.1


@dataclass(frozen=True)
class EncoderConfig:
    hidden: tuple[int, ...] = (64, 64)
    emb_dim: int = 16
    activation: str = "tanh"


@dataclass(frozen=True)
class FederationConfig:
    clients: int = 5
    participating: int | None = None     # None: full participation
    rounds: int = 100
    local_epochs: int = 3
    batch_size: int = 128
    lr: float = 0.001
    momentum: float = 0.99
    alpha: float = 10.0                  # Dirichlet concentration for the partition
    queue_capacity: int = 512


@dataclass(frozen=True)
class AttackConfig:
    enabled: bool = True
    clients: tuple[int, ...] = (0,)
    mu: float = 0.5
    poison_ratio: float = 0.01
    target_class: int | str = 0          # class id, or "auto" for the attacker's majority class
    trigger_coords: tuple[int, ...] = (28, 29, 30, 31)
    trigger_values: tuple[float, ...] = (3.0, 3.0, 3.0, 3.0)
    hardness: float = 0.8
    prototypes: int = 10
    top_k: int = 256
    candidates: int = 4
    grid_step: float = 0.02
    refine_tol: float = 1e-4
    epsilon: float | str | None = "auto"  # "auto": half the median warmup update norm
    k_frac: float | None = 0.2            # None: dimension masking off
    zeta_mode: str = "magnitude"          # or "indicator"
    lr_scale: float = 1.0                 # attacker-side boost on the masked attack gradient
    model_replace: bool = False
    stop_round: int | None = None
    participation: float = 1.0
    bfe_positives: int | None = None      # None: entangle against the whole poison set

    def hallucination(self) -> HallucinationConfig:
        return HallucinationConfig(
            hardness=self.hardness,
            candidates=self.candidates,
            top_k=self.top_k,
            n_prototypes=self.prototypes,
            grid_step=self.grid_step,
            refine_tol=self.refine_tol,
        )

    def trigger(self, target_class: int) -> TriggerSpec:
        return TriggerSpec(self.trigger_coords, self.trigger_values, target_class)


@dataclass(frozen=True)
class DefenseConfig:
    method: str = "none"
    krum_f: int = 1
    flame_noise: float = 0.01
    fltrust_root_samples: int = 64
    clip_bound: float | None = None


@dataclass(frozen=True)
class EvalConfig:
    probe_epochs: int = 200
    probe_lr: float = 0.1
    eval_batch: int = 128                # clean view pairs held out for the loss trace


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    threads: int = 1
    temperature: float = 0.2
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    federation: FederationConfig = field(default_factory=FederationConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    defense: DefenseConfig = field(default_factory=DefenseConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "threads": self.threads,
            "temperature": self.temperature,
            "dataset": _plain(self.dataset),
            "augment": _plain(self.augment),
            "encoder": _plain(self.encoder),
            "federation": _plain(self.federation),
            "attack": _plain(self.attack),
            "defense": _plain(self.defense),
            "eval": _plain(self.eval),
        }


def _plain(dc) -> dict:
    out = {}
    for name in dc.__dataclass_fields__:
        v = getattr(dc, name)
        out[name] = list(v) if isinstance(v, tuple) else v
    return out


def _check(cond: bool, fld: str, msg: str) -> None:
    if not cond:
        raise ConfigInvalid(fld, msg)


_MISSING = object()


def _take(d: dict, key: str, default):
    v = d.pop(key, _MISSING)
    return default if v is _MISSING else v


def _int(v, fld: str) -> int:
    _check(isinstance(v, int) and not isinstance(v, bool), fld, f"expected integer, got {v!r}")
    return v


def _num(v, fld: str) -> float:
    _check(isinstance(v, (int, float)) and not isinstance(v, bool), fld, f"expected number, got {v!r}")
    return float(v)


def _section(raw: dict, name: str) -> dict:
    sec = raw.pop(name, {}) or {}
    _check(isinstance(sec, dict), name, "expected a mapping")
    return dict(sec)


def _no_extras(d: dict, path: str) -> None:
    _check(not d, f"{path}.{next(iter(d))}" if d else path, "unknown field")


def from_dict(raw: dict) -> ExperimentConfig:
    """Validate a raw mapping into an ExperimentConfig; raises ConfigInvalid."""
    raw = copy.deepcopy(raw or {})
    _check(isinstance(raw, dict), "config", "top level must be a mapping")

    seed = _int(_take(raw, "seed", 0), "seed")
    _check(seed >= 0, "seed", "must be >= 0")
    threads = _int(_take(raw, "threads", 1), "threads")
    _check(threads >= 1, "threads", "must be >= 1")
    temperature = _num(_take(raw, "temperature", 0.2), "temperature")
    _check(temperature > 0, "temperature", "must be > 0")

    d = _section(raw, "dataset")
    ds = DatasetConfig(
        kind=_take(d, "kind", "blobs"),
        classes=_int(_take(d, "classes", 10), "dataset.classes"),
        dim=_int(_take(d, "dim", 32), "dataset.dim"),
        per_class=_int(_take(d, "per_class", 200), "dataset.per_class"),
        test_per_class=_int(_take(d, "test_per_class", 50), "dataset.test_per_class"),
        spread=_num(_take(d, "spread", 0.15), "dataset.spread"),
        path=_take(d, "path", None),
    )
    _no_extras(d, "dataset")
    _check(ds.kind in ("blobs", "cifar10"), "dataset.kind", f"unknown kind {ds.kind!r}")
    _check(ds.classes >= 2, "dataset.classes", "must be >= 2")
    _check(ds.dim >= ds.classes, "dataset.dim", "must be >= dataset.classes")
    _check(ds.per_class >= 1, "dataset.per_class", "must be >= 1")
    _check(ds.test_per_class >= 1, "dataset.test_per_class", "must be >= 1")
    _check(ds.spread >= 0, "dataset.spread", "must be >= 0")
    if ds.kind == "cifar10":
        _check(bool(ds.path), "dataset.path", "required for cifar10")

    a = _section(raw, "augment")
    aug = AugmentConfig(
        noise=_num(_take(a, "noise", 0.1), "augment.noise"),
        mask_frac=_num(_take(a, "mask_frac", 0.1), "augment.mask_frac"),
    )
    _no_extras(a, "augment")
    _check(aug.noise >= 0, "augment.noise", "must be >= 0")
    _check(0 <= aug.mask_frac < 1, "augment.mask_frac", "must lie in [0, 1)")

    e = _section(raw, "encoder")
    hidden = _take(e, "hidden", [64, 64])
    _check(
        isinstance(hidden, list) and hidden and all(isinstance(h, int) and h >= 1 for h in hidden),
        "encoder.hidden",
        "must be a non-empty list of positive integers",
    )
    enc = EncoderConfig(
        hidden=tuple(hidden),
        emb_dim=_int(_take(e, "emb_dim", 16), "encoder.emb_dim"),
        activation=_take(e, "activation", "tanh"),
    )
    _no_extras(e, "encoder")
    _check(enc.emb_dim >= 2, "encoder.emb_dim", "must be >= 2")
    _check(enc.activation in ("tanh", "relu"), "encoder.activation", f"unknown activation {enc.activation!r}")

    f = _section(raw, "federation")
    fed = FederationConfig(
        clients=_int(_take(f, "clients", 5), "federation.clients"),
        participating=_take(f, "participating", None),
        rounds=_int(_take(f, "rounds", 100), "federation.rounds"),
        local_epochs=_int(_take(f, "local_epochs", 3), "federation.local_epochs"),
        batch_size=_int(_take(f, "batch_size", 128), "federation.batch_size"),
        lr=_num(_take(f, "lr", 0.001), "federation.lr"),
        momentum=_num(_take(f, "momentum", 0.99), "federation.momentum"),
        alpha=_num(_take(f, "alpha", 10.0), "federation.alpha"),
        queue_capacity=_int(_take(f, "queue_capacity", 512), "federation.queue_capacity"),
    )
    _no_extras(f, "federation")
    _check(fed.clients >= 1, "federation.clients", "must be >= 1")
    if fed.participating is not None:
        _int(fed.participating, "federation.participating")
        _check(1 <= fed.participating <= fed.clients, "federation.participating", "must lie in [1, clients]")
    _check(fed.rounds >= 0, "federation.rounds", "must be >= 0")
    _check(fed.local_epochs >= 1, "federation.local_epochs", "must be >= 1")
    _check(fed.batch_size >= 1, "federation.batch_size", "must be >= 1")
    _check(fed.lr >= 0, "federation.lr", "must be >= 0")
    _check(0 <= fed.momentum < 1, "federation.momentum", "must lie in [0, 1)")
    _check(fed.alpha > 0, "federation.alpha", "must be > 0")
    _check(fed.queue_capacity >= 1, "federation.queue_capacity", "must be >= 1")

    t = _section(raw, "attack")
    trig_raw = _take(t, "trigger", {}) or {}
    _check(isinstance(trig_raw, dict), "attack.trigger", "expected a mapping")
    trig_raw = dict(trig_raw)
    coords = _take(trig_raw, "coords", [28, 29, 30, 31])
    values = _take(trig_raw, "values", [3.0, 3.0, 3.0, 3.0])
    _no_extras(trig_raw, "attack.trigger")
    _check(
        isinstance(coords, list) and all(isinstance(c, int) for c in coords),
        "attack.trigger.coords", "must be a list of integers",
    )
    _check(
        isinstance(values, list) and all(isinstance(v, (int, float)) for v in values),
        "attack.trigger.values", "must be a list of numbers",
    )
    _check(len(coords) == len(values), "attack.trigger.values", "must match coords in length")
    _check(len(set(coords)) == len(coords), "attack.trigger.coords", "must be distinct")
    _check(all(0 <= c < ds.dim for c in coords), "attack.trigger.coords", f"must lie in [0, {ds.dim})")

    clients_raw = _take(t, "clients", [0])
    _check(
        isinstance(clients_raw, list) and all(isinstance(c, int) for c in clients_raw),
        "attack.clients", "must be a list of client ids",
    )
    _check(all(0 <= c < fed.clients for c in clients_raw), "attack.clients", "client id out of range")

    atk = AttackConfig(
        enabled=bool(_take(t, "enabled", True)),
        clients=tuple(clients_raw),
        mu=_num(_take(t, "mu", 0.5), "attack.mu"),
        poison_ratio=_num(_take(t, "poison_ratio", 0.01), "attack.poison_ratio"),
        target_class=_take(t, "target_class", 0),
        trigger_coords=tuple(coords),
        trigger_values=tuple(float(v) for v in values),
        hardness=_num(_take(t, "hardness", 0.8), "attack.hardness"),
        prototypes=_int(_take(t, "prototypes", 10), "attack.prototypes"),
        top_k=_int(_take(t, "top_k", 256), "attack.top_k"),
        candidates=_int(_take(t, "candidates", 4), "attack.candidates"),
        grid_step=_num(_take(t, "grid_step", 0.02), "attack.grid_step"),
        refine_tol=_num(_take(t, "refine_tol", 1e-4), "attack.refine_tol"),
        epsilon=_take(t, "epsilon", "auto"),
        k_frac=_take(t, "k_frac", 0.2),
        zeta_mode=_take(t, "zeta_mode", "magnitude"),
        lr_scale=_num(_take(t, "lr_scale", 1.0), "attack.lr_scale"),
        model_replace=bool(_take(t, "model_replace", False)),
        stop_round=_take(t, "stop_round", None),
        participation=_num(_take(t, "participation", 1.0), "attack.participation"),
        bfe_positives=_take(t, "bfe_positives", None),
    )
    _no_extras(t, "attack")
    _check(0 <= atk.mu <= 1, "attack.mu", "must lie in [0, 1]")
    _check(0 <= atk.poison_ratio <= 1, "attack.poison_ratio", "must lie in [0, 1]")
    if atk.target_class != "auto":
        _int(atk.target_class, "attack.target_class")
        _check(0 <= atk.target_class < ds.classes, "attack.target_class", "class id out of range")
    _check(0 < atk.hardness <= 1, "attack.hardness", "must lie in (0, 1]")
    _check(atk.prototypes >= 2, "attack.prototypes", "must be >= 2")
    _check(atk.top_k >= atk.prototypes, "attack.top_k", "must be >= attack.prototypes")
    _check(atk.top_k <= fed.queue_capacity, "attack.top_k", "must be <= federation.queue_capacity")
    _check(atk.candidates >= 1, "attack.candidates", "must be >= 1")
    _check(0 < atk.grid_step <= 1, "attack.grid_step", "must lie in (0, 1]")
    _check(atk.refine_tol > 0, "attack.refine_tol", "must be > 0")
    if atk.epsilon not in ("auto", None):
        _check(_num(atk.epsilon, "attack.epsilon") > 0, "attack.epsilon", "must be > 0, 'auto', or null")
    if atk.k_frac is not None:
        _check(0 < _num(atk.k_frac, "attack.k_frac") <= 1, "attack.k_frac", "must lie in (0, 1] or be null")
    _check(atk.lr_scale > 0, "attack.lr_scale", "must be > 0")
    _check(atk.zeta_mode in ("magnitude", "indicator"), "attack.zeta_mode", "must be 'magnitude' or 'indicator'")
    if atk.stop_round is not None:
        _check(_int(atk.stop_round, "attack.stop_round") >= 0, "attack.stop_round", "must be >= 0")
    _check(0 < atk.participation <= 1, "attack.participation", "must lie in (0, 1]")
    if atk.bfe_positives is not None:
        _check(_int(atk.bfe_positives, "attack.bfe_positives") >= 1, "attack.bfe_positives", "must be >= 1")

    dfn = _section(raw, "defense")
    dff = DefenseConfig(
        method=_take(dfn, "method", "none"),
        krum_f=_int(_take(dfn, "krum_f", 1), "defense.krum_f"),
        flame_noise=_num(_take(dfn, "flame_noise", 0.01), "defense.flame_noise"),
        fltrust_root_samples=_int(_take(dfn, "fltrust_root_samples", 64), "defense.fltrust_root_samples"),
        clip_bound=_take(dfn, "clip_bound", None),
    )
    _no_extras(dfn, "defense")
    _check(dff.method in _DEFENSES, "defense.method", f"must be one of {_DEFENSES}")
    _check(dff.krum_f >= 1, "defense.krum_f", "must be >= 1")
    _check(dff.flame_noise >= 0, "defense.flame_noise", "must be >= 0")
    _check(dff.fltrust_root_samples >= 2, "defense.fltrust_root_samples", "must be >= 2")
    if dff.clip_bound is not None:
        _check(_num(dff.clip_bound, "defense.clip_bound") > 0, "defense.clip_bound", "must be > 0 or null")

    ev = _section(raw, "eval")
    evc = EvalConfig(
        probe_epochs=_int(_take(ev, "probe_epochs", 200), "eval.probe_epochs"),
        probe_lr=_num(_take(ev, "probe_lr", 0.1), "eval.probe_lr"),
        eval_batch=_int(_take(ev, "eval_batch", 128), "eval.eval_batch"),
    )
    _no_extras(ev, "eval")
    _check(evc.probe_epochs >= 0, "eval.probe_epochs", "must be >= 0")
    _check(evc.probe_lr >= 0, "eval.probe_lr", "must be >= 0")
    _check(evc.eval_batch >= 2, "eval.eval_batch", "must be >= 2")

    _no_extras(raw, "config")
    return ExperimentConfig(
        seed=seed,
        threads=threads,
        temperature=temperature,
        dataset=ds,
        augment=aug,
        encoder=enc,
        federation=fed,
        attack=atk,
        defense=dff,
        eval=evc,
    )


def load_config(path) -> ExperimentConfig:
    with open(path) as f:
        raw = yaml.safe_load(f)
    return from_dict(raw or {})


def apply_overrides(raw: dict, overrides: list[str]) -> dict:
    """Apply dotted-path key=value overrides; values parse as YAML scalars."""
    out = copy.deepcopy(raw or {})
    for item in overrides:
        if "=" not in item:
            raise ConfigInvalid(item, "override must look like section.key=value")
        key, _, value = item.partition("=")
        parts = key.strip().split(".")
        node = out
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigInvalid(key, f"cannot descend into non-mapping at {p!r}")
        node[parts[-1]] = yaml.safe_load(value)
    return out

"""Protocol configuration: a flat key-value file plus command-line overrides.

File syntax is one ``key = value`` per line, ``#`` starts a comment.  Tuples
are comma separated.  Every key has a default, so an empty file is valid.
"""
from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .data import intervals_overlap
from .networks import NetConfig
from .training import TrainConfig


class ConfigError(ValueError):
    """Raised with ``kind`` in {"syntax", "unknown_key", "type_error", "range_error", "protocol_violation"}."""

    def __init__(self, kind: str, key: str | None, message: str):
        super().__init__(f"{kind.replace('_', ' ')}: {key + ': ' if key else ''}{message}")
        self.kind = kind
        self.key = key


def _rng(lo=None, hi=None, doc=""):
    return {"min": lo, "max": hi, "doc": doc}


@dataclass(frozen=True)
class ProtocolConfig:
    # data
    data_seed: int = field(default=0, metadata=_rng(0, None, "seed for templates, instances and chip draws"))
    n_templates: int = field(default=10, metadata=_rng(2, None, "vehicle templates; first half trains RLS, second half the classifier"))
    rls_classes: int = field(default=5, metadata=_rng(1, None, "templates used for the omnidirectional RLS set"))
    cls_classes: int = field(default=5, metadata=_rng(1, None, "templates used for the classifier sets"))
    n_instances: int = field(default=3, metadata=_rng(1, None, "jittered vehicle instances per class"))
    rls_per_class: int = field(default=300, metadata=_rng(1, None, "rls-train chips per class"))
    cls_train_per_class: int = field(default=70, metadata=_rng(1, None, "front-shot chips per class"))
    cls_test_per_class: int = field(default=65, metadata=_rng(1, None, "back-shot chips per class"))
    cls_train_interval: tuple[float, float] = field(default=(-45.0, 45.0), metadata=_rng(doc="front-shot azimuths, degrees"))
    cls_test_interval: tuple[float, float] = field(default=(135.0, 225.0), metadata=_rng(doc="back-shot azimuths, degrees"))
    vary_data_seeds: bool = field(default=False, metadata=_rng(doc="also redraw classifier datasets per seed"))
    # latent / networks
    n_sub: int = field(default=8, metadata=_rng(1, None, "K, sub-vectors in the latent"))
    n_bins: int = field(default=36, metadata=_rng(2, None, "N, azimuth bins per sub-vector"))
    channels: tuple[int, int, int] = field(default=(8, 16, 32), metadata=_rng(1, None, "conv channel ladder"))
    # rls autoencoder
    rls_epochs: int = field(default=13, metadata=_rng(1, None, ""))
    rls_lr: float = field(default=2e-3, metadata=_rng(0, None, ""))
    beta: float = field(default=1e-7, metadata=_rng(0, None, "KL weight after warm-up"))
    warmup_frac: float = field(default=0.1, metadata=_rng(0, 1, "fraction of steps for the linear beta warm-up"))
    curriculum_frac: float = field(default=0.5, metadata=_rng(0, 1, "fraction of steps over which the pair offset grows to N/2"))
    logvar_init: float = field(default=-8.0, metadata=_rng(None, None, "initial posterior log-variance bias"))
    rls_seed: int = field(default=0, metadata=_rng(0, None, "seed of the single RLS training run"))
    batch_size: int = field(default=16, metadata=_rng(1, None, ""))
    # classifiers
    cls_epochs: int = field(default=60, metadata=_rng(1, None, "latent classifier epochs"))
    cls_lr: float = field(default=1e-3, metadata=_rng(0, None, ""))
    baseline_epochs: int = field(default=20, metadata=_rng(1, None, ""))
    baseline_lr: float = field(default=1e-3, metadata=_rng(0, None, ""))
    seeds: tuple[int, ...] = field(default=(0, 1, 2, 3, 4), metadata=_rng(0, None, "classifier weight seeds"))
    jobs: int = field(default=1, metadata=_rng(1, None, "worker processes for per-seed replicas"))
    # evaluation
    consistency_pairs: int = field(default=500, metadata=_rng(1, None, "pairs for the latent consistency report"))

    def net(self) -> NetConfig:
        return NetConfig(K=self.n_sub, N=self.n_bins, channels=self.channels, n_classes=self.cls_classes)

    def rls_train_config(self) -> TrainConfig:
        return TrainConfig(epochs=self.rls_epochs, batch_size=self.batch_size, lr=self.rls_lr, beta=self.beta,
                           warmup_frac=self.warmup_frac, curriculum_frac=self.curriculum_frac,
                           logvar_init=self.logvar_init, seed=self.rls_seed, K=self.n_sub, N=self.n_bins)

    def cls_train_config(self, seed: int, augmentation: bool) -> TrainConfig:
        return TrainConfig(epochs=self.cls_epochs, batch_size=self.batch_size, lr=self.cls_lr, seed=seed,
                           K=self.n_sub, N=self.n_bins, augmentation=augmentation)

    def baseline_train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(epochs=self.baseline_epochs, batch_size=self.batch_size, lr=self.baseline_lr,
                           seed=seed, K=self.n_sub, N=self.n_bins)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}

    def to_text(self) -> str:
        return "".join(f"{k} = {format_value(v)}\n" for k, v in self.to_dict().items())


_FIELDS = {f.name: f for f in dataclasses.fields(ProtocolConfig)}
_TYPES = typing.get_type_hints(ProtocolConfig)


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(format_value(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def _scalar(text: str, typ, key: str):
    text = text.strip()
    try:
        if typ is bool:
            low = text.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(text)
        return typ(text)
    except ValueError:
        raise ConfigError("type_error", key, f"expected {typ.__name__}, got {text!r}") from None


def _convert(key: str, text: str):
    typ = _TYPES[key]
    if typing.get_origin(typ) is tuple:
        args = typing.get_args(typ)
        parts = [p for p in text.split(",") if p.strip()]
        if args[-1] is Ellipsis:
            if not parts:
                raise ConfigError("type_error", key, "expected at least one value")
            return tuple(_scalar(p, args[0], key) for p in parts)
        if len(parts) != len(args):
            raise ConfigError("type_error", key, f"expected {len(args)} comma-separated values, got {len(parts)}")
        return tuple(_scalar(p, t, key) for p, t in zip(parts, args))
    return _scalar(text, typ, key)


def _check_range(key: str, value) -> None:
    meta = _FIELDS[key].metadata
    lo, hi = meta.get("min"), meta.get("max")
    for v in value if isinstance(value, tuple) else (value,):
        if isinstance(v, bool):
            continue
        if (lo is not None and v < lo) or (hi is not None and v > hi):
            bounds = f"[{lo if lo is not None else '-inf'}, {hi if hi is not None else 'inf'}]"
            raise ConfigError("range_error", key, f"value {v} outside {bounds}")
    if key.endswith("_lr") and value <= 0:
        raise ConfigError("range_error", key, "learning rate must be > 0")


def parse_pairs(lines) -> dict[str, str]:
    raw = {}
    for num, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("syntax", None, f"line {num}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        raw[key] = value
    return raw


def build_config(values: dict[str, str], base: ProtocolConfig | None = None) -> ProtocolConfig:
    out = {}
    for key, text in values.items():
        if key not in _FIELDS:
            raise ConfigError("unknown_key", key, "not a configuration key")
        out[key] = _convert(key, text)
        _check_range(key, out[key])
    cfg = dataclasses.replace(base or ProtocolConfig(), **out)
    validate(cfg)
    return cfg


def validate(cfg: ProtocolConfig) -> None:
    if intervals_overlap(cfg.cls_train_interval, cfg.cls_test_interval):
        raise ConfigError("protocol_violation", "cls_test_interval",
                          f"classifier train {cfg.cls_train_interval} and test {cfg.cls_test_interval} azimuths overlap")
    if cfg.rls_classes + cfg.cls_classes > cfg.n_templates:
        raise ConfigError("range_error", "n_templates", "must cover rls_classes + cls_classes")
    if len(set(cfg.seeds)) != len(cfg.seeds):
        raise ConfigError("range_error", "seeds", "duplicate seed")


def parse_config(path=None, overrides: dict[str, str] | None = None) -> tuple[ProtocolConfig, dict[str, str]]:
    """Defaults, then the file at ``path``, then ``overrides`` (flag values win).

    Returns the config and the override mapping actually applied, for the run manifest.
    """
    values = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise FileNotFoundError(f"config file not found: {p}")
        values.update(parse_pairs(p.read_text().splitlines()))
    overrides = dict(overrides or {})
    values.update(overrides)
    return build_config(values), overrides


def describe_defaults() -> str:
    cfg = ProtocolConfig()
    rows = []
    for f in dataclasses.fields(cfg):
        doc = f.metadata.get("doc", "")
        rows.append(f"{f.name} = {format_value(getattr(cfg, f.name))}" + (f"  # {doc}" if doc else ""))
    return "\n".join(rows)

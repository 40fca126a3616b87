"""Three-phase protocol: RLS training, front-shot classifier training, back-shot evaluation.

Everything lives under one run directory::

    data/         chip files + manifests
    checkpoints/  RLSW weight files
    metrics/      long-format CSV (run_id, seed, phase, epoch, metric_name, value)
    manifests/    one JSON RunManifest per command
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import tensor as T
from .config import ProtocolConfig, format_value
from .data import (ChipSet, file_digest, generate_dataset, make_class_templates, read_chips,
                   write_dataset)
from .latent import roll_interpolative
from .networks import (Weights, classify, decode, encode, init_weights, load_weights, predict,
                       save_weights)
from .training import (ConsistencyReport, latent_consistency, predict_baseline, predict_latent,
                       shift_sensitivity, train_baseline, train_classifier, train_rls)

MODES = ("rls-aug", "rls-noaug", "baseline")
CSV_FIELDS = ("run_id", "seed", "phase", "epoch", "metric_name", "value")


class MissingArtifact(FileNotFoundError):
    pass


class GateFailure(RuntimeError):
    pass


# ---------------------------------------------------------------- layout

def run_id(cfg: ProtocolConfig) -> str:
    return hashlib.sha256(cfg.to_text().encode()).hexdigest()[:12]


def data_path(run_dir, role: str, seed: int | None = None) -> Path:
    suffix = f"-s{seed}" if seed is not None else ""
    return Path(run_dir) / "data" / f"{role}{suffix}.rlsc"


def cls_data_path(run_dir, cfg: ProtocolConfig, role: str, seed: int) -> Path:
    return data_path(run_dir, role, seed if cfg.vary_data_seeds else None)


def ckpt_path(run_dir, name: str) -> Path:
    return Path(run_dir) / "checkpoints" / f"{name}.rlsw"


def cls_ckpt_path(run_dir, mode: str, seed: int) -> Path:
    return ckpt_path(run_dir, f"{mode}-seed{seed}")


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise MissingArtifact(f"{what} not found: {path}")
    return path


def load_chips(path: Path, what: str) -> ChipSet:
    return read_chips(_require(path, what))


# ---------------------------------------------------------------- manifest + csv

@dataclass
class RunManifest:
    command: str
    run_id: str
    config: dict
    overrides: dict = field(default_factory=dict)
    seeds: list = field(default_factory=list)
    datasets: dict = field(default_factory=dict)  # path -> sha256
    checkpoints: dict = field(default_factory=dict)  # path -> sha256
    outputs: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    version: str = __version__

    def write(self, run_dir) -> Path:
        out = Path(run_dir) / "manifests" / f"{self.command}.json"
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(json.dumps(asdict(self), indent=2, sort_keys=True, default=_jsonable) + "\n")
        return out


def _jsonable(v):
    if isinstance(v, (np.integer, np.floating)):
        return v.item()
    if isinstance(v, tuple):
        return list(v)
    raise TypeError(type(v))


def read_manifest_config(path) -> dict[str, str]:
    """Config snapshot of a RunManifest as override strings, for exact reruns."""
    snap = json.loads(Path(path).read_text())["config"]
    return {k: format_value(tuple(v) if isinstance(v, list) else v) for k, v in snap.items()}


def write_metrics(path: Path, rows: list[dict]) -> str:
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({**r, "value": repr(float(r["value"]))})
    path.write_text(buf.getvalue())
    return hashlib.sha256(buf.getvalue().encode()).hexdigest()


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _history_rows(rid: str, seed, phase: str, history: list[dict]) -> list[dict]:
    return [dict(run_id=rid, seed=seed, phase=phase, epoch=e, metric_name=k, value=v)
            for e, row in enumerate(history) for k, v in row.items()]


# ---------------------------------------------------------------- generate

def _data_seeds(cfg: ProtocolConfig, seed: int | None) -> tuple[int, int, int]:
    """(cls-train seed, cls-test seed, instance seed) for a classifier replica."""
    base = 10 * cfg.data_seed + (0 if seed is None else 1000 * (seed + 1))
    return base + 2, base + 3, 10 * cfg.data_seed + 7 if seed is None else base + 7


def generate(run_dir, cfg: ProtocolConfig, overrides: dict | None = None) -> RunManifest:
    t0 = time.perf_counter()
    (Path(run_dir) / "data").mkdir(parents=True, exist_ok=True)
    templates = make_class_templates(cfg.n_templates, cfg.data_seed)
    rls_t = templates[:cfg.rls_classes]
    cls_t = templates[cfg.rls_classes:cfg.rls_classes + cfg.cls_classes]
    man = RunManifest("generate", run_id(cfg), cfg.to_dict(), overrides or {}, list(cfg.seeds))
    jobs = [("rls-train", None, rls_t, cfg.rls_per_class, (0.0, 360.0), 10 * cfg.data_seed + 1, 10 * cfg.data_seed + 1)]
    for s in (cfg.seeds if cfg.vary_data_seeds else [None]):
        tr, te, inst = _data_seeds(cfg, s)
        jobs.append(("cls-train", s, cls_t, cfg.cls_train_per_class, cfg.cls_train_interval, tr, inst))
        jobs.append(("cls-test", s, cls_t, cfg.cls_test_per_class, cfg.cls_test_interval, te, inst))
    for role, s, tpl, per_class, interval, seed, inst in jobs:
        ids = [t.class_id for t in tpl]
        chips, manifest = generate_dataset(tpl, per_class, interval, role, seed, n_instances=cfg.n_instances,
                                           template_ids=ids, instance_seed=inst)
        path = data_path(run_dir, role, s)
        write_dataset(chips, manifest, path)
        man.datasets[str(path.relative_to(run_dir))] = manifest.digest
    man.timings["generate_s"] = time.perf_counter() - t0
    man.write(run_dir)
    return man


# ---------------------------------------------------------------- train

def train_rls_phase(run_dir, cfg: ProtocolConfig, overrides: dict | None = None) -> RunManifest:
    t0 = time.perf_counter()
    path = _require(data_path(run_dir, "rls-train"), "rls-train dataset")
    chips = read_chips(path)
    rid = run_id(cfg)
    enc, dec, history = train_rls(chips, cfg.rls_train_config(), cfg.net())
    man = RunManifest("train-rls", rid, cfg.to_dict(), overrides or {}, [cfg.rls_seed])
    man.datasets[str(path.relative_to(run_dir))] = file_digest(path)
    for name, w in (("rls-encoder", enc), ("rls-decoder", dec)):
        p = ckpt_path(run_dir, name)
        p.parent.mkdir(parents=True, exist_ok=True)
        man.checkpoints[str(p.relative_to(run_dir))] = save_weights(p, w)
    metrics = Path(run_dir) / "metrics" / "train-rls.csv"
    man.outputs[str(metrics.relative_to(run_dir))] = write_metrics(metrics, _history_rows(rid, cfg.rls_seed, "train-rls", history))
    man.timings["train_rls_s"] = time.perf_counter() - t0
    man.write(run_dir)
    return man


def _train_replica(run_dir: str, cfg: ProtocolConfig, mode: str, seed: int):
    """One classifier replica; returns (seed, data digest, checkpoint digest, metric rows, seconds)."""
    t0 = time.perf_counter()
    path = _require(cls_data_path(run_dir, cfg, "cls-train", seed), "cls-train dataset")
    chips = read_chips(path)
    if mode == "baseline":
        w, history = train_baseline(chips, cfg.baseline_train_config(seed), cfg.net())
    else:
        enc = load_weights(_require(ckpt_path(run_dir, "rls-encoder"), "encoder checkpoint"))
        w, history = train_classifier(enc, chips, cfg.cls_train_config(seed, mode == "rls-aug"), enc.cfg)
    out = cls_ckpt_path(run_dir, mode, seed)
    out.parent.mkdir(parents=True, exist_ok=True)
    digest = save_weights(out, w)
    rows = _history_rows(run_id(cfg), seed, f"train-{mode}", history)
    return seed, file_digest(path), digest, rows, time.perf_counter() - t0


def train_classifier_phase(run_dir, cfg: ProtocolConfig, mode: str, overrides: dict | None = None) -> RunManifest:
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    if mode != "baseline":
        _require(ckpt_path(run_dir, "rls-encoder"), "encoder checkpoint (run train-rls first)")
    t0 = time.perf_counter()
    man = RunManifest(f"train-{mode}", run_id(cfg), cfg.to_dict(), overrides or {}, list(cfg.seeds))
    args = [(str(run_dir), cfg, mode, s) for s in cfg.seeds]
    if cfg.jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(min(cfg.jobs, len(args))) as pool:
            results = list(pool.map(_train_replica, *zip(*args)))
    else:
        results = [_train_replica(*a) for a in args]
    rows = []
    for seed, data_digest, digest, r, secs in results:
        man.datasets[str(cls_data_path(run_dir, cfg, "cls-train", seed).relative_to(run_dir))] = data_digest
        man.checkpoints[str(cls_ckpt_path(run_dir, mode, seed).relative_to(run_dir))] = digest
        man.timings[f"seed{seed}_s"] = secs
        rows += r
    if mode != "baseline":
        p = ckpt_path(run_dir, "rls-encoder")
        man.checkpoints[str(p.relative_to(run_dir))] = file_digest(p)
    metrics = Path(run_dir) / "metrics" / f"train-{mode}.csv"
    man.outputs[str(metrics.relative_to(run_dir))] = write_metrics(metrics, rows)
    man.timings["total_s"] = time.perf_counter() - t0
    man.write(run_dir)
    return man


# ---------------------------------------------------------------- evaluate

def confusion_percent(labels: np.ndarray, preds: np.ndarray, n_classes: int) -> np.ndarray:
    """Row-normalized confusion matrix in percent (rows: true class)."""
    m = np.zeros((n_classes, n_classes))
    np.add.at(m, (labels, preds), 1.0)
    rows = m.sum(axis=1, keepdims=True)
    return np.divide(100.0 * m, rows, out=np.zeros_like(m), where=rows > 0)


def binomial_interval(n: int, p: float, level: float = 0.99) -> tuple[float, float]:
    """Central ``level`` acceptance interval of Binomial(n, p), as accuracy fractions."""
    lo_q, hi_q = (1 - level) / 2, 1 - (1 - level) / 2
    logs = [math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1) + k * math.log(p) + (n - k) * math.log1p(-p)
            for k in range(n + 1)]
    cdf = np.cumsum(np.exp(logs))
    lo = int(np.searchsorted(cdf, lo_q))
    hi = int(np.searchsorted(cdf, hi_q))
    return lo / n, hi / n


@dataclass
class ModeReport:
    mode: str
    accuracies: dict  # seed -> accuracy
    confusion: np.ndarray  # pooled over seeds, percent

    @property
    def mean(self) -> float:
        return float(np.mean(list(self.accuracies.values())))

    @property
    def two_sigma(self) -> float | None:
        acc = list(self.accuracies.values())
        return 2.0 * float(np.std(acc, ddof=1)) if len(acc) >= 2 else None


@dataclass
class EvalReport:
    modes: dict  # mode -> ModeReport
    consistency: dict  # name -> ConsistencyReport
    null_accuracy: dict  # name -> list of untrained accuracies
    null_interval: tuple[float, float]
    shift: dict = field(default_factory=dict)
    n_test: int = 0

    def summary(self) -> str:
        out = [f"back-shot test chips: {self.n_test}", ""]
        out.append(f"{'mode':<10} {'mean':>7} {'2sigma':>7}  per-seed")
        for m, r in self.modes.items():
            ts = f"{100 * r.two_sigma:7.2f}" if r.two_sigma is not None else "   n/a "
            seeds = " ".join(f"{s}:{100 * a:.1f}" for s, a in r.accuracies.items())
            out.append(f"{m:<10} {100 * r.mean:7.2f} {ts}  {seeds}")
        for m, r in self.modes.items():
            out += ["", f"confusion matrix, {m} (rows true class, % of row)"]
            out += ["  " + " ".join(f"{v:6.1f}" for v in row) for row in r.confusion]
        out += ["", "latent consistency (mean cosine to target latent)"]
        for name, c in self.consistency.items():
            out.append(f"  {name:<28} rolled {c.rolled:.4f}  unrolled {c.unrolled:.4f}  delta {c.delta:+.4f}  pairs {c.n_pairs}")
        lo, hi = self.null_interval
        out += ["", f"untrained classifiers (99% binomial interval of 20%: [{100 * lo:.1f}, {100 * hi:.1f}])"]
        for name, accs in self.null_accuracy.items():
            out.append(f"  {name:<18} " + " ".join(f"{100 * a:.1f}" for a in accs))
        if self.shift:
            out += ["", "2-pixel shift: latent displacement {shift_displacement:.4f}, inter-class centroid distance "
                        "{interclass_distance:.4f}, ratio {ratio:.4f}".format(**self.shift)]
        return "\n".join(out) + "\n"


def _concat(a: ChipSet, b: ChipSet) -> ChipSet:
    return ChipSet(*[np.concatenate([getattr(a, f), getattr(b, f)]) for f in ("pixels", "class_ids", "instance_ids", "azimuths")])


def evaluate(run_dir, cfg: ProtocolConfig, modes=MODES, overrides: dict | None = None) -> tuple[EvalReport, RunManifest]:
    t0 = time.perf_counter()
    rid = run_id(cfg)
    man = RunManifest("evaluate", rid, cfg.to_dict(), overrides or {}, list(cfg.seeds))
    for mode in modes:
        for s in cfg.seeds:
            _require(cls_ckpt_path(run_dir, mode, s), f"checkpoint for mode {mode}, seed {s}")
    needs_enc = any(m != "baseline" for m in modes)
    enc = load_weights(_require(ckpt_path(run_dir, "rls-encoder"), "encoder checkpoint")) if needs_enc else None
    rows, reports = [], {}
    for mode in modes:
        accs, labels_all, preds_all = {}, [], []
        for s in cfg.seeds:
            test_path = cls_data_path(run_dir, cfg, "cls-test", s)
            test = load_chips(test_path, "cls-test dataset")
            man.datasets[str(test_path.relative_to(run_dir))] = file_digest(test_path)
            ck = cls_ckpt_path(run_dir, mode, s)
            w = load_weights(ck)
            man.checkpoints[str(ck.relative_to(run_dir))] = file_digest(ck)
            preds = predict_baseline(w, test.pixels) if mode == "baseline" else predict_latent(enc, w, test.pixels)
            accs[s] = float(np.mean(preds == test.class_ids))
            labels_all.append(test.class_ids)
            preds_all.append(preds)
            rows.append(dict(run_id=rid, seed=s, phase="evaluate", epoch="", metric_name=f"{mode}/accuracy", value=accs[s]))
        rep = ModeReport(mode, accs, confusion_percent(np.concatenate(labels_all), np.concatenate(preds_all), cfg.cls_classes))
        reports[mode] = rep
        rows.append(dict(run_id=rid, seed="all", phase="evaluate", epoch="", metric_name=f"{mode}/mean_accuracy", value=rep.mean))
        if rep.two_sigma is not None:
            rows.append(dict(run_id=rid, seed="all", phase="evaluate", epoch="", metric_name=f"{mode}/two_sigma", value=rep.two_sigma))
        for i, row in enumerate(rep.confusion):
            for j, v in enumerate(row):
                rows.append(dict(run_id=rid, seed="all", phase="evaluate", epoch="", metric_name=f"{mode}/confusion_{i}_{j}", value=v))

    test = load_chips(cls_data_path(run_dir, cfg, "cls-test", cfg.seeds[0]), "cls-test dataset")
    train = load_chips(cls_data_path(run_dir, cfg, "cls-train", cfg.seeds[0]), "cls-train dataset")
    net = cfg.net()
    consistency, shift = {}, {}
    if enc is not None:
        rls_set = load_chips(data_path(run_dir, "rls-train"), "rls-train dataset")
        untrained = init_weights("encoder", enc.cfg, np.random.default_rng([cfg.rls_seed, 1]))
        both = _concat(train, test)
        consistency = {
            "rls-train classes": latent_consistency(enc, rls_set, cfg.consistency_pairs),
            "classifier classes": latent_consistency(enc, both, cfg.consistency_pairs),
            "untrained encoder": latent_consistency(untrained, rls_set, cfg.consistency_pairs),
            "rls-train classes, centered": latent_consistency(enc, rls_set, cfg.consistency_pairs, center=True),
            "classifier classes, centered": latent_consistency(enc, both, cfg.consistency_pairs, center=True),
            "untrained encoder, centered": latent_consistency(untrained, rls_set, cfg.consistency_pairs, center=True),
        }
        shift = shift_sensitivity(enc, test)
        for name, c in consistency.items():
            for k in ("rolled", "unrolled", "delta"):
                rows.append(dict(run_id=rid, seed="all", phase="evaluate", epoch="", metric_name=f"consistency/{name}/{k}", value=getattr(c, k)))
    null = null_calibration(enc, test, net, cfg.seeds)
    for name, accs in null.items():
        for s, a in zip(cfg.seeds, accs):
            rows.append(dict(run_id=rid, seed=s, phase="evaluate", epoch="", metric_name=f"null/{name}/accuracy", value=a))
    report = EvalReport(reports, consistency, null, binomial_interval(len(test), 1.0 / cfg.cls_classes), shift, len(test))
    metrics = Path(run_dir) / "metrics" / "evaluate.csv"
    man.outputs[str(metrics.relative_to(run_dir))] = write_metrics(metrics, rows)
    summary = Path(run_dir) / "report.txt"
    summary.write_text(report.summary())
    man.outputs["report.txt"] = hashlib.sha256(summary.read_bytes()).hexdigest()
    man.timings["evaluate_s"] = time.perf_counter() - t0
    man.write(run_dir)
    return report, man


def null_calibration(enc: Weights | None, test: ChipSet, net, seeds) -> dict[str, list[float]]:
    """Accuracy of freshly initialised (untrained) heads, plus a uniform-random guesser."""
    out = {"uniform-random": [], "untrained-baseline": []}
    if enc is not None:
        out["untrained-latent"] = []
    for s in seeds:
        guesses = np.random.default_rng([s, 41]).integers(0, net.n_classes, len(test))
        out["uniform-random"].append(float(np.mean(guesses == test.class_ids)))
        base = init_weights("baseline", net, np.random.default_rng([s, 21]))
        out["untrained-baseline"].append(float(np.mean(predict_baseline(base, test.pixels) == test.class_ids)))
        if enc is not None:
            cls = init_weights("classifier", enc.cfg, np.random.default_rng([s, 11]))
            out["untrained-latent"].append(float(np.mean(predict_latent(enc, cls, test.pixels) == test.class_ids)))
    return out


# ---------------------------------------------------------------- gates

def gate_results(report: EvalReport, margin: float = 0.10, min_delta: float = 0.10, null_delta: float = 0.05) -> list[tuple[str, bool, str]]:
    out = []
    m = {k: r.mean for k, r in report.modes.items()}
    if set(MODES) <= set(m):
        a, n, b = m["rls-aug"], m["rls-noaug"], m["baseline"]
        out.append(("rls-aug >= baseline + 10 points", a >= b + margin, f"{100 * a:.2f} vs {100 * b:.2f}"))
        out.append(("rls-aug >= rls-noaug", a >= n, f"{100 * a:.2f} vs {100 * n:.2f}"))
        out.append(("rls-noaug >= baseline", n >= b, f"{100 * n:.2f} vs {100 * b:.2f}"))
    if report.consistency:
        t = report.consistency["rls-train classes"]
        u = report.consistency["untrained encoder"]
        out.append(("trained consistency delta >= 0.10", t.delta >= min_delta and t.n_pairs >= 500, f"{t.delta:+.4f} over {t.n_pairs} pairs"))
        out.append(("untrained |delta| < 0.05", abs(u.delta) < null_delta and u.n_pairs >= 500, f"{u.delta:+.4f} over {u.n_pairs} pairs"))
        tc = report.consistency["rls-train classes, centered"]
        uc = report.consistency["untrained encoder, centered"]
        out.append(("(centered) trained delta >= 0.10", tc.delta >= min_delta, f"{tc.delta:+.4f}"))
        out.append(("(centered) untrained |delta| < 0.05", abs(uc.delta) < null_delta, f"{uc.delta:+.4f}"))
    lo, hi = report.null_interval
    # gate on the seed mean: one fixed random net makes class-correlated
    # predictions, so a single replica is not a binomial draw over chips
    for name, accs in report.null_accuracy.items():
        mean = float(np.mean(accs))
        outside = sum(not lo <= a <= hi for a in accs)
        out.append((f"null calibration: {name}", lo <= mean <= hi,
                    f"mean {100 * mean:.1f} in [{100 * lo:.1f}, {100 * hi:.1f}]; {outside}/{len(accs)} replicas outside"))
    return out


def run_protocol(run_dir, cfg: ProtocolConfig, overrides: dict | None = None) -> tuple[EvalReport, dict]:
    """generate -> train-rls -> three classifier modes -> evaluate; returns report and phase timings."""
    timings = {}
    t = time.perf_counter()
    generate(run_dir, cfg, overrides)
    timings["generate"] = time.perf_counter() - t
    t = time.perf_counter()
    train_rls_phase(run_dir, cfg, overrides)
    timings["train-rls"] = time.perf_counter() - t
    for mode in MODES:
        t = time.perf_counter()
        train_classifier_phase(run_dir, cfg, mode, overrides)
        timings[f"train-{mode}"] = time.perf_counter() - t
    t = time.perf_counter()
    report, _ = evaluate(run_dir, cfg, MODES, overrides)
    timings["evaluate"] = time.perf_counter() - t
    return report, timings


# ---------------------------------------------------------------- roll demo

def roll_frames(enc: Weights, dec: Weights, chip: np.ndarray, shifts) -> list[np.ndarray]:
    """Decode the posterior mean of ``chip`` after each interpolative roll, one frame per shift."""
    cfg = enc.cfg
    fz = Weights(enc.kind, cfg, {k: T.Tensor(v.data) for k, v in enc.params.items()})
    fd = Weights(dec.kind, dec.cfg, {k: T.Tensor(v.data) for k, v in dec.params.items()})
    mu = encode(fz, chip[None]).mean.data.reshape(cfg.K, cfg.N)
    return [decode(fd, T.Tensor(roll_interpolative(mu, s)[None])).data[0, 0] for s in shifts]


def demo_shifts(steps: int, n_bins: int) -> list[float]:
    return [k * n_bins / steps for k in range(steps)]


def write_pgm(path, frames: list[np.ndarray]) -> None:
    """Horizontal strip, binary 8-bit portable graymap (P5, maxval 255)."""
    strip = np.concatenate(frames, axis=1)
    px = np.clip(np.rint(strip * 255.0), 0, 255).astype(np.uint8)
    h, w = px.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + px.tobytes())


def read_pgm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    parts = buf.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h = map(int, parts[1].split())
    return np.frombuffer(parts[3], np.uint8).reshape(h, w)


def roll_demo(run_dir, cfg: ProtocolConfig, steps: int, role: str = "cls-test", index: int = 0, out=None) -> Path:
    enc = load_weights(_require(ckpt_path(run_dir, "rls-encoder"), "encoder checkpoint"))
    dec = load_weights(_require(ckpt_path(run_dir, "rls-decoder"), "decoder checkpoint"))
    chips = load_chips(cls_data_path(run_dir, cfg, role, cfg.seeds[0]) if role != "rls-train" else data_path(run_dir, role), f"{role} dataset")
    if not 0 <= index < len(chips):
        raise IndexError(f"chip index {index} outside dataset of {len(chips)}")
    frames = roll_frames(enc, dec, chips.pixels[index], demo_shifts(steps, enc.cfg.N))
    out = Path(out) if out else Path(run_dir) / f"roll-demo-{role}-{index}.pgm"
    write_pgm(out, frames)
    return out

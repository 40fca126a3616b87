"""Training loops: cross-view RLS autoencoder, roll-augmented latent classifier, baseline CNN."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import tensor as T
from .data import ChipSet
from .latent import azimuth_to_shift, roll_integer
from .networks import (NetConfig, Weights, baseline_forward, classify, decode, encode,
                       init_weights, predict, reparameterize)
from .tensor import Tensor

logger = logging.getLogger(__name__)


class NumericalError(RuntimeError):
    def __init__(self, message: str, step: int, seed: int):
        super().__init__(f"{message} (step {step}, seed {seed})")
        self.step = step
        self.seed = seed


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 14
    batch_size: int = 16
    lr: float = 1e-3
    beta: float = 1e-7
    warmup_frac: float = 0.1
    curriculum_frac: float = 0.5
    logvar_init: float = -8.0
    seed: int = 0
    K: int = 8
    N: int = 36
    augmentation: bool = True

    def __post_init__(self):
        for name in ("epochs", "batch_size", "K", "N"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.lr <= 0 or self.beta < 0:
            raise ValueError("lr must be > 0 and beta >= 0")
        if not (0 <= self.warmup_frac <= 1 and 0 <= self.curriculum_frac <= 1):
            raise ValueError("warmup_frac and curriculum_frac must lie in [0, 1]")


# ---------------------------------------------------------------- optimiser

@dataclass
class AdamState:
    lr: float = 1e-3
    b1: float = 0.9
    b2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_update(params: list[Tensor], grads: list[np.ndarray], state: AdamState) -> None:
    """One bias-corrected Adam step, in place on ``params``."""
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    if len(grads) != len(params) or any(g.shape != p.shape for g, p in zip(grads, params)):
        raise ValueError("gradient shapes do not match parameters")
    state.step += 1
    c1 = 1.0 - state.b1 ** state.step
    c2 = 1.0 - state.b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.b1
        m += (1.0 - state.b1) * g
        v *= state.b2
        v += (1.0 - state.b2) * g * g
        p.data = p.data - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def _apply(weights: list[Weights], state: AdamState) -> None:
    params = [t for w in weights for t in w.tensors()]
    adam_update(params, [p.grad for p in params], state)
    for p in params:
        p.zero_grad()


def frozen(w: Weights) -> Weights:
    """View of ``w`` whose tensors record no graph."""
    return Weights(w.kind, w.cfg, {k: Tensor(v.data) for k, v in w.params.items()})


# ---------------------------------------------------------------- pair sampling

@dataclass
class PairBatch:
    source: np.ndarray  # (B, H, W)
    target: np.ndarray
    shifts: np.ndarray  # (B,) bin units in [0, N)
    objects: np.ndarray  # (B,) object key
    src_index: np.ndarray
    tgt_index: np.ndarray


class PairSampler:
    """Indexes a chip set by (object, azimuth bin) for cross-view pair draws."""

    def __init__(self, chips: ChipSet, n_bins: int):
        self.chips = chips
        self.n_bins = n_bins
        bins = azimuth_to_shift(chips.azimuths, n_bins) if len(chips) else np.zeros(0, np.int64)
        self.bins = np.asarray(bins, dtype=np.int64)
        keys = chips.object_keys()
        self.objects: list[tuple[int, list[int], list[np.ndarray]]] = []
        self.excluded = 0
        for key in np.unique(keys):
            idx = np.flatnonzero(keys == key)
            ub = np.unique(self.bins[idx])
            if len(ub) < 2:
                self.excluded += 1
                continue
            self.objects.append((int(key), list(ub), [idx[self.bins[idx] == b] for b in ub]))
        if self.excluded:
            logger.warning("%d object(s) seen from fewer than 2 azimuth bins excluded from pairing", self.excluded)

    def sample(self, batch_size: int, rng: np.random.Generator, max_offset: int | None = None) -> PairBatch:
        """Draw an object uniformly, then two distinct bins it was seen from.

        ``max_offset`` limits the circular bin distance between the two views
        (used by the shift curriculum); objects with no admissible partner bin
        fall back to an unrestricted draw.
        """
        if not self.objects:
            raise ValueError("no object has chips at two or more azimuth bins")
        src = np.empty(batch_size, np.int64)
        tgt = np.empty(batch_size, np.int64)
        shifts = np.empty(batch_size, np.int64)
        objs = np.empty(batch_size, np.int64)
        for b in range(batch_size):
            key, ubins, members = self.objects[rng.integers(len(self.objects))]
            if max_offset is None or 2 * max_offset >= self.n_bins:
                i, j = rng.choice(len(ubins), 2, replace=False)
            else:
                i = int(rng.integers(len(ubins)))
                d = (np.asarray(ubins) - ubins[i]) % self.n_bins
                near = np.flatnonzero((d != 0) & (np.minimum(d, self.n_bins - d) <= max_offset))
                j = int(rng.choice(near)) if len(near) else int(rng.choice(np.delete(np.arange(len(ubins)), i)))
            src[b] = members[i][rng.integers(len(members[i]))]
            tgt[b] = members[j][rng.integers(len(members[j]))]
            shifts[b] = (ubins[j] - ubins[i]) % self.n_bins
            objs[b] = key
        px = self.chips.pixels
        return PairBatch(px[src], px[tgt], shifts, objs, src, tgt)


def sample_pairs(chips: ChipSet, batch_size: int, rng: np.random.Generator, n_bins: int) -> PairBatch:
    return PairSampler(chips, n_bins).sample(batch_size, rng)


# ---------------------------------------------------------------- RLS autoencoder

@dataclass
class LossBreakdown:
    reconstruction: float
    kl: float
    beta: float

    @property
    def total(self) -> float:
        return self.reconstruction + self.beta * self.kl


def rls_loss(enc: Weights, dec: Weights, batch: PairBatch, beta: float, rng: np.random.Generator):
    """Graph for Decoder(Roll(sample(Encoder(X_i)), s)) vs X_j plus beta * KL."""
    cfg = enc.cfg
    post = encode(enc, batch.source)
    z = reparameterize(post, rng, cfg.K, cfg.N)
    recon = decode(dec, T.roll_bins(z, batch.shifts))
    rec = T.mse(recon, batch.target[:, None])
    kl = T.scale(T.gaussian_kl(post.mean, post.logvar), 1.0 / len(batch.shifts))
    return T.add(rec, T.scale(kl, beta)), rec, kl


def rls_train_step(enc: Weights, dec: Weights, batch: PairBatch, opt: AdamState,
                   beta: float, rng: np.random.Generator, seed: int = 0) -> LossBreakdown:
    total, rec, kl = rls_loss(enc, dec, batch, beta, rng)
    if not math.isfinite(total.item()):
        raise NumericalError("non-finite RLS loss", opt.step, seed)
    T.backward(total)
    _apply([enc, dec], opt)
    return LossBreakdown(rec.item(), kl.item(), beta)


def beta_at(step: int, total_steps: int, cfg: TrainConfig) -> float:
    warm = int(cfg.warmup_frac * total_steps)
    if warm <= 0 or step >= warm:
        return cfg.beta
    return cfg.beta * step / warm


def max_offset_at(step: int, total_steps: int, cfg: TrainConfig, n_bins: int) -> int | None:
    """Shift curriculum: admissible pair offset grows from 1 bin to N/2."""
    ramp = cfg.curriculum_frac * total_steps
    if ramp <= 0 or step >= ramp:
        return None
    return max(1, int(round(n_bins / 2 * step / ramp)))


def warm_start(enc: Weights, dec: Weights, chips: ChipSet, logvar_init: float) -> None:
    """Training-time bias offsets on top of the zero-bias init.

    A near-deterministic posterior and an output bias at the mean pixel logit
    keep the decoder from settling on the dataset-mean image before the
    latent carries any signal.
    """
    enc.params["logvar.b"].data = np.full_like(enc["logvar.b"].data, logvar_init)
    if len(chips):
        m = float(np.clip(chips.pixels.mean(), 1e-4, 1 - 1e-4))
        dec.params["deconv3.b"].data = np.full_like(dec["deconv3.b"].data, np.log(m / (1 - m)))


def train_rls(chips: ChipSet, cfg: TrainConfig, net: NetConfig | None = None,
              on_epoch: Callable[[int, dict], None] | None = None):
    """Fit encoder and decoder on cross-view pairs; returns (enc, dec, history)."""
    net = net or NetConfig(K=cfg.K, N=cfg.N)
    init_rng = np.random.default_rng([cfg.seed, 1])
    enc = init_weights("encoder", net, init_rng)
    dec = init_weights("decoder", net, init_rng)
    warm_start(enc, dec, chips, cfg.logvar_init)
    sampler = PairSampler(chips, net.N)
    pair_rng = np.random.default_rng([cfg.seed, 2])
    noise_rng = np.random.default_rng([cfg.seed, 3])
    opt = AdamState(lr=cfg.lr)
    steps_per_epoch = max(1, len(chips) // cfg.batch_size)
    total_steps = steps_per_epoch * cfg.epochs
    history = []
    for epoch in range(cfg.epochs):
        rec = kl = 0.0
        for _ in range(steps_per_epoch):
            beta = beta_at(opt.step, total_steps, cfg)
            batch = sampler.sample(cfg.batch_size, pair_rng, max_offset_at(opt.step, total_steps, cfg, net.N))
            out = rls_train_step(enc, dec, batch, opt, beta, noise_rng, cfg.seed)
            rec += out.reconstruction
            kl += out.kl
        row = {"reconstruction": rec / steps_per_epoch, "kl": kl / steps_per_epoch, "beta": beta,
               "total": (rec + beta * kl) / steps_per_epoch, "excluded_objects": sampler.excluded}
        history.append(row)
        logger.info("rls epoch %d: %s", epoch, row)
        if on_epoch:
            on_epoch(epoch, row)
    return enc, dec, history


# ---------------------------------------------------------------- classifiers

def encode_means(enc: Weights, chips: np.ndarray, batch: int = 64) -> np.ndarray:
    """Posterior means for a stack of chips, (M, K*N); records no graph."""
    fz = frozen(enc)
    out = [encode(fz, chips[i:i + batch]).mean.data for i in range(0, len(chips), batch)]
    return np.concatenate(out) if out else np.zeros((0, enc.cfg.latent_dim))


def _check_labels(labels: np.ndarray, n_classes: int) -> None:
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes})")


def classifier_train_step(cls: Weights, z_mean: np.ndarray, labels: np.ndarray, opt: AdamState,
                          augment: bool, rng: np.random.Generator) -> float:
    """One cross-entropy step on encoder means, optionally rolled by a random shift per sample."""
    cfg = cls.cfg
    labels = np.asarray(labels)
    _check_labels(labels, cfg.n_classes)
    z = z_mean.reshape(-1, cfg.K, cfg.N)
    if augment:
        shifts = rng.integers(0, cfg.N, len(z))
        z = np.stack([roll_integer(zi, s) for zi, s in zip(z, shifts)])
    loss = T.softmax_cross_entropy(classify(cls, Tensor(z.reshape(len(z), -1))), labels)
    T.backward(loss)
    _apply([cls], opt)
    return loss.item()


def baseline_train_step(base: Weights, chips: np.ndarray, labels: np.ndarray, opt: AdamState) -> float:
    labels = np.asarray(labels)
    _check_labels(labels, base.cfg.n_classes)
    loss = T.softmax_cross_entropy(baseline_forward(base, chips), labels)
    T.backward(loss)
    _apply([base], opt)
    return loss.item()


def _epochs(n: int, cfg: TrainConfig, rng: np.random.Generator):
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        yield epoch, [order[i:i + cfg.batch_size] for i in range(0, n, cfg.batch_size)]


def train_classifier(enc: Weights, chips: ChipSet, cfg: TrainConfig, net: NetConfig | None = None,
                     on_epoch: Callable[[int, dict], None] | None = None):
    """Latent-classifier head on a frozen encoder; roll augmentation per ``cfg.augmentation``."""
    net = net or enc.cfg
    cls = init_weights("classifier", net, np.random.default_rng([cfg.seed, 11]))
    order_rng = np.random.default_rng([cfg.seed, 12])
    aug_rng = np.random.default_rng([cfg.seed, 13])
    opt = AdamState(lr=cfg.lr)
    z = encode_means(enc, chips.pixels)
    history = []
    for epoch, batches in _epochs(len(chips), cfg, order_rng):
        losses = [classifier_train_step(cls, z[b], chips.class_ids[b], opt, cfg.augmentation, aug_rng) for b in batches]
        row = {"loss": float(np.mean(losses))}
        history.append(row)
        if on_epoch:
            on_epoch(epoch, row)
    return cls, history


def train_baseline(chips: ChipSet, cfg: TrainConfig, net: NetConfig | None = None,
                   on_epoch: Callable[[int, dict], None] | None = None):
    net = net or NetConfig(K=cfg.K, N=cfg.N)
    base = init_weights("baseline", net, np.random.default_rng([cfg.seed, 21]))
    order_rng = np.random.default_rng([cfg.seed, 22])
    opt = AdamState(lr=cfg.lr)
    history = []
    for epoch, batches in _epochs(len(chips), cfg, order_rng):
        losses = [baseline_train_step(base, chips.pixels[b], chips.class_ids[b], opt) for b in batches]
        row = {"loss": float(np.mean(losses))}
        history.append(row)
        if on_epoch:
            on_epoch(epoch, row)
    return base, history


def predict_latent(enc: Weights, cls: Weights, chips: np.ndarray) -> np.ndarray:
    return predict(classify(frozen(cls), Tensor(encode_means(enc, chips))))


def predict_baseline(base: Weights, chips: np.ndarray, batch: int = 64) -> np.ndarray:
    fb = frozen(base)
    return np.concatenate([predict(baseline_forward(fb, chips[i:i + batch])) for i in range(0, len(chips), batch)])


# ---------------------------------------------------------------- latent consistency

@dataclass
class ConsistencyReport:
    rolled: float
    unrolled: float
    n_pairs: int

    @property
    def delta(self) -> float:
        return self.rolled - self.unrolled


def _cosine(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    return np.sum(a * b, axis=1) / np.maximum(na * nb, 1e-300)


def pair_similarity(z_src: np.ndarray, z_tgt: np.ndarray, shifts, K: int, N: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-pair cosine of the target latent to the rolled and to the unrolled source latent."""
    n = len(z_src)
    zi = z_src.reshape(n, K, N)
    rolled = np.stack([roll_integer(z, s) for z, s in zip(zi, shifts)]).reshape(n, -1) if n else zi.reshape(0, K * N)
    zj = z_tgt.reshape(n, -1)
    return _cosine(zj, rolled), _cosine(zj, zi.reshape(n, -1))


def latent_consistency(enc: Weights, chips: ChipSet, n_pairs: int = 500, seed: int = 0,
                       center: bool = False) -> ConsistencyReport:
    """Cosine similarity of target latents to rolled vs unrolled source latents.

    ``center`` subtracts the mean latent of ``chips`` first, which removes the
    component shared by every chip (large for untrained ReLU encoders).
    """
    cfg = enc.cfg
    batch = PairSampler(chips, cfg.N).sample(n_pairs, np.random.default_rng([seed, 31]))
    offset = encode_means(enc, chips.pixels).mean(axis=0) if center else 0.0
    rolled, unrolled = pair_similarity(encode_means(enc, batch.source) - offset, encode_means(enc, batch.target) - offset,
                                       batch.shifts, cfg.K, cfg.N)
    return ConsistencyReport(rolled=float(np.mean(rolled)), unrolled=float(np.mean(unrolled)), n_pairs=n_pairs)


def shift_sensitivity(enc: Weights, chips: ChipSet, pixels: int = 2) -> dict:
    """Latent displacement under a small chip translation vs the spread between class centroids."""
    mu = encode_means(enc, chips.pixels)
    shifted = encode_means(enc, np.roll(chips.pixels, pixels, axis=2))
    disp = float(np.mean(np.linalg.norm(shifted - mu, axis=1)))
    cents = np.stack([mu[chips.class_ids == c].mean(axis=0) for c in np.unique(chips.class_ids)])
    d = np.linalg.norm(cents[:, None] - cents[None], axis=2)
    inter = float(d[np.triu_indices(len(cents), 1)].mean()) if len(cents) > 1 else float("nan")
    return {"shift_displacement": disp, "interclass_distance": inter, "ratio": disp / inter if inter else float("nan")}


def with_seed(cfg: TrainConfig, seed: int) -> TrainConfig:
    return replace(cfg, seed=seed)

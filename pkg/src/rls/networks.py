"""Encoder, decoder, latent classifier and baseline CNN.

Weights are plain ``dict[str, Tensor]`` wrapped in :class:`Weights` together
with the architecture config needed to rebuild them from a checkpoint.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor

KINDS = ("encoder", "decoder", "classifier", "baseline")


@dataclass(frozen=True)
class NetConfig:
    K: int = 8
    N: int = 36
    channels: tuple[int, int, int] = (16, 32, 64)
    n_classes: int = 5
    hidden: int = 120  # classifier / baseline hidden width
    dec_hidden: int = 512
    image: int = 64
    kernel: int = 5

    @property
    def latent_dim(self) -> int:
        return self.K * self.N

    @property
    def trunk_size(self) -> int:
        """Spatial extent after three stride-2 stages."""
        return self.image // 8


@dataclass
class Weights:
    kind: str
    cfg: NetConfig
    params: dict[str, Tensor] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def tensors(self) -> list[Tensor]:
        return [self.params[k] for k in sorted(self.params)]

    def copy(self) -> "Weights":
        return Weights(self.kind, self.cfg, {k: Tensor(v.data.copy(), requires_grad=True) for k, v in self.params.items()})

    def digest(self) -> str:
        h = hashlib.sha256()
        for k in sorted(self.params):
            h.update(k.encode())
            h.update(np.ascontiguousarray(self.params[k].data).tobytes())
        return h.hexdigest()


@dataclass
class Posterior:
    mean: Tensor  # (B, K*N)
    logvar: Tensor  # (B, K*N)


# ---------------------------------------------------------------- init

def _layer_shapes(kind: str, cfg: NetConfig) -> list[tuple[str, tuple[int, ...], bool]]:
    """(name, shape, is_output_layer) for every weight; biases derived."""
    c1, c2, c3 = cfg.channels
    k = cfg.kernel
    s = cfg.trunk_size
    trunk = [("conv1.w", (c1, 1, k, k), False), ("conv2.w", (c2, c1, k, k), False), ("conv3.w", (c3, c2, k, k), False)]
    if kind == "encoder":
        return trunk + [("mu.w", (c3 * s * s, cfg.latent_dim), True), ("logvar.w", (c3 * s * s, cfg.latent_dim), True)]
    if kind == "decoder":
        return [
            ("fc1.w", (cfg.latent_dim, cfg.dec_hidden), False),
            ("fc2.w", (cfg.dec_hidden, c3 * s * s), False),
            ("deconv1.w", (c2, c3, k, k), False),
            ("deconv2.w", (c1, c2, k, k), False),
            ("deconv3.w", (1, c1, k, k), True),
        ]
    if kind == "classifier":
        return [("fc1.w", (cfg.latent_dim, cfg.hidden), False), ("fc2.w", (cfg.hidden, cfg.n_classes), True)]
    if kind == "baseline":
        return trunk + [("fc1.w", (c3 * s * s, cfg.hidden), False), ("fc2.w", (cfg.hidden, cfg.n_classes), True)]
    raise ValueError(f"unknown network kind {kind!r}")


def _fan_in(shape: tuple[int, ...]) -> int:
    return int(np.prod(shape[1:])) if len(shape) == 4 else shape[0]


def init_weights(kind: str, cfg: NetConfig, rng: np.random.Generator) -> Weights:
    """Uniform fan-in init: bound sqrt(6/fan_in) on hidden layers, sqrt(3/fan_in) on
    linear output layers; zero biases."""
    params = {}
    for name, shape, is_out in _layer_shapes(kind, cfg):
        bound = np.sqrt((3.0 if is_out else 6.0) / _fan_in(shape))
        params[name] = Tensor(rng.uniform(-bound, bound, shape), requires_grad=True)
        n_out = shape[0] if len(shape) == 4 else shape[1]
        params[name[:-2] + ".b"] = Tensor(np.zeros(n_out), requires_grad=True)
    return Weights(kind, cfg, params)


# ---------------------------------------------------------------- forward passes

def _as_images(x, cfg: NetConfig) -> Tensor:
    if isinstance(x, Tensor):
        arr = x
    else:
        arr = Tensor(np.asarray(x, dtype=np.float64))
    if arr.data.ndim == 3:
        arr = T.reshape(arr, (arr.shape[0], 1) + arr.shape[1:])
    if arr.data.ndim != 4 or arr.shape[1:] != (1, cfg.image, cfg.image):
        raise ShapeError(f"expected chips of shape (B, {cfg.image}, {cfg.image}), got {arr.shape}")
    return arr


def _trunk(w: Weights, x: Tensor) -> Tensor:
    h = x
    for i in (1, 2, 3):
        h = T.relu(T.conv2d(h, w[f"conv{i}.w"], w[f"conv{i}.b"], stride=2, pad=2))
    return T.reshape(h, (h.shape[0], -1))


def encode(w: Weights, x) -> Posterior:
    h = _trunk(w, _as_images(x, w.cfg))
    return Posterior(T.affine(h, w["mu.w"], w["mu.b"]), T.affine(h, w["logvar.w"], w["logvar.b"]))


def reparameterize(p: Posterior, rng: np.random.Generator, K: int, N: int) -> Tensor:
    """``mean + exp(logvar / 2) * eps`` reshaped to (B, K, N)."""
    eps = rng.standard_normal(p.mean.shape)
    z = T.add(p.mean, T.mul(T.exp(T.scale(p.logvar, 0.5)), Tensor(eps)))
    return T.reshape(z, (z.shape[0], K, N))


def _as_latent(z, cfg: NetConfig) -> Tensor:
    z = z if isinstance(z, Tensor) else Tensor(np.asarray(getattr(z, "values", z), dtype=np.float64))
    if z.data.ndim == 1 or (z.data.ndim == 2 and z.shape == (cfg.K, cfg.N) and cfg.K * cfg.N != z.shape[1]):
        z = T.reshape(z, (1, -1))
    if z.data.ndim == 3:
        z = T.reshape(z, (z.shape[0], -1))
    if z.data.ndim != 2 or z.shape[1] != cfg.latent_dim:
        raise ShapeError(f"latent extent {z.shape} does not match K*N = {cfg.latent_dim}")
    return z


def decode(w: Weights, z) -> Tensor:
    """Latent batch -> (B, 1, 64, 64) images in (0, 1)."""
    cfg = w.cfg
    z = _as_latent(z, cfg)
    s = cfg.trunk_size
    h = T.relu(T.affine(z, w["fc1.w"], w["fc1.b"]))
    h = T.relu(T.affine(h, w["fc2.w"], w["fc2.b"]))
    h = T.reshape(h, (h.shape[0], cfg.channels[2], s, s))
    for i in (1, 2):
        h = T.relu(T.conv2d(T.upsample2x(h), w[f"deconv{i}.w"], w[f"deconv{i}.b"], stride=1, pad=2))
    h = T.conv2d(T.upsample2x(h), w["deconv3.w"], w["deconv3.b"], stride=1, pad=2)
    return T.sigmoid(h)


def classify(w: Weights, z) -> Tensor:
    z = _as_latent(z, w.cfg)
    h = T.relu(T.affine(z, w["fc1.w"], w["fc1.b"]))
    return T.affine(h, w["fc2.w"], w["fc2.b"])


def baseline_forward(w: Weights, x) -> Tensor:
    h = _trunk(w, _as_images(x, w.cfg))
    h = T.relu(T.affine(h, w["fc1.w"], w["fc1.b"]))
    return T.affine(h, w["fc2.w"], w["fc2.b"])


def predict(logits) -> np.ndarray:
    """Argmax over classes; ties go to the lowest index."""
    return np.argmax(getattr(logits, "data", logits), axis=-1)


# ---------------------------------------------------------------- checkpoint I/O

CKPT_MAGIC = b"RLSW"
CKPT_VERSION = 1
_CKPT_HEADER = struct.Struct("<4sI16s11I")


class CheckpointError(Exception):
    pass


def weights_to_bytes(w: Weights) -> bytes:
    cfg = w.cfg
    out = [_CKPT_HEADER.pack(
        CKPT_MAGIC, CKPT_VERSION, w.kind.encode().ljust(16, b"\0"),
        cfg.K, cfg.N, *cfg.channels, cfg.n_classes, cfg.hidden, cfg.dec_hidden, cfg.image, cfg.kernel,
        len(w.params),
    )]
    for name in sorted(w.params):
        arr = np.ascontiguousarray(w.params[name].data, dtype="<f8")
        nb = name.encode()
        out.append(struct.pack("<I", len(nb)) + nb + struct.pack("<I", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape) + arr.tobytes())
    return b"".join(out)


def weights_from_bytes(buf: bytes) -> Weights:
    if buf[:4] != CKPT_MAGIC:
        raise CheckpointError("bad magic: not an RLSW checkpoint")
    if len(buf) < _CKPT_HEADER.size:
        raise CheckpointError("truncated checkpoint header")
    magic, version, kind, K, N, c1, c2, c3, ncls, hidden, dec_hidden, image, kernel, nsec = _CKPT_HEADER.unpack_from(buf)
    if version != CKPT_VERSION:
        raise CheckpointError(f"checkpoint version {version} unsupported")
    cfg = NetConfig(K, N, (c1, c2, c3), ncls, hidden, dec_hidden, image, kernel)
    off = _CKPT_HEADER.size
    params = {}
    try:
        for _ in range(nsec):
            (ln,) = struct.unpack_from("<I", buf, off)
            off += 4
            name = buf[off:off + ln].decode()
            off += ln
            (nd,) = struct.unpack_from("<I", buf, off)
            off += 4
            shape = struct.unpack_from(f"<{nd}I", buf, off)
            off += 4 * nd
            count = int(np.prod(shape))
            if off + 8 * count > len(buf):
                raise CheckpointError(f"truncated section {name!r}")
            arr = np.frombuffer(buf, "<f8", count=count, offset=off).reshape(shape).astype(np.float64)
            off += 8 * count
            params[name] = Tensor(arr, requires_grad=True)
    except struct.error as exc:
        raise CheckpointError("truncated checkpoint") from exc
    return Weights(kind.rstrip(b"\0").decode(), cfg, params)


def save_weights(path, w: Weights) -> str:
    data = weights_to_bytes(w)
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def load_weights(path) -> Weights:
    return weights_from_bytes(Path(path).read_bytes())

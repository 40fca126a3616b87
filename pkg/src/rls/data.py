"""Synthetic stand-in for MSTAR-style chips.

Each class is a rigid set of point scatterers on a vehicle-sized footprint.
A chip at azimuth theta rotates the layout, dims each scatterer by its
azimuthal visibility window, splats Gaussian blobs onto a 64x64 grid,
applies unit-mean exponential speckle to the intensity, log-compresses and
normalises to [0, 1] against a fixed saturation level.

Randomness is always derived from explicit integer seeds through
``numpy.random.SeedSequence`` so that any chip can be regenerated alone.
"""
from __future__ import annotations

import hashlib
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

CHIP = 64
PIXEL_M = 0.15  # ground metres per pixel
PSF_SIGMA_PX = 1.8
CLUTTER_LEVEL = 0.003  # background intensity relative to the brightest scatterer
LOG_GAIN = 30.0
SATURATION = 2.0  # intensities above this multiple of the peak clip to 1

ROLES = ("rls-train", "cls-train", "cls-test")
DEFAULT_INTERVALS = {
    "rls-train": (0.0, 360.0),
    "cls-train": (-45.0, 45.0),
    "cls-test": (135.0, 225.0),
}


@dataclass(frozen=True)
class ScattererModel:
    class_id: int
    positions: np.ndarray  # (M, 2) metres, vehicle frame
    amplitudes: np.ndarray  # (M,)
    vis_width: np.ndarray  # (M,) degrees; >= 360 means isotropic
    vis_center: np.ndarray  # (M,) degrees
    footprint: tuple[float, float]  # (length, width) metres

    def __post_init__(self):
        m = len(self.amplitudes)
        if m < 3:
            raise ValueError("a class needs at least 3 scatterers")
        if np.any(self.amplitudes < 0):
            raise ValueError("scatterer amplitudes must be nonnegative")
        half = np.asarray(self.footprint) / 2 + 1e-9
        if np.any(np.abs(self.positions) > half):
            raise ValueError("scatterer outside footprint")


@dataclass(frozen=True)
class InstanceJitter:
    """Per-vehicle deviation from its class template."""
    offsets: np.ndarray  # (M, 2) metres
    gains: np.ndarray  # (M,)
    shift_px: np.ndarray  # (2,) chip-centring error

    @classmethod
    def none(cls, model: ScattererModel) -> "InstanceJitter":
        m = len(model.amplitudes)
        return cls(np.zeros((m, 2)), np.ones(m), np.zeros(2))


@dataclass
class Chip:
    pixels: np.ndarray
    class_id: int
    instance_id: int
    azimuth: float

    def __post_init__(self):
        if self.pixels.shape != (CHIP, CHIP):
            raise ValueError(f"chip must be {CHIP}x{CHIP}, got {self.pixels.shape}")


@dataclass
class ChipSet:
    """Column-oriented collection of chips."""
    pixels: np.ndarray  # (M, H, W)
    class_ids: np.ndarray
    instance_ids: np.ndarray
    azimuths: np.ndarray

    def __len__(self) -> int:
        return len(self.class_ids)

    def __getitem__(self, i: int) -> Chip:
        return Chip(self.pixels[i], int(self.class_ids[i]), int(self.instance_ids[i]), float(self.azimuths[i]))

    def subset(self, idx) -> "ChipSet":
        return ChipSet(self.pixels[idx], self.class_ids[idx], self.instance_ids[idx], self.azimuths[idx])

    @classmethod
    def empty(cls, h: int = CHIP, w: int = CHIP) -> "ChipSet":
        return cls(np.zeros((0, h, w)), np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0))

    def object_keys(self) -> np.ndarray:
        """One integer per (class, instance) pair."""
        return self.class_ids.astype(np.int64) * 100_000 + self.instance_ids.astype(np.int64)


@dataclass
class DatasetManifest:
    role: str
    seed: int
    interval: tuple[float, float]
    class_counts: dict[int, int]
    template_ids: list[int]
    n_instances: int
    chip_file: str = ""
    digest: str = ""
    extra: dict[str, str] = field(default_factory=dict)

    def to_text(self) -> str:
        lines = [
            f"role = {self.role}",
            f"seed = {self.seed}",
            f"interval = {self.interval[0]:g},{self.interval[1]:g}",
            f"template_ids = {','.join(map(str, self.template_ids))}",
            f"n_instances = {self.n_instances}",
            f"class_counts = {','.join(f'{k}:{v}' for k, v in sorted(self.class_counts.items()))}",
            f"total = {sum(self.class_counts.values())}",
            f"chip_file = {self.chip_file}",
            f"sha256 = {self.digest}",
        ]
        lines += [f"{k} = {v}" for k, v in sorted(self.extra.items())]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "DatasetManifest":
        kv = {}
        for line in text.splitlines():
            if "=" in line:
                k, v = line.split("=", 1)
                kv[k.strip()] = v.strip()
        lo, hi = (float(x) for x in kv.pop("interval").split(","))
        counts = {}
        if kv.get("class_counts"):
            for item in kv.pop("class_counts").split(","):
                k, v = item.split(":")
                counts[int(k)] = int(v)
        else:
            kv.pop("class_counts", None)
        tids = kv.pop("template_ids")
        m = cls(
            role=kv.pop("role"),
            seed=int(kv.pop("seed")),
            interval=(lo, hi),
            class_counts=counts,
            template_ids=[int(x) for x in tids.split(",")] if tids else [],
            n_instances=int(kv.pop("n_instances")),
            chip_file=kv.pop("chip_file", ""),
            digest=kv.pop("sha256", ""),
        )
        kv.pop("total", None)
        m.extra = kv
        return m


# ---------------------------------------------------------------- generator

def _rng(*key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) & 0xFFFFFFFF for k in key]))


def make_class_templates(n_classes: int, seed: int = 0) -> list[ScattererModel]:
    """Random vehicle-like scatterer layouts, one per class."""
    if n_classes < 1:
        raise ValueError("n_classes must be >= 1")
    out = []
    for c in range(n_classes):
        rng = _rng(seed, 0xC1A55, c)
        length = rng.uniform(5.0, 7.0)
        width = rng.uniform(2.4, 3.4)
        m = int(rng.integers(7, 13))
        pos = np.column_stack([
            rng.uniform(-length / 2, length / 2, m),
            rng.uniform(-width / 2, width / 2, m),
        ])
        amp = rng.uniform(0.35, 1.0, m)
        # a few dominant scatterers give each class a distinctive signature
        amp[rng.choice(m, 2, replace=False)] = rng.uniform(1.2, 1.6, 2)
        width_deg = np.where(rng.random(m) < 0.6, 360.0, rng.uniform(120.0, 240.0, m))
        center = rng.uniform(0.0, 360.0, m)
        out.append(ScattererModel(c, pos, amp, width_deg, center, (length, width)))
    return out


def make_instance(model: ScattererModel, instance_id: int, seed: int) -> InstanceJitter:
    rng = _rng(seed, 0x1257, model.class_id, instance_id)
    m = len(model.amplitudes)
    return InstanceJitter(
        offsets=rng.normal(0.0, 0.08, (m, 2)),
        gains=rng.uniform(0.85, 1.15, m),
        shift_px=rng.uniform(-1.5, 1.5, 2),
    )


def visibility(width_deg: np.ndarray, center_deg: np.ndarray, theta_deg: float) -> np.ndarray:
    """Raised-cosine azimuthal window; isotropic where width >= 360."""
    d = (theta_deg - center_deg + 180.0) % 360.0 - 180.0
    half = np.minimum(width_deg, 360.0) / 2.0
    w = np.where(np.abs(d) < half, 0.5 * (1.0 + np.cos(np.pi * d / half)), 0.0)
    return np.where(width_deg >= 360.0, 1.0, w)


def render_intensity(model: ScattererModel, jitter: InstanceJitter, theta_deg: float) -> np.ndarray:
    """Noise-free intensity image (before speckle and compression)."""
    t = np.deg2rad(theta_deg)
    rot = np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]])
    p = (model.positions + jitter.offsets) @ rot.T / PIXEL_M
    centre = (CHIP - 1) / 2.0
    cx = centre + p[:, 0] + jitter.shift_px[0]
    cy = centre + p[:, 1] + jitter.shift_px[1]
    amp = model.amplitudes * jitter.gains * visibility(model.vis_width, model.vis_center, theta_deg)
    grid = np.arange(CHIP, dtype=np.float64)
    gx = np.exp(-((grid[None, :] - cx[:, None]) ** 2) / (2 * PSF_SIGMA_PX ** 2))  # (M, W)
    gy = np.exp(-((grid[None, :] - cy[:, None]) ** 2) / (2 * PSF_SIGMA_PX ** 2))  # (M, H)
    field_ = np.einsum("m,mh,mw->hw", amp, gy, gx)
    return field_ ** 2


def render_chip(model: ScattererModel, jitter: InstanceJitter, theta_deg: float,
                rng: np.random.Generator, instance_id: int = 0) -> Chip:
    inten = render_intensity(model, jitter, theta_deg)
    peak = float(np.max(model.amplitudes)) ** 2
    inten = inten + CLUTTER_LEVEL * peak
    inten = inten * rng.exponential(1.0, inten.shape)
    if peak > 0:
        img = np.minimum(np.log1p(LOG_GAIN / peak * inten) / np.log1p(LOG_GAIN * SATURATION), 1.0)
    else:
        img = np.zeros_like(inten)
    return Chip(img, model.class_id, instance_id, float(theta_deg % 360.0))


def _interval_width(interval: tuple[float, float]) -> float:
    return float(interval[1] - interval[0])


def intervals_overlap(a: tuple[float, float], b: tuple[float, float]) -> bool:
    """True if two azimuth intervals (degrees, may wrap) share any angle."""
    def arcs(iv):
        lo, hi = iv
        if hi - lo >= 360.0:
            return [(0.0, 360.0)]
        lo, hi = lo % 360.0, hi % 360.0
        if hi == 0.0 and iv[1] > iv[0]:
            hi = 360.0
        return [(lo, hi)] if lo <= hi else [(lo, 360.0), (0.0, hi)]

    return any(x0 <= y1 and y0 <= x1 for x0, x1 in arcs(a) for y0, y1 in arcs(b))


def in_interval(theta_deg, interval: tuple[float, float]) -> np.ndarray:
    lo, hi = interval
    if hi - lo >= 360.0:
        return np.ones(np.shape(theta_deg), bool)
    d = (np.asarray(theta_deg) - lo) % 360.0
    return d <= (hi - lo) + 1e-9


def generate_dataset(templates: list[ScattererModel], per_class: int,
                     interval: tuple[float, float], role: str, seed: int,
                     n_instances: int = 3, template_ids: list[int] | None = None,
                     instance_seed: int | None = None) -> tuple[ChipSet, DatasetManifest]:
    """Render ``per_class`` chips per template with azimuths uniform over ``interval``.

    Class ids in the returned set are positions in ``templates``.  Instances
    depend only on ``instance_seed`` (defaults to ``seed``) so that the same
    vehicles can appear in several datasets.
    """
    if role not in ROLES:
        raise ValueError(f"unknown role {role!r}")
    if per_class < 1:
        raise ValueError("per_class must be >= 1")
    if _interval_width(interval) <= 0:
        raise ValueError(f"empty azimuth interval {interval}")
    if _interval_width(interval) > 360:
        raise ValueError(f"azimuth interval wider than 360 degrees: {interval}")
    iseed = seed if instance_seed is None else instance_seed
    n = len(templates) * per_class
    pixels = np.empty((n, CHIP, CHIP))
    cls = np.empty(n, np.int64)
    inst = np.empty(n, np.int64)
    az = np.empty(n)
    role_code = ROLES.index(role)
    k = 0
    for label, model in enumerate(templates):
        jitters = [make_instance(model, i, iseed) for i in range(n_instances)]
        for j in range(per_class):
            rng = _rng(seed, role_code, label, j)
            theta = rng.uniform(interval[0], interval[1])
            i = int(rng.integers(n_instances))
            chip = render_chip(model, jitters[i], theta % 360.0, rng, instance_id=i)
            pixels[k], cls[k], inst[k], az[k] = chip.pixels, label, i, chip.azimuth
            k += 1
    chips = ChipSet(pixels, cls, inst, az)
    manifest = DatasetManifest(
        role=role, seed=seed, interval=(float(interval[0]), float(interval[1])),
        class_counts={c: per_class for c in range(len(templates))},
        template_ids=list(template_ids if template_ids is not None else [t.class_id for t in templates]),
        n_instances=n_instances,
    )
    return chips, manifest


# ---------------------------------------------------------------- chip file I/O

MAGIC = b"RLSC"
VERSION = 1
_HEADER = struct.Struct("<4sIIII")


class ChipFileError(Exception):
    """Malformed chip file; ``code`` is one of bad_magic, version_mismatch, truncated_payload."""

    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code


def _record_dtype(h: int, w: int) -> np.dtype:
    return np.dtype([("cls", "<u4"), ("inst", "<u4"), ("az", "<f8"), ("px", "<f8", (h * w,))])


def chips_to_bytes(chips: ChipSet) -> bytes:
    n = len(chips)
    h, w = chips.pixels.shape[1:] if n else (CHIP, CHIP)
    rec = np.empty(n, _record_dtype(h, w))
    rec["cls"], rec["inst"], rec["az"] = chips.class_ids, chips.instance_ids, chips.azimuths
    rec["px"] = chips.pixels.reshape(n, h * w)
    return _HEADER.pack(MAGIC, VERSION, n, h, w) + rec.tobytes()


def chips_from_bytes(buf: bytes) -> ChipSet:
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise ChipFileError("bad_magic", "not an RLSC chip file")
    if len(buf) < _HEADER.size:
        raise ChipFileError("truncated_payload", "header shorter than 20 bytes")
    _, version, n, h, w = _HEADER.unpack_from(buf)
    if version != VERSION:
        raise ChipFileError("version_mismatch", f"file version {version}, reader supports {VERSION}")
    dt = _record_dtype(h, w)
    need = _HEADER.size + n * dt.itemsize
    if len(buf) < need:
        raise ChipFileError("truncated_payload", f"expected {need} bytes, got {len(buf)}")
    rec = np.frombuffer(buf, dt, count=n, offset=_HEADER.size)
    return ChipSet(
        pixels=rec["px"].reshape(n, h, w).astype(np.float64),
        class_ids=rec["cls"].astype(np.int64),
        instance_ids=rec["inst"].astype(np.int64),
        azimuths=rec["az"].astype(np.float64),
    )


def write_chips(path, chips: ChipSet) -> str:
    """Write chips and return the file's sha256 hex digest."""
    data = chips_to_bytes(chips)
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def read_chips(path) -> ChipSet:
    return chips_from_bytes(Path(path).read_bytes())


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_dataset(chips: ChipSet, manifest: DatasetManifest, chip_path) -> DatasetManifest:
    chip_path = Path(chip_path)
    manifest.digest = write_chips(chip_path, chips)
    manifest.chip_file = chip_path.name
    chip_path.with_suffix(".manifest").write_text(manifest.to_text())
    return manifest


def read_manifest(path) -> DatasetManifest:
    return DatasetManifest.from_text(Path(path).read_text())

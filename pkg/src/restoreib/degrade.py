"""Synthetic clean scenes and the noise / rain / haze / rain+haze compositors.

All images are float64 arrays shaped (3, H, W) with values in [0, 1]. Every
random draw comes from a generator seeded by ``(seed, index, purpose)`` so a
dataset is a pure function of its spec and seed, independent of generation
order.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .imageio import load_image, save_image

__all__ = [
    "SpecError",
    "DegradationSpec",
    "PairedDataset",
    "gen_backgrounds",
    "apply_noise",
    "sample_streaks",
    "render_streaks",
    "apply_rain",
    "depth_map",
    "apply_haze",
    "apply_rain_haze",
    "degrade",
    "make_dataset",
    "random_crop",
    "histogram_entropy",
    "autocorrelation_length",
]

KINDS = ("noise", "rain", "haze", "rain_haze")
_BG, _DEG, _SPLIT = 0, 1, 2


class SpecError(ValueError):
    """Invalid degradation spec; ``field`` names the offending entry."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class DegradationSpec:
    """Parameters of one synthetic degradation process.

    ``beta_jitter`` and ``angle_jitter`` randomise the haze density and streak
    direction per image (relative fraction and degrees respectively).
    """

    kind: str = "noise"
    sigma: float = 0.1
    streak_count: int = 20
    length: float = 10.0
    angle: float = 75.0
    intensity: float = 0.6
    thickness: float = 1.5
    angle_jitter: float = 0.0
    beta: float = 1.5
    beta_jitter: float = 0.0
    airlight: tuple[float, float, float] = (0.8, 0.8, 0.8)
    depth_source: str = "ramp"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SpecError("kind", f"must be one of {KINDS}, got {self.kind!r}")
        object.__setattr__(self, "airlight", tuple(float(a) for a in self.airlight))
        checks = [
            ("sigma", self.sigma >= 0, "must be >= 0"),
            ("streak_count", self.streak_count >= 0 and int(self.streak_count) == self.streak_count, "must be a non-negative integer"),
            ("length", self.length >= 0, "must be >= 0"),
            ("thickness", self.thickness > 0, "must be > 0"),
            ("intensity", 0.0 <= self.intensity <= 1.0, "must lie in [0, 1]"),
            ("beta", self.beta >= 0, "must be >= 0"),
            ("beta_jitter", 0.0 <= self.beta_jitter <= 1.0, "must lie in [0, 1]"),
            ("angle_jitter", self.angle_jitter >= 0, "must be >= 0"),
            ("airlight", len(self.airlight) == 3 and all(0.0 <= a <= 1.0 for a in self.airlight), "needs 3 values in [0, 1]"),
            ("depth_source", self.depth_source in ("ramp", "smooth_noise"), "must be 'ramp' or 'smooth_noise'"),
        ]
        for name, ok, msg in checks:
            if not ok:
                raise SpecError(name, f"{msg}, got {getattr(self, name)!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "DegradationSpec":
        known = {f.name for f in dataclasses.fields(cls)}
        for k in d:
            if k not in known:
                raise SpecError(k, "unknown field")
        try:
            return cls(**d)
        except TypeError as exc:  # wrong value types
            raise SpecError("spec", str(exc)) from exc

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["airlight"] = list(self.airlight)
        return d


def _rng(seed: int, index: int, purpose: int) -> np.random.Generator:
    return np.random.default_rng([seed, index, purpose])


# ---------------------------------------------------------------------------
# clean scenes
# ---------------------------------------------------------------------------


def _lowpass_noise(rng, h, w, cutoff):
    spec = np.fft.fft2(rng.standard_normal((h, w)))
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.fftfreq(w)[None, :]
    spec *= np.exp(-(fx**2 + fy**2) / (2 * cutoff**2))
    field_ = np.real(np.fft.ifft2(spec))
    field_ -= field_.min()
    return field_ / max(field_.max(), 1e-12)


def _background(size: int, rng: np.random.Generator) -> np.ndarray:
    h = w = size
    yy, xx = np.mgrid[0:h, 0:w] / max(size - 1, 1)
    corners = rng.uniform(0.15, 0.85, size=(4, 3))
    img = (
        corners[0][:, None, None] * ((1 - yy) * (1 - xx))
        + corners[1][:, None, None] * ((1 - yy) * xx)
        + corners[2][:, None, None] * (yy * (1 - xx))
        + corners[3][:, None, None] * (yy * xx)
    )
    for _ in range(rng.integers(3, 7)):
        color = rng.uniform(0.0, 1.0, size=3)[:, None, None]
        cy, cx = rng.uniform(0, 1, size=2)
        ry, rx = rng.uniform(0.08, 0.3, size=2)
        if rng.random() < 0.5:
            mask = (np.abs(yy - cy) < ry) & (np.abs(xx - cx) < rx)
        else:
            mask = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 < 1.0
        alpha = rng.uniform(0.6, 1.0)
        if rng.random() < 0.5:
            # striped fill carries high-frequency detail
            period = rng.uniform(2.5, 6.0)
            theta = rng.uniform(0, np.pi)
            stripes = 0.5 + 0.5 * np.sin(2 * np.pi * (xx * np.cos(theta) + yy * np.sin(theta)) * size / period)
            color = color * (0.7 + 0.3 * stripes)
        img = np.where(mask, (1 - alpha) * img + alpha * color, img)
    texture = _lowpass_noise(rng, h, w, cutoff=0.15) - 0.5
    img = img + 0.12 * texture[None]
    return np.clip(img, 0.0, 1.0)


def gen_backgrounds(count: int, size: int, seed: int) -> list[np.ndarray]:
    """Procedural clean scenes: colour gradients, shapes, stripes and band-limited texture."""
    return [_background(size, _rng(seed, i, _BG)) for i in range(count)]


def histogram_entropy(img: np.ndarray, bins: int = 16) -> float:
    """Entropy in bits of the intensity histogram (all channels pooled)."""
    counts, _ = np.histogram(np.asarray(img).ravel(), bins=bins, range=(0.0, 1.0))
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log2(p)).sum())


# ---------------------------------------------------------------------------
# compositors
# ---------------------------------------------------------------------------


def apply_noise(y: np.ndarray, sigma: float, seed) -> np.ndarray:
    """Additive white Gaussian noise, clamped to [0, 1]."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if sigma == 0:
        return np.array(y, dtype=np.float64, copy=True)
    return np.clip(y + rng.normal(0.0, sigma, size=np.shape(y)), 0.0, 1.0)


def sample_streaks(spec: DegradationSpec, h: int, w: int, seed) -> np.ndarray:
    """Streak geometry as rows of (centre_y, centre_x, angle_rad, length)."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n = int(spec.streak_count)
    cy = rng.uniform(-0.1 * h, 1.1 * h, size=n)
    cx = rng.uniform(-0.1 * w, 1.1 * w, size=n)
    ang = np.deg2rad(spec.angle + rng.uniform(-spec.angle_jitter, spec.angle_jitter, size=n))
    length = spec.length * rng.uniform(0.7, 1.3, size=n)
    return np.stack([cy, cx, ang, length], axis=1)


def render_streaks(streaks: np.ndarray, h: int, w: int, thickness: float) -> np.ndarray:
    """Anti-aliased segments with a Gaussian cross-section, combined by max.

    The profile is cut off at a distance of ``thickness`` from the segment.
    """
    sigma = thickness / 2.0
    cutoff = thickness
    layer = np.zeros((h, w))
    for cy, cx, ang, length in streaks:
        dy, dx = np.sin(ang), np.cos(ang)
        half = length / 2.0
        y0, y1 = cy - dy * half, cy + dy * half
        x0, x1 = cx - dx * half, cx + dx * half
        r0 = int(max(np.floor(min(y0, y1) - cutoff), 0))
        r1 = int(min(np.ceil(max(y0, y1) + cutoff) + 1, h))
        c0 = int(max(np.floor(min(x0, x1) - cutoff), 0))
        c1 = int(min(np.ceil(max(x0, x1) + cutoff) + 1, w))
        if r0 >= r1 or c0 >= c1:
            continue
        py, px = np.mgrid[r0:r1, c0:c1].astype(np.float64)
        # projection of pixel centres onto the segment
        t = np.clip((py - cy) * dy + (px - cx) * dx, -half, half)
        dist2 = (py - cy - t * dy) ** 2 + (px - cx - t * dx) ** 2
        val = np.where(dist2 <= cutoff**2, np.exp(-dist2 / (2 * sigma**2)), 0.0)
        np.maximum(layer[r0:r1, c0:c1], val, out=layer[r0:r1, c0:c1])
    return layer


def apply_rain(y: np.ndarray, spec: DegradationSpec, seed) -> np.ndarray:
    """x = clamp(y + intensity * S) with S the rendered streak layer."""
    _, h, w = y.shape
    streaks = sample_streaks(spec, h, w, seed)
    if len(streaks) == 0 or spec.intensity == 0:
        return np.array(y, dtype=np.float64, copy=True)
    layer = render_streaks(streaks, h, w, spec.thickness)
    return np.clip(y + spec.intensity * layer[None], 0.0, 1.0)


def depth_map(source: str, h: int, w: int, seed=None) -> np.ndarray:
    """Normalised depth in [0, 1]; 'ramp' is far (1) at the top row, near (0) at the bottom."""
    if source == "ramp":
        return np.repeat(np.linspace(1.0, 0.0, h)[:, None], w, axis=1)
    if source == "smooth_noise":
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        return _lowpass_noise(rng, h, w, cutoff=0.05)
    raise SpecError("depth_source", f"unknown depth source {source!r}")


def _transmission(spec: DegradationSpec, shape, rng, depth):
    _, h, w = shape
    beta = spec.beta
    if spec.beta_jitter:
        beta = beta * rng.uniform(1 - spec.beta_jitter, 1 + spec.beta_jitter)
    if depth is None:
        depth = depth_map(spec.depth_source, h, w, rng)
    return np.exp(-beta * np.asarray(depth, dtype=np.float64))


def apply_haze(y: np.ndarray, spec: DegradationSpec, seed, depth: np.ndarray | None = None) -> np.ndarray:
    """Atmospheric scattering: x = y * t + A * (1 - t), t = exp(-beta * depth)."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    t = _transmission(spec, y.shape, rng, depth)[None]
    A = np.asarray(spec.airlight)[:, None, None]
    return np.clip(y * t + A * (1.0 - t), 0.0, 1.0)


def apply_rain_haze(y: np.ndarray, spec: DegradationSpec, seed, depth: np.ndarray | None = None) -> np.ndarray:
    """Haze first, then streaks attenuated by the transmission map."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    t = _transmission(spec, y.shape, rng, depth)
    A = np.asarray(spec.airlight)[:, None, None]
    hazy = y * t[None] + A * (1.0 - t[None])
    _, h, w = y.shape
    streaks = sample_streaks(spec, h, w, rng)
    if len(streaks) and spec.intensity:
        hazy = hazy + spec.intensity * (render_streaks(streaks, h, w, spec.thickness) * t)[None]
    return np.clip(hazy, 0.0, 1.0)


def degrade(y: np.ndarray, spec: DegradationSpec, seed) -> np.ndarray:
    if spec.kind == "noise":
        return apply_noise(y, spec.sigma, seed)
    if spec.kind == "rain":
        return apply_rain(y, spec, seed)
    if spec.kind == "haze":
        return apply_haze(y, spec, seed)
    return apply_rain_haze(y, spec, seed)


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------


@dataclass
class PairedDataset:
    """Degraded/clean pairs split 80/20 into train and test."""

    spec: DegradationSpec
    seed: int
    count: int
    size: int
    train: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)
    test: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)
    train_ids: list[int] = field(default_factory=list)
    test_ids: list[int] = field(default_factory=list)

    @property
    def pairs(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return self.train + self.test

    def meta(self) -> dict:
        return {"spec": self.spec.to_dict(), "seed": self.seed, "count": self.count, "size": self.size,
                "train_ids": self.train_ids, "test_ids": self.test_ids}

    def save(self, root, bits: int = 8) -> Path:
        """Write ``<root>/{train,test}/{x,y}/<index>.ppm`` and ``spec.json``."""
        root = Path(root)
        for split, ids, pairs in (("train", self.train_ids, self.train), ("test", self.test_ids, self.test)):
            for sub in ("x", "y"):
                (root / split / sub).mkdir(parents=True, exist_ok=True)
            for i, (x, y) in zip(ids, pairs):
                save_image(root / split / "x" / f"{i}.ppm", x, bits)
                save_image(root / split / "y" / f"{i}.ppm", y, bits)
        (root / "spec.json").write_text(json.dumps(self.meta(), indent=1, sort_keys=True) + "\n")
        return root

    @classmethod
    def load(cls, root) -> "PairedDataset":
        root = Path(root)
        meta = json.loads((root / "spec.json").read_text())
        ds = cls(DegradationSpec.from_dict(meta["spec"]), meta["seed"], meta["count"], meta["size"],
                 train_ids=list(meta["train_ids"]), test_ids=list(meta["test_ids"]))
        for split, ids, pairs in (("train", ds.train_ids, ds.train), ("test", ds.test_ids, ds.test)):
            for i in ids:
                pairs.append((load_image(root / split / "x" / f"{i}.ppm"), load_image(root / split / "y" / f"{i}.ppm")))
        return ds


def make_dataset(spec: DegradationSpec, count: int, size: int, seed: int, train_fraction: float = 0.8) -> PairedDataset:
    """Backgrounds + degradation, split by a seeded shuffle."""
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    ys = gen_backgrounds(count, size, seed)
    xs = [degrade(y, spec, _rng(seed, i, _DEG)) for i, y in enumerate(ys)]
    order = _rng(seed, 0, _SPLIT).permutation(count)
    n_train = int(round(train_fraction * count))
    train_ids = sorted(int(i) for i in order[:n_train])
    test_ids = sorted(int(i) for i in order[n_train:])
    return PairedDataset(
        spec, seed, count, size,
        train=[(xs[i], ys[i]) for i in train_ids],
        test=[(xs[i], ys[i]) for i in test_ids],
        train_ids=train_ids,
        test_ids=test_ids,
    )


def random_crop(pair: tuple[np.ndarray, np.ndarray], crop: int, seed) -> tuple[np.ndarray, np.ndarray]:
    """Crop X and Y at the same random offset."""
    x, y = pair
    _, h, w = x.shape
    if crop > h or crop > w:
        raise ValueError(f"crop {crop} larger than image {h}x{w}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    r = int(rng.integers(0, h - crop + 1))
    c = int(rng.integers(0, w - crop + 1))
    return x[:, r : r + crop, c : c + crop], y[:, r : r + crop, c : c + crop]


def autocorrelation_length(residual: np.ndarray, threshold: float = np.exp(-1)) -> float:
    """Lag (pixels) where the normalised autocorrelation of a residual first drops below ``threshold``.

    Averages the vertical and horizontal directions; computed on the
    channel-mean residual via FFT with zero padding.
    """
    r = np.asarray(residual, dtype=np.float64)
    if r.ndim == 3:
        r = r.mean(axis=0)
    r = r - r.mean()
    h, w = r.shape
    f = np.fft.fft2(r, s=(2 * h, 2 * w))
    ac = np.real(np.fft.ifft2(f * np.conj(f)))
    if ac[0, 0] <= 0:
        return 0.0
    ac /= ac[0, 0]
    lengths = []
    for profile in (ac[:h, 0], ac[0, :w]):
        below = np.nonzero(profile < threshold)[0]
        if len(below) == 0:
            lengths.append(float(len(profile)))
            continue
        k = below[0]
        # linear interpolation between lag k-1 and k
        a, b = profile[k - 1], profile[k]
        lengths.append(float(k - 1 + (a - threshold) / (a - b)))
    return float(np.mean(lengths))

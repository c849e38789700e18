"""Generator and discriminator architectures built on :mod:`restoreib.tensor`.

Every network is a :class:`ModuleGraph`: an ordered set of named parameter
tensors plus a ``forward``. Parameters are initialised from N(0, 0.02) with a
generator seeded by ``(seed, parameter name)``, so two networks that share a
layer name (e.g. the outer levels of UNet-5 and UNet-8) share its initial
weights.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor

__all__ = [
    "ConfigError",
    "InfoAccumConfig",
    "GeneratorConfig",
    "ModuleGraph",
    "InfoAccum",
    "DenseBlock",
    "SubPixHead",
    "UNet",
    "EnDecoder",
    "PatchGAN",
    "build_generator",
    "build_unet",
    "build_endecoder",
    "build_patchgan",
    "infoaccum_block",
    "dense_block",
    "subpix_head",
    "channel_schedule",
    "save_checkpoint",
    "load_checkpoint",
]

INIT_STD = 0.02
MAX_DEPTH = 8
CHANNEL_MULT = (1, 2, 4, 8, 8, 8, 8, 8)
DILATIONS = (1, 3, 5)


class ConfigError(ValueError):
    """Raised for invalid architecture configurations."""


@dataclass(frozen=True)
class InfoAccumConfig:
    layers: int = 15
    growth: int = 4
    positions: tuple[int, ...] = (1,)

    def __post_init__(self):
        if self.layers < 0:
            raise ConfigError(f"infoaccum.layers must be >= 0, got {self.layers}")
        if self.growth < 1:
            raise ConfigError(f"infoaccum.growth must be >= 1, got {self.growth}")
        object.__setattr__(self, "positions", tuple(sorted(set(int(p) for p in self.positions))))


@dataclass(frozen=True)
class GeneratorConfig:
    kind: str = "unet"
    depth: int = 5
    base_channels: int = 16
    in_channels: int = 3
    out_channels: int = 3
    infoaccum: InfoAccumConfig | None = None
    subpix_head: bool = False

    def __post_init__(self):
        if self.kind not in ("unet", "endecoder"):
            raise ConfigError(f"kind must be 'unet' or 'endecoder', got {self.kind!r}")
        if not 1 <= self.depth <= MAX_DEPTH:
            raise ConfigError(f"depth must be in 1..{MAX_DEPTH}, got {self.depth}")
        if self.base_channels < 1:
            raise ConfigError(f"base_channels must be >= 1, got {self.base_channels}")
        if isinstance(self.infoaccum, dict):
            object.__setattr__(self, "infoaccum", InfoAccumConfig(**self.infoaccum))
        if self.infoaccum is not None:
            bad = [p for p in self.infoaccum.positions if not 1 <= p <= self.depth]
            if bad:
                raise ConfigError(f"infoaccum positions {bad} outside 1..{self.depth}")

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.infoaccum is not None:
            d["infoaccum"]["positions"] = list(self.infoaccum.positions)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        d = dict(d)
        ia = d.get("infoaccum")
        if ia is not None and not isinstance(ia, InfoAccumConfig):
            d["infoaccum"] = InfoAccumConfig(**{**ia, "positions": tuple(ia.get("positions", (1,)))})
        return cls(**d)

    def label(self) -> str:
        name = ("UNet" if self.kind == "unet" else "EnDecoder") + f"-{self.depth}"
        if self.infoaccum is not None and self.infoaccum.layers > 0:
            name += f"+InfoAccum-{self.infoaccum.layers}"
            if self.infoaccum.positions != (1,):
                name += "@" + ",".join(map(str, self.infoaccum.positions))
        if self.subpix_head:
            name += "+SubPix"
        return name


def channel_schedule(base: int, depth: int) -> list[int]:
    """Channels of encoder levels 1..depth."""
    return [base * m for m in CHANNEL_MULT[:depth]]


def _init_rng(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(name.encode())])


class ModuleGraph:
    """Named parameters, ordered layer records and named skip edges."""

    def __init__(self, seed: int = 0, dtype=np.float32, namespace: str = ""):
        self.seed = seed
        self.namespace = namespace
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Tensor] = {}
        self.layers: list[tuple[str, str]] = []
        self.skips: list[str] = []

    # parameter registration -------------------------------------------------
    def _param(self, name: str, shape, init: str = "normal") -> Tensor:
        if name in self.params:
            raise ConfigError(f"duplicate parameter {name!r}")
        if init == "normal":
            data = _init_rng(self.seed, f"{self.namespace}/{name}").normal(0.0, INIT_STD, size=shape)
        elif init == "ones":
            data = np.ones(shape)
        else:
            data = np.zeros(shape)
        t = Tensor(data.astype(self.dtype), requires_grad=True)
        self.params[name] = t
        return t

    def _conv(self, name, cin, cout, k):
        self.layers.append((name, "conv"))
        self._param(f"{name}.weight", (cout, cin, k, k))
        self._param(f"{name}.bias", (cout,), init="zeros")

    def _convt(self, name, cin, cout, k):
        self.layers.append((name, "conv_transpose"))
        self._param(f"{name}.weight", (cin, cout, k, k))
        self._param(f"{name}.bias", (cout,), init="zeros")

    def _norm(self, name, c):
        self.layers.append((name, "instance_norm"))
        self._param(f"{name}.gamma", (c,), init="ones")
        self._param(f"{name}.beta", (c,), init="zeros")

    def _adopt(self, prefix: str, child: "ModuleGraph"):
        for name, p in child.params.items():
            full = f"{prefix}.{name}"
            if full in self.params:
                raise ConfigError(f"duplicate parameter {full!r}")
            self.params[full] = p
        self.layers.extend((f"{prefix}.{n}", k) for n, k in child.layers)

    # application helpers ------------------------------------------------------
    def conv(self, name, x, stride=1, padding=0, dilation=1):
        p = self.params
        return T.conv2d(x, p[f"{name}.weight"], p[f"{name}.bias"], stride, padding, dilation)

    def convt(self, name, x, stride=2, padding=1):
        p = self.params
        return T.conv_transpose2d(x, p[f"{name}.weight"], p[f"{name}.bias"], stride, padding)

    def norm(self, name, x):
        p = self.params
        return T.instance_norm(x, p[f"{name}.gamma"], p[f"{name}.beta"])

    # public surface -------------------------------------------------------------
    def parameters(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self.params.items())

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self.params) ^ set(state)
        if missing:
            raise ConfigError(f"state mismatch on parameters {sorted(missing)}")
        for k, v in state.items():
            if self.params[k].shape != v.shape:
                raise ConfigError(f"shape mismatch for {k}: {self.params[k].shape} vs {v.shape}")
            self.params[k].data = np.asarray(v, dtype=self.dtype).copy()

    def forward(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def __call__(self, x) -> Tensor:
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.dtype))
        return self.forward(x)


# ---------------------------------------------------------------------------
# dense-style blocks
# ---------------------------------------------------------------------------


class InfoAccum(ModuleGraph):
    """Multi-dilation dense block.

    Layer ``l`` sees everything accumulated so far and appends three feature
    groups of ``growth`` channels from 3x3 convolutions with dilation 1, 3 and 5.
    The input always survives verbatim in the leading channels.
    """

    dilations = DILATIONS

    def __init__(self, in_channels: int, layers: int, growth: int = 4, seed: int = 0, dtype=np.float32, namespace=""):
        super().__init__(seed, dtype, namespace)
        if layers < 0 or growth < 1:
            raise ConfigError(f"need layers >= 0 and growth >= 1, got {layers}, {growth}")
        self.in_channels, self.n_layers, self.growth = in_channels, layers, growth
        c = in_channels
        for l in range(1, layers + 1):
            for d in self.dilations:
                self._conv(f"layer{l}.d{d}", c, growth, 3)
            c += growth * len(self.dilations)
        self.out_channels = c

    def forward(self, x):
        for l in range(1, self.n_layers + 1):
            branches = [T.leaky_relu(self.conv(f"layer{l}.d{d}", x, padding=d, dilation=d)) for d in self.dilations]
            x = T.concat_channels([x, *branches])
        return x


class DenseBlock(InfoAccum):
    """Single-path dense block (dilation 1 only)."""

    dilations = (1,)


class SubPixHead(ModuleGraph):
    """3x3 convolution to ``out_channels * r^2`` maps followed by pixel shuffle."""

    def __init__(self, in_channels: int, out_channels: int, r: int = 2, seed: int = 0, dtype=np.float32, namespace=""):
        super().__init__(seed, dtype, namespace)
        self.r, self.out_channels = r, out_channels
        self._conv("conv", in_channels, out_channels * r * r, 3)

    def forward(self, x):
        return T.pixel_shuffle(self.conv("conv", x, padding=1), self.r)


def infoaccum_block(x: Tensor, layers: int, growth: int = 4, seed: int = 0) -> Tensor:
    """Apply a freshly initialised InfoAccum block to ``x``."""
    return InfoAccum(x.shape[1], layers, growth, seed=seed, dtype=x.dtype)(x)


def dense_block(x: Tensor, layers: int, growth: int = 4, seed: int = 0) -> Tensor:
    return DenseBlock(x.shape[1], layers, growth, seed=seed, dtype=x.dtype)(x)


def subpix_head(x: Tensor, r: int, out_channels: int, seed: int = 0) -> Tensor:
    return SubPixHead(x.shape[1], out_channels, r, seed=seed, dtype=x.dtype)(x)


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------


class _Generator(ModuleGraph):
    def __init__(self, cfg: GeneratorConfig, seed: int, dtype):
        super().__init__(seed, dtype)
        self.cfg = cfg
        self.channels = channel_schedule(cfg.base_channels, cfg.depth)
        self.infoaccum: dict[int, InfoAccum] = {}

    def _encoder_input(self, k: int, cin: int) -> int:
        ia = self.cfg.infoaccum
        if ia is not None and k in ia.positions:
            block = InfoAccum(cin, ia.layers, ia.growth, seed=self.seed, dtype=self.dtype, namespace=f"infoaccum{k}")
            self.infoaccum[k] = block
            self._adopt(f"infoaccum{k}", block)
            return block.out_channels
        return cin

    def _check_input(self, x: Tensor):
        if x.ndim != 4 or x.shape[1] != self.cfg.in_channels:
            raise T.ShapeError(f"expected (N,{self.cfg.in_channels},H,W) input, got {x.shape}")
        f = 2**self.cfg.depth
        if x.shape[2] % f or x.shape[3] % f:
            raise T.ShapeError(f"spatial size {x.shape[2:]} not divisible by 2^depth={f}")

    def _maybe_infoaccum(self, k, h):
        return self.infoaccum[k](h) if k in self.infoaccum else h


class UNet(_Generator):
    """Depth-N U-Net with 4x4 stride-2 convolutions and concatenating skips.

    ``skips=False`` builds the same trunk with decoder inputs that omit the
    skip channels.
    """

    def __init__(self, cfg: GeneratorConfig, seed: int = 0, dtype=np.float32, skips: bool = True):
        super().__init__(cfg, seed, dtype)
        self.use_skips = skips
        n, ch = cfg.depth, self.channels
        cin = cfg.in_channels
        for k in range(1, n + 1):
            cin = self._encoder_input(k, cin)
            self._conv(f"enc{k}", cin, ch[k - 1], 4)
            if 1 < k < n:
                self._norm(f"enc{k}.norm", ch[k - 1])
            cin = ch[k - 1]
        for k in range(n, 0, -1):
            dec_in = ch[k - 1] * (2 if (skips and k < n) else 1)
            if k < n and skips:
                self.skips.append(f"enc{k}->dec{k}")
            if k == 1:
                if cfg.subpix_head:
                    head = SubPixHead(dec_in, cfg.out_channels, 2, seed=seed, dtype=dtype, namespace="dec1.subpix")
                    self.head = head
                    self._adopt("dec1.subpix", head)
                else:
                    self._convt("dec1", dec_in, cfg.out_channels, 4)
            else:
                self._convt(f"dec{k}", dec_in, ch[k - 2], 4)
                self._norm(f"dec{k}.norm", ch[k - 2])

    def encode(self, x: Tensor) -> list[Tensor]:
        """Encoder level outputs, outermost first."""
        self._check_input(x)
        n = self.cfg.depth
        feats = []
        h = x
        for k in range(1, n + 1):
            h = self._maybe_infoaccum(k, h)
            h = self.conv(f"enc{k}", h, stride=2, padding=1)
            if 1 < k < n:
                h = self.norm(f"enc{k}.norm", h)
            h = T.leaky_relu(h)
            feats.append(h)
        return feats

    def forward(self, x: Tensor, ablate_skips: bool = False) -> Tensor:
        feats = self.encode(x)
        n = self.cfg.depth
        d = feats[-1]
        for k in range(n, 0, -1):
            if k < n and self.use_skips:
                skip = feats[k - 1]
                if ablate_skips:
                    skip = Tensor(np.zeros(skip.shape, dtype=skip.dtype))
                inp = T.concat_channels([d, skip])
            else:
                inp = d
            if k == 1:
                out = self.head(inp) if self.cfg.subpix_head else self.convt("dec1", inp)
                return T.tanh(out)
            d = T.relu(self.norm(f"dec{k}.norm", self.convt(f"dec{k}", inp)))
        raise AssertionError("unreachable")

    def __call__(self, x, ablate_skips: bool = False) -> Tensor:
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.dtype))
        return self.forward(x, ablate_skips=ablate_skips)

    def bottleneck(self, x: Tensor) -> Tensor:
        return self.encode(x)[-1]


class EnDecoder(_Generator):
    """Skip-free encoder/decoder: conv + 2x2 max-pool down, nearest + conv up."""

    def __init__(self, cfg: GeneratorConfig, seed: int = 0, dtype=np.float32):
        super().__init__(cfg, seed, dtype)
        n, ch = cfg.depth, self.channels
        cin = cfg.in_channels
        for k in range(1, n + 1):
            cin = self._encoder_input(k, cin)
            self._conv(f"enc{k}", cin, ch[k - 1], 3)
            if k > 1:
                self._norm(f"enc{k}.norm", ch[k - 1])
            cin = ch[k - 1]
        for k in range(n, 0, -1):
            if k == 1:
                if cfg.subpix_head:
                    self.head = SubPixHead(ch[0], cfg.out_channels, 2, seed=seed, dtype=dtype, namespace="dec1.subpix")
                    self._adopt("dec1.subpix", self.head)
                else:
                    self._conv("dec1", ch[0], cfg.out_channels, 3)
            else:
                self._conv(f"dec{k}", ch[k - 1], ch[k - 2], 3)
                self._norm(f"dec{k}.norm", ch[k - 2])

    def encode(self, x: Tensor) -> list[Tensor]:
        self._check_input(x)
        feats = []
        h = x
        for k in range(1, self.cfg.depth + 1):
            h = self._maybe_infoaccum(k, h)
            h = self.conv(f"enc{k}", h, padding=1)
            if k > 1:
                h = self.norm(f"enc{k}.norm", h)
            h = T.maxpool2(T.leaky_relu(h))
            feats.append(h)
        return feats

    def forward(self, x: Tensor) -> Tensor:
        h = self.encode(x)[-1]
        for k in range(self.cfg.depth, 0, -1):
            if k == 1:
                if self.cfg.subpix_head:
                    return T.tanh(self.head(h))
                return T.tanh(self.conv("dec1", T.upsample_nearest(h, 2), padding=1))
            h = self.conv(f"dec{k}", T.upsample_nearest(h, 2), padding=1)
            h = T.relu(self.norm(f"dec{k}.norm", h))
        raise AssertionError("unreachable")

    def bottleneck(self, x: Tensor) -> Tensor:
        return self.encode(x)[-1]


class PatchGAN(ModuleGraph):
    """Five-layer fully convolutional patch discriminator.

    Three stride-2 and two stride-1 4x4 convolutions; the output is a raw
    (pre-sigmoid) score per patch.
    """

    strides = (2, 2, 2, 1, 1)

    def __init__(self, in_channels: int = 6, base_channels: int = 16, seed: int = 0, dtype=np.float32):
        super().__init__(seed, dtype)
        self.in_channels = in_channels
        widths = [base_channels, base_channels * 2, base_channels * 4, base_channels * 8, 1]
        cin = in_channels
        for i, cout in enumerate(widths, start=1):
            self._conv(f"d{i}", cin, cout, 4)
            if 1 < i < 5:
                self._norm(f"d{i}.norm", cout)
            cin = cout
        self.widths = widths

    def forward(self, xy: Tensor) -> Tensor:
        h = xy
        for i, s in enumerate(self.strides, start=1):
            h = self.conv(f"d{i}", h, stride=s, padding=1)
            if i < 5:
                if i > 1:
                    h = self.norm(f"d{i}.norm", h)
                h = T.leaky_relu(h)
        return h

    def score(self, x: Tensor, y: Tensor) -> Tensor:
        """Patch scores for the conditional pair (x, y)."""
        return self.forward(T.concat_channels([x, y]))


def build_unet(cfg: GeneratorConfig, seed: int = 0, dtype=np.float32) -> UNet:
    if cfg.kind != "unet":
        raise ConfigError(f"build_unet needs kind='unet', got {cfg.kind!r}")
    return UNet(cfg, seed=seed, dtype=dtype)


def build_endecoder(cfg: GeneratorConfig, seed: int = 0, dtype=np.float32) -> EnDecoder:
    if cfg.kind != "endecoder":
        raise ConfigError(f"build_endecoder needs kind='endecoder', got {cfg.kind!r}")
    return EnDecoder(cfg, seed=seed, dtype=dtype)


def build_generator(cfg: GeneratorConfig, seed: int = 0, dtype=np.float32) -> _Generator:
    return build_unet(cfg, seed, dtype) if cfg.kind == "unet" else build_endecoder(cfg, seed, dtype)


def build_patchgan(in_channels: int = 6, base_channels: int = 16, seed: int = 0, dtype=np.float32) -> PatchGAN:
    return PatchGAN(in_channels, base_channels, seed=seed, dtype=dtype)


# ---------------------------------------------------------------------------
# checkpoints: JSON manifest + flat little-endian blob
# ---------------------------------------------------------------------------


def save_checkpoint(net: ModuleGraph, path, extra: dict | None = None) -> tuple[Path, Path]:
    """Write ``<path>.json`` (manifest) and ``<path>.bin`` (parameters in manifest order)."""
    path = Path(path)
    manifest_path, blob_path = path.with_suffix(".json"), path.with_suffix(".bin")
    entries, offset = [], 0
    with open(blob_path, "wb") as fh:
        for name, p in net.params.items():
            arr = np.ascontiguousarray(p.data, dtype=p.data.dtype.newbyteorder("<"))
            fh.write(arr.tobytes())
            entries.append({"name": name, "shape": list(arr.shape), "dtype": arr.dtype.str, "offset": offset})
            offset += arr.nbytes
    manifest = {"format": "restoreib-checkpoint", "version": 1, "blob": blob_path.name, "nbytes": offset, "params": entries}
    if extra:
        manifest["meta"] = extra
    manifest_path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return manifest_path, blob_path


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a checkpoint written by :func:`save_checkpoint`; returns (state, meta)."""
    path = Path(path)
    manifest_path = path if path.suffix == ".json" else path.with_suffix(".json")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != "restoreib-checkpoint":
        raise ValueError(f"{manifest_path} is not a restoreib checkpoint manifest")
    blob = (manifest_path.parent / manifest["blob"]).read_bytes()
    if len(blob) != manifest["nbytes"]:
        raise ValueError(f"blob has {len(blob)} bytes, manifest says {manifest['nbytes']}")
    state = {}
    for e in manifest["params"]:
        dt = np.dtype(e["dtype"])
        count = int(np.prod(e["shape"], dtype=np.int64))
        arr = np.frombuffer(blob, dtype=dt, count=count, offset=e["offset"]).reshape(e["shape"])
        state[e["name"]] = arr.astype(dt.newbyteorder("="))
    return state, manifest.get("meta", {})

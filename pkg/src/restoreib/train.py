"""Training loops: conditional GAN training and reconstruction pre-training.

Images enter as (C, H, W) arrays in [0, 1]; networks see them mapped to
[-1, 1] so that the generator's tanh output covers the full range.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import tensor as T
from .degrade import random_crop
from .losses import jsgan_losses, l1_loss, lsgan_d_loss, lsgan_g_loss, mse_loss
from .metrics import psnr, ssim
from .nn import ModuleGraph
from .optim import Adam
from .tensor import Tensor

__all__ = [
    "LOSS_KINDS",
    "TrainConfig",
    "LossRecord",
    "LossTrace",
    "TrainingDiverged",
    "train_gan",
    "pretrain_reconstruction",
    "restore",
    "evaluate",
    "to_net",
    "from_net",
]

LOSS_KINDS = ("jsgan", "lsgan", "l1_only")


class TrainingDiverged(RuntimeError):
    """A loss became non-finite; carries where it happened."""

    def __init__(self, epoch: int, step: int, which: str, value: float):
        super().__init__(f"non-finite {which} loss ({value}) at epoch {epoch}, step {step}")
        self.epoch, self.step, self.which, self.value = epoch, step, which, value


@dataclass
class TrainConfig:
    """Optimisation settings for one run.

    ``samples_per_epoch`` caps the number of crops drawn per epoch (``None``
    visits every training pair once). ``disc_base`` is the PatchGAN width.
    """

    loss_kind: str = "lsgan"
    lam: float = 100.0
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    weight_decay: float = 0.0
    batch_size: int = 1
    crop_size: int = 32
    epochs: int = 30
    seed: int = 0
    pretrain_epochs: int = 0
    samples_per_epoch: int | None = None
    disc_base: int = 16

    def __post_init__(self):
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"loss_kind must be one of {LOSS_KINDS}, got {self.loss_kind!r}")
        if self.lam < 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")
        if self.batch_size != 1:
            raise ValueError("only batch_size=1 is supported")
        if self.crop_size < 1 or self.epochs < 0 or self.pretrain_epochs < 0:
            raise ValueError("crop_size must be >= 1 and epoch counts >= 0")
        if self.samples_per_epoch is not None and self.samples_per_epoch < 1:
            raise ValueError("samples_per_epoch must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown train config field(s): {', '.join(unknown)}")
        return cls(**d)


@dataclass
class LossRecord:
    epoch: int
    g_loss: float
    d_loss: float
    l1: float
    adv: float


class LossTrace(list):
    """Per-epoch loss averages; serialises to CSV with columns epoch,g_loss,d_loss,l1,adv."""

    columns = ("epoch", "g_loss", "d_loss", "l1", "adv")

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for r in self:
            w.writerow([r.epoch] + [repr(float(getattr(r, c))) for c in self.columns[1:]])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, source) -> "LossTrace":
        text = Path(source).read_text() if not isinstance(source, str) or "\n" not in source else source
        rows = list(csv.DictReader(io.StringIO(text)))
        missing = [c for c in cls.columns if rows and c not in rows[0]]
        if missing:
            raise ValueError(f"loss trace missing column(s): {', '.join(missing)}")
        return cls(LossRecord(int(r["epoch"]), *(float(r[c]) for c in cls.columns[1:])) for r in rows)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self], dtype=np.float64)


def to_net(img: np.ndarray, dtype=np.float32) -> Tensor:
    """(C,H,W) image in [0,1] -> (1,C,H,W) tensor in [-1,1]."""
    return Tensor((np.asarray(img, dtype=np.float64)[None] * 2.0 - 1.0).astype(dtype))


def from_net(t: Tensor) -> np.ndarray:
    return np.clip((t.data[0].astype(np.float64) + 1.0) / 2.0, 0.0, 1.0)


def _check(value: float, epoch: int, step: int, which: str) -> float:
    if not math.isfinite(value):
        raise TrainingDiverged(epoch, step, which, value)
    return value


def _epoch_samples(n: int, cfg: TrainConfig, epoch: int, rng: np.random.Generator) -> np.ndarray:
    count = n if cfg.samples_per_epoch is None else cfg.samples_per_epoch
    reps = -(-count // n)
    return np.concatenate([rng.permutation(n) for _ in range(reps)])[:count]


def _crop_stream(cfg: TrainConfig, stream: int) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, stream])


def train_gan(gen: ModuleGraph, disc: ModuleGraph | None, pairs, cfg: TrainConfig, on_epoch=None) -> LossTrace:
    """Alternate one discriminator and one generator update per crop.

    ``pairs`` is a sequence of (degraded, clean) images. With
    ``loss_kind='l1_only'`` the discriminator is ignored and may be ``None``.
    Parameters are updated in place; the per-epoch trace is returned.
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("training needs at least one pair")
    adversarial = cfg.loss_kind != "l1_only"
    if adversarial and disc is None:
        raise ValueError(f"loss_kind={cfg.loss_kind!r} needs a discriminator")
    if cfg.pretrain_epochs:
        pretrain_reconstruction(gen, [y for _, y in pairs], cfg)
    g_opt = Adam(gen.parameters(), cfg.lr, cfg.beta1, cfg.beta2, weight_decay=cfg.weight_decay)
    d_opt = Adam(disc.parameters(), cfg.lr, cfg.beta1, cfg.beta2, weight_decay=cfg.weight_decay) if adversarial else None
    rng = _crop_stream(cfg, 1)
    trace = LossTrace()
    for epoch in range(1, cfg.epochs + 1):
        sums = np.zeros(4)
        order = _epoch_samples(len(pairs), cfg, epoch, rng)
        for step, i in enumerate(order):
            xc, yc = random_crop(pairs[i], cfg.crop_size, rng)
            x, y = to_net(xc, gen.dtype), to_net(yc, gen.dtype)
            fake = gen(x)
            if not adversarial:
                l1 = l1_loss(fake, y)
                g_opt.zero_grad()
                T.backward(l1)
                g_opt.step()
                v = _check(float(l1.data), epoch, step, "l1")
                sums += (v, 0.0, v, 0.0)
                continue

            # discriminator on a detached fake
            d_opt.zero_grad()
            s_real = disc.score(x, y)
            s_fake = disc.score(x, Tensor(fake.data))
            if cfg.loss_kind == "lsgan":
                d_loss = lsgan_d_loss(s_real, s_fake)
            else:
                d_loss = jsgan_losses(T.sigmoid(s_real), T.sigmoid(s_fake))[1]
            T.backward(d_loss)
            d_opt.step()

            g_opt.zero_grad()
            s_fake = disc.score(x, fake)
            l1 = l1_loss(fake, y)
            if cfg.loss_kind == "lsgan":
                adv = lsgan_g_loss(s_fake, 0.0, 0.0)
            else:
                adv = jsgan_losses(T.sigmoid(s_fake), T.sigmoid(s_fake))[0]
            g_loss = T.add(adv, T.mul(l1, cfg.lam))
            T.backward(g_loss)
            g_opt.step()

            sums += (
                _check(float(g_loss.data), epoch, step, "generator"),
                _check(float(d_loss.data), epoch, step, "discriminator"),
                float(l1.data),
                float(adv.data),
            )
        trace.append(LossRecord(epoch, *(float(v) for v in sums / len(order))))
        if on_epoch is not None:
            on_epoch(trace[-1])
    if adversarial:
        disc.zero_grad()
    gen.zero_grad()
    return trace


def pretrain_reconstruction(gen: ModuleGraph, images, cfg: TrainConfig, epochs: int | None = None, on_epoch=None) -> LossTrace:
    """Train ``gen`` as an autoencoder on clean images with an MSE loss.

    Runs ``cfg.pretrain_epochs`` epochs unless ``epochs`` is given. The
    trace stores the epoch-mean MSE (in [-1, 1] units) as ``g_loss``.
    """
    images = list(images)
    if not images:
        raise ValueError("pre-training needs at least one image")
    n_epochs = cfg.pretrain_epochs if epochs is None else epochs
    opt = Adam(gen.parameters(), cfg.lr, cfg.beta1, cfg.beta2, weight_decay=cfg.weight_decay)
    rng = _crop_stream(cfg, 2)
    trace = LossTrace()
    for epoch in range(1, n_epochs + 1):
        total = 0.0
        order = _epoch_samples(len(images), cfg, epoch, rng)
        for step, i in enumerate(order):
            img = images[i]
            crop, _ = random_crop((img, img), cfg.crop_size, rng)
            y = to_net(crop, gen.dtype)
            loss = mse_loss(gen(y), y)
            opt.zero_grad()
            T.backward(loss)
            opt.step()
            total += _check(float(loss.data), epoch, step, "reconstruction")
        trace.append(LossRecord(epoch, total / len(order), 0.0, 0.0, 0.0))
        if on_epoch is not None:
            on_epoch(trace[-1])
    gen.zero_grad()
    return trace


def restore(gen: ModuleGraph, img: np.ndarray) -> np.ndarray:
    """Run the generator on a whole (C,H,W) image; returns [0,1] output."""
    with T.no_grad():
        return from_net(gen(to_net(img, gen.dtype)))


def evaluate(gen: ModuleGraph, pairs) -> dict[str, float]:
    """Mean PSNR/SSIM of restored degraded inputs against clean targets."""
    ps, ss = [], []
    for x, y in pairs:
        out = restore(gen, x)
        ps.append(psnr(out, y))
        ss.append(ssim(out, y))
    return {"psnr": float(np.mean(ps)), "ssim": float(np.mean(ss)), "count": len(ps)}

"""Training objectives: L1, MSE, least-squares GAN and JS (log-loss) GAN."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor

__all__ = ["LOG_EPS", "l1_loss", "mse_loss", "lsgan_g_loss", "lsgan_d_loss", "jsgan_losses", "jsgan_d_loss", "jsgan_g_adv"]

LOG_EPS = 1e-12


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def l1_loss(yhat, y) -> Tensor:
    """Mean absolute deviation over all elements."""
    yhat, y = _t(yhat), _t(y)
    return T.mean(T.tabs(T.sub(yhat, y)))


def mse_loss(yhat, y) -> Tensor:
    yhat, y = _t(yhat), _t(y)
    return T.mean(T.square(T.sub(yhat, y)))


def lsgan_g_loss(d_fake, l1_term=0.0, lam: float = 100.0) -> Tensor:
    """E[(D(x, G(x)) - 1)^2] + lam * L1."""
    adv = T.mean(T.square(T.sub(_t(d_fake), 1.0)))
    if lam == 0:
        return adv
    return T.add(adv, T.mul(_t(l1_term), lam))


def lsgan_d_loss(d_real, d_fake) -> Tensor:
    """1/2 E[(D(x, y) - 1)^2] + 1/2 E[D(x, G(x))^2]."""
    real = T.mean(T.square(T.sub(_t(d_real), 1.0)))
    fake = T.mean(T.square(_t(d_fake)))
    return T.mul(T.add(real, fake), 0.5)


def jsgan_d_loss(p_real, p_fake) -> Tensor:
    """-E[log D(x, y)] - E[log(1 - D(x, G(x)))] on sigmoid probabilities."""
    p_real, p_fake = _t(p_real), _t(p_fake)
    real = T.mean(T.log(p_real, floor=LOG_EPS))
    fake = T.mean(T.log(T.sub(1.0, p_fake), floor=LOG_EPS))
    return T.mul(T.add(real, fake), -1.0)


def jsgan_g_adv(p_fake) -> Tensor:
    """Non-saturating generator term -E[log D(x, G(x))]."""
    return T.mul(T.mean(T.log(_t(p_fake), floor=LOG_EPS)), -1.0)


def jsgan_losses(p_real, p_fake, l1_term=0.0, lam: float = 0.0) -> tuple[Tensor, Tensor]:
    """(generator loss, discriminator loss) for sigmoid scores in (0, 1)."""
    g = jsgan_g_adv(p_fake)
    if lam:
        g = T.add(g, T.mul(_t(l1_term), lam))
    return g, jsgan_d_loss(p_real, p_fake)

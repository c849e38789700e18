"""Information-bottleneck diagnostics and desk-scale experiments for restoration generators.

Subpackages by layer: ``tensor`` (reverse-mode autodiff on numpy), ``nn``
(UNet/EnDecoder/InfoAccum/PatchGAN), ``losses`` and ``optim``, ``degrade``
(synthetic noise/rain/haze data), ``metrics`` and ``info`` (PSNR/SSIM and
exact discrete information theory), ``fitting``, ``train``, ``experiments``
and the ``cli``.
"""

__version__ = "0.1.0"

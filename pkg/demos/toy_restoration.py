"""Train a small UNet to remove synthetic rain and look at the result.

Builds the seeded rain task, fits a UNet-3 with the L1 objective for a
couple of minutes of CPU, and writes input / restored / target triples as
PPM files next to a loss curve.

    python demos/toy_restoration.py [out_dir]
"""

import sys
from pathlib import Path

from restoreib.degrade import DegradationSpec, make_dataset
from restoreib.imageio import save_image
from restoreib.metrics import psnr, ssim
from restoreib.nn import GeneratorConfig, build_generator
from restoreib.plot import Series, save_svg
from restoreib.train import TrainConfig, evaluate, restore, train_gan

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(parents=True, exist_ok=True)

spec = DegradationSpec(kind="rain", streak_count=20, angle_jitter=10.0)
ds = make_dataset(spec, count=60, size=32, seed=0)
print(f"{len(ds.train)} train / {len(ds.test)} test pairs")

before = [(psnr(x, y), ssim(x, y)) for x, y in ds.test]
print("degraded input: PSNR %.2f dB, SSIM %.4f" % tuple(sum(v) / len(v) for v in zip(*before)))

net = build_generator(GeneratorConfig(depth=3, base_channels=8), seed=0)
cfg = TrainConfig(loss_kind="l1_only", epochs=20, samples_per_epoch=48, crop_size=32, lr=1e-3)
trace = train_gan(net, None, ds.train, cfg, on_epoch=lambda r: print(f"  epoch {r.epoch:2d}  L1 {r.l1:.4f}"))

m = evaluate(net, ds.test)
print(f"restored:       PSNR {m['psnr']:.2f} dB, SSIM {m['ssim']:.4f}")

for i, (x, y) in enumerate(ds.test[:3]):
    save_image(out / f"{i}_input.ppm", x)
    save_image(out / f"{i}_restored.ppm", restore(net, x))
    save_image(out / f"{i}_target.ppm", y)
epochs = [float(r.epoch) for r in trace]
save_svg(out / "l1.svg", [Series("L1", epochs, list(trace.column("l1")))], "Training L1", "epoch", "L1")
print(f"images and l1.svg written to {out}/")

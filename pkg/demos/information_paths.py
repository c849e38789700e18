"""Information paths of a restoration network on small discrete joints.

Walks through the quantities the package measures: interaction information
of an XOR triple, the split of I(Y; Yt) into input-shared and external
parts, the bounds on a random restoration joint, and the data-processing
chain for an actual (untrained) UNet on quantized activations.

    python demos/information_paths.py
"""

import numpy as np

from restoreib.degrade import DegradationSpec, make_dataset
from restoreib.experiments import info_samples
from restoreib.info import (
    boundary_check,
    dpi_check,
    interaction_info,
    loss_decomposition_check,
    markov_chain_joint,
    mutual_info,
    quantize_activations,
    random_channel,
    random_restoration_joint,
    xor_joint,
)
from restoreib.nn import GeneratorConfig, build_generator

rng = np.random.default_rng(0)

# synergy: neither bit alone says anything about the xor, both together say everything
print(f"XOR interaction information: {interaction_info(xor_joint(), 'A', 'B', 'C'):+.3f} bits")

joint = random_restoration_joint(rng)
parts = loss_decomposition_check(joint)
print(f"I(Y;Yt) = {parts['I(Y;Yt)']:.4f} = shared {parts['I(Y;X;Yt)']:.4f} + external {parts['I(Y;Yt|X)']:.4f}")

rep = boundary_check(joint)
for name, slack in rep.slack.items():
    print(f"  {name:<24s} value {rep.values[name]:+.4f}  slack {slack:.4f}")

chain = markov_chain_joint(rng.dirichlet(np.ones(3)), [random_channel(rng, 3, 3) for _ in range(3)])
r = dpi_check(chain)
print(f"channel chain: I(Y;X) {r['I(Y;X)']:.4f} >= I(Y;Xt) {r['I(Y;Xt)']:.4f} >= I(Y;Yt) {r['I(Y;Yt)']:.4f}")

# per-patch gray levels of clean, noisy, bottleneck and output, 4 levels each
ds = make_dataset(DegradationSpec(kind="noise", sigma=0.1), count=20, size=32, seed=0)
net = build_generator(GeneratorConfig(depth=3, base_channels=8), seed=0)
emp = quantize_activations(info_samples(net, ds.test, grid=4), bins=4)
print("untrained UNet-3 on noisy patches:",
      ", ".join(f"I(Y;{v}) {mutual_info(emp, 'Y', v):.3f}" for v in ("X", "Xt", "Yt")))

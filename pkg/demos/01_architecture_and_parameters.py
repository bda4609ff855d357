"""
Architecture and parameter counts
=================================

Build the network at several bottleneck depths, compare the closed-form
parameter count with a materialized model, and look at where the weights
live.
"""
import numpy as np

from eeg_inception import ModelConfig, build_model, count_params

# the closed-form count needs no weights, so a full depth sweep is instant
for depth in (6, 12, 16, 24, 32, 64):
    print(f"depth {depth:3d}: {count_params(ModelConfig(depth=depth)):>10,d} parameters")

# materialize the depth-12 binary model and split its count by block
model = build_model(ModelConfig(depth=12, seed=0))
for block, n in model.block_param_counts().items():
    print(f"{block:>14s} {n:>8,d}")
print(f"{'total':>14s} {model.n_params():>8,d}")

# every module keeps the time axis and emits (n_kernels + 1) * depth channels
x = np.random.default_rng(0).standard_normal((2, 3, 750)).astype(np.float32)
logits, acts = model.forward(x, mode="eval", return_activations=True)
print("activation shapes:", sorted({a.shape for a in acts}))
print("logits:", logits.shape)

# the four-class preset
four = ModelConfig.four_class()
print(f"four-class preset (depth {four.depth}, {four.in_channels} channels): {count_params(four):,d} parameters")

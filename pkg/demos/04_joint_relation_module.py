"""
Forward pass of the joint relation module
=========================================

A color vector and a texture feature map are fused into one joint
embedding. The texture map modulates the color channels, and the color
vector acts as a per-channel kernel on the texture map.
"""

import numpy as np

from cmkr.jrm import JrmParams, channel_weights, invariant_report, jrm_forward

rng = np.random.default_rng(1)
B, C, H, W = 2, 4, 3, 2
f_c = rng.standard_normal((B, C))
f_t = rng.standard_normal((B, C, H, W))
params = JrmParams.random(C, rng)

print("channel weights (inside (0, 1)):\n", np.round(channel_weights(f_t, params.proj_t), 3))
out = jrm_forward(f_c, f_t, params)
print("joint embedding shape:", out.shape)

# Structural checks: residual passthroughs, shape contract, determinism.
report = invariant_report(seed=3, dims=(B, C, H, W))
for name, ok in report["checks"].items():
    print(f"  {'ok ' if ok else 'BAD'} {name}")

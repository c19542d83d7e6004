"""
Color words, text-IoU and soft matching targets
===============================================

Each description is reduced to the set of color terms it mentions. The
pairwise IoU of those sets, normalized per row, gives soft targets for a
KL matching loss.
"""

import numpy as np

from cmkr.textiou import extract_colors, iou_matrix, kl_loss, matching_prob, regularization_targets

texts = [
    "a man with red top and black pants",
    "a woman with black pants and a red top",
    "a man in a red coat",
    "a man with dark blue short sleeves and light blue jeans",
    "a person walking",
]
sets = [extract_colors(t) for t in texts]
for t, s in zip(texts, sets):
    print(f"{sorted(s)!s:32s} <- {t}")

np.set_printoptions(precision=3, suppress=True)
print("\ntext-IoU\n", iou_matrix(sets))
targets = regularization_targets(sets)
print("\ntargets (rows sum to one)\n", targets)

# A matching distribution from random color embeddings and its loss.
rng = np.random.default_rng(0)
visible, infrared = rng.standard_normal((5, 16)), rng.standard_normal((5, 16))
p = matching_prob(visible, infrared, temperature=0.1)
print(f"\nKL(p || targets) = {kl_loss(p, targets):.4f}")
print(f"KL(targets || targets) = {kl_loss(targets, targets):.2e}")

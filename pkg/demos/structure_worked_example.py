"""
Regularizing a prototype matrix by hand
=======================================

Walks the inter/intra-class interaction chain on the 2x2 matrix
P_h = [[1, 2], [0, 3]] (rows are channels, columns are classes), then shows
how the diagonal normalization behaves when a prototype entry is small.
"""

import numpy as np

from spr.structure import (inter_class_interaction, intra_class_interaction, normalize_inter,
                           normalize_intra, structural_regularization, weighted_prototypes)

np.set_printoptions(precision=4, suppress=True)

p_h = np.array([[1.0, 2.0], [0.0, 3.0]])

# one C x C slice per channel, one D x D slice per class
r_e = inter_class_interaction(p_h)
r_a = intra_class_interaction(p_h)
print("R_e slices:\n", r_e)
print("R_a slices:\n", r_a)

# each row divided by its own diagonal entry
r_e_n, r_a_n = normalize_inter(r_e, 1e-12), normalize_intra(r_a, 1e-12)
print("normalized R_e:\n", r_e_n)
print("normalized R_a:\n", r_a_n)

p_e, p_a = weighted_prototypes(r_e_n, r_a_n, p_h)
print("inter-class weighted prototypes:\n", p_e)
print("intra-class weighted prototypes:\n", p_a)

reg = structural_regularization(p_h, lambda_e=0.1, lambda_a=0.1, epsilon=1e-12)
print("P_r:\n", reg.p_r)
print("diagnostics:", {k: reg.diagnostics[k] for k in ("frobenius_pe", "frobenius_pa")})

# With a tiny epsilon, entry (d, c) of the inter-class term is ||row d||^2 / P[d, c],
# so a small positive entry gets a very large correction. A larger epsilon damps it.
p_small = np.array([[1.0, 0.01], [0.5, 1.0]])
for eps in (1e-8, 0.1, 1.0):
    p_r = structural_regularization(p_small, epsilon=eps).p_r
    print(f"eps={eps:g}: P_r =\n{p_r}")

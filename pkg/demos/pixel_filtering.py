"""
Entropy filtering and attention weights
=======================================

Pixels are softly assigned to prototypes by negative squared distance. The
entropy of that assignment ranks pixels: the lowest-entropy fraction alpha
receives pseudo labels, and every pixel gets an attention weight equal to its
entropy relative to the most uncertain pixel.
"""

import numpy as np

from spr.numerics import IGNORE
from spr.pixelalign import attention_weights, pixel_stats

rng = np.random.default_rng(0)
protos = np.array([[3.0, 0.0, -3.0], [0.0, 3.0, 0.0]])  # D=2 channels, C=3 classes

# pixels scattered around the three prototypes, plus a few between classes
centres = protos.T[rng.integers(0, 3, size=40)]
pixels = centres + rng.normal(scale=0.7, size=centres.shape)
pixels[:5] = rng.uniform(-1.5, 1.5, size=(5, 2))

stats = pixel_stats(pixels, protos, alpha=0.8)
print("pixels:", len(pixels), "kept:", stats.masked_count)
print("entropy range: %.3f .. %.3f (ln 3 = %.3f)" % (stats.h.min(), stats.h.max(), np.log(3)))

order = np.argsort(stats.h)
print("\nmost confident pixels")
for i in order[:3]:
    print(f"  x={pixels[i].round(2)}  H={stats.h[i]:.3f}  W={stats.w[i]:.3f}  label={stats.labels[i]}")
print("most uncertain pixels (dropped from supervision)")
for i in order[-3:]:
    tag = "IGNORE" if stats.labels[i] == IGNORE else stats.labels[i]
    print(f"  x={pixels[i].round(2)}  H={stats.h[i]:.3f}  W={stats.w[i]:.3f}  label={tag}")

# confident pixels get small weights; rescaling the entropy map leaves weights unchanged
print("\nmax |W(3H) - W(H)| =", np.abs(attention_weights(3 * stats.h) - stats.w).max())

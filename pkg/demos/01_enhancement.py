#!/usr/bin/env python3
# Walk one fundus image through the enhancement chain and save a contact
# sheet of every stage. Pass a real fundus PNG/JPG as the first argument,
# or run bare to use a generated synthetic image.
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from fundus_he.preprocess import PreprocessConfig, adaptive_gamma, clahe, fuzzy_unsharp
from fundus_he.raster import green_channel, read_png
from fundus_he.synthetic import generate_fundus

out_dir = Path(__file__).parent / "out"
out_dir.mkdir(exist_ok=True)

if len(sys.argv) > 1:
    rgb = read_png(sys.argv[1])
    title = Path(sys.argv[1]).stem
else:
    rgb = generate_fundus(np.random.default_rng(3), "demo", size=400).rgb
    title = "synthetic"

cfg = PreprocessConfig()
green = green_channel(rgb)
contrast = clahe(green, cfg)
brightness = adaptive_gamma(contrast, cfg)
sharpened = fuzzy_unsharp(brightness, cfg)

stages = [
    ("input", rgb),
    ("green channel", green),
    ("CLAHE", contrast),
    ("adaptive gamma", brightness),
    ("fuzzy unsharp", sharpened),
]
fig, axes = plt.subplots(1, len(stages), figsize=(4 * len(stages), 4.4))
for ax, (name, img) in zip(axes, stages):
    ax.imshow(img, cmap=None if img.ndim == 3 else "gray", vmin=0, vmax=255)
    ax.set_title(f"{name}\nstd={np.std(img):.1f}")
    ax.axis("off")
fig.suptitle(f"enhancement chain: {title}")
fig.tight_layout()
target = out_dir / "01_enhancement.png"
fig.savefig(target, dpi=110)
print(f"wrote {target}")
print(f"green std {green.std():.2f} -> enhanced std {sharpened.std():.2f}")

"""Topology-preserving augmentation, step by step.

Renders one synthetic signature, walks the geometric pipeline
(binarize -> skeletonize -> keypoints -> perturb -> thin-plate-spline warp),
and writes each intermediate stage as a PNG under demos/output/.
"""

from pathlib import Path

import numpy as np

from sigmark import corpus, glyph
from sigmark.glyph import AugmentParams

OUT = Path(__file__).parent / "output" / "augmentation"
OUT.mkdir(parents=True, exist_ok=True)

rng = np.random.default_rng(7)
spec = corpus.generate_identity(0, rng)
image = corpus.render_sample(spec, 1.0, rng)
corpus.save_image(image, OUT / "0_source.png")
print(f"source glyph: {image.shape}, "
      f"{(image < 0.5).mean():.1%} foreground ink")

# 1. binarize (Otsu) with a light morphological opening
mask = glyph.preprocess(image)
corpus.save_image(1.0 - mask.astype(float), OUT / "1_binary.png")
print(f"binary mask: {mask.sum()} ink pixels")

# 2. skeletonize (two-subiteration thinning) until the fixpoint
skeleton = glyph.skeletonize(mask)
skel_img = np.zeros(skeleton.shape, dtype=float)
for x, y in skeleton.points:
    skel_img[y, x] = 1.0
corpus.save_image(1.0 - skel_img, OUT / "2_skeleton.png")
print(f"skeleton: {len(skeleton)} pixels in "
      f"{len(skeleton.branches)} branches "
      f"(fixpoint: {glyph.thinning_fixpoint(skeleton)})")

# 3. polyline simplification keeps only geometrically salient keypoints
keypoints = glyph.simplify_keypoints(skeleton, epsilon=2.0)
print(f"keypoints after simplification: {len(keypoints)} "
      f"(from {len(skeleton)} skeleton pixels)")

# 4. sample control points and perturb them with a truncated Gaussian,
#    then warp with a thin-plate spline fitted to the point pairs
params = AugmentParams(sigma_scale=2.0)
for i in range(3):
    variant = glyph.augment(image, params, np.random.default_rng(100 + i))
    corpus.save_image(variant, OUT / f"3_variant_{i}.png")
print(f"wrote 3 warped variants to {OUT}")

# the warp moves ink but keeps it connected: compare component counts
from scipy import ndimage

src_mask = image < 0.5
_, n_src = ndimage.label(src_mask, structure=np.ones((3, 3)))
variant = glyph.augment(image, params, np.random.default_rng(0))
_, n_var = ndimage.label(variant < 0.5, structure=np.ones((3, 3)))
print(f"connected components: source {n_src}, variant {n_var}")

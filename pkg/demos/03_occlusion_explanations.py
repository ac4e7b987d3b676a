# Where does a trained model look? Slide a gray box over the image,
# re-score, and accumulate the absolute score changes into a heatmap; then
# visualize the last conv layer's filter responses.
#
# Uses the checkpoint from demo 02 if present, otherwise trains one first.
#
# Run: python3 demos/03_occlusion_explanations.py

from pathlib import Path

import numpy as np

from crowdface import load
from crowdface.dataset import ScoredImages, generate_synthetic, make_split
from crowdface.explain import (
    OcclusionConfig,
    average_heatmap,
    filter_responses,
    render_overlay,
    save_filter_montage,
    save_heatmap,
)

CKPT = Path("demo_out/patch_model.npz")
if not CKPT.exists():
    print("no checkpoint yet; running demo 02 first")
    import runpy

    runpy.run_path("demos/02_train_on_synthetic.py")
model = load(CKPT)
side = model.side

# Fresh validation-style images from the same generator family.
images, scores, manifest = generate_synthetic(220, side, seed=9, sigma=0.05)
scored = ScoredImages.from_pairs(images, scores, "patch")
split = make_split(scored.ids, seed=10)
val = scored.subset(split.val_ids)

# Single-image occlusion map on the default coarse-to-fine schedule.
cfg = OcclusionConfig.for_side(side)
print(f"box schedule {cfg.scales}, stride = box/2, gray fill {cfg.fill_value}")
heat, mean_face = average_heatmap(model, val.pixels[:20], cfg)
save_heatmap(heat, "demo_out/heatmap.csv")
render_overlay(heat, mean_face, "demo_out/overlay.png")
print("wrote demo_out/heatmap.csv and demo_out/overlay.png")

# Sanity check the map against the generator's ground truth: most of the
# mass should sit on (and right around) the planted patch.
p = manifest["patch"]
mask = np.zeros((side, side), bool)
pad = cfg.scales[-1]
mask[max(0, p["row0"] - pad):p["row0"] + p["size"] + pad,
     max(0, p["col0"] - pad):p["col0"] + p["size"] + pad] = True
frac = heat.values[mask].sum() / heat.values.sum()
print(f"heat mass on the planted patch (+{pad}px border): {frac:.0%}")

# Last conv layer filter responses for one image.
grid = filter_responses(model, val.pixels[0])
save_filter_montage(grid, "demo_out/filters.png")
print(f"layer {grid.layer} has {grid.filter_count} filters with "
      f"{grid.values.shape[1]}x{grid.values.shape[2]} maps -> demo_out/filters.png")

# Score an image sequence frame by frame and summarize the z-scored trait
# time series. Face detection is injected; here a fixture detector reads
# boxes and eye landmarks from a sidecar JSON, which is also the interface a
# production detector would fill in.
#
# Uses the checkpoint from demo 02 if present, otherwise trains one first.
#
# Run: python3 demos/05_video_scoring.py

import json
from pathlib import Path

import numpy as np

from crowdface import load
from crowdface.dataset import canonical_eyes, generate_synthetic
from crowdface.stream import (
    FixtureDetector,
    Frame,
    annotate_frames,
    measure_stream,
    summarize_stream,
)

CKPT = Path("demo_out/patch_model.npz")
if not CKPT.exists():
    print("no checkpoint yet; running demo 02 first")
    import runpy

    runpy.run_path("demos/02_train_on_synthetic.py")
model = load(CKPT)
side = model.side

# Build a 90-frame synthetic "video": fixed noise background, planted patch
# whose brightness ramps up, holds, and falls back down.
_, _, manifest = generate_synthetic(1, side, seed=5)
p = manifest["patch"]
rng = np.random.default_rng(6)
background = np.clip(rng.normal(0.5, 0.15, (side, side)), 0, 1)
levels = np.concatenate([np.linspace(0, 1, 30), np.ones(30), np.linspace(1, 0, 30)])
frames = []
for i, level in enumerate(levels):
    px = background.copy()
    px[p["row0"]:p["row0"] + p["size"], p["col0"]:p["col0"] + p["size"]] = level
    frames.append(Frame(index=i, timestamp=i / 30.0, pixels=np.round(px * 255) / 255))

# Sidecar detections: full-frame box, eyes already at canonical positions.
left, right = canonical_eyes(side)
sidecar = Path("demo_out/detections.json")
sidecar.parent.mkdir(exist_ok=True)
sidecar.write_text(json.dumps({
    str(i): {"box": [0, 0, side, side],
             "left_eye": list(left), "right_eye": list(right)}
    for i in range(len(frames))
}), encoding="utf-8")

scores, stats = measure_stream(frames, {"patch": model}, FixtureDetector(sidecar))
print(f"processed {stats.n_frames} frames at {stats.fps:.1f} fps")

zs = [s.zscores["patch"] for s in scores]
print(f"z-score range over the ramp: {min(zs):+.2f} .. {max(zs):+.2f}")

out = summarize_stream(scores, "demo_out/stream")
annotate_frames(frames[::15], scores, "demo_out/stream/frames")
print(f"time series -> {out['series']}")
print(f"histogram   -> {out['histogram']}")
print("plots and sample annotated frames under demo_out/stream/")

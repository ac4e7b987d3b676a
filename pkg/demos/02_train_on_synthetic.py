# Train a reduced moon-style regressor on the planted-patch synthetic task
# and evaluate it. The synthetic generator plants a square patch whose mean
# intensity is the target score, so the best attainable R^2 is known in
# closed form: Var(p) / (Var(p) + sigma^2).
#
# Run: python3 demos/02_train_on_synthetic.py   (about half a minute on CPU)

import time

import numpy as np

from crowdface import TrainingConfig, evaluate, save, train
from crowdface.dataset import ScoredImages, generate_synthetic, make_split
from crowdface.presets import get_preset

SIDE, N, SIGMA = 32, 800, 0.05

images, scores, manifest = generate_synthetic(N, SIDE, seed=0, sigma=SIGMA)
scored = ScoredImages.from_pairs(images, scores, "patch")
split = make_split(scored.ids, seed=1)
train_set = scored.subset(split.train_ids)
val_set = scored.subset(split.val_ids)
test_set = scored.subset(split.test_ids)
print(f"{N} synthetic {SIDE}x{SIDE} images -> "
      f"{len(train_set)}/{len(val_set)}/{len(test_set)} train/val/test")

p = np.array([row["patch_mean"] for row in manifest["images"]])
ceiling = p.var() / (p.var() + SIGMA**2)
print(f"analytic R^2 ceiling: {ceiling:.3f}")

preset = get_preset("moon-mini")
tcfg = TrainingConfig(
    learning_rate=preset.learning_rate,
    batch_size=32,
    max_epochs=15,
    early_stopping_patience=5,
    seed=2,
)
start = time.time()
model = train(preset.architecture, tcfg, train_set, val_set, log_fn=print)
print(f"trained in {time.time() - start:.0f}s (best epoch {model.best_epoch})")

for name, subset in (("val", val_set), ("test", test_set)):
    report = evaluate(model, subset, split=name)
    print(f"{name:>5} R^2 = {report.r_squared:.3f} (n={report.n_images})")

save(model, "demo_out/patch_model.npz")
print("checkpoint written to demo_out/patch_model.npz")

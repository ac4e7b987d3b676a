# Hyperparameter search: wide short-trial search (random or TPE), then a
# refined full-length pass with early stopping around the best point.
#
# Run: python3 demos/04_hyperparameter_search.py   (about a minute on CPU)

from crowdface.dataset import ScoredImages, generate_synthetic, make_split
from crowdface.model import evaluate
from crowdface.search import SearchSpace, refine, run_search

SIDE = 16

images, scores, _ = generate_synthetic(300, SIDE, seed=0, sigma=0.05)
scored = ScoredImages.from_pairs(images, scores, "patch")
split = make_split(scored.ids, seed=1)
data = (scored.subset(split.train_ids), scored.subset(split.val_ids))

# A deliberately small space so the demo stays fast; real searches use the
# defaults (learning rate 10^-5.5..10^-3.5, filters up to 512, etc.).
space = SearchSpace(
    side=SIDE,
    log10_learning_rate=(-3.5, -2.5),
    dropout=(0.0, 0.3),
    filter_choices=(4, 8, 16),
    n_segments=(1, 2),
    fc_layers=(1, 2),
    fc_width=(8, 32),
    augment_amount=(0.0, 0.3),
)

result = run_search(
    space, budget=6, strategy="random", data=data, short_epochs=3,
    seed=3, log_path="demo_out/trials.jsonl", log_fn=print,
)
best = result.best
print(f"\nbest short trial: #{best.trial_id} val R^2 {best.val_r2:.3f}")
print(f"  params: lr={best.params['learning_rate']:.2e} "
      f"dropout={best.params['dropout']:.2f} "
      f"segments={best.params['segments']} fc={best.params['fc_layers']}"
      f"x{best.params['fc_width']}")

# Refined pass: the exact best point plus two local jitters, trained to
# full length with early stopping; keep whichever validates best.
model = refine(best.params, data, full_epochs=12, patience=4,
               n_perturbations=2, seed=4, log_fn=print)
report = evaluate(model, data[1], split="val")
print(f"refined model: val R^2 {report.r_squared:.3f} "
      f"(short-trial best was {best.val_r2:.3f})")

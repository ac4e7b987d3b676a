# Turn raw crowd Likert judgements into per-image consensus scores, then
# summarize the rating pool and check how reliable it is.
#
# Run: python3 demos/01_consensus_from_ratings.py

import numpy as np

from crowdface.ratings import (
    RatingRecord,
    aggregate,
    split_half_reliability,
    trait_stats,
)

rng = np.random.default_rng(7)

# Simulate a small crowd: 120 images each judged by 24 raters on a 1..7
# scale. Every image has a latent score t in [0, 1]; raters see it through
# gaussian noise and answer on the integer grid.
n_images, n_raters, noise = 120, 24, 0.18
latent = rng.uniform(0, 1, n_images)
records = []
for j in range(n_raters):
    seen = latent + rng.normal(0, noise, n_images)
    raw = np.clip(np.rint(1 + 6 * seen), 1, 7).astype(int)
    records += [
        RatingRecord(f"img{i:03d}", f"rater{j:02d}", "trustworthiness", int(raw[i]))
        for i in range(n_images)
    ]
print(f"collected {len(records)} ratings "
      f"({n_images} images x {n_raters} raters)")

# Aggregate to one consensus score per image. The mean of the normalized
# ratings is the regression target y used everywhere downstream.
scores = aggregate(records)
print(f"first consensus row: {scores[0]}")

# Dataset-level statistics of the pool (the kind of table you would report
# for a training set).
stats = trait_stats(scores, "trustworthiness")
print(f"mean of ratings      {stats.mean_of_ratings:.3f}")
print(f"std of ratings       {stats.std_of_ratings:.3f}")
print(f"mean std per image   {stats.mean_std_of_ratings:.3f}")
print(f"mean ratings / image {stats.mean_num_of_ratings:.1f}")

# Split-half reliability: split the raters into two random halves and
# correlate the two per-image mean vectors. The squared correlation upper
# bounds what any model can learn from this crowd.
report = split_half_reliability(records, "trustworthiness", seed=0)
print(f"split-half R^2 = {report.r_squared:.3f} over {report.n_images} images "
      f"({report.n_raters_half_a}+{report.n_raters_half_b} raters)")

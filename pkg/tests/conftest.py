"""Shared fixtures, including the one expensive end-to-end training run.

The session-scoped bundle trains the reduced-filter moon-style preset on the
2000-image side-64 planted-patch task once; the acceptance suite and the
explain/stream tests all probe that same model.
"""

import time
from dataclasses import dataclass

import numpy as np
import pytest

from crowdface.dataset import DataSplit, ScoredImages, generate_synthetic, make_split
from crowdface.model import TrainedModel, TrainingConfig, evaluate, train
from crowdface.presets import get_preset

SYNTH_N = 2000
SYNTH_SIDE = 64
SYNTH_SIGMA = 0.05
DATA_SEED = 11
SPLIT_SEED = 12
TRAIN_SEED = 13


@dataclass
class SynthBundle:
    images: list
    manifest: dict
    split: DataSplit
    train_set: ScoredImages
    val_set: ScoredImages
    test_set: ScoredImages
    model: TrainedModel
    train_seconds: float
    val_r2: float


@pytest.fixture(scope="session")
def synth_bundle() -> SynthBundle:
    images, scores, manifest = generate_synthetic(
        SYNTH_N, SYNTH_SIDE, seed=DATA_SEED, sigma=SYNTH_SIGMA
    )
    scored = ScoredImages.from_pairs(images, scores, "patch")
    split = make_split(scored.ids, seed=SPLIT_SEED)
    train_set = scored.subset(split.train_ids)
    val_set = scored.subset(split.val_ids)
    test_set = scored.subset(split.test_ids)
    preset = get_preset("moon-mini")
    tcfg = TrainingConfig(
        learning_rate=preset.learning_rate,
        batch_size=32,
        max_epochs=30,
        early_stopping_patience=10,
        seed=TRAIN_SEED,
    )
    start = time.perf_counter()
    model = train(preset.architecture, tcfg, train_set, val_set)
    elapsed = time.perf_counter() - start
    val_r2 = evaluate(model, val_set, split="val").r_squared
    return SynthBundle(
        images=images,
        manifest=manifest,
        split=split,
        train_set=train_set,
        val_set=val_set,
        test_set=test_set,
        model=model,
        train_seconds=elapsed,
        val_r2=val_r2,
    )


def patch_mask(manifest: dict, dilate: int = 0) -> np.ndarray:
    """Boolean mask of the planted patch, optionally dilated on every side."""
    side = manifest["side"]
    p = manifest["patch"]
    mask = np.zeros((side, side), dtype=bool)
    r0 = max(0, p["row0"] - dilate)
    c0 = max(0, p["col0"] - dilate)
    r1 = min(side, p["row0"] + p["size"] + dilate)
    c1 = min(side, p["col0"] + p["size"] + dilate)
    mask[r0:r1, c0:c1] = True
    return mask

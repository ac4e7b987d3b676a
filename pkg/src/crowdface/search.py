"""Hyperparameter search maximizing validation R^2.

Two strategies: pure random sampling and a Tree-of-Parzen-Estimators (TPE)
sampler. Every trial draws its randomness from a generator derived only from
(master seed, trial index), so a crashed search resumed from its trial log
replays the identical remaining trial sequence. TPE's warm-up phase uses the
exact random-search sampler, so with budget <= warm-up the two strategies
produce the same trials under a shared seed.

After warm-up, TPE splits finished trials at the top-quartile of validation
R^2, fits independent per-dimension Parzen densities to the good and bad
halves, draws candidates from the good densities, and keeps the candidate
with the largest good/bad density ratio.

Architecture sampling follows the six-segment idiom of the moon family: the
first three segments get two convolutions each, later segments three. The
sampling-function knobs of the training pipeline are folded into the single
augmentation-amount dimension.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import AugmentationConfig, ScoredImages
from .errors import ConfigError
from .model import ArchitectureConfig, TrainingConfig, TrainedModel, evaluate, train

TPE_GAMMA = 0.25
TPE_CANDIDATES = 24
PARAM_KEYS = ("learning_rate", "dropout", "segments", "fc_layers", "fc_width",
              "augment_amount")


@dataclass(frozen=True)
class SearchSpace:
    """Ranges and discrete sets defining what a trial may sample."""

    side: int = 128
    log10_learning_rate: tuple[float, float] = (-5.5, -3.5)
    dropout: tuple[float, float] = (0.2, 0.7)
    filter_choices: tuple[int, ...] = (32, 64, 128, 256, 512)
    n_segments: tuple[int, int] = (3, 6)
    fc_layers: tuple[int, int] = (1, 4)
    fc_width: tuple[int, int] = (128, 2304)
    augment_amount: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        for name in ("log10_learning_rate", "dropout", "n_segments", "fc_layers",
                     "fc_width", "augment_amount"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigError(f"{name}: lower bound {lo} > upper bound {hi}")
        if not self.filter_choices:
            raise ConfigError("filter_choices must be nonempty")
        if 2 ** self.n_segments[1] > self.side:
            raise ConfigError(
                f"{self.n_segments[1]} segments cannot pool a side-{self.side} image; "
                f"max is {int(np.log2(self.side))}"
            )

    def to_dict(self) -> dict:
        return {
            "side": self.side,
            "log10_learning_rate": list(self.log10_learning_rate),
            "dropout": list(self.dropout),
            "filter_choices": list(self.filter_choices),
            "n_segments": list(self.n_segments),
            "fc_layers": list(self.fc_layers),
            "fc_width": list(self.fc_width),
            "augment_amount": list(self.augment_amount),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SearchSpace":
        return cls(
            side=int(d["side"]),
            log10_learning_rate=tuple(d["log10_learning_rate"]),
            dropout=tuple(d["dropout"]),
            filter_choices=tuple(int(f) for f in d["filter_choices"]),
            n_segments=tuple(d["n_segments"]),
            fc_layers=tuple(d["fc_layers"]),
            fc_width=tuple(d["fc_width"]),
            augment_amount=tuple(d["augment_amount"]),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "SearchSpace":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    @classmethod
    def for_side(cls, side: int) -> "SearchSpace":
        """Default space with the segment range clamped to what `side` can pool."""
        hi = min(6, int(np.log2(side)))
        if hi < 1:
            raise ConfigError(f"side {side} is too small to pool even once")
        return cls(side=side, n_segments=(min(3, hi), hi))


def _convs_for_slot(slot: int) -> int:
    return 2 if slot < 3 else 3


def sample(space: SearchSpace, rng: np.random.Generator) -> dict:
    """Draw one parameter point. Draw order is fixed: lr, dropout, number of
    segments, per-segment filters, fc_layers, fc_width, augment amount."""
    log_lr = float(rng.uniform(*space.log10_learning_rate))
    dropout = float(rng.uniform(*space.dropout))
    n_seg = int(rng.integers(space.n_segments[0], space.n_segments[1] + 1))
    segments = [
        [_convs_for_slot(s), int(rng.choice(space.filter_choices))]
        for s in range(n_seg)
    ]
    fc_layers = int(rng.integers(space.fc_layers[0], space.fc_layers[1] + 1))
    fc_width = int(rng.integers(space.fc_width[0], space.fc_width[1] + 1))
    amount = float(rng.uniform(*space.augment_amount))
    return {
        "learning_rate": 10.0 ** log_lr,
        "dropout": dropout,
        "segments": segments,
        "fc_layers": fc_layers,
        "fc_width": fc_width,
        "augment_amount": amount,
    }


def to_architecture(params: dict) -> ArchitectureConfig:
    return ArchitectureConfig(
        segments=tuple(tuple(s) for s in params["segments"]),
        fc_layers=params["fc_layers"],
        fc_width=params["fc_width"],
        dropout=params["dropout"],
    )


def to_training(params: dict, epochs: int, patience: int, seed: int,
                batch_size: int = 32) -> TrainingConfig:
    return TrainingConfig(
        learning_rate=params["learning_rate"],
        batch_size=batch_size,
        max_epochs=epochs,
        early_stopping_patience=patience,
        augmentation=AugmentationConfig(amount=params["augment_amount"]),
        seed=seed,
    )


@dataclass(frozen=True)
class Trial:
    trial_id: int
    seed: int
    params: dict
    val_r2: float | None
    epochs_run: int
    wall_time: float
    status: str = "ok"  # ok | failed
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "trial_id": self.trial_id,
            "seed": self.seed,
            "params": self.params,
            "val_r2": self.val_r2,
            "epochs_run": self.epochs_run,
            "wall_time": self.wall_time,
            "status": self.status,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Trial":
        return cls(
            trial_id=int(d["trial_id"]),
            seed=int(d["seed"]),
            params=d["params"],
            val_r2=None if d["val_r2"] is None else float(d["val_r2"]),
            epochs_run=int(d["epochs_run"]),
            wall_time=float(d["wall_time"]),
            status=d.get("status", "ok"),
            error=d.get("error"),
        )


@dataclass
class SearchResult:
    trials: list[Trial]
    best: Trial | None
    strategy: str
    budget: int
    best_model: TrainedModel | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "budget": self.budget,
            "n_trials": len(self.trials),
            "best_trial_id": None if self.best is None else self.best.trial_id,
            "best_val_r2": None if self.best is None else self.best.val_r2,
            "best_params": None if self.best is None else self.best.params,
        }


def append_trial(path, trial: Trial) -> None:
    """Append one JSON line per trial and flush, so a crash loses at most the
    trial in flight."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a", encoding="utf-8") as fh:
        fh.write(json.dumps(trial.to_dict(), sort_keys=True) + "\n")
        fh.flush()


def read_trial_log(path) -> list[Trial]:
    path = Path(path)
    if not path.exists():
        return []
    trials = []
    with path.open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                trials.append(Trial.from_dict(json.loads(line)))
    return trials


def best_trial(trials) -> Trial | None:
    """Highest val_r2 among successful trials; ties go to the earliest trial."""
    best = None
    for t in sorted(trials, key=lambda t: t.trial_id):
        if t.status != "ok" or t.val_r2 is None or not np.isfinite(t.val_r2):
            continue
        if best is None or t.val_r2 > best.val_r2:
            best = t
    return best


def tpe_warmup(budget: int) -> int:
    return max(10, budget // 5)


def _trial_rng(master_seed: int, trial_id: int) -> np.random.Generator:
    return np.random.default_rng([abs(int(master_seed)), 104729, trial_id])


# --- Parzen density machinery (each dimension modeled independently) -------


def _bandwidth(vals: np.ndarray, lo: float, hi: float) -> float:
    spread = float(np.std(vals)) * max(len(vals), 2) ** -0.2
    return max(spread, (hi - lo) / 20.0, 1e-12)


def _cont_sample(vals, lo, hi, rng) -> float:
    if hi <= lo:
        return lo
    bw = _bandwidth(np.asarray(vals), lo, hi)
    center = vals[int(rng.integers(len(vals)))]
    return float(np.clip(center + rng.normal(0.0, bw), lo, hi))


def _cont_logpdf(x, vals, lo, hi) -> float:
    if hi <= lo:
        return 0.0
    vals = np.asarray(vals, dtype=np.float64)
    bw = _bandwidth(vals, lo, hi)
    z = (x - vals) / bw
    kernel = np.exp(-0.5 * z * z) / (bw * np.sqrt(2 * np.pi))
    n = len(vals)
    # Mix with a uniform floor so unseen regions keep nonzero density.
    pdf = (1.0 / (n + 1)) * (1.0 / (hi - lo)) + (n / (n + 1)) * kernel.mean()
    return float(np.log(pdf))


def _disc_probs(vals, domain) -> np.ndarray:
    counts = np.array([sum(1 for v in vals if v == d) for d in domain], dtype=np.float64)
    counts += 1.0  # add-one smoothing
    return counts / counts.sum()


def _tpe_propose(space: SearchSpace, trials, rng: np.random.Generator,
                 n_candidates: int = TPE_CANDIDATES, gamma: float = TPE_GAMMA) -> dict:
    done = [t for t in trials
            if t.status == "ok" and t.val_r2 is not None and np.isfinite(t.val_r2)]
    if len(done) < 2:
        return sample(space, rng)
    ranked = sorted(done, key=lambda t: (-t.val_r2, t.trial_id))
    n_good = max(1, int(np.ceil(gamma * len(ranked))))
    good = [t.params for t in ranked[:n_good]]
    bad = [t.params for t in ranked[n_good:]]
    if not bad:
        return sample(space, rng)

    best_cand, best_score = None, -np.inf
    for _ in range(n_candidates):
        cand, score = _propose_one(space, good, bad, rng)
        if score > best_score:
            best_cand, best_score = cand, score
    return best_cand


def _propose_one(space: SearchSpace, good, bad, rng) -> tuple[dict, float]:
    logratio = 0.0

    def cont(key_fn, lo, hi):
        nonlocal logratio
        gv = [key_fn(p) for p in good]
        bv = [key_fn(p) for p in bad]
        x = _cont_sample(gv, lo, hi, rng)
        logratio += _cont_logpdf(x, gv, lo, hi) - _cont_logpdf(x, bv, lo, hi)
        return x

    def disc(key_fn, domain):
        nonlocal logratio
        gv = [key_fn(p) for p in good if key_fn(p) is not None]
        bv = [key_fn(p) for p in bad if key_fn(p) is not None]
        if not gv or not bv:
            return domain[int(rng.integers(len(domain)))]
        pg = _disc_probs(gv, domain)
        pb = _disc_probs(bv, domain)
        idx = int(rng.choice(len(domain), p=pg))
        logratio += float(np.log(pg[idx]) - np.log(pb[idx]))
        return domain[idx]

    log_lr = cont(lambda p: np.log10(p["learning_rate"]), *space.log10_learning_rate)
    dropout = cont(lambda p: p["dropout"], *space.dropout)
    seg_domain = list(range(space.n_segments[0], space.n_segments[1] + 1))
    n_seg = disc(lambda p: len(p["segments"]), seg_domain)
    segments = []
    for slot in range(n_seg):
        f = disc(
            lambda p, s=slot: p["segments"][s][1] if len(p["segments"]) > s else None,
            list(space.filter_choices),
        )
        segments.append([_convs_for_slot(slot), int(f)])
    fc_domain = list(range(space.fc_layers[0], space.fc_layers[1] + 1))
    fc_layers = disc(lambda p: p["fc_layers"], fc_domain)
    fc_width = int(round(cont(lambda p: p["fc_width"], *space.fc_width)))
    amount = cont(lambda p: p["augment_amount"], *space.augment_amount)
    params = {
        "learning_rate": 10.0 ** log_lr,
        "dropout": dropout,
        "segments": segments,
        "fc_layers": fc_layers,
        "fc_width": fc_width,
        "augment_amount": amount,
    }
    return params, logratio


# --- Search driver ----------------------------------------------------------


def run_search(
    space: SearchSpace,
    budget: int,
    strategy: str,
    data: tuple[ScoredImages, ScoredImages] | None = None,
    short_epochs: int = 15,
    *,
    seed: int = 0,
    log_path=None,
    patience: int = 0,
    batch_size: int = 32,
    objective=None,
    keep_best_model: bool = False,
    log_fn=None,
) -> SearchResult:
    """Run `budget` trials of short train + evaluate, logging each trial.

    The default objective trains a model per trial on `data = (train, val)`
    for `short_epochs` and scores validation R^2. A custom `objective(params,
    trial_seed) -> float` replaces it (used for stub benchmarks). A failing
    trial is recorded with status "failed" and never aborts the search. If
    `log_path` exists, finished trials are loaded and the search resumes
    after them.
    """
    if budget < 1:
        raise ValueError(f"budget must be >= 1, got {budget}")
    if strategy not in ("random", "tpe"):
        raise ValueError(f"strategy must be 'random' or 'tpe', got {strategy!r}")
    if objective is None and data is None:
        raise ValueError("need either data=(train, val) or an objective")
    warmup = tpe_warmup(budget)

    best_model: TrainedModel | None = None
    best_model_r2 = -np.inf

    def default_objective(params: dict, trial_seed: int):
        nonlocal best_model, best_model_r2
        train_set, val_set = data
        arch = to_architecture(params)
        tcfg = to_training(params, epochs=short_epochs, patience=patience,
                           seed=trial_seed, batch_size=batch_size)
        model = train(arch, tcfg, train_set, val_set)
        report = evaluate(model, val_set, split="val")
        if keep_best_model and report.r_squared > best_model_r2:
            best_model, best_model_r2 = model, report.r_squared
        return report.r_squared, len(model.history)

    fn = objective or default_objective
    trials = read_trial_log(log_path) if log_path else []
    for trial_id in range(len(trials), budget):
        rng = _trial_rng(seed, trial_id)
        trial_seed = int(rng.integers(0, 2**31 - 1))
        if strategy == "tpe" and trial_id >= warmup:
            params = _tpe_propose(space, trials, rng)
        else:
            params = sample(space, rng)
        start = time.perf_counter()
        try:
            out = fn(params, trial_seed)
            val_r2, epochs_run = out if isinstance(out, tuple) else (float(out), short_epochs)
            trial = Trial(trial_id, trial_seed, params, float(val_r2), int(epochs_run),
                          time.perf_counter() - start)
        except Exception as exc:  # a bad config must not sink the whole search
            trial = Trial(trial_id, trial_seed, params, None, 0,
                          time.perf_counter() - start, status="failed", error=str(exc))
        trials.append(trial)
        if log_path:
            append_trial(log_path, trial)
        if log_fn is not None:
            shown = "failed" if trial.val_r2 is None else f"{trial.val_r2:.4f}"
            log_fn(f"trial {trial_id}: val R2 {shown}")
    return SearchResult(
        trials=trials,
        best=best_trial(trials),
        strategy=strategy,
        budget=budget,
        best_model=best_model,
    )


def refine(
    best_params: dict,
    data: tuple[ScoredImages, ScoredImages],
    full_epochs: int,
    patience: int,
    *,
    n_perturbations: int = 2,
    seed: int = 0,
    batch_size: int = 32,
    log_fn=None,
) -> TrainedModel:
    """Full-length training with early stopping at and around the best params.

    Trains the exact best point plus up to `n_perturbations` locally jittered
    variants (learning rate, dropout, augmentation; architecture unchanged)
    and returns the model with the highest validation R^2. With zero
    perturbations this is one full train at best_params.
    """
    if not 0 <= n_perturbations <= 4:
        raise ValueError("n_perturbations must be in 0..4 (at most 5 variants total)")
    train_set, val_set = data
    variants = [dict(best_params)]
    rng = np.random.default_rng([abs(int(seed)), 15485863])
    for _ in range(n_perturbations):
        v = dict(best_params)
        v["learning_rate"] = float(best_params["learning_rate"] * 10 ** rng.normal(0, 0.1))
        v["dropout"] = float(np.clip(best_params["dropout"] + rng.normal(0, 0.05), 0.0, 0.95))
        v["augment_amount"] = float(
            np.clip(best_params["augment_amount"] + rng.normal(0, 0.05), 0.0, 1.0)
        )
        variants.append(v)
    best_model, best_r2 = None, -np.inf
    for i, params in enumerate(variants):
        arch = to_architecture(params)
        tcfg = to_training(params, epochs=full_epochs, patience=patience,
                           seed=int(rng.integers(0, 2**31 - 1)) if i else int(seed),
                           batch_size=batch_size)
        model = train(arch, tcfg, train_set, val_set)
        r2 = evaluate(model, val_set, split="val").r_squared
        if log_fn is not None:
            log_fn(f"refine variant {i}: val R2 {r2:.4f}")
        if r2 > best_r2:
            best_model, best_r2 = model, r2
    return best_model

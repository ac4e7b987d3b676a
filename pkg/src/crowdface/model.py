"""Scalar-output convolutional regressors over grayscale faces.

A network is a stack of segments (3x3 same-padded convolutions followed by
2x2 max pooling), a flatten, one or more hidden fully-connected layers with
dropout, and a single linear output unit. Training minimizes mean squared
error with Adam in float32 and records train/val R^2 per epoch; the returned
weights are those of the best-validation epoch. Inference always runs in
float64 with dropout off, which makes predictions bit-reproducible and makes
batched prediction agree exactly with one-at-a-time prediction.

R^2 throughout is the squared Pearson correlation between predictions and
consensus scores (for a simple linear regression of predictions on targets
this equals the regression R^2). The output unit is linear, never squashed;
scores are clamped to [0, 1] for display only.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .dataset import AugmentationConfig, FaceImage, ScoredImages, augment
from .errors import (
    CheckpointError,
    ConfigError,
    DegenerateTargetsError,
    ShapeMismatchError,
    UndefinedCorrelationError,
)
from .ratings import squared_pearson

CHECKPOINT_FORMAT = "crowdface-model"
CHECKPOINT_VERSION = 1

_ACTIVATIONS = ("relu", "parametric_relu")


@dataclass(frozen=True)
class ArchitectureConfig:
    """Declarative description of a conv-regression network."""

    segments: tuple[tuple[int, int], ...]
    fc_layers: int = 1
    fc_width: int = 256
    dropout: float = 0.0
    hidden_activation: str = "relu"

    def __post_init__(self):
        segs = tuple((int(c), int(f)) for c, f in self.segments)
        object.__setattr__(self, "segments", segs)
        if not segs:
            raise ConfigError("need at least one segment")
        for i, (convs, filters) in enumerate(segs):
            if convs < 1 or filters < 1:
                raise ConfigError(f"segment {i}: convs and filters must be >= 1")
        if self.fc_layers < 1 or self.fc_width < 1:
            raise ConfigError("fc_layers and fc_width must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.hidden_activation not in _ACTIVATIONS:
            raise ConfigError(
                f"hidden_activation must be one of {_ACTIVATIONS}, got {self.hidden_activation!r}"
            )

    def validate_for_side(self, side: int) -> None:
        """Each segment halves the map; refuse once a pool would act on < 2 px."""
        map_side = side
        for i in range(len(self.segments)):
            if map_side < 2:
                raise ConfigError(
                    f"segment {i} is infeasible: pooling stage would act on a "
                    f"{map_side}x{map_side} map (side {side} supports at most "
                    f"{int(math.log2(side))} segments)"
                )
            map_side //= 2
        return None

    def final_map_side(self, side: int) -> int:
        self.validate_for_side(side)
        return side // 2 ** len(self.segments)

    def to_dict(self) -> dict:
        return {
            "segments": [list(s) for s in self.segments],
            "fc_layers": self.fc_layers,
            "fc_width": self.fc_width,
            "dropout": self.dropout,
            "hidden_activation": self.hidden_activation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArchitectureConfig":
        return cls(
            segments=tuple(tuple(s) for s in d["segments"]),
            fc_layers=int(d["fc_layers"]),
            fc_width=int(d["fc_width"]),
            dropout=float(d["dropout"]),
            hidden_activation=d["hidden_activation"],
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "ArchitectureConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class TrainingConfig:
    learning_rate: float
    batch_size: int = 32
    max_epochs: int = 30
    early_stopping_patience: int = 10  # 0 disables early stopping
    min_delta: float = 1e-4
    loss: str = "mse"
    augmentation: AugmentationConfig = field(default_factory=AugmentationConfig)
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigError("batch_size and max_epochs must be >= 1")
        if self.early_stopping_patience < 0:
            raise ConfigError("early_stopping_patience must be >= 0")
        if self.loss != "mse":
            raise ConfigError(f"only mean-squared-error loss is supported, got {self.loss!r}")

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "max_epochs": self.max_epochs,
            "early_stopping_patience": self.early_stopping_patience,
            "min_delta": self.min_delta,
            "loss": self.loss,
            "augmentation": self.augmentation.to_dict(),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingConfig":
        d = dict(d)
        d["augmentation"] = AugmentationConfig.from_dict(d["augmentation"])
        return cls(**d)


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_r2: float
    val_r2: float


@dataclass(frozen=True)
class EvalReport:
    trait: str
    split: str
    r_squared: float
    n_images: int


def parameter_count(config: ArchitectureConfig, side: int) -> int:
    """Closed-form parameter count of build(config, side)."""
    config.validate_for_side(side)
    prelu = config.hidden_activation == "parametric_relu"
    count = 0
    c_in = 1
    for convs, filters in config.segments:
        for _ in range(convs):
            count += 3 * 3 * c_in * filters + filters
            count += 1 if prelu else 0
            c_in = filters
    width_in = c_in * config.final_map_side(side) ** 2
    for _ in range(config.fc_layers):
        count += width_in * config.fc_width + config.fc_width
        count += 1 if prelu else 0
        width_in = config.fc_width
    count += width_in + 1  # linear scalar output
    return count


class ExactLinear(nn.Linear):
    """Linear layer whose float64 forward computes each sample separately.

    BLAS picks different kernels for matrix-matrix and matrix-vector
    products, so a stock Linear gives batched predictions that differ from
    single predictions in the last ulp. Looping rows in the float64
    inference path makes batch prediction bit-identical to one-at-a-time
    prediction; the float32 training path keeps the fast batched kernel.
    """

    def forward(self, x):
        if x.dtype == torch.float64 and x.shape[0] > 1:
            return torch.cat(
                [F.linear(x[i : i + 1], self.weight, self.bias) for i in range(x.shape[0])]
            )
        return F.linear(x, self.weight, self.bias)


def _make_activation(kind: str) -> nn.Module:
    return nn.PReLU() if kind == "parametric_relu" else nn.ReLU()


def _build_module(config: ArchitectureConfig, side: int, seed: int | None = None) -> nn.Sequential:
    """Torch module for a config (float32, default fan-in-scaled init)."""
    config.validate_for_side(side)
    with torch.random.fork_rng(devices=[]):
        if seed is not None:
            torch.manual_seed(seed)
        layers: list[nn.Module] = []
        c_in = 1
        for convs, filters in config.segments:
            for _ in range(convs):
                layers.append(nn.Conv2d(c_in, filters, kernel_size=3, padding=1))
                layers.append(_make_activation(config.hidden_activation))
                c_in = filters
            layers.append(nn.MaxPool2d(2))
        layers.append(nn.Flatten())
        width_in = c_in * config.final_map_side(side) ** 2
        for _ in range(config.fc_layers):
            layers.append(ExactLinear(width_in, config.fc_width))
            layers.append(_make_activation(config.hidden_activation))
            if config.dropout > 0:
                layers.append(nn.Dropout(config.dropout))
            width_in = config.fc_width
        layers.append(ExactLinear(width_in, 1))
        return nn.Sequential(*layers)


def _forward_scores(module: nn.Module, pixels, side: int, batch_size: int = 256):
    """Score a single (H, W) image or an (N, H, W) batch; float64, dropout off."""
    arr = np.asarray(pixels, dtype=np.float64)
    single = arr.ndim == 2
    if single:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[1] != arr.shape[2] or arr.shape[1] != side:
        raise ShapeMismatchError(
            f"expected side {side} images, got array of shape {np.asarray(pixels).shape}"
        )
    module.eval()
    outs = []
    with torch.no_grad():
        for i in range(0, arr.shape[0], batch_size):
            xb = torch.from_numpy(arr[i : i + batch_size, None, :, :])
            outs.append(module(xb).squeeze(1).numpy())
    scores = np.concatenate(outs) if outs else np.empty(0)
    return float(scores[0]) if single else scores


class Model:
    """A built (possibly untrained) network. Holds a float64 torch module."""

    def __init__(self, architecture: ArchitectureConfig, side: int, module: nn.Module):
        self.architecture = architecture
        self.side = side
        self.module = module
        self.parameter_count = parameter_count(architecture, side)

    def predict(self, pixels):
        return _forward_scores(self.module, pixels, self.side)

    def conv_layers(self) -> list[int]:
        """Indices (into self.module) of the convolutional layers, forward order."""
        return [i for i, m in enumerate(self.module) if isinstance(m, nn.Conv2d)]


def build(config: ArchitectureConfig, side: int, seed: int = 0) -> Model:
    """Build the conv/pool/FC stack for a config; reports its parameter count."""
    module = _build_module(config, side, seed=seed).double()
    model = Model(config, side, module)
    actual = sum(p.numel() for p in module.parameters())
    assert actual == model.parameter_count, (actual, model.parameter_count)
    return model


@dataclass(frozen=True)
class FitResult:
    best_epoch: int
    best_metric: float
    best_payload: object
    epochs_run: int
    stopped_early: bool
    metrics: tuple[float, ...]


def fit_with_early_stopping(step_fn, max_epochs: int, patience: int,
                            min_delta: float = 1e-4) -> FitResult:
    """Run step_fn(epoch) -> (metric, payload) until max_epochs or patience runs out.

    Tracks the best payload over any strict metric improvement; the patience
    counter only resets when the metric improves by more than min_delta.
    patience = 0 disables early stopping. Non-finite metrics never improve.
    """
    best_metric = -np.inf
    best_payload = None
    best_epoch = 0
    plateau_ref = -np.inf
    wait = 0
    metrics = []
    stopped_early = False
    epochs_run = 0
    for epoch in range(1, max_epochs + 1):
        metric, payload = step_fn(epoch)
        metric = float(metric)
        metrics.append(metric)
        epochs_run = epoch
        if np.isfinite(metric) and metric > best_metric:
            best_metric = metric
            best_payload = payload
            best_epoch = epoch
        if np.isfinite(metric) and metric > plateau_ref + min_delta:
            plateau_ref = metric
            wait = 0
        else:
            wait += 1
            if patience > 0 and wait >= patience:
                stopped_early = True
                break
    return FitResult(best_epoch, best_metric, best_payload, epochs_run,
                     stopped_early, tuple(metrics))


def _safe_r2(preds: np.ndarray, targets: np.ndarray) -> float:
    try:
        return squared_pearson(preds, targets)
    except UndefinedCorrelationError:
        return float("nan")


def train(
    config: ArchitectureConfig,
    tcfg: TrainingConfig,
    train_set: ScoredImages,
    val_set: ScoredImages,
    trait: str | None = None,
    log_fn=None,
) -> "TrainedModel":
    """Fit a network to consensus scores, returning the best-validation-epoch weights.

    Per-epoch train/val R^2 land in the model's history; training stops at
    max_epochs or once validation R^2 stops improving for `patience` epochs.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValueError("train and val sets must be nonempty")
    if train_set.side != val_set.side:
        raise ShapeMismatchError(
            f"train side {train_set.side} != val side {val_set.side}"
        )
    for name, s in (("train", train_set), ("val", val_set)):
        if s.scores.min() < 0.0 or s.scores.max() > 1.0:
            raise ValueError(f"{name} scores must lie in [0, 1]")
    if float(np.std(train_set.scores)) == 0.0:
        raise DegenerateTargetsError(
            "training refused: training scores are constant, so R^2 is undefined"
        )
    if float(np.std(val_set.scores)) == 0.0:
        raise DegenerateTargetsError(
            "training refused: validation scores are constant, so R^2 is undefined"
        )
    side = train_set.side
    config.validate_for_side(side)
    module = _build_module(config, side, seed=tcfg.seed)

    x_train = torch.from_numpy(train_set.pixels[:, None, :, :].astype(np.float32))
    y_train = torch.from_numpy(train_set.scores.astype(np.float32)[:, None])
    y_train_np = train_set.scores
    y_val_np = val_set.scores
    optimizer = torch.optim.Adam(module.parameters(), lr=tcfg.learning_rate)
    loss_fn = nn.MSELoss()
    aug = tcfg.augmentation
    history: list[EpochStats] = []

    def epoch_step(epoch: int):
        rng = np.random.default_rng([max(tcfg.seed, 0), 7919, epoch])
        if aug.amount > 0:
            batch_px = np.empty_like(train_set.pixels)
            for i in range(len(train_set)):
                img = FaceImage(train_set.ids[i], train_set.pixels[i])
                batch_px[i] = augment(img, aug, rng).pixels
            x_epoch = torch.from_numpy(batch_px[:, None, :, :].astype(np.float32))
        else:
            x_epoch = x_train
        perm = rng.permutation(len(train_set))
        module.train()
        for start in range(0, len(train_set), tcfg.batch_size):
            idx = perm[start : start + tcfg.batch_size]
            optimizer.zero_grad()
            loss = loss_fn(module(x_epoch[idx]), y_train[idx])
            loss.backward()
            optimizer.step()
        module.eval()
        with torch.no_grad():
            tr_pred = _predict_f32(module, train_set.pixels)
            va_pred = _predict_f32(module, val_set.pixels)
        tr_r2 = _safe_r2(tr_pred, y_train_np)
        va_r2 = _safe_r2(va_pred, y_val_np)
        history.append(EpochStats(epoch, tr_r2, va_r2))
        if log_fn is not None:
            log_fn(f"epoch {epoch}: train R2 {tr_r2:.4f}  val R2 {va_r2:.4f}")
        snapshot = copy.deepcopy(module.state_dict())
        return va_r2, snapshot

    result = fit_with_early_stopping(
        epoch_step, tcfg.max_epochs, tcfg.early_stopping_patience, tcfg.min_delta
    )
    if result.best_payload is None:
        raise DegenerateTargetsError(
            "training never produced a finite validation R^2 "
            "(predictions stayed constant); adjust learning rate or architecture"
        )
    module.load_state_dict(result.best_payload)
    module = module.double()
    module.eval()
    return TrainedModel(
        architecture=config,
        side=side,
        trait=trait or train_set.trait or "",
        module=module,
        train_score_mean=float(np.mean(train_set.scores)),
        train_score_std=float(np.std(train_set.scores)),
        history=tuple(history),
        best_epoch=result.best_epoch,
    )


def _predict_f32(module: nn.Module, pixels: np.ndarray, batch_size: int = 512) -> np.ndarray:
    """Float32 forward pass used only for in-training history metrics."""
    outs = []
    for i in range(0, pixels.shape[0], batch_size):
        xb = torch.from_numpy(pixels[i : i + batch_size, None, :, :].astype(np.float32))
        outs.append(module(xb).squeeze(1).numpy())
    return np.concatenate(outs).astype(np.float64)


class TrainedModel:
    """Weights + config + training-score statistics + per-epoch history.

    Immutable after training; safe to share for concurrent prediction.
    """

    def __init__(
        self,
        architecture: ArchitectureConfig,
        side: int,
        trait: str,
        module: nn.Module,
        train_score_mean: float,
        train_score_std: float,
        history=(),
        best_epoch: int = 0,
    ):
        if not train_score_std > 0:
            raise DegenerateTargetsError(
                "train_score_std must be > 0 (z-scores are undefined for a "
                "degenerate training set)"
            )
        self.architecture = architecture
        self.side = side
        self.trait = trait
        self.module = module
        self.train_score_mean = float(train_score_mean)
        self.train_score_std = float(train_score_std)
        self.history = tuple(history)
        self.best_epoch = best_epoch
        self.parameter_count = parameter_count(architecture, side)

    def predict(self, pixels):
        return _forward_scores(self.module, pixels, self.side)

    def zscore(self, score):
        return (np.asarray(score, dtype=np.float64) - self.train_score_mean) / self.train_score_std

    def conv_layers(self) -> list[int]:
        return [i for i, m in enumerate(self.module) if isinstance(m, nn.Conv2d)]


def predict(model, pixels):
    """Score one (H, W) image -> float, or an (N, H, W) batch -> (N,) array."""
    return model.predict(pixels)


def zscore(model: TrainedModel, score):
    """Standardize a raw score by the model's training-set mean and std."""
    z = model.zscore(score)
    return float(z) if np.isscalar(score) or np.ndim(score) == 0 else z


def evaluate(model: TrainedModel, eval_set: ScoredImages, split: str = "eval") -> EvalReport:
    """Squared Pearson correlation between predictions and consensus scores."""
    if len(eval_set) == 0:
        raise ValueError("eval_set must be nonempty")
    preds = model.predict(eval_set.pixels)
    return EvalReport(
        trait=model.trait or eval_set.trait,
        split=split,
        r_squared=squared_pearson(preds, eval_set.scores),
        n_images=len(eval_set),
    )


def save(model: TrainedModel, path) -> None:
    """Write a versioned npz archive: config, weights, score stats, history."""
    meta = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "architecture": model.architecture.to_dict(),
        "side": model.side,
        "trait": model.trait,
        "train_score_mean": model.train_score_mean,
        "train_score_std": model.train_score_std,
        "best_epoch": model.best_epoch,
        "history": [[h.epoch, h.train_r2, h.val_r2] for h in model.history],
    }
    arrays = {
        f"param::{k}": v.detach().cpu().numpy()
        for k, v in model.module.state_dict().items()
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(meta)), **arrays)


def load(path) -> TrainedModel:
    """Read a checkpoint; corrupt or wrong-version files raise CheckpointError."""
    path = Path(path)
    try:
        with np.load(path, allow_pickle=False) as data:
            if "__meta__" not in data:
                raise CheckpointError(f"{path}: not a {CHECKPOINT_FORMAT} checkpoint")
            meta = json.loads(str(data["__meta__"][()]))
            if meta.get("format") != CHECKPOINT_FORMAT:
                raise CheckpointError(f"{path}: not a {CHECKPOINT_FORMAT} checkpoint")
            if meta.get("version") != CHECKPOINT_VERSION:
                raise CheckpointError(
                    f"{path}: checkpoint version {meta.get('version')} != "
                    f"supported version {CHECKPOINT_VERSION}"
                )
            config = ArchitectureConfig.from_dict(meta["architecture"])
            side = int(meta["side"])
            module = _build_module(config, side, seed=0).double()
            state = {}
            for k in module.state_dict():
                key = f"param::{k}"
                if key not in data:
                    raise CheckpointError(f"{path}: missing weight tensor {k!r}")
                state[k] = torch.from_numpy(np.array(data[key], dtype=np.float64))
            module.load_state_dict(state)
            module.eval()
            history = tuple(
                EpochStats(int(e), float(tr), float(va)) for e, tr, va in meta["history"]
            )
            return TrainedModel(
                architecture=config,
                side=side,
                trait=meta["trait"],
                module=module,
                train_score_mean=float(meta["train_score_mean"]),
                train_score_std=float(meta["train_score_std"]),
                history=history,
                best_epoch=int(meta.get("best_epoch", 0)),
            )
    except CheckpointError:
        raise
    except Exception as exc:
        raise CheckpointError(f"{path}: cannot read checkpoint ({exc})") from exc


def gradient_check(model: Model, pixels, targets, n_params: int = 60,
                   seed: int = 0) -> float:
    """Max relative error between autograd and central-difference loss gradients.

    Probes a random sample of parameter coordinates of the float64 module on
    the deterministic (dropout-off) MSE loss.
    """
    module = model.module
    module.eval()
    x = torch.from_numpy(np.asarray(pixels, dtype=np.float64)[:, None, :, :])
    y = torch.from_numpy(np.asarray(targets, dtype=np.float64)[:, None])
    loss_fn = nn.MSELoss()

    def loss_value() -> float:
        with torch.no_grad():
            return float(loss_fn(module(x), y))

    module.zero_grad()
    loss = loss_fn(module(x), y)
    loss.backward()
    params = [p for p in module.parameters() if p.requires_grad]
    sizes = np.array([p.numel() for p in params])
    total = int(sizes.sum())
    rng = np.random.default_rng(seed)
    chosen = rng.choice(total, size=min(n_params, total), replace=False)
    bounds = np.cumsum(sizes)
    worst = 0.0
    with torch.no_grad():
        for flat_idx in chosen:
            p_idx = int(np.searchsorted(bounds, flat_idx, side="right"))
            local = int(flat_idx - (bounds[p_idx - 1] if p_idx else 0))
            param = params[p_idx]
            flat = param.view(-1)
            orig = float(flat[local])
            h = 1e-5 * max(1.0, abs(orig))
            flat[local] = orig + h
            up = loss_value()
            flat[local] = orig - h
            down = loss_value()
            flat[local] = orig
            fd = (up - down) / (2 * h)
            analytic = float(params[p_idx].grad.view(-1)[local])
            err = abs(analytic - fd) / max(abs(analytic), abs(fd), 1e-8)
            worst = max(worst, err)
    module.zero_grad()
    return worst

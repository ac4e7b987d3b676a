"""Grayscale face images: alignment, splits, augmentation, synthetic data.

Images are square float arrays with intensities in [0, 1]. Alignment is a
two-point similarity transform that rotates the inter-eye segment horizontal,
rescales to a fixed inter-ocular distance, and crops to the configured side
length. Eye coordinates are (x, y) in pixel units, "left" meaning smaller x
(the viewer's left).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import AlignmentError, InsufficientDataError, NoDataError
from .ratings import ConsensusScore

DEFAULT_SIDE = 128

# Canonical eye positions as fractions of the side length.
EYE_Y_FRAC = 0.40
LEFT_EYE_X_FRAC = 0.34
RIGHT_EYE_X_FRAC = 0.66

TRAIN_FRAC = 0.8


@dataclass(frozen=True)
class FaceImage:
    """One grayscale face: H x W intensities in [0, 1], optional eye landmarks."""

    image_id: str
    pixels: np.ndarray
    landmarks: tuple[tuple[float, float], tuple[float, float]] | None = None

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        object.__setattr__(self, "pixels", px)
        if px.ndim != 2:
            raise ValueError(f"{self.image_id}: pixels must be 2-D, got shape {px.shape}")

    @property
    def side(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class DataSplit:
    """Deterministic, disjoint train/val/test id sets."""

    seed: int
    train_ids: tuple[str, ...]
    val_ids: tuple[str, ...]
    test_ids: tuple[str, ...]

    def __post_init__(self):
        tr, va, te = set(self.train_ids), set(self.val_ids), set(self.test_ids)
        if tr & va or tr & te or va & te:
            raise ValueError("split sets must be pairwise disjoint")

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "train_ids": list(self.train_ids),
            "val_ids": list(self.val_ids),
            "test_ids": list(self.test_ids),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DataSplit":
        return cls(
            seed=int(d["seed"]),
            train_ids=tuple(d["train_ids"]),
            val_ids=tuple(d["val_ids"]),
            test_ids=tuple(d["test_ids"]),
        )


@dataclass(frozen=True)
class AugmentationConfig:
    """Randomized flip/rotate/shift/jitter; ``amount`` scales every range.

    amount = 0 makes augment the identity. At amount = 1 the defaults are a
    0.5 flip probability, rotations within +/-10 degrees, shifts within
    +/-8% of the side, and additive intensity jitter within +/-0.05.
    """

    amount: float = 0.0
    horizontal_flip_prob: float = 0.5
    rotation_range: float = 10.0
    shift_range: float = 0.08
    intensity_jitter: float = 0.05

    def __post_init__(self):
        if not 0.0 <= self.amount <= 1.0:
            raise ValueError(f"amount must be in [0, 1], got {self.amount}")

    def to_dict(self) -> dict:
        return {
            "amount": self.amount,
            "horizontal_flip_prob": self.horizontal_flip_prob,
            "rotation_range": self.rotation_range,
            "shift_range": self.shift_range,
            "intensity_jitter": self.intensity_jitter,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentationConfig":
        return cls(**d)


def canonical_eyes(side: int) -> tuple[tuple[float, float], tuple[float, float]]:
    """Canonical (left, right) eye positions, (x, y) pixels, for a given side."""
    y = EYE_Y_FRAC * side
    return ((LEFT_EYE_X_FRAC * side, y), (RIGHT_EYE_X_FRAC * side, y))


def _similarity_warp(pixels: np.ndarray, a_inv: complex, b_inv: complex, side: int) -> np.ndarray:
    """Warp with output->input map z_in = a_inv * z_out + b_inv (z = x + iy)."""
    ar, ai = a_inv.real, a_inv.imag
    # scipy affine_transform works in (row, col) = (y, x) order.
    matrix = np.array([[ar, ai], [-ai, ar]])
    offset = np.array([b_inv.imag, b_inv.real])
    return ndimage.affine_transform(
        pixels, matrix, offset=offset, output_shape=(side, side),
        order=1, mode="constant", cval=0.0,
    )


def align_face(image: FaceImage, side: int = DEFAULT_SIDE) -> FaceImage:
    """Rotate/scale/crop so the eyes land on their canonical positions.

    Deterministic; the output carries canonical landmarks, so aligning an
    already-aligned image is the identity. Out-of-frame regions fill with 0,
    which keeps alignment commuting with uniform intensity scaling.
    """
    if image.landmarks is None:
        raise AlignmentError(f"{image.image_id}: no eye landmarks")
    (lx, ly), (rx, ry) = image.landmarks
    p_left = complex(lx, ly)
    p_right = complex(rx, ry)
    if abs(p_right - p_left) < 1e-9:
        raise AlignmentError(f"{image.image_id}: coincident eye landmarks")
    (clx, cly), (crx, cry) = canonical_eyes(side)
    c_left = complex(clx, cly)
    c_right = complex(crx, cry)
    # Forward map F(z) = a z + b sends input eyes onto canonical eyes.
    a = (c_right - c_left) / (p_right - p_left)
    b = c_left - a * p_left
    a_inv = 1.0 / a
    b_inv = -b / a
    if (
        image.side == side
        and image.pixels.shape == (side, side)
        and abs(a_inv - 1.0) < 1e-12
        and abs(b_inv) < 1e-12
    ):
        warped = image.pixels.copy()
    else:
        warped = _similarity_warp(image.pixels, a_inv, b_inv, side)
    return FaceImage(
        image_id=image.image_id,
        pixels=np.clip(warped, 0.0, 1.0),
        landmarks=canonical_eyes(side),
    )


def make_split(image_ids, seed: int) -> DataSplit:
    """Shuffle ids with the seed and cut 80/10/10 (odd remainder goes to val)."""
    ids = sorted(str(i) for i in image_ids)
    n = len(ids)
    if len(set(ids)) != n:
        raise ValueError("image_ids contains duplicates")
    if n < 10:
        raise InsufficientDataError(f"need >= 10 ids to form nonempty partitions, got {n}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_train = int(round(TRAIN_FRAC * n))
    rest = n - n_train
    n_val = rest - rest // 2  # odd remainder: validation gets the extra image
    shuffled = [ids[i] for i in perm]
    return DataSplit(
        seed=seed,
        train_ids=tuple(shuffled[:n_train]),
        val_ids=tuple(shuffled[n_train : n_train + n_val]),
        test_ids=tuple(shuffled[n_train + n_val :]),
    )


def augment(image: FaceImage, config: AugmentationConfig, rng: np.random.Generator) -> FaceImage:
    """Randomized horizontal flip, rotation+shift, and intensity jitter.

    All draws are taken in a fixed order so output is a pure function of
    (image, config, rng state). Intensities are clamped to [0, 1].
    """
    u_flip = rng.random()
    u_angle, u_dx, u_dy, u_jit = rng.uniform(-1.0, 1.0, 4)
    amt = config.amount
    px = image.pixels
    if u_flip < amt * config.horizontal_flip_prob:
        px = px[:, ::-1].copy()
    angle_deg = u_angle * amt * config.rotation_range
    side = px.shape[0]
    dx = u_dx * amt * config.shift_range * side
    dy = u_dy * amt * config.shift_range * side
    if angle_deg != 0.0 or dx != 0.0 or dy != 0.0:
        # Forward map: rotate about the image center, then translate by (dx, dy).
        theta = np.deg2rad(angle_deg)
        a = complex(np.cos(theta), np.sin(theta))
        center = complex((px.shape[1] - 1) / 2.0, (px.shape[0] - 1) / 2.0)
        b = center - a * center + complex(dx, dy)
        px = _similarity_warp(px, 1.0 / a, -b / a, side)
    jit = u_jit * amt * config.intensity_jitter
    if jit != 0.0:
        px = px + jit
    return FaceImage(image.image_id, np.clip(px, 0.0, 1.0), image.landmarks)


def generate_synthetic(
    n: int,
    side: int,
    seed: int,
    sigma: float = 0.05,
    patch_size: int | None = None,
    patch_origin: tuple[int, int] | None = None,
    trait: str = "patch",
) -> tuple[list[FaceImage], list[ConsensusScore], dict]:
    """Planted-feature oracle dataset: score = patch mean + clamped gaussian noise.

    Each image is clipped gaussian background with one constant square patch
    at a fixed location; the patch intensity p is uniform on [0, 1] and the
    consensus score is clip(p + N(0, sigma^2), 0, 1). Pixels are quantized to
    the 8-bit grid at generation time so a PNG round trip is lossless and the
    returned manifest lets every score be recomputed from the image bytes.
    With p ~ U(0,1) the best attainable R^2 is Var(p) / (Var(p) + sigma^2).
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    size = patch_size if patch_size is not None else side // 4
    r0, c0 = patch_origin if patch_origin is not None else (side // 8, side // 8)
    if r0 + size > side or c0 + size > side:
        raise ValueError("patch does not fit inside the image")
    rng = np.random.default_rng(seed)
    images, scores, rows = [], [], []
    eyes = canonical_eyes(side)
    for i in range(n):
        image_id = f"syn{i:05d}"
        px = np.clip(rng.normal(0.5, 0.15, (side, side)), 0.0, 1.0)
        p = rng.uniform(0.0, 1.0)
        px[r0 : r0 + size, c0 : c0 + size] = p
        px = np.round(px * 255.0) / 255.0  # 8-bit grid: PNG round trip is exact
        patch_mean = float(px[r0 : r0 + size, c0 : c0 + size].mean())
        noise = float(rng.normal(0.0, sigma)) if sigma > 0 else 0.0
        score = float(np.clip(patch_mean + noise, 0.0, 1.0))
        images.append(FaceImage(image_id, px, eyes))
        scores.append(ConsensusScore(image_id, trait, score, 0.0, 1))
        rows.append(
            {"image_id": image_id, "patch_mean": patch_mean, "noise": noise, "score": score}
        )
    manifest = {
        "kind": "crowdface-synthetic",
        "seed": seed,
        "n": n,
        "side": side,
        "sigma": sigma,
        "trait": trait,
        "patch": {"row0": r0, "col0": c0, "size": size},
        "images": rows,
    }
    return images, scores, manifest


@dataclass
class ScoredImages:
    """A batch of same-sized images paired with consensus scores for one trait."""

    ids: list[str]
    pixels: np.ndarray  # (N, H, W) float64 in [0, 1]
    scores: np.ndarray  # (N,) float64
    trait: str = ""

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.pixels.ndim != 3 or len(self.ids) != self.pixels.shape[0]:
            raise ValueError("pixels must be (N, H, W) with one id per image")
        if self.scores.shape != (self.pixels.shape[0],):
            raise ValueError("scores must be (N,)")

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def side(self) -> int:
        return self.pixels.shape[1]

    @classmethod
    def from_pairs(cls, images, consensus, trait: str) -> "ScoredImages":
        by_id = {s.image_id: s.mean_norm for s in consensus if s.trait == trait}
        ids, px, ys = [], [], []
        for img in images:
            if img.image_id in by_id:
                ids.append(img.image_id)
                px.append(img.pixels)
                ys.append(by_id[img.image_id])
        if not ids:
            raise NoDataError(f"no images with consensus scores for trait {trait!r}")
        return cls(ids=ids, pixels=np.stack(px), scores=np.array(ys), trait=trait)

    def subset(self, keep_ids) -> "ScoredImages":
        keep = set(keep_ids)
        idx = [i for i, id_ in enumerate(self.ids) if id_ in keep]
        if not idx:
            raise NoDataError("subset selects no images")
        return ScoredImages(
            ids=[self.ids[i] for i in idx],
            pixels=self.pixels[idx],
            scores=self.scores[idx],
            trait=self.trait,
        )


def save_image(image: FaceImage, directory) -> Path:
    """Write one image as an 8-bit grayscale PNG named <image_id>.png."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    arr = np.round(np.clip(image.pixels, 0.0, 1.0) * 255.0).astype(np.uint8)
    path = directory / f"{image.image_id}.png"
    Image.fromarray(arr, mode="L").save(path)
    return path


def save_images(images, directory) -> None:
    for img in images:
        save_image(img, directory)


def load_image(path, image_id: str | None = None,
               landmarks=None) -> FaceImage:
    path = Path(path)
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
    return FaceImage(image_id or path.stem, arr, landmarks)


def load_images(directory, landmarks: dict | None = None) -> list[FaceImage]:
    """Load every *.png in a directory, sorted by filename."""
    directory = Path(directory)
    paths = sorted(directory.glob("*.png"))
    if not paths:
        raise NoDataError(f"no .png images found in {directory}")
    out = []
    for p in paths:
        lm = (landmarks or {}).get(p.stem)
        out.append(load_image(p, landmarks=lm))
    return out


def read_landmarks(path) -> dict:
    """Read {image_id: ((lx, ly), (rx, ry))} from a JSON landmarks file."""
    with Path(path).open(encoding="utf-8") as fh:
        raw = json.load(fh)
    return {
        image_id: (tuple(v["left_eye"]), tuple(v["right_eye"]))
        for image_id, v in raw.items()
    }


def write_landmarks(landmarks: dict, path) -> None:
    payload = {
        image_id: {"left_eye": list(lm[0]), "right_eye": list(lm[1])}
        for image_id, lm in landmarks.items()
    }
    with Path(path).open("w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)


def save_manifest(manifest: dict, path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def load_manifest(path) -> dict:
    with Path(path).open(encoding="utf-8") as fh:
        return json.load(fh)

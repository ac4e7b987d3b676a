"""Per-frame scoring of image sequences with trained models.

Each frame goes detect -> align -> predict -> z-score; frames with no face
pass through flagged, and an undecodable frame is recorded as an error entry
without stopping the stream. Output order always equals input order, and the
whole pipeline is exactly the single-frame function mapped over the input.

Face detection is an injected dependency. The bundled FixtureDetector reads
boxes and eye landmarks from a sidecar JSON file, which is what the tests and
demos use; production detectors are out of scope. When a frame carries
several boxes the largest is scored (ties broken by top-left ordering).
"""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .dataset import FaceImage, align_face, load_image
from .errors import AlignmentError, ShapeMismatchError

HIST_RANGE = (-4.0, 4.0)
HIST_WIDTH = 0.5

SERIES_FIELDS = ("frame_index", "timestamp", "trait", "zscore")
HISTOGRAM_FIELDS = ("trait", "bin_left", "bin_right", "count")


@dataclass(frozen=True)
class Frame:
    index: int
    timestamp: float
    pixels: np.ndarray | None
    error: str | None = None


@dataclass(frozen=True)
class Detection:
    """One face: box (x0, y0, x1, y1) plus eye landmarks in frame pixels."""

    box: tuple[float, float, float, float]
    left_eye: tuple[float, float]
    right_eye: tuple[float, float]

    @property
    def area(self) -> float:
        x0, y0, x1, y1 = self.box
        return max(0.0, x1 - x0) * max(0.0, y1 - y0)


@dataclass(frozen=True)
class FrameScore:
    frame_index: int
    timestamp: float
    face_found: bool
    face_box: tuple[float, float, float, float] | None = None
    raw_scores: dict = field(default_factory=dict)
    zscores: dict = field(default_factory=dict)
    error: str | None = None


@dataclass(frozen=True)
class StreamStats:
    n_frames: int
    elapsed_s: float

    @property
    def fps(self) -> float:
        return self.n_frames / self.elapsed_s if self.elapsed_s > 0 else float("inf")


class FixtureDetector:
    """Detector that reads detections from a sidecar JSON file.

    Schema: {"<frame_index>": {"box": [x0, y0, x1, y1], "left_eye": [x, y],
    "right_eye": [x, y]}} with either one detection or a list per frame.
    """

    def __init__(self, path):
        with Path(path).open(encoding="utf-8") as fh:
            raw = json.load(fh)
        self._by_index: dict[int, list[Detection]] = {}
        for key, val in raw.items():
            dets = val if isinstance(val, list) else [val]
            self._by_index[int(key)] = [
                Detection(
                    box=tuple(d["box"]),
                    left_eye=tuple(d["left_eye"]),
                    right_eye=tuple(d["right_eye"]),
                )
                for d in dets
            ]

    def detect(self, frame: Frame) -> Detection | None:
        dets = self._by_index.get(frame.index)
        if not dets:
            return None
        return pick_face(dets)


def pick_face(detections) -> Detection | None:
    """Largest box wins; ties broken by top-left (y, x) ordering."""
    dets = list(detections)
    if not dets:
        return None
    return min(dets, key=lambda d: (-d.area, d.box[1], d.box[0]))


def _check_models(models: dict) -> int:
    if not models:
        raise ValueError("need at least one trait -> TrainedModel entry")
    sides = {m.side for m in models.values()}
    if len(sides) != 1:
        raise ShapeMismatchError(f"models disagree on image side: {sorted(sides)}")
    return sides.pop()


def process_frame(frame: Frame, models: dict, detector) -> FrameScore:
    """Score one frame: detect -> align -> predict each trait -> z-score."""
    side = _check_models(models)
    if frame.pixels is None:
        return FrameScore(frame.index, frame.timestamp, face_found=False,
                          error=frame.error or "undecodable frame")
    det = detector.detect(frame)
    if det is None:
        return FrameScore(frame.index, frame.timestamp, face_found=False)
    face = FaceImage(f"frame{frame.index:06d}", frame.pixels,
                     landmarks=(det.left_eye, det.right_eye))
    try:
        aligned = align_face(face, side=side)
    except AlignmentError as exc:
        return FrameScore(frame.index, frame.timestamp, face_found=False,
                          face_box=det.box, error=str(exc))
    raw = {trait: float(m.predict(aligned.pixels)) for trait, m in models.items()}
    z = {trait: float(models[trait].zscore(score)) for trait, score in raw.items()}
    return FrameScore(frame.index, frame.timestamp, face_found=True,
                      face_box=det.box, raw_scores=raw, zscores=z)


def process_stream(frames, models: dict, detector, workers: int = 1) -> list[FrameScore]:
    """Map the single-frame pipeline over an ordered frame source.

    Results come back in input order regardless of worker count; models are
    shared read-only across workers.
    """
    _check_models(models)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda f: process_frame(f, models, detector), frames))
    return [process_frame(f, models, detector) for f in frames]


def measure_stream(frames, models: dict, detector,
                   workers: int = 1) -> tuple[list[FrameScore], StreamStats]:
    """process_stream plus throughput accounting (fps = frames / wall time)."""
    start = time.perf_counter()
    scores = process_stream(frames, models, detector, workers=workers)
    return scores, StreamStats(n_frames=len(scores), elapsed_s=time.perf_counter() - start)


def frames_from_dir(directory, fps: float = 30.0) -> list[Frame]:
    """Load numbered PNG frames from a directory, ordered numerically.

    A file that fails to decode becomes an error Frame; the stream continues.
    """
    directory = Path(directory)
    paths = sorted(directory.glob("*.png"),
                   key=lambda p: (0, int(p.stem)) if p.stem.isdigit() else (1, p.stem))
    out = []
    for i, p in enumerate(paths):
        try:
            img = load_image(p)
            out.append(Frame(index=i, timestamp=i / fps, pixels=img.pixels))
        except Exception as exc:
            out.append(Frame(index=i, timestamp=i / fps, pixels=None,
                             error=f"{p.name}: {exc}"))
    return out


def histogram_edges() -> np.ndarray:
    return np.arange(HIST_RANGE[0], HIST_RANGE[1] + HIST_WIDTH / 2, HIST_WIDTH)


def summarize_stream(scores, out_dir) -> dict:
    """Write per-trait time series and fixed-bin z histograms (CSV + PNG).

    Histogram bins cover [-4, 4] in steps of 0.5; out-of-range z-scores are
    counted in the nearest edge bin so counts always sum to the number of
    face-found frames. Empty input still writes headed files.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    traits = sorted({t for s in scores for t in s.zscores})
    edges = histogram_edges()

    series_path = out_dir / "timeseries.csv"
    with series_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SERIES_FIELDS)
        for s in scores:
            for trait in traits:
                if trait in s.zscores:
                    writer.writerow([s.frame_index, repr(s.timestamp), trait,
                                     repr(s.zscores[trait])])

    counts: dict[str, np.ndarray] = {}
    hist_path = out_dir / "histogram.csv"
    with hist_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(HISTOGRAM_FIELDS)
        for trait in traits:
            z = np.array([s.zscores[trait] for s in scores if trait in s.zscores])
            z = np.clip(z, HIST_RANGE[0], HIST_RANGE[1])
            c, _ = np.histogram(z, bins=edges)
            counts[trait] = c
            for i, n in enumerate(c):
                writer.writerow([trait, edges[i], edges[i + 1], int(n)])

    series_plot = out_dir / "timeseries.png"
    hist_plot = out_dir / "histogram.png"
    _plot_series(scores, traits, series_plot)
    _plot_histogram(counts, edges, hist_plot)
    return {
        "series": series_path,
        "histogram": hist_path,
        "series_plot": series_plot,
        "histogram_plot": hist_plot,
        "counts": counts,
        "edges": edges,
    }


def _plot_series(scores, traits, path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(8, 4))
    for trait in traits:
        pts = [(s.frame_index, s.zscores[trait]) for s in scores if trait in s.zscores]
        if pts:
            xs, ys = zip(*pts)
            ax.plot(xs, ys, label=trait)
    ax.set_xlabel("frame")
    ax.set_ylabel("z-score")
    if traits:
        ax.legend(loc="upper right")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def _plot_histogram(counts, edges, path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    centers = (edges[:-1] + edges[1:]) / 2
    width = (edges[1] - edges[0]) * 0.9 / max(1, len(counts))
    for i, (trait, c) in enumerate(sorted(counts.items())):
        ax.bar(centers + i * width - width * (len(counts) - 1) / 2, c,
               width=width, label=trait)
    ax.set_xlabel("z-score")
    ax.set_ylabel("frames")
    if counts:
        ax.legend(loc="upper right")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def annotate_frames(frames, scores, out_dir) -> list[Path]:
    """Optional rendering: face box plus z-score text burned into each frame."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    by_index = {s.frame_index: s for s in scores}
    written = []
    for frame in frames:
        if frame.pixels is None:
            continue
        arr = np.round(np.clip(frame.pixels, 0.0, 1.0) * 255.0).astype(np.uint8)
        im = Image.fromarray(arr, mode="L").convert("RGB")
        score = by_index.get(frame.index)
        if score is not None and score.face_found:
            draw = ImageDraw.Draw(im)
            if score.face_box is not None:
                draw.rectangle(score.face_box, outline=(0, 255, 0), width=1)
            text = "  ".join(f"{t}:{z:+.2f}" for t, z in sorted(score.zscores.items()))
            draw.text((2, 2), text, fill=(255, 255, 0))
        path = out_dir / f"{frame.index:06d}.png"
        im.save(path)
        written.append(path)
    return written

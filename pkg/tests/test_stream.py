import json

import numpy as np
import pytest
from scipy import stats as sstats

from crowdface.dataset import canonical_eyes, generate_synthetic
from crowdface.errors import ShapeMismatchError
from crowdface.stream import (
    Detection,
    FixtureDetector,
    Frame,
    FrameScore,
    annotate_frames,
    frames_from_dir,
    measure_stream,
    pick_face,
    process_frame,
    process_stream,
    summarize_stream,
)


def full_frame_detection(side):
    left, right = canonical_eyes(side)
    return {"box": [0, 0, side, side], "left_eye": list(left), "right_eye": list(right)}


def write_sidecar(path, side, indices):
    payload = {str(i): full_frame_detection(side) for i in indices}
    path.write_text(json.dumps(payload), encoding="utf-8")
    return path


def make_frames(pixel_list):
    return [Frame(index=i, timestamp=i / 30.0, pixels=px)
            for i, px in enumerate(pixel_list)]


class TestPickFace:
    def test_largest_box_wins(self):
        small = Detection((0, 0, 4, 4), (1, 1), (3, 1))
        big = Detection((5, 5, 15, 15), (7, 7), (12, 7))
        assert pick_face([small, big]) is big

    def test_tie_breaks_by_top_left(self):
        a = Detection((4, 4, 8, 8), (5, 5), (7, 5))
        b = Detection((4, 2, 8, 6), (5, 3), (7, 3))  # same area, smaller y
        assert pick_face([a, b]) is b
        assert pick_face([]) is None


class TestFixtureDetector:
    def test_reads_single_and_list_entries(self, tmp_path):
        side = 16
        payload = {
            "0": full_frame_detection(side),
            "1": [full_frame_detection(side),
                  {"box": [0, 0, 4, 4], "left_eye": [1, 1], "right_eye": [3, 1]}],
        }
        path = tmp_path / "det.json"
        path.write_text(json.dumps(payload), encoding="utf-8")
        det = FixtureDetector(path)
        frame0 = Frame(0, 0.0, np.zeros((side, side)))
        frame1 = Frame(1, 0.0, np.zeros((side, side)))
        frame9 = Frame(9, 0.0, np.zeros((side, side)))
        assert det.detect(frame0).box == (0, 0, side, side)
        assert det.detect(frame1).box == (0, 0, side, side)  # larger of the two
        assert det.detect(frame9) is None


class TestProcessStream:
    def test_empty_source(self, synth_bundle, tmp_path):
        sidecar = write_sidecar(tmp_path / "d.json", 64, [])
        out = process_stream([], {"patch": synth_bundle.model},
                             FixtureDetector(sidecar))
        assert out == []

    def test_static_frame_gives_identical_zscores(self, synth_bundle, tmp_path):
        model = synth_bundle.model
        px = synth_bundle.val_set.pixels[0]
        frames = make_frames([px] * 6)
        sidecar = write_sidecar(tmp_path / "d.json", 64, range(6))
        out = process_stream(frames, {"patch": model}, FixtureDetector(sidecar))
        assert all(s.face_found for s in out)
        zs = {s.zscores["patch"] for s in out}
        assert len(zs) == 1

    def test_pipeline_equals_pointwise_map(self, synth_bundle, tmp_path):
        model = synth_bundle.model
        frames = make_frames(list(synth_bundle.val_set.pixels[:20]))
        sidecar = write_sidecar(tmp_path / "d.json", 64, range(20))
        detector = FixtureDetector(sidecar)
        models = {"patch": model}
        stream_out = process_stream(frames, models, detector)
        map_out = [process_frame(f, models, detector) for f in frames]
        assert stream_out == map_out

    def test_zscore_recomputation_oracle(self, synth_bundle, tmp_path):
        model = synth_bundle.model
        frames = make_frames(list(synth_bundle.val_set.pixels[:10]))
        sidecar = write_sidecar(tmp_path / "d.json", 64, range(10))
        out = process_stream(frames, {"patch": model}, FixtureDetector(sidecar))
        for s in out:
            raw = s.raw_scores["patch"]
            expected = (raw - model.train_score_mean) / model.train_score_std
            assert s.zscores["patch"] == expected

    def test_monotone_stimulus_tracks_rank(self, synth_bundle, tmp_path):
        # brighten the planted patch linearly across frames; raw score rank
        # correlation with frame index must be >= 0.9
        manifest = synth_bundle.manifest
        side = manifest["side"]
        p = manifest["patch"]
        rng = np.random.default_rng(50)
        background = np.clip(rng.normal(0.5, 0.15, (side, side)), 0, 1)
        n = 40
        frames_px = []
        for i in range(n):
            px = background.copy()
            px[p["row0"]:p["row0"] + p["size"], p["col0"]:p["col0"] + p["size"]] = i / (n - 1)
            frames_px.append(np.round(px * 255) / 255)
        frames = make_frames(frames_px)
        sidecar = write_sidecar(tmp_path / "d.json", side, range(n))
        out = process_stream(frames, {"patch": synth_bundle.model},
                             FixtureDetector(sidecar))
        raws = [s.raw_scores["patch"] for s in out]
        rho = sstats.spearmanr(np.arange(n), raws).statistic
        assert rho >= 0.9

    def test_no_face_and_undecodable_frames(self, synth_bundle, tmp_path):
        px = synth_bundle.val_set.pixels[0]
        frames = [
            Frame(0, 0.0, px),
            Frame(1, 0.1, None, error="decode failed"),
            Frame(2, 0.2, px),
        ]
        sidecar = write_sidecar(tmp_path / "d.json", 64, [0])  # no entry for 2
        out = process_stream(frames, {"patch": synth_bundle.model},
                             FixtureDetector(sidecar))
        assert [s.face_found for s in out] == [True, False, False]
        assert out[1].error == "decode failed"
        assert out[1].zscores == {}
        assert out[2].error is None

    def test_output_order_with_workers(self, synth_bundle, tmp_path):
        frames = make_frames(list(synth_bundle.val_set.pixels[:8]))
        sidecar = write_sidecar(tmp_path / "d.json", 64, range(8))
        models = {"patch": synth_bundle.model}
        seq = process_stream(frames, models, FixtureDetector(sidecar), workers=1)
        par = process_stream(frames, models, FixtureDetector(sidecar), workers=3)
        assert [s.frame_index for s in par] == list(range(8))
        assert par == seq

    def test_models_must_share_side(self, synth_bundle):
        from crowdface.model import ArchitectureConfig, TrainedModel, build

        other = build(ArchitectureConfig(segments=((1, 4),), fc_width=8), side=16)
        small = TrainedModel(other.architecture, 16, "x", other.module, 0.5, 0.1)
        with pytest.raises(ShapeMismatchError):
            process_stream([], {"patch": synth_bundle.model, "x": small}, None)

    def test_throughput_accounting(self, synth_bundle, tmp_path):
        frames = make_frames(list(synth_bundle.val_set.pixels[:5]))
        sidecar = write_sidecar(tmp_path / "d.json", 64, range(5))
        scores, stats = measure_stream(frames, {"patch": synth_bundle.model},
                                       FixtureDetector(sidecar))
        assert stats.n_frames == 5
        assert stats.fps == pytest.approx(5 / stats.elapsed_s, rel=0.05)


def fake_scores(zs, trait="t"):
    return [
        FrameScore(i, i / 30.0, True, (0, 0, 1, 1), {trait: 0.0}, {trait: float(z)})
        for i, z in enumerate(zs)
    ]


class TestSummarizeStream:
    def test_all_zero_z_lands_around_zero(self, tmp_path):
        out = summarize_stream(fake_scores([0.0] * 7), tmp_path)
        counts = out["counts"]["t"]
        edges = out["edges"]
        nonzero = np.nonzero(counts)[0]
        assert counts.sum() == 7
        assert len(nonzero) == 1
        lo, hi = edges[nonzero[0]], edges[nonzero[0] + 1]
        assert lo <= 0.0 < hi and (hi - lo) == pytest.approx(0.5)

    def test_counts_conserve_face_found_frames(self, tmp_path):
        rng = np.random.default_rng(3)
        zs = rng.normal(0, 2.5, 200)  # some values beyond +-4 get edge-binned
        scores = fake_scores(zs) + [FrameScore(999, 9.9, False)]
        out = summarize_stream(scores, tmp_path)
        assert out["counts"]["t"].sum() == 200

    def test_normal_draws_match_normal_density(self, tmp_path):
        rng = np.random.default_rng(12)
        zs = rng.standard_normal(1000)
        out = summarize_stream(fake_scores(zs), tmp_path)
        counts = out["counts"]["t"]
        edges = out["edges"]
        # merge tails so every expected count is comfortably large
        probs = np.diff(sstats.norm.cdf(edges))
        probs[0] += sstats.norm.cdf(edges[0])
        probs[-1] += sstats.norm.sf(edges[-1])
        keep = probs * 1000 >= 5
        f_obs = np.concatenate([[counts[~keep & (edges[:-1] < 0)].sum()],
                                counts[keep],
                                [counts[~keep & (edges[:-1] >= 0)].sum()]])
        f_exp = np.concatenate([[probs[~keep & (edges[:-1] < 0)].sum()],
                                probs[keep],
                                [probs[~keep & (edges[:-1] >= 0)].sum()]]) * 1000
        p = sstats.chisquare(f_obs, f_exp).pvalue
        assert p > 0.01

    def test_empty_input_writes_headed_files(self, tmp_path):
        out = summarize_stream([], tmp_path)
        series = out["series"].read_text(encoding="utf-8").strip().splitlines()
        hist = out["histogram"].read_text(encoding="utf-8").strip().splitlines()
        assert series == ["frame_index,timestamp,trait,zscore"]
        assert hist == ["trait,bin_left,bin_right,count"]
        assert out["series_plot"].exists()
        assert out["histogram_plot"].exists()

    def test_series_rows_only_for_face_found(self, tmp_path):
        scores = fake_scores([0.5, -0.5]) + [FrameScore(7, 0.2, False)]
        out = summarize_stream(scores, tmp_path)
        rows = out["series"].read_text(encoding="utf-8").strip().splitlines()
        assert len(rows) == 1 + 2


class TestFramesFromDir:
    def test_numeric_ordering_and_decode(self, tmp_path):
        images, _, _ = generate_synthetic(3, 16, seed=1)
        for i, img in enumerate(images):
            from crowdface.dataset import FaceImage, save_image

            save_image(FaceImage(str(i), img.pixels), tmp_path)
        (tmp_path / "10.png").write_bytes(b"this is not a png")
        frames = frames_from_dir(tmp_path, fps=10.0)
        assert [f.index for f in frames] == [0, 1, 2, 3]
        assert frames[1].timestamp == pytest.approx(0.1)
        assert frames[3].pixels is None  # the corrupt file, ordered last
        assert "10.png" in frames[3].error


class TestAnnotateFrames:
    def test_writes_annotated_pngs(self, tmp_path, synth_bundle):
        frames = make_frames(list(synth_bundle.val_set.pixels[:2]))
        sidecar = write_sidecar(tmp_path / "d.json", 64, range(2))
        scores = process_stream(frames, {"patch": synth_bundle.model},
                                FixtureDetector(sidecar))
        written = annotate_frames(frames, scores, tmp_path / "ann")
        assert len(written) == 2
        assert all(p.exists() for p in written)

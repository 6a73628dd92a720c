import os

import numpy as np
import pytest

from motiondepth.data import (
    Frame,
    SceneSpec,
    SequenceSample,
    generate_synthetic,
    load_dataset,
    load_pfm,
    load_rgb_png,
    load_sequence,
    pose_row_to_transform,
    preprocess,
    save_pfm,
    save_rgb_png,
    save_sequence,
    sequence_ids,
    split_midair_style,
)
from motiondepth.exceptions import (
    CorruptDepth,
    DegenerateSpec,
    MissingFile,
    PoseCountMismatch,
)
from motiondepth.geometry import Intrinsics, relative_motion
from motiondepth.layers import warp

SMALL_K = Intrinsics(fx=32.0, fy=32.0, s=0.0, cx=15.5, cy=15.5, width=32, height=32)


def small_spec(**kw):
    base = dict(
        geometry="plane",
        trajectory="straight",
        speed=0.8,
        fps=4.0,
        frame_count=8,
        intrinsics=SMALL_K,
    )
    base.update(kw)
    return SceneSpec(**base)


class TestPfm:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        d = rng.uniform(0.2, 80.0, size=(17, 23)).astype(np.float32)
        p = tmp_path / "d.pfm"
        save_pfm(p, d)
        np.testing.assert_array_equal(load_pfm(p), d)

    def test_header_bytes(self, tmp_path):
        p = tmp_path / "d.pfm"
        save_pfm(p, np.ones((2, 3), dtype=np.float32))
        raw = p.read_bytes()
        assert raw.startswith(b"Pf\n3 2\n-1.0\n")
        assert len(raw) == len(b"Pf\n3 2\n-1.0\n") + 4 * 6

    def test_rows_stored_bottom_up(self, tmp_path):
        d = np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32)
        p = tmp_path / "d.pfm"
        save_pfm(p, d)
        payload = p.read_bytes().split(b"\n", 3)[3]
        stored = np.frombuffer(payload, dtype="<f4").reshape(2, 2)
        np.testing.assert_array_equal(stored[0], [3.0, 4.0])

    def test_corrupt_values(self, tmp_path):
        p = tmp_path / "bad.pfm"
        save_pfm(p, np.array([[1.0, -2.0]], dtype=np.float32))
        with pytest.raises(CorruptDepth):
            load_pfm(p)
        save_pfm(p, np.array([[1.0, np.nan]], dtype=np.float32))
        with pytest.raises(CorruptDepth):
            load_pfm(p)

    def test_truncated(self, tmp_path):
        p = tmp_path / "t.pfm"
        save_pfm(p, np.ones((4, 4), dtype=np.float32))
        p.write_bytes(p.read_bytes()[:-4])
        with pytest.raises(CorruptDepth):
            load_pfm(p)

    def test_missing(self):
        with pytest.raises(MissingFile):
            load_pfm("/nonexistent/x.pfm")


def test_png_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(1)
    q = rng.integers(0, 256, size=(9, 11, 3)).astype(np.float32) / np.float32(255.0)
    p = tmp_path / "img.png"
    save_rgb_png(p, q)
    np.testing.assert_array_equal(load_rgb_png(p), q)


class TestSequenceIO:
    def test_save_load_identity(self, tmp_path):
        sample = generate_synthetic(small_spec(trajectory="spline"), seed=3)
        save_sequence(tmp_path, 0, sample)
        loaded = load_sequence(os.path.join(tmp_path, "0"))
        assert len(loaded) == 8
        np.testing.assert_array_equal(loaded.poses, sample.poses)
        assert loaded.intrinsics == sample.intrinsics
        for fa, fb in zip(sample.frames, loaded.frames):
            np.testing.assert_array_equal(fa.gt_depth, fb.gt_depth)
            np.testing.assert_array_equal(fa.rgb, fb.rgb)
            np.testing.assert_array_equal(fa.motion.rotation, fb.motion.rotation)
            np.testing.assert_array_equal(fa.motion.translation, fb.motion.translation)
        assert loaded.frames[0].motion.is_identity

    def test_pose_count_mismatch(self, tmp_path):
        sample = generate_synthetic(small_spec(frame_count=4), seed=0)
        save_sequence(tmp_path, 0, sample)
        # dropping the final frame's files leaves counts inconsistent
        os.remove(tmp_path / "0" / "rgb" / "000003.png")
        os.remove(tmp_path / "0" / "depth" / "000003.pfm")
        with pytest.raises(PoseCountMismatch):
            load_sequence(os.path.join(tmp_path, "0"))

    def test_gap_in_frame_numbering(self, tmp_path):
        sample = generate_synthetic(small_spec(frame_count=4), seed=0)
        save_sequence(tmp_path, 0, sample)
        os.remove(tmp_path / "0" / "rgb" / "000001.png")
        with pytest.raises(MissingFile):
            load_sequence(os.path.join(tmp_path, "0"))

    def test_missing_camera_file(self, tmp_path):
        sample = generate_synthetic(small_spec(frame_count=2), seed=0)
        save_sequence(tmp_path, 0, sample)
        os.remove(tmp_path / "0" / "camera.txt")
        with pytest.raises(MissingFile):
            load_sequence(os.path.join(tmp_path, "0"))

    def test_dataset_iteration_order(self, tmp_path):
        sample = generate_synthetic(small_spec(frame_count=2), seed=0)
        for sid in (10, 2, 1):
            save_sequence(tmp_path, sid, sample)
        assert sequence_ids(tmp_path) == ["1", "2", "10"]
        ids = [s.seq_id for s in load_dataset(tmp_path)]
        assert ids == ["1", "2", "10"]


class TestSplit:
    def test_rule(self):
        train, test = split_midair_style([0, 1, 2, 3, 4, 5])
        assert test == [0, 3]
        assert train == [1, 2, 4, 5]

    def test_empty(self):
        assert split_midair_style([]) == ([], [])

    def test_large_id(self):
        train, test = split_midair_style([3000])
        assert test == [3000] and train == []


class TestPreprocess:
    def test_67_frames_to_two_clips(self):
        sample = generate_synthetic(small_spec(frame_count=67, speed=0.3), seed=1)
        clips = preprocess(sample, subsample=4, clip_len=8, out_size=32)
        assert len(clips) == 2
        assert all(len(c) == 8 for c in clips)

    def test_identity_settings(self):
        sample = generate_synthetic(small_spec(frame_count=5), seed=2)
        clips = preprocess(sample, subsample=1, clip_len=5, out_size=32)
        assert len(clips) == 1
        for fa, fb in zip(sample.frames, clips[0].frames):
            np.testing.assert_array_equal(fa.rgb, fb.rgb)
            np.testing.assert_array_equal(fa.gt_depth, fb.gt_depth)
        assert clips[0].intrinsics == sample.intrinsics

    def test_clips_do_not_share_frames(self):
        sample = generate_synthetic(small_spec(frame_count=7, speed=1.0), seed=3)
        clips = preprocess(sample, subsample=1, clip_len=3, out_size=32)
        assert len(clips) == 2
        for idx, clip in enumerate(clips):
            for off, frame in enumerate(clip.frames):
                src = sample.frames[idx * 3 + off]
                np.testing.assert_array_equal(frame.rgb, src.rgb)

    def test_composed_motion_matches_pose_difference(self):
        sample = generate_synthetic(
            small_spec(trajectory="spline", frame_count=12, speed=1.5), seed=4
        )
        clips = preprocess(sample, subsample=3, clip_len=4, out_size=32)
        assert len(clips) == 1
        kept = [2, 5, 8, 11]
        for pos in range(1, 4):
            direct = relative_motion(
                pose_row_to_transform(sample.poses[kept[pos - 1]]),
                pose_row_to_transform(sample.poses[kept[pos]]),
            )
            got = clips[0].frames[pos].motion
            np.testing.assert_allclose(got.rotation, direct.rotation, atol=1e-6)
            np.testing.assert_allclose(got.translation, direct.translation, atol=1e-6)
        assert clips[0].frames[0].motion.is_identity

    def test_resize_and_intrinsics(self):
        sample = generate_synthetic(small_spec(frame_count=2), seed=5)
        clips = preprocess(sample, subsample=1, clip_len=2, out_size=16)
        frame = clips[0].frames[0]
        assert frame.rgb.shape == (16, 16, 3)
        assert frame.gt_depth.shape == (16, 16)
        # nearest-neighbour depth never invents values
        assert set(np.unique(frame.gt_depth)) <= set(np.unique(sample.frames[0].gt_depth))
        k = clips[0].intrinsics
        assert k.width == 16 and k.height == 16
        np.testing.assert_allclose(k.fx, SMALL_K.fx * 0.5)
        np.testing.assert_allclose(k.cx, (SMALL_K.cx + 0.5) * 0.5 - 0.5)


class TestGenerator:
    def test_static_plane_constant_depth(self):
        spec = small_spec(speed=0.0, frame_count=3, base_depth=10.0)
        sample = generate_synthetic(spec, seed=0)
        for frame in sample.frames:
            np.testing.assert_array_equal(frame.gt_depth, np.full((32, 32), 10.0, np.float32))
            assert frame.motion.is_identity

    def test_plane_translation_shift(self):
        # x-step 2.5 m at depth 10 with f=32: shift = 32 * 2.5 / 10 = 8 px
        spec = small_spec(
            speed=2.5, fps=1.0, frame_count=2, direction=(1.0, 0.0, 0.0), base_depth=10.0
        )
        sample = generate_synthetic(spec, seed=0)
        i0 = sample.frames[0].rgb
        i1 = sample.frames[1].rgb
        np.testing.assert_array_equal(i1[:, :24], i0[:, 8:])
        # cross-correlation over x-lags peaks at the predicted shift
        a = i0 - i0.mean()
        b = i1 - i1.mean()
        corr = [
            (a[:, lag : lag + 16] * b[:, :16]).sum() for lag in range(0, 17)
        ]
        assert int(np.argmax(corr)) == 8

    def test_same_seed_bit_identical(self):
        for traj in ("straight", "arc", "spline"):
            spec = small_spec(trajectory=traj, frame_count=4, geometry="sprites")
            s1 = generate_synthetic(spec, seed=9)
            s2 = generate_synthetic(spec, seed=9)
            for fa, fb in zip(s1.frames, s2.frames):
                np.testing.assert_array_equal(fa.rgb, fb.rgb)
                np.testing.assert_array_equal(fa.gt_depth, fb.gt_depth)
            np.testing.assert_array_equal(s1.poses, s2.poses)

    @pytest.mark.parametrize("geometry", ["plane", "height_field", "sprites"])
    def test_warp_consistency(self, geometry):
        spec = small_spec(
            geometry=geometry, trajectory="spline", speed=1.2, frame_count=4, texture_seed=3
        )
        sample = generate_synthetic(spec, seed=5)
        for t in range(1, 4):
            prev, cur = sample.frames[t - 1], sample.frames[t]
            res, _ = warp(
                prev.rgb,
                cur.gt_depth[..., None].astype(np.float64),
                cur.motion,
                sample.intrinsics,
            )
            ok = res.validity[..., 0] == 1.0
            assert ok.mean() > 0.5
            assert np.abs(res.warped - cur.rgb)[ok].mean() < 1e-2

    def test_all_trajectories_valid_motions(self):
        for traj in ("straight", "arc", "spline"):
            sample = generate_synthetic(small_spec(trajectory=traj, frame_count=5), seed=2)
            assert len(sample) == 5
            assert sample.frames[0].motion.is_identity
            for frame in sample.frames:
                assert np.all(frame.gt_depth > 0)

    def test_degenerate_crash_into_plane(self):
        spec = small_spec(speed=30.0, fps=1.0, frame_count=3, direction=(0.0, 0.0, 1.0))
        with pytest.raises(DegenerateSpec):
            generate_synthetic(spec, seed=0)

    def test_bad_kind_rejected(self):
        with pytest.raises(DegenerateSpec):
            small_spec(geometry="torus")
        with pytest.raises(DegenerateSpec):
            small_spec(trajectory="teleport")

    def test_height_field_depth_varies(self):
        sample = generate_synthetic(small_spec(geometry="height_field", frame_count=1), seed=1)
        d = sample.frames[0].gt_depth
        assert d.std() > 0.05
        assert np.all(d > 0)

"""Joint/bone data handling, frame sampling, occlusion noise and file I/O tests."""

import numpy as np
import pytest

from stylenet.hand_graph import HandGraph, build_hand_graph
from stylenet.skeleton_data import (
    MODE_2D_SCORE,
    MODE_3D,
    DatasetManifest,
    JointSample,
    ManifestRecord,
    SampleFormatError,
    bones_to_vertex_layout,
    default_occlusion_weights,
    derive_bones,
    inject_noise,
    load_dataset,
    read_manifest,
    read_sample,
    sample_frames,
    write_manifest,
    write_sample,
)

SINGLE_EDGE = HandGraph(num_vertices=2, edges=((0, 1),), root=0, hop_distance=(0, 1))


def make_sample(rng, t=5, v=21, mode=MODE_2D_SCORE):
    data = rng.uniform(0.0, 100.0, size=(t, v, 3)).astype(np.float32)
    if mode == MODE_2D_SCORE:
        data[:, :, 2] = rng.uniform(0.0, 1.0, size=(t, v))
    return JointSample(data=data, person_id=1, sentence_id=2, repetition_id=3, mode=mode)


class TestDeriveBones:
    def test_single_edge_hand_computation(self):
        data = np.array([[[1.0, 2.0, 0.9], [4.0, 6.0, 0.5]]])
        j = JointSample(data=data, person_id=0, sentence_id=0, repetition_id=0)
        b = derive_bones(j, SINGLE_EDGE)
        assert b.edge_index == ((0, 1),)
        assert np.allclose(b.data[0, 0], [3.0, 4.0, 0.45])

    def test_identical_joints_zero_coordinates(self):
        g = build_hand_graph("one")
        data = np.tile(np.array([5.0, 7.0, 1.0], dtype=np.float32), (3, 21, 1))
        b = derive_bones(JointSample(data, 0, 0, 0), g)
        assert np.allclose(b.data[:, :, :2], 0.0)

    def test_matches_per_edge_loop_oracle(self):
        g = build_hand_graph("one")
        j = make_sample(np.random.default_rng(0))
        b = derive_bones(j, g)
        assert b.data.shape == (5, 20, 3)
        hop = g.hop_distance
        for slot, (u, v) in enumerate(g.edges):
            p, c = (u, v) if hop[u] < hop[v] else (v, u)
            for t in range(j.num_frames):
                assert np.allclose(b.data[t, slot, :2], j.data[t, c, :2] - j.data[t, p, :2])
                assert np.allclose(b.data[t, slot, 2], j.data[t, c, 2] * j.data[t, p, 2])

    def test_3d_mode_differences_all_channels(self):
        j = make_sample(np.random.default_rng(1), mode=MODE_3D)
        b = derive_bones(j, build_hand_graph("one"))
        for slot, (p, c) in enumerate(b.edge_index):
            assert np.allclose(b.data[:, slot], j.data[:, c] - j.data[:, p])

    def test_coordinate_linearity(self):
        g = build_hand_graph("one")
        rng = np.random.default_rng(2)
        j1, j2 = make_sample(rng), make_sample(rng)
        mixed = JointSample(2.0 * j1.data + 3.0 * j2.data, 0, 0, 0)
        got = derive_bones(mixed, g).data[:, :, :2]
        want = 2.0 * derive_bones(j1, g).data[:, :, :2] + 3.0 * derive_bones(j2, g).data[:, :, :2]
        assert np.allclose(got, want, atol=1e-3)

    def test_rejects_dimension_mismatch(self):
        j = make_sample(np.random.default_rng(3), v=10)
        with pytest.raises(ValueError):
            derive_bones(j, build_hand_graph("one"))


def test_bones_to_vertex_layout_scatters_to_children():
    g = build_hand_graph("one")
    j = make_sample(np.random.default_rng(4))
    b = derive_bones(j, g)
    out = bones_to_vertex_layout(b, 21)
    assert out.shape == (5, 21, 3)
    assert np.allclose(out[:, g.root], 0.0)  # the root is nobody's child
    for slot, (_, child) in enumerate(b.edge_index):
        assert np.array_equal(out[:, child], b.data[:, slot])


class TestSampleFrames:
    def test_exact_length_is_forced(self):
        idx = sample_frames(32, 32, np.random.default_rng(0))
        assert np.array_equal(idx, np.arange(32))

    def test_double_length_segment_arithmetic(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            idx = sample_frames(64, 32, rng)
            for i, j in enumerate(idx):
                assert j in (2 * i, 2 * i + 1)

    def test_single_frame_repeats(self):
        assert np.array_equal(sample_frames(1, 32, np.random.default_rng(2)), np.zeros(32))

    def test_output_contract(self):
        rng = np.random.default_rng(3)
        for t_full in (1, 3, 17, 32, 100):
            idx = sample_frames(t_full, 32, rng)
            assert len(idx) == 32
            assert np.all((idx >= 0) & (idx < t_full))
            assert np.all(np.diff(idx) >= 0)

    def test_reproducible_from_seed(self):
        a = sample_frames(50, 32, np.random.default_rng(4))
        b = sample_frames(50, 32, np.random.default_rng(4))
        assert np.array_equal(a, b)

    def test_rejects_empty_clip(self):
        with pytest.raises(ValueError):
            sample_frames(0, 32, np.random.default_rng(0))


class TestInjectNoise:
    def test_zero_draw_is_identity(self):
        j = make_sample(np.random.default_rng(5))
        w = np.ones(21)
        for seed in range(50):
            rng = np.random.default_rng(seed)
            if rng.integers(0, 3) == 0:
                out = inject_noise(j, np.random.default_rng(seed), w)
                assert np.array_equal(out.data, j.data)
                return
        pytest.fail("no seed drew k=0")

    def test_two_draw_zeroes_exactly_two_columns(self):
        j = make_sample(np.random.default_rng(6))
        j.data[:, :, :] += 1.0  # ensure no column is already zero
        w = np.ones(21)
        for seed in range(50):
            rng = np.random.default_rng(seed)
            if rng.integers(0, 3) == 2:
                out = inject_noise(j, np.random.default_rng(seed), w)
                zero_cols = int(np.all(out.data == 0.0, axis=(0, 2)).sum())
                untouched = int(np.all(out.data == j.data, axis=(0, 2)).sum())
                assert zero_cols == 2 and untouched == 19
                return
        pytest.fail("no seed drew k=2")

    def test_weighted_selection_frequency(self):
        j = make_sample(np.random.default_rng(7), t=1)
        j.data += 1.0
        w = np.ones(21)
        w[4] = 3.0  # thumb tip three times as occlusion-prone
        rng = np.random.default_rng(8)
        hits = np.zeros(21)
        trials = 10**5
        for _ in range(trials):
            out = inject_noise(j, rng, w)
            hits += np.all(out.data == 0.0, axis=(0, 2))
        ratio = hits[4] / np.mean(np.delete(hits, 4))
        assert abs(ratio - 3.0) < 0.15  # within 5% of the 3x weight ratio

    def test_expected_zeroed_count_is_one(self):
        j = make_sample(np.random.default_rng(9), t=1)
        j.data += 1.0
        rng = np.random.default_rng(10)
        total = 0
        trials = 20000
        for _ in range(trials):
            out = inject_noise(j, rng, np.ones(21))
            total += int(np.all(out.data == 0.0, axis=(0, 2)).sum())
        assert abs(total / trials - 1.0) < 0.02

    def test_never_increases_scores(self):
        j = make_sample(np.random.default_rng(11))
        rng = np.random.default_rng(12)
        for _ in range(20):
            out = inject_noise(j, rng, default_occlusion_weights(21))
            assert np.all(out.data[:, :, 2] <= j.data[:, :, 2])

    def test_rejects_bad_weights(self):
        j = make_sample(np.random.default_rng(13))
        with pytest.raises(ValueError):
            inject_noise(j, np.random.default_rng(0), np.ones(5))
        with pytest.raises(ValueError):
            inject_noise(j, np.random.default_rng(0), np.zeros(21))


def test_default_occlusion_weights_layout():
    w = default_occlusion_weights(21)
    assert np.array_equal(w[1:5], np.full(4, 3.0))  # thumb
    assert np.array_equal(w[5:9], np.full(4, 2.0))  # index finger
    assert np.array_equal(w[9:], np.ones(12))
    assert w[0] == 1.0
    w2 = default_occlusion_weights(42)
    assert np.array_equal(w2[:21], w) and np.array_equal(w2[21:], w)


class TestSampleFiles:
    def test_round_trip_bit_exact(self, tmp_path):
        for mode in (MODE_2D_SCORE, MODE_3D):
            j = make_sample(np.random.default_rng(14), mode=mode)
            path = str(tmp_path / f"s_{mode}.skel")
            write_sample(path, j)
            back = read_sample(path, j.person_id, j.sentence_id, j.repetition_id)
            assert np.array_equal(back.data, j.data)
            assert back.data.dtype == np.float32
            assert (back.person_id, back.sentence_id, back.repetition_id) == (1, 2, 3)
            assert back.mode == mode

    def test_wrong_magic_rejected(self, tmp_path):
        path = str(tmp_path / "bad.skel")
        with open(path, "wb") as fh:
            fh.write(b"NOPE" + b"\x00" * 40)
        with pytest.raises(SampleFormatError):
            read_sample(path)

    def test_truncated_payload_rejected(self, tmp_path):
        j = make_sample(np.random.default_rng(15))
        path = str(tmp_path / "trunc.skel")
        write_sample(path, j)
        blob = open(path, "rb").read()
        with open(path, "wb") as fh:
            fh.write(blob[:-8])
        with pytest.raises(SampleFormatError):
            read_sample(path)

    def test_oversized_payload_rejected(self, tmp_path):
        j = make_sample(np.random.default_rng(16))
        path = str(tmp_path / "fat.skel")
        write_sample(path, j)
        with open(path, "ab") as fh:
            fh.write(b"\x00" * 4)
        with pytest.raises(SampleFormatError):
            read_sample(path)


class TestManifest:
    def test_round_trip_and_relative_paths(self, tmp_path):
        j = make_sample(np.random.default_rng(17))
        write_sample(str(tmp_path / "a.skel"), j)
        man = DatasetManifest(records=[ManifestRecord("a.skel", 1, 2, 3)])
        write_manifest(str(tmp_path / "manifest.tsv"), man)
        back = read_manifest(str(tmp_path / "manifest.tsv"))
        assert len(back) == 1
        assert back.records[0].path == str(tmp_path / "a.skel")
        assert (back.records[0].person_id, back.records[0].sentence_id) == (1, 2)
        ds = load_dataset(back)
        assert len(ds) == 1
        assert np.array_equal(ds[0].data, j.data)

    def test_id_listings(self):
        man = DatasetManifest(
            records=[ManifestRecord(f"p{p}s{s}.skel", p, s, 0) for p in (3, 1) for s in (2, 0)]
        )
        assert man.person_ids() == [1, 3]
        assert man.sentence_ids() == [0, 2]

    def test_malformed_line_rejected(self, tmp_path):
        path = str(tmp_path / "manifest.tsv")
        with open(path, "w") as fh:
            fh.write("a.skel\t1\t2\n")  # missing repetition field
        with pytest.raises(SampleFormatError):
            read_manifest(path)


def test_joint_sample_validation():
    with pytest.raises(ValueError):
        JointSample(np.zeros((3, 21, 2)), 0, 0, 0)  # two channels
    with pytest.raises(ValueError):
        JointSample(np.zeros((3, 21, 3)), 0, 0, 0, mode="4d")

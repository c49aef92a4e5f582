import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tapg.data import (DataError, FeatureSequence, FormatError, GroundTruth, load_annotations,
                       load_features, resize_linear, save_annotations, save_features,
                       seconds_to_snippets, snippets_to_seconds, split_channels, window_offsets,
                       window_video)
from tapg.synth import DatasetSpec, synth_generate
from tapg.tensor import ConfigError


def _write_csv(path, arr):
    path.write_text("\n".join(",".join(repr(float(v)) for v in row) for row in arr) + "\n")


# file formats

def test_csv_payload(tmp_path):
    arr = np.arange(8.0).reshape(4, 2)
    _write_csv(tmp_path / "v1.csv", arr)
    seq = load_features(tmp_path / "v1.csv")
    assert (seq.T, seq.C, seq.video_id) == (4, 2, "v1")
    assert np.array_equal(seq.features, arr)


def test_binary_payload_matches_csv_twin(tmp_path):
    arr = np.array([[0.5, -1.25], [2.0, 3.0], [4.5, 0.0], [7.0, 1.0]])
    seq = FeatureSequence("clip", arr, frame_interval=16)
    meta_bin = save_features(seq, tmp_path / "bin", "bin")
    meta_csv = save_features(seq, tmp_path / "csv", "csv")
    a, b = load_features(meta_bin), load_features(meta_csv)
    assert np.array_equal(a.features, b.features)
    assert a.frame_interval == 16 and a.video_id == "clip"


def test_row_count_mismatch_names_file(tmp_path):
    _write_csv(tmp_path / "v.csv", np.ones((3, 2)))
    (tmp_path / "v.meta.json").write_text(json.dumps({"video_id": "v", "T": 4, "C": 2}))
    with pytest.raises(FormatError, match="v.csv"):
        load_features(tmp_path / "v.meta.json")


def test_binary_size_mismatch(tmp_path):
    np.ones(7, dtype="<f4").tofile(tmp_path / "v.bin")
    (tmp_path / "v.meta.json").write_text(json.dumps({"video_id": "v", "T": 4, "C": 2}))
    with pytest.raises(FormatError, match="v.bin"):
        load_features(tmp_path / "v.meta.json")


def test_non_finite_is_data_error(tmp_path):
    (tmp_path / "v.csv").write_text("1,2\n3,nan\n1,1\n2,2\n")
    with pytest.raises(DataError):
        load_features(tmp_path / "v.csv")


def test_annotation_round_trip(tmp_path):
    gts = [GroundTruth("a", [(1.0, 4.5)], 10), GroundTruth("b", [], 6)]
    save_annotations(gts, tmp_path / "ann.json")
    loaded = load_annotations(tmp_path / "ann.json")
    assert loaded["a"].instances == [(1.0, 4.5)] and loaded["b"].instances == []


def test_annotation_invariants(tmp_path):
    (tmp_path / "a.json").write_text(json.dumps(
        [{"video_id": "x", "T": 5, "instances": [{"start": 3, "end": 2}]}]))
    with pytest.raises(DataError):
        load_annotations(tmp_path / "a.json")


def test_seconds_conversion_round_trip():
    t = seconds_to_snippets(12.0, fps=30.0, frame_interval=16)
    assert t == pytest.approx(22.5)
    assert snippets_to_seconds(t, 30.0, 16) == pytest.approx(12.0)


# resize

def test_resize_identity(rng):
    seq = FeatureSequence("v", rng.normal(size=(9, 4)))
    assert np.array_equal(resize_linear(seq, 9).features, seq.features)


def test_resize_midpoint():
    seq = FeatureSequence("v", np.array([[0.0], [2.0]]))
    assert np.allclose(resize_linear(seq, 3).features[:, 0], [0.0, 1.0, 2.0])


def _pl_oracle(values, t):
    """Evaluate the piecewise-linear interpolant through (k, values[k]) at t."""
    k = min(int(np.floor(t)), len(values) - 2)
    f = t - k
    return (1 - f) * values[k] + f * values[k + 1]


def test_resize_round_trip_matches_oracle(rng):
    x = rng.normal(size=(7, 3))
    up = resize_linear(FeatureSequence("v", x), 100)
    back = resize_linear(up, 7).features
    # oracle: evaluate the up-sampled polyline at the original grid positions
    up_pos = np.linspace(0, 6, 100)
    for c in range(3):
        for i, t in enumerate(np.linspace(0, 99, 7)):
            ref = _pl_oracle(up.features[:, c], t)
            assert abs(back[i, c] - ref) < 1e-12
        for i, t in enumerate(up_pos):
            assert abs(up.features[i, c] - _pl_oracle(x[:, c], t)) < 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 40), st.integers(2, 120), st.floats(-3, 3), st.floats(-3, 3))
def test_resize_exact_on_affine(T, T_target, a, b):
    t = np.arange(T, dtype=np.float64)
    seq = FeatureSequence("v", np.stack([a * t + b, -t], axis=1))
    out = resize_linear(seq, T_target).features
    s = np.linspace(0, T - 1, T_target)
    assert np.allclose(out[:, 0], a * s + b, atol=1e-9)
    assert np.allclose(out[:, 1], -s, atol=1e-9)


def test_resize_scales_ground_truth():
    seq = FeatureSequence("v", np.zeros((50, 2)))
    _, gt = resize_linear(seq, 100, GroundTruth("v", [(10.0, 20.0)], 50))
    assert gt.instances == [(20.0, 40.0)] and gt.T == 100


def test_resize_bad_target():
    with pytest.raises(ConfigError):
        resize_linear(FeatureSequence("v", np.zeros((5, 2))), 1)


# windows

def test_single_window_for_exact_length(rng):
    seq = FeatureSequence("v", rng.normal(size=(128, 4)))
    wins = window_video(seq)
    assert len(wins) == 1 and np.array_equal(wins[0][0].features, seq.features)


def test_window_offsets_stride():
    assert window_offsets(192, 128, 0.5) == [0, 64]
    assert window_offsets(200, 128, 0.5) == [0, 64, 72]


def test_window_shifts_instances():
    seq = FeatureSequence("v", np.zeros((192, 2)))
    wins = window_video(seq, GroundTruth("v", [(130.0, 140.0)], 192))
    by_off = {w.origin_offset: g.instances for w, g in wins}
    assert by_off[64] == [(66.0, 76.0)]
    assert by_off[0] == []


def test_window_drops_short_clips():
    seq = FeatureSequence("v", np.zeros((192, 2)))
    wins = window_video(seq, GroundTruth("v", [(127.5, 140.0)], 192))
    assert wins[0][1].instances == []          # only 0.5 snippet inside window 0


@settings(max_examples=40, deadline=None)
@given(st.integers(4, 600), st.sampled_from([8, 32, 128]), st.sampled_from([0.0, 0.25, 0.5, 0.75]))
def test_windows_cover_every_snippet(T, W, overlap):
    offs = window_offsets(T, W, overlap)
    covered = np.zeros(T, dtype=bool)
    for o in offs:
        covered[o:o + W] = True
    assert covered.all()
    assert offs[0] == 0 and all(o + W <= max(T, W) for o in offs)


# split

def test_split_round_trip(rng):
    f = rng.normal(size=(6, 4))
    g, l = split_channels(f)
    assert g.shape == (6, 2) and l.shape == (6, 2)
    assert np.concatenate([g, l], axis=1).tobytes() == f.tobytes()


def test_split_odd_channels():
    with pytest.raises(ConfigError):
        split_channels(np.zeros((4, 3)))


# synthetic generator

def test_synth_deterministic():
    a, b = synth_generate(DatasetSpec(seed=5)), synth_generate(DatasetSpec(seed=5))
    for x, y in zip(a, b):
        assert x.seq.features.tobytes() == y.seq.features.tobytes()
        assert x.gt.instances == y.gt.instances and x.noise_segments == y.noise_segments
    c = synth_generate(DatasetSpec(seed=6))
    assert a[0].seq.features.tobytes() != c[0].seq.features.tobytes()


def test_synth_instances_respect_invariants():
    for v in synth_generate(DatasetSpec(num_videos=30, seed=2)):
        v.gt.validate()
        v.seq.validate()
        for s, e in v.noise_segments:
            # strictly inside some instance, with action on both sides
            assert any(ts < s and e < te for ts, te in v.gt.instances)


def _cluster_means(videos):
    act = np.concatenate([v.seq.features[v.action_mask & ~v.noise_mask] for v in videos])
    bg = np.concatenate([v.seq.features[~v.action_mask] for v in videos])
    return act.mean(0), bg.mean(0)


def test_synth_noise_segments_come_from_background():
    videos = synth_generate(DatasetSpec(num_videos=40, noise_prob=1.0, seed=3))
    mu_a, mu_b = _cluster_means(videos)
    noise = np.concatenate([v.seq.features[v.noise_mask] for v in videos])
    d = mu_a - mu_b
    proj = (noise - 0.5 * (mu_a + mu_b)) @ d
    assert (proj < 0).mean() > 0.95


def test_synth_zero_noise_probability():
    videos = synth_generate(DatasetSpec(num_videos=20, noise_prob=0.0, seed=4))
    assert all(v.noise_segments == [] for v in videos)
    mu_a, mu_b = _cluster_means(videos)
    act = np.concatenate([v.seq.features[v.action_mask] for v in videos])
    assert ((act - 0.5 * (mu_a + mu_b)) @ (mu_a - mu_b) > 0).mean() > 0.95


def test_linear_probe_chance_at_zero_separation():
    """A least-squares probe fit on half the snippets and scored on the rest
    should do no better than chance when the clusters coincide."""
    videos = synth_generate(DatasetSpec(num_videos=40, separation=0.0, seed=7))
    X = np.concatenate([v.seq.features for v in videos])
    y = np.concatenate([v.action_mask for v in videos]).astype(np.float64)
    X1 = np.hstack([X, np.ones((len(X), 1))])
    n = len(X) // 2
    w, *_ = np.linalg.lstsq(X1[:n], y[:n], rcond=None)
    thr = y[:n].mean()
    pred = X1[n:] @ w > thr
    # balance the score so class imbalance cannot inflate it
    acc = 0.5 * ((pred[y[n:] == 1]).mean() + (~pred[y[n:] == 0]).mean())
    assert abs(acc - 0.5) <= 0.1


def test_linear_probe_separates_at_default_separation():
    videos = synth_generate(DatasetSpec(num_videos=10, noise_prob=0.0, seed=7))
    X = np.concatenate([v.seq.features for v in videos])
    y = np.concatenate([v.action_mask for v in videos]).astype(np.float64)
    X1 = np.hstack([X, np.ones((len(X), 1))])
    w, *_ = np.linalg.lstsq(X1, y, rcond=None)
    assert ((X1 @ w > 0.5) == (y > 0.5)).mean() > 0.95


def test_synth_infeasible_spec():
    with pytest.raises(ConfigError):
        synth_generate(DatasetSpec(T=10, instance_length=(12, 14)))


def test_synth_spec_json_round_trip(tmp_path):
    spec = DatasetSpec(num_videos=3, seed=9)
    (tmp_path / "s.json").write_text(spec.to_json())
    assert DatasetSpec.load(tmp_path / "s.json") == spec
    with pytest.raises(ConfigError):
        DatasetSpec.from_dict({"bogus": 1})
    assert replace(spec, seed=1) != spec

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lane_intrusion.ingest import DetectionFrame, frame_from_dict
from lane_intrusion.scenegen import LABELS, ScenarioConfig, SensorConfig, make_sample, render_detections, simulate_scene
from lane_intrusion.tracking import DEFAULT_GATE_PX, EmptyMatrix, NoTrackFound, associate, hungarian


def brute_force(c):
    n, m = c.shape
    if n <= m:
        return min(sum(c[i, p[i]] for i in range(n)) for p in itertools.permutations(range(m), n))
    return brute_force(c.T)


def greedy(c):
    c = c.copy().astype(float)
    total = 0.0
    for _ in range(min(c.shape)):
        i, j = np.unravel_index(np.argmin(c), c.shape)
        total += c[i, j]
        c[i, :] = np.inf
        c[:, j] = np.inf
    return total


def test_diagonal_optimum():
    assert hungarian([[0, 9], [9, 0]]) == ({0: 0, 1: 1}, 0.0)


def test_tie_case():
    pairs, total = hungarian([[1, 2], [2, 1]])
    assert pairs == {0: 0, 1: 1} and total == 2.0


def test_empty_matrix():
    with pytest.raises(EmptyMatrix):
        hungarian(np.zeros((0, 3)))
    with pytest.raises(EmptyMatrix):
        hungarian([])


def test_nonfinite_rejected():
    with pytest.raises(ValueError):
        hungarian([[1.0, np.inf]])


matrices = st.tuples(st.integers(1, 6), st.integers(1, 6)).flatmap(
    lambda s: arrays(np.float64, s, elements=st.floats(0, 100, allow_nan=False))
)


@settings(max_examples=300, deadline=None)
@given(matrices)
def test_matches_brute_force_and_is_valid(c):
    pairs, total = hungarian(c)
    assert len(pairs) == min(c.shape)
    assert len(set(pairs.values())) == len(pairs)
    assert all(0 <= r < c.shape[0] and 0 <= k < c.shape[1] for r, k in pairs.items())
    assert total == pytest.approx(brute_force(c), abs=1e-9)
    assert total <= greedy(c) + 1e-9


def test_integer_costs_exact(rng):
    for shape in [(6, 6), (5, 7), (7, 5), (1, 4)]:
        for _ in range(50):
            c = rng.integers(0, 20, shape).astype(float)
            assert hungarian(c)[1] == brute_force(c)


def _clean_frames(label, seed):
    sc = simulate_scene(ScenarioConfig(label=label, yaw_profile=0.05), seed)
    return sc, render_detections(sc, SensorConfig(pixel_noise_sigma=0.0, miss_rate=0.0, clutter_rate=0.0), seed)


def test_clean_track_has_every_frame():
    for i, label in enumerate(LABELS):
        _, frames = _clean_frames(label, i)
        tr = associate(frames)
        assert tr.frame_indices() == list(range(32))
        assert tr.gaps == set()
        assert tr.gap_fraction == 0.0


def test_clutter_rejected_within_gate():
    for i in range(60):
        rec = make_sample(i, LABELS[i % 3], 99)
        frames = [frame_from_dict(d) for d in rec["frames"]]
        truth = np.array(rec["meta"]["truth"]["u_o"])
        tr = associate(frames)
        for f, obs in tr.observations:
            assert abs(obs.u_o - truth[f]) <= DEFAULT_GATE_PX


def test_all_clutter_no_track():
    sc = simulate_scene(ScenarioConfig(), 0)
    frames = render_detections(sc, SensorConfig(miss_rate=1.0, clutter_rate=1.0), 0)
    with pytest.raises(NoTrackFound):
        associate(frames)


def test_short_input_no_track():
    _, frames = _clean_frames("LeftToRight", 1)
    with pytest.raises(NoTrackFound):
        associate(frames[:20])


def test_gaps_recorded():
    _, frames = _clean_frames("RightToLeft", 2)
    dropped = {5, 6, 17}
    frames = [DetectionFrame(f.frame_index, f.timestamp_s, () if f.frame_index in dropped else f.boxes, f.left_marking, f.right_marking) for f in frames]
    tr = associate(frames)
    assert tr.gaps == dropped
    assert tr.span == 32


def test_box_order_invariance(rng):
    for i in range(20):
        rec = make_sample(i, LABELS[i % 3], 5)
        frames = [frame_from_dict(d) for d in rec["frames"]]
        shuffled = [
            DetectionFrame(f.frame_index, f.timestamp_s, tuple(f.boxes[j] for j in rng.permutation(len(f.boxes))), f.left_marking, f.right_marking)
            for f in frames
        ]
        a, b = associate(frames), associate(shuffled[::-1])
        assert a.observations == b.observations


def test_deterministic():
    rec = make_sample(3, "NoIntrusion", 8)
    frames = [frame_from_dict(d) for d in rec["frames"]]
    assert associate(frames).observations == associate(frames).observations

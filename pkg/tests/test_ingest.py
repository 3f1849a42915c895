import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lane_intrusion.ingest import (
    BoundingBox,
    DetectionFrame,
    ExtrapolationTooFar,
    InsufficientPoints,
    MarkingPoints,
    ParseError,
    SchemaError,
    baseline_position,
    frames_to_jsonl,
    marking_intercept,
    observe,
    parse_frames,
)


def frame_dict(i, **over):
    d = {
        "frame_index": i,
        "timestamp_s": i / 10,
        "boxes": [[100.0, 50.0, 140.0, 90.0]],
        "left_marking": [[400.0, 700.0], [410.0, 720.0]],
        "right_marking": [[600.0, 700.0], [590.0, 720.0]],
    }
    d.update(over)
    return d


def jsonl(*dicts):
    return "".join(json.dumps(d) + "\n" for d in dicts).encode()


def test_empty_stream():
    assert parse_frames(b"") == []
    assert parse_frames(io.BytesIO(b"\n\n")) == []


def test_two_frames_sorted():
    frames = parse_frames(jsonl(frame_dict(1), frame_dict(0)))
    assert [f.frame_index for f in frames] == [0, 1]
    assert frames[0].boxes[0] == BoundingBox(100.0, 50.0, 140.0, 90.0)


def test_text_and_file_inputs():
    raw = jsonl(frame_dict(0), frame_dict(1))
    assert len(parse_frames(raw.decode())) == 2
    assert len(parse_frames(io.StringIO(raw.decode()))) == 2


def test_missing_field_named():
    d = frame_dict(0)
    del d["right_marking"]
    with pytest.raises(SchemaError) as exc:
        parse_frames(jsonl(frame_dict(1), d))
    assert exc.value.field == "right_marking"
    assert exc.value.line == 2


@pytest.mark.parametrize(
    "over, field",
    [
        ({"frame_index": 1.5}, "frame_index"),
        ({"timestamp_s": "now"}, "timestamp_s"),
        ({"boxes": [[1, 2, 3]]}, "boxes"),
        ({"boxes": [[5, 5, 1, 9]]}, "boxes"),
        ({"left_marking": [[1, 2, 3]]}, "left_marking"),
    ],
)
def test_bad_fields(over, field):
    with pytest.raises(SchemaError) as exc:
        parse_frames(jsonl(frame_dict(0, **over)))
    assert exc.value.field == field


def test_malformed_json_line_number():
    with pytest.raises(ParseError) as exc:
        parse_frames(jsonl(frame_dict(0)) + b"{not json\n")
    assert exc.value.line == 2


def test_duplicate_index():
    with pytest.raises(SchemaError):
        parse_frames(jsonl(frame_dict(3), frame_dict(3)))


def test_roundtrip():
    frames = parse_frames(jsonl(frame_dict(0), frame_dict(1)))
    again = parse_frames(frames_to_jsonl(frames))
    assert [f.to_dict() for f in again] == [f.to_dict() for f in frames]


@pytest.mark.parametrize("box, expected", [((100, 50, 140, 90), (120, 90)), ((0, 0, 2, 2), (1, 2)), ((950, 10, 970, 40), (960, 40))])
def test_baseline_position(box, expected):
    assert baseline_position(BoundingBox(*map(float, box))) == expected


@settings(max_examples=100, deadline=None)
@given(st.floats(-1e4, 1e4), st.floats(-1e4, 1e4))
def test_baseline_translation_equivariant(du, dv):
    b = BoundingBox(10.0, 20.0, 30.0, 60.0)
    u, v = baseline_position(b)
    u2, v2 = baseline_position(BoundingBox(10.0 + du, 20.0 + dv, 30.0 + du, 60.0 + dv))
    assert u2 == pytest.approx(u + du, abs=1e-9)
    assert v2 == pytest.approx(v + dv, abs=1e-9)


def test_intercept_midpoint():
    m = MarkingPoints("Left", [[400.0, 700.0], [410.0, 720.0]])
    assert marking_intercept(m, 710.0) == pytest.approx(405.0, abs=1e-12)


def test_intercept_collinear_any_order(rng):
    v = rng.uniform(500, 800, 10)
    pts = np.column_stack([0.3 * v + 17.0, v])
    for _ in range(20):
        m = MarkingPoints("Right", rng.permutation(pts))
        vb = rng.uniform(v.min(), v.max())
        assert marking_intercept(m, vb) == pytest.approx(0.3 * vb + 17.0, abs=1e-9)


def test_intercept_noise_monte_carlo(rng):
    # symmetric rows around the baseline: the fit at v_base has std sigma / sqrt(K)
    sigma, K = 2.0, 6
    v = 600.0 + np.array([-15.0, -9.0, -3.0, 3.0, 9.0, 15.0, 40.0, -40.0])
    bound = 3 * sigma / np.sqrt(K)
    errs = []
    for _ in range(1000):
        u = -0.2 * v + 900.0 + rng.normal(0, sigma, len(v))
        errs.append(marking_intercept(MarkingPoints("Left", np.column_stack([u, v])), 600.0) - (-0.2 * 600.0 + 900.0))
    errs = np.abs(errs)
    assert np.mean(errs <= bound) >= 0.99
    assert np.sqrt(np.mean(errs**2)) == pytest.approx(sigma / np.sqrt(K), rel=0.1)


def test_intercept_errors():
    with pytest.raises(InsufficientPoints):
        marking_intercept(MarkingPoints("Left", [[1.0, 2.0]]), 2.0)
    with pytest.raises(InsufficientPoints):
        marking_intercept(MarkingPoints("Left", [[1.0, 2.0], [3.0, 2.0]]), 2.0)
    m = MarkingPoints("Left", [[400.0, 700.0], [410.0, 720.0]])
    assert marking_intercept(m, 770.0) == pytest.approx(435.0)
    with pytest.raises(ExtrapolationTooFar):
        marking_intercept(m, 771.0)


def test_observe():
    f = parse_frames(jsonl(frame_dict(0, boxes=[[480.0, 600.0, 520.0, 710.0]])))[0]
    obs = observe(f.boxes[0], f)
    assert (obs.u_o, obs.v_base, obs.u_1, obs.u_2) == pytest.approx((500.0, 710.0, 405.0, 595.0))


def test_marking_side_validated():
    with pytest.raises(ValueError):
        MarkingPoints("Middle", [])
    assert isinstance(DetectionFrame(0, 0.0, (), MarkingPoints("Left", []), MarkingPoints("Right", [])).to_dict(), dict)

from pathlib import Path

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from stviz import SpatiotemporalTensor
from stviz import tensor as stt
from stviz.errors import FormatError, ShapeError
from stviz.flowviz import (FlowVideo, encode_appearance, encode_flow, encode_flow_hsv, ppm_bytes, read_ppm,
                           write_frames)

DATA = Path(__file__).parent / "data"
flows = st.tuples(st.integers(1, 4), st.integers(1, 4), st.integers(1, 3)).flatmap(
    lambda s: arrays(np.float64, s + (2,), elements=st.floats(-50, 50))).map(SpatiotemporalTensor)


def flow(u, v):
    return SpatiotemporalTensor(np.stack([u, v], axis=-1))


def test_zero_and_constant_flow_is_uniform_128():
    for x in (SpatiotemporalTensor.zeros(3, 2, 4, 2), SpatiotemporalTensor.full((2, 2, 2, 2), 0.0)):
        v = encode_flow(x)
        assert len(v.frames) == x.T
        assert all((f == 128).all() for f in v.frames)
    # u = v = m is only possible at zero; a uniform-RGB check for all three modes
    assert (encode_flow(SpatiotemporalTensor.zeros(1, 1, 1, 2), "per_channel").frames[0] == 128).all()


def test_single_pixel_examples():
    assert encode_flow(flow(np.ones((1, 1, 1)), np.zeros((1, 1, 1)))).frames[0].ravel().tolist() == [255, 0, 255]
    assert encode_flow(flow(np.full((1, 1, 1), 3.0), np.full((1, 1, 1), 4.0))).frames[0].ravel().tolist() == \
        [0, 128, 255]


def test_min_max_is_joint_over_frames():
    u = np.zeros((1, 1, 2))
    u[..., 1] = 2.0
    v = encode_flow(flow(u, np.zeros_like(u)))
    assert v.frames[0].ravel().tolist() == [0, 0, 0]
    assert v.frames[1].ravel().tolist() == [255, 0, 255]
    assert v.scale == (0.0, 2.0)


def test_golden_frames_byte_exact():
    x = stt.load(DATA / "golden_flow.stt")
    video = encode_flow(x)
    for k, f in enumerate(video.frames):
        assert ppm_bytes(f) == (DATA / "golden_flow" / f"frame{k:04d}.ppm").read_bytes()


def test_ppm_header_and_size():
    white = np.full((1, 1, 3), 255, np.uint8)
    buf = ppm_bytes(white)
    assert buf == b"P6\n1 1\n255\n\xff\xff\xff"
    img = np.zeros((2, 5, 3), np.uint8)
    assert ppm_bytes(img).startswith(b"P6\n5 2\n255\n")
    with pytest.raises(ShapeError):
        ppm_bytes(np.zeros((2, 2, 3)))


def test_write_frames_count_and_readback(tmp_path):
    x = SpatiotemporalTensor(np.random.default_rng(0).standard_normal((3, 4, 10, 2)))
    video = encode_flow(x)
    paths = write_frames(video, tmp_path / "f")
    assert [p.name for p in paths] == [f"frame{k:04d}.ppm" for k in range(10)]
    for p, f in zip(paths, video.frames):
        assert np.array_equal(read_ppm(p), f)
    (tmp_path / "bad.ppm").write_bytes(b"P5\n1 1\n255\n\x00")
    with pytest.raises(FormatError):
        read_ppm(tmp_path / "bad.ppm")


def test_appearance_encoding():
    a = np.zeros((2, 2, 1, 3))
    a[0, 0, 0, 0] = 10
    a[1, 1, 0, 2] = -10
    img = encode_appearance(SpatiotemporalTensor(a))
    assert img.shape == (2, 2, 3)
    assert img[0, 0, 0] == 255 and img[1, 1, 2] == 0 and img[0, 1, 1] == 128
    assert (encode_appearance(SpatiotemporalTensor.full((2, 2, 1, 3), 4.0)) == 128).all()
    with pytest.raises(ShapeError):
        encode_appearance(SpatiotemporalTensor.zeros(2, 2, 2, 3))
    with pytest.raises(ShapeError):
        encode_flow(SpatiotemporalTensor.zeros(2, 2, 2, 3))


def test_per_channel_and_hsv_modes():
    rng = np.random.default_rng(1)
    x = SpatiotemporalTensor(rng.standard_normal((3, 3, 2, 2)))
    pc = encode_flow(x, "per_channel")
    stack = np.stack(pc.frames)
    for c in range(3):
        assert stack[..., c].min() == 0 and stack[..., c].max() == 255
    hsv = encode_flow_hsv(x)
    assert isinstance(hsv, FlowVideo) and len(hsv.frames) == 2
    # pure +u flow is red at full magnitude
    red = encode_flow_hsv(flow(np.array([[[1.0], [0.5]]]), np.zeros((1, 2, 1)))).frames[0]
    assert red[0, 0].tolist() == [255, 0, 0]
    with pytest.raises(ValueError):
        encode_flow(x, "global")


@settings(max_examples=60, deadline=None)
@given(flows)
def test_bytes_span_full_range(x):
    stack = np.stack(encode_flow(x).frames)
    if stack.min() == stack.max():
        assert (stack == 128).all()
    else:
        assert stack.min() == 0 and stack.max() == 255


@settings(max_examples=60, deadline=None)
@given(flows, st.integers(-8, 8))
def test_power_of_two_scaling_is_exact(x, e):
    a = encode_flow(x).frames
    b = encode_flow(x * 2.0 ** e).frames
    assert all(np.array_equal(p, q) for p, q in zip(a, b))


@settings(max_examples=60, deadline=None)
@given(flows, st.floats(1e-3, 1e3))
def test_positive_scaling_moves_bytes_at_most_one(x, s):
    assume(np.abs(x.data).max() * s > 1e-100)
    a = np.stack(encode_flow(x).frames).astype(int)
    b = np.stack(encode_flow(x * s).frames).astype(int)
    assert np.abs(a - b).max() <= 1

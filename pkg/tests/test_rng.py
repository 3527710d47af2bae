import numpy as np
from hypothesis import given, strategies as st

from fwlab.rng import RngStream, stream_id


@given(st.integers(0, 2**70), st.text(max_size=12))
def test_same_key_same_draws(seed, name):
    a, b = RngStream(seed, name), RngStream(seed, name)
    assert a.normal(8).tobytes() == b.normal(8).tobytes()


def test_streams_and_substreams_differ():
    base = RngStream(5, "mc")
    assert not np.array_equal(base.normal(4), RngStream(5, "mc:other").normal(4))
    assert not np.array_equal(RngStream(5, "mc").substream(0).normal(4), RngStream(5, "mc").substream(1).normal(4))
    assert stream_id(3) == 3 and stream_id("a") == stream_id("a") != stream_id("b")


def test_uniform_range():
    u = RngStream(1).uniform(1000)
    assert u.min() >= 0.0 and u.max() < 1.0

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import given, strategies as st

from evofind.errors import EmptyInput, UnsortedInput
from evofind.shape import (
    DEFAULT_SHAPE_SCALE,
    ShapeScale,
    ShapeVector,
    shape_descriptors,
    shape_distance,
    shape_distance_matrix,
    shape_matrix,
)


@dataclass(frozen=True)
class Fn:
    address: int
    size: int


def test_three_function_middle_vector():
    # independent evaluation of the descriptor formulas
    sizes = (100, 200, 300)
    logs = [math.log(1 + s) for s in sizes]
    expected_mean = (logs[0] + logs[2]) / 2
    fns = [Fn(0x1000, 100), Fn(0x2000, 200), Fn(0x3000, 300)]
    mid = shape_descriptors(fns)[1]
    assert mid.log_size == pytest.approx(logs[1], abs=1e-12)
    assert mid.addr_norm == pytest.approx(0.5)
    assert mid.rank_norm == pytest.approx(0.5)
    assert mid.neighborhood_mean == pytest.approx(expected_mean, abs=1e-12)
    assert mid.delta == pytest.approx(logs[1] - expected_mean, abs=1e-12)
    # frozen reference values
    assert mid.to_tuple() == pytest.approx(
        (5.303304908059076, 0.5, 0.5, 5.161115390795068, 0.14218951726400775))


def test_single_function_degenerate_rules():
    vec = shape_descriptors([Fn(0x1000, 100)])[0]
    assert vec.to_tuple() == pytest.approx(
        (4.61512051684126, 0.5, 0.0, 4.61512051684126, 0.0))


def test_equal_sizes_equally_spaced():
    fns = [Fn(0x1000 + i * 0x100, 50) for i in range(5)]
    vectors = shape_descriptors(fns)
    assert all(v.delta == pytest.approx(0.0) for v in vectors)
    assert [v.rank_norm for v in vectors] == pytest.approx(
        [0.0, 0.25, 0.5, 0.75, 1.0])


def test_neighborhood_truncates_at_boundaries():
    sizes = [10, 20, 30, 40, 50]
    fns = [Fn(0x1000 + i * 0x10, s) for i, s in enumerate(sizes)]
    logs = [math.log(1 + s) for s in sizes]
    vectors = shape_descriptors(fns)
    # first function sees only the two functions to its right
    assert vectors[0].neighborhood_mean == pytest.approx(
        (logs[1] + logs[2]) / 2)
    # center sees two on each side
    assert vectors[2].neighborhood_mean == pytest.approx(
        (logs[0] + logs[1] + logs[3] + logs[4]) / 4)


def test_errors():
    with pytest.raises(EmptyInput):
        shape_descriptors([])
    with pytest.raises(UnsortedInput):
        shape_descriptors([Fn(0x2000, 10), Fn(0x1000, 10)])
    with pytest.raises(UnsortedInput):
        shape_descriptors([Fn(0x1000, 10), Fn(0x1000, 10)])


def test_distance_examples():
    a = ShapeVector(1.0, 0.3, 0.4, 1.0, 0.0)
    assert shape_distance(a, a) == 0.0
    b = ShapeVector(1.0, 0.5, 0.4, 1.0, 0.0)
    assert shape_distance(a, b) == pytest.approx(1.0)   # (0.2 / 0.2)^2
    assert ShapeScale().alpha == DEFAULT_SHAPE_SCALE == (1.0, 0.20, 0.20, 1.0, 1.0)


def test_scale_requires_positive_components():
    with pytest.raises(ValueError):
        ShapeScale(alpha=(1.0, 0.0, 0.2, 1.0, 1.0))


vec_strategy = st.builds(
    ShapeVector,
    log_size=st.floats(0, 12, allow_nan=False),
    addr_norm=st.floats(0, 1),
    rank_norm=st.floats(0, 1),
    neighborhood_mean=st.floats(0, 12),
    delta=st.floats(-8, 8),
)


@given(vec_strategy, vec_strategy)
def test_distance_symmetry(a, b):
    assert shape_distance(a, b) == shape_distance(b, a)
    assert shape_distance(a, b) >= 0.0


@given(vec_strategy, vec_strategy)
def test_distance_separation(a, b):
    if a.to_tuple() != b.to_tuple():
        if all(x != y for x, y in zip(a.to_tuple(), b.to_tuple())):
            assert shape_distance(a, b) > 0.0
    else:
        assert shape_distance(a, b) == 0.0


@given(st.integers(1, 40), st.integers(0, 2**32),
       st.integers(1, 1000), st.integers(1, 16))
def test_affine_address_invariance(n, shift, scale, seed):
    rng = np.random.default_rng(seed)
    addrs = np.cumsum(rng.integers(16, 512, size=n))
    sizes = rng.integers(1, 4096, size=n)
    base = shape_descriptors([Fn(int(a), int(s)) for a, s in zip(addrs, sizes)])
    moved = shape_descriptors([Fn(int(a) * scale + shift, int(s))
                               for a, s in zip(addrs, sizes)])
    for u, v in zip(base, moved):
        assert u.to_tuple() == pytest.approx(v.to_tuple(), abs=1e-9)


@given(st.integers(2, 30), st.integers(2, 9), st.integers(1, 16))
def test_size_scaling_preserves_log_order(n, factor, seed):
    rng = np.random.default_rng(seed)
    addrs = np.cumsum(rng.integers(16, 512, size=n))
    sizes = rng.integers(1, 4096, size=n)
    base = shape_descriptors([Fn(int(a), int(s)) for a, s in zip(addrs, sizes)])
    scaled = shape_descriptors([Fn(int(a), int(s) * factor)
                                for a, s in zip(addrs, sizes)])
    base_order = np.argsort([v.log_size for v in base], kind="stable")
    scaled_order = np.argsort([v.log_size for v in scaled], kind="stable")
    assert list(base_order) == list(scaled_order)


def test_distance_matrix_matches_scalar():
    rng = np.random.default_rng(7)
    a = [ShapeVector(*rng.uniform(0, 3, size=5)) for _ in range(6)]
    b = [ShapeVector(*rng.uniform(0, 3, size=5)) for _ in range(4)]
    mat = shape_distance_matrix(shape_matrix(a), shape_matrix(b))
    for i, u in enumerate(a):
        for j, v in enumerate(b):
            assert mat[i, j] == pytest.approx(shape_distance(u, v), rel=1e-12)


def test_delta_identity_holds_exactly():
    rng = np.random.default_rng(11)
    addrs = np.cumsum(rng.integers(16, 400, size=50))
    fns = [Fn(int(a), int(rng.integers(1, 5000))) for a in addrs]
    for v in shape_descriptors(fns):
        assert v.delta == v.log_size - v.neighborhood_mean
        assert 0.0 <= v.addr_norm <= 1.0
        assert 0.0 <= v.rank_norm <= 1.0
        assert v.log_size >= 0.0

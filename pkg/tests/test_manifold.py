import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rmgflow import manifold as mf
from rmgflow.errors import (
    AntipodalPoints,
    DimensionMismatch,
    InvalidConfig,
    NotTangent,
)

ALL_KINDS = {
    "sphere2": mf.ManifoldSpec([mf.sphere(2)]),
    "sphere3": mf.ManifoldSpec([mf.sphere(3)]),
    "preshape53": mf.ManifoldSpec([mf.preshape(5, 3)]),
    "product": mf.ManifoldSpec([mf.euclidean(3), mf.sphere(3, multiplicity=22)]),
}


def _random_pair(m, rng, n=32, max_norm=2.0):
    x = mf.random_point(m, rng, size=n)
    v = mf.random_tangent(m, x, rng, max_norm=max_norm)
    return x, v


# ---------------------------------------------------------------------------
# spec construction and serialization
# ---------------------------------------------------------------------------


def test_factor_validation():
    with pytest.raises(InvalidConfig):
        mf.euclidean(0)
    with pytest.raises(InvalidConfig):
        mf.sphere(0)
    with pytest.raises(InvalidConfig):
        mf.preshape(1, 3)
    with pytest.raises(InvalidConfig):
        mf.FactorSpec(kind="torus", dim=2)
    with pytest.raises(InvalidConfig):
        mf.sphere(3, multiplicity=0)
    with pytest.raises(InvalidConfig):
        mf.ManifoldSpec([])


def test_ambient_dimensions():
    assert mf.euclidean(3).ambient_dim == 3
    assert mf.sphere(3).ambient_dim == 4
    assert mf.sphere(3, multiplicity=22).ambient_dim == 88
    assert mf.preshape(5, 3).ambient_dim == 15
    m = mf.ManifoldSpec([mf.euclidean(3), mf.sphere(3, multiplicity=22)])
    assert m.total_ambient_dim == 91


def test_json_roundtrip():
    doc = {"factors": [{"kind": "sphere", "dim": 3, "multiplicity": 22},
                       {"kind": "euclidean", "dim": 3, "multiplicity": 1}]}
    m = mf.ManifoldSpec.from_json_dict(doc)
    assert m.to_json_dict() == doc
    m2 = mf.ManifoldSpec.from_json(m.to_json())
    assert m2 == m
    p = mf.ManifoldSpec([mf.preshape(5, 3)])
    assert mf.ManifoldSpec.from_json(p.to_json()) == p


def test_segments_layout():
    m = mf.ManifoldSpec([mf.euclidean(3), mf.sphere(3, multiplicity=2)])
    assert [s.offset for s in m.segments] == [0, 3, 7]
    assert [s.length for s in m.segments] == [3, 4, 4]
    assert m.layout == ((0, 3), (3, 8))


# ---------------------------------------------------------------------------
# exp / log / geodesic
# ---------------------------------------------------------------------------


def test_euclidean_exp_is_addition():
    m = mf.ManifoldSpec([mf.euclidean(3)])
    out = mf.exp_map(m, [1.0, 2.0, 3.0], [1.0, 0.0, -1.0])
    assert np.array_equal(out, [2.0, 2.0, 2.0])


def test_sphere_log_known_value():
    m = mf.ManifoldSpec([mf.sphere(2)])
    v = mf.log_map(m, [1.0, 0.0, 0.0], [0.0, 1.0, 0.0])
    assert np.allclose(v, [0.0, np.pi / 2, 0.0], atol=1e-12)


def test_sphere_geodesic_midpoint():
    m = mf.ManifoldSpec([mf.sphere(2)])
    mid = mf.geodesic(m, [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], 0.5)
    r = np.sqrt(0.5)
    assert np.allclose(mid, [r, r, 0.0], atol=1e-12)


def test_euclidean_geodesic_is_linear():
    m = mf.ManifoldSpec([mf.euclidean(2)])
    p = mf.geodesic(m, [0.0, 0.0], [2.0, 4.0], 0.25)
    assert np.array_equal(p, [0.5, 1.0])
    v = mf.geodesic_velocity(m, [0.0, 0.0], [2.0, 4.0], 0.7)
    assert np.array_equal(v, [2.0, 4.0])


@pytest.mark.parametrize("name", list(ALL_KINDS))
def test_log_exp_inverse(name, rng):
    m = ALL_KINDS[name]
    x, v = _random_pair(m, rng)
    y = mf.exp_map(m, x, v)
    assert np.max(np.abs(mf.log_map(m, x, y) - v)) < 1e-8
    assert np.max(np.abs(mf.exp_map(m, x, mf.log_map(m, x, y)) - y)) < 1e-8


@pytest.mark.parametrize("name", list(ALL_KINDS))
def test_geodesic_endpoints(name, rng):
    m = ALL_KINDS[name]
    x, v = _random_pair(m, rng)
    y = mf.exp_map(m, x, v)
    assert np.max(np.abs(mf.geodesic(m, x, y, 0.0) - x)) < 1e-12
    assert np.max(np.abs(mf.geodesic(m, x, y, 1.0) - y)) < 1e-12


@pytest.mark.parametrize("name", list(ALL_KINDS))
def test_distance_equals_log_norm(name, rng):
    m = ALL_KINDS[name]
    x, v = _random_pair(m, rng)
    y = mf.exp_map(m, x, v)
    d = mf.distance(m, x, y)
    assert np.allclose(d, np.linalg.norm(mf.log_map(m, x, y), axis=-1), atol=1e-9)


def test_small_angle_branch(rng):
    m = mf.ManifoldSpec([mf.sphere(3)])
    x = mf.random_point(m, rng, size=8)
    v = 1e-8 * mf.random_tangent(m, x, rng)
    y = mf.exp_map(m, x, v)
    assert np.max(np.abs(np.linalg.norm(y, axis=-1) - 1.0)) < 1e-12
    assert np.max(np.abs(mf.log_map(m, x, y) - v)) < 1e-14


def test_antipodal_rejected():
    m = mf.ManifoldSpec([mf.sphere(2)])
    with pytest.raises(AntipodalPoints):
        mf.log_map(m, [1.0, 0.0, 0.0], [-1.0, 0.0, 0.0])
    with pytest.raises(AntipodalPoints):
        mf.geodesic(m, [0.0, 0.0, 1.0], [0.0, 0.0, -1.0], 0.5)


def test_exp_rejects_non_tangent():
    m = mf.ManifoldSpec([mf.sphere(2)])
    with pytest.raises(NotTangent):
        mf.exp_map(m, [1.0, 0.0, 0.0], [0.5, 0.1, 0.0])


def test_dimension_mismatch():
    m = mf.ManifoldSpec([mf.sphere(2)])
    with pytest.raises(DimensionMismatch):
        mf.log_map(m, [1.0, 0.0], [0.0, 1.0])


# ---------------------------------------------------------------------------
# tangent projection
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("name", list(ALL_KINDS))
def test_projection_idempotent_and_tangent(name, rng):
    m = ALL_KINDS[name]
    x = mf.random_point(m, rng, size=16)
    a = rng.standard_normal(x.shape)
    p1 = mf.project_tangent(m, x, a)
    p2 = mf.project_tangent(m, x, p1)
    assert np.max(np.abs(p2 - p1)) < 1e-12
    assert mf.tangency_defect(m, x, p1) < 1e-12


@pytest.mark.parametrize("name", list(ALL_KINDS))
def test_projection_self_adjoint(name, rng):
    m = ALL_KINDS[name]
    x = mf.random_point(m, rng)
    a = rng.standard_normal(x.shape)
    b = rng.standard_normal(x.shape)
    lhs = np.dot(mf.project_tangent(m, x, a), b)
    rhs = np.dot(a, mf.project_tangent(m, x, b))
    assert abs(lhs - rhs) < 1e-10


def test_preshape_projection_centers(rng):
    m = mf.ManifoldSpec([mf.preshape(5, 3)])
    x = mf.random_point(m, rng)
    a = rng.standard_normal(15)
    p = mf.project_tangent(m, x, a).reshape(5, 3)
    assert np.max(np.abs(p.mean(axis=0))) < 1e-12


@given(st.lists(st.floats(-1e6, 1e6), min_size=4, max_size=4),
       st.lists(st.floats(-1e6, 1e6), min_size=4, max_size=4))
def test_euclidean_projection_identity(xs, vs):
    m = mf.ManifoldSpec([mf.euclidean(4)])
    out = mf.project_tangent(m, np.array(xs), np.array(vs))
    assert np.array_equal(out, np.array(vs))


# ---------------------------------------------------------------------------
# validation and sampling
# ---------------------------------------------------------------------------


def test_validate_point_flags_violations():
    m = mf.ManifoldSpec([mf.sphere(2)])
    assert mf.validate_point(m, [1.0, 0.0, 0.0]) == []
    bad = mf.validate_point(m, [1.1, 0.0, 0.0])
    assert bad and bad[0].constraint == "unit_norm"
    pre = mf.ManifoldSpec([mf.preshape(3, 2)])
    off_center = np.ones(6) / np.sqrt(6.0)
    names = {v.constraint for v in mf.validate_point(pre, off_center)}
    assert "centroid" in names


def test_wrapped_gaussian_stays_on_manifold(rng):
    m = mf.ManifoldSpec([mf.euclidean(3), mf.sphere(3, multiplicity=4)])
    mean = mf.random_point(m, rng)
    g = mf.WrappedGaussianSpec(m, mean, 0.3)
    x = mf.sample_wrapped_gaussian(m, g, rng, size=200)
    assert x.shape == (200, m.total_ambient_dim)
    assert mf.max_constraint_deviation(m, x) < 1e-9


def test_wrapped_gaussian_zero_scale_is_mean(rng):
    m = mf.ManifoldSpec([mf.sphere(2)])
    mean = np.array([0.0, 0.0, 1.0])
    g = mf.WrappedGaussianSpec(m, mean, 0.0)
    x = mf.sample_wrapped_gaussian(m, g, rng, size=5)
    assert np.max(np.abs(x - mean)) < 1e-12


def test_wrapped_gaussian_per_factor_scales():
    m = mf.ManifoldSpec([mf.euclidean(2), mf.sphere(2)])
    mean = np.array([0.0, 0.0, 1.0, 0.0, 0.0])
    g = mf.WrappedGaussianSpec(m, mean, (2.0, 0.1))
    assert g.per_factor_scale == (2.0, 0.1)
    with pytest.raises(DimensionMismatch):
        mf.WrappedGaussianSpec(m, mean, (1.0,))
    with pytest.raises(InvalidConfig):
        mf.WrappedGaussianSpec(m, mean, -1.0)


def test_sampling_deterministic(rng):
    m = mf.ManifoldSpec([mf.sphere(3)])
    g = mf.WrappedGaussianSpec(m, np.array([1.0, 0.0, 0.0, 0.0]), 0.5)
    a = mf.sample_wrapped_gaussian(m, g, np.random.default_rng(7), size=10)
    b = mf.sample_wrapped_gaussian(m, g, np.random.default_rng(7), size=10)
    assert np.array_equal(a, b)

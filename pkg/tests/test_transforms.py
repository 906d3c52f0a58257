import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from posegeom.errors import DegenerateInput
from posegeom.transforms import (
    AnisoSimilarity,
    RigidTransform,
    canonical_quat,
    geodesic_angle_deg,
    is_rotation,
    quat_to_rot,
    random_rotation,
    rot_from_6d,
    rot_to_6d,
    rot_to_quat,
    rot_z,
    sa3_apply,
    sa3_inverse_apply,
    se3_compose,
    se3_inverse,
)

seeds = st.integers(0, 2**32 - 1)


def rot_of(seed):
    return random_rotation(np.random.default_rng(seed))


def test_6d_identity_seed():
    np.testing.assert_array_equal(rot_from_6d([1, 0, 0, 0, 1, 0]), np.eye(3))


def test_6d_removes_scale_and_shear():
    np.testing.assert_allclose(rot_from_6d([2, 0, 0, 1, 1, 0]), np.eye(3), atol=1e-15)


def test_to_6d_examples():
    np.testing.assert_array_equal(rot_to_6d(np.eye(3)), [1, 0, 0, 0, 1, 0])
    np.testing.assert_allclose(rot_to_6d(rot_z(90)), [0, 1, 0, -1, 0, 0], atol=1e-15)


@pytest.mark.parametrize("v", [[0, 0, 0, 0, 1, 0], [1, 0, 0, 2, 0, 0], [1, 0, 0, -1, 1e-9, 0]])
def test_6d_degenerate(v):
    with pytest.raises(DegenerateInput):
        rot_from_6d(v)


@settings(max_examples=200, deadline=None)
@given(seeds)
def test_6d_round_trip(seed):
    r = rot_of(seed)
    np.testing.assert_allclose(rot_from_6d(rot_to_6d(r)), r, atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=6, max_size=6))
def test_6d_output_is_rotation(v):
    v = np.array(v)
    a, b = v[:3], v[3:]
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < 1e-6 or nb < 1e-6 or np.linalg.norm(np.cross(a, b)) / (na * nb) < 1e-5:
        return
    r = rot_from_6d(v)
    assert is_rotation(r)
    # first column is the normalized first seed
    np.testing.assert_allclose(r[:, 0], a / na, atol=1e-12)


def test_quat_examples():
    np.testing.assert_array_equal(quat_to_rot([1, 0, 0, 0]), np.eye(3))
    np.testing.assert_array_equal(quat_to_rot([0, 1, 0, 0]), np.diag([1.0, -1.0, -1.0]))


@settings(max_examples=200, deadline=None)
@given(seeds)
def test_quat_round_trip(seed):
    rng = np.random.default_rng(seed)
    q = canonical_quat(rng.standard_normal(4))
    np.testing.assert_allclose(rot_to_quat(quat_to_rot(q)), q, atol=1e-12)
    r = rot_of(seed)
    np.testing.assert_allclose(quat_to_rot(rot_to_quat(r)), r, atol=1e-12)


def test_canonical_quat_sign():
    np.testing.assert_array_equal(canonical_quat([-1, 0, 0, 0]), [1, 0, 0, 0])
    np.testing.assert_array_equal(canonical_quat([0, 0, -2, 0]), [0, 0, 1, 0])


def test_sa3_examples():
    ident = AnisoSimilarity(np.eye(3), [1, 1, 1], [0, 0, 0])
    np.testing.assert_array_equal(sa3_apply(ident, [[0.5, 0, 0]]), [[0.5, 0, 0]])
    p = AnisoSimilarity(np.eye(3), [2, 2, 2], [0, 0, 1])
    np.testing.assert_allclose(sa3_apply(p, [[0.1, 0.2, 0.3]]), [[0.2, 0.4, 1.6]], atol=1e-15)
    np.testing.assert_allclose(sa3_inverse_apply(p, [[0.2, 0.4, 1.6]]), [[0.1, 0.2, 0.3]], atol=1e-15)


@settings(max_examples=100, deadline=None)
@given(seeds)
def test_sa3_against_matrix_product(seed):
    rng = np.random.default_rng(seed)
    r, s, t = rot_of(seed), rng.uniform(0.05, 3, 3), rng.normal(size=3)
    pts = rng.uniform(-0.5, 0.5, (7, 3))
    p = AnisoSimilarity(r, s, t)
    expected = (r @ np.diag(s) @ pts.T).T + t
    np.testing.assert_allclose(sa3_apply(p, pts), expected, atol=1e-13)
    np.testing.assert_allclose(sa3_inverse_apply(p, sa3_apply(p, pts)), pts, atol=1e-12)


def test_se3_examples():
    x = RigidTransform(rot_z(20), [1, 2, 3])
    y = se3_compose(RigidTransform(), x)
    np.testing.assert_array_equal(y.r, x.r)
    np.testing.assert_array_equal(y.t, x.t)
    a, b = RigidTransform(np.eye(3), [1, 0, 0]), RigidTransform(np.eye(3), [0, 2, 5])
    np.testing.assert_array_equal(se3_compose(a, b).t, [1, 2, 5])


@settings(max_examples=50, deadline=None)
@given(seeds)
def test_se3_chain_vs_homogeneous(seed):
    rng = np.random.default_rng(seed)
    chain = [RigidTransform(random_rotation(rng), rng.normal(size=3)) for _ in range(5)]
    acc = chain[0]
    ref = oracles.homogeneous(chain[0].r.tolist(), chain[0].t.tolist())
    for tf in chain[1:]:
        acc = se3_compose(acc, tf)
        ref = oracles.matmul(ref, oracles.homogeneous(tf.r.tolist(), tf.t.tolist()))
    np.testing.assert_allclose(acc.as_matrix(), np.array(ref), atol=1e-12)
    ident = se3_compose(acc, se3_inverse(acc))
    np.testing.assert_allclose(ident.as_matrix(), np.eye(4), atol=1e-12)


def test_geodesic_examples():
    r = rot_of(7)
    assert geodesic_angle_deg(r, r) < 1e-12
    assert geodesic_angle_deg(r, r @ rot_z(30)) == pytest.approx(30.0, abs=1e-10)
    assert geodesic_angle_deg(np.eye(3), rot_z(180)) == pytest.approx(180.0, abs=1e-10)


@settings(max_examples=200, deadline=None)
@given(seeds, seeds)
def test_geodesic_vs_quaternion_oracle(s1, s2):
    a, b = rot_of(s1), rot_of(s2)
    ref = oracles.quat_angle_deg(rot_to_quat(a).tolist(), rot_to_quat(b).tolist())
    got = geodesic_angle_deg(a, b)
    # arccos in the oracle only resolves about 1e-6 deg near 0
    assert got == pytest.approx(ref, abs=1e-5)
    assert got == pytest.approx(geodesic_angle_deg(b, a), abs=1e-12)


def test_rotation_validation():
    with pytest.raises(ValueError):
        RigidTransform(np.diag([1.0, 1.0, -1.0]), [0, 0, 0])
    with pytest.raises(ValueError):
        AnisoSimilarity(np.eye(3), [1, 0, 1], [0, 0, 0])


def test_rigid_dict_round_trip():
    p = AnisoSimilarity(rot_of(3), [0.1, 0.2, 0.3], [1, 2, 3])
    q = AnisoSimilarity.from_dict(p.to_dict())
    np.testing.assert_array_equal(q.r, p.r)
    np.testing.assert_array_equal(q.scale, p.scale)

from math import comb, factorial

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from noether_lnn.invariants import (
    SymmetrySpec,
    apply_symmetry_layer,
    epsilon_contraction,
    feature_count,
    feature_layout,
    invariant_set,
    levi_civita,
)

from support import random_rotation, rotate_particles

TWO_PARTICLE_COUNTS = {"none": 16, "rotational": 11, "translational": 12, "roto-translational": 6}


@pytest.mark.parametrize("kind,count", TWO_PARTICLE_COUNTS.items())
def test_two_particle_feature_counts(kind, count):
    assert feature_count(SymmetrySpec(kind, D=4, particles=2)) == count


def test_single_particle_feature_counts():
    assert feature_count(SymmetrySpec("kepler-rotational")) == 3
    assert feature_count(SymmetrySpec("schwarzschild-rotational")) == 4
    assert feature_count(SymmetrySpec("none", D=3)) == 6
    # coordinate time is dropped, its rate is kept
    assert feature_count(SymmetrySpec("none", D=3, spacetime=True)) == 7


def test_three_vectors_in_three_dimensions():
    u, v, w = np.array([1.0, 2, 0]), np.array([0.0, 1, 3]), np.array([2.0, 0, 1])
    out = np.asarray(invariant_set([u, v, w]))
    expected = [u @ u, u @ v, u @ w, v @ v, v @ w, w @ w, u @ np.cross(v, w)]
    np.testing.assert_allclose(out, expected, rtol=1e-15)


def test_standard_basis():
    out = np.asarray(invariant_set(list(np.eye(3))))
    np.testing.assert_array_equal(out, [1, 0, 0, 1, 0, 1, 1])


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6), st.integers(2, 5))
def test_invariant_set_length(n, D):
    vectors = list(np.random.default_rng(n * 10 + D).normal(size=(n, D)))
    assert len(invariant_set(vectors)) == n * (n + 1) // 2 + comb(n, D)


@pytest.mark.parametrize("D", [2, 3, 4, 5])
def test_epsilon_contraction_is_determinant(D):
    A = np.random.default_rng(D).normal(size=(D, D))
    assert float(epsilon_contraction(A)) == pytest.approx(np.linalg.det(A), rel=1e-12)
    perms, signs = levi_civita(D)
    assert len(perms) == len(signs) == factorial(D)
    assert signs.sum() == 0


def test_kepler_layer_on_unit_vectors():
    spec = SymmetrySpec("kepler-rotational")
    np.testing.assert_array_equal(apply_symmetry_layer(spec, np.array([1.0, 0, 0]), np.array([0.0, 1, 0])), [1, 1, 0])


def test_schwarzschild_layer_drops_coordinate_time():
    spec = SymmetrySpec("schwarzschild-rotational")
    out = apply_symmetry_layer(spec, np.array([2.0, 0, 0, 123.0]), np.array([0.0, 0.5, 0, 1.0]))
    np.testing.assert_array_equal(out, [1, 4, 0.25, 0])


def test_layout_order_and_descriptors():
    assert [str(x) for x in feature_layout(SymmetrySpec("kepler-rotational"))] == ["dot(q,q)", "dot(qdot,qdot)", "dot(q,qdot)"]
    rot = [str(x) for x in feature_layout(SymmetrySpec("rotational", D=4, particles=2))]
    assert rot[0] == "dot(x1,x1)" and rot[-1] == "epsilon(x1,x2,xdot1,xdot2)"
    assert sum(s.startswith("epsilon") for s in rot) == 1
    assert feature_layout(SymmetrySpec("rotational", D=4, particles=2)) == feature_layout(SymmetrySpec("rotational", D=4, particles=2))
    raw = [str(x) for x in feature_layout(SymmetrySpec("translational", D=2, particles=2))]
    assert raw == ["raw(x1-x2[0])", "raw(x1-x2[1])", "raw(xdot1[0])", "raw(xdot1[1])", "raw(xdot2[0])", "raw(xdot2[1])"]


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(kind="kepler-rotational", D=4),
        dict(kind="schwarzschild-rotational", particles=2),
        dict(kind="translational", particles=1),
        dict(kind="spin"),
        dict(kind="none", D=0),
    ],
)
def test_invalid_specs(kwargs):
    with pytest.raises(ValueError):
        SymmetrySpec(**kwargs)


def test_layer_rejects_wrong_length():
    with pytest.raises(ValueError):
        apply_symmetry_layer(SymmetrySpec("kepler-rotational"), np.zeros(4), np.zeros(4))


def _rotated(spec, R, q, qdot):
    if spec.spacetime:
        return np.append(R @ q[:3], q[3]), np.append(R @ qdot[:3], qdot[3])
    return rotate_particles(R, q, spec.particles), rotate_particles(R, qdot, spec.particles)


ROTATIONAL = [
    SymmetrySpec("kepler-rotational"),
    SymmetrySpec("schwarzschild-rotational"),
    SymmetrySpec("rotational", D=3, particles=1),
    SymmetrySpec("rotational", D=4, particles=2),
    SymmetrySpec("roto-translational", D=4, particles=2),
    SymmetrySpec("rotational", D=2, particles=2),
]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(ROTATIONAL))
def test_rotation_invariance(seed, spec):
    rng = np.random.default_rng(seed)
    q, qdot = rng.normal(size=spec.state_dim), rng.normal(size=spec.state_dim)
    R = random_rotation(rng, spec.D)
    before = np.asarray(apply_symmetry_layer(spec, q, qdot))
    after = np.asarray(apply_symmetry_layer(spec, *_rotated(spec, R, q, qdot)))
    np.testing.assert_allclose(after, before, rtol=1e-10, atol=1e-10 * np.max(np.abs(before)))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(ROTATIONAL))
def test_reflection_flips_only_epsilon_features(seed, spec):
    rng = np.random.default_rng(seed)
    q, qdot = rng.normal(size=spec.state_dim), rng.normal(size=spec.state_dim)
    P = random_rotation(rng, spec.D, reflect=True)
    sign = np.array([-1.0 if d.kind == "epsilon" else 1.0 for d in feature_layout(spec)])
    before = np.asarray(apply_symmetry_layer(spec, q, qdot))
    after = np.asarray(apply_symmetry_layer(spec, *_rotated(spec, P, q, qdot)))
    np.testing.assert_allclose(after, sign * before, rtol=1e-10, atol=1e-10 * np.max(np.abs(before)))


@pytest.mark.parametrize("kind", ["translational", "roto-translational"])
def test_translation_is_bit_identical_on_dyadic_grid(kind):
    # with dyadic coordinates x1 - x2 is exact before and after the shift
    spec = SymmetrySpec(kind, D=4, particles=2)
    rng = np.random.default_rng(7)
    for _ in range(200):
        q = rng.integers(-64, 64, size=8) / 16
        qdot = rng.normal(size=8)
        shift = rng.integers(-64, 64, size=4) / 16
        out = apply_symmetry_layer(spec, q + np.tile(shift, 2), qdot)
        assert np.array_equal(np.asarray(out), np.asarray(apply_symmetry_layer(spec, q, qdot)))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["translational", "roto-translational"]))
def test_translation_invariance_on_random_states(seed, kind):
    spec = SymmetrySpec(kind, D=4, particles=2)
    rng = np.random.default_rng(seed)
    q, qdot, shift = rng.normal(size=8), rng.normal(size=8), rng.normal(size=4) * 3
    before = np.asarray(apply_symmetry_layer(spec, q, qdot))
    after = np.asarray(apply_symmetry_layer(spec, q + np.tile(shift, 2), qdot))
    np.testing.assert_allclose(after, before, rtol=1e-10, atol=1e-10 * np.max(np.abs(before)))

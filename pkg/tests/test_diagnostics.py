import json

import numpy as np
import pytest

from noether_lnn import PhaseState
from noether_lnn.diagnostics import (
    ConservationReport,
    ZeroNormalizer,
    charge_drift,
    conservation_report,
    model_charges,
    momentum_drift_zero_normalized,
    relative_drift,
    trajectory_divergence,
    true_charges_fn,
)
from noether_lnn.dynamics import acceleration_map
from noether_lnn.integrator import Trajectory, integrate
from noether_lnn.network import init_model
from noether_lnn.systems import Kepler, TwoParticle, reference_trajectory, true_lagrangian

from support import random_rotation


def _traj(q, qdot, dt=0.1):
    q, qdot = np.atleast_2d(q), np.atleast_2d(qdot)
    return Trajectory(np.arange(len(q)) * dt, q, qdot, dt)


def test_constant_charges_have_zero_drift():
    assert np.all(relative_drift(np.tile([0.0, 0.0, 1.0], (5, 1))) == 0)


def test_drift_formula():
    np.testing.assert_allclose(relative_drift([[0, 0, 1], [0, 0, 1.001]]), [0, 1e-3], rtol=1e-12)


def test_momentum_drift_formula():
    M = np.array([[0.0, 0, 0, 0], [0.1, 0, 0, 0]])
    np.testing.assert_allclose(relative_drift(M, normalizer=[1.0, 0, 0, 0]), [0, 0.1])


def test_zero_normalizer():
    with pytest.raises(ZeroNormalizer):
        relative_drift(np.zeros((3, 4)))


def test_charge_drift_of_kepler_reference():
    system = Kepler()
    traj = reference_trajectory(system, 20.0)
    drift_true = charge_drift(traj, true_charges_fn(system))
    drift_auto = charge_drift(traj, model_charges(true_lagrangian(system), system.layout))
    assert drift_true.max() < 1e-6
    np.testing.assert_allclose(drift_auto, drift_true, atol=1e-12)


def test_charge_drift_is_fourth_order_in_dt():
    # a generic smooth flow; the exact Kepler orbit started at periapsis
    # shows superconvergent (order 5) end-point drift over a partial orbit
    system = Kepler()
    model = init_model(10, system.symmetry(True))
    charges = model_charges(model, model.symmetry)
    ends = []
    for dt in (0.02, 0.01):
        traj = integrate(acceleration_map(model), system.initial_state(), 10.0, dt)
        ends.append(charge_drift(traj, charges)[-1])
    assert 2**3.5 <= ends[0] / ends[1] <= 2**4.5


def test_exact_kepler_drift_vanishes_with_dt():
    system = Kepler()
    accel = acceleration_map(true_lagrangian(system))
    ends = [charge_drift(integrate(accel, system.initial_state(), 5.0, dt), true_charges_fn(system))[-1] for dt in (0.02, 0.01)]
    assert ends[1] < ends[0] / 2**3.5


def test_drift_is_rotation_invariant():
    system = Kepler()
    traj = reference_trajectory(system, 10.0)
    R = random_rotation(np.random.default_rng(0), 3)
    rotated = Trajectory(traj.times, traj.q @ R.T, traj.qdot @ R.T, traj.dt)
    charges = true_charges_fn(system)
    np.testing.assert_allclose(charge_drift(rotated, charges), charge_drift(traj, charges), rtol=1e-6, atol=1e-15)


def test_exact_momentum_conservation_gives_zero_series():
    system = TwoParticle()
    v = np.array([0.2, 0.1, 0, 0, -0.25, -0.125, 0, 0])
    q0 = np.concatenate([[0.1, 0, 0, 0], [0, 0.1, 0, 0]])
    traj = _traj(np.tile(q0, (3, 1)), np.tile(v, (3, 1)))
    drift = momentum_drift_zero_normalized(traj, system, true_lagrangian(system))
    assert drift.defined
    assert np.all(drift.true == 0) and np.all(drift.nn == 0)


def test_undefined_momentum_drift_is_flagged():
    system = TwoParticle()
    traj = _traj(np.tile(np.arange(8) / 10, (2, 1)), np.zeros((2, 8)))
    drift = momentum_drift_zero_normalized(traj, system, true_lagrangian(system))
    assert not drift.defined and np.all(np.isnan(drift.nn))


def test_two_particle_reference_momentum_drift():
    system = TwoParticle()
    traj = reference_trajectory(system)
    drift = momentum_drift_zero_normalized(traj, system, true_lagrangian(system))
    assert drift.true.max() <= 1e-8 and drift.nn.max() <= 1e-8


def test_divergence():
    a = _traj(np.zeros((4, 3)), np.zeros((4, 3)))
    assert np.all(trajectory_divergence(a, a) == 0)
    b = _traj(np.tile([3.0, 4.0, 0.0], (4, 1)), np.zeros((4, 3)))
    np.testing.assert_array_equal(trajectory_divergence(a, b), [5, 5, 5, 5])
    with pytest.raises(ValueError):
        trajectory_divergence(a, _traj(np.zeros((3, 3)), np.zeros((3, 3))))


def test_perturbation_norm_statistics():
    # E ||N(0, s^2 I_3)||^2 = 3 s^2
    rng = np.random.default_rng(0)
    s = 1e-3
    sq = np.sum(rng.normal(0, s, size=(20000, 3)) ** 2, axis=1)
    assert sq.mean() == pytest.approx(3 * s**2, rel=0.03)


def test_report_columns_and_decimation(tmp_path):
    system = Kepler()
    traj = reference_trajectory(system, 100.0)
    twin = integrate(acceleration_map(true_lagrangian(system)), PhaseState(traj.q[0] + 1e-3, traj.qdot[0]), 100.0, traj.dt)
    report = conservation_report(traj, system, true_lagrangian(system), twin, source="test")
    assert list(report.columns()) == ["t", "dL_nn", "dL_true", "dq", "dqdot"]
    assert report.dq[0] == pytest.approx(np.sqrt(3) * 1e-3)
    report.write(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "t,dL_nn,dL_true,dq,dqdot"
    assert len(lines) - 1 <= 4096
    assert json.loads((tmp_path / "r.csv.json").read_text())["source"] == "test"
    report.to_csv(tmp_path / "full.csv", max_points=None)
    assert len((tmp_path / "full.csv").read_text().splitlines()) == len(traj) + 1


def test_two_particle_report_has_momentum_columns():
    system = TwoParticle()
    traj = reference_trajectory(system)
    report = conservation_report(traj, system, true_lagrangian(system))
    assert list(report.columns()) == ["t", "dL_nn", "dL_true", "dM_nn", "dM_true"]
    assert isinstance(report, ConservationReport) and report.metadata["dM_defined"]

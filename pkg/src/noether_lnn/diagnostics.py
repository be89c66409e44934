"""Conservation and stability metrics for simulated trajectories."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from noether_lnn.dynamics import momenta, noether_charge_series
from noether_lnn.integrator import Trajectory, write_csv, write_metadata

log = logging.getLogger(__name__)

NORM_FLOOR = 1e-14
MAX_REPORT_POINTS = 4096


class ZeroNormalizer(ZeroDivisionError):
    """The initial charge is too small to normalise by."""


class MomentumDrift(NamedTuple):
    nn: np.ndarray
    true: np.ndarray
    defined: bool


def relative_drift(C, normalizer=None) -> np.ndarray:
    """||C(t) - C(0)|| / ||normalizer||, with normalizer defaulting to C(0)."""
    C = np.atleast_2d(np.asarray(C, dtype=np.float64))
    ref = C[0] if normalizer is None else np.asarray(normalizer, dtype=np.float64)
    scale = np.linalg.norm(ref)
    if scale < NORM_FLOOR:
        raise ZeroNormalizer(f"normaliser has norm {scale:.3e} < {NORM_FLOOR:g}")
    return np.linalg.norm(C - C[0], axis=1) / scale


def charge_drift(traj: Trajectory, charge_fn) -> np.ndarray:
    """delta(t) for the charges ``charge_fn(q, qdot)`` evaluated on stacked states (N, d)."""
    return relative_drift(charge_fn(traj.q, traj.qdot))


def model_charges(model, layout):
    """Vectorised Noether charges of a (learned or true) Lagrangian."""
    return lambda q, qdot: noether_charge_series(model, q, qdot, layout)


def true_charges_fn(system):
    return lambda q, qdot: system.true_charge_values(np.asarray(q), np.asarray(qdot))


def angular_part(system, C):
    """Angular-momentum components of a charge array (drops M for two particles)."""
    if system.layout.particles == 2:
        return C[:, system.D:]
    return C


def momentum_drift_zero_normalized(traj: Trajectory, system, model) -> MomentumDrift:
    """Linear-momentum drift normalised by the first particle's momentum at t=0.

    The total momentum starts at zero, so it cannot normalise itself.  If the
    first-particle momentum is also ~0 the series are nan and ``defined`` is False.
    """
    if system.layout.particles != 2:
        raise ValueError("momentum drift is defined for the two-particle system")
    D = system.D
    C_nn = noether_charge_series(model, traj.q, traj.qdot, system.layout)[:, :D]
    C_true = system.true_charge_values(traj.q, traj.qdot)[:, :D]
    import jax.numpy as jnp

    dtype = getattr(model, "dtype", jnp.float64)
    p0 = np.asarray(momenta(model, jnp.asarray(traj.q[0], dtype), jnp.asarray(traj.qdot[0], dtype)), dtype=np.float64)
    tilde_nn = p0[:D]
    tilde_true = system.m1 * traj.qdot[0, :D]
    try:
        return MomentumDrift(relative_drift(C_nn, tilde_nn), relative_drift(C_true, tilde_true), True)
    except ZeroNormalizer:
        log.warning("first-particle momentum vanishes at t=0; momentum drift undefined")
        nan = np.full(len(traj), np.nan)
        return MomentumDrift(nan, nan.copy(), False)


def trajectory_divergence(a: Trajectory, b: Trajectory) -> np.ndarray:
    """||q_a(t) - q_b(t)||_2 on a shared time grid (positions only)."""
    _check_grid(a, b)
    return np.linalg.norm(a.q - b.q, axis=1)


def velocity_divergence(a: Trajectory, b: Trajectory) -> np.ndarray:
    _check_grid(a, b)
    return np.linalg.norm(a.qdot - b.qdot, axis=1)


def _check_grid(a, b):
    if len(a) != len(b) or not np.array_equal(a.times, b.times):
        raise ValueError("trajectories are on different time grids")


@dataclass
class ConservationReport:
    times: np.ndarray
    dL_nn: np.ndarray
    dL_true: np.ndarray
    dM_nn: np.ndarray | None = None
    dM_true: np.ndarray | None = None
    dq: np.ndarray | None = None
    dqdot: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    def columns(self) -> dict[str, np.ndarray]:
        cols = {"t": self.times, "dL_nn": self.dL_nn, "dL_true": self.dL_true}
        if self.dM_nn is not None:
            cols["dM_nn"] = self.dM_nn
            cols["dM_true"] = self.dM_true
        if self.dq is not None:
            cols["dq"] = self.dq
            cols["dqdot"] = self.dqdot
        return cols

    def to_csv(self, path, max_points: int | None = MAX_REPORT_POINTS) -> None:
        cols = self.columns()
        n = len(self.times)
        stride = 1 if not max_points else max(1, math.ceil(n / max_points))
        idx = np.arange(0, n, stride)
        write_csv(path, list(cols), np.column_stack([c[idx] for c in cols.values()]))

    def write(self, path, max_points: int | None = MAX_REPORT_POINTS, **meta) -> None:
        self.to_csv(path, max_points)
        write_metadata(str(path) + ".json", **{**self.metadata, **meta})


def conservation_report(traj: Trajectory, system, model, perturbed: Trajectory | None = None, **metadata) -> ConservationReport:
    """Drift of the model's Noether charges and the true charges along ``traj``."""
    C_nn = noether_charge_series(model, traj.q, traj.qdot, system.layout)
    C_true = system.true_charge_values(traj.q, traj.qdot)
    report = ConservationReport(
        times=traj.times,
        dL_nn=relative_drift(angular_part(system, C_nn)),
        dL_true=relative_drift(angular_part(system, C_true)),
        metadata=dict(metadata),
    )
    if system.layout.particles == 2:
        drift = momentum_drift_zero_normalized(traj, system, model)
        report.dM_nn, report.dM_true = drift.nn, drift.true
        report.metadata["dM_defined"] = drift.defined
    if perturbed is not None:
        n = min(len(traj), len(perturbed))
        if n < len(traj):
            raise ValueError("perturbed trajectory is shorter than the reference trajectory")
        report.dq = trajectory_divergence(traj, perturbed)
        report.dqdot = velocity_divergence(traj, perturbed)
    return report

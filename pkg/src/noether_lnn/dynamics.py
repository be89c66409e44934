"""Accelerations and Noether charges of a Lagrangian.

The acceleration follows from the total time derivative of the Euler-Lagrange
equation,

    J_qdot_qdot^T qddot = dL/dq - J_q_qdot^T qdot,

solved with LU (partial pivoting) against the velocity Hessian.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations

import jax
import jax.numpy as jnp
import numpy as np

from noether_lnn.diffcore import jit_over_fn, prepare, second_order
from noether_lnn.invariants import SymmetrySpec

RCOND_MIN = 1e-12


class SingularHessian(ArithmeticError):
    """The velocity Hessian of the Lagrangian is (numerically) singular."""


@dataclass(frozen=True)
class PhaseState:
    q: np.ndarray
    qdot: np.ndarray

    def __post_init__(self):
        q = np.array(self.q, dtype=np.float64, ndmin=1)
        qdot = np.array(self.qdot, dtype=np.float64, ndmin=1)
        if q.shape != qdot.shape or q.ndim != 1:
            raise ValueError(f"q and qdot must be vectors of equal length, got {q.shape} and {qdot.shape}")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qdot))):
            raise ValueError("phase state must be finite")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "qdot", qdot)

    @property
    def d(self) -> int:
        return self.q.shape[0]

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.q, self.qdot])

    @classmethod
    def from_vector(cls, y) -> "PhaseState":
        y = np.asarray(y, dtype=np.float64)
        d = y.shape[0] // 2
        return cls(y[:d], y[d:])


@dataclass(frozen=True)
class ChargeVector:
    labels: tuple[str, ...]
    values: np.ndarray

    def __len__(self):
        return len(self.labels)

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.labels, map(float, self.values)))


def solve_acceleration(grad_q, J_q_qdot, J_qdot_qdot, qdot):
    return jnp.linalg.solve(J_qdot_qdot.T, grad_q - J_q_qdot.T @ qdot)


def reciprocal_condition(H):
    """1 / (||H||_1 ||H^-1||_1), the quantity LAPACK's gecon estimates."""
    norm1 = lambda A: jnp.max(jnp.sum(jnp.abs(A), axis=0))  # noqa: E731
    rcond = 1 / (norm1(H) * norm1(jnp.linalg.inv(H)))
    return jnp.where(jnp.isfinite(rcond), rcond, 0.0)


def acceleration_core(fn, q, qdot):
    """Traceable: (qddot, reciprocal condition number of the velocity Hessian)."""
    _, gq, _, jqqd, jqdqd = second_order(fn, q, qdot)
    rcond = jax.lax.stop_gradient(reciprocal_condition(jqdqd))
    return solve_acceleration(gq, jqqd, jqdqd, qdot), rcond


_acceleration_jit = jit_over_fn(acceleration_core)


def acceleration(fn, state) -> np.ndarray:
    q, qdot = prepare(fn, state)
    qddot, rcond = _acceleration_jit(fn, q, qdot)
    rcond = float(rcond)
    qddot = np.asarray(qddot)
    if not (rcond >= RCOND_MIN) or not np.all(np.isfinite(qddot)):
        raise SingularHessian(f"velocity Hessian is singular (rcond={rcond:.3e}) at q={state.q}, qdot={state.qdot}")
    return qddot


@lru_cache(maxsize=64)
def acceleration_map(fn):
    """Traceable ``(q, qdot) -> qddot`` for integrators.

    Returns nan where the velocity Hessian is singular so that callers running
    under ``jit`` can detect the failure after the fact.  Cached per ``fn`` so
    repeated integrations reuse compiled code.
    """
    dtype = getattr(fn, "dtype", jnp.float64)

    def accel(q, qdot):
        qddot, rcond = acceleration_core(fn, q.astype(dtype), qdot.astype(dtype))
        return jnp.where(rcond >= RCOND_MIN, qddot, jnp.nan)

    return accel


def momenta(fn, q, qdot):
    """dL/dqdot, traceable."""
    return jax.grad(fn, argnums=1)(q, qdot)


def charge_labels(layout: SymmetrySpec) -> tuple[str, ...]:
    if layout.particles == 1:
        return ("L_x", "L_y", "L_z")
    D = layout.D
    return tuple(f"M_{a + 1}" for a in range(D)) + tuple(f"L_{r + 1}{s + 1}" for r, s in combinations(range(D), 2))


def charge_values(layout: SymmetrySpec, q, p, xp=jnp):
    """Noether charges from positions q and conjugate momenta p (last axis).

    Single particle (Kepler, or the spatial part of the Schwarzschild layout):
    L = x cross p.  Two particles: total momentum M = p1 + p2 followed by
    L^(rho,sigma) = p1_rho x1_sigma - p1_sigma x1_rho + (same for particle 2).
    """
    if layout.particles == 1:
        if layout.D != 3:
            raise ValueError("single-particle charges are defined for D=3")
        return xp.cross(q[..., :3], p[..., :3])
    if layout.particles != 2:
        raise ValueError("charges are implemented for one or two particles")
    D = layout.D
    x1, x2 = q[..., :D], q[..., D:2 * D]
    p1, p2 = p[..., :D], p[..., D:2 * D]
    M = p1 + p2
    L = [p1[..., r] * x1[..., s] - p1[..., s] * x1[..., r] + p2[..., r] * x2[..., s] - p2[..., s] * x2[..., r]
         for r, s in combinations(range(D), 2)]
    return xp.concatenate([M, xp.stack(L, axis=-1)], axis=-1)


def _check_layout(layout: SymmetrySpec, d: int):
    if layout.state_dim != d:
        raise ValueError(f"symmetry layout expects d={layout.state_dim}, state has d={d}")


def _charges_core(fn, layout, q, qdot):
    return charge_values(layout, q, momenta(fn, q, qdot))


_charges_batch = jit_over_fn(
    lambda fn, layout, q, qdot: jax.vmap(_charges_core, in_axes=(None, None, 0, 0))(fn, layout, q, qdot), static_argnums=(1,)
)


def noether_charges(fn, state, spec: SymmetrySpec) -> ChargeVector:
    _check_layout(spec, state.d)
    q, qdot = prepare(fn, state)
    values = _charges_batch(fn, spec, q[None], qdot[None])[0]
    return ChargeVector(charge_labels(spec), np.asarray(values, dtype=np.float64))


def noether_charge_series(fn, q, qdot, spec: SymmetrySpec) -> np.ndarray:
    """Charges of ``fn`` for a stack of states, shape (N, n_charges)."""
    q = np.atleast_2d(q)
    _check_layout(spec, q.shape[1])
    dtype = getattr(fn, "dtype", jnp.float64)
    out = _charges_batch(fn, spec, jnp.asarray(q, dtype), jnp.asarray(np.atleast_2d(qdot), dtype))
    return np.asarray(out, dtype=np.float64)


def true_charges(system, state) -> ChargeVector:
    """Closed-form conserved quantities of a ground-truth system."""
    if state.d != system.d:
        raise ValueError(f"{system.name} expects d={system.d}, state has d={state.d}")
    values = system.true_charge_values(state.q[None], state.qdot[None])[0]
    return ChargeVector(charge_labels(system.layout), values)

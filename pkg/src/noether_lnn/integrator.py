"""Classical fixed-step RK4 for second-order systems qddot = accel(q, qdot)."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import partial

import jax
import jax.numpy as jnp
import numpy as np

from noether_lnn.dynamics import PhaseState

DIVERGENCE_GUARD = 1e6
CHUNK = 2048


class IntegrationDiverged(RuntimeError):
    """State left the finite/bounded region; ``trajectory`` holds the valid prefix."""

    def __init__(self, message, trajectory):
        super().__init__(message)
        self.trajectory = trajectory


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    q: np.ndarray  # (N, d)
    qdot: np.ndarray  # (N, d)
    dt: float
    decimation: int = 1

    def __post_init__(self):
        if not (len(self.times) == len(self.q) == len(self.qdot)):
            raise ValueError("times, q and qdot must have equal length")

    def __len__(self):
        return len(self.times)

    @property
    def d(self) -> int:
        return self.q.shape[1]

    def state(self, k: int) -> PhaseState:
        return PhaseState(self.q[k], self.qdot[k])

    @property
    def states(self) -> list[PhaseState]:
        return [self.state(k) for k in range(len(self))]

    def to_csv(self, path) -> None:
        d = self.d
        header = ["t"] + [f"q_{i}" for i in range(d)] + [f"qdot_{i}" for i in range(d)]
        write_csv(path, header, np.column_stack([self.times, self.q, self.qdot]))

    @classmethod
    def from_csv(cls, path, dt: float | None = None, decimation: int = 1) -> "Trajectory":
        header, data = read_csv(path)
        d = (len(header) - 1) // 2
        if header[0] != "t" or len(header) != 2 * d + 1:
            raise ValueError(f"{path}: not a trajectory file")
        times = data[:, 0]
        if dt is None:
            dt = float(times[1] - times[0]) / decimation if len(times) > 1 else 0.0
        return cls(times, data[:, 1:d + 1], data[:, d + 1:], dt, decimation)


def write_csv(path, header, rows) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in np.atleast_2d(rows):
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_csv(path):
    with open(path) as fh:
        header = [h.strip() for h in fh.readline().strip().split(",")]
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return header, data


def write_metadata(path, **meta) -> None:
    with open(path, "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)


def _rk4(accel, q, v, dt):
    a1 = accel(q, v)
    q2, v2 = q + 0.5 * dt * v, v + 0.5 * dt * a1
    a2 = accel(q2, v2)
    q3, v3 = q + 0.5 * dt * v2, v + 0.5 * dt * a2
    a3 = accel(q3, v3)
    q4, v4 = q + dt * v3, v + dt * a3
    a4 = accel(q4, v4)
    q_new = q + dt / 6 * (v + 2 * v2 + 2 * v3 + v4)
    v_new = v + dt / 6 * (a1 + 2 * a2 + 2 * a3 + a4)
    return q_new, v_new


def rk4_step(accel, state: PhaseState, dt: float) -> PhaseState:
    """One RK4 step of (q, qdot)' = (qdot, accel(q, qdot)); accel may be any callable."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    q, v = _rk4(lambda q, v: np.asarray(accel(q, v), dtype=np.float64), state.q, state.qdot, dt)
    return PhaseState(q, v)


@partial(jax.jit, static_argnums=(0, 3))
def _run_chunk(accel, q, v, n, dt):
    def body(carry, _):
        nxt = _rk4(accel, *carry, dt)
        return nxt, nxt

    _, (qs, vs) = jax.lax.scan(body, (q, v), None, length=n)
    return qs, vs


def n_steps(T: float, dt: float) -> int:
    """ceil(T/dt), tolerant of representation error in T/dt."""
    ratio = T / dt
    return max(1, math.ceil(ratio - 1e-9 * max(1.0, ratio)))


def integrate(
    accel,
    state0: PhaseState,
    T: float,
    dt: float,
    decimation: int = 1,
    guard: float = DIVERGENCE_GUARD,
) -> Trajectory:
    """Integrate from ``state0`` for ceil(T/dt) steps and record every ``decimation``-th state.

    ``accel`` must be JAX-traceable; the loop runs as compiled scans over
    chunks of steps.  Raises :class:`IntegrationDiverged` if any component
    becomes non-finite or exceeds ``guard`` in magnitude.
    """
    if T <= 0 or dt <= 0:
        raise ValueError("T and dt must be positive")
    if decimation < 1:
        raise ValueError("decimation must be >= 1")
    n = n_steps(T, dt)
    d = state0.d
    Q = np.empty((n + 1, d))
    V = np.empty((n + 1, d))
    Q[0], V[0] = state0.q, state0.qdot
    q, v = jnp.asarray(state0.q), jnp.asarray(state0.qdot)
    chunk = min(CHUNK, n)
    done = 0
    while done < n:
        qs, vs = _run_chunk(accel, q, v, chunk, dt)
        qs, vs = np.asarray(qs, dtype=np.float64), np.asarray(vs, dtype=np.float64)
        take = min(chunk, n - done)
        qs, vs = qs[:take], vs[:take]
        bad = ~(np.isfinite(qs).all(1) & np.isfinite(vs).all(1)) | (np.abs(qs).max(1) > guard) | (np.abs(vs).max(1) > guard)
        if bad.any():
            k = int(np.argmax(bad))
            Q[done + 1:done + 1 + k], V[done + 1:done + 1 + k] = qs[:k], vs[:k]
            last = done + k
            traj = _trajectory(Q[:last + 1], V[:last + 1], dt, decimation)
            raise IntegrationDiverged(
                f"integration diverged at step {last + 1} (t={(last + 1) * dt:.6g}): state non-finite or above {guard:g}",
                traj,
            )
        Q[done + 1:done + 1 + take], V[done + 1:done + 1 + take] = qs, vs
        done += take
        q, v = jnp.asarray(qs[-1]), jnp.asarray(vs[-1])
    return _trajectory(Q, V, dt, decimation)


def _trajectory(Q, V, dt, decimation):
    idx = np.arange(0, len(Q), decimation)
    return Trajectory(idx * dt, Q[idx], V[idx], dt, decimation)

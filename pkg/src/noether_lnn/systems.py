"""Ground-truth model systems: Kepler, Schwarzschild geodesics, two particles.

Each system provides its exact Lagrangian (a JAX-traceable callable), closed
form conserved charges, a reference initial state, and a noisy sample stream
for training.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import ClassVar

import jax
import jax.numpy as jnp
import numpy as np

from noether_lnn.dynamics import PhaseState, acceleration_map
from noether_lnn.integrator import Trajectory, integrate, write_csv
from noether_lnn.invariants import SymmetrySpec

DEFAULT_SIGMA = 1e-3
DEFAULT_DT = 1e-2


class DomainError(ValueError):
    """State outside the domain of a true Lagrangian."""


@dataclass(frozen=True)
class TrainingBatch:
    X: np.ndarray  # (B, 2d): noisy q then noisy qdot
    y: np.ndarray  # (B, d): noisy qddot

    def __len__(self):
        return len(self.y)

    @property
    def q(self):
        return self.X[:, : self.y.shape[1]]

    @property
    def qdot(self):
        return self.X[:, self.y.shape[1]:]


@dataclass(frozen=True)
class Kepler:
    """Particle in a 1/r potential.  Bound orbit lies in the x-y plane.

    ``train_eccentricities`` optionally mixes several ellipses (same L_z) into
    the training stream; the default trains on the single orbit ``ecc``.
    """

    m: float = 1.0
    alpha: float = 1.0
    ecc: float = 0.8
    L_z: float = 1.0
    train_eccentricities: tuple[float, ...] = ()

    name: ClassVar[str] = "kepler"
    d: ClassVar[int] = 3
    default_T: ClassVar[float] = 128.0

    def __post_init__(self):
        if self.m <= 0 or self.alpha <= 0:
            raise ValueError("m and alpha must be positive")
        for e in (self.ecc, *self.train_eccentricities):
            if not 0 <= e < 1:
                raise ValueError("eccentricity must lie in [0, 1)")
        if self.L_z == 0:
            raise ValueError("L_z must be nonzero")

    @property
    def layout(self) -> SymmetrySpec:
        return SymmetrySpec("none", D=3, particles=1)

    def symmetry(self, constrained: bool) -> SymmetrySpec:
        return SymmetrySpec("kepler-rotational" if constrained else "none", D=3, particles=1)

    @property
    def semi_latus_rectum(self) -> float:
        return self.L_z**2 / (self.m * self.alpha)

    def period(self, ecc: float | None = None) -> float:
        e = self.ecc if ecc is None else ecc
        a = self.semi_latus_rectum / (1 - e**2)
        return 2 * math.pi * math.sqrt(self.m * a**3 / self.alpha)

    def lagrangian(self, q, qdot):
        return 0.5 * self.m * qdot @ qdot + self.alpha / jnp.sqrt(q @ q)

    def check_state(self, q, qdot):
        if not np.any(q):
            raise DomainError("Kepler Lagrangian is singular at q = 0")

    def analytic_acceleration(self, q, qdot):
        q = np.asarray(q)
        r = np.linalg.norm(q, axis=-1, keepdims=True)
        return -self.alpha * q / (self.m * r**3)

    def true_charge_values(self, q, qdot):
        return self.m * np.cross(q[..., :3], qdot[..., :3])

    def exact_state(self, phi, ecc: float | None = None):
        """Point on the ellipse at azimuth ``phi`` (vectorised over phi): (q, qdot, qddot)."""
        e = self.ecc if ecc is None else ecc
        phi = np.asarray(phi, dtype=np.float64)
        p = self.semi_latus_rectum
        c, s = np.cos(phi), np.sin(phi)
        r = p / (1 + e * c)
        phidot = self.L_z / (self.m * r**2)
        rdot = e * self.L_z * s / (self.m * p)
        zero = np.zeros_like(phi)
        q = np.stack([r * c, r * s, zero], axis=-1)
        qdot = np.stack([rdot * c - r * phidot * s, rdot * s + r * phidot * c, zero], axis=-1)
        return q, qdot, self.analytic_acceleration(q, qdot)

    def initial_state(self) -> PhaseState:
        q, qdot, _ = self.exact_state(0.0)
        return PhaseState(q, qdot)


@dataclass(frozen=True)
class Schwarzschild:
    """Massive particle in the Schwarzschild metric, state q = (x1, x2, x3, tau).

    The initial coordinate-time velocity is fixed by the unit timelike
    normalisation g(qdot, qdot) = -1 unless ``taudot0`` is given.
    """

    r_s: float = 0.1
    x0: tuple[float, float, float] = (1.0, 0.0, 0.0)
    xdot0: tuple[float, float, float] = (0.0, 0.3, 0.0)
    taudot0: float | None = None
    reference_T: float = 1000.0

    name: ClassVar[str] = "schwarzschild"
    d: ClassVar[int] = 4
    default_T: ClassVar[float] = 1000.0

    def __post_init__(self):
        if self.r_s <= 0:
            raise ValueError("r_s must be positive")
        if np.linalg.norm(self.x0) <= self.r_s:
            raise ValueError("initial position must lie outside the Schwarzschild radius")

    @property
    def layout(self) -> SymmetrySpec:
        return SymmetrySpec("none", D=3, particles=1, spacetime=True)

    def symmetry(self, constrained: bool) -> SymmetrySpec:
        if constrained:
            return SymmetrySpec("schwarzschild-rotational", D=3, particles=1)
        return self.layout

    def lagrangian(self, q, qdot):
        x, xdot, taudot = q[:3], qdot[:3], qdot[3]
        r2 = x @ x
        f = 1 - self.r_s / jnp.sqrt(r2)
        s2 = (x @ xdot) ** 2 / r2
        return -f * taudot**2 + s2 / f + (xdot @ xdot - s2)

    def spherical_lagrangian(self, r, theta, rdot, thetadot, phidot, taudot):
        f = 1 - self.r_s / r
        return -f * taudot**2 + rdot**2 / f + r**2 * (thetadot**2 + np.sin(theta) ** 2 * phidot**2)

    def check_state(self, q, qdot):
        if np.linalg.norm(q[:3]) <= self.r_s:
            raise DomainError(f"r must exceed r_s={self.r_s}")

    def analytic_acceleration(self, q, qdot):
        """Closed-form Euler-Lagrange solution in Cartesian coordinates."""
        q, qdot = np.asarray(q), np.asarray(qdot)
        x, xdot, taudot = q[..., :3], qdot[..., :3], qdot[..., 3]
        rs = self.r_s
        r = np.linalg.norm(x, axis=-1)
        s = np.sum(x * xdot, axis=-1)
        f = 1 - rs / r
        fp = rs / r**2
        h = rs / (r**2 * (r - rs))
        hp = -rs * (3 * r - 2 * rs) / (r**3 * (r - rs) ** 2)
        c = -fp * taudot**2 / r - hp * s**2 / r - 2 * h * np.sum(xdot * xdot, axis=-1)
        xddot = (0.5 * c * f)[..., None] * x
        tauddot = -fp * (s / r) * taudot / f
        return np.concatenate([xddot, tauddot[..., None]], axis=-1)

    def true_charge_values(self, q, qdot):
        return np.cross(q[..., :3], qdot[..., :3])

    def initial_state(self) -> PhaseState:
        x = np.asarray(self.x0, dtype=np.float64)
        xdot = np.asarray(self.xdot0, dtype=np.float64)
        taudot = self.taudot0
        if taudot is None:
            r = np.linalg.norm(x)
            f = 1 - self.r_s / r
            rdot2 = (x @ xdot) ** 2 / r**2
            taudot = math.sqrt((1 + rdot2 / f + xdot @ xdot - rdot2) / f)
        return PhaseState(np.append(x, 0.0), np.append(xdot, taudot))


@dataclass(frozen=True)
class TwoParticle:
    """Two particles in D dimensions with double-well interaction V(r) = mu r^2/2 - kappa r^4/4.

    The initial state is drawn from ``ic_seed``: positions uniform in
    [-1, 1]^D, velocities normal with std ``ic_velocity_std`` shifted to zero
    total momentum, rejected until the pair is bound inside the well (energy
    of relative motion at most ``ic_energy_fraction`` of the barrier height).
    """

    D: int = 4
    m1: float = 1.0
    m2: float = 0.8
    mu: float = 1.0
    kappa: float = 1.0
    ic_seed: int = 0
    ic_velocity_std: float = 0.2
    ic_energy_fraction: float = 0.8
    reference_T: float = 8.0

    name: ClassVar[str] = "two-particle"
    default_T: ClassVar[float] = 8.0

    def __post_init__(self):
        if min(self.m1, self.m2, self.mu, self.kappa) <= 0:
            raise ValueError("m1, m2, mu, kappa must be positive")
        if self.D < 2:
            raise ValueError("D must be >= 2")

    @property
    def d(self) -> int:
        return 2 * self.D

    @property
    def layout(self) -> SymmetrySpec:
        return SymmetrySpec("none", D=self.D, particles=2)

    def symmetry(self, kind: str = "roto-translational") -> SymmetrySpec:
        return SymmetrySpec(kind, D=self.D, particles=2)

    def potential(self, r):
        return 0.5 * self.mu * r**2 - 0.25 * self.kappa * r**4

    @property
    def barrier(self) -> tuple[float, float]:
        """(radius, height) of the potential maximum."""
        rb = math.sqrt(self.mu / self.kappa)
        return rb, self.potential(rb)

    def lagrangian(self, q, qdot):
        D = self.D
        x1, x2, v1, v2 = q[:D], q[D:], qdot[:D], qdot[D:]
        dx = x1 - x2
        # V depends on r only through r^2, which keeps derivatives finite at r = 0
        r2 = dx @ dx
        V = 0.5 * self.mu * r2 - 0.25 * self.kappa * r2**2
        return 0.5 * self.m1 * v1 @ v1 + 0.5 * self.m2 * v2 @ v2 - V

    def analytic_acceleration(self, q, qdot):
        q = np.asarray(q)
        D = self.D
        dx = q[..., :D] - q[..., D:]
        r2 = np.sum(dx * dx, axis=-1, keepdims=True)
        force = -(self.mu - self.kappa * r2) * dx  # force on particle 1
        return np.concatenate([force / self.m1, -force / self.m2], axis=-1)

    def true_charge_values(self, q, qdot):
        from noether_lnn.dynamics import charge_values

        D = self.D
        p = np.concatenate([self.m1 * qdot[..., :D], self.m2 * qdot[..., D:]], axis=-1)
        return charge_values(self.layout, np.asarray(q), p, xp=np)

    def initial_state(self) -> PhaseState:
        rng = np.random.default_rng(self.ic_seed)
        rb, vmax = self.barrier
        reduced = self.m1 * self.m2 / (self.m1 + self.m2)
        D = self.D
        for _ in range(100_000):
            x1, x2 = rng.uniform(-1, 1, D), rng.uniform(-1, 1, D)
            v1, v2 = rng.normal(0, self.ic_velocity_std, D), rng.normal(0, self.ic_velocity_std, D)
            vcm = (self.m1 * v1 + self.m2 * v2) / (self.m1 + self.m2)
            v1, v2 = v1 - vcm, v2 - vcm
            r = np.linalg.norm(x1 - x2)
            energy = 0.5 * reduced * np.sum((v1 - v2) ** 2) + self.potential(r)
            if r < rb and energy <= self.ic_energy_fraction * vmax:
                return PhaseState(np.concatenate([x1, x2]), np.concatenate([v1, v2]))
        raise RuntimeError("could not draw a bound initial state")


@dataclass(frozen=True, eq=False)
class TrueLagrangian:
    """Callable wrapper exposing the diffcore protocol for a system's Lagrangian."""

    system: object
    dtype: object = field(default=jnp.float64)

    @property
    def input_dim(self) -> int:
        return self.system.d

    def check_state(self, q, qdot):
        check = getattr(self.system, "check_state", None)
        if check is not None:
            check(q, qdot)

    def __call__(self, q, qdot):
        return self.system.lagrangian(q, qdot)


@lru_cache(maxsize=None)
def true_lagrangian(system) -> TrueLagrangian:
    return TrueLagrangian(system)


def kepler_exact_state(system: Kepler, phi):
    return system.exact_state(phi)


@lru_cache(maxsize=8)
def reference_trajectory(system, T: float | None = None, dt: float = DEFAULT_DT) -> Trajectory:
    """RK4 trajectory of the true dynamics from ``system.initial_state()``."""
    T = system.default_T if T is None else T
    traj = integrate(acceleration_map(true_lagrangian(system)), system.initial_state(), T, dt)
    for a in (traj.times, traj.q, traj.qdot):
        a.setflags(write=False)
    return traj


_true_accel_batch = jax.jit(
    lambda fn, q, qdot: jax.vmap(acceleration_map(fn))(q, qdot), static_argnums=0
)


@lru_cache(maxsize=8)
def _reference_samples(system):
    traj = reference_trajectory(system, system.reference_T)
    qddot = np.asarray(_true_accel_batch(true_lagrangian(system), traj.q, traj.qdot))
    qddot.setflags(write=False)
    return traj.q, traj.qdot, qddot


def batch_rng(seed: int, step: int) -> np.random.Generator:
    """Independent substream for batch ``step`` of the stream rooted at ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(step,)))


def sample_batch(system, seed: int, sigma: float = DEFAULT_SIGMA, B: int = 128, step: int = 0) -> TrainingBatch:
    """Exact states plus independent N(0, sigma^2) noise on q, qdot and qddot.

    Kepler states sit at azimuths phi ~ Uniform(-pi, pi); the other systems
    sample grid points of a precomputed reference trajectory uniformly.
    """
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    rng = batch_rng(seed, step)
    if isinstance(system, Kepler):
        phi = rng.uniform(-np.pi, np.pi, B)
        eccs = system.train_eccentricities or (system.ecc,)
        if len(eccs) == 1:
            q, qdot, qddot = system.exact_state(phi, eccs[0])
        else:
            which = rng.integers(0, len(eccs), B)
            parts = [system.exact_state(phi[k], eccs[which[k]]) for k in range(B)]
            q, qdot, qddot = (np.stack(a) for a in zip(*parts))
    else:
        Q, V, A = _reference_samples(system)
        idx = rng.integers(0, len(Q), B)
        q, qdot, qddot = Q[idx], V[idx], A[idx]
    d = system.d
    noise = rng.normal(0.0, 1.0, size=(B, 3 * d)) * sigma
    X = np.concatenate([q + noise[:, :d], qdot + noise[:, d:2 * d]], axis=1)
    y = qddot + noise[:, 2 * d:]
    return TrainingBatch(X, y)


def write_dataset(path, batch: TrainingBatch) -> None:
    d = batch.y.shape[1]
    header = [f"q_{i}" for i in range(d)] + [f"qdot_{i}" for i in range(d)] + [f"qddot_{i}" for i in range(d)]
    write_csv(path, header, np.column_stack([batch.X, batch.y]))


SYSTEMS = {"kepler": Kepler, "schwarzschild": Schwarzschild, "two-particle": TwoParticle}

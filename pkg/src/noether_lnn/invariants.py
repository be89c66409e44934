"""Symmetry-enforcing input layers.

The first layer of every Lagrangian network maps (q, qdot) to scalars that do
not change under the chosen group action.  For SO(D) these are all pairwise
dot products of the input vectors followed by all full contractions with the
D-dimensional Levi-Civita symbol.  Translation
invariance is obtained by only passing the relative position x1 - x2.

Feature order is fixed: dot products in lexicographic (i, j) order, then
epsilon contractions in lexicographic index order, then raw components.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations, permutations
from math import comb

import jax.numpy as jnp
import numpy as np

KINDS = (
    "none",
    "rotational",
    "translational",
    "roto-translational",
    "kepler-rotational",
    "schwarzschild-rotational",
)


@dataclass(frozen=True)
class SymmetrySpec:
    """Which symmetry the input layer enforces, and the state layout.

    ``spacetime`` marks the Schwarzschild layout q = (x1, x2, x3, tau); the
    coordinate time tau is never passed to the network.
    """

    kind: str = "none"
    D: int = 3
    particles: int = 1
    spacetime: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown symmetry kind {self.kind!r}; valid kinds: {', '.join(KINDS)}")
        if self.D < 1 or self.particles < 1:
            raise ValueError("D and particles must be positive")
        if self.kind == "kepler-rotational" and (self.D, self.particles, self.spacetime) != (3, 1, False):
            raise ValueError("kepler-rotational requires D=3, particles=1")
        if self.kind == "schwarzschild-rotational":
            if (self.D, self.particles) != (3, 1):
                raise ValueError("schwarzschild-rotational requires D=3, particles=1")
            object.__setattr__(self, "spacetime", True)
        if self.spacetime and self.particles != 1:
            raise ValueError("spacetime layout is single-particle only")
        if self.kind in ("translational", "roto-translational") and self.particles != 2:
            raise ValueError(f"{self.kind} requires particles=2")
        if self.kind in ("rotational", "roto-translational") and self.D < 2:
            raise ValueError("rotational invariants need D >= 2")

    @property
    def state_dim(self) -> int:
        return self.particles * self.D + (1 if self.spacetime else 0)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "D": self.D, "particles": self.particles, "spacetime": self.spacetime}

    @classmethod
    def from_dict(cls, data: dict) -> "SymmetrySpec":
        return cls(data["kind"], int(data["D"]), int(data["particles"]), bool(data.get("spacetime", False)))


@dataclass(frozen=True)
class Descriptor:
    kind: str  # "dot" | "epsilon" | "raw"
    args: tuple

    def __str__(self):
        if self.kind == "raw":
            name, i = self.args
            return f"raw({name}[{i}])"
        return f"{self.kind}({','.join(self.args)})"


@lru_cache(maxsize=None)
def levi_civita(D: int) -> tuple[np.ndarray, np.ndarray]:
    """Nonzero entries of the rank-D Levi-Civita symbol as (index rows, signs)."""
    perms = np.array(list(permutations(range(D))), dtype=np.intp)
    # parity from the number of inversions
    inversions = sum((perms[:, i] > perms[:, j]).astype(int) for i in range(D) for j in range(i + 1, D))
    signs = np.where(inversions % 2 == 0, 1.0, -1.0)
    return perms, signs


def epsilon_contraction(A) -> jnp.ndarray:
    """Full contraction of the rows of the D x D matrix ``A`` with epsilon.

    Equals det(A) but is written as the signed permutation sum so that it is a
    polynomial with exact derivatives of every order, including at singular A
    where LU-based determinants lose differentiability.
    """
    D = A.shape[0]
    perms, signs = levi_civita(D)
    terms = jnp.prod(A[np.arange(D)[None, :], perms], axis=1)
    return jnp.dot(terms, signs.astype(terms.dtype))


def invariant_count(n: int, D: int) -> int:
    return n * (n + 1) // 2 + comb(n, D)


def invariant_set(vectors) -> jnp.ndarray:
    """All n(n+1)/2 dot products followed by all C(n, D) epsilon contractions."""
    vectors = [jnp.asarray(v) for v in vectors]
    if not vectors or any(v.ndim != 1 or v.shape != vectors[0].shape for v in vectors):
        raise ValueError("invariant_set needs one or more vectors of equal dimension")
    A = jnp.stack(vectors)
    n, D = A.shape
    iu, ju = np.triu_indices(n)
    dots = jnp.sum(A[iu] * A[ju], axis=-1)
    eps = [epsilon_contraction(A[np.array(c)]) for c in combinations(range(n), D)]
    if not eps:
        return dots
    return jnp.concatenate([dots, jnp.stack(eps)])


def _invariant_descriptors(names, D):
    n = len(names)
    out = [Descriptor("dot", (names[i], names[j])) for i, j in zip(*np.triu_indices(n))]
    out += [Descriptor("epsilon", tuple(names[i] for i in c)) for c in combinations(range(n), D)]
    return out


def _raw_descriptors(names, D):
    return [Descriptor("raw", (name, i)) for name in names for i in range(D)]


def _single_names(spec):
    return ("x", "xdot") if spec.spacetime else ("q", "qdot")


def _vector_names(spec):
    p = spec.particles
    if p == 1:
        return _single_names(spec)
    positions = tuple(f"x{k + 1}" for k in range(p))
    velocities = tuple(f"xdot{k + 1}" for k in range(p))
    return positions + velocities


def feature_layout(spec: SymmetrySpec) -> list[Descriptor]:
    D = spec.D
    if spec.kind == "kepler-rotational":
        return [Descriptor("dot", ("q", "q")), Descriptor("dot", ("qdot", "qdot")), Descriptor("dot", ("q", "qdot"))]
    if spec.kind == "schwarzschild-rotational":
        return [
            Descriptor("raw", ("taudot", 0)),
            Descriptor("dot", ("x", "x")),
            Descriptor("dot", ("xdot", "xdot")),
            Descriptor("dot", ("x", "xdot")),
        ]
    if spec.kind == "none":
        out = _raw_descriptors(_vector_names(spec), D)
        if spec.spacetime:
            out.append(Descriptor("raw", ("taudot", 0)))
        return out
    if spec.kind == "rotational":
        return _invariant_descriptors(_vector_names(spec), D)
    if spec.kind == "translational":
        return _raw_descriptors(("x1-x2", "xdot1", "xdot2"), D)
    return _invariant_descriptors(("x1-x2", "xdot1", "xdot2"), D)


def feature_count(spec: SymmetrySpec) -> int:
    return len(feature_layout(spec))


def _split(spec, q, qdot):
    D, p = spec.D, spec.particles
    xs = [q[k * D:(k + 1) * D] for k in range(p)]
    vs = [qdot[k * D:(k + 1) * D] for k in range(p)]
    return xs, vs


def apply_symmetry_layer(spec: SymmetrySpec, q, qdot) -> jnp.ndarray:
    """Map a phase-space point to the feature vector of ``spec``.

    Traceable under JAX; accepts NumPy or JAX vectors of length
    ``spec.state_dim``.
    """
    q = jnp.asarray(q)
    qdot = jnp.asarray(qdot)
    if q.shape != (spec.state_dim,) or qdot.shape != (spec.state_dim,):
        raise ValueError(f"state layout mismatch: expected vectors of length {spec.state_dim}, got {q.shape}, {qdot.shape}")
    if spec.kind == "kepler-rotational":
        return jnp.stack([q @ q, qdot @ qdot, q @ qdot])
    if spec.kind == "schwarzschild-rotational":
        x, xdot = q[:3], qdot[:3]
        return jnp.stack([qdot[3], x @ x, xdot @ xdot, x @ xdot])
    if spec.kind == "none":
        if spec.spacetime:
            return jnp.concatenate([q[:-1], qdot])
        return jnp.concatenate([q, qdot])
    xs, vs = _split(spec, q, qdot)
    if spec.kind == "rotational":
        return invariant_set(xs + vs)
    rel = xs[0] - xs[1]
    if spec.kind == "translational":
        return jnp.concatenate([rel, vs[0], vs[1]])
    return invariant_set([rel, vs[0], vs[1]])

"""Exact first and second derivatives of scalar functions of (q, qdot).

A "Lagrangian" here is any JAX-traceable callable ``fn(q, qdot) -> scalar``.
Callables may optionally expose

* ``input_dim``: the expected dimension d of q and qdot,
* ``dtype``: the working precision (defaults to float64),
* ``check_state(q, qdot)``: an eager domain check that raises on bad input.

Second derivatives are computed forward-over-reverse: one reverse pass for the
gradient, then d forward-mode tangents along the velocity directions.
"""

from __future__ import annotations

from dataclasses import dataclass

import jax
import jax.numpy as jnp
import numpy as np


class DimensionError(ValueError):
    """State dimension does not match the function's input dimension."""


class NonFiniteError(ArithmeticError):
    """A derivative evaluated to inf or nan."""


@dataclass(frozen=True)
class DerivativeBundle:
    value: float
    grad_q: np.ndarray
    grad_qdot: np.ndarray
    J_q_qdot: np.ndarray
    J_qdot_qdot: np.ndarray

    def __iter__(self):
        return iter((self.value, self.grad_q, self.grad_qdot, self.J_q_qdot, self.J_qdot_qdot))


def working_dtype(fn):
    return getattr(fn, "dtype", jnp.float64)


def prepare(fn, state):
    """Validate ``state`` against ``fn`` and return (q, qdot) as JAX arrays."""
    q = np.asarray(state.q, dtype=np.float64)
    qdot = np.asarray(state.qdot, dtype=np.float64)
    if q.ndim != 1 or q.shape != qdot.shape:
        raise DimensionError(f"q and qdot must be vectors of equal length, got {q.shape} and {qdot.shape}")
    d = getattr(fn, "input_dim", None)
    if d is not None and q.shape[0] != d:
        raise DimensionError(f"state has dimension {q.shape[0]}, function expects {d}")
    check = getattr(fn, "check_state", None)
    if check is not None:
        check(q, qdot)
    dtype = working_dtype(fn)
    return jnp.asarray(q, dtype), jnp.asarray(qdot, dtype)


def second_order(fn, q, qdot):
    """Traceable core: (value, dL/dq, dL/dqdot, J_q_qdot, J_qdot_qdot).

    ``J_q_qdot[i, j] = d2L / dq_i dqdot_j`` and
    ``J_qdot_qdot[i, j] = d2L / dqdot_i dqdot_j``.
    """
    d = q.shape[-1]
    z = jnp.concatenate([q, qdot])

    def scalar(z):
        return fn(z[:d], z[d:])

    grad = jax.grad(scalar)

    def along_velocity(v):
        return jax.jvp(grad, (z,), (jnp.concatenate([jnp.zeros_like(v), v]),))

    g, cols = jax.vmap(along_velocity)(jnp.eye(d, dtype=z.dtype))
    # cols[k] = d(grad L)/d qdot_k
    return scalar(z), g[0, :d], g[0, d:], cols[:, :d].T, cols[:, d:]


def jit_over_fn(core, static_argnums=()):
    """jit ``core(fn, *args)``, tracing ``fn`` when it is a pytree and baking it in otherwise.

    Pytree Lagrangians (networks) share one compilation per architecture;
    opaque callables are static and compiled once per callable.
    """
    static = jax.jit(core, static_argnums=(0, *static_argnums))
    traced = jax.jit(core, static_argnums=static_argnums)

    def call(fn, *args):
        if jax.tree_util.treedef_is_leaf(jax.tree_util.tree_structure(fn)):
            return static(fn, *args)
        return traced(fn, *args)

    return call


_evaluate_jit = jit_over_fn(lambda fn, q, qdot: fn(q, qdot))
_second_order_jit = jit_over_fn(second_order)


def evaluate(fn, state) -> float:
    q, qdot = prepare(fn, state)
    return float(_evaluate_jit(fn, q, qdot))


def derivatives(fn, state) -> DerivativeBundle:
    q, qdot = prepare(fn, state)
    value, gq, gqd, jqqd, jqdqd = (np.asarray(a) for a in _second_order_jit(fn, q, qdot))
    bundle = DerivativeBundle(float(value), gq, gqd, jqqd, jqdqd)
    for name, part in zip(("value", "grad_q", "grad_qdot", "J_q_qdot", "J_qdot_qdot"), bundle):
        if not np.all(np.isfinite(part)):
            raise NonFiniteError(f"non-finite {name} at q={np.asarray(q)}, qdot={np.asarray(qdot)}")
    return bundle

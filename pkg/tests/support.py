"""Oracles shared by the test modules: random group elements and finite differences."""

import numpy as np


def random_rotation(rng, D, reflect=False):
    """Haar-random element of SO(D), or of O(D) with det -1 when ``reflect``."""
    Q, R = np.linalg.qr(rng.normal(size=(D, D)))
    Q = Q * np.sign(np.diag(R))
    if np.linalg.det(Q) < 0:
        Q[:, 0] = -Q[:, 0]
    if reflect:
        Q[:, 0] = -Q[:, 0]
    return Q


def rotate_particles(R, v, particles):
    """Apply R to each particle block of a flat state vector."""
    D = R.shape[0]
    return np.concatenate([R @ v[k * D:(k + 1) * D] for k in range(particles)])


def central_derivatives(f_batch, q, qdot, h=1e-4):
    """(grad_q, grad_qdot, J_q_qdot, J_qdot_qdot) by central differences.

    ``f_batch`` maps an (N, 2d) array of stacked (q, qdot) points to N values.
    """
    d = len(q)
    z0 = np.concatenate([q, qdot])
    E = np.eye(2 * d) * h
    bases = [z0] + [z0 + s * E[d + k] for k in range(d) for s in (1, -1)]
    pts = np.array([b + s * e for b in bases for e in E for s in (1, -1)])
    vals = np.asarray(f_batch(pts), dtype=np.float64).reshape(len(bases), 2 * d, 2)
    grads = (vals[:, :, 0] - vals[:, :, 1]) / (2 * h)
    g = grads[0]
    cols = (grads[1::2] - grads[2::2]) / (2 * h)  # cols[k] = d(grad)/d qdot_k
    return g[:d], g[d:], cols[:, :d].T, cols[:, d:]


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300)


def batched(fn, d):
    """Vectorised evaluator of fn(q, qdot) over rows of an (N, 2d) array."""
    import jax

    return jax.jit(jax.vmap(lambda z: fn(z[:d], z[d:])))

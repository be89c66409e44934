"""Fit Lagrangian networks to noisy accelerations with Adam and cosine decay."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path

import jax
import jax.numpy as jnp
import numpy as np

from noether_lnn.diffcore import jit_over_fn, second_order
from noether_lnn.dynamics import RCOND_MIN, acceleration_map, reciprocal_condition, solve_acceleration
from noether_lnn.network import LagrangianModel, apply
from noether_lnn.systems import DEFAULT_SIGMA, TrainingBatch, sample_batch

log = logging.getLogger(__name__)

ADAM_B1 = 0.9
ADAM_B2 = 0.999
ADAM_EPS = 1e-8
MAX_SKIP_FRACTION = 0.01
DEFAULT_CLIP_NORM = 1e3


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 2500
    steps_per_epoch: int = 100
    batch_size: int = 128
    lr_start: float = 1e-3
    lr_end: float = 1e-5
    sigma: float = DEFAULT_SIGMA
    seed: int = 0
    checkpoint_every: int = 0
    clip_norm: float | None = DEFAULT_CLIP_NORM

    def __post_init__(self):
        if self.epochs < 0 or self.steps_per_epoch < 1 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0; steps_per_epoch and batch_size >= 1")
        if not 0 < self.lr_end <= self.lr_start:
            raise ValueError("need 0 < lr_end <= lr_start")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise ValueError("clip_norm must be positive or None")

    def to_dict(self):
        return asdict(self)


@dataclass
class LossHistory:
    mse: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)
    skipped: list[int] = field(default_factory=list)

    def __len__(self):
        return len(self.mse)

    def to_csv(self, path) -> None:
        # wall-clock stamps are kept out of the CSV so reruns are byte-identical
        with open(path, "w") as fh:
            fh.write("epoch,mse\n")
            for k, value in enumerate(self.mse):
                fh.write(f"{k + 1},{value!r}\n")


def cosine_lr(step: int, total_steps: int, lr_start: float = 1e-3, lr_end: float = 1e-5) -> float:
    if total_steps <= 0:
        return lr_start
    if not 0 <= step <= total_steps:
        raise ValueError("step must lie in [0, total_steps]")
    return lr_end + (lr_start - lr_end) * (1 + math.cos(math.pi * step / total_steps)) / 2


def _predict(params, symmetry, dtype, q, qdot):
    fn = lambda q, qdot: apply(params, symmetry, q, qdot, dtype)  # noqa: E731
    _, gq, _, jqqd, jqdqd = second_order(fn, q, qdot)
    rcond = jax.lax.stop_gradient(reciprocal_condition(jqdqd))
    return solve_acceleration(gq, jqqd, jqdqd, qdot), rcond


def batch_loss(params, symmetry, dtype, X, y):
    """(mean squared acceleration error, smallest Hessian rcond in the batch)."""
    d = y.shape[1]
    pred, rcond = jax.vmap(_predict, in_axes=(None, None, None, 0, 0))(params, symmetry, dtype, X[:, :d], X[:, d:])
    return jnp.mean(jnp.sum((pred - y) ** 2, axis=1)), jnp.min(rcond)


@lru_cache(maxsize=16)
def _loss_fn(symmetry, dtype):
    return jax.jit(lambda params, X, y: batch_loss(params, symmetry, dtype, X, y))


def mse_loss(model, batch: TrainingBatch) -> float:
    """Mean over samples of ||predicted qddot - target||^2.

    ``model`` is a :class:`LagrangianModel` or any Lagrangian callable, such
    as a system's exact Lagrangian.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    if isinstance(model, LagrangianModel):
        dt = model.dtype
        loss, _ = _loss_fn(model.symmetry, dt)(model.params, jnp.asarray(batch.X, dt), jnp.asarray(batch.y, dt))
        return float(loss)
    pred = np.asarray(_accel_batch(model, jnp.asarray(batch.q), jnp.asarray(batch.qdot)))
    return float(np.mean(np.sum((pred - batch.y) ** 2, axis=1)))


_accel_batch = jit_over_fn(lambda fn, q, qdot: jax.vmap(acceleration_map.__wrapped__(fn))(q, qdot))


def loss_gradient(model: LagrangianModel, batch: TrainingBatch):
    """Gradient of the batch MSE with respect to all weights (same pytree as ``model.params``)."""
    dt = model.dtype
    grad = jax.grad(lambda p: batch_loss(p, model.symmetry, dt, jnp.asarray(batch.X, dt), jnp.asarray(batch.y, dt))[0])
    return grad(model.params)


@lru_cache(maxsize=16)
def _adam_step(symmetry, dtype):
    def step(params, m, v, t, lr, clip, X, y):
        (loss, rcond), grads = jax.value_and_grad(batch_loss, has_aux=True)(params, symmetry, dtype, X, y)
        ok = (rcond >= RCOND_MIN) & jnp.isfinite(loss)
        # a near-singular Hessian at init can produce gradients ~1e10; unclipped, they
        # pin Adam's second moment and stall training for thousands of steps
        gnorm = jnp.sqrt(sum(jnp.sum(g * g) for g in jax.tree_util.tree_leaves(grads)))
        grads = jax.tree_util.tree_map(lambda g: g * jnp.minimum(1.0, clip / gnorm), grads)
        t_new = t + 1
        m_new = jax.tree_util.tree_map(lambda m, g: ADAM_B1 * m + (1 - ADAM_B1) * g, m, grads)
        v_new = jax.tree_util.tree_map(lambda v, g: ADAM_B2 * v + (1 - ADAM_B2) * g * g, v, grads)
        scale = lr * jnp.sqrt(1 - ADAM_B2**t_new) / (1 - ADAM_B1**t_new)
        p_new = jax.tree_util.tree_map(lambda p, m, v: p - scale * m / (jnp.sqrt(v) + ADAM_EPS), params, m_new, v_new)
        keep = lambda new, old: jax.tree_util.tree_map(lambda a, b: jnp.where(ok, a, b), new, old)  # noqa: E731
        return keep(p_new, params), keep(m_new, m), keep(v_new, v), jnp.where(ok, t_new, t), loss, rcond, ok

    return jax.jit(step)


def train(
    model: LagrangianModel,
    system,
    config: TrainConfig,
    checkpoint_dir=None,
) -> tuple[LagrangianModel, LossHistory]:
    """Adam on fresh noisy batches, one cosine-decayed learning rate per step.

    Batches whose velocity Hessian is singular are skipped; more than 1% skipped
    steps in an epoch, or a non-finite loss on a regular batch, aborts with
    :class:`TrainingError`.
    """
    if model.d != system.d:
        raise ValueError(f"model has d={model.d}, system {system.name} has d={system.d}")
    history = LossHistory()
    if config.epochs == 0:
        return model, history
    dt = model.dtype
    step_fn = _adam_step(model.symmetry, dt)
    params = model.params
    m = jax.tree_util.tree_map(jnp.zeros_like, params)
    v = jax.tree_util.tree_map(jnp.zeros_like, params)
    t = jnp.asarray(0, jnp.int32)
    total = config.epochs * config.steps_per_epoch
    clip = jnp.asarray(jnp.inf if config.clip_norm is None else config.clip_norm, dt)
    start = time.perf_counter()
    for epoch in range(config.epochs):
        losses, skipped = [], 0
        for k in range(config.steps_per_epoch):
            n = epoch * config.steps_per_epoch + k
            batch = sample_batch(system, config.seed, config.sigma, config.batch_size, step=n)
            lr = cosine_lr(n, total, config.lr_start, config.lr_end)
            params, m, v, t, loss, rcond, ok = step_fn(
                params, m, v, t, jnp.asarray(lr, dt), clip, jnp.asarray(batch.X, dt), jnp.asarray(batch.y, dt)
            )
            if bool(ok):
                losses.append(float(loss))
            elif float(rcond) >= RCOND_MIN:
                raise TrainingError(f"non-finite loss at epoch {epoch + 1}, step {k + 1}")
            else:
                skipped += 1
        if skipped > MAX_SKIP_FRACTION * config.steps_per_epoch:
            raise TrainingError(f"{skipped} of {config.steps_per_epoch} batches skipped in epoch {epoch + 1} (singular Hessian)")
        history.mse.append(float(np.mean(losses)))
        history.seconds.append(time.perf_counter() - start)
        history.skipped.append(skipped)
        log.info("epoch %d/%d mse %.3e", epoch + 1, config.epochs, history.mse[-1])
        if checkpoint_dir is not None and config.checkpoint_every and (epoch + 1) % config.checkpoint_every == 0:
            model.with_params(params).save(Path(checkpoint_dir) / f"checkpoint_{epoch + 1:05d}.json")
    return model.with_params(params), history

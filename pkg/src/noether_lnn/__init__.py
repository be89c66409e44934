"""Lagrangian neural networks with symmetry-enforcing input layers.

Importing the package switches JAX to 64-bit mode; single precision is
still available per model through ``LagrangianModel.dtype``.
"""

import jax

jax.config.update("jax_enable_x64", True)

from noether_lnn.dynamics import (  # noqa: E402
    ChargeVector,
    PhaseState,
    SingularHessian,
    acceleration,
    noether_charges,
    true_charges,
)
from noether_lnn.invariants import SymmetrySpec, feature_count  # noqa: E402
from noether_lnn.network import LagrangianModel, init_model  # noqa: E402
from noether_lnn.systems import Kepler, Schwarzschild, TwoParticle  # noqa: E402

__all__ = [
    "ChargeVector",
    "Kepler",
    "LagrangianModel",
    "PhaseState",
    "Schwarzschild",
    "SingularHessian",
    "SymmetrySpec",
    "TwoParticle",
    "acceleration",
    "feature_count",
    "init_model",
    "noether_charges",
    "true_charges",
]

__version__ = "0.1.0"

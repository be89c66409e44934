"""Dense Lagrangian network: symmetry layer, softplus hidden layers, linear output."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import jax
import jax.numpy as jnp
import numpy as np

from noether_lnn.invariants import SymmetrySpec, apply_symmetry_layer, feature_count

PRECISIONS = {"double": jnp.float64, "single": jnp.float32}


def softplus(x):
    # logaddexp(x, 0): max(x, 0) + log1p(exp(-|x|)), with a smooth custom derivative
    return jax.nn.softplus(x)


@dataclass(frozen=True, eq=False)
class DenseLayer:
    weights: np.ndarray  # (out, in)
    biases: np.ndarray | None
    activation: str = "softplus"

    def __post_init__(self):
        if self.activation not in ("softplus", "identity"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("non-finite layer weights")
        if self.biases is not None and self.biases.shape != (self.weights.shape[0],):
            raise ValueError("bias length must equal the number of output units")

    @property
    def shape(self):
        return self.weights.shape


@dataclass(frozen=True, eq=False)
class LagrangianModel:
    """L_NN = D_L o ... o D_1 o S as a callable ``model(q, qdot) -> scalar``.

    Registered as a JAX pytree whose leaves are the weights, so jitted code
    compiled for one model is reused by any model of the same shape.
    Weights are never mutated; training returns new models.
    """

    symmetry: SymmetrySpec
    layers: tuple[DenseLayer, ...]
    precision: str = "double"
    d: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "d", self.symmetry.state_dim)
        if self.precision not in PRECISIONS:
            raise ValueError(f"precision must be one of {sorted(PRECISIONS)}")
        if not self.layers:
            raise ValueError("at least one dense layer is required")
        width = feature_count(self.symmetry)
        for k, layer in enumerate(self.layers):
            if layer.shape[1] != width:
                raise ValueError(f"layer {k} expects {layer.shape[1]} inputs, previous width is {width}")
            width = layer.shape[0]
        out = self.layers[-1]
        if out.shape[0] != 1 or out.biases is not None or out.activation != "identity":
            raise ValueError("output layer must be a single bias-free identity unit")
        dt = self.dtype
        params = [
            (jnp.asarray(layer.weights, dt), None if layer.biases is None else jnp.asarray(layer.biases, dt))
            for layer in self.layers
        ]
        object.__setattr__(self, "_params", params)

    @property
    def input_dim(self) -> int:
        return self.d

    @property
    def dtype(self):
        return PRECISIONS[self.precision]

    @property
    def n_h(self) -> int:
        return self.layers[0].shape[0] if len(self.layers) > 1 else 0

    @property
    def params(self) -> list:
        """Weights as a JAX pytree: a list of (W, b) pairs, b is None on the output layer."""
        return list(self._params)

    def with_params(self, params) -> "LagrangianModel":
        layers = tuple(
            DenseLayer(
                np.asarray(W, dtype=np.float64),
                None if b is None else np.asarray(b, dtype=np.float64),
                layer.activation,
            )
            for (W, b), layer in zip(params, self.layers)
        )
        return LagrangianModel(self.symmetry, layers, self.precision)

    def __call__(self, q, qdot):
        return apply(self.params, self.symmetry, q, qdot, self.dtype)

    def to_json(self) -> str:
        layers = []
        for layer in self.layers:
            rows, cols = layer.shape
            layers.append(
                {
                    "rows": rows,
                    "cols": cols,
                    "activation": layer.activation,
                    "weights": [float(w) for w in layer.weights.ravel()],
                    "biases": None if layer.biases is None else [float(b) for b in layer.biases],
                }
            )
        doc = {
            "symmetry": self.symmetry.to_dict(),
            "d": self.d,
            "n_h": self.n_h,
            "precision": self.precision,
            "layers": layers,
        }
        return json.dumps(doc, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "LagrangianModel":
        doc = json.loads(text)
        layers = tuple(
            DenseLayer(
                np.asarray(entry["weights"], dtype=np.float64).reshape(entry["rows"], entry["cols"]),
                None if entry["biases"] is None else np.asarray(entry["biases"], dtype=np.float64),
                entry.get("activation", "softplus"),
            )
            for entry in doc["layers"]
        )
        model = cls(SymmetrySpec.from_dict(doc["symmetry"]), layers, doc.get("precision", "double"))
        if model.d != doc["d"]:
            raise ValueError(f"model file declares d={doc['d']} but its symmetry implies d={model.d}")
        return model

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "LagrangianModel":
        with open(path) as fh:
            return cls.from_json(fh.read())

    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]


def _flatten(model):
    return (model._params,), (model.symmetry, model.precision)


def _unflatten(aux, children):
    # traced copies carry only what the forward pass needs
    model = object.__new__(LagrangianModel)
    symmetry, precision = aux
    for name, value in (("symmetry", symmetry), ("precision", precision), ("layers", None), ("d", symmetry.state_dim), ("_params", children[0])):
        object.__setattr__(model, name, value)
    return model


jax.tree_util.register_pytree_node(LagrangianModel, _flatten, _unflatten)


def apply(params, symmetry: SymmetrySpec, q, qdot, dtype=jnp.float64):
    """Pure forward pass; traceable and differentiable in params, q and qdot."""
    h = apply_symmetry_layer(symmetry, jnp.asarray(q, dtype), jnp.asarray(qdot, dtype))
    for W, b in params[:-1]:
        h = softplus(W @ h + b)
    W_out, _ = params[-1]
    return (W_out @ h)[0]


def forward(model: LagrangianModel, state) -> float:
    from noether_lnn.diffcore import evaluate

    return evaluate(model, state)


def init_std(n_h: int, n_hidden: int = 2) -> list[float]:
    """Per-layer initial weight std: 2/sqrt(n_h), then 1/sqrt(n_h), output sqrt(n_h)."""
    return [2 / np.sqrt(n_h)] + [1 / np.sqrt(n_h)] * (n_hidden - 1) + [np.sqrt(n_h)]


def init_model(
    seed: int,
    symmetry: SymmetrySpec,
    d: int | None = None,
    n_h: int = 128,
    n_hidden: int = 2,
    precision: str = "double",
) -> LagrangianModel:
    """Random normal weights, zero biases.

    The output-layer std of sqrt(n_h) is large on purpose; it only rescales
    the Lagrangian, which leaves the accelerations unchanged.
    """
    if n_h < 1 or n_hidden < 1:
        raise ValueError("n_h and n_hidden must be >= 1")
    if d is not None and d != symmetry.state_dim:
        raise ValueError(f"symmetry {symmetry.kind!r} with D={symmetry.D}, particles={symmetry.particles} needs d={symmetry.state_dim}, got {d}")
    rng = np.random.default_rng(seed)
    widths = [feature_count(symmetry)] + [n_h] * n_hidden + [1]
    stds = init_std(n_h, n_hidden)
    layers = []
    for k, std in enumerate(stds):
        W = rng.normal(0.0, std, size=(widths[k + 1], widths[k]))
        if precision == "single":
            W = W.astype(np.float32).astype(np.float64)
        last = k == len(stds) - 1
        layers.append(DenseLayer(W, None if last else np.zeros(widths[k + 1]), "identity" if last else "softplus"))
    return LagrangianModel(symmetry, tuple(layers), precision)

"""Command-line entry point: generate, train, simulate, evaluate, invariants.

Every command reads an optional JSON experiment config; command-line flags
override it.  One root seed is split into independent streams for weight
initialisation, training data and initial-condition perturbations.

Exit codes: 0 ok, 1 usage or config error, 2 training failure, 3 integration
divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
import time
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from noether_lnn import __version__
from noether_lnn.diagnostics import conservation_report
from noether_lnn.dynamics import PhaseState, acceleration_map
from noether_lnn.integrator import IntegrationDiverged, Trajectory, integrate, write_metadata
from noether_lnn.invariants import KINDS, SymmetrySpec, feature_layout
from noether_lnn.network import PRECISIONS, LagrangianModel, init_model
from noether_lnn.systems import DEFAULT_DT, SYSTEMS, sample_batch, true_lagrangian, write_dataset
from noether_lnn.training import TrainConfig, TrainingError, train

log = logging.getLogger("noether_lnn")

EXIT_OK, EXIT_CONFIG, EXIT_TRAINING, EXIT_DIVERGED = 0, 1, 2, 3
DEFAULT_PERTURBATION = 1e-3
SEED_PURPOSES = ("init", "data", "perturbation")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    system: object
    symmetry: SymmetrySpec
    train: TrainConfig
    T: float
    dt: float = DEFAULT_DT
    decimation: int = 1
    perturbation_std: float = DEFAULT_PERTURBATION
    precision: str = "double"
    seed: int = 0
    n_h: int = 128

    def seeds(self) -> dict[str, int]:
        """Independent integer seeds per purpose, all derived from ``seed``."""
        children = np.random.SeedSequence(self.seed).spawn(len(SEED_PURPOSES))
        return {name: int(child.generate_state(1)[0]) for name, child in zip(SEED_PURPOSES, children)}

    def to_dict(self) -> dict:
        sys_fields = {f.name: getattr(self.system, f.name) for f in fields(self.system)}
        return {
            "system": {"name": self.system.name, **sys_fields},
            "symmetry": self.symmetry.to_dict(),
            "train": self.train.to_dict(),
            "integrate": {"T": self.T, "dt": self.dt, "decimation": self.decimation},
            "perturbation_std": self.perturbation_std,
            "precision": self.precision,
            "seed": self.seed,
            "n_h": self.n_h,
        }


def symmetry_options(system) -> dict[str, SymmetrySpec]:
    """Accepted ``symmetry`` strings for a system and the layouts they select."""
    if system.name == "two-particle":
        return {kind: system.symmetry(kind) for kind in ("none", "rotational", "translational", "roto-translational")}
    constrained = system.symmetry(True)
    return {"none": system.symmetry(False), "rotational": constrained, constrained.kind: constrained}


def resolve_symmetry(system, name: str) -> SymmetrySpec:
    options = symmetry_options(system)
    if name not in options:
        raise ConfigError(f"invalid symmetry {name!r} for {system.name}; valid options: {', '.join(options)}")
    return options[name]


def _tuples(value):
    return tuple(value) if isinstance(value, list) else value


def build_system(block: dict):
    block = dict(block)
    name = block.pop("name", "kepler")
    if name not in SYSTEMS:
        raise ConfigError(f"unknown system {name!r}; valid options: {', '.join(SYSTEMS)}")
    try:
        return SYSTEMS[name](**{k: _tuples(v) for k, v in block.items()})
    except TypeError as exc:
        raise ConfigError(f"bad field in system block: {exc}") from None


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    """Merge the JSON file at ``path`` with flag ``overrides`` and validate everything up front."""
    raw: dict = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
    unknown = set(raw) - {"system", "symmetry", "train", "integrate", "perturbation_std", "precision", "seed", "n_h"}
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    ov = {k: v for k, v in (overrides or {}).items() if v is not None}

    system_block = dict(raw.get("system", {}))
    if "system" in ov:
        if ov["system"] != system_block.get("name", ov["system"]):
            system_block = {}
        system_block["name"] = ov["system"]
    try:
        system = build_system(system_block)
        symmetry = resolve_symmetry(system, ov.get("symmetry", raw.get("symmetry", "rotational" if system.name != "two-particle" else "roto-translational")))

        seed = int(ov.get("seed", raw.get("seed", 0)))
        train_block = dict(raw.get("train", {}))
        train_block.pop("seed", None)
        for key in ("epochs", "steps_per_epoch", "batch_size", "sigma", "lr_start", "lr_end", "checkpoint_every"):
            if key in ov:
                train_block[key] = ov[key]
        train_cfg = TrainConfig(**train_block)

        integ = dict(raw.get("integrate", {}))
        for key in ("T", "dt", "decimation"):
            if key in ov:
                integ[key] = ov[key]
        extra = set(integ) - {"T", "dt", "decimation"}
        if extra:
            raise ConfigError(f"unknown integrate keys: {', '.join(sorted(extra))}")

        cfg = ExperimentConfig(
            system=system,
            symmetry=symmetry,
            train=train_cfg,
            T=float(integ.get("T") or system.default_T),
            dt=float(integ.get("dt", DEFAULT_DT)),
            decimation=int(integ.get("decimation", 1)),
            perturbation_std=float(ov.get("perturb", raw.get("perturbation_std", DEFAULT_PERTURBATION))),
            precision=ov.get("precision", raw.get("precision", "double")),
            seed=seed,
            n_h=int(ov.get("n_h", raw.get("n_h", 128))),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    if cfg.precision not in PRECISIONS:
        raise ConfigError(f"invalid precision {cfg.precision!r}; valid options: {', '.join(PRECISIONS)}")
    if cfg.T <= 0 or cfg.dt <= 0 or cfg.decimation < 1:
        raise ConfigError("need T > 0, dt > 0 and decimation >= 1")
    if cfg.perturbation_std < 0:
        raise ConfigError("perturbation std must be non-negative")
    if cfg.n_h < 1:
        raise ConfigError("n_h must be positive")
    return replace(cfg, train=replace(cfg.train, seed=cfg.seeds()["data"]))


def _metadata(cfg: ExperimentConfig, command: str, **extra) -> dict:
    return {
        "command": command,
        "config": cfg.to_dict(),
        "seeds": cfg.seeds(),
        "version": __version__,
        "python": platform.python_version(),
        "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        **extra,
    }


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_generate(cfg: ExperimentConfig, out) -> int:
    batch = sample_batch(cfg.system, cfg.train.seed, cfg.train.sigma, cfg.train.batch_size)
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(out, batch)
    write_metadata(f"{out}.json", **_metadata(cfg, "generate", rows=len(batch)))
    print(f"wrote {len(batch)} rows to {out}")
    return EXIT_OK


def cmd_train(cfg: ExperimentConfig, out) -> int:
    out = _out_dir(out)
    model = init_model(cfg.seeds()["init"], cfg.symmetry, cfg.system.d, n_h=cfg.n_h, precision=cfg.precision)
    try:
        trained, history = train(model, cfg.system, cfg.train, checkpoint_dir=out)
    except TrainingError as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    trained.save(out / "model.json")
    history.to_csv(out / "loss.csv")
    write_metadata(
        out / "loss.csv.json",
        **_metadata(cfg, "train", seconds=history.seconds, skipped=history.skipped, fingerprint=trained.fingerprint()),
    )
    final = history.mse[-1] if history.mse else float("nan")
    print(f"trained {len(history)} epochs, final mse {final:.3e}; model written to {out / 'model.json'}")
    return EXIT_OK


def _load_model(path, cfg: ExperimentConfig):
    if path == "true":
        return true_lagrangian(cfg.system)
    try:
        model = LagrangianModel.load(path)
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"cannot load model {path}: {exc}") from None
    if model.d != cfg.system.d:
        raise ConfigError(f"model has d={model.d} but {cfg.system.name} needs d={cfg.system.d}")
    return model


def perturbed_state(state: PhaseState, std: float, seed: int) -> PhaseState:
    rng = np.random.default_rng(seed)
    return PhaseState(state.q + rng.normal(0.0, std, state.d), state.qdot + rng.normal(0.0, std, state.d))


def cmd_simulate(cfg: ExperimentConfig, model_path, out, perturb: bool = False) -> int:
    model = _load_model(model_path, cfg)
    out = _out_dir(out)
    accel = acceleration_map(model)
    state0 = cfg.system.initial_state()
    meta = _metadata(cfg, "simulate", model=str(model_path), steps=None)

    def run(state, name):
        try:
            traj = integrate(accel, state, cfg.T, cfg.dt, cfg.decimation)
        except IntegrationDiverged as exc:
            exc.trajectory.to_csv(out / name)
            write_metadata(out / f"{name}.json", **{**meta, "diverged": str(exc)})
            print(f"{name}: {exc}", file=sys.stderr)
            return None
        traj.to_csv(out / name)
        write_metadata(out / f"{name}.json", **{**meta, "steps": (len(traj) - 1) * traj.decimation})
        return traj

    traj = run(state0, "trajectory.csv")
    if traj is None:
        return EXIT_DIVERGED
    twin = None
    if perturb:
        twin = run(perturbed_state(state0, cfg.perturbation_std, cfg.seeds()["perturbation"]), "trajectory_perturbed.csv")
        if twin is None:
            return EXIT_DIVERGED
    report = conservation_report(traj, cfg.system, model, twin)
    report.write(out / "report.csv", **meta)
    print(f"integrated {(len(traj) - 1) * traj.decimation} steps to T={traj.times[-1]:g}; dL_nn(T)={report.dL_nn[-1]:.3e}")
    return EXIT_OK


def cmd_evaluate(cfg: ExperimentConfig, model_path, trajectory, out, perturbed=None) -> int:
    model = _load_model(model_path, cfg)
    try:
        traj = Trajectory.from_csv(trajectory)
        twin = Trajectory.from_csv(perturbed) if perturbed else None
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read trajectory: {exc}") from None
    report = conservation_report(traj, cfg.system, model, twin)
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    report.write(out, **_metadata(cfg, "evaluate", model=str(model_path), trajectory=str(trajectory)))
    print(f"wrote report with {len(traj)} points to {out}")
    return EXIT_OK


def cmd_invariants(kind: str, D: int, particles: int) -> int:
    aliases = {"kepler": "kepler-rotational", "schwarzschild": "schwarzschild-rotational"}
    kind = aliases.get(kind, kind)
    if kind not in KINDS:
        raise ConfigError(f"unknown symmetry {kind!r}; valid options: {', '.join(KINDS + tuple(aliases))}")
    if kind.endswith("-rotational") and kind != "roto-translational":
        D, particles = 3, 1
    try:
        layout = feature_layout(SymmetrySpec(kind, D, particles))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    for descriptor in layout:
        print(descriptor)
    print(f"total {len(layout)}")
    return EXIT_OK


def _add_experiment_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument("--system", choices=sorted(SYSTEMS))
    p.add_argument("--symmetry", help="none, rotational, translational or roto-translational")
    p.add_argument("--seed", type=int)
    p.add_argument("--precision", choices=sorted(PRECISIONS))
    p.add_argument("--epochs", type=int)
    p.add_argument("--steps-per-epoch", type=int, dest="steps_per_epoch")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--sigma", type=float)
    p.add_argument("--n-h", type=int, dest="n_h")
    p.add_argument("--T", type=float, dest="T")
    p.add_argument("--dt", type=float)
    p.add_argument("--decimation", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="noether-lnn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a noisy training batch as CSV")
    _add_experiment_flags(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train a Lagrangian network")
    _add_experiment_flags(p)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("simulate", help="integrate a trained model and report conservation")
    _add_experiment_flags(p)
    p.add_argument("--model", required=True, help="model JSON, or 'true' for the exact Lagrangian")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--perturb", type=float, nargs="?", const=-1.0, default=None, metavar="STD",
                   help=f"also integrate a perturbed twin (default std {DEFAULT_PERTURBATION:g})")

    p = sub.add_parser("evaluate", help="recompute a conservation report from stored trajectories")
    _add_experiment_flags(p)
    p.add_argument("--model", required=True)
    p.add_argument("--trajectory", required=True)
    p.add_argument("--perturbed")
    p.add_argument("--out", required=True)

    p = sub.add_parser("invariants", help="list the input features of a symmetry layer")
    p.add_argument("symmetry", help=f"one of {', '.join(KINDS)}, kepler or schwarzschild")
    p.add_argument("--D", type=int, default=3, dest="D")
    p.add_argument("--particles", type=int, default=1)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "invariants":
            return cmd_invariants(args.symmetry, args.D, args.particles)
        overrides = vars(args).copy()
        if args.command == "simulate" and args.perturb is not None and args.perturb >= 0:
            overrides["perturb"] = args.perturb
        else:
            overrides.pop("perturb", None)
        cfg = load_config(args.config, overrides)
        if args.command == "generate":
            return cmd_generate(cfg, args.out)
        if args.command == "train":
            return cmd_train(cfg, args.out)
        if args.command == "simulate":
            return cmd_simulate(cfg, args.model, args.out, perturb=args.perturb is not None)
        return cmd_evaluate(cfg, args.model, args.trajectory, args.out, args.perturbed)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

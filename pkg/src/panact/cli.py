"""Command-line driver: dataset generation, training, evaluation, ablations.

Configuration comes from an optional JSON file (nested objects or flat
dotted keys) merged with command-line flags; flags win.  Every command
echoes its fully resolved configuration into the run directory so a run can
be reproduced bit-for-bit from its own artifacts.
"""

from __future__ import annotations

import argparse
import itertools
import json
import sys
from pathlib import Path
from typing import Any

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint
from .evaluation import evaluate, scores_to_csv, scores_to_json
from .geometry import PROXIMITY_METRICS, GeometryError
from .model import ActivityModel, GROUPING_SOURCES, ModelConfig
from .optim import Adam
from .relation import PPE_MODES, RELATION_MODES
from .dpatr import STRUCTURES
from .synthdata import DatasetError, SceneSpec, generate_dataset, read_dataset, write_dataset
from .tensor import NumericError, ShapeError
from .training import LossWeights, TrainConfig, train


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # exit code 1 instead of argparse's 2
        raise UsageError(f"{message}\n\n{self.format_usage()}")


ABLATION_AXES = {
    "ppe": PPE_MODES,
    "proximity": PROXIMITY_METRICS,
    "relation": RELATION_MODES,
    "structure": STRUCTURES,
}


def default_config() -> dict[str, Any]:
    return {
        "seed": 0,
        "out": "runs/run",
        "scene": SceneSpec().to_dict(),
        "counts": {"train": 200, "val": 50},
        "data": {"train": None, "val": None},
        "model": ModelConfig.desk().to_dict(),
        "train": TrainConfig(epochs=30, warmup_epochs=5, lr=2e-3).to_dict(),
        "loss": LossWeights().to_dict(),
        "grouping": "predicted",
    }


def _expand_dotted(raw: dict[str, Any]) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for key, value in raw.items():
        node = out
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise UsageError(f"config key {key!r} conflicts with a scalar value")
        node[parts[-1]] = value
    return out


def _merge(base: dict[str, Any], update: dict[str, Any]) -> dict[str, Any]:
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _merge(base[key], value)
        else:
            base[key] = value
    return base


def load_config(path: str | None) -> dict[str, Any]:
    config = default_config()
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise UsageError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise UsageError(f"config file {path} must hold a JSON object")
        _merge(config, _expand_dotted(raw))
    return config


def apply_flags(config: dict[str, Any], args: argparse.Namespace) -> dict[str, Any]:
    if getattr(args, "seed", None) is not None:
        config["seed"] = args.seed
    if getattr(args, "out", None) is not None:
        config["out"] = args.out
    for axis in ("ppe", "proximity", "relation", "structure"):
        value = getattr(args, axis, None)
        if value is not None:
            config["model"][axis] = value
    if getattr(args, "grouping", None) is not None:
        config["grouping"] = args.grouping
    for key in ("epochs", "lr", "batch"):
        value = getattr(args, key, None)
        if value is not None:
            config["train"][key] = value
    return config


def echo_config(config: dict[str, Any], out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(json.dumps(config, indent=2) + "\n")


def _scene_spec(config: dict[str, Any]) -> SceneSpec:
    spec = SceneSpec.from_dict(config["scene"])
    return spec


def _sync_model_with_dataset(config: dict[str, Any], manifest: dict) -> None:
    """Geometry and label dimensions always follow the dataset."""
    spec = manifest.get("spec")
    if not spec:
        return
    model = config["model"]
    for src, dst in (("frames", "frames"), ("grid_h", "grid_h"),
                     ("grid_w", "grid_w"), ("classes", "classes"),
                     ("crop_h", "crop_h"), ("crop_w", "crop_w")):
        model[dst] = spec[src]


def _build_model(config: dict[str, Any]) -> ActivityModel:
    model_cfg = ModelConfig.from_dict(config["model"])
    return ActivityModel(model_cfg, seed=int(config["seed"]))


def _require_dataset(path: str | None, role: str):
    if path is None:
        raise UsageError(f"no {role} dataset configured; set data.{role} or run `panact gen`")
    return read_dataset(path)


# -- commands ----------------------------------------------------------------


def cmd_gen(config: dict[str, Any], args: argparse.Namespace) -> int:
    out_dir = Path(config["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    spec = _scene_spec(config)
    base_seed = int(config["seed"])
    spec = SceneSpec.from_dict({**spec.to_dict(), "seed": base_seed})
    paths = {}
    for split_key, (split, count) in enumerate(sorted(config["counts"].items())):
        samples = generate_dataset(spec, int(count), split_key=split_key)
        path = out_dir / f"{split}.jsonl"
        write_dataset(samples, path, spec=spec)
        paths[split] = str(path)
        print(f"wrote {count} scenes to {path} (+ sidecar blob)")
    config["data"] = {k: paths.get(k) for k in ("train", "val")} | {
        k: v for k, v in paths.items() if k not in ("train", "val")
    }
    echo_config(config, out_dir)
    return 0


def cmd_train(config: dict[str, Any], args: argparse.Namespace) -> int:
    out_dir = Path(config["out"])
    train_samples, manifest = _require_dataset(config["data"].get("train"), "train")
    val_path = config["data"].get("val")
    val_samples = read_dataset(val_path)[0] if val_path else None
    _sync_model_with_dataset(config, manifest)
    echo_config(config, out_dir)

    model = _build_model(config)
    train_cfg = TrainConfig.from_dict({**config["train"], "seed": int(config["seed"])})
    weights = LossWeights.from_dict(config["loss"])
    optimizer = Adam(model.parameter_dict(), lr=0.0, weight_decay=train_cfg.weight_decay)
    if getattr(args, "resume", None):
        ckpt = load_checkpoint(args.resume)
        model.load_arrays(ckpt.arrays)
        optimizer.load_state_arrays(ckpt.arrays, ckpt.step)
        print(f"resumed from {args.resume} at step {ckpt.step}")

    result = train(model, train_samples, train_cfg, weights=weights,
                   val_set=val_samples, out_dir=out_dir, optimizer=optimizer,
                   run_config=config)
    print(f"best F_a {result.best_f_a:.4f} at epoch {result.best_epoch}; "
          f"checkpoint at {out_dir / 'best.ckpt'}")
    return 0


def _restore_model(checkpoint_path: str, config: dict[str, Any]) -> ActivityModel:
    ckpt = load_checkpoint(checkpoint_path)
    if not ckpt.config:
        raise CheckpointError(f"{checkpoint_path}: checkpoint carries no model config")
    model = ActivityModel(ModelConfig.from_dict(ckpt.config), seed=int(config["seed"]))
    model.load_arrays({k: v for k, v in ckpt.arrays.items() if not k.startswith("adam.")})
    return model


def cmd_eval(config: dict[str, Any], args: argparse.Namespace) -> int:
    out_dir = Path(config["out"])
    if not args.checkpoint:
        raise UsageError("eval requires --checkpoint PATH")
    split = config["data"].get("val") or config["data"].get("train")
    samples, _ = _require_dataset(split, "val")
    model = _restore_model(args.checkpoint, config)
    echo_config(config, out_dir)
    grouping = config["grouping"]
    scores = evaluate(model, samples, grouping=grouping)
    (out_dir / "scores.csv").write_text(scores_to_csv([({"grouping": grouping}, scores)]))
    (out_dir / "scores.json").write_text(scores_to_json(scores) + "\n")
    print(scores_to_csv([({"grouping": grouping}, scores)]), end="")
    return 0


def _parse_vary(entries: list[str]) -> dict[str, list[str]]:
    grid: dict[str, list[str]] = {}
    for entry in entries:
        if "=" not in entry:
            raise UsageError(f"--vary expects axis=v1,v2 (got {entry!r})")
        axis, _, values = entry.partition("=")
        axis = axis.strip()
        if axis not in ABLATION_AXES:
            raise UsageError(
                f"unknown ablation axis {axis!r}; choose from {sorted(ABLATION_AXES)}"
            )
        chosen = [v.strip() for v in values.split(",") if v.strip()]
        bad = [v for v in chosen if v not in ABLATION_AXES[axis]]
        if bad:
            raise UsageError(
                f"invalid value(s) {bad} for {axis}; valid: {list(ABLATION_AXES[axis])}"
            )
        grid[axis] = chosen
    return grid


def cmd_ablate(config: dict[str, Any], args: argparse.Namespace) -> int:
    out_dir = Path(config["out"])
    grid = _parse_vary(args.vary or [])
    if not grid:
        grid = {"relation": list(RELATION_MODES)}
    axes = sorted(grid)
    train_samples, manifest = _require_dataset(config["data"].get("train"), "train")
    val_path = config["data"].get("val")
    val_samples = read_dataset(val_path)[0] if val_path else None
    _sync_model_with_dataset(config, manifest)
    echo_config(config, out_dir)

    rows = []
    for combo in itertools.product(*(grid[a] for a in axes)):
        cell = dict(zip(axes, combo))
        name = "_".join(f"{a}-{v}" for a, v in cell.items())
        cell_config = json.loads(json.dumps(config))
        cell_config["model"].update(cell)
        cell_config["out"] = str(out_dir / name)
        cell_dir = Path(cell_config["out"])
        echo_config(cell_config, cell_dir)

        model = _build_model(cell_config)
        train_cfg = TrainConfig.from_dict({**cell_config["train"],
                                           "seed": int(cell_config["seed"])})
        weights = LossWeights.from_dict(cell_config["loss"])
        train(model, train_samples, train_cfg, weights=weights,
              val_set=val_samples, out_dir=cell_dir)
        best = load_checkpoint(cell_dir / "best.ckpt")
        model.load_arrays({k: v for k, v in best.arrays.items()
                           if not k.startswith("adam.")})
        scores = evaluate(model, val_samples or train_samples,
                          grouping=cell_config["grouping"])
        meta = {"cell": name}
        meta.update({a: cell.get(a, cell_config["model"].get(a, "")) for a in ABLATION_AXES})
        rows.append((meta, scores))
        print(f"[{name}] F_a={scores.f_overall:.4f} IoU@0.5={scores.iou_at_half:.4f}")

    table = scores_to_csv(rows)
    (out_dir / "ablate.csv").write_text(table)
    print(table, end="")
    return 0


def cmd_inspect(config: dict[str, Any], args: argparse.Namespace) -> int:
    path = Path(args.path)
    if not path.exists():
        raise DatasetError(f"no such file: {path}")
    head = path.open("rb").read(64)
    if b"panact-dataset" in head:
        samples, manifest = read_dataset(path)
        print(f"dataset {path}: {manifest['count']} scenes, flavor={manifest['flavor']}")
        if manifest.get("spec"):
            print(f"  spec: {json.dumps(manifest['spec'])}")
        for i, s in enumerate(samples[:3]):
            print(f"  scene {i}: N_i={s.n_individuals}, groups={s.groups.n_groups}, "
                  f"features{tuple(s.features.shape)}")
        if len(samples) > 3:
            print(f"  ... {len(samples) - 3} more")
    elif b"panact-checkpoint" in head:
        ckpt = load_checkpoint(path)
        model_params = {k: v for k, v in ckpt.arrays.items() if not k.startswith("adam.")}
        total = sum(int(np.prod(v.shape)) for v in model_params.values())
        print(f"checkpoint {path}: step={ckpt.step}, {len(model_params)} tensors, "
              f"{total} parameters")
        if ckpt.config:
            print(f"  model config: {json.dumps(ckpt.config)}")
        for name in sorted(model_params)[:10]:
            print(f"  {name}: {tuple(model_params[name].shape)}")
        if len(model_params) > 10:
            print(f"  ... {len(model_params) - 10} more")
    else:
        raise DatasetError(f"{path} is neither a dataset manifest nor a checkpoint")
    return 0


# -- argument plumbing --------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="panact",
                     description="Panoramic activity recognition on synthetic scenes")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: _Parser) -> None:
        p.add_argument("--config", help="JSON config file (nested or dotted keys)")
        p.add_argument("--seed", type=int, help="base RNG seed")
        p.add_argument("--out", help="run directory")
        p.add_argument("--ppe", choices=PPE_MODES,
                       help="panoramic positional embedding mode")
        p.add_argument("--proximity", choices=PROXIMITY_METRICS,
                       help="pairwise proximity metric")
        p.add_argument("--relation", choices=RELATION_MODES,
                       help="relation matrix composition")
        p.add_argument("--structure", choices=STRUCTURES,
                       help="multi-granular reasoning structure")
        p.add_argument("--grouping", choices=GROUPING_SOURCES,
                       help="grouping source used at evaluation")

    p_gen = sub.add_parser("gen", help="generate train/val datasets")
    common(p_gen)

    p_train = sub.add_parser("train", help="train a model on generated data")
    common(p_train)
    p_train.add_argument("--epochs", type=int)
    p_train.add_argument("--lr", type=float)
    p_train.add_argument("--batch", type=int)
    p_train.add_argument("--resume", help="checkpoint to continue from")

    p_eval = sub.add_parser("eval", help="score a checkpoint on a dataset")
    common(p_eval)
    p_eval.add_argument("--checkpoint", help="checkpoint file to evaluate")

    p_ablate = sub.add_parser("ablate", help="train/eval a grid of ablation cells")
    common(p_ablate)
    p_ablate.add_argument("--epochs", type=int)
    p_ablate.add_argument("--lr", type=float)
    p_ablate.add_argument("--batch", type=int)
    p_ablate.add_argument("--vary", action="append",
                          help="axis=v1,v2 (repeatable); axes: ppe, proximity, "
                               "relation, structure")

    p_inspect = sub.add_parser("inspect", help="summarize a dataset or checkpoint")
    p_inspect.add_argument("path")
    common(p_inspect)
    return parser


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "inspect": cmd_inspect,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        config = load_config(getattr(args, "config", None))
        config = apply_flags(config, args)
        return COMMANDS[args.command](config, args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ShapeError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except (DatasetError, CheckpointError, GeometryError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (NumericError, ValueError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

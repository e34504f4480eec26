"""Command-line surface: ceiling sweeps, dataset tooling, training,
evaluation and the three-arm experiment.

Exit codes are a stable scripting contract: 0 success, 2 usage or input
error, 3 numeric failure (divergence or degenerate statistics).

Every run echoes its effective configuration (file values merged with
flag overrides) into the output location, and quarantines wall-clock
metadata in a ``run_meta.json`` sidecar so the primary artifacts stay
byte-identical across reruns with the same inputs and seeds.

Config files are either JSON or flat ``key = value`` lines with dotted
keys (``synth.num_items = 2000``); ``--set key=value`` applies the same
syntax from the command line and wins over the file.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path
from typing import Any

import numpy as np

from . import encoder as enc
from .bound import bound_sweep
from .data import (
    LoadedDataset,
    SynthConfig,
    filter_overlap,
    load_dataset,
    load_pairs,
    save_dataset,
    synth_generate,
    write_pairs,
)
from .errors import (
    CorrtuneError,
    DegenerateInput,
    InvalidInput,
    TrainingDiverged,
)
from .pipeline import (
    StageConfig,
    TrainingResult,
    default_experiment_config,
    evaluate,
    experiment_csv_lines,
    reseed_experiment,
    run_ceiling_experiments,
    summarize_gap,
    train_stage1,
    train_stage2,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3

OUT_ROOT_ENV = "CORRTUNE_OUT"


def _out_path(raw: str) -> Path:
    """Resolve an output path against the optional output-root env var."""
    p = Path(raw)
    root = os.environ.get(OUT_ROOT_ENV)
    if root and not p.is_absolute():
        return Path(root) / p
    return p


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _write_json(path: Path, obj: Any) -> None:
    _write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_run_meta(out_dir: Path, started: float, argv: list[str]) -> None:
    _write_json(
        out_dir / "run_meta.json",
        {
            "argv": argv,
            "started_unix": started,
            "elapsed_s": time.time() - started,
        },
    )


def _parse_scalar(token: str) -> Any:
    try:
        return json.loads(token)
    except json.JSONDecodeError:
        return token


def _load_config_file(path: Path) -> dict:
    if not path.exists():
        raise InvalidInput(f"config file {path} does not exist")
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".json":
        obj = json.loads(text)
        if not isinstance(obj, dict):
            raise InvalidInput(f"config file {path} must hold a JSON object")
        return obj
    config: dict = {}
    for line_no, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidInput(f"{path}:{line_no}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        _set_dotted(config, key, _parse_scalar(value))
    return config


def _set_dotted(config: dict, dotted: str, value: Any) -> None:
    node = config
    parts = dotted.split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise InvalidInput(f"config key {dotted!r} collides with a scalar")
    node[parts[-1]] = value


def _merged_config(args) -> dict:
    config: dict = {}
    if getattr(args, "config", None):
        config = _load_config_file(Path(args.config))
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise InvalidInput(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        _set_dotted(config, key.strip(), _parse_scalar(value.strip()))
    return config


def _log_lines(result: TrainingResult, wall_s: float) -> str:
    # per-step wall time is operational metadata, excluded from the
    # determinism contract; steps/loss/lr are deterministic
    per_step = wall_s / max(1, len(result.log))
    return (
        "".join(
            json.dumps(
                {
                    "step": e.step,
                    "loss": e.loss,
                    "lr": e.lr,
                    "wall_time_s": round(per_step * e.step, 6),
                },
                sort_keys=True,
            )
            + "\n"
            for e in result.log
        )
    )


def _parse_n_values(args) -> list[int]:
    if args.n_list:
        try:
            values = [int(tok) for tok in args.n_list.split(",") if tok]
        except ValueError:
            raise InvalidInput(f"--n-list must be comma-separated integers") from None
        if not values:
            raise InvalidInput("--n-list is empty")
        return values
    spec = args.n_range
    parts = spec.split(":")
    if len(parts) not in (2, 3, 4):
        raise InvalidInput("--n-range expects start:stop[:log|linear[:count]]")
    try:
        start, stop = int(parts[0]), int(parts[1])
    except ValueError:
        raise InvalidInput("--n-range bounds must be integers") from None
    scale = parts[2] if len(parts) >= 3 else "linear"
    count = int(parts[3]) if len(parts) == 4 else 50
    if scale not in ("log", "linear"):
        raise InvalidInput(f"unknown --n-range scale {scale!r}")
    if start < 2 or stop < start:
        raise InvalidInput("--n-range requires 2 <= start <= stop")
    if scale == "log":
        grid = np.unique(
            np.rint(np.geomspace(start, stop, num=count)).astype(int)
        )
    else:
        grid = np.unique(np.rint(np.linspace(start, stop, num=count)).astype(int))
    return [int(n) for n in grid]


def _cmd_bound(args, argv: list[str]) -> int:
    started = time.time()
    n_values = _parse_n_values(args)
    rows = bound_sweep(n_values)
    out_csv = _out_path(args.out)
    lines = ["n,k_star,min_sum_d_sq,max_rho"]
    lines += [
        f"{r.n},{r.k_star},{r.min_sum_d_sq:.12g},{r.max_rho:.12g}" for r in rows
    ]
    _write_text(out_csv, "\n".join(lines) + "\n")
    written = [out_csv]
    if not args.no_plot:
        from .figures import plot_bound_convergence

        written.append(plot_bound_convergence(rows, out_csv.with_suffix(".png")))
    _write_json(
        out_csv.with_name(out_csv.stem + ".config.json"),
        {"n_values": n_values, "out": str(out_csv)},
    )
    _write_run_meta(out_csv.parent, started, argv)
    largest = rows[-1] if rows else None
    print(
        "ceiling approaches 7/8 = 0.875 from above as n grows"
        + (f"; largest n={largest.n} gives max rho {largest.max_rho:.9f}" if largest else ""),
        file=sys.stderr,
    )
    for path in written:
        print(f"wrote {path}", file=sys.stderr)
    return EXIT_OK


def _cmd_filter(args, argv: list[str]) -> int:
    started = time.time()
    train = load_pairs(args.train)
    test_sets = [load_pairs(path) for path in args.test]
    kept, removed = filter_overlap(train, test_sets)
    out = _out_path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_pairs(kept, out)
    if args.removed_out:
        removed_path = _out_path(args.removed_out)
        removed_path.parent.mkdir(parents=True, exist_ok=True)
        write_pairs(removed, removed_path)
    _write_json(
        out.with_name(out.stem + ".config.json"),
        {
            "train": str(args.train),
            "test": [str(t) for t in args.test],
            "out": str(out),
            "removed_out": str(args.removed_out) if args.removed_out else None,
        },
    )
    _write_run_meta(out.parent, started, argv)
    print(f"{args.train}: {len(train)} -> {len(kept)} ({len(removed)} removed)")
    return EXIT_OK


def _synth_config_from(args) -> SynthConfig:
    config = _merged_config(args)
    synth = config.get("synth", config)
    defaults = {
        "num_items": 2000,
        "latent_dim": 16,
        "feature_dim": 32,
        "observation_noise": 0.05,
        "score_noise": 0.25,
        "num_pairs": 10000,
        "seed": 0,
        "rescale_fraction": 0.0,
    }
    merged = {**defaults, **{k: v for k, v in synth.items() if k in defaults}}
    unknown = set(synth) - set(defaults)
    if unknown:
        raise InvalidInput(f"unknown synth config keys: {sorted(unknown)}")
    for flag in defaults:
        value = getattr(args, flag, None)
        if value is not None:
            merged[flag] = value
    return SynthConfig(**merged)


def _cmd_synth(args, argv: list[str]) -> int:
    started = time.time()
    config = _synth_config_from(args)
    ds = synth_generate(config)
    out_dir = _out_path(args.out)
    save_dataset(ds, out_dir)
    _write_json(out_dir / "effective_config.json", {"synth": asdict(config)})
    _write_run_meta(out_dir, started, argv)
    print(
        f"generated {len(ds.items)} items, {len(ds.pairs)} pairs "
        f"(train/dev/test = {len(ds.train)}/{len(ds.dev)}/{len(ds.test)}), "
        f"{len(ds.triplets)} triplets -> {out_dir}",
        file=sys.stderr,
    )
    return EXIT_OK


def _stage_config_from(args, stage: str) -> StageConfig:
    config = _merged_config(args)
    section = config.get("stage1" if stage == "I" else "stage2", config)
    defaults: dict[str, Any] = {
        "learning_rate": 3e-3 if stage == "I" else 2e-3,
        "batch_size": 64 if stage == "I" else 200,
        "epochs": 4 if stage == "I" else 20,
        "seed": 0,
        "eval_every": 0,
    }
    if stage == "I":
        defaults["temperature"] = 0.1
    else:
        defaults["variance_guard"] = "train"
    merged = {**defaults, **{k: v for k, v in section.items() if k in defaults}}
    unknown = set(section) - set(defaults) - {"stage"}
    if unknown:
        raise InvalidInput(f"unknown stage config keys: {sorted(unknown)}")
    for flag in defaults:
        value = getattr(args, flag, None)
        if value is not None:
            merged[flag] = value
    return StageConfig(stage=stage, **merged)


def _load_training_data(args) -> LoadedDataset:
    return load_dataset(_out_path(args.data))


def _cmd_train1(args, argv: list[str]) -> int:
    started = time.time()
    config = _stage_config_from(args, "I")
    ds = _load_training_data(args)
    if not ds.triplets:
        raise InvalidInput(f"dataset {args.data} holds no triplets")
    hidden = args.hidden_dim or 64
    embed = args.embed_dim or 32
    feature_dim = next(iter(ds.features_by_id.values())).size
    params = enc.init_params(
        input_dim=feature_dim, hidden_dim=hidden, embed_dim=embed,
        seed=args.init_seed if args.init_seed is not None else config.seed,
    )
    result = train_stage1(params, ds.triplets, ds.features_by_id, config)
    out_dir = _out_path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    blob = enc.save_checkpoint(result.params)
    (out_dir / "checkpoint.json").write_bytes(blob)
    _write_text(out_dir / "train_log.jsonl", _log_lines(result, time.time() - started))
    _write_json(
        out_dir / "effective_config.json",
        {"stage1": _config_dict(config), "hidden_dim": hidden, "embed_dim": embed},
    )
    _write_run_meta(out_dir, started, argv)
    print(
        f"stage I: {len(result.log)} steps, final loss "
        f"{result.log[-1].loss:.6f}" if result.log else "stage I: 0 steps",
        file=sys.stderr,
    )
    print(f"checkpoint {enc.checkpoint_id(blob)} -> {out_dir}", file=sys.stderr)
    return EXIT_OK


def _config_dict(config: StageConfig) -> dict:
    doc = asdict(config)
    return {k: v for k, v in doc.items() if v is not None}


def _cmd_train2(args, argv: list[str]) -> int:
    started = time.time()
    config = _stage_config_from(args, "II")
    ds = _load_training_data(args)
    train_pairs = ds.splits.get("train")
    if not train_pairs:
        raise InvalidInput(f"dataset {args.data} holds no train pairs")
    ckpt_path = _out_path(args.from_checkpoint)
    if not ckpt_path.exists():
        raise InvalidInput(f"checkpoint {ckpt_path} does not exist")
    params = enc.load_checkpoint(ckpt_path.read_bytes())
    result = train_stage2(params, train_pairs, ds.features_by_id, config)
    out_dir = _out_path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    blob = enc.save_checkpoint(result.params)
    (out_dir / "checkpoint.json").write_bytes(blob)
    _write_text(out_dir / "train_log.jsonl", _log_lines(result, time.time() - started))
    _write_json(out_dir / "effective_config.json", {"stage2": _config_dict(config)})
    _write_run_meta(out_dir, started, argv)
    print(f"checkpoint {enc.checkpoint_id(blob)} -> {out_dir}", file=sys.stderr)
    return EXIT_OK


def _cmd_eval(args, argv: list[str]) -> int:
    started = time.time()
    ds = _load_training_data(args)
    ckpt_path = _out_path(args.checkpoint)
    if not ckpt_path.exists():
        raise InvalidInput(f"checkpoint {ckpt_path} does not exist")
    params = enc.load_checkpoint(ckpt_path.read_bytes())
    wanted = [name for name in args.splits.split(",") if name]
    missing = [name for name in wanted if name not in ds.splits]
    if missing:
        raise InvalidInput(f"dataset has no splits named {missing}")
    report = evaluate(params, {name: ds.splits[name] for name in wanted},
                      ds.features_by_id)
    out_dir = _out_path(args.out)
    _write_json(out_dir / "eval.json", report.as_dict())
    _write_json(out_dir / "effective_config.json",
                {"checkpoint": str(ckpt_path), "splits": wanted})
    _write_run_meta(out_dir, started, argv)
    for name, score in report.per_dataset.items():
        print(f"{name}: {score:.4f}")
    print(f"average: {report.average:.4f}")
    return EXIT_OK


def _cmd_experiment(args, argv: list[str]) -> int:
    started = time.time()
    config = default_experiment_config()
    overrides = _merged_config(args)
    if overrides:
        config = _apply_experiment_overrides(config, overrides)
    seeds = [int(tok) for tok in args.seeds.split(",") if tok]
    if not seeds:
        raise InvalidInput("--seeds is empty")
    results = run_ceiling_experiments(config, seeds)
    out_dir = _out_path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_text = "\n".join(experiment_csv_lines(results)) + "\n"
    _write_text(out_dir / "experiment.csv", csv_text)
    _write_json(
        out_dir / "experiment.json",
        {
            "seeds": seeds,
            "medians": summarize_gap(results),
            "runs": [
                {
                    "seed": res.seed,
                    "ceiling_x100": res.ceiling_x100,
                    "arms": res.arms,
                    "dataset_counts": res.dataset_counts,
                    "reports": {k: r.as_dict() for k, r in res.reports.items()},
                }
                for res in results
            ],
        },
    )
    if not args.no_plot:
        from .figures import plot_experiment_arms

        plot_experiment_arms(results, out_dir / "experiment.png")
    _write_json(out_dir / "effective_config.json", _experiment_config_dict(config, seeds))
    _write_run_meta(out_dir, started, argv)
    med = summarize_gap(results)
    for arm in ("stage1", "contrastive", "pearson"):
        print(f"median {arm}: {med[arm]:.3f}")
    print(f"median refinement gain: {med['pearson_minus_stage1']:.3f}")
    return EXIT_OK


def _apply_experiment_overrides(config, overrides: dict):
    synth = replace(config.synth, **overrides.get("synth", {}))
    stage1 = replace(config.stage1, **overrides.get("stage1", {}))
    stage2 = replace(config.stage2, **overrides.get("stage2", {}))
    cont = replace(
        config.stage2_contrastive, **overrides.get("stage2_contrastive", {})
    )
    extra = {
        k: overrides[k] for k in ("hidden_dim", "embed_dim") if k in overrides
    }
    unknown = set(overrides) - {
        "synth", "stage1", "stage2", "stage2_contrastive", "hidden_dim", "embed_dim"
    }
    if unknown:
        raise InvalidInput(f"unknown experiment config keys: {sorted(unknown)}")
    from .pipeline import ExperimentConfig

    return ExperimentConfig(
        synth=synth,
        stage1=stage1,
        stage2=stage2,
        stage2_contrastive=cont,
        hidden_dim=extra.get("hidden_dim", config.hidden_dim),
        embed_dim=extra.get("embed_dim", config.embed_dim),
    )


def _experiment_config_dict(config, seeds: list[int]) -> dict:
    return {
        "seeds": seeds,
        "synth": asdict(config.synth),
        "stage1": _config_dict(config.stage1),
        "stage2": _config_dict(config.stage2),
        "stage2_contrastive": _config_dict(config.stage2_contrastive),
        "hidden_dim": config.hidden_dim,
        "embed_dim": config.embed_dim,
    }


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON or key=value config file")
    parser.add_argument(
        "--set",
        action="append",
        metavar="KEY=VALUE",
        help="override one dotted config key (repeatable)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="corrtune",
        description=(
            "Binary-predictor Spearman ceiling analysis and a two-stage "
            "correlation-loss fine-tuning pipeline on synthetic data."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bound", help="sweep the binary-predictor ceiling")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--n-list", help="comma-separated n values")
    group.add_argument("--n-range", help="start:stop[:log|linear[:count]]")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(func=_cmd_bound)

    p = sub.add_parser("filter", help="drop train pairs overlapping test sets")
    p.add_argument("--train", required=True)
    p.add_argument("--test", action="append", required=True)
    p.add_argument("--out", required=True, help="kept-pairs output file")
    p.add_argument("--removed-out", help="write removed pairs here")
    p.set_defaults(func=_cmd_filter)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    _add_config_flags(p)
    p.add_argument("--num-items", type=int, dest="num_items")
    p.add_argument("--latent-dim", type=int, dest="latent_dim")
    p.add_argument("--feature-dim", type=int, dest="feature_dim")
    p.add_argument("--observation-noise", type=float, dest="observation_noise")
    p.add_argument("--score-noise", type=float, dest="score_noise")
    p.add_argument("--num-pairs", type=int, dest="num_pairs")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="dataset output directory")
    p.set_defaults(func=_cmd_synth)

    for name, help_text in (
        ("train1", "contrastive stage-I training"),
        ("train2", "correlation-loss stage-II training"),
    ):
        p = sub.add_parser(name, help=help_text)
        _add_config_flags(p)
        p.add_argument("--data", required=True, help="dataset directory")
        p.add_argument("--out", required=True, help="run output directory")
        p.add_argument("--learning-rate", type=float, dest="learning_rate")
        p.add_argument("--batch-size", type=int, dest="batch_size")
        p.add_argument("--epochs", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--eval-every", type=int, dest="eval_every")
        if name == "train1":
            p.add_argument("--temperature", type=float)
            p.add_argument("--hidden-dim", type=int, dest="hidden_dim")
            p.add_argument("--embed-dim", type=int, dest="embed_dim")
            p.add_argument("--init-seed", type=int, dest="init_seed")
            p.set_defaults(func=_cmd_train1)
        else:
            p.add_argument("--variance-guard", dest="variance_guard",
                           choices=("strict", "train"))
            p.add_argument("--from-checkpoint", required=True,
                           dest="from_checkpoint")
            p.set_defaults(func=_cmd_train2)

    p = sub.add_parser("eval", help="evaluate a checkpoint on dataset splits")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--splits", default="test")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("experiment", help="run the three-arm ceiling experiment")
    _add_config_flags(p)
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.add_argument("--out", required=True)
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(func=_cmd_experiment)
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, argv)
    except (TrainingDiverged, DegenerateInput) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CorrtuneError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

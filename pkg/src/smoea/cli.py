"""Command-line surface.

Subcommands: train, evolve-layer, prune, baseline, sweep, report. Every
run writes a self-describing directory: config.echo (the merged JSON
config), log.txt, any produced model under model/, Pareto fronts under
fronts/, and report.json. Re-running with the echoed config and seeds
reproduces all numeric outputs.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

from . import network as N
from .data import Dataset, SyntheticParams, generate_synthetic, load_cifar10
from .evolution import EvolutionConfig, evolve_subnetwork, knee_point, write_front_csv, run_summary
from .exceptions import ArgumentError, SmoeaError, UnknownLayerError
from .network import Network, build_toy_cnn, build_vgg14, load_model, save_model
from .objectives import ALPHA_MODES, EvaluationContext
from .pipeline import (
    FineTuneConfig,
    GroupPlan,
    baseline_prune,
    calibration_batch,
    evaluate_accuracy,
    finetune,
    group_layers,
    smoea_prune,
    sweep_uniform_retention,
    _layer_seed,
)

log = logging.getLogger("smoea")

DEFAULT_CONFIG = {
    "model": {
        "builtin": "toy-cnn",
        "path": None,
        "seed": 0,
        "conv_channels": [8, 16, 16, 16],
        "input_shape": [3, 8, 8],
        "classes": 10,
    },
    "dataset": {
        "kind": "synthetic",
        "path": None,
        "classes": 10,
        "train_per_class": 40,
        "test_per_class": 10,
        "channels": 3,
        "height": 8,
        "width": 8,
        "noise": 0.3,
        "seed": 0,
    },
    "groups": {"l0": 1, "block_counts": [1, 1, 1, 1]},
    "evolution": asdict(EvolutionConfig()),
    "finetune": {
        "lr": 0.01,
        "epochs": 8,
        "milestones": [4, 6],
        "batch_size": 32,
        "momentum": 0.9,
        "seed": 0,
    },
    "calibration_size": 64,
    "output_dir": None,
    "deterministic": True,
}


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def load_config(path: str | None) -> dict:
    if path is None:
        return dict(DEFAULT_CONFIG)
    try:
        user = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ArgumentError(f"cannot read config {path}: {e}") from e
    if not isinstance(user, dict):
        raise ArgumentError("config must be a JSON object")
    return _merge(DEFAULT_CONFIG, user)


def build_dataset(cfg: dict) -> Dataset:
    d = cfg["dataset"]
    if d["kind"] == "synthetic":
        return generate_synthetic(
            SyntheticParams(
                classes=d["classes"],
                train_per_class=d["train_per_class"],
                test_per_class=d["test_per_class"],
                channels=d["channels"],
                height=d["height"],
                width=d["width"],
                noise=d["noise"],
                seed=d["seed"],
            )
        )
    if d["kind"] == "cifar10-binary":
        if not d.get("path"):
            raise ArgumentError("dataset.path required for cifar10-binary")
        return load_cifar10(d["path"])
    raise ArgumentError(f"unknown dataset kind {d['kind']!r}")


def build_model(cfg: dict, model_path: str | None = None) -> Network:
    m = cfg["model"]
    path = model_path or m.get("path")
    if path:
        return load_model(path)
    if m["builtin"] == "vgg14":
        return build_vgg14(seed=m["seed"])
    if m["builtin"] == "toy-cnn":
        return build_toy_cnn(
            conv_channels=tuple(m["conv_channels"]),
            input_shape=tuple(m["input_shape"]),
            num_classes=m["classes"],
            seed=m["seed"],
        )
    raise ArgumentError(f"unknown builtin model {m['builtin']!r}")


def evolution_config(cfg: dict) -> EvolutionConfig:
    return EvolutionConfig(**cfg["evolution"])


def finetune_config(cfg: dict) -> FineTuneConfig:
    f = dict(cfg["finetune"])
    f["milestones"] = tuple(f["milestones"])
    return FineTuneConfig(**f)


def group_plan(cfg: dict) -> GroupPlan:
    g = cfg["groups"]
    if not g["block_counts"]:
        return GroupPlan(g["l0"], [])
    return GroupPlan(g["l0"], list(g["block_counts"]))


def make_run_dir(args, command: str) -> Path:
    if args.out:
        run_dir = Path(args.out)
    else:
        root = Path(os.environ.get("SMOEA_RUNS", "runs"))
        run_dir = root / f"{command}-{time.strftime('%Y%m%d-%H%M%S')}"
    run_dir.mkdir(parents=True, exist_ok=True)
    return run_dir


def setup_run(args, command: str) -> tuple[dict, Path]:
    cfg = load_config(args.config)
    run_dir = make_run_dir(args, command)
    (run_dir / "config.echo").write_text(json.dumps(cfg, indent=2))
    for old in list(log.handlers):
        log.removeHandler(old)
        old.close()
    handler = logging.FileHandler(run_dir / "log.txt")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    log.addHandler(handler)
    log.setLevel(logging.INFO)
    log.info("command=%s run_dir=%s", command, run_dir)
    return cfg, run_dir


def write_report(run_dir: Path, payload: dict) -> None:
    (run_dir / "report.json").write_text(json.dumps(payload, indent=2))


# ---------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    cfg, run_dir = setup_run(args, "train")
    dataset = build_dataset(cfg)
    net = build_model(cfg, args.model)
    ft = finetune_config(cfg)
    if args.epochs is not None:
        ft = replace(ft, epochs=args.epochs,
                     milestones=tuple(m for m in ft.milestones if m < args.epochs))
    net = finetune(net, dataset, ft)
    acc = evaluate_accuracy(net, dataset.test_images, dataset.test_labels)
    save_model(net, run_dir / "model")
    log.info("trained model accuracy=%.4f", acc)
    write_report(run_dir, {"command": "train", "test_accuracy": acc,
                           "params": N.count_params(net),
                           "flops": N.count_flops(net)})
    print(f"test_accuracy={acc:.4f}")
    return 0


def cmd_evolve_layer(args) -> int:
    cfg, run_dir = setup_run(args, "evolve-layer")
    dataset = build_dataset(cfg)
    net = build_model(cfg, args.model)
    if not 1 <= args.layer <= net.num_convs:
        raise UnknownLayerError(f"layer {args.layer} out of range 1..{net.num_convs}")
    evo = replace(evolution_config(cfg), alpha_mode=args.alpha_mode)
    calib = calibration_batch(dataset, cfg["calibration_size"], evo.seed)
    _, captured = N.forward(net, calib, capture={args.layer})
    sub = N.extract_subnetwork(net, args.layer)
    ctx = EvaluationContext.build(sub, captured[args.layer], evo.alpha_mode)
    result = evolve_subnetwork(ctx, replace(evo, seed=_layer_seed(evo.seed, args.layer)))
    write_front_csv(result.front, run_dir / "fronts" / f"layer_{args.layer}.csv")
    summary = run_summary(evo, result)
    summary["command"] = "evolve-layer"
    summary["layer"] = args.layer
    write_report(run_dir, summary)
    knee = knee_point(result.front)
    print(
        f"layer={args.layer} alpha_mode={evo.alpha_mode} "
        f"front_size={len(result.front)} "
        f"knee_filter_pct={knee.objectives.filter_pct:.4f} "
        f"knee_error={knee.objectives.error:.6g}"
    )
    return 0


def cmd_prune(args) -> int:
    cfg, run_dir = setup_run(args, "prune")
    dataset = build_dataset(cfg)
    net = build_model(cfg, args.model)
    plan = group_plan(cfg)
    pruned, report = smoea_prune(
        net, dataset, plan, evolution_config(cfg), finetune_config(cfg),
        calibration_size=cfg["calibration_size"],
    )
    save_model(pruned, run_dir / "model")
    from .evolution import Individual, mask_from_hex
    from .objectives import ObjectiveVector
    for row in report.layers:
        members = []
        for entry in row["front"]:
            ind = Individual(mask_from_hex(entry["mask_hex"], row["num_filters"]))
            ind.objectives = ObjectiveVector(entry["filter_pct"], entry["error"])
            members.append(ind)
        write_front_csv(members, run_dir / "fronts" / f"layer_{row['ordinal']}.csv")
    payload = report.to_dict()
    payload["command"] = "prune"
    write_report(run_dir, payload)
    print(
        f"remained_parameter_pct={payload['remained_parameter_pct']:.2f} "
        f"final_accuracy={report.final_accuracy:.4f}"
    )
    return 0


def cmd_baseline(args) -> int:
    cfg, run_dir = setup_run(args, "baseline")
    dataset = build_dataset(cfg)
    net = build_model(cfg, args.model)
    plan = group_plan(cfg)
    targets = [l for group in group_layers(plan, net.num_convs) for l in group]
    rates = {l: args.retain for l in targets}
    pruned, accuracies = baseline_prune(
        net, dataset, plan, rates, args.criterion, finetune_config(cfg),
        seed=cfg["evolution"]["seed"],
    )
    save_model(pruned, run_dir / "model")
    payload = {
        "command": "baseline",
        "criterion": args.criterion,
        "retain": args.retain,
        "params_before": N.count_params(net),
        "params_after": N.count_params(pruned),
        "stage_accuracies": accuracies,
        "final_accuracy": accuracies[-1] if accuracies else None,
    }
    write_report(run_dir, payload)
    print(f"criterion={args.criterion} final_accuracy={accuracies[-1]:.4f}")
    return 0


def cmd_sweep(args) -> int:
    cfg, run_dir = setup_run(args, "sweep")
    dataset = build_dataset(cfg)
    net = build_model(cfg, args.model)
    fractions = [float(f) for f in args.fractions.split(",")]
    rows = sweep_uniform_retention(
        net, dataset, fractions, evolution_config(cfg), finetune_config(cfg),
        calibration_size=cfg["calibration_size"],
    )
    lines = ["fraction,remained_params_pct,accuracy"]
    for row in rows:
        lines.append(
            f"{row['fraction']},{row['remained_params_pct']},{row['accuracy']}"
        )
    (run_dir / "sweep.csv").write_text("\n".join(lines) + "\n")
    write_report(run_dir, {"command": "sweep", "rows": rows})
    for row in rows:
        print(
            f"fraction={row['fraction']:.2f} "
            f"params_pct={row['remained_params_pct']:.2f} "
            f"accuracy={row['accuracy']:.4f}"
        )
    return 0


def cmd_report(args) -> int:
    cfg, run_dir = setup_run(args, "report")
    net = build_model(cfg, args.model)
    payload = {
        "command": "report",
        "params": N.count_params(net),
        "flops": N.count_flops(net),
        "num_convs": net.num_convs,
        "input_shape": list(net.input_shape),
    }
    if args.with_accuracy:
        dataset = build_dataset(cfg)
        payload["test_accuracy"] = evaluate_accuracy(
            net, dataset.test_images, dataset.test_labels
        )
    write_report(run_dir, payload)
    print(f"params={payload['params']} flops={payload['flops']:.4g}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="smoea", description="sub-network evolutionary filter pruning"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out", help="run directory (default: $SMOEA_RUNS/<cmd>-<ts>)")
        p.add_argument("--model", help="model directory to load instead of builtin")

    p = sub.add_parser("train", help="train a model and save it")
    common(p)
    p.add_argument("--epochs", type=int, help="override training epochs")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evolve-layer", help="evolve one layer's mask front")
    common(p)
    p.add_argument("--layer", type=int, required=True)
    p.add_argument("--alpha-mode", choices=ALPHA_MODES, default="optimized",
                   dest="alpha_mode")
    p.set_defaults(func=cmd_evolve_layer)

    p = sub.add_parser("prune", help="full group-wise evolutionary pruning")
    common(p)
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("baseline", help="prune with a heuristic criterion")
    common(p)
    p.add_argument("--criterion", choices=["random", "l2", "fpgm"], required=True)
    p.add_argument("--retain", type=float, default=0.5)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("sweep", help="uniform-retention sweep")
    common(p)
    p.add_argument("--fractions", default="0.25,0.35,0.45,0.55,0.65,0.75")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="params / FLOPs / accuracy of a model")
    common(p)
    p.add_argument("--with-accuracy", action="store_true")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SmoeaError as e:
        print(
            f"ERROR code={e.exit_code} type={type(e).__name__} msg={e}",
            file=sys.stderr,
        )
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())

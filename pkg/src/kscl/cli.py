"""Command-line entry point: ``kscl <verb> [--config PATH] [--out DIR] [--seed N] [--quiet]``.

Exit codes: 0 ok, 2 configuration error, 3 numeric or I/O failure, 4 invariant failure.
Every verb writes ``manifest.json`` to its output directory before doing any work.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import storage, trainer
from .config import TrainConfig, load_config
from .data import generate_dataset
from .errors import InvalidConfig, InvariantViolation, KsclError
from .selfcheck import FAULTS, run_selfcheck
from .viz import basis_composition, composition_header, composition_rows

log = logging.getLogger("kscl")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="key = value config file (defaults if omitted)")
    common.add_argument("--out", metavar="DIR", default=None, help="output directory (default: runs/<verb>)")
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--quiet", action="store_true", help="only print errors")

    p = argparse.ArgumentParser(prog="kscl", description="K-shot contrastive learning on instance subspaces.")
    sub = p.add_subparsers(dest="command", required=True, metavar="VERB")
    sub.add_parser("gen-data", parents=[common], help="write the synthetic dataset (binary + CSV)")
    sub.add_parser("pretrain", parents=[common], help="pretrain query/key encoders")
    probe = sub.add_parser("probe", parents=[common], help="linear probe on a checkpoint")
    probe.add_argument("--checkpoint", metavar="PATH", help="checkpoint file (else config 'checkpoint')")
    sub.add_parser("sweep", parents=[common], help="pretrain + probe over the K x rho x seed grid")
    viz = sub.add_parser("basis-viz", parents=[common], help="basis composition of one or more instances")
    viz.add_argument("--checkpoint", metavar="PATH")
    viz.add_argument("--instance", metavar="IDS", help="comma-separated instance ids (else config viz_instance)")
    viz.add_argument("--k", type=int, default=None, help="override k_shots")
    viz.add_argument("--rho", type=float, default=None, help="override rho")
    check = sub.add_parser("selfcheck", parents=[common], help="run the built-in invariant suites")
    check.add_argument("--inject-fault", choices=FAULTS, default=None, help=argparse.SUPPRESS)
    return p


def _resolve(args) -> TrainConfig:
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "k", None) is not None:
        overrides["k_shots"] = args.k
    if getattr(args, "rho", None) is not None:
        overrides["rho"] = args.rho
    if args.config and not Path(args.config).is_file():
        raise InvalidConfig(f"config file not found: {args.config}", key="config")
    return load_config(args.config, overrides)


def write_manifest(out: Path, command: str, config_path: str | None, config: TrainConfig) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    return storage.write_json(
        out / "manifest.json",
        {
            "command": command,
            "config_path": config_path,
            "resolved_config": config.to_dict(),
            "config_hash": config.content_hash(),
            "out_dir": str(out),
        },
    )


def _checkpoint_path(args, config: TrainConfig) -> str:
    path = getattr(args, "checkpoint", None) or config.checkpoint
    if not path:
        raise InvalidConfig("no checkpoint given (use --checkpoint or the 'checkpoint' key)", key="checkpoint")
    return path


def cmd_gen_data(config: TrainConfig, out: Path) -> int:
    ds = generate_dataset(
        config.num_classes, config.instances_per_class, config.feature_dim, config.class_separation, config.seed
    )
    storage.save_dataset(out / "dataset.bin", ds)
    (out / "dataset.csv").write_text(storage.dataset_csv(ds))
    log.info("wrote %d instances to %s", len(ds), out / "dataset.bin")
    return 0


def cmd_pretrain(config: TrainConfig, out: Path) -> int:
    report, _ = trainer.pretrain(config, out_dir=out)
    log.info("final epoch loss %.4f, mean L %.3f", report.epoch_losses[-1], report.mean_rank)
    return 0


def cmd_probe(config: TrainConfig, out: Path, ckpt_path: str) -> int:
    ckpt = storage.load_checkpoint(ckpt_path)
    ds = trainer.load_or_generate(config)
    args = (config.probe_epochs, config.probe_lr, config.seed, config.probe_split)
    probe = trainer.linear_probe(ckpt, ds, *args)
    control = trainer.linear_probe(ckpt, ds, *args, permute_labels=True)
    storage.write_json(out / "probe_report.json", {"probe": probe.to_json(), "permutation_control": control.to_json()})
    log.info("probe accuracy %.4f (permuted-label control %.4f)", probe.accuracy, control.accuracy)
    return 0


def cmd_sweep(config: TrainConfig, out: Path) -> int:
    rows = trainer.ablation_sweep(config, out)
    for r in rows:
        log.info("K=%d rho=%g seed=%d probe %.4f mean L %.3f", r["K"], r["rho"], r["seed"], r["probe_acc"], r["mean_L"])
    return 0


def cmd_basis_viz(config: TrainConfig, out: Path, ckpt_path: str, instances: str | None) -> int:
    ckpt = storage.load_checkpoint(ckpt_path)
    ds = trainer.load_or_generate(config)
    try:
        ids = [int(t) for t in instances.split(",")] if instances else [config.viz_instance]
    except ValueError:
        raise InvalidConfig(f"bad instance list {instances!r}", key="instance") from None
    by_id = {int(i): n for n, i in enumerate(ds.ids)}
    missing = [i for i in ids if i not in by_id]
    if missing:
        raise InvalidConfig(f"unknown instance ids {missing}", key="instance")
    comps = [basis_composition(ckpt.pair.key, ds[by_id[i]], config.augmentation(), config.policy()) for i in ids]
    storage.write_json(
        out / "basis_viz.json",
        {"k_shots": config.k_shots, "rho": config.rho, "instances": [c.to_json() for c in comps]},
    )
    rows = [row for c in comps for row in composition_rows(c)]
    storage.write_csv(out / "basis_viz.csv", composition_header(config.k_shots, ds.feature_dim), rows)
    short = [c.instance_id for c in comps if c.energy_ratio < config.rho - 1e-12]
    if short:
        raise InvariantViolation(f"retained weight energy below rho for instances {short}")
    for c in comps:
        log.info("instance %d: L=%d, energy ratio %.4f", c.instance_id, c.eigenvalues.size, c.energy_ratio)
    return 0


def cmd_selfcheck(out: Path, fault: str | None) -> int:
    results = run_selfcheck(fault)
    storage.write_json(out / "selfcheck.json", [{"suite": r.name, "passed": r.passed, "detail": r.detail} for r in results])
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name:<20} {r.seconds:7.3f} s  {r.detail}")
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise InvariantViolation(f"violated invariants: {', '.join(failed)}")
    return 0


def run(args) -> int:
    config = _resolve(args)
    out = Path(args.out or Path("runs") / args.command)
    write_manifest(out, args.command, args.config, config)
    if args.command == "gen-data":
        return cmd_gen_data(config, out)
    if args.command == "pretrain":
        return cmd_pretrain(config, out)
    if args.command == "probe":
        return cmd_probe(config, out, _checkpoint_path(args, config))
    if args.command == "sweep":
        return cmd_sweep(config, out)
    if args.command == "basis-viz":
        return cmd_basis_viz(config, out, _checkpoint_path(args, config), args.instance)
    return cmd_selfcheck(out, args.inject_fault)


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s", stream=sys.stderr, force=True
    )
    try:
        return run(args)
    except KsclError as exc:
        sys.stdout.flush()
        key = exc.context.get("key")
        where = f" (key: {key})" if key else ""
        print(f"error[{exc.code}]{where}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error[io.os_error]: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

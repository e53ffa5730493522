"""Command-line entry point: ``train``, ``eval``, ``sweep``, ``synth``, ``selfcheck``.

Exit codes: 1 configuration error, 2 data/checkpoint error, 3 numerical abort.
Set ``ONTOTEMPORAL_LOG=INFO`` (or ``DEBUG``) for progress output.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .autodiff import NumericalError
from .config import ConfigError, dump_config, load_config
from .data import DataError, augment_inverse, load_dataset
from .evaluate import SWEEP_AXES, evaluate, subsample_train, sweep
from .model import CheckpointError, OntoModel, load_checkpoint, save_checkpoint
from .synth import SpecError, SynthSpec, generate_to
from .train import TrainingAborted, fit

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3

# flag -> config key; values are strings parsed by the config layer
OVERRIDE_FLAGS = {
    "epochs": "epochs",
    "dim": "dim",
    "layers": "layers",
    "hops": "hops",
    "K": "K",
    "tau": "tau",
    "alpha1": "alpha1",
    "alpha2": "alpha2",
    "window": "window",
    "op": "op",
    "channels": "channels",
    "kernel_width": "kernel_width",
    "lr": "lr",
    "grad_clip": "grad_clip",
    "seed": "seed",
    "fusion": "fusion",
    "train_fraction": "train_fraction",
}


class _Parser(argparse.ArgumentParser):
    """Usage errors are configuration errors (exit 1), not argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--epochs")
    p.add_argument("--dim")
    p.add_argument("--layers", help="CompGCN depth J")
    p.add_argument("--hops", help="subgraph radius N, or 'max'")
    p.add_argument("--K", dest="K", help="cone constant")
    p.add_argument("--tau", help="contrastive temperature")
    p.add_argument("--alpha1", help="weight of the hierarchy loss")
    p.add_argument("--alpha2", help="weight of the contrastive loss")
    p.add_argument("--window", help="history length m")
    p.add_argument("--op", choices=("sub", "mult", "corr"))
    p.add_argument("--channels")
    p.add_argument("--kernel-width", dest="kernel_width")
    p.add_argument("--lr")
    p.add_argument("--grad-clip", dest="grad_clip")
    p.add_argument("--seed")
    p.add_argument("--fusion", choices=("gate", "sum"))
    p.add_argument("--train-fraction", dest="train_fraction")
    p.add_argument("--no-local-encoder", action="store_true", help="drop the local encoder (and its loss)")
    p.add_argument("--no-global-init", action="store_true", help="plain entity table instead of the global encoder")
    p.add_argument("--random-init", action="store_true", help="random instead of ontology-derived initial embeddings")
    p.add_argument("--no-select-best", action="store_true", help="keep the last epoch instead of the best on valid")


def _resolve_config(args):
    overrides = {key: getattr(args, flag) for flag, key in OVERRIDE_FLAGS.items() if getattr(args, flag) is not None}
    if args.no_local_encoder:
        overrides["local_encoder"] = False
    if args.no_global_init:
        overrides["global_init"] = False
    if args.random_init:
        overrides["random_init"] = True
    if args.no_select_best:
        overrides["select_best"] = False
    return load_config(args.config, overrides)


def _load_raw(data_dir: str):
    return load_dataset(data_dir)


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    raw = _load_raw(args.data)
    bundle = augment_inverse(subsample_train(raw, cfg.train_fraction, cfg.seed))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.toml").write_text(dump_config(cfg))
    model = OntoModel.for_bundle(cfg, bundle)
    history = fit(model, bundle, log_path=out / "train_log.csv")
    save_checkpoint(model, out / "checkpoint.npz")
    best = max((h.val_mrr for h in history), default=float("nan"))
    print(f"trained {len(history)} epochs; best val MRR {best:.4f}; checkpoint {out / 'checkpoint.npz'}")
    return 0


def _check_sizes(model: OntoModel, bundle) -> None:
    want = (bundle.entity_count, bundle.ontology.num_concepts, bundle.relation_count, bundle.ontology.num_relations)
    have = (model.num_entities, model.num_concepts, model.num_relations, model.num_onto_relations)
    if want != have:
        raise CheckpointError(f"checkpoint sizes {have} do not match dataset {want}")


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    raw = _load_raw(args.data)
    bundle = augment_inverse(subsample_train(raw, model.cfg.train_fraction, model.cfg.seed))
    _check_sizes(model, bundle)
    report = evaluate(model, bundle, args.split)
    print(f"{args.split}: MRR {report.mrr:.4f}  H@1 {report.hits[1]:.4f}  "
          f"H@3 {report.hits[3]:.4f}  H@10 {report.hits[10]:.4f}  ({len(report.per_query)} queries)")
    if args.buckets:
        print(report.bucket_table(), end="")
    if args.out:
        Path(args.out).write_text(report.to_json() + "\n")
    if args.dump_ranks:
        Path(args.dump_ranks).write_text(report.rank_tsv())
    return 0


def _parse_sweep_value(axis: str, raw: str):
    if axis == "N":
        return None if raw == "max" else int(raw)
    if axis == "J":
        return int(raw)
    return float(raw)


def cmd_sweep(args) -> int:
    cfg = _resolve_config(args)
    try:
        values = [_parse_sweep_value(args.axis, v.strip()) for v in args.values.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"bad sweep values {args.values!r}") from None
    if not values:
        raise ConfigError("sweep needs at least one value")
    raw = _load_raw(args.data)
    rows = sweep(args.axis, values, cfg, raw, out_csv=args.out)
    for row in rows:
        print(f"{row['axis']}={row['value']}: MRR {row['mrr']:.4f} H@1 {row['h1']:.4f} H@10 {row['h10']:.4f}")
    return 0


def cmd_synth(args) -> int:
    spec = SynthSpec.from_json(args.spec) if args.spec else SynthSpec().validate()
    if args.seed is not None:
        spec.seed = int(args.seed)
    out = generate_to(spec, args.out)
    print(f"wrote synthetic dataset to {out}")
    return 0


def cmd_selfcheck(args) -> int:
    from .selfcheck import run_selfcheck

    return 0 if run_selfcheck(instances=args.instances) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ontotemporal", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a model and write checkpoint, log and config")
    p.add_argument("--data", required=True)
    p.add_argument("--out", default="run")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=("valid", "test", "train"))
    p.add_argument("--out", help="write the JSON report here")
    p.add_argument("--buckets", action="store_true", help="print the degree-bucket table")
    p.add_argument("--dump-ranks", dest="dump_ranks", help="write per-query ranks as TSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="train one model per value of a hyperparameter")
    p.add_argument("--data", required=True)
    p.add_argument("--axis", required=True, choices=SWEEP_AXES)
    p.add_argument("--values", required=True, help="comma separated; N accepts 'max'")
    p.add_argument("--out", default="sweep.csv")
    _add_config_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--spec", help="JSON file with SynthSpec fields")
    p.add_argument("--out", required=True)
    p.add_argument("--seed")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("selfcheck", help="run gradient and invariant checks")
    p.add_argument("--instances", type=int, default=20)
    p.set_defaults(func=cmd_selfcheck)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("ONTOTEMPORAL_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, SpecError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, CheckpointError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingAborted, NumericalError) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

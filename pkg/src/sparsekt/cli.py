"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data/config error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .analysis import DEFAULT_GRIDS, KcAttentionAccumulator, accumulate_kc_attention, sweep_k
from .checkpoint import Checkpoint, CheckpointError
from .config import TrainConfig, read_config_file
from .data import ConfigError, DataError, Dataset, load_sequences, save_sequences, split, gen_synthetic
from .report import export_heatmap, plot_sweep
from .training import NumericError, evaluate, train, write_log

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("sparsekt")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


# flag name -> config key
CONFIG_FLAGS = {
    "mode": str, "k": float, "renorm": str, "d": int, "batch_size": int, "lr": float,
    "max_epochs": int, "patience": int, "max_steps": int, "seed": int, "dropout": float,
    "heads": int, "clip_norm": float, "init_std": float, "embed_std": float, "split": str,
}


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value file with TrainConfig/SparseConfig fields")
    for key, typ in CONFIG_FLAGS.items():
        flag = "--" + key.replace("_", "-")
        aliases = [flag] + (["--epochs"] if key == "max_epochs" else [])
        p.add_argument(*aliases, dest=key, type=typ, default=None)
    p.add_argument("--positional", action="store_true", default=None)
    p.add_argument("--projections", action="store_true", default=None)


def _config(args) -> TrainConfig:
    flat = TrainConfig().to_flat()
    if args.config:
        flat.update(read_config_file(args.config))
    for key in list(CONFIG_FLAGS) + ["positional", "projections"]:
        value = getattr(args, key, None)
        if value is not None:
            flat[key] = value
    return TrainConfig.from_flat(flat)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sparsekt", description="k-sparse attention knowledge tracing")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("gen-synth", help="write a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--students", type=int, default=2000)
    p.add_argument("--kcs", type=int, default=50)
    p.add_argument("--questions", type=int, default=200)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--min-len", type=int, default=10)
    p.add_argument("--max-len", type=int, default=50)
    p.add_argument("--kcs-per-student", type=int, default=5)

    p = sub.add_parser("train", help="train a model, writing a checkpoint and epoch log")
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--checkpoint", help="checkpoint path (default OUT/model.spkt)")
    p.add_argument("--log", help="epoch CSV path (default OUT/epochs.csv)")
    _add_config_flags(p)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", dest="which", choices=["all", "train", "valid", "test"], default="all")
    p.add_argument("--predictions", help="write per-position predictions CSV here")

    p = sub.add_parser("sweep-k", help="validation AUC as a function of k")
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=".")
    p.add_argument("--grid", help="comma-separated k values (default: mode's standard grid)")
    p.add_argument("--seeds", help="comma-separated seeds (default: --seed)")
    _add_config_flags(p)

    p = sub.add_parser("export-attention", help="KC-to-KC attention matrix as CSV + SVG")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=".")
    p.add_argument("--top", type=int, default=6)
    p.add_argument("--split", dest="which", choices=["all", "train", "valid", "test"], default="train")
    p.add_argument("--during-training", action="store_true",
                   help="re-run the checkpoint's training and accumulate over every training batch")
    return parser


def _splits(dataset: Dataset, cfg: TrainConfig) -> dict[str, Dataset]:
    return split(dataset, cfg.seed, cfg.split_fractions)


def _pick(dataset: Dataset, cfg: TrainConfig, which: str) -> Dataset:
    return dataset if which == "all" else _splits(dataset, cfg)[which]


def cmd_gen_synth(args) -> int:
    ds = gen_synthetic(args.students, args.kcs, args.questions, args.seed,
                       min_len=args.min_len, max_len=args.max_len, kcs_per_student=args.kcs_per_student)
    save_sequences(ds, args.out)
    print(f"wrote {len(ds)} sequences, {ds.num_interactions} interactions to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    ds = load_sequences(args.data, max_len=cfg.max_len)
    parts = _splits(ds, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = train(parts["train"], cfg, parts["valid"])
    ckpt_path = Path(args.checkpoint) if args.checkpoint else out / "model.spkt"
    log_path = Path(args.log) if args.log else out / "epochs.csv"
    result.checkpoint.save(ckpt_path)
    write_log(result.log, log_path)
    best = result.checkpoint
    print(f"best epoch {best.epoch} valid_auc={best.valid_auc} steps={result.steps} "
          f"clipped={result.clip_events}")
    print(f"checkpoint: {ckpt_path}\nepoch log: {log_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    ds = load_sequences(args.data, meta=ckpt.meta, max_len=ckpt.config.max_len)
    ev = evaluate(ckpt, _pick(ds, ckpt.config, args.which))
    auc = "nan" if ev.auc is None else f"{ev.auc:.6f}"
    print(f"auc={auc} acc={ev.accuracy:.6f}")
    if args.predictions:
        with open(args.predictions, "w") as fh:
            fh.write("student_id,position,label,prediction\n")
            for sid, preds, labels in zip(ev.student_ids, ev.predictions, ev.labels):
                for pos, (p, y) in enumerate(zip(preds, labels), start=2):
                    fh.write(f"{sid},{pos},{int(y)},{float(p)!r}\n")
    return EXIT_OK


def cmd_sweep(args) -> int:
    mode = (args.mode or "").lower()
    if mode not in DEFAULT_GRIDS:
        raise ConfigError("sweep-k needs --mode soft or --mode topk")
    grid = [float(x) for x in args.grid.split(",")] if args.grid else DEFAULT_GRIDS[mode]
    # the base config must validate under the swept mode, whatever k the config file carried
    args.k = grid[0]
    cfg = _config(args)
    seeds = [int(x) for x in args.seeds.split(",")] if args.seeds else None
    ds = load_sequences(args.data, max_len=cfg.max_len)
    parts = _splits(ds, cfg)
    report = sweep_k(parts["train"], parts["valid"], cfg, mode, grid, seeds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.write_csv(out / f"sweep_{mode}.csv")
    plot_sweep({mode: report.by_k(mode)}, out / f"sweep_{mode}.svg")
    for r in report.rows:
        print(f"{r.mode} k={r.k} seed={r.seed} valid_auc={r.valid_auc} valid_acc={r.valid_acc}")
    return EXIT_OK


def cmd_export(args) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    ds = load_sequences(args.data, meta=ckpt.meta, max_len=ckpt.config.max_len)
    if args.during_training:
        parts = _splits(ds, ckpt.config)
        acc = KcAttentionAccumulator(ckpt.meta.n)
        train(parts["train"], ckpt.config, parts["valid"], hook=acc)
        sparse = ckpt.config.sparse
        rel = acc.result(ckpt.meta.kc_ids, {"mode": sparse.mode, "k": sparse.k, "renorm": sparse.renorm,
                                            "source": "during-training"})
    else:
        rel = accumulate_kc_attention(ckpt.build_model(), _pick(ds, ckpt.config, args.which))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rel.write_csv(out / "kc_attention.csv")
    rel.write_csv(out / "kc_attention_raw.csv", normalized=False)
    top = rel.top(args.top)
    top.write_csv(out / f"kc_attention_top{args.top}.csv")
    title = f"{rel.info['mode']} k={rel.info['k']}"
    export_heatmap(rel.normalized, rel.labels, out / "kc_attention.svg", title=title)
    export_heatmap(top.normalized, top.labels, out / f"kc_attention_top{args.top}.svg", title=title)
    meta = dict(rel.info, total_mass=rel.total_mass, query_positions=rel.queries, kcs=len(rel.labels),
                top_kcs=top.labels)
    (out / "kc_attention.json").write_text(json.dumps(meta, indent=1) + "\n")
    print(f"attention mass {rel.total_mass:.6f} over {rel.queries} query positions; wrote {out}")
    return EXIT_OK


COMMANDS = {
    "gen-synth": cmd_gen_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep-k": cmd_sweep,
    "export-attention": cmd_export,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ConfigError, CheckpointError, OSError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FloatingPointError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point.

    geaet <subcommand> [--config PATH] [--set key=value]... [--out DIR] [--seed N] [--jobs K]

Exit codes: 0 success, 1 failed verification, 2 configuration or input
error, 3 numerical divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any

from . import __version__
from .config import ConfigError, RunConfig, load_config, to_dict
from .graph import GraphFormatError, _atomic_write, save_jsonl
from .model import checkpoint_dumps, load_checkpoint

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2
EXIT_DIVERGED = 3

log = logging.getLogger("geaet")


def _write_json(path: Path, obj: Any) -> None:
    _atomic_write(path, json.dumps(obj, indent=2) + "\n")


def _out_dir(args) -> Path | None:
    if args.out is None:
        return None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _resolve(args) -> RunConfig:
    overrides = list(args.set or [])
    if getattr(args, "seed", None) is not None:
        overrides.append(f"seed={args.seed}")
    return load_config(args.config, overrides)


def _resolve_and_echo(args) -> tuple[RunConfig, Path | None]:
    cfg = _resolve(args)
    out = _out_dir(args)
    if out is not None:
        _write_json(out / "config.resolved.json", to_dict(cfg))
    return cfg, out


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate(args) -> int:
    overrides = list(args.set or [])
    overrides.append(f'dataset.kind="{args.dataset}"')
    flags = {
        "r": args.r,
        "count": args.count,
        "clusters": args.clusters,
        "n_per_cluster": args.n_per_cluster,
        "p_in": args.p_in,
        "p_out": args.p_out,
        "seed": args.seed,
    }
    overrides += [f"dataset.{k}={json.dumps(v)}" for k, v in flags.items() if v is not None]
    cfg = load_config(args.config, overrides)
    from .training import prepare_data

    split = prepare_data(cfg)
    out = _out_dir(args) or Path(".")
    save_jsonl(split, out)
    _write_json(out / "config.resolved.json", to_dict(cfg))
    sizes = split.meta()["sizes"]
    print(f"wrote {sum(sizes)} graphs (train {sizes[0]}, valid {sizes[1]}, test {sizes[2]}) to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .training import train

    cfg, out = _resolve_and_echo(args)
    result = train(cfg)
    report = result.report
    if out is not None:
        _atomic_write(out / "checkpoint.json", checkpoint_dumps(result.best_state))
        _atomic_write(out / "report.json", report.to_json())
    print(
        f"best epoch {report.best_epoch}  val {report.metric} {report.best_val_metric:.4f}  "
        f"test {report.metric} {report.test_metric:.4f}  ({report.seconds:.1f}s)"
    )
    return EXIT_OK


def _load_model(cfg: RunConfig, checkpoint: str):
    from .training import build_model, prepare_data

    split = prepare_data(cfg)
    model = build_model(cfg, split)
    try:
        model.load_state_dict(load_checkpoint(checkpoint))
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"{checkpoint}: incompatible with the configured model ({exc})") from None
    return model, split


def _split_graphs(split, name: str):
    parts = {"train": split.train, "valid": split.valid, "test": split.test}
    if name not in parts:
        raise ConfigError(f"--split: expected train, valid or test, got {name!r}")
    return parts[name]


def cmd_eval(args) -> int:
    from .training import evaluate

    cfg, out = _resolve_and_echo(args)
    model, split = _load_model(cfg, args.checkpoint)
    metrics = {}
    for name in ("train", "valid", "test"):
        metrics[name] = evaluate(model, _split_graphs(split, name), cfg.optim.eval_batch_size)
    kind = "mae" if model.task.kind == "graph_regress" else "accuracy"
    for name, m in metrics.items():
        print(f"{name:<6} loss {m['loss']:.6f}  {kind} {m['metric']!r}")
    if out is not None:
        _write_json(out / "eval.json", {"metric": kind, "splits": metrics})
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradsuite import format_results, run_suite

    results = run_suite(seed=args.seed or 0)
    print(format_results(results))
    out = _out_dir(args)
    if out is not None:
        _write_json(
            out / "gradcheck.json",
            [{"component": r.name, "max_rel_error": r.error, "ok": r.ok} for r in results],
        )
    return EXIT_OK if all(r.ok for r in results) else EXIT_FAILED


def cmd_attn_dump(args) -> int:
    from .attndump import ATTN_DUMP_SCHEMA, dump_attention

    cfg, out = _resolve_and_echo(args)
    model, split = _load_model(cfg, args.checkpoint)
    graphs = _split_graphs(split, args.split)[: args.limit]
    entries = dump_attention(model, graphs)
    text = "".join(json.dumps(e, separators=(",", ":")) + "\n" for e in entries)
    out = out or Path(".")
    _atomic_write(out / "attention.jsonl", text)
    _write_json(out / "attention.schema.json", ATTN_DUMP_SCHEMA)
    print(f"wrote attention for {len(entries)} graphs to {out / 'attention.jsonl'}")
    return EXIT_OK


def cmd_bench(args) -> int:
    from .bench import BenchConfig, format_bench, run_bench

    cfg = BenchConfig(seed=args.seed or 0)
    if args.sizes:
        cfg.sizes = tuple(int(s) for s in args.sizes.split(","))
    results = run_bench(cfg)
    print(format_bench(results))
    out = _out_dir(args)
    if out is not None:
        _write_json(out / "bench.json", [r.to_dict() for r in results])
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .training import format_table, sweep_ablation, sweep_heads, sweep_pe

    cfg, out = _resolve_and_echo(args)
    seeds = [int(s) for s in args.seeds.split(",")]
    if args.kind == "heads":
        heads = [int(h) for h in args.values.split(",")] if args.values else [1, 2, 4, 8]
        table = sweep_heads(cfg, heads, seeds, args.jobs)
    elif args.kind == "pe":
        kinds = args.values.split(",") if args.values else ["none", "lappe", "rwpe"]
        table = sweep_pe(cfg, kinds, seeds, args.jobs)
    else:
        table = sweep_ablation(cfg, seeds, args.jobs)
    text = format_table(table)
    print(text)
    if out is not None:
        _write_json(out / "table.json", table)
        _atomic_write(out / "table.txt", text + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def _common(p: argparse.ArgumentParser, config: bool = True) -> None:
    if config:
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="dotted-key override (repeatable)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, help="run seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="geaet", description="Graph external attention toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic dataset as JSONL splits")
    p.add_argument("dataset", choices=["tree", "sbm"])
    _common(p)
    p.add_argument("--r", type=int)
    p.add_argument("--count", type=int)
    p.add_argument("--clusters", type=int)
    p.add_argument("--n-per-cluster", type=int)
    p.add_argument("--p-in", type=float)
    p.add_argument("--p-out", type=float)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train one model and write report + best checkpoint")
    _common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on every split")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of every op and layer")
    _common(p, config=False)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("attn-dump", help="export attention scores of a trained model")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--limit", type=int, default=None, help="number of graphs")
    p.set_defaults(func=cmd_attn_dump)

    p = sub.add_parser("bench", help="flop and wall-time scaling of forward passes")
    _common(p, config=False)
    p.add_argument("--sizes", help="comma-separated node counts")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("sweep", help="multi-seed sweeps: heads, pe or ablation")
    p.add_argument("kind", choices=["heads", "pe", "ablation"])
    _common(p)
    p.add_argument("--jobs", type=int, default=1, help="parallel training processes")
    p.add_argument("--seeds", default="0,1,2,3", help="comma-separated run seeds")
    p.add_argument("--values", help="comma-separated head counts or pe kinds")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    from .training import DivergenceError

    try:
        return args.func(args)
    except (ConfigError, GraphFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: ``biasprune <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .data import default_instructions, load_dataset, load_instructions, save_dataset, save_instructions
from .errors import BiasPruneError
from .evaluation import (
    METHODS,
    PipelineConfig,
    build_mask,
    evaluate,
    render_accuracy_table,
    render_gold_score_table,
    run_pipeline,
    save_report,
)
from .pruner import DEFAULT_N, apply_mask, compact, load_mask, save_mask
from .runtime.checkpoint import load_checkpoint, save_checkpoint

log = logging.getLogger("biasprune")


def _instructions(path: str | None):
    return load_instructions(path) if path else default_instructions()


def cmd_detect(args: argparse.Namespace) -> int:
    model = load_checkpoint(args.model)
    dataset = load_dataset(args.dataset)
    instructions = _instructions(args.instructions)
    out = Path(args.out)
    for t in range(args.trials):
        seed = args.seed + t
        mask = build_mask(model, dataset, instructions, n=args.n, k=args.k, seed=seed, trials=args.trials)
        path = out if args.trials == 1 else out.with_name(f"{out.stem}_trial{t}{out.suffix}")
        save_mask(mask, path)
        top = ", ".join(str(nid) for nid in mask.ids[:3])
        log.info("trial %d (seed %d): %d neurons -> %s [top: %s]", t, seed, mask.n, path, top)
    return 0


def cmd_prune(args: argparse.Namespace) -> int:
    model = load_checkpoint(args.model)
    mask = load_mask(args.mask)
    pruned = compact(model, mask) if args.compact else apply_mask(model, mask)
    save_checkpoint(pruned, args.out)
    log.info("pruned %d neurons -> %s", mask.n, args.out)
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    model = load_checkpoint(args.model)
    if args.mask:
        model = apply_mask(model, load_mask(args.mask))
    dataset = load_dataset(args.dataset)
    report = evaluate(model, dataset, _instructions(args.instructions), args.method,
                      dc_seed=args.seed, n_bags=args.dc_bags)
    save_report(report, args.report)
    if args.table:
        columns = {dataset.name: {args.method: report}}
        print(render_accuracy_table(columns))
        print()
        print(render_gold_score_table(columns))
    else:
        print(f"{args.method}: mean accuracy {report.mean_accuracy:.2f}")
    return 0


def cmd_pipeline(args: argparse.Namespace) -> int:
    config = PipelineConfig.from_file(args.config)
    result = run_pipeline(config)
    for method, report in result.reports.items():
        print(f"{method:>8}: mean accuracy {report.mean_accuracy:.2f}")
    print(f"artifacts in {config.output_dir}")
    return 0


def cmd_oracle_check(args: argparse.Namespace) -> int:
    from .oracles.suite import run_oracle_suite

    results = run_oracle_suite(args.seed)
    text = json.dumps(results, indent=1, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0 if results["passed"] else 1


def cmd_make_fixture(args: argparse.Namespace) -> int:
    """Write the planted fixture as files plus a ready-to-run pipeline config."""
    from .oracles.fixture import build_planted_fixture

    fx = build_planted_fixture(args.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(fx.model, out / "model.crsp")
    save_dataset(fx.dataset, out / "dataset.jsonl")
    save_instructions(fx.instructions, out / "instructions.json")
    config = {
        "model": "model.crsp",
        "dataset": "dataset.jsonl",
        "instructions": "instructions.json",
        "output_dir": "run",
        "n": args.n,
        "seed": args.seed,
    }
    (out / "config.json").write_text(json.dumps(config, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    (out / "NOTES.txt").write_text(fx.notes + "\n", encoding="utf-8")
    print(f"planted neuron {fx.planted}; files in {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="biasprune", description="Detect and prune bias neurons.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("detect", help="rank bias neurons and write prune masks")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--instructions", help="JSON list of templates (default: built-in set of 10)")
    p.add_argument("--k", type=int, default=10, help="instances sampled per trial")
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=DEFAULT_N, help="neurons kept in the mask")
    p.add_argument("--out", required=True, help="mask file; with several trials, _trial{t} is appended")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("prune", help="apply a mask to a checkpoint")
    p.add_argument("--model", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--compact", action="store_true", help="physically remove ffn.in channels")
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("eval", help="evaluate one method")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--instructions")
    p.add_argument("--method", choices=METHODS, required=True)
    p.add_argument("--mask", help="mask applied before a crispr evaluation")
    p.add_argument("--report", required=True)
    p.add_argument("--seed", type=int, default=0, help="seed for dc word bags")
    p.add_argument("--dc-bags", type=int, default=20)
    p.add_argument("--table", action="store_true", help="print aligned text tables")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pipeline", help="detect, prune and evaluate from a config file")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("oracle-check", help="run the oracle battery and print a JSON summary")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_oracle_check)

    p = sub.add_parser("make-fixture", help="write the planted-bias fixture and a pipeline config")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=1)
    p.set_defaults(func=cmd_make_fixture)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (BiasPruneError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

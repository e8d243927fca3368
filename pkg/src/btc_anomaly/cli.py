"""Command-line entry points: ``run``, ``synth`` and ``eval`` subcommands."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import evaluation, synth
from .pipeline import PipelineConfig, PipelineError, load_config, run_pipeline
from .ranking import read_ranking_csv


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="btc-anomaly",
        description="Unsupervised anomaly detection over transaction ledgers",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the full detection pipeline")
    run.add_argument("--config", required=True, help="key = value config file")
    run.add_argument("--seed", type=int)
    run.add_argument("--graphs", help="comma list: user,tx")
    run.add_argument("--detectors", help="comma list: gaussian,ocsvm")
    run.add_argument("--nu", help="nu value or comma list of candidates")
    run.add_argument("--gamma", type=float)
    run.add_argument("--k", help="fixed k or k_min:k_max range")
    run.add_argument("--sample-limit", type=int)
    run.add_argument("--out")

    gen = sub.add_parser("synth", help="generate a synthetic ledger")
    gen.add_argument("--config", required=True, help="key = value generator config")
    gen.add_argument("--out", required=True)

    ev = sub.add_parser("eval", help="check rankings against ground truth")
    ev.add_argument(
        "--rankings", nargs="+", required=True,
        help="ranking CSVs; 'user:' or 'tx:' prefix sets the kind, else inferred from the name",
    )
    ev.add_argument("--truth", required=True)
    ev.add_argument("--top-n", type=int, default=100)
    ev.add_argument("--out", help="write the hit report JSON here instead of stdout")
    return parser


def _apply_overrides(config: PipelineConfig, args: argparse.Namespace) -> PipelineConfig:
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    if args.graphs:
        items = tuple(
            "transaction" if g.strip() == "tx" else g.strip()
            for g in args.graphs.split(",") if g.strip()
        )
        config = replace(config, graphs=items)
    if args.detectors:
        config = replace(
            config,
            detectors=tuple(d.strip() for d in args.detectors.split(",") if d.strip()),
        )
    if args.nu:
        config = replace(config, nu=tuple(float(v) for v in args.nu.split(",") if v))
    if args.gamma is not None:
        config = replace(config, gamma=args.gamma)
    if args.k:
        config = replace(config, k=args.k)
    if args.sample_limit is not None:
        config = replace(config, sample_limit=args.sample_limit)
    if args.out:
        config = replace(config, out=args.out)
    return config


def _load_synth_config(path: str) -> synth.SynthConfig:
    fields = {f.name: f.type for f in synth.SynthConfig.__dataclass_fields__.values()}
    kwargs = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if not sep or key not in fields:
                raise ValueError(f"{path}:{line_no}: unknown generator key {key!r}")
            kwargs[key] = float(value) if "float" in str(fields[key]) else int(value)
    return synth.SynthConfig(**kwargs)


def _cmd_run(args: argparse.Namespace) -> int:
    try:
        config = _apply_overrides(load_config(args.config), args)
        report = run_pipeline(config)
    except (ValueError, PipelineError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {Path(config.out) / 'metrics.json'}")
    for det, info in report["detectors"].items():
        if "dual" in info:
            d = info["dual"]
            print(f"{det}: A1={d['A1']:.6f} A2={d['A2']:.6f} m_DE={d['m_DE']:.6f}")
    return 0


def _cmd_synth(args: argparse.Namespace) -> int:
    try:
        config = _load_synth_config(args.config)
        paths = synth.generate_files(config, args.out)
    except (ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for name, path in paths.items():
        print(f"wrote {name}: {path}")
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    try:
        with open(args.truth, encoding="utf-8") as fh:
            truth = evaluation.load_ground_truth(fh)
        report = {}
        for item in args.rankings:
            kind, sep, path = item.partition(":")
            if not sep:
                kind, path = ("user" if "user" in Path(item).name else "tx"), item
            if kind not in ("user", "tx"):
                raise ValueError(f"ranking kind must be user or tx, got {kind!r}")
            ranking = read_ranking_csv(path)
            ids = truth.users if kind == "user" else truth.txs
            top = min(args.top_n, len(ranking))
            hits = evaluation.ground_truth_hits(ranking, list(ids), top)
            report[f"{kind}:{path}"] = {
                "top_n": hits.top_n,
                "truth_size": hits.truth_size,
                "hit_count": hits.hit_count,
                "hits": [list(h) for h in hits.hits],
            }
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)
    return 0


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
        stream=sys.stderr,
    )
    if args.command == "run":
        return _cmd_run(args)
    if args.command == "synth":
        return _cmd_synth(args)
    return _cmd_eval(args)


if __name__ == "__main__":
    sys.exit(main())

"""Command line entry point: ``hjlab <subcommand> --config run.ini``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import defaultdict
from pathlib import Path

from .config import atomic_write_text, load_config, output_dir, write_csv
from .grid import ConfigurationError
from .params import StructureError
from .pipeline import STAGES, Context, run_stages

logger = logging.getLogger("hjlab")

EXIT_OK, EXIT_MARGIN, EXIT_CONFIG = 0, 1, 2


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="INI run configuration")
    p.add_argument("--seed", type=int, default=None, help="overrides [mc] seed")
    p.add_argument("--out", default=None, help="output directory (beats HJLAB_OUT)")
    p.add_argument("--dump-paths", action="store_true", help="also write sample paths as CSV")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hjlab", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in STAGES + ("suite",):
        _common(sub.add_parser(name, help=f"run the {name} stage" if name != "suite" else "run every stage"))
    rp = sub.add_parser("report", help="tabulate manifests")
    rp.add_argument("manifests", nargs="+")
    rp.add_argument("--out", default=None, help="directory for report.csv and report.md")
    return ap


def _flatten(prefix: str, obj, out: dict) -> None:
    if isinstance(obj, dict):
        for k, v in obj.items():
            _flatten(f"{prefix}.{k}" if prefix else str(k), v, out)
    elif isinstance(obj, (int, float)) and not isinstance(obj, bool):
        out[prefix] = float(obj)


def report_rows(manifests: list[dict]) -> list[dict]:
    """One row per (run, stage, quantity); runs grouped by ``q`` and never merged across ``q``.

    Within a ``q`` group, runs whose other structure parameters differ are
    flagged in the ``structure`` column.  For quantities present in more
    than one run of a group a ``spread`` row gives ``max - min``.
    """
    groups = defaultdict(list)
    for m in manifests:
        groups[m["structure"]["q"]].append(m)
    rows = []
    for q in sorted(groups):
        runs = groups[q]
        ref = {k: v for k, v in runs[0]["structure"].items() if k != "q"}
        collected = defaultdict(list)
        for m in runs:
            same = {k: v for k, v in m["structure"].items() if k != "q"} == ref
            flag = "ok" if same else "mismatch"
            for stage, res in m["results"].items():
                flat = {}
                _flatten("values", res.get("values", {}), flat)
                _flatten("margins", res.get("margins", {}), flat)
                for key, val in flat.items():
                    rows.append(dict(q=q, run=m["config_hash"], seed=m["seed"], stage=stage, quantity=key,
                                     value=val, structure=flag))
                    if same:
                        collected[(stage, key)].append(val)
        if len(runs) > 1:
            for (stage, key), vals in collected.items():
                if len(vals) > 1 and key.startswith("values.") and "exponent" in key:
                    rows.append(dict(q=q, run="*", seed="*", stage=stage, quantity=f"spread({key})",
                                     value=max(vals) - min(vals), structure="ok"))
    return rows


def _markdown(rows: list[dict]) -> str:
    cols = ["q", "run", "seed", "stage", "quantity", "value", "structure"]
    lines = ["| " + " | ".join(cols) + " |", "|" + "---|" * len(cols)]
    for r in rows:
        lines.append("| " + " | ".join(f"{r[c]:.6g}" if isinstance(r[c], float) else str(r[c]) for c in cols) + " |")
    return "\n".join(lines) + "\n"


def cmd_report(args) -> int:
    manifests = []
    for path in args.manifests:
        try:
            manifests.append(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            print(f"hjlab: cannot read manifest {path}: {exc}", file=sys.stderr)
            return EXIT_CONFIG
    rows = report_rows(manifests)
    md = _markdown(rows)
    sys.stdout.write(md)
    if args.out:
        out = Path(args.out)
        hashes = ",".join(sorted({m["config_hash"] for m in manifests}))
        cols = ["q", "run", "seed", "stage", "quantity", "value", "structure"]
        write_csv(out / "report.csv", cols, ([r[c] for c in cols] for r in rows), hashes)
        atomic_write_text(out / "report.md", md)
    return EXIT_OK if all(m.get("passed") for m in manifests) else EXIT_MARGIN


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
    except (ConfigurationError, StructureError) as exc:
        print(f"hjlab: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    seed = cfg.seed if args.seed is None else args.seed
    out = output_dir(cfg, args.out)
    ctx = Context(cfg, seed, out, dump_paths=args.dump_paths)
    stages = STAGES if args.command == "suite" else (args.command,)
    manifest = run_stages(ctx, stages, args.command)
    for stage, res in manifest["results"].items():
        for key, m in res["margins"].items():
            status = "ok" if m >= 0 else "FAIL"
            print(f"{stage:15s} {key:32s} margin {m: .4g} {status}")
    if manifest["failed_stage"]:
        print(f"hjlab: stage {manifest['failed_stage']} aborted: {manifest['error']}", file=sys.stderr)
    worst = manifest["worst_margin"]
    print(f"manifest written to {out}; worst margin "
          f"{worst if worst is None else f'{worst:.4g}'}; {'PASS' if manifest['passed'] else 'FAIL'}")
    return EXIT_OK if manifest["passed"] else EXIT_MARGIN


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "report":
        return cmd_report(args)
    return cmd_run(args)


if __name__ == "__main__":
    sys.exit(main())

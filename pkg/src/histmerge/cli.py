"""Command-line entry point: ``histmerge verify | simulate | family``.

Exit codes: 0 success, 1 file or schema error, 2 bad arguments,
3 a verification violation or an inconsistent family.
Machine output (JSON/CSV) goes to files or stdout, diagnostics to stderr.
The seed resolves as ``--seed`` flag, then ``HISTMERGE_SEED``, then the
config file (or the built-in default).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .errors import HistmergeError, SchemaError
from .histories import (
    check_consistency,
    decoherence_functional,
    enumerate_selectors,
    history_probability,
    load_family,
)
from .verifiers import DEFAULT_DIMS, SUITES, TOLERANCE, run_suite
from .worldsim import SimConfig, run_world, summarize

EXIT_OK, EXIT_INPUT, EXIT_USAGE, EXIT_VIOLATION = 0, 1, 2, 3
SEED_ENV = "HISTMERGE_SEED"

log = logging.getLogger("histmerge")


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _env_seed() -> int | None:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return None
    try:
        return int(raw)
    except ValueError:
        raise SchemaError(SEED_ENV, f"must be an integer, got {raw!r}") from None


def _resolve_seed(flag: int | None, fallback: int) -> int:
    if flag is not None:
        return flag
    env = _env_seed()
    return fallback if env is None else env


def _dims(text: str) -> tuple[int, ...]:
    try:
        dims = tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not dims or any(d < 2 for d in dims):
        raise argparse.ArgumentTypeError("dimensions must be integers >= 2")
    return dims


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="histmerge",
        description="Consistent histories with branching and merging.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", help="run entropy-inequality verification ensembles")
    p.add_argument("--suite", choices=SUITES + ("all",), default="all")
    p.add_argument("--instances", type=_positive, default=500)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--tolerance", type=float, default=TOLERANCE)
    p.add_argument("--dims", type=_dims, default=DEFAULT_DIMS,
                   help="comma-separated dimensions (default 2,3,4,6,8)")
    p.add_argument("--out", type=Path, default=None, help="write the JSON summary here instead of stdout")

    p = sub.add_parser("simulate", help="simulate record-saturated worlds")
    p.add_argument("--config", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="trajectory CSV path")
    p.add_argument("--trials", type=_positive, default=1)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=_positive, default=None,
                   help="worker processes (default: logical processors)")
    p.add_argument("--summary", type=Path, default=None,
                   help="summary JSON path (default: <out stem>.summary.json)")

    p = sub.add_parser("family", help="analyze a family specification file")
    p.add_argument("--spec", type=Path, required=True)
    p.add_argument("--mode", choices=("weak", "medium"), default="medium")
    p.add_argument("--tolerance", type=float, default=1e-10)
    p.add_argument("--action", choices=("check", "probabilities", "decoherence"), default="check")
    return parser


def _emit(text: str, out: Path | None):
    if out is None:
        sys.stdout.write(text)
    else:
        out.write_text(text)


def cmd_verify(args) -> int:
    seed = _resolve_seed(args.seed, 1)
    summary = run_suite(args.suite, args.instances, seed, args.dims, args.tolerance)
    _emit(_dump(summary), args.out)
    log.info("verify %s: %d checks, %d violations", args.suite, summary["checks"],
             summary["violations"])
    return EXIT_OK if summary["violations"] == 0 else EXIT_VIOLATION


def _load_config(path: Path, seed_flag: int | None) -> SimConfig:
    try:
        obj = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(str(path), f"invalid JSON ({exc})") from None
    config = SimConfig.from_dict(obj)
    return config.with_seed(_resolve_seed(seed_flag, config.seed))


def _trial_paths(out: Path, trials: int) -> list[Path]:
    if trials == 1:
        return [out]
    return [out.with_name(f"{out.stem}_trial{k:03d}{out.suffix}") for k in range(trials)]


def cmd_simulate(args) -> int:
    config = _load_config(args.config, args.seed)
    configs = [config.with_seed(config.seed + k) for k in range(args.trials)]
    jobs = args.jobs or os.cpu_count() or 1
    if jobs > 1 and len(configs) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(configs))) as pool:
            trajectories = list(pool.map(run_world, configs))
    else:
        trajectories = [run_world(c) for c in configs]
    paths = _trial_paths(args.out, args.trials)
    for path, traj in zip(paths, trajectories):
        path.write_text(traj.to_csv())
    summary_path = args.summary or args.out.with_name(args.out.stem + ".summary.json")
    summary = {
        "config": config.to_dict(),
        "trials": args.trials,
        "seeds": [c.seed for c in configs],
        "outputs": [p.name for p in paths],
        "summary": summarize(trajectories, config.tolerance),
        "trajectories": [t.to_dict() for t in trajectories],
    }
    summary_path.write_text(_dump(summary))
    print(f"wrote {len(paths)} trajectory file(s) and {summary_path}", file=sys.stderr)
    return EXIT_OK


def cmd_family(args) -> int:
    family = load_family(args.spec)
    if args.action == "check":
        report = check_consistency(family, args.mode, args.tolerance)
        sys.stdout.write(_dump(report.to_dict()))
        verdict = "consistent" if report.consistent else "inconsistent"
        print(f"{verdict} ({args.mode}): worst residual {report.worst_residual:.3e}",
              file=sys.stderr)
        return EXIT_OK if report.consistent else EXIT_VIOLATION
    if args.action == "probabilities":
        rows = [{"selector": list(s), "probability": history_probability(family, s)}
                for s in enumerate_selectors(family)]
        total = float(sum(r["probability"] for r in rows))
        sys.stdout.write(_dump({"chains": rows, "total": total}))
        return EXIT_OK
    dm = decoherence_functional(family)
    sys.stdout.write(_dump({
        "selectors": [list(s) for s in dm.selectors],
        "re": np.asarray(dm.entries.real).tolist(),
        "im": np.asarray(dm.entries.imag).tolist(),
    }))
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    handler = {"verify": cmd_verify, "simulate": cmd_simulate, "family": cmd_family}[args.command]
    try:
        return handler(args)
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc.filename or ''}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_INPUT
    except HistmergeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())

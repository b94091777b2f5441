"""Command-line entry point: ``pcrform <command> ...``.

Exit codes: 0 success, 1 configuration or input error, 2 simulation failure,
3 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .config import ScenarioConfig
from .errors import ConfigError, SimulationDiverged, UnsupportedCount
from .experiments import (
    OFPS_COLUMNS,
    SCALING_COLUMNS,
    bench_ofps,
    bench_scaling,
    compare_slender,
    rows_to_csv,
    run_scenario,
)
from .shapes import GENERATORS, ShapeSpec, generate_shape

EXIT_OK, EXIT_CONFIG, EXIT_SIM, EXIT_INTERNAL = 0, 1, 2, 3

log = logging.getLogger("pcrform")


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _emit(text: str, out_dir: Optional[str], name: str) -> None:
    sys.stdout.write(text)
    if out_dir:
        path = Path(out_dir)
        path.mkdir(parents=True, exist_ok=True)
        (path / name).write_text(text)


def cmd_run(args) -> int:
    cfg = ScenarioConfig.load(args.config)
    if args.seed is not None:
        cfg = cfg.with_overrides(seed=args.seed)
    out = args.out or f"runs/{cfg.name}_seed{cfg.seed}"
    res = run_scenario(cfg, out)
    print(json.dumps({k: res.summary[k] for k in ("name", "seed", "steady_state_e_dist", "t_mean", "status")}))
    log.info("wrote %s", out)
    return EXIT_OK


def cmd_bench_ofps(args) -> int:
    rows = bench_ofps(args.counts, trials=args.trials, seed=args.seed)
    _emit(rows_to_csv(rows, OFPS_COLUMNS), args.out, "bench_ofps.csv")
    return EXIT_OK


def cmd_bench_scaling(args) -> int:
    template = ScenarioConfig.load(args.config) if args.config else None
    rows = bench_scaling(args.sizes, seed=args.seed, duration=args.duration, template=template, jobs=args.jobs)
    _emit(rows_to_csv(rows, SCALING_COLUMNS), args.out, "bench_scaling.csv")
    return EXIT_OK


def cmd_compare_slender(args) -> int:
    result = compare_slender(obstacles=args.obstacles, seed=args.seed, duration=args.duration)
    _emit(json.dumps(result, indent=2, sort_keys=True) + "\n", args.out, "compare_slender.json")
    return EXIT_OK


def cmd_gen_shape(args) -> int:
    params = {}
    for item in args.param or []:
        key, _, value = item.partition("=")
        try:
            params[key] = float(value)
        except ValueError:
            raise ConfigError(f"param.{key}", f"expected a number, got {value!r}") from None
    spec = generate_shape(ShapeSpec(args.generator, args.count, params, args.seed))
    lines = ["id,x,y,z"] + [f"{i},{p[0]:.12g},{p[1]:.12g},{p[2]:.12g}" for i, p in zip(spec.ids, spec.positions())]
    _emit("\n".join(lines) + "\n", args.out, f"{args.generator}_{args.count}.csv")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pcrform", description="PCR-based formation planning experiments")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one scenario from a YAML config")
    r.add_argument("config")
    r.add_argument("--out", help="output directory (default runs/<name>_seed<seed>)")
    r.add_argument("--seed", type=int, help="override the config seed")
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("bench-ofps", help="OFPS computation time versus formation size")
    b.add_argument("--counts", type=_int_list, default=list(range(100, 1001, 100)))
    b.add_argument("--trials", type=int, default=5)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out")
    b.set_defaults(func=cmd_bench_ofps)

    s = sub.add_parser("bench-scaling", help="cube scenarios at several swarm sizes")
    s.add_argument("--sizes", type=_int_list, default=[20, 40])
    s.add_argument("--config", help="template scenario (shape is forced to cube_grid)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--duration", type=float, default=30.0)
    s.add_argument("--jobs", type=int, default=1, help="run sizes in parallel processes")
    s.add_argument("--out")
    s.set_defaults(func=cmd_bench_scaling)

    c = sub.add_parser("compare-slender", help="slender formation run and short-axis diagnostic")
    c.add_argument("--obstacles", action="store_true")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--duration", type=float, default=30.0)
    c.add_argument("--out")
    c.set_defaults(func=cmd_compare_slender)

    g = sub.add_parser("gen-shape", help="print a formation shape as CSV")
    g.add_argument("generator", choices=sorted(GENERATORS))
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--param", action="append", help="generator parameter as key=value")
    g.add_argument("--out")
    g.set_defaults(func=cmd_gen_shape)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UnsupportedCount, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SimulationDiverged as exc:
        print(f"simulation failed: {exc}", file=sys.stderr)
        return EXIT_SIM
    except Exception as exc:  # noqa: BLE001 - last-resort exit code
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())

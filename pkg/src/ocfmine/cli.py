"""Command line: ``ocfmine sweep | converge | verify``."""

from __future__ import annotations

import argparse
import logging
import sys

from . import checks, harness
from .config import Config, PricingConfig, load_config
from .harness import CLI_VARIABLES, DEFAULT_SEEDS, MODES, SweepSpec
from .model import ConfigError, SystemParams
from .ocf import NonConvergenceError
from .stackelberg import PricingNotConverged, solve_stackelberg


def _config(path: str | None) -> Config:
    if path is None:
        return Config(SystemParams(), PricingConfig())
    return load_config(path)


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated number list: {text!r}")


def _mode_list(text: str) -> list[str]:
    modes = [m.strip() for m in text.split(",") if m.strip()]
    for m in modes:
        try:
            harness.mode_capacity(m)
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc))
    return modes


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ocfmine", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    sw = sub.add_parser("sweep", help="seed-averaged sweep of one parameter, written as CSV")
    sw.add_argument("--variable", required=True, choices=sorted(CLI_VARIABLES))
    sw.add_argument("--config", help="YAML parameter file (defaults to the reference parameters)")
    sw.add_argument("--modes", type=_mode_list, default=list(MODES),
                    help="comma-separated subset of " + ",".join(MODES))
    sw.add_argument("--seeds", type=int, default=DEFAULT_SEEDS)
    sw.add_argument("--first-seed", type=int, default=0)
    sw.add_argument("--grid", type=_float_list, help="comma-separated grid values (sorted)")
    sw.add_argument("--workers", type=int, default=1)
    sw.add_argument("--out", required=True)

    cv = sub.add_parser("converge", help="one price search with its per-iteration trace")
    cv.add_argument("--config")
    cv.add_argument("--seed", type=int, default=0)
    cv.add_argument("--mode", default="J=3", help="non_cooperative or J=<k>")
    cv.add_argument("--trace", required=True)

    vf = sub.add_parser("verify", help="run the oracle acceptance checks")
    vf.add_argument("--full", action="store_true", help="also run the sweep-based checks (hours)")
    vf.add_argument("--verbose-notes", action="store_true", help="print each check's notes")
    return ap


def cmd_sweep(args) -> int:
    cfg = _config(args.config)
    variable = CLI_VARIABLES[args.variable]
    grid = args.grid if args.grid else harness.default_grid(variable)
    spec = SweepSpec(variable, tuple(grid), tuple(args.modes), args.seeds, cfg.params,
                     cfg.pricing, args.first_seed)
    records = harness.run_sweep(spec, args.workers)
    harness.emit_csv(harness.aggregate(records), args.out)
    capped = sum(r.capped for r in records)
    print(f"wrote {args.out}: {len(records)} runs, {capped} hit the coalition-formation pass limit")
    return 0


def cmd_converge(args) -> int:
    cfg = _config(args.config)
    ctx = harness.build_context(args.mode, cfg.params, args.seed)
    res = solve_stackelberg(ctx, args.seed, cfg.pricing.eps, cfg.pricing.step0, allow_cap=True)
    with open(args.trace, "w", encoding="utf-8", newline="") as fh:
        fh.write("tau, p_low, p_mid, p_high, u_ecp_low, u_ecp_mid, u_ecp_high, o_next\n")
        for rec in res.price_trajectory:
            fh.write(rec.to_line() + "\n")
    print(f"p*={res.p_star:.6g} u_ecp={res.ecp_utility:.6g} iterations={res.iterations} "
          f"capped probes={res.capped_probes}; trace in {args.trace}")
    return 0


def cmd_verify(args) -> int:
    suite = checks.FULL_SUITE if args.full else checks.ORACLE_SUITE
    failed = 0
    for check in suite:
        result = check()
        print(result.line, flush=True)
        if args.verbose_notes:
            for note in result.notes:
                print("    " + note)
        failed += not result.passed
    return 1 if failed else 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = {"sweep": cmd_sweep, "converge": cmd_converge, "verify": cmd_verify}[args.command]
    try:
        return handler(args)
    except (FileNotFoundError, ConfigError, ValueError, NonConvergenceError, PricingNotConverged, OSError) as exc:
        print(f"ocfmine: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point.

Exit codes: 0 success, 1 runtime fault (or a failed certificate), 2 usage
or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .config import POLICIES, load_config
from .errors import ConfigError, ContractViolation, SolverLimitError
from .harness import (certify_frames, run_batch, summarize_batch, tradeoff_sweep, write_run,
                      write_summary, write_sweep)
from .simulation import _table

OUT_ENV = "CLO_OUTPUT_DIR"
log = logging.getLogger("clo")


class UsageError(Exception):
    pass


def parse_seeds(text: str | None, default: int) -> list:
    """``"7"`` -> [7], ``"0-4"`` -> [0..4], ``"1,3,9"`` -> [1, 3, 9]; None -> range(default)."""
    if text is None:
        return list(range(default))
    seeds = []
    try:
        for part in text.split(","):
            part = part.strip()
            if "-" in part[1:]:
                a, b = part.split("-", 1)
                if int(b) < int(a):
                    raise ValueError
                seeds.extend(range(int(a), int(b) + 1))
            else:
                seeds.append(int(part))
    except ValueError:
        raise UsageError(f"--seeds: cannot parse {text!r}") from None
    if any(s < 0 for s in seeds):
        raise UsageError("--seeds: seeds must be >= 0")
    return seeds


def _floats(text: str, flag: str) -> list:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"{flag}: cannot parse {text!r}") from None


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get(OUT_ENV) or "results")
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"--out: cannot create {out} ({exc.strerror})") from None
    if not os.access(out, os.W_OK):
        raise UsageError(f"--out: {out} is not writable")
    return out


def _config(args):
    path = Path(args.config)
    if not path.is_file():
        raise UsageError(f"--config: no such file {path}")
    cfg = load_config(path)
    if getattr(args, "policy", None):
        cfg = cfg.replace(policy=args.policy)
    return cfg


def _say(args, msg):
    if not args.quiet:
        print(msg)


def cmd_run(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    runs = run_batch(cfg, parse_seeds(args.seeds, cfg.seeds), cfg.policy)
    for m in runs:
        write_run(m, out)
        _say(args, f"seed {m.seed}: energy={m.mean_energy():.6g} J/slot "
                   f"precision={m.mean_precision():.4f}")
    s = summarize_batch(runs)
    write_summary(out / "summary.json", s.to_dict())
    _say(args, f"wrote {len(runs)} runs to {out}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    etas = _floats(args.etas, "--etas")
    policies = [cfg.policy] if args.policy else ["clo"]
    rows = tradeoff_sweep(cfg, etas, parse_seeds(args.seeds, cfg.seeds), policies)
    path = write_sweep(out / f"{cfg.name}_sweep.csv", rows)
    write_summary(out / "summary.json", {"scenario": cfg.name, "sweep": rows})
    for r in rows:
        _say(args, f"{r['policy']} eta={r['eta']:g}: energy={r['energy']:.6g} "
                   f"precision={r['precision']:.4f}")
    _say(args, f"wrote {path}")
    return 0


def cmd_compare(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    seeds = parse_seeds(args.seeds, cfg.seeds)
    summary = {}
    clo_upper = {}
    for policy in ("clo", "lo-avg", "lo-outage"):
        runs = run_batch(cfg, seeds, policy)
        for m in runs:
            write_run(m, out)
        s = summarize_batch(runs)
        if policy == "clo":
            clo_upper = {m.seed: m.certificate()["upper"][-1] for m in runs}
        above = sum(bool(np.any(m.cumulative_loss()[-1] > clo_upper[m.seed] + 1e-9)) for m in runs)
        summary[policy] = {**s.to_dict(), "runs_above_clo_upper": above}
        _say(args, f"{policy}: loss={s.stats['loss']:.4f} energy={s.stats['energy']:.6g} "
                   f"precision={s.stats['precision']:.4f} above CLO bound in {above}/{len(runs)}")
    write_summary(out / "summary.json", {"scenario": cfg.name, "policies": summary})
    return 0


def cmd_certify(args) -> int:
    paths = [Path(p) for p in args.frames]
    if args.out and not paths:
        paths = sorted(Path(args.out).glob("*_frames.csv"))
    if not paths:
        raise UsageError("certify: give frame CSV files or --out with *_frames.csv inside")
    all_ok = True
    for p in paths:
        if not p.is_file():
            raise UsageError(f"certify: no such file {p}")
        try:
            rep = certify_frames(p, worst_case=args.worst_case)
        except (ValueError, KeyError) as exc:
            raise UsageError(f"certify: {p} is not a frame CSV ({exc})") from None
        all_ok &= rep.passed
        _say(args, f"{p.name}: {'PASS' if rep.passed else 'FAIL'}")
        for line in rep.lines():
            _say(args, "  " + line)
    return 0 if all_ok else 1


def cmd_calibrate(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    seeds = parse_seeds(args.seeds, 1)
    written = []
    for seed in seeds:
        t = _table(cfg, seed)
        path = out / f"{cfg.name}_table_seed{seed}.json"
        payload = {"grid": t.grid.tolist(), "quality": t.quality.tolist(),
                   "models": [cfg.network.node_id(n) for n in cfg.network.model_nodes],
                   "reliability": t.reliability.tolist(), "precision": t.precision.tolist()}
        path.write_text(json.dumps(payload, indent=2) + "\n")
        written.append(path)
    _say(args, "wrote " + ", ".join(str(p) for p in written))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="clo", description="Conformal Lyapunov edge inference simulator")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True, policy=True):
        if config:
            sp.add_argument("--config", required=True, help="scenario YAML file")
        sp.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./results)")
        sp.add_argument("--seeds", help="seed list: 7, 0-29 or 1,4,9 (default: config seeds)")
        if policy:
            sp.add_argument("--policy", choices=POLICIES, help="override the config policy")
        sp.add_argument("--quiet", action="store_true")

    common(sub.add_parser("run", help="run one scenario for each seed"))
    sp = sub.add_parser("sweep", help="energy/precision trade-off over eta")
    common(sp)
    sp.add_argument("--etas", default="0.01,0.05,0.1,0.2,0.4,0.5")
    common(sub.add_parser("compare", help="CLO against the LO benchmarks on shared seeds"),
           policy=False)
    sp = sub.add_parser("certify", help="re-check certificates from frame CSVs")
    sp.add_argument("frames", nargs="*", help="*_frames.csv files")
    sp.add_argument("--worst-case", action="store_true", help="use thresholds in [0, 1] instead")
    common(sp, config=False, policy=False)
    common(sub.add_parser("calibrate-table", help="write the LO loss tables"), policy=False)
    return p


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "compare": cmd_compare, "certify": cmd_certify,
            "calibrate-table": cmd_calibrate}


def parse_and_dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 2
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        for prob in exc.problems:
            print(f"config error: {prob}", file=sys.stderr)
        return 2
    except (ContractViolation, SolverLimitError, RuntimeError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(parse_and_dispatch())


if __name__ == "__main__":
    main()

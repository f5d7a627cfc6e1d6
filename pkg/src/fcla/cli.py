"""Command-line entry point.

Subcommands::

    fcla convergence  [flags]      per-iteration traces for several antenna counts
    fcla sweep-power  [flags]      sum rate versus transmit power
    fcla sweep-region [flags]      sum rate versus vertical region length
    fcla audit FILE                re-check a saved solution
    fcla selftest                  invariant checks on three fixed seeds

Exit codes: 0 success, 1 trial failures or a failed check, 2 bad arguments.
A ``--config`` file uses the same ``key = value`` grammar as scenario files;
flags given on the command line win over the file.
"""

from __future__ import annotations

import os

# one BLAS thread per process keeps timings and results reproducible
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import argparse
import sys

import numpy as np

from . import bcd, beamform, fp, harness, kvfile, metrics
from .channel import channels
from .scenario import SamplingParams, initial_placement, sample_scenario

COMMANDS = {"convergence": "convergence", "sweep-power": "power_sweep", "sweep-region": "region_sweep"}

# flag name -> (SamplingParams field, type)
PARAM_FLAGS = {
    "K": ("K", int), "L": ("L", int), "M": ("M", int), "N": ("N", int),
    "P_dbw": ("P_dbw", float), "gamma_db": ("Gamma_th_db", float),
    "sigma2_dbm": ("sigma2_dbm", float), "wavelength": ("wavelength", float),
    "A": ("A", float), "disk_radius": ("disk_radius", float),
    "C0_db": ("C0_db", float), "alpha": ("alpha", float),
}
SPEC_FLAGS = ("grid", "schemes", "trials", "seed", "out", "gammas", "max_outer", "starts", "jobs",
              "save_solutions")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fcla", description="Secure sum-rate experiments for flexible cylindrical arrays.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, kind in COMMANDS.items():
        sp = sub.add_parser(name, help=f"run the {kind.replace('_', ' ')} experiment")
        sp.add_argument("--config", help="key = value file with defaults for any flag below")
        sp.add_argument("--grid", help="start:step:stop or comma list "
                                       f"(default {','.join(harness.fmt(v) for v in harness.DEFAULT_GRIDS[kind])})")
        sp.add_argument("--schemes", help=f"comma list from {','.join(harness.SCHEMES)}")
        sp.add_argument("--trials", type=int, help="Monte Carlo trials per grid point (default 50)")
        sp.add_argument("--seed", type=int, help="base seed; trial t uses seed + t (default 0)")
        sp.add_argument("--out", help="output CSV path (default <command>.csv)")
        sp.add_argument("--gammas", help="secrecy caps in dB for the region sweep curves (default -10,-5)")
        sp.add_argument("--max-outer", dest="max_outer", type=int, help="BCD iteration cap (default 30)")
        sp.add_argument("--starts", type=int, help="starting layouts per FCLA scheme (default 4)")
        sp.add_argument("--jobs", type=int, help="worker processes (default 1)")
        sp.add_argument("--save-solutions", dest="save_solutions", help="directory for per-trial solution files")
        for flag, (_, typ) in PARAM_FLAGS.items():
            sp.add_argument(f"--{flag.replace('_', '-')}", dest=flag, type=typ)
    au = sub.add_parser("audit", help="audit a saved solution file")
    au.add_argument("file")
    au.add_argument("--tol", type=float, default=1e-6)
    st = sub.add_parser("selftest", help="run invariant checks on fixed seeds")
    st.add_argument("--seeds", default="0,1,2")
    return p


def _config_values(path) -> dict:
    rec = kvfile.read(path)
    out = {}
    for key, value in rec.items():
        k = key.replace("-", "_")
        if k not in SPEC_FLAGS and k not in PARAM_FLAGS:
            raise UsageError(f"unknown key {key!r} in config file {path}")
        out[k] = value
    return out


def _as_list_text(v) -> str:
    if isinstance(v, list):
        return ",".join(str(x) for x in v)
    return str(v)


def spec_from_args(command: str, args) -> harness.ExperimentSpec:
    kind = COMMANDS[command]
    values = _config_values(args.config) if args.config else {}
    for k in SPEC_FLAGS + tuple(PARAM_FLAGS):
        v = getattr(args, k, None)
        if v is not None:
            values[k] = v
    params = SamplingParams()
    changes = {}
    for flag, (field, typ) in PARAM_FLAGS.items():
        if flag in values:
            changes[field] = typ(values[flag])
    if changes:
        params = params.replace(**changes)
    kw = {"kind": kind, "params": params, "out": str(values.get("out", f"{command}.csv"))}
    if "grid" in values:
        kw["grid"] = harness.parse_grid(_as_list_text(values["grid"]))
    if "schemes" in values:
        kw["schemes"] = tuple(s.strip() for s in _as_list_text(values["schemes"]).split(",") if s.strip())
    elif kind == "convergence":
        kw["schemes"] = ("FCLA_phi_z",)
    if "gammas" in values:
        kw["gammas_db"] = harness.parse_grid(_as_list_text(values["gammas"]))
    for src, dst in (("trials", "trials"), ("seed", "base_seed"), ("max_outer", "max_outer_iters"),
                     ("starts", "n_starts"), ("jobs", "jobs")):
        if src in values:
            kw[dst] = int(values[src])
    if kind == "convergence" and "trials" not in values:
        kw["trials"] = 1
    if values.get("save_solutions"):
        kw["save_solutions"] = str(values["save_solutions"])
    return harness.ExperimentSpec(**kw)


def cmd_experiment(command, args) -> int:
    spec = spec_from_args(command, args)
    res = harness.run_experiment(spec)
    for r, msg in res.errors:
        print(f"trial failed: scheme={r['scheme']} grid={harness.fmt(r['grid_value'])} "
              f"trial={r['trial']} status={r['status']}: {msg}", file=sys.stderr)
    for r in res.rows:
        if r["status"] != "ok" and not r["status"].startswith("error"):
            print(f"trial failed: scheme={r['scheme']} grid={harness.fmt(r['grid_value'])} "
                  f"trial={r['trial']} status={r['status']}", file=sys.stderr)
    print(f"wrote {res.paths['rows']} ({len(res.rows)} rows) and {res.paths['aggregate']}")
    return 1 if res.n_failed else 0


def cmd_audit(args) -> int:
    try:
        scenario, placement, sol = harness.load_solution(args.file)
    except (OSError, KeyError, ValueError) as exc:
        print(f"cannot read solution: {exc}", file=sys.stderr)
        return 2
    aud = metrics.audit(scenario, placement, sol)
    print(f"sum_rate_bits = {harness.fmt(aud.sum_rate)}")
    print(f"eve_rate_bits = {harness.fmt(aud.eve_rate)}")
    for name, v in aud.residuals.items():
        print(f"residual.{name} = {harness.fmt(v)}")
    ok = aud.feasible(args.tol)
    print("feasible" if ok else f"INFEASIBLE (min residual {harness.fmt(aud.min_residual)})")
    return 0 if ok else 1


def selftest(seeds=(0, 1, 2), verbose=True) -> bool:
    """BCD monotonicity, feasibility, FP tightness and the recovery certificate."""
    ok_all = True

    def check(name, ok, detail=""):
        nonlocal ok_all
        ok_all &= bool(ok)
        if verbose:
            print(f"{'PASS' if ok else 'FAIL'} {name} {detail}".rstrip())

    for seed in seeds:
        s = sample_scenario(seed)
        res = bcd.run(s, initial_placement(s.config))
        rates = np.concatenate([[res.trace.initial_sum_rate], res.trace.sum_rates])
        drop = float(np.max(-np.diff(rates), initial=0.0))
        check(f"seed {seed} monotone", drop <= 1e-6, f"max drop {drop:.3g}")
        aud = metrics.audit(s, res.placement, res.beams)
        check(f"seed {seed} feasible", aud.feasible(1e-6), f"min residual {aud.min_residual:.3g}")
        ch = channels(s, res.placement)
        eta = fp.update_eta(ch.ir, res.beams, s.sigma2_ir)
        varpi = fp.update_varpi(ch.ir, res.beams, s.sigma2_ir, eta)
        ia = fp.eval_Ia(ch.ir, res.beams, s.sigma2_ir, eta)
        ib = fp.eval_Ib(ch.ir, res.beams, s.sigma2_ir, eta, varpi)
        rt = fp.ratio_term(ch.ir, res.beams, s.sigma2_ir, eta)
        check(f"seed {seed} fp tightness",
              abs(ia - aud.sum_rate) <= 1e-8 * abs(aud.sum_rate) and abs(ib - rt) <= 1e-8 * abs(rt))
        sdr, rec = beamform.beamforming_update(ch.ir, ch.eve, s.sigma2_ir, s.sigma2_eve, s.P,
                                               s.Gamma_th_e, eta, varpi)
        cert = None if rec is None else beamform.verify_certificate(
            sdr, rec, ch.ir, ch.eve, s.sigma2_ir, s.sigma2_eve, s.P, s.Gamma_th_e, eta, varpi)
        check(f"seed {seed} certificate", cert is not None and cert.passed,
              "" if cert is None else str(cert.failures()))
    return ok_all


def _join_negative_values(argv):
    """Let ``--grid -10:2:14`` through: argparse would read the value as a flag."""
    out, i = [], 0
    while i < len(argv):
        a = argv[i]
        if a in ("--grid", "--gammas") and i + 1 < len(argv):
            out.append(f"{a}={argv[i + 1]}")
            i += 2
            continue
        out.append(a)
        i += 1
    return out


def cli_main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parser.parse_args(_join_negative_values(argv))
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        if args.command in COMMANDS:
            return cmd_experiment(args.command, args)
        if args.command == "audit":
            return cmd_audit(args)
        seeds = tuple(int(v) for v in args.seeds.split(","))
        return 0 if selftest(seeds) else 1
    except (UsageError, ValueError) as exc:
        print(f"fcla: error: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(cli_main())


if __name__ == "__main__":
    main()

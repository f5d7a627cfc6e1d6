"""Monte Carlo experiment driver.

An :class:`ExperimentSpec` fixes the experiment kind, the schemes to
compare, the sweep grid and the trial count.  :func:`run_experiment` runs
every (grid point, trial, scheme) cell, writes one CSV row per cell and a
companion file of per-grid-point means.  Output is assembled in a fixed
order and floats are written with 12 significant digits, so reruns of the
same spec give byte-identical files even when trials run in parallel.
"""

from __future__ import annotations

import csv
import dataclasses
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import bcd, kvfile, metrics
from .metrics import BeamSolution
from .scenario import (ArrayConfig, Placement, SamplingParams, Scenario, initial_placement,
                       sample_scenario, scenario_from_records, scenario_records, validate_placement)

KINDS = ("convergence", "power_sweep", "region_sweep")
SCHEMES = ("FPA", "FCLA_phi", "FCLA_phi_z")

CSV_COLUMNS = ["experiment", "scheme", "grid_value", "gamma_th_db", "trial", "seed", "iters",
               "sum_rate_bits", "eve_rate_bits", "power_used", "status"]
AGG_COLUMNS = ["experiment", "scheme", "grid_value", "gamma_th_db", "mean", "stderr", "n_ok"]
TRACE_COLUMNS = ["experiment", "scheme", "grid_value", "gamma_th_db", "trial", "seed", "iteration",
                 "sum_rate_bits", "Ib", "eve_rate_bits", "power_used"]

DEFAULT_GRIDS = {
    "convergence": (6.0, 8.0, 12.0),
    "power_sweep": tuple(float(v) for v in range(-10, 15, 2)),
    "region_sweep": tuple(float(v) for v in range(1, 9)),
}

ASSUMPTIONS = (
    "FPA is a uniform cylindrical layout with half-wavelength ring spacing centred in the vertical region",
    "z_D sweep sets the vertical region length A = z_D",
    "convergence grid values are antenna counts N_t realised as M = N_t / 2 rings of N = 2",
    "trial seed = base_seed + trial, shared by all schemes and grid points",
    "failed trials are reported with status != ok and excluded from the means",
    "FCLA schemes keep the best of several starting layouts that include the FPA layout",
)


def fmt(v) -> str:
    """Fixed float formatting used in every CSV cell."""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.12g}"
    return str(v)


def parse_grid(text: str) -> tuple:
    """``"a:step:b"`` (inclusive) or a comma-separated list of numbers."""
    text = text.strip()
    if ":" in text:
        parts = [float(p) for p in text.split(":")]
        if len(parts) != 3 or parts[1] == 0:
            raise ValueError(f"bad grid range {text!r}; expected start:step:stop")
        a, step, b = parts
        n = int(np.floor((b - a) / step + 1e-9)) + 1
        if n < 1:
            raise ValueError(f"empty grid {text!r}")
        return tuple(float(np.round(a + i * step, 12)) for i in range(n))
    vals = tuple(float(p) for p in text.split(",") if p.strip())
    if not vals:
        raise ValueError("empty grid")
    return vals


# ---------------------------------------------------------------------------
# Layouts and scheme set-up
# ---------------------------------------------------------------------------

def fpa_layout(config: ArrayConfig) -> Placement:
    """Fixed array: uniform rings, half-wavelength ring spacing, centred in ``[0, A]``."""
    M, N = config.M, config.N
    spacing = config.wavelength / 2.0
    if (M - 1) * spacing > config.A * (1 + 1e-12):
        raise ValueError(f"A = {config.A:.6g} is shorter than the fixed array ({(M - 1) * spacing:.6g})")
    phi = np.tile(2.0 * np.pi * np.arange(N) / N, (M, 1))
    z = config.A / 2.0 + spacing * (np.arange(M) - (M - 1) / 2.0)
    pl = Placement(phi, z)
    report = validate_placement(config, pl, tol=1e-12)
    if not report.feasible:
        raise ValueError(f"fixed layout violates the configuration: {report.violations[:3]}")
    return pl


def scheme_options(scheme: str, base: bcd.BcdOptions | None = None) -> bcd.BcdOptions:
    base = base or bcd.BcdOptions()
    if scheme == "FPA":
        return dataclasses.replace(base, optimize_angles=False, optimize_heights=False)
    if scheme == "FCLA_phi":
        return dataclasses.replace(base, optimize_angles=True, optimize_heights=False)
    if scheme == "FCLA_phi_z":
        return dataclasses.replace(base, optimize_angles=True, optimize_heights=True)
    raise ValueError(f"unknown scheme {scheme!r}")


def random_layout(config: ArrayConfig, rng: np.random.Generator, heights=None) -> Placement:
    """Feasible layout: uniform rings with random rotations, random ring gaps.

    Rings keep uniform element spacing (always feasible) and are rotated by a
    random angle each.  Heights, unless given, are the sorted uniform draws on
    the slack ``A - (M-1) z_th`` shifted by the minimum gaps.
    """
    M, N = config.M, config.N
    phi = rng.uniform(0.0, 2.0 * np.pi / N, size=(M, 1)) + 2.0 * np.pi * np.arange(N)[None, :] / N
    if heights is None:
        slack = max(config.A - (M - 1) * config.z_th, 0.0)
        heights = np.sort(rng.uniform(0.0, slack, M)) + config.z_th * np.arange(M)
    return Placement(phi, heights)


def scheme_starts(scheme: str, config: ArrayConfig, seed: int, n_starts: int = 1) -> list:
    """Starting layouts of a scheme, deterministic in ``seed``.

    FPA has the single fixed layout.  FCLA(phi) may only rotate the rings, so
    its starts are the fixed layout and ``n_starts - 1`` random rotations of
    it.  FCLA(phi, z) adds :func:`initial_placement` and ``n_starts - 1``
    random layouts with free heights.
    """
    fpa = fpa_layout(config)
    if scheme == "FPA":
        return [fpa]
    rng = np.random.default_rng([seed, 7919])
    starts = [fpa] + [random_layout(config, rng, fpa.z) for _ in range(n_starts - 1)]
    if scheme == "FCLA_phi_z":
        starts.append(initial_placement(config))
        starts += [random_layout(config, rng) for _ in range(n_starts - 1)]
    return starts


# ---------------------------------------------------------------------------
# Spec
# ---------------------------------------------------------------------------

@dataclass
class ExperimentSpec:
    """One experiment: what to sweep, which schemes, how many trials.

    ``gammas_db`` lists the secrecy caps (dB) swept as separate curves in a
    region sweep; other kinds use ``params.Gamma_th_db`` only.
    """

    kind: str
    schemes: tuple = SCHEMES
    grid: tuple | None = None
    trials: int = 50
    base_seed: int = 0
    params: SamplingParams = field(default_factory=SamplingParams)
    out: str = "results.csv"
    gammas_db: tuple = (-10.0, -5.0)
    max_outer_iters: int = 30
    n_starts: int = 4
    jobs: int = 1
    save_solutions: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}; choose from {KINDS}")
        self.schemes = tuple(self.schemes)
        if not self.schemes:
            raise ValueError("scheme list is empty")
        for s in self.schemes:
            if s not in SCHEMES:
                raise ValueError(f"unknown scheme {s!r}; choose from {SCHEMES}")
        if self.grid is None:
            self.grid = DEFAULT_GRIDS[self.kind]
        self.grid = tuple(float(g) for g in self.grid)
        if not self.grid:
            raise ValueError("grid is empty")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if self.jobs < 1:
            raise ValueError("jobs must be at least 1")
        if self.n_starts < 1:
            raise ValueError("n_starts must be at least 1")
        self.gammas_db = tuple(float(g) for g in self.gammas_db)
        if self.kind == "region_sweep" and not self.gammas_db:
            raise ValueError("region sweep needs at least one secrecy cap")
        if self.kind == "convergence":
            for g in self.grid:
                if g < 2 or g != int(g) or int(g) % 2:
                    raise ValueError(f"convergence grid holds even antenna counts, got {g}")
        # fail early on configurations that cannot be built
        for g in self.grid:
            for gam in self.curves():
                self.point_params(g, gam).config()

    def curves(self) -> tuple:
        return self.gammas_db if self.kind == "region_sweep" else (self.params.Gamma_th_db,)

    def point_params(self, g: float, gamma_db: float) -> SamplingParams:
        p = self.params.replace(Gamma_th_db=gamma_db)
        if self.kind == "power_sweep":
            return p.replace(P_dbw=g)
        if self.kind == "region_sweep":
            return p.replace(A=g * p.wavelength)
        return p.replace(M=int(g) // 2, N=2)

    def cells(self):
        """All (grid value, secrecy cap, trial, scheme) cells in output order."""
        for g in self.grid:
            for gam in self.curves():
                for t in range(self.trials):
                    for s in self.schemes:
                        yield g, gam, t, s

    def records(self) -> dict:
        rec = {
            "kind": self.kind, "schemes": list(self.schemes), "grid": list(self.grid),
            "trials": self.trials, "base_seed": self.base_seed, "gammas_db": list(self.gammas_db),
            "max_outer_iters": self.max_outer_iters, "n_starts": self.n_starts,
        }
        for f in dataclasses.fields(SamplingParams):
            v = getattr(self.params, f.name)
            rec[f"params.{f.name}"] = "default" if v is None else (list(v) if isinstance(v, tuple) else v)
        return rec


# ---------------------------------------------------------------------------
# Solution files
# ---------------------------------------------------------------------------

def solution_records(scenario: Scenario, placement: Placement, sol: BeamSolution) -> dict:
    rec = scenario_records(scenario)
    rec["placement.phi"] = placement.phi
    rec["placement.z"] = placement.z
    rec["W"] = sol.W
    rec["W.shape"] = np.array(sol.W.shape)
    rec["R_e"] = sol.R_e
    return rec


def save_solution(path, scenario: Scenario, placement: Placement, sol: BeamSolution) -> None:
    kvfile.write(path, solution_records(scenario, placement, sol), header="fcla solution")


def load_solution(path):
    """Returns ``(scenario, placement, beams)`` from a file written by :func:`save_solution`."""
    rec = kvfile.read(path)
    s = scenario_from_records(rec)
    c = s.config
    phi = kvfile.as_array(rec["placement.phi"]).reshape(c.M, c.N)
    z = kvfile.as_array(rec["placement.z"]).reshape(c.M)
    shape = tuple(int(v) for v in kvfile.as_array(rec["W.shape"], int))
    W = kvfile.as_array(rec["W"], complex).reshape(shape)
    Nt = c.n_antennas
    R_e = kvfile.as_array(rec["R_e"], complex).reshape(Nt, Nt)
    return s, Placement(phi, z), BeamSolution(W, R_e)


# ---------------------------------------------------------------------------
# Running
# ---------------------------------------------------------------------------

@dataclass
class TrialResult:
    row: dict
    trace: list
    solution: tuple | None = None
    error: str | None = None


def run_trial(spec: ExperimentSpec, g: float, gamma_db: float, trial: int, scheme: str) -> TrialResult:
    """One cell; any exception becomes a row with a non-ok status."""
    seed = spec.base_seed + trial
    row = {"experiment": spec.kind, "scheme": scheme, "grid_value": g, "gamma_th_db": gamma_db,
           "trial": trial, "seed": seed, "iters": 0, "sum_rate_bits": np.nan,
           "eve_rate_bits": np.nan, "power_used": np.nan, "status": "ok"}
    trace = []
    try:
        scenario = sample_scenario(seed, spec.point_params(g, gamma_db))
        opts = scheme_options(scheme, bcd.BcdOptions(max_outer_iters=spec.max_outer_iters))
        res = aud = None
        for start in scheme_starts(scheme, scenario.config, seed, spec.n_starts):
            cand = bcd.run(scenario, start, opts)
            cand_aud = metrics.audit(scenario, cand.placement, cand.beams)
            if res is None or (cand_aud.feasible(opts.feas_tol) and cand_aud.sum_rate > aud.sum_rate):
                res, aud = cand, cand_aud
        status = res.status
        if not aud.feasible(opts.feas_tol):
            status = "infeasible"
        row.update(iters=res.iterations, sum_rate_bits=aud.sum_rate, eve_rate_bits=aud.eve_rate,
                   power_used=aud.power_used, status=status)
        for r in res.trace.rows:
            trace.append({"experiment": spec.kind, "scheme": scheme, "grid_value": g,
                          "gamma_th_db": gamma_db, "trial": trial, "seed": seed,
                          "iteration": r.iteration, "sum_rate_bits": r.sum_rate, "Ib": r.Ib,
                          "eve_rate_bits": r.eve_rate, "power_used": r.power_used})
        return TrialResult(row, trace, (scenario, res.placement, res.beams))
    except Exception as exc:  # recorded, the sweep goes on
        row["status"] = f"error:{type(exc).__name__}"
        return TrialResult(row, trace, error=str(exc))


def _run_cell(args):
    return run_trial(*args)


def aggregate(rows: list) -> list:
    """Per (scheme, grid value, secrecy cap) mean and standard error over ok rows."""
    groups = {}
    for r in rows:
        key = (r["experiment"], r["scheme"], r["grid_value"], r["gamma_th_db"])
        groups.setdefault(key, [])
        if r["status"] == "ok":
            groups[key].append(r["sum_rate_bits"])
    out = []
    for (exp, scheme, g, gam), vals in groups.items():
        v = np.asarray(vals, dtype=float)
        n = v.size
        mean = float(v.mean()) if n else np.nan
        se = float(v.std(ddof=1) / np.sqrt(n)) if n > 1 else np.nan
        out.append({"experiment": exp, "scheme": scheme, "grid_value": g, "gamma_th_db": gam,
                    "mean": mean, "stderr": se, "n_ok": n})
    return out


def _write_csv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([fmt(r[c]) for c in columns])


def output_paths(out: str) -> dict:
    stem = out[:-4] if out.endswith(".csv") else out
    return {"rows": out, "aggregate": stem + ".aggregate.csv", "trace": stem + ".trace.csv",
            "meta": stem + ".meta"}


@dataclass
class ExperimentResult:
    rows: list
    aggregate: list
    trace: list
    paths: dict

    errors: list = field(default_factory=list)

    @property
    def n_failed(self) -> int:
        return sum(r["status"] != "ok" for r in self.rows)


def run_experiment(spec: ExperimentSpec, write: bool = True) -> ExperimentResult:
    """Run every cell of ``spec`` and (optionally) write the CSV artifacts."""
    cells = [(spec, g, gam, t, s) for g, gam, t, s in spec.cells()]
    if spec.jobs > 1:
        with ProcessPoolExecutor(max_workers=spec.jobs) as ex:
            results = list(ex.map(_run_cell, cells, chunksize=max(1, len(cells) // (4 * spec.jobs))))
    else:
        results = [_run_cell(c) for c in cells]
    rows = [r.row for r in results]
    trace = [t for r in results for t in r.trace]
    agg = aggregate(rows)
    errors = [(r.row, r.error) for r in results if r.error]
    paths = output_paths(spec.out)
    if write:
        _write_csv(paths["rows"], CSV_COLUMNS, rows)
        _write_csv(paths["aggregate"], AGG_COLUMNS, agg)
        if spec.kind == "convergence":
            _write_csv(paths["trace"], TRACE_COLUMNS, trace)
        meta = spec.records()
        meta.update({f"assumption.{i}": a for i, a in enumerate(ASSUMPTIONS)})
        meta["rows"] = len(rows)
        meta["failed"] = sum(r["status"] != "ok" for r in rows)
        for i, (row, msg) in enumerate(errors):
            meta[f"error.{i}"] = (f"{row['scheme']} grid={fmt(row['grid_value'])} "
                                  f"trial={row['trial']}: {msg}").replace(",", ";").replace("\n", " ")
        kvfile.write(paths["meta"], meta, header="fcla experiment metadata")
        if spec.save_solutions:
            os.makedirs(spec.save_solutions, exist_ok=True)
            for r in results:
                if r.solution is None:
                    continue
                row = r.row
                name = (f"{spec.kind}_{row['scheme']}_g{fmt(row['grid_value'])}"
                        f"_G{fmt(row['gamma_th_db'])}_t{row['trial']}.sol")
                save_solution(os.path.join(spec.save_solutions, name), *r.solution)
    return ExperimentResult(rows, agg, trace, paths, errors)

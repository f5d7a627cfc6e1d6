"""Block coordinate ascent over (eta, varpi, beams, placement).

Every outer pass refreshes the FP auxiliaries at the current point, solves
the relaxed beamforming program, recovers rank-one beams and then moves the
antennas.  A candidate beam set or placement is accepted only when it is
feasible and does not lower the sum rate, so the trace is monotone even
though the convex subproblems are solved to finite accuracy.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import beamform, fp, metrics, placement as plc
from .channel import channels
from .metrics import BeamSolution
from .scenario import Placement, Scenario, validate_placement

OK = "ok"
SECRECY_SAFETY = 1e-10
PLACEMENT_TOL = 1e-12


@dataclass
class BcdOptions:
    """Controls of the outer loop.

    ``optimize_angles`` / ``optimize_heights`` switch the placement blocks;
    with both off the loop is a beamforming-only optimizer on a fixed array.
    ``fill_power`` also offers the recovered beams scaled up to the full
    budget, with and without their AN, as extra candidates.  This matters at
    high SNR, where the FP fixed point approaches full power only slowly and
    the relaxation may park spare power in AN that nobody needs.
    """

    max_outer_iters: int = 30
    rel_tol: float = 1e-3
    move_tol: float = 1e-6
    conic_tol: float = 1e-9
    pgd: plc.PgdOptions = field(default_factory=plc.PgdOptions)
    optimize_angles: bool = True
    optimize_heights: bool = True
    feas_tol: float = 1e-6
    init_candidates: tuple = ("an_split", "mrt", "zf")
    fill_power: bool = True

    def __post_init__(self):
        if self.max_outer_iters < 1:
            raise ValueError("max_outer_iters must be at least 1")
        if self.rel_tol <= 0 or self.move_tol <= 0 or self.conic_tol <= 0 or self.feas_tol <= 0:
            raise ValueError("tolerances must be positive")

    @property
    def blocks(self) -> tuple:
        out = []
        if self.optimize_angles:
            out.append(plc.ANGLES)
        if self.optimize_heights:
            out.append(plc.HEIGHTS)
        return tuple(b for b in self.pgd.blocks if b in out)


@dataclass
class BcdTraceRow:
    iteration: int
    sum_rate: float
    Ia: float
    Ib: float
    eve_rate: float
    power_used: float
    min_residual: float
    movement: float
    beam_accepted: bool
    placement_accepted: bool
    t_fp: float
    t_beam: float
    t_placement: float
    certificate_ok: bool


@dataclass
class BcdTrace:
    initial_sum_rate: float = np.nan
    rows: list = field(default_factory=list)
    events: list = field(default_factory=list)

    @property
    def sum_rates(self) -> np.ndarray:
        return np.array([r.sum_rate for r in self.rows])

    def __len__(self):
        return len(self.rows)


@dataclass
class BcdResult:
    beams: BeamSolution
    placement: Placement
    trace: BcdTrace
    status: str = OK
    converged: bool = False

    @property
    def iterations(self) -> int:
        return len(self.trace)


# ---------------------------------------------------------------------------
# Feasibility helpers
# ---------------------------------------------------------------------------

def enforce_budget(sol: BeamSolution, P: float) -> BeamSolution:
    """Scale all beams and the AN down uniformly if the power budget is exceeded."""
    used = sol.power()
    if used <= P or used == 0:
        return sol
    f = P / used
    return BeamSolution(sol.W * np.sqrt(f), sol.R_e * f)


def fill_budget(sol: BeamSolution, P: float) -> BeamSolution:
    """Scale all beams and the AN up uniformly so the whole budget is used.

    A common scale-up raises every receiver's SINR, since the noise is the
    only term that does not grow with it.  Eve's SINR grows too, so callers
    must re-apply :func:`enforce_secrecy`.
    """
    used = sol.power()
    if used <= 0 or used >= P:
        return sol
    f = P / used
    return BeamSolution(sol.W * np.sqrt(f), sol.R_e * f)


def enforce_secrecy(sol: BeamSolution, h_e, sigma2_e: float, Gamma: float,
                    safety: float = SECRECY_SAFETY) -> BeamSolution:
    """Largest down-scaling of ``w_1`` alone that meets the eavesdropper cap.

    Eve's SINR on stream 1 grows with ``|s|^2``, so the admissible scale has
    the closed form ``s^2 = Gamma (I_e + sigma_e^2) / |h_e^H w_1|^2`` with
    ``I_e`` the interference-plus-AN power at Eve.  A relative margin
    ``safety`` keeps the result strictly inside the set.
    """
    if not np.isfinite(Gamma):
        return sol
    g = np.abs(np.conj(h_e) @ sol.W) ** 2
    if g[0] == 0:
        return sol
    interference = g[1:].sum() + metrics.quad_form(h_e, sol.R_e) + sigma2_e
    cap = Gamma * (1.0 - safety) * interference
    if g[0] <= cap:
        return sol
    W = sol.W.copy()
    W[:, 0] *= np.sqrt(cap / g[0])
    return BeamSolution(W, sol.R_e)


def _matched(H, share):
    norms = np.linalg.norm(H, axis=1)
    W = np.zeros(H.shape[::-1], complex)
    nz = norms > 0
    W[:, nz] = H[nz].T / norms[nz] * np.sqrt(share)
    return W


def an_split_beams(scenario: Scenario, ch) -> BeamSolution:
    """Matched filters and isotropic AN, each with an equal ``P/(K+1)`` share."""
    K, Nt = scenario.K, scenario.config.n_antennas
    share = scenario.P / (K + 1)
    sol = BeamSolution(_matched(ch.ir, share), np.eye(Nt) * share / Nt)
    return enforce_secrecy(sol, ch.eve, scenario.sigma2_eve, scenario.Gamma_th_e)


def mrt_beams(scenario: Scenario, ch) -> BeamSolution:
    """Matched filters sharing the whole budget, no AN."""
    K, Nt = scenario.K, scenario.config.n_antennas
    sol = BeamSolution(_matched(ch.ir, scenario.P / K), np.zeros((Nt, Nt)))
    return enforce_secrecy(sol, ch.eve, scenario.sigma2_eve, scenario.Gamma_th_e)


def _null_direction(h, others):
    """Component of ``h`` orthogonal to the span of the rows of ``others``."""
    if others.shape[0] == 0:
        return h.copy()
    Q, R = np.linalg.qr(others.T)
    keep = np.abs(np.diag(R)) > 1e-12 * max(np.abs(R).max(), 1e-300)
    Q = Q[:, keep]
    return h - Q @ (Q.conj().T @ h)


def zf_beams(scenario: Scenario, ch) -> BeamSolution:
    """Zero-forcing beams with an equal ``P/K`` share each and no AN.

    ``w_k`` is the projection of ``h_k`` away from the other receivers; ``w_1``
    additionally avoids the eavesdropper, so Eve sees none of the confidential
    stream.  A beam whose projection vanishes (too few antennas) is left at
    zero.
    """
    H, K, Nt = ch.ir, scenario.K, scenario.config.n_antennas
    W = np.zeros((Nt, K), complex)
    for k in range(K):
        others = np.delete(H, k, axis=0)
        if k == 0 and scenario.secrecy_active:
            others = np.vstack([others, ch.eve[None, :]])
        v = _null_direction(H[k], others)
        nv = np.linalg.norm(v)
        if nv > 1e-9 * max(np.linalg.norm(H[k]), 1e-300):
            W[:, k] = v / nv * np.sqrt(scenario.P / K)
    sol = BeamSolution(W, np.zeros((Nt, Nt)))
    return enforce_secrecy(sol, ch.eve, scenario.sigma2_eve, scenario.Gamma_th_e)


_INIT = {"an_split": an_split_beams, "mrt": mrt_beams, "zf": zf_beams}


def initialize_beams(scenario: Scenario, ch, candidates=("an_split", "mrt", "zf")) -> BeamSolution:
    """Feasible starting beams: the best (by sum rate) of the named constructions."""
    best, best_rate = None, -np.inf
    for name in candidates:
        sol = _INIT[name](scenario, ch)
        rate = metrics.sum_rate(ch.ir, sol, scenario.sigma2_ir)
        if rate > best_rate:
            best, best_rate = sol, rate
    if best is None:
        raise ValueError("no initialization candidate given")
    return best


# ---------------------------------------------------------------------------
# Outer loop
# ---------------------------------------------------------------------------

def run(scenario: Scenario, init_placement: Placement, options: BcdOptions | None = None,
        init_beams: BeamSolution | None = None) -> BcdResult:
    """Alternate the FP, beamforming and placement updates until the sum rate stalls."""
    opts = options or BcdOptions()
    # layouts that sit exactly on a spacing bound may miss it by rounding
    report = validate_placement(scenario.config, init_placement, tol=PLACEMENT_TOL)
    if not report.feasible:
        raise ValueError(f"initial placement infeasible: {report.violations[:3]}")
    pl = init_placement
    ch = channels(scenario, pl)
    sol = init_beams if init_beams is not None else initialize_beams(scenario, ch, opts.init_candidates)
    sol = enforce_secrecy(enforce_budget(sol, scenario.P), ch.eve, scenario.sigma2_eve, scenario.Gamma_th_e)
    aud = metrics.audit(scenario, pl, sol)
    if not aud.feasible(opts.feas_tol):
        raise ValueError("initial beams infeasible")
    trace = BcdTrace(initial_sum_rate=aud.sum_rate)
    rate = aud.sum_rate
    status = OK
    converged = False
    blocks = opts.blocks
    sig = scenario.sigma2_ir

    for it in range(1, opts.max_outer_iters + 1):
        t0 = time.perf_counter()
        ch = channels(scenario, pl)
        eta = fp.update_eta(ch.ir, sol, sig)
        varpi = fp.update_varpi(ch.ir, sol, sig, eta)
        Ia = fp.eval_Ia(ch.ir, sol, sig, eta)
        t1 = time.perf_counter()

        # beamforming block
        beam_ok = cert_ok = False
        sdr, rec = beamform.beamforming_update(ch.ir, ch.eve, sig, scenario.sigma2_eve, scenario.P,
                                               scenario.Gamma_th_e, eta, varpi, tol=opts.conic_tol)
        if sdr.status != beamform.conic.OPTIMAL:
            trace.events.append((it, f"beamforming subproblem: {sdr.status}"))
        if rec is None:
            status = f"beamforming_{sdr.status}"
        if rec is not None:
            cert = beamform.verify_certificate(sdr, rec, ch.ir, ch.eve, sig, scenario.sigma2_eve,
                                               scenario.P, scenario.Gamma_th_e, eta, varpi)
            cert_ok = cert.passed
            if not cert_ok:
                trace.events.append((it, f"certificate residuals: {cert.failures()}"))
            base = enforce_budget(rec.beams, scenario.P)
            cands = [base]
            if opts.fill_power:
                no_an = BeamSolution(base.W, np.zeros_like(base.R_e))
                cands += [fill_budget(base, scenario.P), fill_budget(no_an, scenario.P)]
            for cand in cands:
                cand = enforce_secrecy(cand, ch.eve, scenario.sigma2_eve, scenario.Gamma_th_e)
                cand_aud = metrics.audit(scenario, pl, cand)
                if cand_aud.feasible(opts.feas_tol) and cand_aud.sum_rate >= rate:
                    sol, rate, aud, beam_ok = cand, cand_aud.sum_rate, cand_aud, True
        t2 = time.perf_counter()
        Ib = fp.eval_Ib(ch.ir, sol, sig, eta, varpi)

        # placement blocks
        moved, place_ok = 0.0, False
        if blocks:
            # re-tighten the surrogate at the new beams so a placement gain in
            # I_b is a gain in the sum rate
            eta_p = fp.update_eta(ch.ir, sol, sig)
            varpi_p = fp.update_varpi(ch.ir, sol, sig, eta_p)
            pgd_opts = plc.PgdOptions(**{**opts.pgd.__dict__, "blocks": blocks})
            new_pl, ptrace = plc.pgd_optimize(pl, scenario, sol, eta_p, varpi_p, pgd_opts)
            for ev in ptrace.events:
                trace.events.append((it, f"placement: {ev[0]}: {ev[1]}"))
            cand_aud = metrics.audit(scenario, new_pl, sol)
            if cand_aud.feasible(opts.feas_tol) and cand_aud.sum_rate >= rate:
                moved = float(np.sqrt(
                    np.sum((scenario.config.rho * (new_pl.phi - pl.phi)) ** 2) + np.sum((new_pl.z - pl.z) ** 2)))
                pl, rate, aud, place_ok = new_pl, cand_aud.sum_rate, cand_aud, True
        t3 = time.perf_counter()

        prev = trace.rows[-1].sum_rate if trace.rows else trace.initial_sum_rate
        trace.rows.append(BcdTraceRow(
            iteration=it, sum_rate=rate, Ia=Ia, Ib=Ib, eve_rate=aud.eve_rate,
            power_used=aud.power_used, min_residual=aud.min_residual, movement=moved,
            beam_accepted=beam_ok, placement_accepted=place_ok,
            t_fp=t1 - t0, t_beam=t2 - t1, t_placement=t3 - t2, certificate_ok=cert_ok))
        rel = abs(rate - prev) / max(abs(prev), 1e-12)
        if rel < opts.rel_tol and moved < opts.move_tol:
            converged = True
            break
        if rate <= 0.0 and prev <= 0.0:
            converged = True
            break
    return BcdResult(sol, pl, trace, status, converged)

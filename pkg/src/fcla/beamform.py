"""Semidefinite relaxation of the beamforming / artificial-noise update.

With the placement and the FP auxiliaries fixed, the lifted problem over the
per-receiver covariances ``R_k`` and the AN covariance ``R_e`` reads

    maximize   sum_k 2 a_k varpi_k sqrt(h_k^H R_k h_k) - a_k varpi_k^2 (h_k^H R h_k + sigma_k^2)
    subject to h_e^H R_1 h_e <= Gamma (h_e^H (R - R_1) h_e + sigma_e^2)
               tr R <= P,   R_k >= 0,   R_e >= 0,   R = sum_k R_k + R_e

with ``a_k = 1 + eta_k``.  The conic program is posed in normalized units
(``X = R / P``, channels divided by their norm) so that every coefficient is
of order one regardless of the path loss; the square root is carried by an
auxiliary ``s_k`` in the rotated cone ``s_k^2 <= g_k^H X_k g_k``.

The relaxed optimum is turned into beamformers with

    w_k = (h_k^H R_k h_k)^(-1/2) R_k h_k,     R_e = R - sum_k w_k w_k^H,

which keeps every term of the objective and every constraint unchanged.
:func:`verify_certificate` checks those facts numerically.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import conic
from .metrics import BeamSolution, an_power, quad_form
from .fp import eval_Ib

UNSERVED_THRESHOLD = 1e-12


@lru_cache(maxsize=None)
def _basis_data(n: int):
    basis = conic.hermitian_basis(n)
    emb = np.stack([conic.complex_to_real_embedding(B) for B in basis])
    # column j is svec of the embedding of basis matrix j
    E = conic.svec(emb).T.copy()
    trace = np.zeros(n * n)
    trace[:n] = 1.0
    return basis, E, trace


def _form_coeffs(g: np.ndarray) -> np.ndarray:
    """Coefficients ``c`` with ``g^H X g = c @ params(X)``."""
    n = g.size
    iu = np.triu_indices(n, 1)
    cross = np.conj(g[iu[0]]) * g[iu[1]]
    return np.concatenate([np.abs(g) ** 2, 2.0 * cross.real, -2.0 * cross.imag])


def _unit(v):
    nv = np.linalg.norm(v)
    return (v / nv, nv) if nv > 0 else (np.zeros_like(v), 0.0)


@dataclass
class SdrLayout:
    """Where each block lives in the conic decision vector."""

    n: int
    K: int
    scale: float                 # objective was divided by this
    constant: float              # objective constant (dropped from the conic program)
    secrecy_row: int | None      # orthant row index of the secrecy constraint

    @property
    def nn(self) -> int:
        return self.n * self.n

    def block(self, j: int) -> slice:
        """Parameters of ``X_j`` (``j = K`` is the AN block)."""
        return slice(j * self.nn, (j + 1) * self.nn)

    def s_index(self, k: int) -> int:
        return (self.K + 1) * self.nn + k


@dataclass
class SdrProblem:
    problem: conic.ConicProblem
    layout: SdrLayout
    P: float


def build_sdr(H, h_e, sigma2, sigma2_e, P, Gamma, eta, varpi,
              w1_power_floor: float | None = None) -> SdrProblem:
    """Assemble the relaxed beamforming program.

    Parameters
    ----------
    H : (K, Nt) complex
        Receiver channels, one per row.
    h_e : (Nt,) complex
    sigma2, sigma2_e : noise powers
    P : float
        Power budget.
    Gamma : float
        Linear SINR cap for the eavesdropper; ``inf`` removes the constraint.
    eta, varpi : FP auxiliaries.
    w1_power_floor : float, optional
        Extra constraint ``tr R_1 >= floor``; only used to build infeasible
        test programs.
    """
    H = np.atleast_2d(np.asarray(H, dtype=complex))
    K, n = H.shape
    h_e = np.asarray(h_e, dtype=complex).ravel()
    if h_e.size != n:
        raise ValueError("eavesdropper channel length does not match H")
    sigma2 = np.broadcast_to(np.asarray(sigma2, dtype=float), (K,))
    eta = np.asarray(eta, dtype=float).reshape(K)
    varpi = np.asarray(varpi, dtype=float).reshape(K)
    basis, E, trace = _basis_data(n)
    nn = n * n
    nx = (K + 1) * nn + K

    a = 1.0 + eta
    ghat, cgain, vbar = [], np.zeros(K), varpi * np.sqrt(sigma2)
    for k in range(K):
        g, gn = _unit(H[k])
        ghat.append(g)
        cgain[k] = P * gn ** 2 / sigma2[k]

    # objective (maximize):  sum_k 2 a vbar sqrt(c) s_k - a vbar^2 c g^H X g  - a vbar^2
    obj = np.zeros(nx)
    for k in range(K):
        coef = _form_coeffs(ghat[k])
        for j in range(K + 1):
            obj[j * nn:(j + 1) * nn] -= a[k] * vbar[k] ** 2 * cgain[k] * coef
        obj[(K + 1) * nn + k] = 2.0 * a[k] * vbar[k] * np.sqrt(cgain[k])
    constant = -float(np.sum(a * vbar ** 2))
    scale = float(max(np.max(np.abs(obj)), 1e-300))
    c = -obj / scale

    # orthant rows: power, secrecy, optional floor
    rows, rhs = [], []
    power = np.zeros(nx)
    for j in range(K + 1):
        power[j * nn:(j + 1) * nn] = trace
    rows.append(power)
    rhs.append(1.0)
    secrecy_row = None
    ge, gen = _unit(h_e)
    if np.isfinite(Gamma) and gen > 0 and P > 0:
        ce = _form_coeffs(ge)
        r = np.zeros(nx)
        r[:nn] = ce
        for j in range(1, K + 1):
            r[j * nn:(j + 1) * nn] = -Gamma * ce
        secrecy_row = len(rows)
        rows.append(r)
        rhs.append(Gamma * sigma2_e / (P * gen ** 2))
    if w1_power_floor is not None:
        r = np.zeros(nx)
        r[:nn] = -trace
        rows.append(r)
        rhs.append(-w1_power_floor / P if P > 0 else -np.inf)

    # rotated cones (t + 1, 2 s, t - 1) with t = g^H X_k g
    soc_G, soc_h = [], []
    for k in range(K):
        t = np.zeros(nx)
        t[k * nn:(k + 1) * nn] = _form_coeffs(ghat[k])
        sk = np.zeros(nx)
        sk[(K + 1) * nn + k] = 2.0
        soc_G.append(np.stack([-t, -sk, -t]))
        soc_h.append(np.array([1.0, 0.0, -1.0]))

    # PSD blocks X_1 .. X_K, X_e
    d = conic.svec_dim(2 * n)
    psd_G = np.zeros(((K + 1) * d, nx))
    for j in range(K + 1):
        psd_G[j * d:(j + 1) * d, j * nn:(j + 1) * nn] = -E

    G = np.vstack([np.array(rows)] + soc_G + [psd_G])
    h = np.concatenate([np.array(rhs)] + soc_h + [np.zeros((K + 1) * d)])
    dims = conic.ConeDims(l=len(rows), q=[3] * K, s=[2 * n] * (K + 1))
    layout = SdrLayout(n, K, scale, constant, secrecy_row)
    return SdrProblem(conic.ConicProblem(c, G, h, dims), layout, float(P))


@dataclass
class SdrSolution:
    """Relaxed covariances (in watts) and the relaxed objective."""

    R_tilde_k: np.ndarray        # (K, Nt, Nt)
    R_tilde_e: np.ndarray        # (Nt, Nt)
    objective: float             # relaxed value of the quadratic transform
    status: str
    conic: conic.ConicSolution | None = None

    @property
    def R_tilde(self) -> np.ndarray:
        return self.R_tilde_k.sum(axis=0) + self.R_tilde_e

    @property
    def optimal(self) -> bool:
        return self.status == conic.OPTIMAL


def solve_sdr(sp: SdrProblem, tol: float = 1e-9, max_iters: int = 200) -> SdrSolution:
    """Solve the relaxed program and map the result back to watts.

    The covariances are read from the PSD slacks, which the interior-point
    iterates keep strictly inside the cone, so they are PSD by construction.
    """
    lay = sp.layout
    n, K = lay.n, lay.K
    sol = conic.solve(sp.problem, tol=tol, max_iters=max_iters)
    if sol.status in (conic.PRIMAL_INFEASIBLE, conic.DUAL_INFEASIBLE):
        zero = np.zeros((n, n), complex)
        return SdrSolution(np.zeros((K, n, n), complex), zero, np.nan, sol.status, sol)
    d = conic.svec_dim(2 * n)
    start = sp.problem.dims.l + 3 * K
    mats = []
    for j in range(K + 1):
        S = conic.smat(sol.s[start + j * d:start + (j + 1) * d], 2 * n)
        mats.append(sp.P * conic.real_embedding_to_complex(S))
    objective = -sol.primal_objective * lay.scale + lay.constant
    return SdrSolution(np.array(mats[:K]), mats[K], float(objective), sol.status, sol)


@dataclass
class RecoveredSolution:
    beams: BeamSolution
    R_k_star: np.ndarray
    R_e_star: np.ndarray
    unserved: list = field(default_factory=list)


def recover(sdr: SdrSolution, H) -> RecoveredSolution:
    """Rank-one beamformers from the relaxed covariances.

    The phase is fixed so that ``h_k^H w_k`` is real and nonnegative.  A
    receiver whose relaxed gain ``h_k^H R_k h_k`` is at most
    ``1e-12 * ||h_k||^2 * tr R`` (relative to what full power could deliver)
    gets ``w_k = 0``.
    """
    H = np.atleast_2d(H)
    K, n = H.shape
    W = np.zeros((n, K), complex)
    unserved = []
    total = max(np.trace(sdr.R_tilde).real, 0.0)
    for k in range(K):
        Rk = sdr.R_tilde_k[k]
        h = H[k]
        t = quad_form(h, Rk)
        ref = np.vdot(h, h).real * total
        if ref <= 0 or t <= UNSERVED_THRESHOLD * ref:
            unserved.append(k)
            continue
        W[:, k] = Rk @ h / np.sqrt(t)
    Rk_star = np.einsum("ik,jk->kij", W, W.conj())
    R_e = sdr.R_tilde - Rk_star.sum(axis=0)
    R_e = 0.5 * (R_e + R_e.conj().T)
    return RecoveredSolution(BeamSolution(W, R_e), Rk_star, R_e, unserved)


@dataclass
class CertificateReport:
    """Residuals of the optimality argument; every entry should be >= -tol."""

    objective_preservation: np.ndarray   # -|h^H R* h - h^H R~ h| / (1 + |h^H R~ h|), per user (SNR units)
    dominance: np.ndarray                # min eig (R~_k - R*_k) per user
    an_psd: float                        # min eig R_e*
    secrecy: float                       # slack of the rewritten secrecy constraint, / sigma_e^2
    power: float                         # -|tr R* - tr R~| and P - tr R*, the smaller
    objective_gap: float                 # -|relaxed - recovered| / max(1, |relaxed|)
    tol: float = 1e-7
    gap_tol: float = 1e-6

    @property
    def checks(self) -> dict:
        return {
            "objective_preservation": float(np.min(self.objective_preservation, initial=0.0)),
            "dominance": float(np.min(self.dominance, initial=0.0)),
            "an_psd": self.an_psd,
            "secrecy": self.secrecy,
            "power": self.power,
        }

    def failures(self) -> list:
        out = [k for k, v in self.checks.items() if v < -self.tol]
        if self.objective_gap < -self.gap_tol:
            out.append("objective_gap")
        return out

    @property
    def passed(self) -> bool:
        return not self.failures()


def verify_certificate(sdr: SdrSolution, rec: RecoveredSolution, H, h_e, sigma2,
                       sigma2_e, P, Gamma, eta=None, varpi=None, tol=1e-7) -> CertificateReport:
    """Numerically check the steps that make the rank-one recovery exact."""
    H = np.atleast_2d(H)
    K = H.shape[0]
    sigma2 = np.broadcast_to(np.asarray(sigma2, float), (K,))
    pres = np.zeros(K)
    dom = np.zeros(K)
    for k in range(K):
        a = quad_form(H[k], sdr.R_tilde_k[k]) / sigma2[k]
        b = quad_form(H[k], rec.R_k_star[k]) / sigma2[k]
        pres[k] = -abs(a - b) / (1.0 + abs(a))
        dom[k] = conic.min_eig(sdr.R_tilde_k[k] - rec.R_k_star[k])
    an_psd = conic.min_eig(rec.R_e_star) if rec.R_e_star.size else 0.0
    if np.isfinite(Gamma):
        R_star = rec.R_k_star.sum(axis=0) + rec.R_e_star
        lhs = quad_form(h_e, rec.R_k_star[0])
        rhs = Gamma / (1.0 + Gamma) * (quad_form(h_e, R_star) + sigma2_e)
        secrecy = (rhs - lhs) / sigma2_e
    else:
        secrecy = np.inf
    tr_star = float(np.trace(rec.R_k_star.sum(axis=0) + rec.R_e_star).real)
    tr_tilde = float(np.trace(sdr.R_tilde).real)
    scale = max(P, 1e-300)
    power = min(-abs(tr_star - tr_tilde) / scale, (P - tr_star) / scale)
    gap = 0.0
    if eta is not None and varpi is not None and np.isfinite(sdr.objective):
        rec_obj = eval_Ib(H, rec.beams, sigma2, eta, varpi)
        gap = -abs(sdr.objective - rec_obj) / max(1.0, abs(sdr.objective))
    return CertificateReport(pres, dom, float(an_psd), float(secrecy), float(power), float(gap), tol)


def beamforming_update(H, h_e, sigma2, sigma2_e, P, Gamma, eta, varpi, tol=1e-9):
    """Build, solve and recover; returns ``(SdrSolution, RecoveredSolution | None)``."""
    sp = build_sdr(H, h_e, sigma2, sigma2_e, P, Gamma, eta, varpi)
    sdr = solve_sdr(sp, tol=tol)
    if sdr.status in (conic.PRIMAL_INFEASIBLE, conic.DUAL_INFEASIBLE):
        return sdr, None
    return sdr, recover(sdr, H)

"""SINRs, rates and full-solution audits.

Rates are in bits per channel use (log base 2).  ``H`` holds one receiver
channel per row, so ``H.conj() @ W`` gives the matrix of effective gains
``h_k^H w_k'``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import channel, scenario as scn
from .conic import min_eig



@dataclass(frozen=True)
class BeamSolution:
    """Beamformers ``W`` (Nt x K, one column per receiver) and AN covariance ``R_e``."""

    W: np.ndarray
    R_e: np.ndarray

    def __post_init__(self):
        W = np.array(self.W, dtype=complex, ndmin=2)
        R = np.array(self.R_e, dtype=complex, ndmin=2)
        if R.shape != (W.shape[0], W.shape[0]):
            raise ValueError(f"R_e shape {R.shape} does not match W with {W.shape[0]} rows")
        R = 0.5 * (R + R.conj().T)
        W.setflags(write=False)
        R.setflags(write=False)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "R_e", R)

    @classmethod
    def zeros(cls, n_antennas: int, K: int) -> "BeamSolution":
        return cls(np.zeros((n_antennas, K), complex), np.zeros((n_antennas, n_antennas), complex))

    @property
    def K(self) -> int:
        return self.W.shape[1]

    @property
    def R_k(self) -> np.ndarray:
        """Per-receiver covariances ``w_k w_k^H``, shape (K, Nt, Nt)."""
        return np.einsum("ik,jk->kij", self.W, self.W.conj())

    @property
    def R(self) -> np.ndarray:
        return self.W @ self.W.conj().T + self.R_e

    def power(self) -> float:
        return float(np.sum(np.abs(self.W) ** 2) + np.trace(self.R_e).real)

    def scaled(self, w_scale=1.0, an_scale=1.0) -> "BeamSolution":
        return BeamSolution(self.W * np.asarray(w_scale), self.R_e * an_scale)


def quad_form(h, X) -> float:
    """``h^H X h`` for Hermitian ``X`` (real part)."""
    return float(np.real(np.vdot(h, X @ h)))


def gain_matrix(H, W) -> np.ndarray:
    """``|h_k^H w_k'|^2`` for every receiver row ``k`` and beam ``k'``."""
    return np.abs(np.conj(H) @ W) ** 2


def an_power(H, R_e) -> np.ndarray:
    """``h_k^H R_e h_k`` per row of ``H``."""
    H = np.atleast_2d(H)
    return np.real(np.einsum("ki,ij,kj->k", H.conj(), R_e, H))


def sinr_all(H, sol: BeamSolution, sigma2) -> np.ndarray:
    """SINR of every information receiver (interference excludes its own beam)."""
    G = gain_matrix(H, sol.W)
    sig = np.diag(G)
    den = G.sum(axis=1) - sig + an_power(H, sol.R_e) + np.broadcast_to(sigma2, sig.shape)
    return sig / den


def sinr_ir(k: int, H, sol: BeamSolution, sigma2) -> float:
    """SINR of information receiver ``k`` (zero-based)."""
    return float(sinr_all(H, sol, sigma2)[k])


def sinr_eve(h_e, sol: BeamSolution, sigma2_e: float) -> float:
    """Eavesdropper SINR on the confidential stream of receiver 0."""
    g = np.abs(np.conj(h_e) @ sol.W) ** 2
    den = g[1:].sum() + quad_form(h_e, sol.R_e) + sigma2_e
    return float(g[0] / den)


def sum_rate(H, sol: BeamSolution, sigma2) -> float:
    return float(np.sum(np.log2(1.0 + sinr_all(H, sol, sigma2))))


PSD_TOL = 1e-8


@dataclass
class Audit:
    """Objective and signed constraint residuals (negative means violated)."""

    sum_rate: float
    sinr: np.ndarray
    sinr_eve: float
    eve_rate: float
    power_used: float
    power_residual: float
    secrecy_residual: float
    psd_residual: float
    placement: scn.FeasibilityReport = field(default_factory=scn.FeasibilityReport)

    @property
    def residuals(self) -> dict:
        out = {
            "power": self.power_residual,
            "secrecy": self.secrecy_residual,
            "an_psd": self.psd_residual,
            "placement": self.placement.min_slack,
        }
        return out

    @property
    def min_residual(self) -> float:
        return float(min(self.residuals.values()))

    def feasible(self, tol: float = 1e-6) -> bool:
        """All residuals above ``-tol``; the AN eigenvalue also above ``-PSD_TOL``."""
        return self.min_residual >= -tol and self.psd_residual >= -min(tol, PSD_TOL)


def audit(scenario: scn.Scenario, placement: scn.Placement, sol: BeamSolution) -> Audit:
    """Recompute channels from the placement and evaluate every constraint."""
    Nt = scenario.config.n_antennas
    if sol.W.shape != (Nt, scenario.K):
        raise ValueError(f"W has shape {sol.W.shape}, expected {(Nt, scenario.K)}")
    ch = channel.channels(scenario, placement)
    gam = sinr_all(ch.ir, sol, scenario.sigma2_ir)
    gam_e = sinr_eve(ch.eve, sol, scenario.sigma2_eve)
    eve_rate = float(np.log2(1.0 + gam_e))
    used = sol.power()
    psd = min_eig(sol.R_e) if Nt else 0.0
    return Audit(
        sum_rate=float(np.sum(np.log2(1.0 + gam))),
        sinr=gam,
        sinr_eve=gam_e,
        eve_rate=eve_rate,
        power_used=used,
        power_residual=scenario.P - used,
        secrecy_residual=scenario.gamma_th_e - eve_rate,
        psd_residual=float(psd),
        placement=scn.validate_placement(scenario.config, placement),
    )

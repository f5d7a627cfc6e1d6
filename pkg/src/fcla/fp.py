"""Fractional-programming transforms of the sum-rate objective.

Two surrogates are used.  The Lagrangian dual transform

    I_a = sum_k log(1 + eta_k) - eta_k + (1 + eta_k) * gt_k,

    gt_k = |h_k^H w_k|^2 / D_k,   D_k = sum_k' |h_k^H w_k'|^2 + h_k^H R_e h_k + sigma_k^2,

is maximized by ``eta_k = SINR_k``, where it equals the sum rate.  Note that
``D_k`` includes the receiver's own beam, so ``gt_k = SINR_k / (1 + SINR_k)``.
The quadratic transform

    I_b = sum_k 2 (1 + eta_k) varpi_k |h_k^H w_k| - (1 + eta_k) varpi_k^2 D_k

is maximized by ``varpi_k = |h_k^H w_k| / D_k``, where it equals the ratio
part ``sum_k (1 + eta_k) gt_k`` of ``I_a``.

``eval_Ia`` reports bits (the whole transform divided by ``ln 2``) so that
its maximum is directly comparable with :func:`metrics.sum_rate`;
``ratio_term`` and ``eval_Ib`` are in natural units.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .metrics import BeamSolution, an_power, gain_matrix, sinr_all

LN2 = np.log(2.0)


@dataclass(frozen=True)
class FpState:
    eta: np.ndarray
    varpi: np.ndarray

    def __post_init__(self):
        for name in ("eta", "varpi"):
            v = np.array(getattr(self, name), dtype=float, ndmin=1)
            if not np.all(np.isfinite(v)) or np.any(v < 0):
                raise ValueError(f"{name} must be finite and nonnegative")
            v.setflags(write=False)
            object.__setattr__(self, name, v)


def _parts(H, sol: BeamSolution, sigma2):
    G = gain_matrix(H, sol.W)
    sig = np.diag(G).copy()
    den = G.sum(axis=1) + an_power(H, sol.R_e) + np.broadcast_to(sigma2, sig.shape)
    return sig, den


def update_eta(H, sol: BeamSolution, sigma2) -> np.ndarray:
    """Optimal slack: the SINR of every receiver."""
    return sinr_all(H, sol, sigma2)


def update_varpi(H, sol: BeamSolution, sigma2, eta=None) -> np.ndarray:
    """Optimal quadratic-transform auxiliaries; ``eta`` does not enter the optimum."""
    sig, den = _parts(H, sol, sigma2)
    return np.sqrt(sig) / den


def ratio_term(H, sol: BeamSolution, sigma2, eta) -> float:
    """``sum_k (1 + eta_k) gt_k`` in natural units."""
    sig, den = _parts(H, sol, sigma2)
    return float(np.sum((1.0 + np.asarray(eta)) * sig / den))


def eval_Ia(H, sol: BeamSolution, sigma2, eta) -> float:
    """Lagrangian dual transform in bits."""
    eta = np.asarray(eta, dtype=float)
    rest = np.sum(np.log1p(eta) - eta)
    return float((rest + ratio_term(H, sol, sigma2, eta)) / LN2)


def eval_Ib(H, sol: BeamSolution, sigma2, eta, varpi) -> float:
    """Quadratic transform (constant term dropped), natural units."""
    sig, den = _parts(H, sol, sigma2)
    a = 1.0 + np.asarray(eta, dtype=float)
    v = np.asarray(varpi, dtype=float)
    return float(np.sum(2.0 * a * v * np.sqrt(sig) - a * v ** 2 * den))


def fp_state(H, sol: BeamSolution, sigma2) -> FpState:
    eta = update_eta(H, sol, sigma2)
    return FpState(eta, update_varpi(H, sol, sigma2, eta))

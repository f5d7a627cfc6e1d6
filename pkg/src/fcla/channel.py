"""Far-field channels of the cylindrical array.

Antenna ``i = m*N + n`` sits at ``(rho cos phi_mn, rho sin phi_mn, z_m)``.
Each path ``l`` adds ``beta_l * exp(j 2 pi / lambda * chi_l)`` to the
conjugate channel entry, where ``chi_l`` is the path-length difference to
the reference point.  Channel vectors are stored as columns ``h`` such that
the received signal is ``h^H x``.

The reference point is the centre of the vertical region, ``(0, 0, A/2)``;
moving it only rotates the phase of every path gain.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .scenario import ArrayConfig, PathSet, Placement, Scenario

TWO_PI = 2.0 * np.pi


def propagation_delta(phi_mn, z_m, theta, phi_az, rho):
    """Path-length difference ``t_mn . varrho`` for element angle/height and path direction."""
    st = np.sin(theta)
    return (rho * np.cos(phi_mn) * st * np.cos(phi_az)
            + rho * np.sin(phi_mn) * st * np.sin(phi_az)
            + z_m * np.cos(theta))


def _unit_phase(chi, wavelength):
    # reduce chi/lambda to [0, 1) before exponentiating
    frac = np.mod(np.asarray(chi) / wavelength, 1.0)
    return np.exp(1j * TWO_PI * frac)


def frv(phi_mn: float, z_m: float, paths: PathSet, wavelength: float, rho: float) -> np.ndarray:
    """Field response vector of one element: one unit-modulus entry per path."""
    chi = propagation_delta(phi_mn, z_m, paths.theta, paths.phi_az, rho)
    return _unit_phase(chi, wavelength)


def path_deltas(placement: Placement, paths: PathSet, config: ArrayConfig) -> np.ndarray:
    """``chi`` for every antenna and path, shape (M*N, L), heights relative to ``z_ref``."""
    phi = placement.phi.ravel()
    z = placement.antenna_heights() - config.z_ref
    return propagation_delta(phi[:, None], z[:, None], paths.theta[None, :],
                             paths.phi_az[None, :], config.rho)


def channel_vector(placement: Placement, paths: PathSet, config: ArrayConfig) -> np.ndarray:
    """Channel ``h_u`` (length M*N) with ``h_u^H = 1^H Sigma_u G_u``."""
    if placement.phi.shape != (config.M, config.N):
        raise ValueError("placement does not match the array configuration")
    chi = path_deltas(placement, paths, config)
    row = _unit_phase(chi, config.wavelength) @ paths.beta   # entries of h^H
    return np.conj(row)


class Channels(NamedTuple):
    ir: np.ndarray   # (K, Nt) rows are h_k
    eve: np.ndarray  # (Nt,)


def channels(scenario: Scenario, placement: Placement) -> Channels:
    cfg = scenario.config
    H = np.stack([channel_vector(placement, ps, cfg) for ps in scenario.ir_paths])
    return Channels(H, channel_vector(placement, scenario.eve_paths, cfg))

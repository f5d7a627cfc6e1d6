"""Array geometry, system parameters and random scenario generation."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import kvfile

TWO_PI = 2.0 * np.pi


def db_to_linear(db):
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


def dbm_to_watt(dbm):
    return 10.0 ** ((np.asarray(dbm, dtype=float) - 30.0) / 10.0)


@dataclass(frozen=True)
class ArrayConfig:
    """Cylindrical array: ``M`` rings of ``N`` elements on radius ``rho``.

    ``phi_th`` and ``z_th`` are the minimum angular gap between neighbours on
    a ring and the minimum vertical gap between rings; heights live in
    ``[0, A]``.  ``None`` defaults: ``rho = wavelength``, ``phi_th`` such that
    the chord between neighbours is half a wavelength, ``z_th = wavelength/2``
    and ``A = 6 * wavelength``.
    """

    M: int = 3
    N: int = 2
    wavelength: float = 0.1
    rho: float | None = None
    phi_th: float | None = None
    z_th: float | None = None
    A: float | None = None

    def __post_init__(self):
        lam = float(self.wavelength)
        if self.M < 1 or self.N < 1:
            raise ValueError("M and N must be positive")
        if lam <= 0:
            raise ValueError("wavelength must be positive")
        rho = lam if self.rho is None else float(self.rho)
        if rho <= 0:
            raise ValueError("rho must be positive")
        if self.phi_th is None:
            phi_th = 2.0 * np.arcsin(min(1.0, lam / (4.0 * rho)))
        else:
            phi_th = float(self.phi_th)
        z_th = lam / 2.0 if self.z_th is None else float(self.z_th)
        A = 6.0 * lam if self.A is None else float(self.A)
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "phi_th", phi_th)
        object.__setattr__(self, "z_th", z_th)
        object.__setattr__(self, "A", A)
        if phi_th <= 0 or z_th <= 0:
            raise ValueError("phi_th and z_th must be positive")
        if self.N * phi_th > TWO_PI * (1 + 1e-12):
            raise ValueError(f"N*phi_th = {self.N * phi_th:.6g} exceeds 2*pi: no angular layout exists")
        if (self.M - 1) * z_th > A * (1 + 1e-12) + 1e-15:
            raise ValueError(f"(M-1)*z_th = {(self.M - 1) * z_th:.6g} exceeds A = {A:.6g}")

    @property
    def n_antennas(self) -> int:
        return self.M * self.N

    @property
    def z_ref(self) -> float:
        """Height of the phase reference point (middle of the vertical region)."""
        return 0.5 * self.A


@dataclass(frozen=True)
class Placement:
    """Element angles ``phi`` (M x N, ascending per ring) and ring heights ``z``."""

    phi: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        phi = np.array(self.phi, dtype=float, ndmin=2)
        z = np.array(self.z, dtype=float, ndmin=1)
        phi.setflags(write=False)
        z.setflags(write=False)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "z", z)

    @property
    def shape(self):
        return self.phi.shape

    def with_phi(self, phi) -> "Placement":
        return Placement(np.asarray(phi).reshape(self.phi.shape), self.z)

    def with_z(self, z) -> "Placement":
        return Placement(self.phi, np.asarray(z).reshape(self.z.shape))

    def antenna_heights(self) -> np.ndarray:
        """Height of every antenna in flattened order ``i = m*N + n``."""
        return np.repeat(self.z, self.phi.shape[1])


def antenna_index(m: int, n: int, N: int) -> int:
    """Flattened antenna index of element ``n`` on ring ``m`` (zero-based)."""
    return m * N + n


@dataclass(frozen=True)
class PathSet:
    """Far-field multipath description of one link."""

    theta: np.ndarray
    phi_az: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float, ndmin=1)
        phi = np.array(self.phi_az, dtype=float, ndmin=1)
        beta = np.array(self.beta, dtype=complex, ndmin=1)
        if not (theta.shape == phi.shape == beta.shape) or theta.ndim != 1:
            raise ValueError("theta, phi_az and beta must be 1-D arrays of equal length")
        if theta.size < 1:
            raise ValueError("a path set needs at least one path")
        if np.any(theta < -1e-12) or np.any(theta > np.pi + 1e-12):
            raise ValueError("elevation angles must lie in [0, pi]")
        if np.any(phi < -1e-12) or np.any(phi > TWO_PI + 1e-12):
            raise ValueError("azimuth angles must lie in [0, 2*pi]")
        for name, arr in (("theta", theta), ("phi_az", phi), ("beta", beta)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def L(self) -> int:
        return self.theta.size

    def directions(self) -> np.ndarray:
        """Unit direction vectors, shape (L, 3)."""
        st = np.sin(self.theta)
        return np.stack([st * np.cos(self.phi_az), st * np.sin(self.phi_az), np.cos(self.theta)], axis=1)


@dataclass(frozen=True)
class Scenario:
    config: ArrayConfig
    ir_paths: tuple
    eve_paths: PathSet
    sigma2_ir: np.ndarray
    sigma2_eve: float
    P: float
    gamma_th_e: float
    distances: np.ndarray | None = None
    path_variance: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "ir_paths", tuple(self.ir_paths))
        sig = np.array(self.sigma2_ir, dtype=float, ndmin=1)
        if sig.size == 1 and len(self.ir_paths) > 1:
            sig = np.full(len(self.ir_paths), sig[0])
        sig.setflags(write=False)
        object.__setattr__(self, "sigma2_ir", sig)
        object.__setattr__(self, "sigma2_eve", float(self.sigma2_eve))
        object.__setattr__(self, "P", float(self.P))
        object.__setattr__(self, "gamma_th_e", float(self.gamma_th_e))
        if len(self.ir_paths) < 1:
            raise ValueError("need at least one information receiver")
        if sig.size != len(self.ir_paths):
            raise ValueError("one noise power per receiver is required")
        if np.any(sig <= 0) or self.sigma2_eve <= 0:
            raise ValueError("noise powers must be positive")
        if self.P < 0:
            raise ValueError("power budget must be nonnegative")
        if self.gamma_th_e < 0:
            raise ValueError("secrecy rate cap must be nonnegative")

    @property
    def K(self) -> int:
        return len(self.ir_paths)

    @property
    def Gamma_th_e(self) -> float:
        """Linear SINR cap for the eavesdropper, ``2**gamma_th_e - 1``."""
        return float(np.expm1(self.gamma_th_e * np.log(2.0)))

    @property
    def secrecy_active(self) -> bool:
        return np.isfinite(self.gamma_th_e)

    def replace(self, **changes) -> "Scenario":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class FeasibilityReport:
    """Constraint violations as ``(name, index, slack)`` with negative slack."""

    violations: list = field(default_factory=list)
    min_slack: float = np.inf

    @property
    def feasible(self) -> bool:
        return not self.violations


def placement_slacks(config: ArrayConfig, p: Placement) -> dict:
    """Signed slacks of the angular/vertical spacing and box constraints."""
    M, N = config.M, config.N
    if p.phi.shape != (M, N) or p.z.shape != (M,):
        raise ValueError(f"placement shape {p.phi.shape}/{p.z.shape} does not match M={M}, N={N}")
    phi, z = p.phi, p.z
    gaps = np.diff(phi, axis=1) - config.phi_th
    wrap = phi[:, 0] + TWO_PI - phi[:, -1] - config.phi_th
    return {
        "angle_gap": gaps,
        "angle_wrap": wrap,
        "angle_low": phi,
        "angle_high": TWO_PI - phi,
        "height_gap": np.diff(z) - config.z_th,
        "height_low": z,
        "height_high": config.A - z,
    }


def validate_placement(config: ArrayConfig, p: Placement, tol: float = 0.0) -> FeasibilityReport:
    """List every violated placement constraint with its signed slack."""
    slacks = placement_slacks(config, p)
    violations = []
    min_slack = np.inf
    for name, arr in slacks.items():
        arr = np.asarray(arr)
        if arr.size:
            min_slack = min(min_slack, float(arr.min()))
        for idx in zip(*np.nonzero(arr < -tol)):
            violations.append((name, tuple(int(i) for i in idx), float(arr[idx])))
    return FeasibilityReport(violations, min_slack)


def initial_placement(config: ArrayConfig) -> Placement:
    """Uniform rings, ring ``m`` (1-based) rotated by ``m*pi/(M*N)``, heights spread over [0, A]."""
    M, N = config.M, config.N
    if N * config.phi_th > TWO_PI or (M - 1) * config.z_th > config.A:
        raise ValueError("infeasible array configuration")
    base = TWO_PI * np.arange(N) / N
    offsets = np.arange(1, M + 1) * np.pi / (M * N)
    phi = offsets[:, None] + base[None, :]
    z = np.linspace(0.0, config.A, M) if M > 1 else np.zeros(1)
    return Placement(phi, z)


# ---------------------------------------------------------------------------
# Random scenarios
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SamplingParams:
    """Geometry and propagation constants for :func:`sample_scenario`."""

    K: int = 3
    L: int = 4
    alice: tuple = (0.0, 0.0)
    disk_center: tuple = (40.0, 0.0)
    disk_radius: float = 10.0
    C0_db: float = -30.0
    alpha: float = 2.3
    theta_range: tuple = (np.pi / 6, 5 * np.pi / 6)
    phi_range: tuple = (0.0, TWO_PI)
    sigma2_dbm: float = -90.0
    P_dbw: float = 3.0
    Gamma_th_db: float = -10.0
    M: int = 3
    N: int = 2
    wavelength: float = 0.1
    rho: float | None = None
    phi_th: float | None = None
    z_th: float | None = None
    A: float | None = None

    def config(self) -> ArrayConfig:
        return ArrayConfig(self.M, self.N, self.wavelength, self.rho, self.phi_th, self.z_th, self.A)

    def replace(self, **changes) -> "SamplingParams":
        return dataclasses.replace(self, **changes)


def gamma_from_db(Gamma_db: float) -> float:
    """Eavesdropper rate cap in bits for a linear SINR cap given in dB."""
    if np.isinf(Gamma_db) and Gamma_db > 0:
        return np.inf
    return float(np.log2(1.0 + db_to_linear(Gamma_db)))


def sample_scenario(seed: int, params: SamplingParams = SamplingParams()) -> Scenario:
    """Draw receiver positions and multipath channels; deterministic in ``seed``.

    Receivers ``0..K-1`` are the information receivers, receiver ``K`` is
    the eavesdropper; all are dropped uniformly in the same disk.
    """
    if params.K < 1:
        raise ValueError("K must be at least 1")
    # radius 0 is allowed: every receiver sits at the disk centre
    if not params.disk_radius >= 0 or params.L < 1:
        raise ValueError("invalid sampling parameters")
    config = params.config()
    rng = np.random.default_rng(seed)
    C0 = db_to_linear(params.C0_db)
    paths, dists, variances = [], [], []
    for _ in range(params.K + 1):
        r = params.disk_radius * np.sqrt(rng.uniform())
        ang = rng.uniform(0.0, TWO_PI)
        pos = np.asarray(params.disk_center) + r * np.array([np.cos(ang), np.sin(ang)])
        d = float(np.hypot(*(pos - np.asarray(params.alice))))
        var = C0 * d ** (-params.alpha) / params.L
        beta = np.sqrt(var / 2.0) * (rng.standard_normal(params.L) + 1j * rng.standard_normal(params.L))
        theta = rng.uniform(*params.theta_range, size=params.L)
        phi = rng.uniform(*params.phi_range, size=params.L)
        paths.append(PathSet(theta, phi, beta))
        dists.append(d)
        variances.append(var)
    sigma2 = float(dbm_to_watt(params.sigma2_dbm))
    return Scenario(
        config=config,
        ir_paths=tuple(paths[:-1]),
        eve_paths=paths[-1],
        sigma2_ir=np.full(params.K, sigma2),
        sigma2_eve=sigma2,
        P=float(db_to_linear(params.P_dbw)),
        gamma_th_e=gamma_from_db(params.Gamma_th_db),
        distances=np.asarray(dists),
        path_variance=np.asarray(variances),
    )


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def scenario_records(s: Scenario) -> dict:
    c = s.config
    rec = {
        "M": c.M, "N": c.N, "wavelength": c.wavelength, "rho": c.rho,
        "phi_th": c.phi_th, "z_th": c.z_th, "A": c.A,
        "K": s.K, "P": s.P, "gamma_th_e": s.gamma_th_e,
        "sigma2_ir": np.asarray(s.sigma2_ir), "sigma2_eve": s.sigma2_eve,
    }
    for k, ps in enumerate(s.ir_paths):
        rec[f"ir{k}.theta"] = ps.theta
        rec[f"ir{k}.phi_az"] = ps.phi_az
        rec[f"ir{k}.beta"] = ps.beta
    rec["eve.theta"] = s.eve_paths.theta
    rec["eve.phi_az"] = s.eve_paths.phi_az
    rec["eve.beta"] = s.eve_paths.beta
    return rec


def scenario_from_records(rec: dict) -> Scenario:
    arr = kvfile.as_array
    config = ArrayConfig(int(rec["M"]), int(rec["N"]), float(rec["wavelength"]), float(rec["rho"]),
                         float(rec["phi_th"]), float(rec["z_th"]), float(rec["A"]))
    K = int(rec["K"])

    def paths(prefix):
        return PathSet(arr(rec[f"{prefix}.theta"]), arr(rec[f"{prefix}.phi_az"]),
                       arr(rec[f"{prefix}.beta"], complex))

    return Scenario(config, tuple(paths(f"ir{k}") for k in range(K)), paths("eve"),
                    arr(rec["sigma2_ir"]), float(rec["sigma2_eve"]), float(rec["P"]),
                    float(rec["gamma_th_e"]))


def save_scenario(path, s: Scenario) -> None:
    kvfile.write(path, scenario_records(s), header="fcla scenario")


def load_scenario(path) -> Scenario:
    return scenario_from_records(kvfile.read(path))

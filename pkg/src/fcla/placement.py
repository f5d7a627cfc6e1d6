"""Antenna-position update: expansions, gradients, SCA projection and PGD.

With beams and FP auxiliaries fixed, the placement objective is

    f(xi) = sum_k a_k varpi_k (2 Re{h_k^H w_k} - varpi_k (h_k^H Xi_s h_k + sigma_k^2))

with ``a_k = 1 + eta_k`` and the secrecy constraint reads
``h_e^H Xi_e h_e >= -Gamma sigma_e^2``.  Both quadratic forms and the linear
term are finite sums of cosines of the path phases, which gives closed-form
derivatives and a global curvature bound.

Variables come in two blocks.  Angles are handled in arc-length
coordinates ``u = rho * phi`` (metres), so gradients and Hessians carry the
``1/rho`` and ``1/rho^2`` factors of the angular derivatives; heights are
used directly.  Each PGD iteration takes a gradient step, projects onto the
spacing/box polytope intersected with the ball given by the SCA lower bound
of the secrecy constraint, and extrapolates with Nesterov momentum.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from . import _kernels as kern
from .channel import channels
from .metrics import BeamSolution
from .scenario import ArrayConfig, Placement, Scenario, TWO_PI

ANGLES = "angles"
HEIGHTS = "heights"
BLOCKS = (ANGLES, HEIGHTS)
DELTA_FLOOR = 1e-12


# ---------------------------------------------------------------------------
# Xi matrices and expansions
# ---------------------------------------------------------------------------

def build_xi_matrices(sol: BeamSolution, Gamma: float):
    """Return ``(Xi_s, Xi_e)``; ``Xi_e`` is ``None`` when ``Gamma`` is infinite."""
    W = sol.W
    outer = np.einsum("ik,jk->kij", W, W.conj())
    Xi_s = outer.sum(axis=0) + sol.R_e
    if not np.isfinite(Gamma):
        return Xi_s, None
    Xi_e = Gamma * (outer[1:].sum(axis=0) + sol.R_e) - outer[0]
    return Xi_s, Xi_e


@dataclass(frozen=True)
class QuadExpansion:
    """Terms ``mu cos(k0 + psi[i, l] - psi[j, p])``; ``l``/``p`` index a stacked path list."""

    i: np.ndarray
    l: np.ndarray
    j: np.ndarray
    p: np.ndarray
    mu: np.ndarray
    k0: np.ndarray

    @classmethod
    def empty(cls):
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z, z, z, np.zeros(0), np.zeros(0))

    @classmethod
    def from_quadratic(cls, beta, Xi, path_offset=0, weight=1.0, tol=0.0):
        """Expansion of ``weight * h^H Xi h`` for a channel with path gains ``beta``.

        A negative ``weight`` is folded into the phase (``cos(x + pi) = -cos x``)
        so every amplitude stays nonnegative.
        """
        beta = np.asarray(beta, dtype=complex)
        Xi = np.asarray(Xi, dtype=complex)
        n, L = Xi.shape[0], beta.size
        ii, jj = np.nonzero(np.abs(Xi) > tol)
        ll, pp = np.meshgrid(np.arange(L), np.arange(L), indexing="ij")
        ll, pp = ll.ravel(), pp.ravel()
        I = np.repeat(ii, L * L)
        J = np.repeat(jj, L * L)
        Lx = np.tile(ll, ii.size)
        Px = np.tile(pp, ii.size)
        xi = Xi[I, J]
        mu = abs(weight) * np.abs(beta[Lx]) * np.abs(beta[Px]) * np.abs(xi)
        k0 = np.angle(beta[Lx]) - np.angle(beta[Px]) + np.angle(xi)
        if weight < 0:
            k0 = k0 + np.pi
        return cls(I.astype(np.int64), (Lx + path_offset).astype(np.int64), J.astype(np.int64),
                   (Px + path_offset).astype(np.int64), mu, k0)

    def concat(self, other: "QuadExpansion") -> "QuadExpansion":
        return QuadExpansion(*(np.concatenate([a, b]) for a, b in zip(self._fields(), other._fields())))

    def _fields(self):
        return (self.i, self.l, self.j, self.p, self.mu, self.k0)

    @property
    def size(self) -> int:
        return self.mu.size

    def value(self, psi) -> float:
        return kern.quad_eval(self.i, self.l, self.j, self.p, self.mu, self.k0, psi)

    def grad(self, psi, d1, var, nvar):
        return kern.quad_grad(self.i, self.l, self.j, self.p, self.mu, self.k0, psi, d1, var, nvar)

    def hess(self, psi, d1, d2, var, nvar):
        return kern.quad_hess(self.i, self.l, self.j, self.p, self.mu, self.k0, psi, d1, d2, var, nvar)

    def bound(self, D1, D2, var, nvar):
        return kern.quad_bound(self.i, self.l, self.j, self.p, self.mu, D1, D2, var, nvar)


@dataclass(frozen=True)
class LinExpansion:
    """Terms ``mu cos(k0 + psi[i, l])``."""

    i: np.ndarray
    l: np.ndarray
    mu: np.ndarray
    k0: np.ndarray

    @classmethod
    def empty(cls):
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z, np.zeros(0), np.zeros(0))

    @classmethod
    def from_beam(cls, beta, w, path_offset=0, weight=1.0):
        """Expansion of ``weight * Re{h^H w}``."""
        beta = np.asarray(beta, dtype=complex)
        w = np.asarray(w, dtype=complex)
        n, L = w.size, beta.size
        I = np.repeat(np.arange(n), L)
        Lx = np.tile(np.arange(L), n)
        mu = abs(weight) * np.abs(beta[Lx]) * np.abs(w[I])
        k0 = np.angle(beta[Lx]) + np.angle(w[I])
        if weight < 0:
            k0 = k0 + np.pi
        keep = mu > 0
        return cls(I[keep].astype(np.int64), (Lx[keep] + path_offset).astype(np.int64), mu[keep], k0[keep])

    def concat(self, other: "LinExpansion") -> "LinExpansion":
        return LinExpansion(np.concatenate([self.i, other.i]), np.concatenate([self.l, other.l]),
                            np.concatenate([self.mu, other.mu]), np.concatenate([self.k0, other.k0]))

    @property
    def size(self) -> int:
        return self.mu.size

    def value(self, psi) -> float:
        return kern.lin_eval(self.i, self.l, self.mu, self.k0, psi)

    def grad(self, psi, d1, var, nvar):
        return kern.lin_grad(self.i, self.l, self.mu, self.k0, psi, d1, var, nvar)

    def hess(self, psi, d1, d2, var, nvar):
        return kern.lin_hess(self.i, self.l, self.mu, self.k0, psi, d1, d2, var, nvar)

    def bound(self, D1, D2, var, nvar):
        return kern.lin_bound(self.i, self.l, self.mu, D1, D2, var, nvar)


# ---------------------------------------------------------------------------
# Geometry of a block
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PathTable:
    """Stacked path directions of several receivers (``offsets[u]`` is the first path of ``u``)."""

    theta: np.ndarray
    phi_az: np.ndarray
    offsets: np.ndarray

    @classmethod
    def from_paths(cls, path_sets):
        theta = np.concatenate([ps.theta for ps in path_sets])
        phi = np.concatenate([ps.phi_az for ps in path_sets])
        sizes = [ps.L for ps in path_sets]
        return cls(theta, phi, np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(int))


def block_coords(placement: Placement, config: ArrayConfig, block: str) -> np.ndarray:
    if block == ANGLES:
        return config.rho * placement.phi.ravel()
    if block == HEIGHTS:
        return placement.z.astype(float).copy()
    raise ValueError(f"unknown block {block!r}")


def with_block_coords(placement: Placement, config: ArrayConfig, block: str, x) -> Placement:
    if block == ANGLES:
        return placement.with_phi(np.asarray(x) / config.rho)
    return placement.with_z(x)


class BlockGeometry:
    """Phases and their derivatives for one variable block, other block frozen."""

    def __init__(self, placement: Placement, config: ArrayConfig, table: PathTable, block: str):
        if block not in BLOCKS:
            raise ValueError(f"unknown block {block!r}")
        self.config, self.table, self.block = config, table, block
        self.k = TWO_PI / config.wavelength
        M, N = config.M, config.N
        self.Nt = M * N
        self.phi = placement.phi.ravel().copy()
        self.z = placement.antenna_heights() - config.z_ref
        st, ct = np.sin(table.theta), np.cos(table.theta)
        self._st, self._ct = st[None, :], ct[None, :]
        self._cpa, self._spa = np.cos(table.phi_az)[None, :], np.sin(table.phi_az)[None, :]
        if block == ANGLES:
            self.var = np.arange(self.Nt, dtype=np.int64)
            self.nvar = self.Nt
            self.D1 = np.broadcast_to(self.k * st[None, :], (self.Nt, st.size)).copy()
            self.D2 = self.D1 / config.rho
        else:
            self.var = np.repeat(np.arange(M), N).astype(np.int64)
            self.nvar = M
            self.D1 = np.broadcast_to(self.k * np.abs(ct)[None, :], (self.Nt, ct.size)).copy()
            self.D2 = np.zeros_like(self.D1)

    def _split(self, x):
        if self.block == ANGLES:
            return np.asarray(x) / self.config.rho, self.z
        return self.phi, np.repeat(np.asarray(x), self.config.N) - self.config.z_ref

    def phases(self, x):
        """``psi`` (Nt x L_total) at block coordinates ``x``."""
        phi, z = self._split(x)
        cph, sph = np.cos(phi)[:, None], np.sin(phi)[:, None]
        chi = self.config.rho * self._st * (cph * self._cpa + sph * self._spa) + z[:, None] * self._ct
        return self.k * chi

    def derivatives(self, x):
        """``(psi, d1, d2)`` at ``x``."""
        phi, z = self._split(x)
        cph, sph = np.cos(phi)[:, None], np.sin(phi)[:, None]
        cos_rel = cph * self._cpa + sph * self._spa     # cos(phi - phi_az)
        chi = self.config.rho * self._st * cos_rel + z[:, None] * self._ct
        psi = self.k * chi
        if self.block == ANGLES:
            sin_rel = sph * self._cpa - cph * self._spa  # sin(phi - phi_az)
            d1 = -self.k * self._st * sin_rel
            d2 = -self.k * self._st * cos_rel / self.config.rho
        else:
            d1 = np.broadcast_to(self.k * self._ct, psi.shape).copy()
            d2 = np.zeros_like(psi)
        return psi, np.ascontiguousarray(d1), np.ascontiguousarray(d2)


# ---------------------------------------------------------------------------
# The placement subproblem
# ---------------------------------------------------------------------------

class PlacementProblem:
    """Objective and secrecy constraint of the placement update as cosine sums.

    Parameters
    ----------
    scenario : Scenario
    sol : BeamSolution
        Fixed beams.
    eta, varpi : array_like
        Fixed FP auxiliaries.
    """

    def __init__(self, scenario: Scenario, sol: BeamSolution, eta, varpi):
        self.scenario = scenario
        K = scenario.K
        a = 1.0 + np.asarray(eta, dtype=float)
        v = np.asarray(varpi, dtype=float)
        Xi_s, Xi_e = build_xi_matrices(sol, scenario.Gamma_th_e)
        self.Xi_s, self.Xi_e = Xi_s, Xi_e
        users = list(scenario.ir_paths)
        self.obj_table = PathTable.from_paths(users)
        lin, quad = LinExpansion.empty(), QuadExpansion.empty()
        for k, ps in enumerate(users):
            off = int(self.obj_table.offsets[k])
            lin = lin.concat(LinExpansion.from_beam(ps.beta, sol.W[:, k], off, 2.0 * a[k] * v[k]))
            quad = quad.concat(QuadExpansion.from_quadratic(ps.beta, Xi_s, off, -a[k] * v[k] ** 2))
        self.obj_lin, self.obj_quad = lin, quad
        self.obj_const = -float(np.sum(a * v ** 2 * scenario.sigma2_ir))
        self.eve_table = PathTable.from_paths([scenario.eve_paths])
        self.secrecy_active = Xi_e is not None
        if self.secrecy_active:
            self.con_quad = QuadExpansion.from_quadratic(scenario.eve_paths.beta, Xi_e)
            self.con_rhs = -scenario.Gamma_th_e * scenario.sigma2_eve
        else:
            self.con_quad = QuadExpansion.empty()
            self.con_rhs = -np.inf

    # geometry helpers -------------------------------------------------
    def geometry(self, placement: Placement, block: str):
        cfg = self.scenario.config
        return (BlockGeometry(placement, cfg, self.obj_table, block),
                BlockGeometry(placement, cfg, self.eve_table, block))

    # objective --------------------------------------------------------
    def objective(self, geo: BlockGeometry, x) -> float:
        psi = geo.phases(x)
        return self.obj_lin.value(psi) + self.obj_quad.value(psi) + self.obj_const

    def objective_grad(self, geo: BlockGeometry, x) -> np.ndarray:
        psi, d1, _ = geo.derivatives(x)
        return (self.obj_lin.grad(psi, d1, geo.var, geo.nvar)
                + self.obj_quad.grad(psi, d1, geo.var, geo.nvar))

    def objective_hess(self, geo: BlockGeometry, x) -> np.ndarray:
        psi, d1, d2 = geo.derivatives(x)
        return (self.obj_lin.hess(psi, d1, d2, geo.var, geo.nvar)
                + self.obj_quad.hess(psi, d1, d2, geo.var, geo.nvar))

    def objective_delta(self, geo: BlockGeometry) -> float:
        B = (self.obj_lin.bound(geo.D1, geo.D2, geo.var, geo.nvar)
             + self.obj_quad.bound(geo.D1, geo.D2, geo.var, geo.nvar))
        return gershgorin(B)

    # secrecy constraint -----------------------------------------------
    def constraint(self, geo: BlockGeometry, x) -> float:
        """``h_e^H Xi_e h_e`` (compare with ``con_rhs``)."""
        if not self.secrecy_active:
            return np.inf
        return self.con_quad.value(geo.phases(x))

    def constraint_grad(self, geo: BlockGeometry, x) -> np.ndarray:
        psi, d1, _ = geo.derivatives(x)
        return self.con_quad.grad(psi, d1, geo.var, geo.nvar)

    def constraint_hess(self, geo: BlockGeometry, x) -> np.ndarray:
        psi, d1, d2 = geo.derivatives(x)
        return self.con_quad.hess(psi, d1, d2, geo.var, geo.nvar)

    def constraint_delta(self, geo: BlockGeometry) -> float:
        if not self.secrecy_active:
            return DELTA_FLOOR
        return gershgorin(self.con_quad.bound(geo.D1, geo.D2, geo.var, geo.nvar))


def gershgorin(B: np.ndarray) -> float:
    """Largest absolute row sum of an entrywise bound matrix (floored)."""
    if B.size == 0:
        return DELTA_FLOOR
    return float(max(np.max(np.sum(np.abs(B), axis=1)), DELTA_FLOOR))


# ---------------------------------------------------------------------------
# Convenience wrappers on placements
# ---------------------------------------------------------------------------

def placement_objective(scenario: Scenario, placement: Placement, sol: BeamSolution, eta, varpi) -> float:
    """Placement objective evaluated from the channels (no expansion involved)."""
    ch = channels(scenario, placement)
    a = 1.0 + np.asarray(eta, dtype=float)
    v = np.asarray(varpi, dtype=float)
    Xi_s, _ = build_xi_matrices(sol, np.inf)
    total = 0.0
    for k in range(scenario.K):
        h = ch.ir[k]
        lin = np.real(np.vdot(h, sol.W[:, k]))
        quad = np.real(np.vdot(h, Xi_s @ h))
        total += a[k] * v[k] * (2.0 * lin - v[k] * (quad + scenario.sigma2_ir[k]))
    return float(total)


def secrecy_margin(scenario: Scenario, placement: Placement, sol: BeamSolution) -> float:
    """``h_e^H Xi_e h_e + Gamma sigma_e^2`` (nonnegative when the cap holds)."""
    _, Xi_e = build_xi_matrices(sol, scenario.Gamma_th_e)
    if Xi_e is None:
        return np.inf
    h = channels(scenario, placement).eve
    return float(np.real(np.vdot(h, Xi_e @ h)) + scenario.Gamma_th_e * scenario.sigma2_eve)


def grad_objective(scenario, placement, sol, eta, varpi, which: str) -> np.ndarray:
    """Gradient of the placement objective in block coordinates (arc length for angles)."""
    prob = PlacementProblem(scenario, sol, eta, varpi)
    geo, _ = prob.geometry(placement, which)
    return prob.objective_grad(geo, block_coords(placement, scenario.config, which))


def hessian_Fee(scenario, placement, sol, which: str) -> np.ndarray:
    """Hessian of ``h_e^H Xi_e h_e`` in block coordinates."""
    prob = PlacementProblem(scenario, sol, np.zeros(scenario.K), np.zeros(scenario.K))
    _, geo = prob.geometry(placement, which)
    if not prob.secrecy_active:
        return np.zeros((geo.nvar, geo.nvar))
    return prob.constraint_hess(geo, block_coords(placement, scenario.config, which))


def spectral_bound_delta(expansion, geo: BlockGeometry) -> float:
    """Global bound ``delta`` with ``delta I >= Hessian`` for every placement."""
    return gershgorin(expansion.bound(geo.D1, geo.D2, geo.var, geo.nvar))


# ---------------------------------------------------------------------------
# Projection
# ---------------------------------------------------------------------------

def project_chain(v, gap, lo, hi, span=None):
    """Euclidean projection onto ``{x : x[0] >= lo, x[-1] <= hi, x[n+1] - x[n] >= gap,
    x[-1] - x[0] <= span}``.

    The gaps are removed by the shift ``y = x - gap * n``, after which the set
    is the monotone cone clipped to a box (pool-adjacent-violators followed by
    clipping); the optional span constraint is handled with a bisection on
    its multiplier.
    """
    v = np.asarray(v, dtype=float)
    if hi - gap * (v.size - 1) < lo - 1e-12:
        raise ValueError("empty chain polytope")
    return kern.project_chains(v, v.size, gap, lo, hi, np.inf if span is None else span)


def project_polytope(x, config: ArrayConfig, block: str) -> np.ndarray:
    """Projection onto the spacing and box constraints of a block."""
    x = np.asarray(x, dtype=float)
    if block == HEIGHTS:
        return kern.project_chains(x, x.size, config.z_th, 0.0, config.A)
    rho = config.rho
    span = rho * (TWO_PI - config.phi_th) if config.N > 1 else np.inf
    return kern.project_chains(x, config.N, rho * config.phi_th, 0.0, rho * TWO_PI, span)


@dataclass
class ProjectionResult:
    x: np.ndarray
    stalled: bool = False
    rounds: int = 0
    on_ball: bool = False


def _ball_project(zeta, center, radius2, poly, xtol=1e-14):
    """Project onto ``poly ∩ {||x - center||^2 <= radius2}``.

    The minimizer is ``poly((zeta + nu c) / (1 + nu))`` for the ball
    multiplier ``nu >= 0``; the distance to the centre is nonincreasing in
    ``nu``, so the active multiplier is bracketed and found with Brent's method.
    """
    def excess(nu):
        x = poly((zeta + nu * center) / (1.0 + nu))
        return float(np.sum((x - center) ** 2) - radius2), x

    e0, x = excess(0.0)
    if e0 <= radius2 * 1e-12:
        return x, False
    hi = 1.0
    while True:
        e_hi, x_hi = excess(hi)
        if e_hi <= 0.0:
            break
        hi *= 8.0
        if hi > 1e18:
            return None, True
    lo = hi / 8.0 if hi > 1.0 else 0.0
    if e_hi < 0.0:
        nu = optimize.brentq(lambda t: excess(t)[0], lo, hi, xtol=xtol, rtol=1e-13)
        # keep the feasible side of the root
        for _ in range(60):
            e, x = excess(nu)
            if e <= 0.0:
                return x, True
            nu = nu + max(abs(nu) * 1e-12, 1e-15) * 4.0 ** _
    return x_hi, True


def sca_project(zeta, xi_prev, prob: PlacementProblem, eve_geo: BlockGeometry, block: str,
                delta: float, max_rounds: int = 1, tol: float = 1e-12) -> ProjectionResult:
    """Project ``zeta`` onto the spacing polytope intersected with the secrecy set.

    Each round linearizes ``h_e^H Xi_e h_e`` at the latest feasible point ``xi_r``
    and replaces it by the concave minorant

        F(xi_r) + g^T (xi - xi_r) - delta/2 ||xi - xi_r||^2,

    whose super-level set is a ball.  Every round's output satisfies the true
    constraint whenever ``delta`` bounds the curvature, and later rounds
    refine the point towards the exact projection.
    """
    cfg = prob.scenario.config
    poly = lambda v: project_polytope(v, cfg, block)  # noqa: E731
    zeta = np.asarray(zeta, dtype=float)
    if not prob.secrecy_active:
        return ProjectionResult(poly(zeta))
    xr = np.asarray(xi_prev, dtype=float)
    Fr = prob.constraint(eve_geo, xr)
    if Fr < prob.con_rhs:
        return ProjectionResult(xr.copy(), stalled=True)
    result = None
    for r in range(max(1, max_rounds)):
        g = prob.constraint_grad(eve_geo, xr)
        center = xr + g / delta
        radius2 = 2.0 / delta * (Fr - prob.con_rhs) + g @ g / delta ** 2
        x, on_ball = _ball_project(zeta, center, radius2, poly)
        if x is None or prob.constraint(eve_geo, x) < prob.con_rhs:
            if result is None:
                return ProjectionResult(xr.copy(), stalled=True, rounds=r + 1)
            break
        moved = np.linalg.norm(x - xr) if result is not None else np.inf
        result = ProjectionResult(x, False, r + 1, on_ball)
        if not on_ball or moved <= tol * max(1.0, np.linalg.norm(x)):
            break
        xr, Fr = x, prob.constraint(eve_geo, x)
    return result


# ---------------------------------------------------------------------------
# Projected gradient ascent with momentum
# ---------------------------------------------------------------------------

@dataclass
class PgdOptions:
    """Step-size and stopping rules of the projected gradient ascent.

    ``tau0 = None`` starts every backtracking search at ``1/delta`` with
    ``delta`` the global curvature bound of the objective block.
    """

    max_iters: int = 50
    tau0: float | None = None
    shrink: float = 0.5
    armijo: float = 1e-4
    max_halvings: int = 30
    stall_tol: float = 1e-6
    max_sca_rounds: int = 1
    blocks: tuple = BLOCKS

    def __post_init__(self):
        if not 0.0 < self.shrink < 1.0:
            raise ValueError("shrink must lie in (0, 1)")
        if not 0.0 < self.armijo <= 0.5:
            raise ValueError("armijo must lie in (0, 0.5]")
        if self.max_iters < 1 or self.max_halvings < 1 or self.stall_tol <= 0 or self.max_sca_rounds < 1:
            raise ValueError("iteration counts and tolerances must be positive")
        if self.tau0 is not None and self.tau0 <= 0:
            raise ValueError("tau0 must be positive")
        for b in self.blocks:
            if b not in BLOCKS:
                raise ValueError(f"unknown block {b!r}")


@dataclass
class PgdTraceRow:
    block: str
    iteration: int
    step: float
    objective: float
    feasible: bool
    restarted: bool


@dataclass
class PgdTrace:
    rows: list = field(default_factory=list)
    events: list = field(default_factory=list)

    def add(self, *args):
        self.rows.append(PgdTraceRow(*args))


def _pgd_block(prob: PlacementProblem, placement: Placement, block: str, opts: PgdOptions,
               trace: PgdTrace) -> Placement:
    cfg = prob.scenario.config
    geo, eve_geo = prob.geometry(placement, block)
    x = block_coords(placement, cfg, block)
    if prob.secrecy_active and prob.constraint(eve_geo, x) < prob.con_rhs:
        trace.events.append((block, "secrecy set empty at start; block skipped"))
        return placement
    f = prob.objective(geo, x)
    delta_obj = prob.objective_delta(geo)
    delta_con = prob.constraint_delta(eve_geo)
    tau0 = opts.tau0 if opts.tau0 is not None else 1.0 / delta_obj
    x_prev = x.copy()
    iota = x.copy()
    q = 1.0
    for t in range(opts.max_iters):
        plain = np.array_equal(iota, x)
        g = prob.objective_grad(geo, iota)
        f_iota = f if plain else prob.objective(geo, iota)
        tau = tau0
        accepted = None
        for _ in range(opts.max_halvings + 1):
            res = sca_project(iota + tau * g, x, prob, eve_geo, block, delta_con, opts.max_sca_rounds)
            if not res.stalled:
                f_new = prob.objective(geo, res.x)
                if f_new >= f_iota + opts.armijo * (g @ (res.x - iota)) and f_new >= f:
                    accepted = (res.x, f_new)
                    break
            tau *= opts.shrink
        if accepted is None:
            if plain:
                trace.add(block, t, 0.0, f, True, False)
                break
            # momentum restart: retry from the last accepted point
            iota, q = x.copy(), 1.0
            trace.add(block, t, 0.0, f, True, True)
            continue
        x_prev, x = x, accepted[0]
        f = accepted[1]
        trace.add(block, t, tau, f, True, False)
        if np.linalg.norm(x - x_prev) < opts.stall_tol:
            break
        q_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * q * q))
        alpha = (q_next - 1.0) / q_next
        q = q_next
        iota = x + alpha * (x - x_prev)
    return with_block_coords(placement, cfg, block, x)


def pgd_optimize(placement: Placement, scenario: Scenario, sol: BeamSolution, eta, varpi,
                 options: PgdOptions | None = None):
    """Update the enabled blocks in turn; returns ``(placement, trace)``.

    The returned placement satisfies the spacing/box constraints and, when
    the input did, the secrecy constraint; the placement objective never
    decreases.
    """
    opts = options or PgdOptions()
    prob = PlacementProblem(scenario, sol, eta, varpi)
    trace = PgdTrace()
    current = placement
    for block in opts.blocks:
        current = _pgd_block(prob, current, block, opts, trace)
    return current, trace

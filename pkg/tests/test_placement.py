import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fcla import fp, placement as plc
from fcla.channel import channel_vector, channels
from fcla.metrics import BeamSolution
from fcla.scenario import ArrayConfig, PathSet, Placement, Scenario, validate_placement

from conftest import random_beams, random_paths, random_placement, random_scenario


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def aligned_beams(rng, s, pl, an=True):
    """Random beams rotated so that every h_k^H w_k is real and positive at ``pl``."""
    sol = random_beams(rng, s.config.n_antennas, s.K, P=s.P, an=an)
    H = channels(s, pl).ir
    g = np.einsum("ki,ik->k", H.conj(), sol.W)
    return BeamSolution(sol.W * (np.conj(g) / np.abs(g))[None, :], sol.R_e)


def random_state(seed, M=2, N=2, K=2):
    rng = np.random.default_rng(seed)
    s = random_scenario(rng, M=M, N=N, K=K, A=0.6)
    pl = random_placement(rng, s.config)
    sol = aligned_beams(rng, s, pl)
    ch = channels(s, pl)
    eta = fp.update_eta(ch.ir, sol, s.sigma2_ir)
    varpi = fp.update_varpi(ch.ir, sol, s.sigma2_ir, eta)
    return s, pl, sol, eta, varpi


def shifted(pl, cfg, block, i, h):
    x = plc.block_coords(pl, cfg, block)
    x[i] += h
    return plc.with_block_coords(pl, cfg, block, x)


def fd_grad(f, pl, cfg, block, h=1e-6):
    n = plc.block_coords(pl, cfg, block).size
    return np.array([(f(shifted(pl, cfg, block, i, h)) - f(shifted(pl, cfg, block, i, -h))) / (2 * h)
                     for i in range(n)])


def ib_at(s, sol, eta, varpi):
    return lambda p: fp.eval_Ib(channels(s, p).ir, sol, s.sigma2_ir, eta, varpi)


def fee_at(s, sol):
    _, Xi_e = plc.build_xi_matrices(sol, s.Gamma_th_e)
    return lambda p: float(np.real(np.vdot(channels(s, p).eve, Xi_e @ channels(s, p).eve)))


# ---------------------------------------------------------------------------
# Xi matrices and expansions
# ---------------------------------------------------------------------------

def test_xi_zero_beams_identity_an():
    sol = BeamSolution(np.zeros((3, 2)), np.eye(3))
    Xi_s, Xi_e = plc.build_xi_matrices(sol, 0.7)
    np.testing.assert_allclose(Xi_s, np.eye(3))
    np.testing.assert_allclose(Xi_e, 0.7 * np.eye(3))


def test_xi_single_user(rng):
    w = rng.standard_normal((3, 1)) + 1j * rng.standard_normal((3, 1))
    _, Xi_e = plc.build_xi_matrices(BeamSolution(w, np.zeros((3, 3))), 2.0)
    np.testing.assert_allclose(Xi_e, -np.outer(w[:, 0], w[:, 0].conj()))
    assert np.max(np.linalg.eigvalsh(Xi_e)) <= 1e-12
    assert np.linalg.matrix_rank(Xi_e) == 1


def test_xi_term_by_term(rng):
    sol = random_beams(rng, 4, 3)
    G = 0.3
    Xi_s, Xi_e = plc.build_xi_matrices(sol, G)
    W, R = sol.W, sol.R_e
    es = R.copy()
    ee = G * R.copy()
    for k in range(3):
        o = np.outer(W[:, k], W[:, k].conj())
        es += o
        ee += G * o if k > 0 else -o
    np.testing.assert_allclose(Xi_s, es, atol=1e-14)
    np.testing.assert_allclose(Xi_e, ee, atol=1e-14)
    assert np.min(np.linalg.eigvalsh(Xi_s)) >= -1e-12


@given(st.integers(0, 2 ** 31), st.sampled_from(plc.BLOCKS))
def test_expansion_fidelity(seed, block):
    rng = np.random.default_rng(seed)
    cfg = ArrayConfig(2, 3, 0.1)
    paths = random_paths(rng, 3)
    pl = random_placement(rng, cfg)
    sol = random_beams(rng, cfg.n_antennas, 2)
    h = channel_vector(pl, paths, cfg)
    table = plc.PathTable.from_paths([paths])
    geo = plc.BlockGeometry(pl, cfg, table, block)
    psi = geo.phases(plc.block_coords(pl, cfg, block))
    Xi_s, Xi_e = plc.build_xi_matrices(sol, 0.4)
    for Xi in (Xi_s, Xi_e):
        direct = np.real(np.vdot(h, Xi @ h))
        exp = plc.QuadExpansion.from_quadratic(paths.beta, Xi).value(psi)
        assert exp == pytest.approx(direct, rel=1e-9, abs=1e-12 * np.abs(Xi).sum())
    lin = plc.LinExpansion.from_beam(paths.beta, sol.W[:, 0]).value(psi)
    assert lin == pytest.approx(np.real(np.vdot(h, sol.W[:, 0])), rel=1e-9, abs=1e-12)


# ---------------------------------------------------------------------------
# gradients and Hessians
# ---------------------------------------------------------------------------

def test_angle_gradient_vanishes_for_vertical_path(rng):
    cfg = ArrayConfig(2, 2, 0.1)
    vert = lambda: PathSet([0.0], [0.0], [rng.standard_normal() + 1j])  # noqa: E731
    s = Scenario(cfg, (vert(), vert()), vert(), [0.1, 0.1], 0.1, 1.0, 0.5)
    pl = random_placement(rng, cfg)
    sol = random_beams(rng, 4, 2)
    g = plc.grad_objective(s, pl, sol, np.ones(2), np.ones(2), plc.ANGLES)
    np.testing.assert_allclose(g, 0.0, atol=1e-14)
    np.testing.assert_allclose(plc.hessian_Fee(s, pl, sol, plc.ANGLES), 0.0, atol=1e-14)


def test_height_gradient_single_term(rng):
    # one ring, one element, one user, one path: d/dz of 2 a varpi Re{h^H w}
    cfg = ArrayConfig(1, 1, 0.1, A=0.5)
    th = 1.0
    beta = 0.7 - 0.2j
    s = Scenario(cfg, (PathSet([th], [0.4], [beta]),), PathSet([th], [0.4], [1.0]), [0.1], 0.1, 1.0, np.inf)
    pl = Placement([[0.3]], [0.2])
    w = np.array([[0.5 + 0.5j]])
    sol = BeamSolution(w, np.zeros((1, 1)))
    eta, varpi = np.array([0.8]), np.array([1.3])
    psi = plc.BlockGeometry(pl, cfg, plc.PathTable.from_paths([s.ir_paths[0]]), plc.HEIGHTS).phases(pl.z)
    kap = np.angle(beta) + np.angle(w[0, 0]) + psi[0, 0]
    expected = -2 * (1 + eta[0]) * varpi[0] * (2 * np.pi / 0.1) * np.cos(th) * abs(beta) * abs(w[0, 0]) * np.sin(kap)
    g = plc.grad_objective(s, pl, sol, eta, varpi, plc.HEIGHTS)
    assert g[0] == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("seed", range(6))
@pytest.mark.parametrize("block", plc.BLOCKS)
def test_gradient_matches_finite_differences(seed, block):
    s, pl, sol, eta, varpi = random_state(seed)
    g = plc.grad_objective(s, pl, sol, eta, varpi, block)
    fd = fd_grad(ib_at(s, sol, eta, varpi), pl, s.config, block)
    np.testing.assert_allclose(g, fd, rtol=1e-5)


@pytest.mark.parametrize("block", plc.BLOCKS)
def test_objective_expansion_matches_channel_form(block):
    s, pl, sol, eta, varpi = random_state(3, M=3, N=2, K=3)
    prob = plc.PlacementProblem(s, sol, eta, varpi)
    geo, _ = prob.geometry(pl, block)
    x = plc.block_coords(pl, s.config, block)
    assert prob.objective(geo, x) == pytest.approx(plc.placement_objective(s, pl, sol, eta, varpi), rel=1e-9)


def test_hessian_one_by_one():
    rng = np.random.default_rng(5)
    cfg = ArrayConfig(1, 1, 0.1, A=0.4)
    s = Scenario(cfg, (random_paths(rng, 1),), random_paths(rng, 3), [0.1], 0.1, 1.0, 0.5)
    pl = Placement([[1.0]], [0.2])
    sol = BeamSolution(np.array([[0.6 + 0.1j]]), np.array([[0.3]]))
    f = fee_at(s, sol)
    h = 1e-4
    for block in plc.BLOCKS:
        H = plc.hessian_Fee(s, pl, sol, block)
        second = (f(shifted(pl, cfg, block, 0, h)) - 2 * f(pl) + f(shifted(pl, cfg, block, 0, -h))) / h ** 2
        assert H[0, 0] == pytest.approx(second, rel=1e-4)


@pytest.mark.parametrize("seed", range(3))
@pytest.mark.parametrize("block", plc.BLOCKS)
def test_hessian_symmetric_and_matches_fd_of_gradient(seed, block):
    s, pl, sol, eta, varpi = random_state(seed, M=2, N=2)
    H = plc.hessian_Fee(s, pl, sol, block)
    np.testing.assert_allclose(H, H.T, atol=1e-12 * np.abs(H).max())
    prob = plc.PlacementProblem(s, sol, eta, varpi)
    _, geo = prob.geometry(pl, block)
    x = plc.block_coords(pl, s.config, block)
    h = 1e-6
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        cols.append((prob.constraint_grad(geo, x + e) - prob.constraint_grad(geo, x - e)) / (2 * h))
    np.testing.assert_allclose(H, np.array(cols).T, rtol=1e-5, atol=1e-7 * np.abs(H).max())


# ---------------------------------------------------------------------------
# curvature bound and surrogate
# ---------------------------------------------------------------------------

def test_delta_floor_for_zero_xi(rng):
    cfg = ArrayConfig(2, 2, 0.1)
    geo = plc.BlockGeometry(random_placement(rng, cfg), cfg, plc.PathTable.from_paths([random_paths(rng)]),
                            plc.ANGLES)
    exp = plc.QuadExpansion.from_quadratic(random_paths(rng).beta, np.zeros((4, 4)))
    assert plc.spectral_bound_delta(exp, geo) == plc.DELTA_FLOOR


def test_delta_single_cosine():
    cfg = ArrayConfig(1, 1, 0.1, A=0.5)
    th = 0.8
    paths = PathSet([th], [0.0], [1.5])
    geo = plc.BlockGeometry(Placement([[0.0]], [0.1]), cfg, plc.PathTable.from_paths([paths]), plc.HEIGHTS)
    exp = plc.LinExpansion.from_beam(paths.beta, np.array([2.0]))
    a, c = 3.0, 2 * np.pi / 0.1 * np.cos(th)
    assert plc.spectral_bound_delta(exp, geo) == pytest.approx(a * c * c, rel=1e-12)


@pytest.mark.parametrize("block", plc.BLOCKS)
def test_delta_bounds_sampled_hessians(block):
    rng = np.random.default_rng(7)
    s, pl, sol, eta, varpi = random_state(7, M=3, N=2, K=2)
    prob = plc.PlacementProblem(s, sol, eta, varpi)
    _, geo0 = prob.geometry(pl, block)
    delta = prob.constraint_delta(geo0)
    worst = 0.0
    for _ in range(100):
        q = random_placement(rng, s.config)
        _, geo = prob.geometry(q if block == plc.ANGLES else q.with_phi(pl.phi), block)
        H = prob.constraint_hess(geo, plc.block_coords(q, s.config, block))
        worst = max(worst, np.max(np.abs(np.linalg.eigvalsh(H))))
    assert delta >= worst


@pytest.mark.parametrize("block", plc.BLOCKS)
def test_surrogate_minorizes_constraint(block):
    rng = np.random.default_rng(8)
    s, pl, sol, eta, varpi = random_state(8, M=3, N=2, K=2)
    prob = plc.PlacementProblem(s, sol, eta, varpi)
    _, geo = prob.geometry(pl, block)
    delta = prob.constraint_delta(geo)
    for _ in range(5):
        xr = plc.block_coords(random_placement(rng, s.config), s.config, block)
        Fr, g = prob.constraint(geo, xr), prob.constraint_grad(geo, xr)
        for _ in range(20):
            x = plc.block_coords(random_placement(rng, s.config), s.config, block)
            lb = Fr + g @ (x - xr) - 0.5 * delta * np.sum((x - xr) ** 2)
            assert lb <= prob.constraint(geo, x) + 1e-12 * abs(Fr)


# ---------------------------------------------------------------------------
# projection
# ---------------------------------------------------------------------------

def _brute_force_chain(v, gap, lo, hi):
    """Projection onto lo <= x0, x_{n+1} - x_n >= gap, x_last <= hi by active-set enumeration."""
    n = v.size
    rows, rhs = [], []
    e = np.eye(n)
    rows.append(e[0]); rhs.append(lo)
    for i in range(n - 1):
        rows.append(e[i + 1] - e[i]); rhs.append(gap)
    rows.append(-e[-1]); rhs.append(-hi)
    C, d = np.array(rows), np.array(rhs)
    best, best_val = None, np.inf
    for r in range(len(rows) + 1):
        for act in itertools.combinations(range(len(rows)), r):
            if act:
                Ca = C[list(act)]
                if np.linalg.matrix_rank(Ca) < len(act):
                    continue
                lam = np.linalg.solve(Ca @ Ca.T, d[list(act)] - Ca @ v)
                x = v + Ca.T @ lam
            else:
                x = v.copy()
            if np.all(C @ x >= d - 1e-12):
                val = np.sum((x - v) ** 2)
                if val < best_val:
                    best, best_val = x, val
    return best


@given(st.lists(st.floats(-1, 2), min_size=3, max_size=3))
def test_height_projection_matches_qp_oracle(vals):
    cfg = ArrayConfig(3, 2, 0.1, A=0.6)
    v = np.array(vals)
    x = plc.project_polytope(v, cfg, plc.HEIGHTS)
    np.testing.assert_allclose(x, _brute_force_chain(v, cfg.z_th, 0.0, cfg.A), atol=1e-10)


def test_feasible_point_projects_to_itself(rng):
    s, pl, sol, eta, varpi = random_state(1, M=3, N=2)
    prob = plc.PlacementProblem(s, sol, eta, varpi)
    for block in plc.BLOCKS:
        _, geo = prob.geometry(pl, block)
        x = plc.block_coords(pl, s.config, block)
        if prob.constraint(geo, x) < prob.con_rhs:
            continue
        res = plc.sca_project(x, x, prob, geo, block, prob.constraint_delta(geo))
        np.testing.assert_allclose(res.x, x, atol=1e-12)
        assert not res.stalled


def test_ball_projection_bisection_oracle():
    zeta = np.array([0.9, 0.1, 0.4])
    center = np.array([0.2, 0.2, 0.2])
    r2 = 0.05
    ident = lambda v: np.asarray(v, float)  # noqa: E731
    x, on_ball = plc._ball_project(zeta, center, r2, ident)
    assert on_ball
    assert np.sum((x - center) ** 2) == pytest.approx(r2, rel=1e-6)
    # KKT: x - zeta + nu (x - center) = 0 with nu >= 0, nu by bisection on the radius
    lo, hi = 0.0, 1e6
    for _ in range(200):
        nu = 0.5 * (lo + hi)
        y = (zeta + nu * center) / (1 + nu)
        if np.sum((y - center) ** 2) > r2:
            lo = nu
        else:
            hi = nu
    kkt = x - zeta + nu * (x - center)
    assert np.linalg.norm(kkt) < 1e-6
    np.testing.assert_allclose(x, y, atol=1e-6)


def test_angle_polytope_projection_is_feasible(rng):
    cfg = ArrayConfig(2, 3, 0.1)
    for _ in range(50):
        x = rng.uniform(-0.1, 0.8, cfg.n_antennas)
        y = plc.project_polytope(x, cfg, plc.ANGLES)
        pl = Placement((y / cfg.rho).reshape(2, 3), [0.0, 0.3])
        rep = validate_placement(cfg, pl, tol=1e-12)
        assert rep.feasible, rep.violations
        # idempotent
        np.testing.assert_allclose(plc.project_polytope(y, cfg, plc.ANGLES), y, atol=1e-12)


# ---------------------------------------------------------------------------
# PGD
# ---------------------------------------------------------------------------

def test_pgd_zero_gradient_returns_input(rng):
    cfg = ArrayConfig(1, 2, 0.1)
    vert = lambda: PathSet([0.0], [0.0], [1.0 + 0.5j])  # noqa: E731
    s = Scenario(cfg, (vert(),), vert(), [0.1], 0.1, 1.0, 0.5)
    pl = Placement([[0.2, 0.2 + np.pi]], [0.3])
    sol = BeamSolution(np.array([[0.3], [0.2j]]), 0.1 * np.eye(2))
    out, _ = plc.pgd_optimize(pl, s, sol, np.ones(1), np.ones(1), plc.PgdOptions(blocks=(plc.ANGLES,)))
    np.testing.assert_array_equal(out.phi, pl.phi)
    np.testing.assert_array_equal(out.z, pl.z)


def single_antenna_case(seed):
    rng = np.random.default_rng(seed)
    cfg = ArrayConfig(1, 1, 0.1, A=0.2)
    ps = PathSet([rng.uniform(np.pi / 6, 5 * np.pi / 6)], [rng.uniform(0, 2 * np.pi)],
                 [rng.standard_normal() + 1j * rng.standard_normal()])
    eve = PathSet([rng.uniform(0.5, 2.5)], [rng.uniform(0, 6)], [1.0 + 0j])
    s = Scenario(cfg, (ps,), eve, [0.5], 0.5, 1.0, 1.0)
    sol = BeamSolution(np.array([[0.3 * np.exp(1j * rng.uniform(0, 6))]]), np.zeros((1, 1)))
    return s, sol, np.array([rng.uniform(0.5, 2)]), np.array([rng.uniform(0.5, 2)])


def grid_and_pgd(seed, n_grid=100_000, n_starts=16):
    s, sol, eta, varpi = single_antenna_case(seed)
    prob = plc.PlacementProblem(s, sol, eta, varpi)
    start = Placement([[0.0]], [0.1])
    geo, _ = prob.geometry(start, plc.ANGLES)
    rho = s.config.rho
    grid = np.linspace(0, 2 * np.pi, n_grid)
    vals = np.array([prob.objective(geo, np.array([rho * p])) for p in grid])
    best = None
    for phi0 in np.linspace(0, 2 * np.pi, n_starts, endpoint=False):
        out, _ = plc.pgd_optimize(start.with_phi([[phi0]]), s, sol, eta, varpi,
                                  plc.PgdOptions(blocks=(plc.ANGLES,), max_iters=200))
        f = prob.objective(geo, np.array([rho * out.phi[0, 0]]))
        if best is None or f > best[0]:
            best = (f, out.phi[0, 0])
    # curvature bound converts the grid spacing into a value resolution
    d = grid[1] - grid[0]
    lip2 = prob.objective_delta(geo) * rho ** 2
    return best, grid, vals, d, lip2


@pytest.mark.parametrize("seed", range(3))
def test_pgd_single_antenna_grid_oracle(seed):
    (f, phi), grid, vals, d, lip2 = grid_and_pgd(seed)
    assert f >= vals.max() - 1e-12 * abs(vals.max())
    assert f <= vals.max() + 0.5 * lip2 * d ** 2
    near = grid[vals >= f - 0.5 * lip2 * d ** 2]
    assert np.min(np.abs(np.angle(np.exp(1j * (near - phi))))) <= d


@pytest.mark.parametrize("seed", range(3))
def test_pgd_monotone_and_feasible(seed):
    from fcla.metrics import audit
    from fcla.scenario import initial_placement, sample_scenario
    from fcla.bcd import initialize_beams
    s = sample_scenario(seed)
    pl = initial_placement(s.config)
    ch = channels(s, pl)
    sol = initialize_beams(s, ch)
    eta = fp.update_eta(ch.ir, sol, s.sigma2_ir)
    varpi = fp.update_varpi(ch.ir, sol, s.sigma2_ir, eta)
    f0 = plc.placement_objective(s, pl, sol, eta, varpi)
    out, trace = plc.pgd_optimize(pl, s, sol, eta, varpi)
    f1 = plc.placement_objective(s, out, sol, eta, varpi)
    assert f1 >= f0 - 1e-8 * max(1.0, abs(f0))
    assert validate_placement(s.config, out, tol=1e-12).feasible
    aud = audit(s, out, sol)
    assert aud.secrecy_residual >= -1e-6
    objs = [r.objective for r in trace.rows]
    for blk in plc.BLOCKS:
        seq = [r.objective for r in trace.rows if r.block == blk]
        assert all(b >= a - 1e-9 * max(1.0, abs(a)) for a, b in zip(seq, seq[1:]))
    assert objs


def test_pgd_options_validation():
    for bad in (dict(shrink=1.0), dict(armijo=0.6), dict(max_iters=0), dict(tau0=-1.0), dict(blocks=("x",))):
        with pytest.raises(ValueError):
            plc.PgdOptions(**bad)

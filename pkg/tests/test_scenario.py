import numpy as np
import pytest
from hypothesis import given, strategies as st

from fcla import scenario as scn
from fcla.scenario import ArrayConfig, Placement, SamplingParams


def test_sample_defaults_seed7():
    s = scn.sample_scenario(7)
    assert s.K == 3
    assert all(ps.L == 4 for ps in s.ir_paths) and s.eve_paths.L == 4
    assert np.all((s.distances >= 30.0) & (s.distances <= 50.0))
    np.testing.assert_allclose(s.path_variance, 1e-3 * s.distances ** -2.3 / 4, rtol=1e-12)
    for ps in s.ir_paths + (s.eve_paths,):
        assert np.all((ps.theta >= np.pi / 6) & (ps.theta <= 5 * np.pi / 6))
        assert np.all((ps.phi_az >= 0) & (ps.phi_az <= 2 * np.pi))
    assert s.P == pytest.approx(10 ** 0.3)
    np.testing.assert_allclose(s.sigma2_ir, 1e-12)


def test_sample_is_deterministic():
    a, b = scn.sample_scenario(7), scn.sample_scenario(7)
    assert scn.scenario_records(a).keys() == scn.scenario_records(b).keys()
    for k, v in scn.scenario_records(a).items():
        np.testing.assert_array_equal(np.asarray(v), np.asarray(scn.scenario_records(b)[k]))
    c = scn.sample_scenario(8)
    assert not np.array_equal(a.ir_paths[0].beta, c.ir_paths[0].beta)


def test_zero_radius_disk():
    s = scn.sample_scenario(3, SamplingParams(disk_radius=0.0))
    np.testing.assert_allclose(s.distances, 40.0)
    np.testing.assert_allclose(s.path_variance, 10 ** -3 * 40.0 ** -2.3 / 4, rtol=1e-12)


def test_gain_variance_matches_formula():
    # empirical variance of many draws at a fixed distance
    p = SamplingParams(disk_radius=0.0, K=1, L=50)
    betas = np.concatenate([scn.sample_scenario(s, p).ir_paths[0].beta for s in range(200)])
    target = 10 ** -3 * 40.0 ** -2.3 / 50
    assert np.mean(np.abs(betas) ** 2) == pytest.approx(target, rel=0.1)


@pytest.mark.parametrize("bad", [dict(K=0), dict(disk_radius=-1.0), dict(L=0)])
def test_sample_rejects_invalid(bad):
    with pytest.raises(ValueError):
        scn.sample_scenario(0, SamplingParams(**bad))


def test_gamma_linear_is_derived():
    s = scn.sample_scenario(0)
    assert s.Gamma_th_e == pytest.approx(2 ** s.gamma_th_e - 1, rel=1e-14)
    assert s.Gamma_th_e == pytest.approx(0.1, rel=1e-12)
    t = s.replace(gamma_th_e=2.0)
    assert t.Gamma_th_e == pytest.approx(3.0)
    assert s.replace(gamma_th_e=np.inf).Gamma_th_e == np.inf


@given(st.floats(0, 30, allow_nan=False))
def test_gamma_identity_property(g):
    s = scn.sample_scenario(0).replace(gamma_th_e=g)
    assert s.Gamma_th_e == pytest.approx(2.0 ** g - 1.0, rel=1e-12, abs=1e-15)


def test_uniform_layout_is_feasible():
    cfg = ArrayConfig(3, 4, 0.1)
    phi = np.tile(2 * np.pi * np.arange(4) / 4, (3, 1))
    z = np.arange(3) * cfg.z_th
    assert scn.validate_placement(cfg, Placement(phi, z)).feasible


def test_equal_angles_violate_gap():
    cfg = ArrayConfig(1, 3, 0.1)
    phi = np.array([[0.0, 1.0, 1.0]])
    rep = scn.validate_placement(cfg, Placement(phi, [0.0]))
    gaps = [v for v in rep.violations if v[0] == "angle_gap"]
    assert len(gaps) == 1
    assert gaps[0][2] == pytest.approx(-cfg.phi_th)


def test_height_gap_violation():
    cfg = ArrayConfig(3, 2, 0.1)
    zt = cfg.z_th
    phi = np.tile([0.0, np.pi], (3, 1))
    rep = scn.validate_placement(cfg, Placement(phi, [0.0, zt / 2, zt]))
    hv = [v for v in rep.violations if v[0] == "height_gap"]
    assert [v[1] for v in hv] == [(0,), (1,)]
    assert hv[0][2] == pytest.approx(-zt / 2)


def test_validate_dimension_mismatch():
    with pytest.raises(ValueError):
        scn.validate_placement(ArrayConfig(2, 2), Placement(np.zeros((3, 2)), np.zeros(3)))


def test_initial_placement_single_ring():
    cfg = ArrayConfig(1, 4, 0.1, A=0.0)
    pl = scn.initial_placement(cfg)
    off = np.pi / 4
    np.testing.assert_allclose(pl.phi, [[off, off + np.pi / 2, off + np.pi, off + 1.5 * np.pi]])
    np.testing.assert_allclose(pl.z, [0.0])


def test_initial_placement_heights():
    pl = scn.initial_placement(ArrayConfig(3, 2, 0.1, A=0.6))
    np.testing.assert_allclose(pl.z, [0.0, 0.3, 0.6])


def test_initial_placement_infeasible_angles():
    with pytest.raises(ValueError):
        scn.initial_placement(ArrayConfig(2, 3, 0.1, phi_th=2 * np.pi / 3 + 1e-3))


@given(st.integers(1, 5), st.integers(1, 6), st.floats(0.05, 1.0), st.floats(1.0, 10.0))
def test_initial_placement_always_feasible(M, N, lam, a_over_lam):
    z_th = lam / 2
    A = max(a_over_lam * lam, (M - 1) * z_th)
    cfg = ArrayConfig(M, N, lam, A=A)
    rep = scn.validate_placement(cfg, scn.initial_placement(cfg), tol=1e-12)
    assert rep.feasible, rep.violations


def test_config_defaults():
    cfg = ArrayConfig()
    assert cfg.rho == pytest.approx(0.1)
    chord = 2 * cfg.rho * np.sin(cfg.phi_th / 2)
    assert chord == pytest.approx(cfg.wavelength / 2)
    assert cfg.A == pytest.approx(0.6) and cfg.z_th == pytest.approx(0.05)


def test_antenna_index_order():
    pl = Placement(np.arange(6.0).reshape(3, 2), [0.0, 1.0, 2.0])
    assert scn.antenna_index(1, 1, 2) == 3
    assert pl.phi.ravel()[scn.antenna_index(2, 0, 2)] == pl.phi[2, 0]
    np.testing.assert_array_equal(pl.antenna_heights(), [0, 0, 1, 1, 2, 2])


def test_scenario_file_roundtrip(tmp_path):
    s = scn.sample_scenario(11)
    path = tmp_path / "s.kv"
    scn.save_scenario(path, s)
    t = scn.load_scenario(path)
    assert t.config == s.config and t.P == s.P and t.gamma_th_e == s.gamma_th_e
    for a, b in zip(s.ir_paths + (s.eve_paths,), t.ir_paths + (t.eve_paths,)):
        np.testing.assert_array_equal(a.beta, b.beta)
        np.testing.assert_array_equal(a.theta, b.theta)


def test_pathset_rejects_bad_angles():
    with pytest.raises(ValueError):
        scn.PathSet([4.0], [0.0], [1.0])
    with pytest.raises(ValueError):
        scn.PathSet([0.1, 0.2], [0.0], [1.0])

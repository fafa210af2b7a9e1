"""Stability machinery: M_d reduction, Schur checks, decay fits, batteries."""

import numpy as np
import pytest

from memax import (
    DrudeLorentzParams,
    LinearProblem,
    ModDLParams,
    NotCertified,
    PiecewiseMaterial,
    TimeGrid,
    WeightedSignal,
    build_Md,
    capability_matrix,
    certify_decay_rate,
    conductivity_law,
    dl_law,
    fit_decay_rate,
    make_divergence_free_data,
    md_from_scalar_law,
    mod_dl_law,
    poincare_constant,
    projection_invertibility_check,
    render_capability_table,
    schur_accretivity_check,
    simulate_decay,
    smooth_pulse,
    solve_linear,
    stack_rhs,
    verify_first_order_estimates,
)
from memax.materials import accretivity_scan, hermitian_min


@pytest.fixture(scope="module")
def sigma_min_B(bundle4_module, basis4_module):
    s2 = projection_invertibility_check(bundle4_module, basis4_module,
                                        np.ones(bundle4_module.n_faces))
    return float(np.sqrt(s2))


@pytest.fixture(scope="module")
def bundle4_module():
    from memax import YeeGrid, build_curl_pair

    return build_curl_pair(YeeGrid((1.0, 1.0, 1.0), (4, 4, 4), 3, 2))


@pytest.fixture(scope="module")
def basis4_module(bundle4_module):
    from memax import helmholtz_projections

    return helmholtz_projections(bundle4_module)


@pytest.fixture(scope="module")
def mod_cert(sigma_min_B):
    law = mod_dl_law(ModDLParams(DrudeLorentzParams(1.0, [(1.0, 1.0, 2.0)]), 4.0))
    return certify_decay_rate([law], [1.0], sigma_min_B)


class TestMd:
    def test_d_zero_is_block_diag(self):
        law = mod_dl_law(ModDLParams(DrudeLorentzParams(1.0, [(1.0, 1.0, 2.0)]), 4.0))
        md = md_from_scalar_law(law, 1.0, 2.0, d=0.0)
        z = 0.4 + 1.3j
        M = md(z)
        assert abs(M[0, 0] - law(z)) < 1e-12
        assert abs(M[1, 1] - 1.0) < 1e-12
        assert M[0, 1] == 0.0 and M[1, 0] == 0.0

    def test_small_d_inherits_margin(self, sigma_min_B):
        law = mod_dl_law(ModDLParams(DrudeLorentzParams(1.0, [(1.0, 1.0, 2.0)]), 4.0))
        nu = 0.02
        base = accretivity_scan(law, nu=nu, delta_exclusion=1.0)
        assert base.c_min > 0
        md = md_from_scalar_law(law, 1.0, sigma_min_B, d=1.5 * nu)
        scan = accretivity_scan(md, nu=nu, delta_exclusion=1.0, t_max=1e3,
                                n_nu=9, n_t=150, nu_hi=5.0, condition_id="Md")
        assert scan.c_min > 0
        assert scan.c_min <= base.c_min + 1e-9  # inherited, not improved

    def test_vectorized_herm_min_matches_dense(self):
        law = mod_dl_law(ModDLParams(DrudeLorentzParams(1.0, [(1.0, 1.0, 2.0)]), 4.0))
        md = md_from_scalar_law(law, 1.0, 3.0, d=0.05)
        rng = np.random.default_rng(0)
        zs = rng.standard_normal(50) * 2 + 1j * rng.standard_normal(50) * 5
        zs = zs[np.abs(zs) > 0.2]
        fast = md.herm_min_vec(zs)
        slow = np.array([hermitian_min(z * md(z)) for z in zs])
        assert np.abs(fast - slow).max() < 1e-10

    def test_m1_must_vanish_at_zero(self):
        with pytest.raises(ValueError, match="vanish"):
            build_Md(lambda z: np.ones_like(z),
                     lambda z: np.ones_like(z), 1.0, 0.1)


class TestSchurCheck:
    def test_scaled_identity(self):
        m11, ms = schur_accretivity_check(0.7 * np.eye(6), 3)
        assert m11 == pytest.approx(0.7, abs=1e-14)
        assert ms == pytest.approx(0.7, abs=1e-14)

    def test_block_diagonal_reduces_to_T00(self, rng):
        A = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
        A = A + (1.0 - hermitian_min(A)) * np.eye(3)
        T = np.zeros((6, 6), dtype=complex)
        T[:3, :3] = A
        T[3:, 3:] = 2.0 * np.eye(3)
        _, ms = schur_accretivity_check(T, 3)
        assert ms == pytest.approx(hermitian_min(A), abs=1e-12)

    def test_random_batch_200(self, rng):
        # acceptance-grade batch: Hermitian part >= d implies both margins
        d = 0.4
        for _ in range(200):
            n = rng.integers(4, 10)
            split = rng.integers(1, n)
            T = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
            T = T + (d - hermitian_min(T)) * np.eye(n)
            m11, ms = schur_accretivity_check(T, split)
            assert m11 >= d - 1e-10
            assert ms >= d - 1e-10


class TestProjectionInvertibility:
    def test_identity_weight_matches_poincare(self, bundle4_module, basis4_module):
        s2 = projection_invertibility_check(bundle4_module, basis4_module,
                                            np.ones(bundle4_module.n_faces))
        sigma = 1.0 / poincare_constant(bundle4_module, basis4_module)
        assert s2 == pytest.approx(sigma ** 2, rel=1e-10)

    def test_scaling(self, bundle4_module, basis4_module):
        s2 = projection_invertibility_check(bundle4_module, basis4_module,
                                            np.ones(bundle4_module.n_faces))
        s2x4 = projection_invertibility_check(bundle4_module, basis4_module,
                                              4.0 * np.ones(bundle4_module.n_faces))
        assert s2x4 == pytest.approx(4.0 * s2, rel=1e-10)

    def test_indefinite_weight_rejected(self, bundle4_module, basis4_module):
        w = np.ones(bundle4_module.n_faces)
        w[0] = -1.0
        with pytest.raises(ValueError, match="positive"):
            projection_invertibility_check(bundle4_module, basis4_module, w)


class TestCertification:
    def test_plain_dl_refused(self, sigma_min_B):
        law = dl_law(DrudeLorentzParams(1.0, [(1.0, 1.0, 2.0)]))
        cert = certify_decay_rate([law], [1.0], sigma_min_B)
        assert not cert.certified
        assert cert.nu0 == 0.0
        assert "no strict accretivity" in cert.reason

    def test_mod_dl_certified(self, mod_cert):
        assert mod_cert.certified
        assert mod_cert.nu0 > 0.01
        assert mod_cert.c > 0 and mod_cert.c1 > 0
        assert mod_cert.nu0 < mod_cert.d0  # identity block needs d > nu
        assert mod_cert.disk_sup < mod_cert.sigma_min_B

    def test_margin_requirement(self, mod_cert):
        # 2 gamma r - omega0^2 > 0 is the analytic prerequisite
        assert ModDLParams(DrudeLorentzParams(1.0, [(1.0, 1.0, 2.0)]), 4.0).accretivity_margin() > 0

    def test_conductivity_route(self, sigma_min_B):
        law = conductivity_law(dl_law(DrudeLorentzParams(1.0, [(0.2, 1.0, 2.0)])), 0.5)
        cert = certify_decay_rate([law], [1.0], sigma_min_B)
        assert cert.certified
        assert cert.nu0 > 0.05
        assert any(k.startswith("M4") for k in cert.scans)

    def test_certificate_serializes(self, mod_cert):
        d = mod_cert.to_dict()
        assert d["certified"] is True
        assert "M2_law0" in d["scans"]


DEC_GRID = TimeGrid(-4.0, 0.25, 1024)


class TestDecay:
    def test_divergence_free_data_exact(self, bundle4_module, basis4_module, rng):
        Phi, Psi = make_divergence_free_data(bundle4_module, DEC_GRID, -0.02,
                                             seed=3, t_on=0.0, t_off=2.0)
        # E-side divergence: dual gradient pairing vanishes mimetically
        div_e = (bundle4_module.G0.T @ Phi.values.T)
        assert np.abs(div_e).max() < 1e-12
        div_h = (bundle4_module.D @ Psi.values.T)
        assert np.abs(div_h).max() < 1e-12
        # kernel projections vanish
        assert np.abs(basis4_module.pi0(Phi.values)).max() < 1e-10
        assert np.abs(basis4_module.pi1(Psi.values)).max() < 1e-10

    def test_decay_fit_and_rate(self, bundle4_module, material_mod, mod_cert):
        nu_run = 0.5 * mod_cert.nu0
        Phi, Psi = make_divergence_free_data(bundle4_module, DEC_GRID, -nu_run,
                                             seed=11, t_on=0.0, t_off=2.0)
        fits = simulate_decay(bundle4_module, material_mod, mod_cert, Phi, Psi,
                              [nu_run], 2.0)
        f = fits[0]
        assert f.nu_hat >= 0.8 * nu_run
        assert f.r_squared > 0.99
        assert f.nu_hat >= mod_cert.nu0 * 0.9  # true rate at least the certificate

    def test_refuses_without_certificate(self, bundle4_module, material_dl, sigma_min_B):
        law = dl_law(DrudeLorentzParams(1.0, [(1.0, 1.0, 2.0)]))
        cert = certify_decay_rate([law], [1.0], sigma_min_B)
        Phi, Psi = make_divergence_free_data(bundle4_module, DEC_GRID, -0.02,
                                             seed=3, t_on=0.0, t_off=2.0)
        with pytest.raises(NotCertified):
            simulate_decay(bundle4_module, material_dl, cert, Phi, Psi, [0.02], 2.0)

    def test_refuses_above_certified_rate(self, bundle4_module, material_mod, mod_cert):
        Phi, Psi = make_divergence_free_data(bundle4_module, DEC_GRID,
                                             -2 * mod_cert.nu0, seed=3,
                                             t_on=0.0, t_off=2.0)
        with pytest.raises(NotCertified):
            simulate_decay(bundle4_module, material_mod, mod_cert, Phi, Psi,
                           [2.0 * mod_cert.nu0], 2.0)

    def test_fit_recomputable_from_series(self, bundle4_module, material_mod, mod_cert):
        nu_run = 0.5 * mod_cert.nu0
        Phi, Psi = make_divergence_free_data(bundle4_module, DEC_GRID, -nu_run,
                                             seed=11, t_on=0.0, t_off=2.0)
        f = simulate_decay(bundle4_module, material_mod, mod_cert, Phi, Psi,
                           [nu_run], 2.0)[0]
        nu_again, r2_again, _, amp = fit_decay_rate(f.times, f.energy, f.t_lo)
        assert nu_again == pytest.approx(f.nu_hat, rel=1e-12)
        assert r2_again == pytest.approx(f.r_squared, rel=1e-12)
        assert amp == pytest.approx(f.amplitude, rel=1e-12)
        # series dominated by the fitted envelope over the window
        keep = (f.times >= f.t_lo) & (f.times <= f.t_hi)
        envelope = 3.0 * f.amplitude * np.exp(-f.nu_hat * f.times[keep])
        assert np.all(f.energy[keep] <= envelope)

    def test_dt_refinement_stable(self, bundle4_module, material_mod, mod_cert):
        nu_run = 0.5 * mod_cert.nu0
        rates = []
        for dt, n in ((0.25, 1024), (0.125, 2048)):
            grid = TimeGrid(-4.0, dt, n)
            Phi, Psi = make_divergence_free_data(bundle4_module, grid, -nu_run,
                                                 seed=11, t_on=0.0, t_off=2.0)
            f = simulate_decay(bundle4_module, material_mod, mod_cert, Phi, Psi,
                               [nu_run], 2.0)[0]
            rates.append(f.nu_hat)
        assert abs(rates[0] - rates[1]) < 0.05 * rates[1]


class TestFirstOrderEstimates:
    def test_zero_data(self, bundle4_module, basis4_module, material_mod):
        z = WeightedSignal(DEC_GRID, -0.01, np.zeros((DEC_GRID.n_samples, bundle4_module.n_edges)))
        zf = WeightedSignal(DEC_GRID, -0.01, np.zeros((DEC_GRID.n_samples, bundle4_module.n_faces)))
        u = WeightedSignal(DEC_GRID, -0.01, np.zeros((DEC_GRID.n_samples, bundle4_module.n_state)))
        out = verify_first_order_estimates(bundle4_module, basis4_module,
                                           material_mod, u, z, zf, 0.01)
        assert all(v == 0.0 for k, v in out.items() if k != "norms")

    def test_batch_ratios_finite(self, bundle4_module, basis4_module,
                                 material_mod, mod_cert):
        nu = 0.5 * mod_cert.nu0
        worst = {}
        for seed in range(8):
            Phi, Psi = make_divergence_free_data(bundle4_module, DEC_GRID, -nu,
                                                 seed=seed, t_on=0.0, t_off=2.0)
            g = stack_rhs(bundle4_module, Phi, Psi)
            u, _ = solve_linear(LinearProblem(bundle4_module, material_mod, -nu, g),
                                certificate_required=False)
            out = verify_first_order_estimates(bundle4_module, basis4_module,
                                               material_mod, u, Phi, Psi, nu)
            for k, v in out.items():
                if k == "norms":
                    continue
                worst[k] = max(worst.get(k, 0.0), v)
        assert all(np.isfinite(v) and v < 1e3 for v in worst.values())
        # divergence-free data has vanishing h and w obstructions
        assert out["norms"]["h"] < 1e-8
        assert out["norms"]["w"] < 1e-8


class TestCapabilityMatrix:
    def test_reproduces_table_pattern(self, bundle4_module, basis4_module):
        p = DrudeLorentzParams(1.0, [(1.0, 1.0, 2.0)])
        mp = ModDLParams(p, 4.0)
        law_dl = dl_law(p)
        law_mod = mod_dl_law(mp)
        sig = conductivity_law(law_dl, 0.5)
        configs = [
            ("dl", PiecewiseMaterial(law_dl, law_dl, 1.0, 1.0), [law_dl], [1.0]),
            ("mod_dl", PiecewiseMaterial(law_mod, law_mod, 1.0, 1.0), [law_mod], [1.0]),
            ("dl_sigma", PiecewiseMaterial(law_dl, law_dl, 1.0, 1.0,
                                           sigma1=0.5, sigma2=0.5), [sig], [1.0]),
        ]
        fwd = TimeGrid(-2.0, 1.0 / 32.0, 512)
        rows = capability_matrix(bundle4_module, basis4_module, configs,
                                 fwd, DEC_GRID, seed=5)
        by_name = {r.model: r for r in rows}
        assert by_name["dl"].wp0 and not by_name["dl"].es0
        assert not by_name["dl"].detail["certified"]
        assert by_name["mod_dl"].wp0 and by_name["mod_dl"].es0
        assert by_name["dl_sigma"].wp0 and by_name["dl_sigma"].es0
        table = render_capability_table(rows)
        assert "no-cert" in table

    def test_deterministic(self, bundle4_module, basis4_module):
        p = DrudeLorentzParams(1.0, [(1.0, 1.0, 2.0)])
        law_dl = dl_law(p)
        configs = [("dl", PiecewiseMaterial(law_dl, law_dl, 1.0, 1.0), [law_dl], [1.0])]
        fwd = TimeGrid(-2.0, 1.0 / 32.0, 512)
        r1 = capability_matrix(bundle4_module, basis4_module, configs, fwd,
                               DEC_GRID, seed=9)
        r2 = capability_matrix(bundle4_module, basis4_module, configs, fwd,
                               DEC_GRID, seed=9)
        assert r1[0].detail == r2[0].detail


class TestNegativeControl:
    def test_ratios_blow_up_past_true_rate(self, bundle4_module, basis4_module,
                                           material_mod, mod_cert):
        # the true solution fails to belong to the -nu space once nu exceeds
        # the actual decay rate: measuring its norms there inflates the
        # estimate ratios by orders of magnitude
        grid = TimeGrid(-2.0, 0.25, 256)
        nu_ok = 0.5 * mod_cert.nu0
        Phi, Psi = make_divergence_free_data(bundle4_module, grid, -nu_ok,
                                             seed=2, t_on=0.0, t_off=2.0)
        g = stack_rhs(bundle4_module, Phi, Psi)
        u, _ = solve_linear(LinearProblem(bundle4_module, material_mod, -nu_ok, g),
                            certificate_required=False)
        good = verify_first_order_estimates(bundle4_module, basis4_module,
                                            material_mod, u, Phi, Psi,
                                            nu_ok)["E_over_g_h"]
        nu_bad = 0.5
        u_bad = WeightedSignal(grid, -nu_bad, u.values)
        Phi_b = WeightedSignal(grid, -nu_bad, Phi.values)
        Psi_b = WeightedSignal(grid, -nu_bad, Psi.values)
        bad = verify_first_order_estimates(bundle4_module, basis4_module,
                                           material_mod, u_bad, Phi_b, Psi_b,
                                           nu_bad)["E_over_g_h"]
        assert bad > 50 * good

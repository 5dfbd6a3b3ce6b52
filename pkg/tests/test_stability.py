"""Error dynamics, eigenstructure, step-size bounds, two-agent closed
forms, adaptive mismatch decay, and grid scans."""

import numpy as np
import pytest

from decentopt import (
    ErrorDynamics,
    SpectralError,
    StepSizes,
    TraceRecord,
    b_spectrum_residual,
    build_error_dynamics,
    compute_v,
    decompose_b,
    diffusion_step_bound,
    extra_step_bound,
    least_squares_model,
    logistic_model,
    matrix_from_array,
    mismatch_decay_check,
    mse_quadratic_model,
    norm_comparison,
    one_step_matrix,
    perron_vector,
    predicted_b_spectrum,
    simulate_error_recursion,
    solve_centralized,
    stability_scan,
    two_agent_case,
    two_agent_onset,
)
from decentopt.stability import classify_run

from conftest import random_averaging, random_metropolis, random_quadratic


def two_agent_matrix(a):
    return matrix_from_array(np.array([[a, 1 - a], [1 - a, a]]))


# -------------------------------------------------------- dynamics blocks


def test_b_matrix_block_structure():
    matrix = random_averaging(5, seed=0)
    perron = perron_vector(matrix)
    vm = compute_v(matrix, perron)
    dyn = build_error_dynamics(matrix, perron, vm)
    n = 5
    abar = (np.eye(n) + matrix.a) / 2.0
    pinv_v = vm.v / perron.p[:, None]
    expect = np.block([
        [abar.T, -pinv_v],
        [vm.v @ abar.T, np.eye(n) - vm.v @ pinv_v],
    ])
    assert np.abs(dyn.b - expect).max() <= 1e-14
    expect_td = np.block([[abar.T, np.zeros((n, n))],
                          [vm.v @ abar.T, np.zeros((n, n))]])
    expect_te = np.block([[np.eye(n), np.zeros((n, n))],
                          [vm.v, np.zeros((n, n))]])
    assert np.abs(dyn.t_d - expect_td).max() <= 1e-14
    assert np.abs(dyn.t_e - expect_te).max() <= 1e-14


def test_closed_form_spectrum_matches_b():
    for seed in range(5):
        for builder in (random_metropolis, random_averaging):
            matrix = builder(4 + seed % 3, seed)
            dyn = build_error_dynamics(matrix)
            assert b_spectrum_residual(dyn) <= 1e-8
            # magnitudes agree as sorted multisets too
            predicted = np.sort(np.abs(predicted_b_spectrum(matrix)))
            actual = np.sort(np.abs(np.linalg.eigvals(dyn.b)))
            assert np.abs(predicted - actual).max() <= 1e-8


def test_spectrum_residual_handles_repeated_eigenvalues():
    # star graphs give Abar spectra with high multiplicity; the matcher
    # must not trip over conjugate-pair orderings
    from decentopt import Graph, build_averaging as _avg

    star = Graph(4, frozenset((0, k) for k in range(1, 4)))
    dyn = build_error_dynamics(_avg(star))
    assert b_spectrum_residual(dyn) <= 1e-8


def test_eigenvalue_pairs_have_sqrt_magnitude():
    matrix = random_metropolis(6, seed=3)
    dyn = build_error_dynamics(matrix)
    pair = decompose_b(dyn)
    abar_eigs = np.sort(np.linalg.eigvalsh((np.eye(6) + matrix.a) / 2.0))
    # drop the Perron eigenvalue 1; each remaining lambda spawns a
    # conjugate pair of magnitude sqrt(lambda)
    mags = np.sort(np.abs(pair.d))
    expect = np.sort(np.concatenate(
        [[1.0, 1.0], np.repeat(np.sqrt(abar_eigs[:-1]), 2)]))
    assert np.abs(mags - expect).max() <= 1e-8


def test_decompose_canonical_vectors_and_reconstruction():
    for seed, builder in ((0, random_metropolis), (1, random_averaging)):
        matrix = builder(5, seed)
        perron = perron_vector(matrix)
        dyn = build_error_dynamics(matrix, perron)
        pair = decompose_b(dyn, perron)
        n = 5
        r1 = np.concatenate([np.ones(n), np.zeros(n)])
        r2 = np.concatenate([np.zeros(n), np.ones(n)])
        l1 = np.concatenate([perron.p, np.zeros(n)])
        l2 = np.concatenate([np.zeros(n), np.full(n, 1.0 / n)])
        assert np.abs(pair.x[:, 0] - r1).max() <= 1e-12
        assert np.abs(pair.x[:, 1] - r2).max() <= 1e-12
        assert np.abs(pair.x_inv[0] - l1).max() <= 1e-12
        assert np.abs(pair.x_inv[1] - l2).max() <= 1e-12
        # the pinned vectors really are eigenvectors of B at 1
        assert np.abs(dyn.b @ r1 - r1).max() <= 1e-10
        assert np.abs(dyn.b @ r2 - r2).max() <= 1e-10
        assert np.abs(l1 @ dyn.b - l1).max() <= 1e-10
        assert np.abs(l2 @ dyn.b - l2).max() <= 1e-10
        assert np.abs(pair.x_inv @ pair.x - np.eye(2 * n)).max() <= 1e-10
        recon = pair.x @ np.diag(pair.d) @ pair.x_inv
        assert np.abs(recon - dyn.b).max() <= 1e-9
        assert np.abs(pair.d[0] - 1) <= 1e-12 and np.abs(pair.d[1] - 1) <= 1e-12


def test_decompose_scaling_keeps_alpha_invariant():
    matrix = random_metropolis(5, seed=7)
    perron = perron_vector(matrix)
    dyn = build_error_dynamics(matrix, perron)
    base = decompose_b(dyn, perron)
    scaled = decompose_b(dyn, perron, c=2.0)
    t_norm = np.linalg.norm(dyn.t_d, 2)
    alpha_base = base.norm_l * t_norm * base.norm_r
    alpha_scaled = scaled.norm_l * t_norm * scaled.norm_r
    assert abs(alpha_base - alpha_scaled) <= 1e-10 * alpha_base
    assert scaled.norm_r != pytest.approx(base.norm_r, rel=1e-3)


def test_decompose_rejects_extra_unit_eigenvalues():
    matrix = random_metropolis(2, seed=0)
    perron = perron_vector(matrix)
    vm = compute_v(matrix, perron)
    fake = ErrorDynamics(matrix=matrix, perron=perron, vmat=vm,
                         b=np.eye(4), t_d=np.zeros((4, 4)), t_e=np.zeros((4, 4)))
    with pytest.raises(SpectralError):
        decompose_b(fake, perron)


def test_single_agent_degenerates_cleanly():
    m1 = matrix_from_array(np.array([[1.0]]))
    dyn = build_error_dynamics(m1)
    pair = decompose_b(dyn)
    assert np.allclose(pair.d, [1.0, 1.0])
    assert np.allclose(pair.x, np.eye(2))
    with pytest.raises(ValueError):
        diffusion_step_bound(m1)
    with pytest.raises(ValueError):
        extra_step_bound(m1)
    assert norm_comparison(m1) == (1.0, 1.0, 1.0)


# ------------------------------------------------- one-step lift vs engine


def test_lifted_matrix_matches_engine_exact_diffusion():
    matrix = random_averaging(4, seed=5)
    model = random_quadratic(4, 2, seed=5, q=[1.0, 2.0, 0.5, 1.0])
    perron = perron_vector(matrix)
    steps = StepSizes.from_weights(model.q, perron.p, 0.01)
    dyn = build_error_dynamics(matrix, model=model, steps=steps)
    q = one_step_matrix(dyn, "exact_diffusion")
    rng = np.random.default_rng(0)
    w0 = rng.standard_normal((4, 2))
    sim = simulate_error_recursion(dyn, model, steps, w0, 60,
                                   engine="exact_diffusion_pd")
    e = sim[0].reshape(-1)
    for i in range(60):
        e = q @ e
        assert np.abs(e.reshape(8, 2) - sim[i + 1]).max() <= 1e-9


def test_lifted_matrix_matches_engine_extra():
    matrix = random_metropolis(4, seed=6)
    model = random_quadratic(4, 2, seed=6)
    steps = StepSizes.uniform(0.02, 4)
    dyn = build_error_dynamics(matrix, model=model, steps=steps)
    q = one_step_matrix(dyn, "extra")
    rng = np.random.default_rng(1)
    w0 = rng.standard_normal((4, 2))
    sim = simulate_error_recursion(dyn, model, steps, w0, 60, engine="extra")
    e = sim[0].reshape(-1)
    for i in range(60):
        e = q @ e
        assert np.abs(e.reshape(8, 2) - sim[i + 1]).max() <= 1e-9


def test_one_step_matrix_validation():
    matrix = random_metropolis(4, seed=0)
    bare = build_error_dynamics(matrix)
    with pytest.raises(ValueError):
        one_step_matrix(bare, "exact_diffusion", mu=0.1)
    model = random_quadratic(4, 2, seed=0)
    dyn = build_error_dynamics(matrix, model=model,
                               steps=StepSizes.uniform(0.01, 4))
    with pytest.raises(ValueError):
        one_step_matrix(dyn, "diging")
    with pytest.raises(TypeError):
        build_error_dynamics(matrix, model=logistic_model(0, 4, 2, 5, ridge=0.1))


# ----------------------------------------------------------- step bounds


def test_bound_rate_is_one_exactly_at_the_bound():
    for seed in range(4):
        matrix = random_metropolis(5, seed=seed)
        for bound in (diffusion_step_bound(matrix), extra_step_bound(matrix)):
            assert abs(bound.rho_at(bound.mu_bound) - 1.0) <= 1e-12
            for f in (0.1, 0.5, 0.9, 0.99):
                assert bound.rho_at(f * bound.mu_bound) < 1.0
            assert bound.rho_at(0.0) <= 1.0


def test_bound_constants_satisfy_stated_relations():
    matrix = random_metropolis(6, seed=9)
    perron = perron_vector(matrix)
    d = diffusion_step_bound(matrix, perron)
    e = extra_step_bound(matrix)
    for b in (d, e):
        assert b.sigma12 == pytest.approx(b.sigma21, rel=1e-12)
        assert b.sigma22 == pytest.approx(b.alpha * b.delta, rel=1e-12)
        assert b.sigma12 ** 2 == pytest.approx(
            np.sqrt(b.p_max) * b.alpha * b.delta ** 2, rel=1e-12)
        assert b.lam == pytest.approx(np.sqrt((1 + perron.lambda2) / 2), rel=1e-12)
        assert b.mu_bound == pytest.approx(
            b.sigma11 * (1 - b.lam) / (2 * b.sigma21 ** 2), rel=1e-12)
    # normalized curvature: nu = 1, uniform tau, p = 1/N
    assert d.sigma11 == pytest.approx(1.0 / 6, rel=1e-12)
    assert e.sigma11 == pytest.approx(1.0 / 6, rel=1e-12)
    assert d.alpha < e.alpha
    assert d.mu_bound > e.mu_bound
    assert d.t_norm < e.t_norm


def test_diffusion_bound_normalizes_tau():
    matrix = random_metropolis(5, seed=4)
    base = diffusion_step_bound(matrix, tau=np.ones(5))
    doubled = diffusion_step_bound(matrix, tau=np.full(5, 2.0))
    assert base.mu_bound == pytest.approx(doubled.mu_bound, rel=1e-12)


def test_extra_bound_requires_symmetric_doubly_stochastic():
    a = np.array([[0.5, 0.3, 0.2], [0.2, 0.5, 0.3], [0.3, 0.2, 0.5]])
    with pytest.raises(ValueError):
        extra_step_bound(matrix_from_array(a))


# -------------------------------------------------------- norm comparison


def test_norm_comparison_closed_forms():
    for n in range(2, 9):
        matrix = random_metropolis(n, seed=n)
        perron = perron_vector(matrix)
        vm = compute_v(matrix, perron)
        t_d, t_e, ratio = norm_comparison(matrix)
        lam_n = perron.lambdaN
        assert t_e ** 2 == pytest.approx((2 * n + 1 - lam_n) / (2 * n), abs=1e-10)
        assert t_e ** 2 == pytest.approx(
            np.linalg.eigvalsh(np.eye(n) + vm.v @ vm.v).max(), abs=1e-12)
        # dual route: the closed forms equal the actual operator norms
        dyn = build_error_dynamics(matrix, perron, vm)
        assert t_d == pytest.approx(np.linalg.norm(dyn.t_d, 2), abs=1e-12)
        assert t_e == pytest.approx(np.linalg.norm(dyn.t_e, 2), abs=1e-12)
        assert t_d < t_e
        assert ratio == pytest.approx(t_d / t_e, rel=1e-12)


def test_norm_comparison_rejects_asymmetric():
    a = np.array([[0.5, 0.3, 0.2], [0.2, 0.5, 0.3], [0.3, 0.2, 0.5]])
    with pytest.raises(ValueError):
        norm_comparison(matrix_from_array(a))


# ----------------------------------------------------- two-agent closed forms


def test_two_agent_error_matrix_oracle():
    case = two_agent_case(0.5, 1.0, 1.5)
    expect_e_d = np.array([
        [-0.5, 0.0, 0.0],
        [0.0, -0.25, -1.0],
        [0.0, -0.125, 0.5],
    ])
    assert np.abs(case.e_d - expect_e_d).max() <= 1e-12
    # frozen roots for the EXTRA characteristic polynomial
    # theta^2 + 0.5 theta - 1 at a = 1/2, mu sigma^2 = 3/2
    roots = np.sort(case.roots_e.real)
    assert np.abs(roots - np.array([-1.2807764064044151, 0.7807764064044151])).max() <= 1e-12
    assert case.roots_e.prod().real == pytest.approx(-1.0, abs=1e-12)
    assert case.specrad_e == pytest.approx(1.2807764064044151, abs=1e-12)
    assert case.stable_e is False
    assert case.stable_d is True


def test_two_agent_characteristic_polynomials():
    rng = np.random.default_rng(3)
    for _ in range(20):
        a = rng.uniform(0.05, 0.95)
        sigma2 = rng.uniform(0.2, 3.0)
        mu_d = rng.uniform(0.05, 1.8) / sigma2
        mu_e = rng.uniform(0.05, 1.2) / sigma2
        case = two_agent_case(a, sigma2, mu_d, mu_e)
        m = mu_d * sigma2
        me = mu_e * sigma2
        r_d = np.sort_complex(np.roots([1.0, -(2 - m) * a, (1 - m) * a]))
        r_e = np.sort_complex(np.roots([1.0, -(2 * a - me), a - me]))
        assert np.abs(np.sort_complex(case.roots_d) - r_d).max() <= 1e-10
        assert np.abs(np.sort_complex(case.roots_e) - r_e).max() <= 1e-10
        # eigs(E) = {1 - m} union roots; eigs(Q) = {1} union eigs(E)
        e_d_eigs = np.sort_complex(np.linalg.eigvals(case.e_d))
        expect = np.sort_complex(np.concatenate([[1 - m], r_d]))
        assert np.abs(e_d_eigs - expect).max() <= 1e-10
        q_d_eigs = np.sort_complex(np.linalg.eigvals(case.q_d))
        expect_q = np.sort_complex(np.concatenate([[1.0, 1 - m], r_d]))
        assert np.abs(q_d_eigs - expect_q).max() <= 1e-10
        q_e_eigs = np.sort_complex(np.linalg.eigvals(case.q_e))
        expect_qe = np.sort_complex(np.concatenate([[1.0, 1 - me], r_e]))
        assert np.abs(q_e_eigs - expect_qe).max() <= 1e-10


def test_two_agent_lifted_matrix_oracle():
    # for N = 2, P = I/2: the exact-diffusion one-step matrix reduces to
    # [[(1-m) Abar, -2V], [(1-m) V Abar, Abar]] because I - 2 V^2 = Abar
    a_val = 0.5
    matrix = two_agent_matrix(a_val)
    perron = perron_vector(matrix)
    vm = compute_v(matrix, perron)
    model = mse_quadratic_model(2, 1, [[[1.0]], [[1.0]]], [[0.3], [-0.4]])
    steps = StepSizes.uniform(0.8, 2)
    dyn = build_error_dynamics(matrix, perron, vm, model=model, steps=steps)
    q = one_step_matrix(dyn, "exact_diffusion")
    abar = (np.eye(2) + matrix.a) / 2.0
    v = vm.v
    assert np.abs(np.eye(2) - 2 * (v @ v) - abar).max() <= 1e-12
    m = 0.8
    expect = np.block([
        [(1 - m) * abar, -2 * v],
        [(1 - m) * (v @ abar), abar],
    ])
    assert np.abs(q - expect).max() <= 1e-10


def test_two_agent_stability_verdicts_follow_step_size():
    # exact diffusion is stable exactly on 0 < mu sigma^2 < 2, regardless
    # of the coupling a
    for a in (0.1, 0.5, 0.9):
        for sigma2 in (0.5, 1.0, 2.0):
            for m in (0.05, 0.5, 1.0, 1.5, 1.95):
                case = two_agent_case(a, sigma2, m / sigma2)
                assert case.stable_d, (a, sigma2, m)
            for m in (2.0, 2.3, 3.0):
                case = two_agent_case(a, sigma2, m / sigma2)
                assert not case.stable_d, (a, sigma2, m)
    # EXTRA diverges once mu sigma^2 reaches a + 1
    for a in (0.2, 0.6):
        case = two_agent_case(a, 1.0, 0.1, (a + 1.0) + 1e-6)
        assert not case.stable_e


def test_two_agent_onsets():
    for sigma2 in (0.5, 1.0, 2.0):
        onset_d = two_agent_onset(0.5, sigma2, "exact_diffusion")
        assert onset_d == pytest.approx(2.0 / sigma2, abs=1e-3)
    for a in (0.1, 0.3, 0.5, 0.7, 0.9):
        onset_e = two_agent_onset(a, 1.0, "extra")
        assert onset_e == pytest.approx((3 * a + 1) / 2.0, abs=1e-3)
    with pytest.raises(ValueError):
        two_agent_onset(0.5, 1.0, "diging")


# ------------------------------------------------------- adaptive mismatch


def test_mismatch_decay_check_accepts_true_geometric_decay():
    p = np.array([0.4, 0.35, 0.25])
    rho = 0.55
    direction = np.array([1.0, -0.7, -0.3])
    direction /= np.linalg.norm(direction)
    history = [p + np.sqrt(3) * rho ** (i + 1) * 0.9 * direction for i in range(80)]
    ok, fitted = mismatch_decay_check(history, p, rho)
    assert ok
    assert fitted <= rho + 0.02


def test_mismatch_decay_check_rejects_slow_decay():
    p = np.array([0.5, 0.5])
    rho = 0.4
    slow = 0.8
    history = [p + slow ** (i + 1) * np.array([1.0, -1.0]) for i in range(60)]
    ok, fitted = mismatch_decay_check(history, p, rho)
    assert not ok
    assert fitted > rho + 0.02


def test_mismatch_decay_check_handles_exact_history():
    p = np.array([0.5, 0.5])
    ok, fitted = mismatch_decay_check([p.copy() for _ in range(30)], p, 0.6)
    assert ok and fitted == 0.0


# ------------------------------------------------------------ classification


def _fake_result(status, rels):
    class _R:
        pass

    r = _R()
    r.status = status
    r.records = [TraceRecord(i, i, float(v), 0.0) for i, v in enumerate(rels)]
    return r


def test_classify_run_rules():
    assert classify_run(_fake_result("converged", [1.0, 0.1]), 10) == "stable"
    assert classify_run(_fake_result("diverged", [1.0, 2.0]), 10) == "unstable"
    decreasing = [1.0] + [0.9 ** i for i in range(20)]
    assert classify_run(_fake_result("exhausted", decreasing), 20) == "stable"
    rising = [1.0] * 15 + [1.1, 1.3, 1.7, 2.5, 4.0, 8.0]
    assert classify_run(_fake_result("exhausted", rising), 20) == "unstable"


# --------------------------------------------------------------------- scan


def test_stability_scan_finds_two_agent_boundaries():
    matrix = two_agent_matrix(0.5)
    model = mse_quadratic_model(2, 1, [[[1.0]], [[1.0]]], [[0.7], [-0.3]])
    grid = np.linspace(0.05, 3.0, 12)
    scan_d = stability_scan("exact_diffusion", model, matrix, grid,
                            max_iters=3000, stop=1e-10)
    scan_e = stability_scan("extra", model, matrix, grid,
                            max_iters=3000, stop=1e-10)
    assert scan_d.refined and scan_e.refined
    assert scan_d.mu_stable == pytest.approx(2.0, abs=5e-3)
    assert scan_e.mu_stable == pytest.approx(1.25, abs=5e-3)
    assert scan_d.mu_unstable - scan_d.mu_stable <= 1e-3 * scan_d.mu_unstable
    assert scan_d.mu_stable >= scan_e.mu_stable
    for mu, cls in zip(scan_d.mus, scan_d.classifications):
        assert cls == ("stable" if mu < 2.0 else "unstable")


def test_stability_scan_grid_without_transition():
    matrix = two_agent_matrix(0.5)
    model = mse_quadratic_model(2, 1, [[[1.0]], [[1.0]]], [[0.7], [-0.3]])
    all_stable = stability_scan("exact_diffusion", model, matrix,
                                np.linspace(0.1, 0.5, 3), max_iters=2000)
    assert all_stable.mu_stable == pytest.approx(0.5)
    assert all_stable.mu_unstable is None and not all_stable.refined
    all_unstable = stability_scan("exact_diffusion", model, matrix,
                                  np.linspace(5.0, 8.0, 3), max_iters=2000)
    assert all_unstable.mu_stable is None
    assert all_unstable.mu_unstable == pytest.approx(5.0)
    assert not all_unstable.refined
    assert all(c == "unstable" for c in all_unstable.classifications)


def test_stability_scan_jobs_parity():
    matrix = random_metropolis(4, seed=21)
    model = random_quadratic(4, 2, seed=21)
    grid = np.linspace(0.01, 0.6, 8)
    a = stability_scan("extra", model, matrix, grid, max_iters=400, jobs=1)
    b = stability_scan("extra", model, matrix, grid, max_iters=400, jobs=4)
    assert a.mus == b.mus
    assert a.classifications == b.classifications
    assert a.mu_stable == b.mu_stable
    assert a.mu_unstable == b.mu_unstable


def test_stability_scan_rejects_bad_grid():
    matrix = two_agent_matrix(0.5)
    model = mse_quadratic_model(2, 1, [[[1.0]], [[1.0]]], [[0.7], [-0.3]])
    with pytest.raises(ValueError):
        stability_scan("exact_diffusion", model, matrix, [0.5])
    with pytest.raises(ValueError):
        stability_scan("exact_diffusion", model, matrix, [0.5, -0.2])

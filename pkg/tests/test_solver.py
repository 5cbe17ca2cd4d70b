import numpy as np
import pytest
from numpy.testing import assert_allclose

from dompole.descriptor import DescriptorSystem, StateSpaceSystem
from dompole.generator import build_system, sample_spectrum
from dompole.oracle import reference_F, reference_sequence, residues
from dompole.solver import (
    DEFAULT_FAN_SCALE,
    PoleResult,
    ShiftState,
    SolverConfig,
    SolverError,
    assemble_projection,
    check_convergence,
    ddpse_step,
    deflate,
    dominance,
    dpse_step,
    estimate_residue,
    init_shifts,
    match_shifts,
    refresh_columns,
    run,
)

WORKED_F = np.array([[-1.125, -1.125], [-5.0 / 24.0, -2.875]])


def two_state():
    return DescriptorSystem.from_dense_state(np.diag([-1.0, -3.0]), [1, 1], [1, 1], 0)


def prepared_state(sys, shifts, config=None):
    config = config or SolverConfig(p=len(shifts))
    state = ShiftState.start(sys, np.asarray(shifts, dtype=complex))
    refresh_columns(sys, state, config)
    return state, config


class TestInitShifts:
    def test_fan_endpoints(self):
        s = init_shifts("fan", 20)
        assert s[0] == pytest.approx(-0.05 + 0.5j)
        assert s[-1] == pytest.approx(-1.0 + 10.0j)

    def test_fan_single(self):
        assert_allclose(init_shifts("fan", 1), [DEFAULT_FAN_SCALE])

    def test_ring(self):
        s = init_shifts("ring", 4, center=-1.0, radius=1.0)
        assert_allclose(np.abs(s + 1.0), np.ones(4))
        assert (s.real < 0).all()

    def test_explicit_list_passthrough(self):
        assert_allclose(init_shifts([-0.5, -2.5]), [-0.5, -2.5])

    def test_explicit_length_mismatch(self):
        with pytest.raises(ValueError, match="explicit shifts"):
            init_shifts([-0.5], p=2)

    def test_ring_outside_left_half_plane(self):
        with pytest.raises(ValueError, match="left half-plane"):
            init_shifts("ring", 8, center=-0.1, radius=1.0)


class TestAssembleProjection:
    def test_worked_example(self):
        state, _ = prepared_state(two_state(), [-0.5, -2.5])
        F = assemble_projection(two_state(), state)
        assert_allclose(F, WORKED_F, atol=1e-9)

    def test_matches_reference_on_random_system(self):
        rng = np.random.default_rng(12)
        a = rng.standard_normal((8, 8))
        a -= np.diag(np.abs(a).sum(axis=1) + 1.0)
        ss = StateSpaceSystem(a, rng.standard_normal(8), rng.standard_normal(8), 0)
        sys = DescriptorSystem.from_state_space(ss)
        shifts = np.array([-0.5 + 0.6j, -1.5 - 0.3j, -2.5 + 1.1j])
        state, _ = prepared_state(sys, shifts)
        F = assemble_projection(sys, state)
        assert_allclose(F, reference_F(ss, shifts), atol=1e-9 * np.abs(F).max())

    def test_near_eigenvalue_tuple_is_nearly_diagonal(self):
        sys = two_state()
        shifts = np.array([-1.0, -3.0]) + 1e-8
        state, _ = prepared_state(sys, shifts)
        F = assemble_projection(sys, state)
        assert np.abs(F - np.diag(shifts)).max() <= 1e-6

    def test_rank_one_structure(self):
        rng = np.random.default_rng(13)
        spec = sample_spectrum(10, 2, (0.1, 0.4), rng)
        gen = build_system(spec, n_algebraic=5, density=0.3, rng=rng)
        shifts = spec[:4] + 0.2 + 0.1j
        state, _ = prepared_state(gen.system, shifts)
        F = assemble_projection(gen.system, state)
        sv = np.linalg.svd(F - np.diag(shifts), compute_uv=False)
        assert sv[1] <= 1e-10 * np.linalg.norm(F)

    def test_collision_detection(self):
        from dompole.solver import ShiftCollisionError

        sys = two_state()
        state, _ = prepared_state(sys, [-0.5, -0.5 + 1e-12])
        with pytest.raises(ShiftCollisionError):
            assemble_projection(sys, state, cond_limit=1e8)


class TestDpseStep:
    def test_worked_example_exact(self):
        sys = two_state()
        state, config = prepared_state(sys, [-0.5, -2.5])
        new = dpse_step(sys, state, config)
        assert_allclose(np.sort_complex(new), [-3.0, -1.0], atol=1e-9)

    def test_fixed_point_at_eigenvalue_tuple(self):
        sys = two_state()
        state, config = prepared_state(sys, [-1.0, -3.0])
        new = dpse_step(sys, state, config)
        assert np.abs(np.sort_complex(new) - np.array([-3.0, -1.0])).max() <= 1e-10

    def test_quadratic_contraction_with_spectator_mode(self):
        sys = DescriptorSystem.from_dense_state(
            np.diag([-1.0, -3.0, -10.0]), np.ones(3), np.ones(3), 0
        )
        state, config = prepared_state(sys, [-0.5, -2.5])
        new = dpse_step(sys, state, config)
        errs = np.array([abs(new[0] + 1.0), abs(new[1] + 3.0)])
        assert (errs < 0.5).all()  # strictly closer than the starts
        assert (errs <= 0.75 * 0.5**2).all()  # consistent with e1 ~ C e0^2
        # and the sparse step agrees with the dense reference formulas
        ss = StateSpaceSystem(np.diag([-1.0, -3.0, -10.0]), np.ones(3), np.ones(3), 0)
        wref, _ = np.linalg.eig(reference_F(ss, [-0.5, -2.5]))
        assert_allclose(np.sort_complex(new), np.sort_complex(wref), atol=1e-10)


class TestDdpseStep:
    def test_worked_example(self):
        sys = two_state()
        state, config = prepared_state(sys, [-0.5, -2.5])
        assert_allclose(ddpse_step(sys, state, config), [-1.125, -2.875], atol=1e-9)

    def test_p1_newton_step(self):
        sys = two_state()
        state, config = prepared_state(sys, [-0.5])
        new = ddpse_step(sys, state, config)
        # h/h' step on the partial fractions: -0.5 - 2.4/4.16 = -14/13
        assert new[0] == pytest.approx(-14.0 / 13.0, abs=1e-9)

    def test_fixed_point(self):
        sys = two_state()
        state, config = prepared_state(sys, [-1.0, -3.0])
        new = ddpse_step(sys, state, config)
        assert np.abs(new - np.array([-1.0, -3.0])).max() <= 1e-10


class TestMatchShifts:
    def test_nearest(self):
        assert_allclose(match_shifts([-1.0, -3.0], [-3.01, -0.99]), [-0.99, -3.01])

    def test_identity(self):
        old = np.array([-1.0 + 2.0j, -4.0])
        assert_allclose(match_shifts(old, old), old)

    def test_unambiguous_distances(self):
        out = match_shifts([0.0, 10.0j], [9.9j, 0.1])
        assert_allclose(out, [0.1, 9.9j])

    def test_optimal_assignment_beats_greedy_total(self):
        old = np.array([0.0, 1.0 + 0j])
        cand = np.array([0.9 + 0j, 2.0 + 0j])
        greedy = match_shifts(old, cand, "greedy-nearest")
        optimal = match_shifts(old, cand, "optimal-assignment")
        cost = lambda perm: np.abs(perm - old).sum()
        assert cost(optimal) <= cost(greedy)


class TestCheckConvergence:
    def test_exact_eigenpair_has_zero_residual(self):
        sys = two_state()
        state = ShiftState.start(sys, np.array([-1.0 + 0j]))
        state.X[:, 0] = [1.0, 0.0]
        state.Y[:, 0] = [1.0, 0.0]
        flags, res = check_convergence(sys, state, np.array([-1.0 + 0j]), 1e-5)
        assert flags[0]
        assert_allclose(res[0], [0.0, 0.0], atol=1e-15)

    def test_worked_residual_value(self):
        sys = two_state()
        state, _ = prepared_state(sys, [-0.5, -2.5])
        flags, res = check_convergence(sys, state, np.array([-1.0, -3.0]), 1e-5)
        assert res[0, 0] == pytest.approx(2.0 / np.sqrt(26.0), abs=1e-12)
        assert not flags.any()

    @pytest.mark.parametrize("seed", range(5))
    def test_update_formula_equivalence(self, seed):
        # || b / nu + (s_old - s_new) x || / || x || equals the direct
        # residual of (A - s_new I) applied to the normalized solve
        rng = np.random.default_rng(seed)
        n = 8
        a = rng.standard_normal((n, n)) - np.diag(np.abs(rng.standard_normal(n)) + n)
        b = rng.standard_normal(n)
        c = rng.standard_normal(n)
        s_old = complex(*rng.standard_normal(2))
        s_new = s_old + complex(*(0.1 * rng.standard_normal(2)))
        raw = np.linalg.solve(a - s_old * np.eye(n), b)
        nu = c @ raw
        x = raw / nu
        direct = np.linalg.norm((a - s_new * np.eye(n)) @ x) / np.linalg.norm(x)
        update = np.linalg.norm(b / nu + (s_old - s_new) * x) / np.linalg.norm(x)
        assert abs(direct - update) <= 1e-12 * max(direct, 1e-30)


class TestDeflation:
    def test_double_deflation_rejected(self):
        sys = two_state()
        state, _ = prepared_state(sys, [-0.5, -2.5])
        deflate(state, 0, -1.0)
        with pytest.raises(SolverError, match="already"):
            deflate(state, 0, -1.0)

    def test_locked_value_stays_in_spectrum(self):
        sys = DescriptorSystem.from_dense_state(
            np.diag([-1.0, -3.0, -10.0]), np.ones(3), np.ones(3), 0
        )
        config = SolverConfig(p=2, tol=1e-10, max_iter=20)
        state = ShiftState.start(sys, np.array([-0.9 + 0j, -6.0 + 1.0j]))
        refresh_columns(sys, state, config)
        new = dpse_step(sys, state, config)
        # lock column 0 by hand at its converged value, then keep iterating
        deflate(state, 0, -1.0)
        state.shifts[1] = new[1]
        for _ in range(9):
            refresh_columns(sys, state, config)
            F = assemble_projection(sys, state)
            w = np.linalg.eigvals(F)
            assert np.abs(w + 1.0).min() <= 1e-12
            state.shifts[1] = dpse_step(sys, state, config)[1]
        # the remaining column still converges to another eigenvalue
        assert min(abs(state.shifts[1] + 3.0), abs(state.shifts[1] + 10.0)) <= 1e-8

    def test_deflated_residuals_not_recomputed(self):
        sys = two_state()
        state, _ = prepared_state(sys, [-0.5, -2.5])
        deflate(state, 0, -1.0)
        state.final_residuals[0] = (1e-9, 2e-9)
        flags, res = check_convergence(sys, state, np.array([-1.0, -3.0]), 1e-5)
        assert flags[0]
        assert_allclose(res[0], [1e-9, 2e-9])


class TestResidueEstimate:
    def test_unit_residue_from_exact_vectors(self):
        sys = two_state()
        state = ShiftState.start(sys, np.array([-1.0 + 0j]))
        state.X[:, 0] = [1.0, 0.0]
        state.Y[:, 0] = [1.0, 0.0]
        deflate(state, 0, -1.0)
        assert estimate_residue(state, 0) == pytest.approx(1.0)

    def test_requires_converged_column(self):
        sys = two_state()
        state, _ = prepared_state(sys, [-0.5])
        with pytest.raises(SolverError, match="converged"):
            estimate_residue(state, 0)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_matches_oracle_residues(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.standard_normal((8, 8))
        a -= np.diag(np.abs(a).sum(axis=1) + 0.5)
        ss = StateSpaceSystem(a, rng.standard_normal(8), rng.standard_normal(8), 0)
        sys = DescriptorSystem.from_state_space(ss)
        table = residues(ss)
        targets = table.eigenvalues[:3]
        config = SolverConfig(method="dpse", p=3, tol=1e-8, max_iter=30)
        report = run(sys, config, initial_shifts=targets + 0.05)
        assert report.all_converged
        for pole in report.poles:
            k = int(np.argmin(np.abs(table.eigenvalues - pole.eigenvalue)))
            ref = table.residues[k]
            assert abs(pole.residue - ref) <= 1e-6 * abs(ref)

    def test_residue_scales_with_input(self):
        sys1 = two_state()
        sys2 = DescriptorSystem.from_dense_state(
            np.diag([-1.0, -3.0]), [2, 2], [1, 1], 0
        )
        config = SolverConfig(p=1, tol=1e-10, max_iter=20)
        r1 = run(sys1, config, initial_shifts=[-0.9]).poles[0].residue
        r2 = run(sys2, config, initial_shifts=[-0.9]).poles[0].residue
        assert r2 == pytest.approx(2.0 * r1, rel=1e-8)


class TestRun:
    def test_worked_system_converges_fast(self):
        report = run(two_state(), SolverConfig(method="dpse", p=2), [-0.5, -2.5])
        assert report.all_converged
        vals = sorted(p.eigenvalue.real for p in report.poles)
        assert_allclose(vals, [-3.0, -1.0], atol=1e-9)
        assert all(p.iterations <= 3 for p in report.poles)
        assert all(max(p.final_residuals) <= 1e-5 for p in report.poles)

    def test_sixty_state_ddpse_fan(self):
        rng = np.random.default_rng(1)
        spec = sample_spectrum(60, 10, (0.01, 0.3), rng)
        gen = build_system(spec, n_algebraic=40, density=0.1, rng=rng)
        config = SolverConfig(method="ddpse", p=5, tol=1e-5, max_iter=50)
        report = run(gen.system, config, initial_shifts=init_shifts("fan", 5))
        assert report.converged_count == 5
        for pole in report.poles:
            assert np.abs(gen.truth.eigenvalues - pole.eigenvalue).min() <= 1e-6

    def test_p1_methods_identical(self):
        sys = two_state()
        kw = dict(p=1, tol=1e-13, max_iter=6)
        rep_a = run(sys, SolverConfig(method="dpse", **kw), [-0.4])
        rep_b = run(sys, SolverConfig(method="ddpse", **kw), [-0.4])
        for sa, sb in zip(rep_a.trajectories, rep_b.trajectories):
            assert abs(sa[0] - sb[0]) <= 1e-12

    @pytest.mark.parametrize("method", ["dpse", "ddpse"])
    def test_scaling_invariance(self, method):
        rng = np.random.default_rng(3)
        a = rng.standard_normal((9, 9))
        a -= np.diag(np.abs(a).sum(axis=1) + 0.5)
        b = rng.standard_normal(9)
        c = rng.standard_normal(9)
        beta, gamma = 2.0 - 0.5j, -1.25 + 0.75j
        sys1 = DescriptorSystem.from_dense_state(a, b, c, 0)
        sys2 = DescriptorSystem.from_dense_state(a, beta * b, gamma * c, 0)
        config = SolverConfig(method=method, p=3, tol=1e-300, max_iter=5)
        s0 = np.array([-0.5 + 0.5j, -1.0 - 0.4j, -2.0 + 1.0j])
        t1 = run(sys1, config, s0).trajectories
        t2 = run(sys2, config, s0).trajectories
        for sa, sb in zip(t1, t2):
            assert np.abs(sa - sb).max() <= 1e-10 * max(1.0, np.abs(sa).max())

    def test_p_equals_n_exactness(self):
        # well-separated spectra keep the resolvent basis X nonsingular
        rng = np.random.default_rng(4)
        for _ in range(3):
            sigma = -rng.uniform(0.5, 1.0)
            omega = rng.uniform(2.0, 3.0)
            spec = np.array(
                [complex(sigma, omega), complex(sigma, -omega),
                 -1.0 - rng.uniform(0, 0.3), -6.0 - rng.uniform(0, 1.0)]
            )
            gen = build_system(spec, n_algebraic=0, rng=rng)
            state, config = prepared_state(
                gen.system, spec + 0.3 * np.exp(1j * rng.uniform(0, 2 * np.pi, 4))
            )
            new = dpse_step(gen.system, state, config)
            matched = match_shifts(spec, new)
            assert np.abs(matched - spec).max() <= 1e-8 * np.abs(spec).max()

    def test_duplicate_initial_shifts_are_separated(self):
        report = run(
            two_state(), SolverConfig(method="dpse", p=2, max_iter=20), [-0.5, -0.5]
        )
        assert any(e["kind"] == "collision" for e in report.events)
        assert report.all_converged

    def test_unconverged_columns_reported(self):
        report = run(
            two_state(),
            SolverConfig(method="dpse", p=2, tol=1e-300, max_iter=4),
            [-0.5, -2.5],
        )
        assert not report.all_converged
        assert len(report.unconverged) == 2
        assert report.converged_count == 0
        assert len(report.trajectories) == 5

    def test_p_larger_than_dynamic_block_rejected(self):
        with pytest.raises(ValueError, match="dynamic states"):
            run(two_state(), SolverConfig(p=3), [-1.0, -2.0, -3.0])

    def test_conjugate_duplicates_reported(self):
        sys = two_state()
        report = run(sys, SolverConfig(p=2), [-0.5, -2.5])
        report.poles[1] = PoleResult(
            eigenvalue=report.poles[0].eigenvalue.conjugate() + 1e-9j,
            right_vector=report.poles[1].right_vector,
            left_vector=report.poles[1].left_vector,
            residue=report.poles[1].residue,
            dominance=report.poles[1].dominance,
            damping_ratio=report.poles[1].damping_ratio,
            iterations=1,
            final_residuals=(0.0, 0.0),
        )
        assert report.conjugate_duplicates() == [(0, 1)]

    def test_report_dict_is_json_ready(self):
        import json

        report = run(two_state(), SolverConfig(p=2), [-0.5, -2.5])
        text = json.dumps(report.to_dict(), sort_keys=True)
        assert '"poles"' in text


class TestSequencesAgainstOracle:
    @pytest.mark.parametrize("method", ["dpse", "ddpse"])
    def test_descriptor_matches_dense_oracle(self, method):
        rng = np.random.default_rng(17)
        spec = sample_spectrum(40, 8, (0.05, 0.3), rng)
        gen = build_system(spec, n_algebraic=30, density=0.1, rng=rng)
        s0 = spec[[0, 2, 4, 6]] + 0.1 + 0.05j
        config = SolverConfig(method=method, p=4, tol=1e-300, max_iter=5)
        report = run(gen.system, config, initial_shifts=s0)
        oracle_seq = reference_sequence(gen.state_space, s0, method, 5)
        for got, ref in zip(report.trajectories, oracle_seq):
            assert np.abs(got - ref).max() <= 1e-8

    def test_dynamic_blocks_equal_dense_blocks(self):
        from dompole.oracle import normalized_blocks

        rng = np.random.default_rng(18)
        spec = sample_spectrum(20, 4, (0.05, 0.3), rng)
        gen = build_system(spec, n_algebraic=15, density=0.15, rng=rng)
        shifts = spec[[0, 2]] + 0.2 + 0.1j
        state, _ = prepared_state(gen.system, shifts)
        n = gen.system.ndyn
        V, W, _ = normalized_blocks(gen.state_space, shifts)
        wtv_sparse = state.Y[:n].T @ state.X[:n]
        assert np.abs(wtv_sparse - W.T @ V).max() <= 1e-10 * np.abs(W.T @ V).max()


class TestQuadraticRate:
    @pytest.mark.parametrize("method", ["dpse", "ddpse"])
    def test_tuple_error_slope(self, method):
        # final pre-roundoff iterations of the tuple error fit slope >= 1.8
        rng = np.random.default_rng(3)
        spec = sample_spectrum(10, 2, (0.1, 0.4), rng, freq_range=(1.0, 4.0), real_range=(-8.0, -1.0))
        gen = build_system(spec, n_algebraic=6, density=0.2, rng=rng, residue_floor=1e-2)
        start = np.array([spec[0], spec[2], spec[5]])
        s0 = start + 0.05 * np.exp(1j * rng.uniform(0, 2 * np.pi, 3))
        config = SolverConfig(method=method, p=3, tol=1e-13, max_iter=12)
        report = run(gen.system, config, initial_shifts=s0)
        final = report.trajectories[-1]
        targets = np.array([spec[np.argmin(np.abs(spec - f))] for f in final])
        E = [float(np.abs(t - targets).max()) for t in report.trajectories]
        kend = next((k for k, e in enumerate(E) if e <= 1e-9), len(E) - 1)
        kstart = kend
        while kstart > 0 and E[kstart - 1] > E[kstart]:
            kstart -= 1
        pairs = [
            (np.log(E[k]), np.log(E[k + 1]))
            for k in range(kstart, kend)
            if E[k + 1] >= 1e-9 and E[k] < 0.5
        ][-4:]
        assert len(pairs) >= 3
        x, y = np.array(pairs).T
        slope = np.polyfit(x, y, 1)[0]
        assert slope >= 1.8


class TestThreading:
    def test_thread_pool_gives_identical_results(self, monkeypatch):
        rng = np.random.default_rng(23)
        spec = sample_spectrum(30, 6, (0.05, 0.3), rng)
        gen = build_system(spec, n_algebraic=20, density=0.1, rng=rng)
        config = SolverConfig(method="dpse", p=4, tol=1e-6, max_iter=30)
        s0 = init_shifts("fan", 4)
        serial = run(gen.system, config, initial_shifts=s0)
        monkeypatch.setenv("DOMPOLE_THREADS", "4")
        threaded = run(gen.system, config, initial_shifts=s0)
        assert serial.converged_count == threaded.converged_count
        for a, b in zip(serial.trajectories, threaded.trajectories):
            assert np.abs(a - b).max() == 0.0


class TestDominanceHelpers:
    def test_dominance_values(self):
        assert dominance(1.0, -1.0 + 0j) == 1.0
        assert dominance(3.0, -0.5 + 2.0j) == pytest.approx(6.0)
        assert np.isinf(dominance(1.0, 0.5j))

    def test_report_sorted_by_dominance(self):
        report = run(two_state(), SolverConfig(p=2), [-0.5, -2.5])
        doms = [p.dominance for p in report.poles]
        assert doms == sorted(doms, reverse=True)

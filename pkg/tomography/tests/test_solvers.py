import itertools
import math
import tempfile
import warnings
from collections import Counter
from pathlib import Path

import numpy as np
from django.core.exceptions import ValidationError
from django.test import SimpleTestCase
from numpy.testing import assert_allclose, assert_array_equal

from tomography import regularization
from tomography.exceptions import BacktrackCapHit
from tomography.experiments import case_config, simulate
from tomography.geometry import ImageGrid, Sinogram
from tomography.operators import BlockLeastSquares, assemble_dense, forward_project
from tomography.regularization import Regularizer
from tomography.simulation import Disk, PhantomKind, PhantomSpec, make_phantom
from tomography.solvers import (
    SolverConfig,
    Termination,
    WorkClock,
    batch_schedule,
    fb_run,
    fblisa_run,
    full_objective,
    line_search,
    make_clock,
    proxsgd_run,
    read_trace_csv,
    sample_minibatch,
    sinogram_objective,
    solve,
    write_trace_csv,
)
from tomography.tests.helpers import dense_problem, parallel_setup, random_image


def disks_problem(n=16, n_theta=8):
    layout, geometry = parallel_setup(n, n_theta)
    spec = PhantomSpec(PhantomKind.DISKS, (n, n), disks=(Disk((0.0, 0.0), n / 4, 1.0), Disk((n / 5, -n / 6), n / 8, 0.5)))
    truth = make_phantom(spec)
    sinogram = Sinogram(geometry, forward_project(truth, geometry))
    return layout, geometry, truth, sinogram


class SolverConfigTests(SimpleTestCase):
    def test_defaults_resolve_for_angle_count(self):
        cfg = SolverConfig().resolved(36)
        self.assertEqual(cfg.n_max, 36)
        self.assertEqual(cfg.alpha_max, cfg.alpha0)
        self.assertAlmostEqual(cfg.C, 8 * 0.99 ** 5)

    def test_invalid_fields(self):
        for changes in ({'beta': 1.0}, {'alpha0': 0.0}, {'eps_ratio': 1.0}, {'epochs': 0}, {'telemetry': 'x'}):
            with self.subTest(**changes), self.assertRaises(ValidationError):
                SolverConfig(**changes).clean()

    def test_batch_bounds_checked_against_angles(self):
        with self.assertRaises(ValidationError):
            SolverConfig(N0=10).resolved(8)
        with self.assertRaises(ValidationError):
            SolverConfig(N0=2, n_max=9).resolved(8)

    def test_large_initial_step_warns(self):
        with self.assertWarns(RuntimeWarning):
            SolverConfig(alpha0=1.0, lipschitz_estimate=1.0).clean()


class BatchScheduleTests(SimpleTestCase):
    def test_documented_values(self):
        cfg = SolverConfig(N0=4, C=0.5, eps_ratio=0.5)
        self.assertEqual(batch_schedule(1, 16, 3, cfg, 32), 16)
        self.assertEqual(batch_schedule(1, 16, 3, SolverConfig(N0=4, C=0.01, eps_ratio=0.5), 32), 4)
        self.assertEqual(batch_schedule(1, 16, 10, cfg, 32), 32)

    def test_ceiling_ignores_rounding_noise(self):
        cfg = SolverConfig(N0=4, C=4.0000000005, eps_ratio=0.5)
        self.assertEqual(batch_schedule(1, 32, 0, cfg, 32), 8)

    def test_default_trace_for_36_angles(self):
        cfg = SolverConfig()
        sizes, n_prev, k_hat = [], cfg.N0, 0
        for t in range(1, 11):
            n_t = batch_schedule(t, n_prev, k_hat, cfg, 36)
            sizes.append(n_t)
            k_hat += math.ceil(36 / n_t)
            n_prev = n_t
        self.assertEqual(sizes, [8, 9, 9, 10, 10, 10, 11, 11, 12, 12])

    def test_formula_can_drop_after_a_large_jump(self):
        cfg = SolverConfig(N0=3, eps_ratio=0.9)
        self.assertEqual(batch_schedule(1, 3, 0, cfg, 20), 3)
        self.assertEqual(batch_schedule(2, 3, 7, cfg, 20), 7)
        # el índice de ε pasa de 7 + 7 = 14 a 10 + 3 = 13
        self.assertEqual(batch_schedule(3, 7, 10, cfg, 20), 6)

    def test_invalid_arguments(self):
        with self.assertRaises(ValueError):
            batch_schedule(0, 8, 0, SolverConfig(), 36)


class SampleMinibatchTests(SimpleTestCase):
    def test_size_and_range(self):
        rng = np.random.default_rng(0)
        subset = sample_minibatch(rng, 36, 9)
        self.assertEqual(len(subset), 9)
        self.assertEqual(list(subset.indices), sorted(set(subset.indices)))
        with self.assertRaises(ValueError):
            sample_minibatch(rng, 36, 37)
        with self.assertRaises(ValueError):
            sample_minibatch(rng, 36, 0)

    def test_full_size_is_every_angle(self):
        self.assertTrue(sample_minibatch(np.random.default_rng(0), 5, 5).is_full)

    def test_uniform_over_subsets(self):
        rng = np.random.default_rng(2024)
        draws = 100_000
        counts = Counter(sample_minibatch(rng, 9, 2).indices for _ in range(draws))
        self.assertEqual(len(counts), 36)
        expected = draws / 36
        sigma = math.sqrt(draws * (1 / 36) * (35 / 36))
        for subset, count in counts.items():
            self.assertLess(abs(count - expected), 5 * sigma, subset)

    def test_same_seed_same_draws(self):
        a = [sample_minibatch(np.random.default_rng(3), 36, 8) for _ in range(3)]
        b = [sample_minibatch(np.random.default_rng(3), 36, 8) for _ in range(3)]
        self.assertEqual(a, b)


class LineSearchTests(SimpleTestCase):
    b = np.array([1.0, 2.0, 3.0])

    def _problem(self, scale):
        return BlockLeastSquares.from_dense(scale * np.eye(3), self.b, 3)

    def test_accepts_first_trial_on_equality(self):
        problem = self._problem(1.0)
        x_bar, alpha, backtracks = line_search(
            problem, np.zeros(3), problem.full_subset(), 1.0, Regularizer.zero(), SolverConfig()
        )
        self.assertEqual((alpha, backtracks), (1.0, 0))
        assert_array_equal(x_bar, self.b)

    def test_one_reduction(self):
        problem = self._problem(2.0)
        x_bar, alpha, backtracks = line_search(
            problem, np.zeros(3), problem.full_subset(), 0.5, Regularizer.zero(), SolverConfig()
        )
        self.assertEqual((alpha, backtracks), (0.25, 1))
        assert_array_equal(x_bar, self.b / 2)

    def test_cap_raises(self):
        problem = self._problem(2.0)
        with self.assertRaises(BacktrackCapHit) as ctx:
            line_search(
                problem, np.zeros(3), problem.full_subset(), 1e6, Regularizer.zero(), SolverConfig(max_backtracks=2)
            )
        self.assertEqual(ctx.exception.backtracks, 3)
        self.assertEqual(ctx.exception.alpha, 1e6 * 0.5 ** 3)

    def test_rejects_nonpositive_start(self):
        problem = self._problem(1.0)
        with self.assertRaises(ValueError):
            line_search(problem, np.zeros(3), problem.full_subset(), 0.0, Regularizer.zero(), SolverConfig())

    def test_subsampled_objective_decreases(self):
        layout, geometry, truth, sinogram = disks_problem()
        problem = BlockLeastSquares.from_sinogram(sinogram, layout)
        reg = Regularizer.l1_nonneg(0.5)
        rng = np.random.default_rng(4)
        for _ in range(20):
            x = rng.random(layout.size)
            subset = sample_minibatch(rng, 8, int(rng.integers(1, 9)))
            x_bar, _, _ = line_search(problem, x, subset, 1.0, reg, SolverConfig())
            before = problem.value(x, subset) + regularization.evaluate(reg, x)
            after = problem.value(x_bar, subset) + regularization.evaluate(reg, x_bar)
            self.assertLessEqual(after, before + 1e-12 * abs(before))


class FBLISATests(SimpleTestCase):
    def test_batch_sizes_follow_schedule(self):
        rng = np.random.default_rng(0)
        matrix = rng.standard_normal((36, 3))
        problem = BlockLeastSquares.from_dense(matrix, matrix @ np.ones(3), 36)
        result = solve(problem, np.zeros(3), Regularizer.l1_nonneg(0.1), SolverConfig(epochs=7))
        per_epoch = {record.t: record.batch_size for record in result.trace}
        self.assertEqual([per_epoch[t] for t in range(1, 8)], [8, 9, 9, 10, 10, 10, 11])
        inner = Counter(record.t for record in result.trace)
        self.assertEqual([inner[t] for t in range(1, 8)], [5, 4, 4, 4, 4, 4, 4])
        self.assertEqual(result.termination, Termination.EPOCHS_EXHAUSTED)

    def test_batch_size_never_decreases(self):
        _, _, problem = dense_problem(n_blocks=20)
        cfg = SolverConfig(alpha0=1.0, N0=3, eps_ratio=0.9, epochs=30, seed=2)
        result = solve(problem, np.zeros(4), Regularizer.l1_nonneg(0.1), cfg)
        per_epoch = [size for _, size in sorted({(r.t, r.batch_size) for r in result.trace})]
        self.assertEqual(per_epoch[:3], [3, 7, 7])
        self.assertEqual(per_epoch, sorted(per_epoch))
        self.assertEqual(per_epoch[-1], 20)

    def test_step_lengths_bounded_below(self):
        matrix, data, problem = dense_problem(seed=1)
        cfg = SolverConfig(alpha0=1.0, N0=2, eps_ratio=0.9, epochs=30, seed=5)
        lipschitz = 0.0
        for size in range(1, 5):
            for subset in itertools.combinations(range(4), size):
                rows = np.concatenate([np.arange(2 * i, 2 * i + 2) for i in subset])
                block = matrix[rows]
                lipschitz = max(lipschitz, 4 / size * np.linalg.norm(block, 2) ** 2)
        result = solve(problem, np.zeros(4), Regularizer.l1_nonneg(0.1), cfg)
        for record in result.trace:
            self.assertGreaterEqual(record.alpha_accepted, min(1.0, cfg.beta / lipschitz) * (1 - 1e-12))
            self.assertLessEqual(record.alpha_accepted, 1.0)

    def test_full_batch_steps_and_backtracks_bounded(self):
        matrix, data, problem = dense_problem(seed=1)
        lipschitz = np.linalg.norm(matrix, 2) ** 2
        for alpha0 in (1.0, 50.0):
            with self.subTest(alpha0=alpha0):
                cfg = SolverConfig(alpha0=alpha0, N0=4, epochs=500)
                result = solve(problem, np.zeros(4), Regularizer.l1_nonneg(0.1), cfg)
                self.assertEqual(len(result.trace), 500)
                cap = max(0, math.ceil(math.log2(alpha0 * lipschitz)))
                for record in result.trace:
                    self.assertGreater(record.alpha_accepted, cfg.beta / lipschitz - 1e-12, record)
                    self.assertLessEqual(record.alpha_accepted, alpha0)
                    self.assertLessEqual(record.backtracks, cap, record)
                    self.assertFalse(record.grad_map_norm == 0.0 and record.backtracks > 0, record)

    def test_full_batch_regime_descends(self):
        config = case_config(1)
        simulation = simulate(config)
        cfg = SolverConfig(alpha0=1e-3, N0=36, mu=2.0, epochs=200, telemetry='full')
        result = fblisa_run(
            simulation.sinogram, simulation.sinogram.geometry, ImageGrid.from_layout(config.layout),
            Regularizer.l1_nonneg(cfg.mu), cfg,
        )
        self.assertEqual(set(result.batch_sizes()), {36})
        full = [record.full_objective for record in result.trace]
        self.assertEqual(len(full), 200)
        for before, after in zip(full, full[1:]):
            self.assertLessEqual(after, before + 1e-10)

    def test_gradient_map_vanishes(self):
        _, _, problem = dense_problem(seed=2)
        cfg = SolverConfig(alpha0=1.0, N0=4, epochs=2000)
        result = solve(problem, np.zeros(4), Regularizer.l1_nonneg(0.1), cfg)
        initial = result.trace[0].grad_map_norm
        self.assertGreater(initial, 0.0)
        self.assertLess(min(r.grad_map_norm for r in result.trace), 1e-4 * initial)

    def test_full_batch_ignores_seed_and_matches_fixed_batch(self):
        layout, geometry, truth, sinogram = disks_problem()
        reg = Regularizer.l1_nonneg(0.1)
        runs = [
            runner(sinogram, geometry, ImageGrid.from_layout(layout), reg, SolverConfig(alpha0=1.0, N0=8, epochs=100, seed=seed))
            for runner, seed in ((fblisa_run, 0), (fblisa_run, 9), (proxsgd_run, 4))
        ]
        self.assertEqual(len(runs[0].trace), 100)
        for other in runs[1:]:
            self.assertEqual(other.trace, runs[0].trace)
            assert_array_equal(other.x_final.values, runs[0].x_final.values)

    def test_iterates_stay_feasible(self):
        layout, geometry, truth, sinogram = disks_problem()
        seen = []
        fblisa_run(
            sinogram, geometry, ImageGrid.from_layout(layout), Regularizer.l1_nonneg(0.1),
            SolverConfig(alpha0=1.0, N0=2, epochs=5), callback=lambda record, x: seen.append(x.min()),
        )
        self.assertTrue(seen)
        self.assertGreaterEqual(min(seen), 0.0)

    def test_same_seed_same_trace(self):
        layout, geometry, truth, sinogram = disks_problem()
        cfg = SolverConfig(alpha0=1.0, N0=2, epochs=4, seed=11)
        runs = [
            fblisa_run(sinogram, geometry, ImageGrid.from_layout(layout), Regularizer.l1_nonneg(0.1), cfg, threads=threads)
            for threads in (1, 3)
        ]
        self.assertEqual(runs[0].trace, runs[1].trace)
        assert_array_equal(runs[0].x_final.values, runs[1].x_final.values)

    def test_geometry_mismatch_rejected(self):
        layout, geometry, truth, sinogram = disks_problem()
        _, other = parallel_setup(16, 6)
        with self.assertRaises(ValueError):
            fblisa_run(sinogram, other, ImageGrid.from_layout(layout), Regularizer.zero(), SolverConfig(N0=2))

    def test_abort_on_first_iteration_keeps_record(self):
        _, _, problem = dense_problem()
        cfg = SolverConfig(alpha0=1e6, max_backtracks=2, N0=4)
        result = solve(problem, np.zeros(4), Regularizer.zero(), cfg)
        self.assertTrue(result.aborted)
        self.assertEqual(result.termination, Termination.BACKTRACK_CAP_HIT)
        self.assertEqual(len(result.trace), 1)
        self.assertEqual(result.trace[0].backtracks, 3)
        assert_array_equal(result.x_final, np.zeros(4))

    def test_time_budget_stops_after_crossing(self):
        layout, geometry, truth, sinogram = disks_problem()
        cfg = SolverConfig(alpha0=1.0, N0=2, epochs=1000, time_budget=0.2)
        result = fblisa_run(
            sinogram, geometry, ImageGrid.from_layout(layout), Regularizer.l1_nonneg(0.1), cfg,
            clock=WorkClock(1e-3),
        )
        self.assertEqual(result.termination, Termination.TIME_BUDGET)
        self.assertLess(result.trace[-2].elapsed, 0.2)
        self.assertGreaterEqual(result.trace[-1].elapsed, 0.2)

    def test_checkpoints_capture_first_iterate_past_mark(self):
        _, _, problem = dense_problem()
        seen = []
        marks = (0.01, 0.05, 100.0)
        result = solve(
            problem, np.zeros(4), Regularizer.l1_nonneg(0.1), SolverConfig(alpha0=1.0, N0=2, epochs=10),
            clock=WorkClock(1e-3), checkpoints=marks, callback=lambda record, x: seen.append((record.elapsed, x.copy())),
        )
        self.assertEqual(tuple(result.snapshots), marks)
        for mark in marks[:2]:
            expected = next(x for elapsed, x in seen if elapsed >= mark)
            assert_array_equal(result.snapshots[mark], expected)
        assert_array_equal(result.snapshots[100.0], result.x_final)

    def test_unknown_method_and_clock(self):
        _, _, problem = dense_problem()
        with self.assertRaises(ValueError):
            solve(problem, np.zeros(4), Regularizer.zero(), SolverConfig(N0=2), method='sgd')
        with self.assertRaises(ValueError):
            make_clock('cpu')


class BaselineTests(SimpleTestCase):
    def test_fb_first_step_from_zero(self):
        layout, geometry, truth, sinogram = disks_problem()
        problem = BlockLeastSquares.from_sinogram(sinogram, layout)
        alpha, mu = 1e-3, 0.5
        result = fb_run(
            sinogram, geometry, ImageGrid.from_layout(layout), Regularizer.l1_nonneg(mu),
            SolverConfig(alpha0=alpha, epochs=1),
        )
        _, grad = problem.value_and_grad(np.zeros(layout.size), problem.full_subset())
        assert_allclose(result.x_final.values, np.maximum(-alpha * grad - alpha * mu, 0.0), rtol=1e-12, atol=1e-15)
        self.assertEqual(result.trace[0].batch_size, 8)
        self.assertEqual(result.trace[0].backtracks, 0)

    def test_fb_matches_dense_iteration(self):
        matrix, data, problem = dense_problem(seed=3)
        alpha, mu = 0.05, 0.2
        result = solve(
            problem, np.zeros(4), Regularizer.l1_nonneg(mu), SolverConfig(alpha0=alpha, epochs=50, N0=1), method='fb'
        )
        x = np.zeros(4)
        for _ in range(50):
            x = np.maximum(x - alpha * matrix.T @ (matrix @ x - data) - alpha * mu, 0.0)
        self.assertEqual(len(result.trace), 50)
        assert_allclose(result.x_final, x, rtol=1e-10, atol=1e-12)

    def test_fb_warns_when_step_is_too_large(self):
        problem = BlockLeastSquares.from_dense(np.eye(4), np.ones(4), 4)
        cfg = SolverConfig(alpha0=3.0, epochs=10, N0=1, lipschitz_estimate=1.0)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter('always')
            solve(problem, np.zeros(4), Regularizer.zero(), cfg, method='fb')
        messages = [str(w.message) for w in caught if issubclass(w.category, RuntimeWarning)]
        self.assertTrue(any('2/L' in m for m in messages), messages)
        self.assertTrue(any('subió' in m for m in messages), messages)

    def test_proxsgd_keeps_batch_fixed(self):
        layout, geometry, truth, sinogram = disks_problem()
        result = proxsgd_run(
            sinogram, geometry, ImageGrid.from_layout(layout), Regularizer.l1_nonneg(0.1),
            SolverConfig(alpha0=1.0, N0=2, epochs=6),
        )
        self.assertEqual(set(result.batch_sizes()), {2})
        self.assertEqual(len(result.trace), 6 * 4)

    def test_growing_batch_beats_fixed_batch_on_inconsistent_data(self):
        matrix, data, problem = dense_problem(seed=4, n_blocks=20)
        x_star = np.linalg.lstsq(matrix, data, rcond=None)[0]
        optimum = problem.full_value(x_star)
        for seed in range(3):
            with self.subTest(seed=seed):
                cfg = SolverConfig(alpha0=1.0, N0=2, eps_ratio=0.9, epochs=60, seed=seed)
                growing = solve(problem, np.zeros(4), Regularizer.zero(), cfg)
                fixed = solve(problem, np.zeros(4), Regularizer.zero(), cfg, method='proxsgd')
                self.assertEqual(growing.batch_sizes()[-1], 20)
                gap_growing = problem.full_value(growing.x_final) - optimum
                gap_fixed = problem.full_value(fixed.x_final) - optimum
                self.assertLess(gap_growing, gap_fixed / 10)


class ObjectiveTests(SimpleTestCase):
    def test_infeasible_point_is_infinite(self):
        _, _, problem = dense_problem()
        self.assertEqual(full_objective(problem, -np.ones(4), Regularizer.l1_nonneg(1.0)), math.inf)

    def test_full_value_does_not_advance_work_clock(self):
        _, _, problem = dense_problem()
        clock = WorkClock(1.0)
        clock.start(problem)
        full_objective(problem, np.ones(4), Regularizer.l1_nonneg(1.0))
        self.assertEqual(clock.elapsed(), 0.0)

    def test_sinogram_objective_matches_dense_matrix(self):
        rng = np.random.default_rng(6)
        layout, geometry = parallel_setup(4, 3)
        dense = assemble_dense(geometry, layout)
        x = random_image(layout, rng)
        b = Sinogram(geometry, rng.standard_normal(geometry.n_measurements))
        expected = 0.5 * np.sum((dense @ x.values - b.values) ** 2) + 0.3 * np.sum(x.values)
        assert_allclose(sinogram_objective(x, b, geometry, Regularizer.l1_nonneg(0.3)), expected, rtol=1e-12)

    def test_sinogram_objective_edge_cases(self):
        layout, geometry = parallel_setup(4, 3)
        zeros = Sinogram(geometry, np.zeros(geometry.n_measurements))
        reg = Regularizer.l1_nonneg(1.0)
        self.assertEqual(sinogram_objective(ImageGrid.from_layout(layout), zeros, geometry, reg), 0.0)
        negative = ImageGrid.from_layout(layout, -np.ones(layout.size))
        self.assertEqual(sinogram_objective(negative, zeros, geometry, reg), math.inf)
        _, other = parallel_setup(4, 5)
        with self.assertRaises(ValueError):
            sinogram_objective(ImageGrid.from_layout(layout), zeros, other, reg)


class TraceCsvTests(SimpleTestCase):
    def test_round_trip_and_reproducible_bytes(self):
        layout, geometry, truth, sinogram = disks_problem()
        cfg = SolverConfig(alpha0=1.0, N0=2, epochs=3, seed=7)
        with tempfile.TemporaryDirectory() as tmp:
            paths = []
            for name in ('a.csv', 'b.csv'):
                result = fblisa_run(sinogram, geometry, ImageGrid.from_layout(layout), Regularizer.l1_nonneg(0.1), cfg)
                paths.append(write_trace_csv(Path(tmp) / name, result.trace))
            self.assertEqual(paths[0].read_bytes(), paths[1].read_bytes())
            self.assertEqual(tuple(read_trace_csv(paths[0])), result.trace)
            header = paths[0].read_text().splitlines()[0]
            self.assertEqual(header, 'k,t,batch_size,alpha_accepted,backtracks,sub_objective,full_objective,grad_map_norm,elapsed_s')

import math
import threading
import unittest
from dataclasses import replace

import numpy as np

from photonic_sync.errors import ConfigError, InsufficientHeralds
from photonic_sync.simulator import (BsaOutcome, ControllerConfig, DriftModel, FeedbackController,
                                     RandomWalkStream, SimulationConfig, Simulator, apply_overrides, bsa_measure,
                                     drift_value, end_to_end_rate_analytic, estimate_delta, feedback_step,
                                     grid_points, run, run_document, run_sweep, stream_for, swap_probability)
from photonic_sync.strategies import capability_of
from photonic_sync.timing_solver import TimingVariable, VariableKind, apply_assignment, build_constraints, solve
from tests.libs import chain, config, shipped, with_link, with_node


class StreamsTest(unittest.TestCase):

    def test_streams_are_reproducible_and_independent(self):
        a = stream_for(3, 'emit:S1').random(5)
        b = stream_for(3, 'emit:S1').random(5)
        c = stream_for(3, 'emit:S2').random(5)
        np.testing.assert_array_equal(a, b)
        self.assertFalse(np.array_equal(a, c))


class DriftTest(unittest.TestCase):

    def test_models(self):
        self.assertEqual(drift_value(DriftModel.static('s', 40), 10 ** 9), 40.0)
        self.assertAlmostEqual(drift_value(DriftModel.linear('l', 1e-6), 10 ** 6), 1.0)
        sine = DriftModel.sinusoidal('w', 1000, 10 ** 7)
        self.assertAlmostEqual(drift_value(sine, 2500000), 1000.0)
        self.assertAlmostEqual(drift_value(sine, 5000000), 0.0, places=6)
        with self.assertRaises(ValueError):
            drift_value(sine, -1)

    def test_random_walk_is_lazy_and_seeded(self):
        model = DriftModel.random_walk('r', 5.0, 1000)
        first = RandomWalkStream(stream_for(1, 'drift:x'), model.step_std)
        second = RandomWalkStream(stream_for(1, 'drift:x'), model.step_std)
        self.assertEqual(drift_value(model, 0, first), 0.0)
        late = drift_value(model, 50000, first)
        self.assertEqual(drift_value(model, 50000, second), late)
        self.assertEqual(drift_value(model, 50999, first), late)

    def test_random_walk_variance_grows_linearly(self):
        k, step_std = 100, 5.0
        ends = [RandomWalkStream(stream_for(seed, 'drift:walk'), step_std).value_at_step(k) for seed in range(2000)]
        expected = k * step_std ** 2
        self.assertLess(abs(np.var(ends) - expected) / expected, 0.1)

    def test_problems(self):
        self.assertTrue(DriftModel.sinusoidal('w', 0, 10).problems())
        self.assertTrue(DriftModel.random_walk('r', 1.0, 0).problems())
        self.assertEqual(DriftModel.linear('l', 0.5).problems(), [])


class MeasurementTest(unittest.TestCase):

    def test_swap_probability(self):
        self.assertEqual(swap_probability(0, 0.8, 50), 0.8)
        self.assertAlmostEqual(swap_probability(50, 1.0, 50), math.exp(-0.5))

    def test_bsa_measure(self):
        rng = np.random.default_rng(0)
        self.assertFalse(bsa_measure(None, 10, 100, 1.0, 50, rng).coincidence)
        outside = bsa_measure(300, 0, 100, 1.0, 50, rng)
        self.assertFalse(outside.coincidence)
        self.assertEqual(outside.delta, 300)
        inside = bsa_measure(0, 0, 100, 1.0, 50, rng, bsa='I1', slot=4)
        self.assertTrue(inside.coincidence)
        self.assertTrue(inside.swap_success)
        self.assertEqual((inside.bsa, inside.slot), ('I1', 4))

    def test_estimate_delta(self):
        outcomes = [BsaOutcome('I1', i, d, True, ok) for i, (d, ok) in enumerate([(10, True), (99, False),
                                                                                  (20, True), (30, True)])]
        self.assertEqual(estimate_delta(outcomes, 2), 25.0)
        self.assertEqual(estimate_delta(outcomes, 3), 20.0)
        with self.assertRaises(InsufficientHeralds):
            estimate_delta(outcomes, 4)

    def test_analytic_rate(self):
        self.assertEqual(end_to_end_rate_analytic(0.5, 2), 0.25)
        self.assertAlmostEqual(end_to_end_rate_analytic(1.0, 3, [0.5, 0.5]), 0.25)
        with self.assertRaises(ConfigError):
            end_to_end_rate_analytic(1.5, 2)


class FeedbackStepTest(unittest.TestCase):

    def controller(self, gain=1.0, max_step=1000):
        left = TimingVariable('odl:I1:0', VariableKind.ODL_DELAY, 'I1', (0, 100), port=0)
        right = TimingVariable('odl:I1:1', VariableKind.ODL_DELAY, 'I1', (0, 100), port=1)
        return FeedbackController('I1', gain, 20, max_step, (left, right))

    def test_later_port_gives_up_delay_first(self):
        updates, saturated = feedback_step(self.controller(), 30, {'odl:I1:0': 50, 'odl:I1:1': 0})
        self.assertEqual(updates, {'odl:I1:0': 20})
        self.assertFalse(saturated)

    def test_remainder_goes_to_earlier_port(self):
        updates, saturated = feedback_step(self.controller(), 30, {'odl:I1:0': 10, 'odl:I1:1': 0})
        self.assertEqual(updates, {'odl:I1:0': 0, 'odl:I1:1': 20})
        self.assertFalse(saturated)

    def test_saturation(self):
        updates, saturated = feedback_step(self.controller(), -60, {'odl:I1:0': 90, 'odl:I1:1': 0})
        self.assertEqual(updates, {'odl:I1:0': 100})
        self.assertTrue(saturated)

    def test_step_is_clamped(self):
        updates, _ = feedback_step(self.controller(gain=0.5, max_step=5), 40, {'odl:I1:0': 0, 'odl:I1:1': 0})
        self.assertEqual(updates, {'odl:I1:1': 5})

    def test_bad_gain(self):
        with self.assertRaises(ConfigError):
            self.controller(gain=0.0)


class ConfigTest(unittest.TestCase):

    def test_defaults(self):
        cfg = SimulationConfig()
        self.assertEqual((cfg.slots, cfg.p_gen, cfg.p0, cfg.sigma, cfg.window), (1000, 1.0, 1.0, 50, None))
        self.assertEqual(cfg.check(), cfg)

    def test_problems(self):
        with self.assertRaises(ConfigError):
            SimulationConfig(p_gen=1.5).check()
        with self.assertRaises(ConfigError):
            SimulationConfig(controller=ControllerConfig(gain=2.0)).check()

    def test_overrides(self):
        cfg = apply_overrides(SimulationConfig(), {'p_gen': 0.3, 'controller.gain': 0.25})
        self.assertEqual(cfg.p_gen, 0.3)
        self.assertEqual(cfg.controller.gain, 0.25)
        with self.assertRaises(ConfigError):
            apply_overrides(SimulationConfig(), {'warp': 9})

    def test_grid_points(self):
        self.assertEqual(grid_points({}), [{}])
        self.assertEqual(grid_points({'b': [1, 2], 'a': [0]}), [{'a': 0, 'b': 1}, {'a': 0, 'b': 2}])


class RunTest(unittest.TestCase):

    def test_symmetric_always_swaps(self):
        metrics = run(chain('DSISD'), 'quantum-odl', config(slots=500))
        self.assertEqual(metrics.coincidences['I1'], 500)
        self.assertEqual(metrics.swaps['I1'], 500)
        self.assertEqual(metrics.end_to_end, 500)
        self.assertEqual(metrics.detections, {'D1': 500, 'D2': 500})

    def test_no_generation_no_swaps(self):
        metrics = run(chain('DSISD'), 'quantum-odl', config(slots=300, p_gen=0.0))
        self.assertEqual(metrics.summary()['swaps'], {'I1': 0})
        self.assertEqual(metrics.end_to_end, 0)

    def test_outside_window(self):
        topo = with_node(chain('DSISD'), 'I1', odl_settings=(150, 0))
        metrics = run(topo, 'quantum-odl', config(slots=200))
        self.assertEqual(metrics.coincidences.get('I1', 0), 0)

    def test_gaussian_swap_law(self):
        topo = with_node(chain('DSISD'), 'I1', odl_settings=(50, 0))
        metrics = run(topo, 'quantum-odl', config(slots=20000), seed=4)
        p = math.exp(-0.5)
        rate = metrics.swaps['I1'] / metrics.coincidences['I1']
        self.assertEqual(metrics.coincidences['I1'], 20000)
        self.assertLess(abs(rate - p), 3 * math.sqrt(p * (1 - p) / 20000))

    def test_end_to_end_rate_matches_analytic(self):
        slots = 20000
        metrics = run(chain('DSISD'), 'quantum-odl', config(slots=slots, p_gen=0.5), seed=11)
        expected = end_to_end_rate_analytic(0.5, 2)
        self.assertLess(abs(metrics.end_to_end / slots - expected), 3 * math.sqrt(expected * (1 - expected) / slots))

    def test_same_seed_same_metrics(self):
        cfg = config(slots=2000, p_gen=0.7, record_photons=True)
        topo = chain('DSISISD')
        a = run(topo, 'quantum-odl', cfg, seed=5)
        b = run(topo, 'quantum-odl', cfg, seed=5)
        c = run(topo, 'quantum-odl', cfg, seed=6)
        self.assertEqual(a.summary(), b.summary())
        self.assertEqual(a.photons, b.photons)
        self.assertNotEqual(a.summary(), c.summary())

    def test_intervals(self):
        metrics = run(chain('DSISD'), 'quantum-odl', config(slots=2500, report_interval=1000))
        self.assertEqual([(r['start_slot'], r['end_slot']) for r in metrics.intervals],
                         [(0, 1000), (1000, 2000), (2000, 2500)])
        self.assertEqual(metrics.intervals[0]['mean_delta_ps'], 0.0)

    def test_modulo_pairing_after_solution(self):
        topo = with_link(chain('DSISD'), 'q-S1-I1', extra_fixed_delay=25300)
        result = solve(build_constraints(topo, capability_of('freq-sync', topo)))
        metrics = run(apply_assignment(topo, result), 'freq-sync', config(slots=1000))
        self.assertEqual(metrics.coincidences['I1'], 1000 - 16)
        self.assertEqual(metrics.swaps['I1'], 1000 - 16)
        self.assertEqual({d for _, d in metrics.deltas['I1']}, {0})

    def test_modulo_delta_is_taken_after_the_shift(self):
        topo = with_link(chain('DSISD'), 'q-S1-I1', extra_fixed_delay=25300)
        sim = Simulator(topo, 'freq-sync', config(slots=50, window=10 ** 6))
        self.assertEqual(sim.shifts['I1'], 25)
        self.assertEqual(sim.nominal_delta('I1'), 300)
        metrics = sim.run()
        self.assertEqual(metrics.coincidences['I1'], 50 - 25)
        self.assertEqual({d for _, d in metrics.deltas['I1']}, {300})

    def test_triggered_sources_follow_pump_setting(self):
        topo = with_link(chain('DSISD'), 'q-S2-I1', extra_fixed_delay=250)
        result = solve(build_constraints(topo, capability_of('pump-path', topo)))
        metrics = run(apply_assignment(topo, result), 'pump-path', config(slots=300))
        self.assertEqual(metrics.swaps['I1'], 300)
        self.assertEqual(metrics.final_settings, {'pump:c-I1-S1': 250, 'pump:c-I1-S2': 0})


class FeedbackRunTest(unittest.TestCase):

    def test_controller_removes_static_offset(self):
        topo = with_link(chain('DSISD'), 'q-S1-I1', drift_ref='offset')
        cfg = config(slots=3000, controller=ControllerConfig(gain=0.5, estimate_window=20, max_step=1000))
        metrics = run(topo, 'quantum-odl', cfg, seed=2, drift_models=(DriftModel.static('offset', 60),))
        self.assertEqual(metrics.final_settings['odl:I1:1'], 59)
        self.assertEqual(metrics.final_settings['odl:I1:0'], 0)
        self.assertGreater(metrics.controller_updates['I1'], 5)
        self.assertEqual(metrics.saturations, {})

    def test_tracks_sinusoidal_drift(self):
        doc = shipped('fig7_continuous')
        for seed in range(5):
            with self.subTest(seed=seed):
                metrics = run_document(doc, seed, replace(doc.simulation, slots=12000))
                worst = max(r['max_abs_delta_ps'] for r in metrics.intervals[2:])
                self.assertLess(worst, 100)
                self.assertGreater(metrics.swaps['I1'], 0.5 * 12000)

    def test_without_controller_drift_breaks_coincidence(self):
        doc = shipped('fig7_continuous')
        cfg = replace(doc.simulation, slots=12000, controller=None)
        metrics = run_document(doc, 0, cfg)
        self.assertLess(metrics.coincidences['I1'], 0.5 * 12000)

    def test_shared_fiber_reuses_drift(self):
        topo = with_link(chain('DSISD'), 'q-S1-I1', drift_ref='walk')
        topo = with_link(topo, 'c-I1-S1', shares_fiber_with='q-S1-I1')
        sim = Simulator(topo, 'pump-path', config(slots=10), 3, (DriftModel.random_walk('walk', 20.0, 1000),))
        base_q = sim.base_delay['q-S1-I1']
        base_c = sim.base_delay['c-I1-S1']
        for t in (0, 5000, 123456):
            self.assertEqual(sim.link_delay('q-S1-I1', t) - base_q, sim.link_delay('c-I1-S1', t) - base_c)


class CrossCheckTest(unittest.TestCase):

    def test_solved_chains_are_exact(self):
        rng = np.random.default_rng(2024)
        for _ in range(50):
            bsas = int(rng.integers(2, 6))
            topo = chain('DS' + 'IS' * bsas + 'D', odl_range=300 * 10 ** 6)
            for link in topo.quantum_links():
                if link.tail.node.startswith('I'):
                    topo = with_link(topo, link.id, length=float(rng.uniform(1000, 50000)))
            result = solve(build_constraints(topo, capability_of('quantum-odl', topo)))
            self.assertTrue(result.feasible)
            metrics = run(apply_assignment(topo, result), 'quantum-odl', config(slots=20))
            for bsa in metrics.bsas:
                self.assertEqual(metrics.coincidences[bsa], 20)
                self.assertEqual({d for _, d in metrics.deltas[bsa]}, {0})


class HopDecayTest(unittest.TestCase):

    def check_rate(self, text, sources):
        slots = 10 ** 6
        metrics = run(chain(text), 'quantum-odl', config(slots=slots, p_gen=0.05), seed=9)
        expected = end_to_end_rate_analytic(0.05, sources)
        stderr = math.sqrt(expected * (1 - expected) / slots)
        self.assertLess(abs(metrics.all_sources_fired / slots - expected), 3 * stderr)

    def test_two_sources(self):
        self.check_rate('DSISD', 2)

    def test_three_sources(self):
        self.check_rate('DSISISD', 3)


class SwapLawTest(unittest.TestCase):

    def test_monte_carlo_matches_gaussian(self):
        trials = 10 ** 5
        for delta in (0, 50, 100):
            rng = stream_for(0, 'swap-law:%d' % delta)
            hits = sum(bsa_measure(delta, 0, 1000, 1.0, 50, rng).swap_success for _ in range(trials))
            p = swap_probability(delta, 1.0, 50)
            stderr = math.sqrt(max(p * (1 - p), 1e-12) / trials)
            self.assertLessEqual(abs(hits / trials - p), 3 * stderr + 1e-12)


class SweepTest(unittest.TestCase):

    def test_order_and_parallel_determinism(self):
        doc = shipped('dsisd_symmetric')
        doc = replace(doc, simulation=replace(doc.simulation, slots=300))
        grid = {'p_gen': [0.5, 1.0]}
        serial = run_sweep(doc, [0, 1], grid, jobs=1)
        parallel = run_sweep(doc, [0, 1], grid, jobs=3)
        self.assertEqual([(s, p) for s, p, _ in serial],
                         [(0, {'p_gen': 0.5}), (0, {'p_gen': 1.0}), (1, {'p_gen': 0.5}), (1, {'p_gen': 1.0})])
        self.assertEqual([m.summary() for _, _, m in serial], [m.summary() for _, _, m in parallel])
        self.assertEqual(serial[1][2].swaps['I1'], 300)

    def test_sweeps_leave_no_workers_behind(self):
        doc = shipped('dsisd_symmetric')
        doc = replace(doc, simulation=replace(doc.simulation, slots=50))
        before = threading.active_count()
        for _ in range(3):
            run_sweep(doc, [0, 1], jobs=4)
        self.assertEqual(threading.active_count(), before)

    def test_bad_parameter_fails_before_running(self):
        with self.assertRaises(ConfigError):
            run_sweep(shipped('dsisd_symmetric'), [0], {'p_gen': [2.0]}, jobs=1)


if __name__ == '__main__':
    unittest.main()

import unittest
from types import SimpleNamespace

from photonic_sync.errors import BoundsViolation, CapabilityMismatch, NotACycle, UnknownVariable
from photonic_sync.strategies import capability_of
from photonic_sync.timing_solver import (BoundsCertificate, ConstraintMode, InfeasibilityCertificate,
                                         TimingAssignment, TimingVariable, VariableKind, apply_assignment,
                                         assignment_deltas, build_constraints, cycle_imbalance, solve,
                                         topology_variables, variable_sharing_graph)
from photonic_sync.topology import propagation_delay_ps
from tests.libs import chain, grid_feasible_per_bsa, shipped, with_link


def solve_for(topo, strategy, epsilon=1):
    return solve(build_constraints(topo, capability_of(strategy, topo)), epsilon)


class VariablesTest(unittest.TestCase):

    def test_dsisd_variables(self):
        variables = topology_variables(chain('DSISD'))
        self.assertEqual(sorted(variables), sorted(['offset:S1', 'offset:S2', 'pump:c-I1-S1', 'pump:c-I1-S2',
                                                    'odl:I1:0', 'odl:I1:1']))
        self.assertEqual(variables['offset:S1'].bounds, (0, 999))
        self.assertEqual(variables['odl:I1:1'].bounds, (0, 10000))
        self.assertFalse(variables['odl:I1:0'].shared)
        self.assertTrue(variables['pump:c-I1-S2'].shared)

    def test_capability_must_match_topology(self):
        ghost = TimingVariable('odl:I9:0', VariableKind.ODL_DELAY, 'I9', (0, 10), port=0)
        with self.assertRaises(CapabilityMismatch):
            build_constraints(chain('DSISD'), SimpleNamespace(variables=(ghost,)))

    def test_one_constraint_per_bsa(self):
        system = build_constraints(chain('DSISISISD'), capability_of('quantum-odl', chain('DSISISISD')))
        self.assertEqual([c.bsa for c in system.constraints], ['I1', 'I2', 'I3'])
        self.assertEqual(system.constraints[0].variables(), ('odl:I1:0', 'odl:I1:1'))


class SolveTest(unittest.TestCase):

    def test_symmetric_needs_nothing(self):
        result = solve_for(chain('DSISD'), 'quantum-odl')
        self.assertTrue(result.feasible)
        self.assertEqual(result.values['odl:I1:0'], 0)
        self.assertEqual(result.values['odl:I1:1'], 0)
        self.assertEqual(result.residuals, {'I1': 0})

    def test_asymmetric_short_side_gets_delay(self):
        topo = shipped('dsisd_asymmetric').topology
        result = solve_for(topo, 'quantum-odl')
        expected = propagation_delay_ps(topo.link('q-S2-I1')) - propagation_delay_ps(topo.link('q-S1-I1'))
        self.assertTrue(result.feasible)
        self.assertEqual(result.values['odl:I1:0'], expected)
        self.assertEqual(result.values['odl:I1:1'], 0)
        self.assertAlmostEqual(expected * 1e-12, 9.793e-6, delta=1e-9)
        self.assertEqual(result.residuals['I1'], 0)

    def test_emission_offset_moves_later_source_only(self):
        topo = with_link(chain('DSISD'), 'q-S1-I1', extra_fixed_delay=300)
        result = solve_for(topo, 'emission-offset')
        self.assertEqual(result.values['offset:S1'], 0)
        self.assertEqual(result.values['offset:S2'], 300)

    def test_pump_path_adjusts_trigger_delay(self):
        topo = with_link(chain('DSISD'), 'q-S2-I1', extra_fixed_delay=250)
        result = solve_for(topo, 'pump-path')
        self.assertTrue(result.feasible)
        self.assertEqual(result.values['pump:c-I1-S1'], 250)
        self.assertEqual(result.values['pump:c-I1-S2'], 0)

    def test_exact_solution_preferred_over_tolerance(self):
        topo = with_link(chain('DSISD'), 'q-S1-I1', extra_fixed_delay=37)
        result = solve_for(topo, 'quantum-odl', epsilon=50)
        self.assertEqual(result.residuals['I1'], 0)
        self.assertEqual(result.values['odl:I1:1'], 37)

    def test_chain_solution_satisfies_every_bsa(self):
        topo = chain('DSISISISD', length=2000.0, rep_period=10000)
        topo = with_link(topo, 'q-S2-I2', length=2001.0)
        topo = with_link(topo, 'q-S4-I3', length=1999.5)
        system = build_constraints(topo, capability_of('emission-offset', topo))
        result = solve(system, 1)
        self.assertTrue(result.feasible)
        for con in system.constraints:
            self.assertLessEqual(abs(con.delta(result.values)), 1)

    def test_negative_epsilon_rejected(self):
        with self.assertRaises(ValueError):
            solve_for(chain('DSISD'), 'quantum-odl', epsilon=-1)


class CertificateTest(unittest.TestCase):

    def test_triangle_cycle(self):
        topo = shipped('triangle_cycle').topology
        result = solve_for(topo, 'quantum-odl')
        self.assertIsInstance(result, InfeasibilityCertificate)
        self.assertFalse(result.feasible)
        self.assertEqual(result.fixed_imbalance, 10000)
        self.assertEqual(result.total_adjustable_range, 6000)
        self.assertEqual(set(result.bsas), {'I1', 'I2', 'I3'})
        self.assertEqual(cycle_imbalance(topo, list(result.cycle)), result.fixed_imbalance)
        self.assertTrue(result.holds())

    def test_triangle_grid_oracle_agrees(self):
        topo = shipped('triangle_cycle').topology
        self.assertFalse(all(grid_feasible_per_bsa(topo, step=100).values()))

    def test_fig8_cycle(self):
        topo = shipped('fig8_cycle').topology
        result = solve_for(topo, 'quantum-odl')
        self.assertIsInstance(result, InfeasibilityCertificate)
        self.assertEqual(result.fixed_imbalance, 10000)
        self.assertEqual(result.total_adjustable_range, 4000)
        self.assertEqual(len(result.cycle), 10)
        self.assertEqual(cycle_imbalance(topo, list(result.cycle)), 10000)
        self.assertTrue(result.holds())
        self.assertFalse(all(grid_feasible_per_bsa(topo, step=100).values()))

    def test_loop_stays_infeasible_with_offsets(self):
        topo = shipped('triangle_cycle').topology
        self.assertIsInstance(solve_for(topo, 'emission-offset'), InfeasibilityCertificate)

    def test_bounds_certificate(self):
        topo = with_link(chain('DSISD'), 'q-S1-I1', extra_fixed_delay=25300)
        result = solve_for(topo, 'quantum-odl')
        self.assertIsInstance(result, BoundsCertificate)
        self.assertEqual(result.bsa, 'I1')
        self.assertEqual(result.required_adjustment, 25300)
        self.assertEqual(result.available, (-10000, 10000))
        self.assertEqual(result.to_records()[0]['kind'], 'bounds')


class ModuloPeriodTest(unittest.TestCase):

    def test_whole_periods_are_free(self):
        topo = with_link(chain('DSISD'), 'q-S1-I1', extra_fixed_delay=25300)
        system = build_constraints(topo, capability_of('freq-sync', topo))
        self.assertEqual(system.mode, ConstraintMode.MODULO_PERIOD)
        result = solve(system, 1)
        self.assertTrue(result.feasible)
        self.assertEqual(result.period_shifts, {'I1': 16000})
        self.assertEqual(result.values['odl:I1:0'], 0)
        self.assertEqual(result.values['odl:I1:1'], 9300)
        self.assertEqual(result.residuals['I1'], 0)


class CycleImbalanceTest(unittest.TestCase):

    def test_balanced_loop(self):
        topo = shipped('triangle_cycle').topology
        topo = with_link(topo, 'q-S1-I1', extra_fixed_delay=0)
        cycle = ['q-S1-I1', 'q-S2-I1', 'q-S2-I2', 'q-S3-I2', 'q-S3-I3', 'q-S1-I3']
        self.assertEqual(cycle_imbalance(topo, cycle), 0)

    def test_direction_flips_sign(self):
        topo = shipped('triangle_cycle').topology
        cycle = ['q-S1-I1', 'q-S2-I1', 'q-S2-I2', 'q-S3-I2', 'q-S3-I3', 'q-S1-I3']
        self.assertEqual(cycle_imbalance(topo, cycle), 10000)
        self.assertEqual(cycle_imbalance(topo, list(reversed(cycle))), -10000)

    def test_not_a_cycle(self):
        topo = shipped('triangle_cycle').topology
        with self.assertRaises(NotACycle):
            cycle_imbalance(topo, ['q-S1-I1'])
        with self.assertRaises(NotACycle):
            cycle_imbalance(topo, ['q-S1-I1', 'q-S3-I2'])
        with self.assertRaises(NotACycle):
            cycle_imbalance(topo, ['q-S1-I1', 'q-S2-I1', 'q-S2-I2'])
        with self.assertRaises(NotACycle):
            cycle_imbalance(chain('DSISD'), ['q-S1-I1', 'c-I1-S1'])


class ApplyTest(unittest.TestCase):

    def test_apply_then_resolve_is_stable(self):
        topo = shipped('dsisd_asymmetric').topology
        first = solve_for(topo, 'quantum-odl')
        applied = apply_assignment(topo, first)
        self.assertEqual(applied.node('I1').odl_settings[0], first.values['odl:I1:0'])
        second = solve_for(applied, 'quantum-odl')
        self.assertEqual(set(assignment_deltas(applied, second).values()), {0})

    def test_rejects_unknown_and_out_of_bounds(self):
        topo = chain('DSISD')
        with self.assertRaises(UnknownVariable):
            apply_assignment(topo, TimingAssignment({'odl:I9:0': 0}, {}))
        with self.assertRaises(BoundsViolation):
            apply_assignment(topo, TimingAssignment({'odl:I1:0': -5}, {}))
        with self.assertRaises(UnknownVariable):
            assignment_deltas(topo, TimingAssignment({'offset:S7': 0}, {}))


class SharingGraphTest(unittest.TestCase):

    def test_odl_never_shared(self):
        topo = chain('DSISISISD')
        graph = variable_sharing_graph(build_constraints(topo, capability_of('quantum-odl', topo)))
        self.assertEqual(graph.number_of_edges(), 0)
        fixed = variable_sharing_graph(build_constraints(topo, capability_of('quantum-odl', topo)),
                                       include_fixed=True)
        self.assertEqual(fixed.number_of_edges(), 2)

    def test_offsets_shared_along_chain(self):
        topo = chain('DSISISISD')
        graph = variable_sharing_graph(build_constraints(topo, capability_of('emission-offset', topo)))
        self.assertEqual(sorted(tuple(sorted(e)) for e in graph.edges()), [('I1', 'I2'), ('I2', 'I3')])
        self.assertEqual(graph['I1']['I2']['variables'], ['offset:S2'])


if __name__ == '__main__':
    unittest.main()

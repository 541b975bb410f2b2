import unittest

from photonic_sync.errors import ConfigError, GrammarError
from photonic_sync.topology import (ChannelKind, Endpoint, Link, MemoryMode, NetworkTopology, NodeKind, NodeSpec,
                                    bsa_inputs, id_key, length_for_delay, memory_segments, parse_chain_notation,
                                    path_delay_ps, perturb_link, photon_paths, place_memories, propagation_delay,
                                    propagation_delay_ps, quantum_path, trigger_link, validate_topology)
from tests.libs import chain


class ChainNotationTest(unittest.TestCase):

    def test_dsisd_layout(self):
        topo = chain('DSISD')
        self.assertEqual([n.id for n in topo.nodes], ['D1', 'S1', 'I1', 'S2', 'D2'])
        self.assertEqual(len(topo.quantum_links()), 4)
        self.assertEqual(len(topo.control_links()), 4)
        self.assertEqual(topo.link('q-S1-I1').tail, Endpoint('I1', 0))
        self.assertEqual(topo.link('q-S2-I1').tail, Endpoint('I1', 1))
        self.assertEqual(topo.link('c-I1-S2').channel_kind, ChannelKind.CONTROL)
        self.assertEqual(validate_topology(topo), [])

    def test_dsd_has_no_bsa(self):
        topo = chain('DSD')
        self.assertEqual((len(topo.sources), len(topo.bsas), len(topo.quantum_links())), (1, 0, 2))

    def test_grammar_position(self):
        with self.assertRaises(GrammarError) as ctx:
            chain('DDS')
        self.assertEqual(ctx.exception.position, 2)

    def test_longer_chain_counts(self):
        topo = chain('DSISISISD')
        self.assertEqual([s.id for s in topo.sources], ['S1', 'S2', 'S3', 'S4'])
        self.assertEqual([b.id for b in topo.bsas], ['I1', 'I2', 'I3'])
        self.assertEqual(validate_topology(topo), [])

    def test_memory_chain_partners(self):
        topo = parse_chain_notation('MSM|MSM')
        self.assertEqual(topo.node('M2').partner, 'M3')
        self.assertEqual(topo.node('M3').partner, 'M2')
        self.assertIsNone(topo.node('M1').partner)
        self.assertTrue(topo.node('M1').memory_mode.is_hold)
        self.assertEqual(len(memory_segments(topo)), 2)
        self.assertEqual(validate_topology(topo), [])

    def test_natural_id_order(self):
        self.assertEqual(sorted(['S10', 'S2', 'S1', 'I3'], key=id_key), ['I3', 'S1', 'S2', 'S10'])


class DelayTest(unittest.TestCase):

    def test_ten_km(self):
        link = chain('DSISD').link('q-S1-I1')
        self.assertAlmostEqual(propagation_delay_ps(link), 48967209, delta=2)
        self.assertAlmostEqual(propagation_delay(link), 4.8967209e-5, delta=1e-11)

    def test_twelve_versus_ten_km(self):
        topo = chain('DSISD')
        short = topo.link('q-S1-I1')
        diff = propagation_delay_ps(Link('x', short.endpoints, length=12000.0)) - propagation_delay_ps(short)
        self.assertAlmostEqual(diff * 1e-12, 9.793e-6, delta=1e-9)

    def test_one_light_second(self):
        link = Link('x', (Endpoint('S1'), Endpoint('I1')), length=299792458.0, group_index=1.0)
        self.assertEqual(propagation_delay(link), 1.0)
        self.assertEqual(propagation_delay_ps(link), 10 ** 12)

    def test_extra_fixed_delay_adds(self):
        link = Link('x', (Endpoint('S1'), Endpoint('I1')), length=0.0, extra_fixed_delay=250)
        self.assertEqual(propagation_delay_ps(link), 250)

    def test_length_for_delay_inverts(self):
        link = chain('DSISD', length=1234.0).link('q-S1-I1')
        self.assertAlmostEqual(length_for_delay(propagation_delay_ps(link)), 1234.0, delta=1e-3)


class PathTest(unittest.TestCase):

    def test_bsa_inputs(self):
        topo = chain('DSISISD')
        inputs = bsa_inputs(topo)
        self.assertEqual(inputs['I1'][0].source, 'S1')
        self.assertEqual(inputs['I1'][1].source, 'S2')
        self.assertEqual(inputs['I2'][0].source, 'S2')
        self.assertEqual(inputs['I2'][1].source, 'S3')
        self.assertEqual(quantum_path(topo, 'S2', 'I2', 0), ['q-S2-I2'])
        with self.assertRaises(ConfigError):
            quantum_path(topo, 'S1', 'I2', 0)

    def test_detector_paths(self):
        terminals = sorted(p.terminal for p in photon_paths(chain('DSISD')))
        self.assertEqual(terminals, ['D1', 'D2', 'I1', 'I1'])

    def test_trigger_is_lowest_adjacent_bsa(self):
        topo = chain('DSISISD')
        self.assertEqual(trigger_link(topo, 'S2').id, 'c-I1-S2')
        self.assertEqual(trigger_link(topo, 'S3').id, 'c-I2-S3')

    def test_perturb(self):
        topo = chain('DSISD')
        longer = perturb_link(topo, 'q-S1-I1', 2.5)
        self.assertEqual(longer.link('q-S1-I1').length, 10002.5)
        self.assertEqual(topo.link('q-S1-I1').length, 10000.0)
        with self.assertRaises(ConfigError):
            perturb_link(topo, 'q-S1-I1', -20000.0)
        with self.assertRaises(ConfigError):
            perturb_link(topo, 'nope', 1.0)


class MemoryPlacementTest(unittest.TestCase):

    def test_fixed_buffer_in_line(self):
        topo = place_memories(chain('DSISD'), {'S1': MemoryMode.fixed_delay(500)})
        self.assertEqual(validate_topology(topo), [])
        path = bsa_inputs(topo)['I1'][0]
        self.assertEqual(path.memories, ('MS1',))
        self.assertEqual(path.links, ('q-S1-MS1', 'q-MS1-I1'))
        self.assertEqual(path_delay_ps(topo, path), propagation_delay_ps(chain('DSISD').link('q-S1-I1')) + 500)

    def test_hold_splits_source(self):
        topo = place_memories(chain('DSISISD'), {'S2': MemoryMode.hold_until_ready()})
        self.assertEqual(validate_topology(topo), [])
        self.assertFalse(topo.has_node('S2'))
        self.assertEqual(topo.node('MS2a').partner, 'MS2b')
        inputs = bsa_inputs(topo)
        self.assertEqual(inputs['I1'][1].source, 'S2a')
        self.assertEqual(inputs['I2'][0].source, 'S2b')
        self.assertTrue(topo.has_link('c-I1-S2a'))
        self.assertEqual(len(memory_segments(topo)), 2)

    def test_unknown_source(self):
        with self.assertRaises(ConfigError):
            place_memories(chain('DSISD'), {'S9': MemoryMode.hold_until_ready()})


class ValidationTest(unittest.TestCase):

    def subjects(self, topo):
        return [v.subject for v in validate_topology(topo)]

    def test_bsa_needs_two_inputs(self):
        topo = chain('DSISD')
        topo = NetworkTopology(topo.nodes, tuple(l for l in topo.links if l.id != 'q-S2-I1'))
        self.assertIn('I1', self.subjects(topo))

    def test_duplicate_and_dangling(self):
        topo = chain('DSISD')
        nodes = topo.nodes + (NodeSpec('S1', NodeKind.SOURCE, rep_period=1000),)
        links = topo.links + (Link('q-S1-X', (Endpoint('S1', 0), Endpoint('X9', 0))),)
        subjects = self.subjects(NetworkTopology(nodes, links))
        self.assertIn('S1', subjects)
        self.assertIn('q-S1-X', subjects)

    def test_mixed_rep_periods(self):
        topo = chain('DSISD')
        nodes = tuple(NodeSpec(n.id, n.kind, rep_period=2000) if n.id == 'S2' else n for n in topo.nodes)
        self.assertIn('sources', self.subjects(NetworkTopology(nodes, topo.links)))

    def test_odl_setting_outside_bounds(self):
        topo = chain('DSISD')
        bsa = topo.node('I1')
        broken = NodeSpec(bsa.id, bsa.kind, coincidence_window=100, odl_bounds=bsa.odl_bounds,
                          odl_settings=(0, 10 ** 9))
        self.assertIn('I1', self.subjects(topo.replace_node(broken)))

    def test_group_index_below_one(self):
        topo = chain('DSISD')
        slow = topo.replace_link(Link('q-S1-I1', topo.link('q-S1-I1').endpoints, length=10.0, group_index=0.5))
        self.assertIn('q-S1-I1', self.subjects(slow))

    def test_quantum_link_out_of_bsa(self):
        topo = chain('DSISD')
        links = topo.links + (Link('q-I1-D1', (Endpoint('I1', 0), Endpoint('D1', 0))),)
        self.assertIn('q-I1-D1', self.subjects(NetworkTopology(topo.nodes, links)))


if __name__ == '__main__':
    unittest.main()

"""Scenario files: JSON documents describing a network and how to run it.

Every time quantity is written with a unit, either {"value": 10, "unit": "ns"}
or "10ns", and is held as integer picoseconds once loaded.  Lengths are
plain meters.  See README.md for the full schema.
"""
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

from photonic_sync.errors import ConfigError, ScenarioError, ScenarioParseError
from photonic_sync.notation_parser.notation import format_quantity, parse_quantity
from photonic_sync.simulator import ControllerConfig, DriftModel, SimulationConfig
from photonic_sync.strategies import StrategyKind
from photonic_sync.timing_solver import DEFAULT_EPSILON
from photonic_sync.topology import (DEFAULT_GROUP_INDEX, DEFAULT_ODL_RANGE, DEFAULT_REP_PERIOD, DEFAULT_WINDOW,
                                    ChannelKind, Endpoint, Link, MemoryMode, NetworkTopology,
                                    NodeKind, NodeSpec, Violation, id_key, parse_chain_notation, parse_path_notation,
                                    place_memories, validate_topology)

logger = logging.getLogger(__name__)

SCENARIO_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'scenarios')

TOP_KEYS = {'name', 'description', 'notation', 'notation_defaults', 'nodes', 'links', 'drift_models',
            'strategy', 'simulation', 'memory', 'output'}
NOTATION_KEYS = {'link_length_m', 'group_index', 'rep_period', 'coincidence_window', 'odl_range'}
NODE_KEYS = {
    NodeKind.SOURCE: {'id', 'kind', 'rep_period', 'emission_offset'},
    NodeKind.BSA: {'id', 'kind', 'coincidence_window', 'odl_bounds', 'odl_settings'},
    NodeKind.MEMORY: {'id', 'kind', 'mode', 'coherence_time', 'capture_efficiency', 'release_efficiency',
                      'partner'},
    NodeKind.DETECTOR: {'id', 'kind'},
}
LINK_KEYS = {'id', 'from', 'to', 'channel', 'length_m', 'group_index', 'extra_fixed_delay', 'drift',
             'pump_bounds', 'pump_setting', 'shares_fiber_with'}
DRIFT_KEYS = {
    'Static': {'id', 'kind', 'offset'},
    'Linear': {'id', 'kind', 'rate'},
    'Sinusoidal': {'id', 'kind', 'amplitude', 'period', 'phase'},
    'RandomWalk': {'id', 'kind', 'step_std', 'step_interval'},
}
STRATEGY_KEYS = {'name', 'epsilon'}
SIMULATION_KEYS = {'slots', 'rep_period', 'p_gen', 'p0', 'sigma', 'window', 'controller', 'drift',
                   'report_interval', 'record_photons', 'p_swap_mem', 'seed'}
CONTROLLER_KEYS = {'gain', 'estimate_window', 'max_step'}
MEMORY_KEYS = {'placement'}
MODE_KEYS = {'kind', 'delay', 'max_hold'}


@dataclass
class ScenarioDocument:
    topology: NetworkTopology
    strategy: StrategyKind = StrategyKind.QUANTUM_ODL
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    drift_models: Tuple[DriftModel, ...] = ()
    memory_placement: Dict[str, MemoryMode] = field(default_factory=dict)
    output: dict = field(default_factory=dict)
    epsilon: int = DEFAULT_EPSILON
    name: Optional[str] = None
    description: Optional[str] = None
    base_topology: Optional[NetworkTopology] = None

    @property
    def hash(self):
        return scenario_hash(dump_scenario(self))


class _Reader(object):
    """Walks the raw JSON, collecting unknown keys along the way."""

    def __init__(self, lenient):
        self.lenient = lenient
        self.unknown = []

    def keys(self, where, data, allowed):
        if not isinstance(data, dict):
            raise ScenarioParseError('%s must be an object, got %r' % (where, data))
        for key in sorted(set(data) - allowed):
            self.unknown.append(Violation(where, 'unknown key %r' % key))

    def require(self, where, data, key):
        if key not in data:
            raise ScenarioParseError('%s is missing %r' % (where, key))
        return data[key]

    @staticmethod
    def time(value, default=None):
        if value is None:
            return default
        return parse_quantity(value)

    @staticmethod
    def interval(where, value):
        if not isinstance(value, (list, tuple)) or len(value) != 2:
            raise ScenarioParseError('%s must be a [lo, hi] pair' % where)
        return parse_quantity(value[0]), parse_quantity(value[1])

    def mode(self, where, data):
        self.keys(where, data, MODE_KEYS)
        kind = self.require(where, data, 'kind')
        if kind == MemoryMode.FIXED:
            return MemoryMode.fixed_delay(self.time(data.get('delay'), 0))
        if kind == MemoryMode.HOLD:
            return MemoryMode.hold_until_ready(self.time(data.get('max_hold')))
        raise ScenarioParseError('%s: unknown memory mode %r' % (where, kind))

    def node(self, data):
        node_id = self.require('node', data, 'id')
        where = 'node %s' % node_id
        try:
            kind = NodeKind(self.require(where, data, 'kind'))
        except ValueError:
            raise ScenarioParseError('%s: unknown kind %r' % (where, data.get('kind')))
        self.keys(where, data, NODE_KEYS[kind])
        if kind == NodeKind.SOURCE:
            return NodeSpec(node_id, kind, rep_period=self.time(data.get('rep_period')),
                            emission_offset=self.time(data.get('emission_offset'), 0))
        if kind == NodeKind.BSA:
            bounds = tuple(self.interval(where, b) for b in data.get('odl_bounds', ()))
            settings = tuple(parse_quantity(s) for s in data.get('odl_settings', ()))
            return NodeSpec(node_id, kind, coincidence_window=self.time(data.get('coincidence_window')),
                            odl_bounds=bounds, odl_settings=settings)
        if kind == NodeKind.MEMORY:
            mode = self.mode(where + ' mode', data['mode']) if 'mode' in data else None
            return NodeSpec(node_id, kind, memory_mode=mode, coherence_time=self.time(data.get('coherence_time')),
                            capture_efficiency=float(data.get('capture_efficiency', 1.0)),
                            release_efficiency=float(data.get('release_efficiency', 1.0)),
                            partner=data.get('partner'))
        return NodeSpec(node_id, kind)

    def endpoint(self, where, data):
        self.keys(where, data, {'node', 'port'})
        return Endpoint(self.require(where, data, 'node'), int(data.get('port', 0)))

    def link(self, data):
        link_id = self.require('link', data, 'id')
        where = 'link %s' % link_id
        self.keys(where, data, LINK_KEYS)
        try:
            channel = ChannelKind(data.get('channel', ChannelKind.QUANTUM.value))
        except ValueError:
            raise ScenarioParseError('%s: unknown channel %r' % (where, data.get('channel')))
        pump_bounds = self.interval(where, data['pump_bounds']) if data.get('pump_bounds') is not None else None
        return Link(link_id,
                    (self.endpoint(where + ' from', self.require(where, data, 'from')),
                     self.endpoint(where + ' to', self.require(where, data, 'to'))),
                    channel, float(data.get('length_m', 0.0)), float(data.get('group_index', DEFAULT_GROUP_INDEX)),
                    self.time(data.get('extra_fixed_delay'), 0), data.get('drift'), pump_bounds,
                    self.time(data.get('pump_setting'), 0), data.get('shares_fiber_with'))

    def drift(self, data):
        model_id = self.require('drift model', data, 'id')
        where = 'drift model %s' % model_id
        kind = self.require(where, data, 'kind')
        if kind not in DRIFT_KEYS:
            raise ScenarioParseError('%s: unknown kind %r' % (where, kind))
        self.keys(where, data, DRIFT_KEYS[kind])
        if kind == 'Static':
            return DriftModel.static(model_id, self.time(data.get('offset'), 0))
        if kind == 'Linear':
            return DriftModel.linear(model_id, float(data.get('rate', 0.0)))
        if kind == 'Sinusoidal':
            return DriftModel.sinusoidal(model_id, self.time(self.require(where, data, 'amplitude')),
                                         self.time(self.require(where, data, 'period')),
                                         float(data.get('phase', 0.0)))
        return DriftModel.random_walk(model_id, self.time(self.require(where, data, 'step_std')),
                                      self.time(self.require(where, data, 'step_interval')))

    def simulation(self, data):
        self.keys('simulation', data, SIMULATION_KEYS)
        controller = None
        if data.get('controller') is not None:
            ctrl = data['controller']
            self.keys('simulation.controller', ctrl, CONTROLLER_KEYS)
            defaults = ControllerConfig()
            controller = ControllerConfig(float(ctrl.get('gain', defaults.gain)),
                                          int(ctrl.get('estimate_window', defaults.estimate_window)),
                                          self.time(ctrl.get('max_step'), defaults.max_step))
        defaults = SimulationConfig()
        drift = data.get('drift', {})
        if not isinstance(drift, dict):
            raise ScenarioParseError('simulation.drift must map link ids to drift model ids')
        return SimulationConfig(
            slots=int(data.get('slots', defaults.slots)),
            rep_period=self.time(data.get('rep_period')),
            p_gen=float(data.get('p_gen', defaults.p_gen)),
            p0=float(data.get('p0', defaults.p0)),
            sigma=self.time(data.get('sigma'), defaults.sigma),
            window=self.time(data.get('window')),
            controller=controller,
            drift=tuple(sorted(drift.items(), key=lambda kv: id_key(kv[0]))),
            report_interval=int(data.get('report_interval', defaults.report_interval)),
            record_photons=bool(data.get('record_photons', defaults.record_photons)),
            p_swap_mem=float(data.get('p_swap_mem', defaults.p_swap_mem)),
            seed=int(data.get('seed', defaults.seed)))


def _read_source(source):
    if isinstance(source, dict):
        return source
    if isinstance(source, bytes):
        source = source.decode('utf-8')
    text = source
    if not source.lstrip().startswith('{'):
        path = shipped_scenario_path(source) if not os.path.exists(source) else source
        try:
            with open(path, 'r', encoding='utf-8') as f:
                text = f.read()
        except OSError as e:
            raise ScenarioParseError('cannot read scenario %s: %s' % (source, e))
    try:
        data = json.loads(text)
    except ValueError as e:
        raise ScenarioParseError('scenario is not valid JSON: %s' % e)
    if not isinstance(data, dict):
        raise ScenarioParseError('scenario must be a JSON object')
    return data


def shipped_scenario_path(name):
    """Path of a scenario shipped with the package, e.g. 'fig5_chain4'."""
    base = name[:-5] if name.endswith('.json') else name
    return os.path.join(SCENARIO_DIR, base + '.json')


def shipped_scenarios():
    return sorted(f[:-5] for f in os.listdir(SCENARIO_DIR) if f.endswith('.json'))


def load_scenario(source, lenient=False, validate=True):
    """Reads a scenario from a path, a shipped name, JSON text or a dict."""
    data = _read_source(source)
    reader = _Reader(lenient)
    reader.keys('scenario', data, TOP_KEYS)

    if 'notation' in data:
        defaults = data.get('notation_defaults', {})
        reader.keys('notation_defaults', defaults, NOTATION_KEYS)
        text = data['notation']
        builder = parse_chain_notation if ('|' in text or 'M' in text) else parse_path_notation
        topo = builder(text, default_link_length=float(defaults.get('link_length_m', 10000.0)),
                       group_index=float(defaults.get('group_index', DEFAULT_GROUP_INDEX)),
                       rep_period=reader.time(defaults.get('rep_period'), DEFAULT_REP_PERIOD),
                       window=reader.time(defaults.get('coincidence_window'), DEFAULT_WINDOW),
                       odl_range=reader.time(defaults.get('odl_range'), DEFAULT_ODL_RANGE))
        if 'nodes' in data or 'links' in data:
            raise ScenarioParseError('give either "notation" or "nodes"/"links", not both')
    else:
        nodes = [reader.node(n) for n in reader.require('scenario', data, 'nodes')]
        links = [reader.link(l) for l in data.get('links', [])]
        topo = NetworkTopology(tuple(nodes), tuple(links))

    drift_models = tuple(reader.drift(d) for d in data.get('drift_models', []))

    strategy_data = data.get('strategy', StrategyKind.QUANTUM_ODL.value)
    epsilon = DEFAULT_EPSILON
    if isinstance(strategy_data, dict):
        reader.keys('strategy', strategy_data, STRATEGY_KEYS)
        epsilon = reader.time(strategy_data.get('epsilon'), DEFAULT_EPSILON)
        strategy_data = reader.require('strategy', strategy_data, 'name')

    simulation = reader.simulation(data.get('simulation', {}))

    placement = {}
    if data.get('memory') is not None:
        reader.keys('memory', data['memory'], MEMORY_KEYS)
        for source_id, mode in sorted(data['memory'].get('placement', {}).items(), key=lambda kv: id_key(kv[0])):
            placement[source_id] = reader.mode('memory.placement.%s' % source_id, mode)

    violations = list(reader.unknown)
    if reader.unknown and lenient:
        for v in reader.unknown:
            logger.warning('ignoring %s', v)
        violations = []
    strategy = None
    try:
        strategy = StrategyKind.parse(strategy_data)
    except ConfigError as e:
        violations.append(Violation('strategy', str(e)))

    base = topo
    if placement:
        try:
            topo = place_memories(topo, placement)
        except ConfigError as e:
            violations.append(Violation('memory', str(e)))
    if validate:
        violations += validate_topology(topo)
        ids = [m.id for m in drift_models]
        for model in drift_models:
            violations += [Violation('drift model %s' % model.id, p) for p in model.problems()]
        for link_id, model_id in simulation.drift:
            if model_id not in ids:
                violations.append(Violation('simulation.drift', 'unknown drift model %s' % model_id))
        for link in topo.links:
            if link.drift_ref is not None and link.drift_ref not in ids:
                violations.append(Violation(link.id, 'unknown drift model %s' % link.drift_ref))
        violations += [Violation('simulation', p) for p in simulation.problems()]
    if violations:
        raise ScenarioError(violations)

    return ScenarioDocument(topo, strategy, simulation, drift_models, placement, dict(data.get('output', {})),
                            epsilon, data.get('name'), data.get('description'), base)


def _dump_mode(mode):
    if mode.is_fixed:
        return {'kind': mode.kind, 'delay': format_quantity(mode.delay)}
    out = {'kind': mode.kind}
    if mode.max_hold is not None:
        out['max_hold'] = format_quantity(mode.max_hold)
    return out


def _dump_node(node):
    out = {'id': node.id, 'kind': node.kind.value}
    if node.kind == NodeKind.SOURCE:
        if node.rep_period is not None:
            out['rep_period'] = format_quantity(node.rep_period)
        out['emission_offset'] = format_quantity(node.emission_offset)
    elif node.kind == NodeKind.BSA:
        if node.coincidence_window is not None:
            out['coincidence_window'] = format_quantity(node.coincidence_window)
        out['odl_bounds'] = [[format_quantity(lo), format_quantity(hi)] for lo, hi in node.odl_bounds]
        out['odl_settings'] = [format_quantity(s) for s in node.odl_settings]
    elif node.kind == NodeKind.MEMORY:
        if node.memory_mode is not None:
            out['mode'] = _dump_mode(node.memory_mode)
        if node.coherence_time is not None:
            out['coherence_time'] = format_quantity(node.coherence_time)
        out['capture_efficiency'] = node.capture_efficiency
        out['release_efficiency'] = node.release_efficiency
        if node.partner is not None:
            out['partner'] = node.partner
    return out


def _dump_link(link):
    out = {'id': link.id,
           'from': {'node': link.head.node, 'port': link.head.port},
           'to': {'node': link.tail.node, 'port': link.tail.port},
           'channel': link.channel_kind.value,
           'length_m': link.length,
           'group_index': link.group_index,
           'extra_fixed_delay': format_quantity(link.extra_fixed_delay),
           'pump_setting': format_quantity(link.pump_setting)}
    if link.drift_ref is not None:
        out['drift'] = link.drift_ref
    if link.pump_bounds is not None:
        out['pump_bounds'] = [format_quantity(b) for b in link.pump_bounds]
    if link.shares_fiber_with is not None:
        out['shares_fiber_with'] = link.shares_fiber_with
    return out


def _dump_drift(model):
    out = {'id': model.id, 'kind': model.kind}
    if model.kind == 'Static':
        out['offset'] = format_quantity(model.offset)
    elif model.kind == 'Linear':
        out['rate'] = model.rate
    elif model.kind == 'Sinusoidal':
        out.update(amplitude=format_quantity(int(round(model.amplitude))), period=format_quantity(model.period),
                   phase=model.phase)
    else:
        out.update(step_std=format_quantity(int(round(model.step_std))),
                   step_interval=format_quantity(model.step_interval))
    return out


def _dump_simulation(config):
    out = {'slots': config.slots, 'p_gen': config.p_gen, 'p0': config.p0, 'sigma': format_quantity(config.sigma),
           'report_interval': config.report_interval, 'record_photons': config.record_photons,
           'p_swap_mem': config.p_swap_mem, 'seed': config.seed}
    if config.rep_period is not None:
        out['rep_period'] = format_quantity(config.rep_period)
    if config.window is not None:
        out['window'] = format_quantity(config.window)
    if config.controller is not None:
        out['controller'] = {'gain': config.controller.gain, 'estimate_window': config.controller.estimate_window,
                             'max_step': format_quantity(config.controller.max_step)}
    if config.drift:
        out['drift'] = dict(config.drift)
    return out


def scenario_dict(doc):
    topo = doc.base_topology or doc.topology
    out = {}
    if doc.name is not None:
        out['name'] = doc.name
    if doc.description is not None:
        out['description'] = doc.description
    out['nodes'] = [_dump_node(n) for n in topo.nodes]
    out['links'] = [_dump_link(l) for l in topo.links]
    out['drift_models'] = [_dump_drift(m) for m in doc.drift_models]
    out['strategy'] = {'name': doc.strategy.value, 'epsilon': format_quantity(doc.epsilon)}
    out['simulation'] = _dump_simulation(doc.simulation)
    if doc.memory_placement:
        out['memory'] = {'placement': {s: _dump_mode(m) for s, m in doc.memory_placement.items()}}
    if doc.output:
        out['output'] = dict(doc.output)
    return out


def dump_scenario(doc):
    """Canonical JSON text; loading it back yields the same document."""
    return json.dumps(scenario_dict(doc), indent=2, sort_keys=True, ensure_ascii=False) + '\n'


def scenario_hash(content):
    if isinstance(content, str):
        content = content.encode('utf-8')
    return hashlib.sha256(content).hexdigest()

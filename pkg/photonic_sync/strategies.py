"""Coordination strategies and the cascade / PSD analysis built on them."""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import FrozenSet, Optional, Tuple

import networkx as nx

from photonic_sync.errors import BaselineInfeasible, ConfigError
from photonic_sync.timing_solver import (DEFAULT_EPSILON, ConstraintMode, VariableKind, build_constraints, solve,
                                         topology_variables, variable_sharing_graph)
from photonic_sync.topology import NodeKind, bsa_inputs, id_key, perturb_link, photon_paths

logger = logging.getLogger(__name__)


class StrategyKind(str, Enum):
    PUMP_PATH = 'pump-path'
    QUANTUM_ODL = 'quantum-odl'
    EMISSION_OFFSET = 'emission-offset'
    FREQ_SYNC = 'freq-sync'
    COMBINED_12 = 'combined-1-2'

    @classmethod
    def parse(cls, name):
        if isinstance(name, cls):
            return name
        for kind in cls:
            if name in (kind.value, kind.name, ALIASES[kind]):
                return kind
        raise ConfigError('unknown strategy %r, expected one of %s' % (name, ', '.join(k.value for k in cls)))


ALIASES = {
    StrategyKind.PUMP_PATH: 'PumpPathAdjust',
    StrategyKind.QUANTUM_ODL: 'QuantumPathAdjustAtBsa',
    StrategyKind.EMISSION_OFFSET: 'EmissionOffsetAdjust',
    StrategyKind.FREQ_SYNC: 'FrequencySyncQuantumAdjust',
    StrategyKind.COMBINED_12: 'Combined12',
}

# strategy -> (adjustable kinds, commanding node per kind, constraint mode, sources triggered over control links)
CAPABILITY_TABLE = {
    StrategyKind.PUMP_PATH: (
        {VariableKind.PUMP_PATH_DELAY: 'bsa'}, ConstraintMode.EXACT, True),
    StrategyKind.QUANTUM_ODL: (
        {VariableKind.ODL_DELAY: 'bsa'}, ConstraintMode.EXACT, False),
    StrategyKind.EMISSION_OFFSET: (
        {VariableKind.EMISSION_OFFSET: 'source'}, ConstraintMode.EXACT, False),
    StrategyKind.FREQ_SYNC: (
        {VariableKind.ODL_DELAY: 'bsa'}, ConstraintMode.MODULO_PERIOD, False),
    StrategyKind.COMBINED_12: (
        {VariableKind.PUMP_PATH_DELAY: 'bsa', VariableKind.ODL_DELAY: 'bsa'}, ConstraintMode.EXACT, True),
}


@dataclass(frozen=True)
class StrategyCapability:
    strategy: StrategyKind
    adjustable: FrozenSet[VariableKind]
    controllers: Tuple[Tuple[VariableKind, str], ...]
    constraint_mode: ConstraintMode
    triggered: bool
    variables: Tuple = ()

    def controller_of(self, kind):
        return dict(self.controllers)[kind]


def capability_of(strategy, topo):
    """Instantiates a strategy's capability table on the topology's variables."""
    strategy = StrategyKind.parse(strategy)
    controllers, mode, triggered = CAPABILITY_TABLE[strategy]
    variables = tuple(var for vid, var in sorted(topology_variables(topo).items(), key=lambda kv: id_key(kv[0]))
                      if var.kind in controllers)
    return StrategyCapability(strategy, frozenset(controllers), tuple(sorted(controllers.items())), mode,
                              triggered, variables)


@dataclass
class CascadeReport:
    strategy: StrategyKind
    perturbed_link: str
    delta_length: float
    affected_variables: Tuple[str, ...] = ()
    affected_bsas: Tuple[str, ...] = ()
    cascade_depth: int = 0
    psd_partition: list = field(default_factory=list)
    infeasible: bool = False
    certificate: Optional[object] = None

    def to_records(self):
        record = {'record': 'cascade', 'strategy': self.strategy.value, 'perturbed_link': self.perturbed_link,
                  'delta_length_m': self.delta_length, 'affected_variables': list(self.affected_variables),
                  'affected_bsas': list(self.affected_bsas), 'cascade_depth': self.cascade_depth,
                  'psd_partition': [list(cell) for cell in self.psd_partition],
                  'infeasible_after_perturbation': self.infeasible}
        records = [record]
        if self.certificate is not None:
            records += self.certificate.to_records()
        return records


def _quantum_nodes(topo):
    nodes = set()
    for link in topo.quantum_links():
        nodes.add(link.head.node)
        nodes.add(link.tail.node)
    return nodes


def psd_of(topo, strategy):
    """Photonic synchronization domains: nodes that must be coordinated together.

    A BSA is joined to sources that only it constrains, and to the owners
    of every adjustable shared variable in its constraint.  Detectors and
    hold memories follow their source once that source is coupled.

    A source feeding two BSAs is joined to neither unless one of its own
    variables is adjustable; under quantum-odl it stays a singleton, and
    so does an interior BSA whose two feeders are both shared.  Cells
    never depend on node ids, so relabeling a chain only relabels cells.
    """
    caps = capability_of(strategy, topo)
    system = build_constraints(topo, caps)
    graph = nx.Graph()
    graph.add_nodes_from(sorted(_quantum_nodes(topo), key=id_key))

    fed = {}
    for con in system.constraints:
        for side in (con.left, con.right):
            fed.setdefault(side.source, set()).add(con.bsa)
    for con in system.constraints:
        for side in (con.left, con.right):
            if fed[side.source] == {con.bsa}:
                graph.add_edge(con.bsa, side.source)
        for vid in con.variables():
            var = system.variables[vid]
            if not var.shared:
                continue
            graph.add_edge(con.bsa, var.node)
            if var.kind == VariableKind.PUMP_PATH_DELAY:
                graph.add_edge(var.node, topo.link(var.link).head.node)

    for path in photon_paths(topo):
        terminal = topo.node(path.terminal) if topo.has_node(path.terminal) else None
        if terminal is None or terminal.kind == NodeKind.BSA:
            continue
        if graph.degree(path.source) > 0:
            graph.add_edge(path.source, path.terminal)
            for mem in path.memories:
                graph.add_edge(path.source, mem)
    for node in topo.memories:
        if node.memory_mode is not None and node.memory_mode.is_fixed and node.id in graph:
            downstream = [l.tail.node for l in topo.links_from(node.id)]
            for bsa in downstream:
                if topo.has_node(bsa) and topo.node(bsa).kind == NodeKind.BSA:
                    graph.add_edge(node.id, bsa)

    cells = [sorted(c, key=id_key) for c in nx.connected_components(graph)]
    return sorted(cells, key=lambda cell: id_key(cell[0]))


def adjacent_bsas(topo, link_id):
    """BSAs the link feeds directly or along a photon path, or that drive it."""
    link = topo.link(link_id)
    found = set()
    if link.is_quantum:
        for path in photon_paths(topo):
            if link_id in path.links and topo.node(path.terminal).kind == NodeKind.BSA:
                found.add(path.terminal)
    else:
        for end in link.endpoints:
            if topo.node(end.node).kind == NodeKind.BSA:
                found.add(end.node)
    return found


def _bsa_adjacency(topo):
    """BSAs joined when they receive photons from the same source."""
    graph = nx.Graph()
    feeders = {}
    for bsa, ports in bsa_inputs(topo).items():
        graph.add_node(bsa)
        for path in ports.values():
            feeders.setdefault(path.source, set()).add(bsa)
    for bsas in feeders.values():
        ordered = sorted(bsas, key=id_key)
        for i, a in enumerate(ordered):
            for b in ordered[i + 1:]:
                graph.add_edge(a, b)
    return graph


def _cascade(topo, caps, baseline, strategy, link_id, delta_length, epsilon, partition):
    perturbed = perturb_link(topo, link_id, delta_length)
    result = solve(build_constraints(perturbed, caps), epsilon)
    report = CascadeReport(strategy, link_id, delta_length, psd_partition=partition)
    if not result.feasible:
        logger.info('%s: infeasible after perturbing %s by %.3f m', strategy.value, link_id, delta_length)
        report.infeasible = True
        report.certificate = result
        return report

    system = build_constraints(topo, caps)
    affected = sorted((vid for vid, value in result.values.items()
                       if abs(value - baseline.values.get(vid, value)) > epsilon), key=id_key)
    affected_set = set(affected)
    bsas = sorted((con.bsa for con in system.constraints if affected_set & set(con.variables())), key=id_key)
    start = adjacent_bsas(topo, link_id)
    depth = 0
    if bsas:
        hops = nx.multi_source_dijkstra_path_length(_bsa_adjacency(topo), start) if start else {}
        depth = max(hops.get(b, 0) for b in bsas)
    report.affected_variables = tuple(affected)
    report.affected_bsas = tuple(bsas)
    report.cascade_depth = depth
    logger.debug('%s: %s %+0.3f m touches %s (depth %d)', strategy.value, link_id, delta_length,
                 ','.join(bsas) or '-', depth)
    return report


def _baseline(topo, strategy, epsilon):
    caps = capability_of(strategy, topo)
    baseline = solve(build_constraints(topo, caps), epsilon)
    if not baseline.feasible:
        raise BaselineInfeasible('%s has no feasible baseline on the unperturbed topology'
                                 % StrategyKind.parse(strategy).value)
    return caps, baseline


def analyze_cascade(topo, strategy, perturbed_link, delta_length, epsilon=DEFAULT_EPSILON):
    """Which variables and BSAs must move when one link changes length."""
    strategy = StrategyKind.parse(strategy)
    if not topo.has_link(perturbed_link):
        raise ConfigError('unknown link %s' % perturbed_link)
    caps, baseline = _baseline(topo, strategy, epsilon)
    return _cascade(topo, caps, baseline, strategy, perturbed_link, delta_length, epsilon, psd_of(topo, strategy))


def cascade_sweep(topo, strategy, perturbations, epsilon=DEFAULT_EPSILON):
    """analyze_cascade over (link id, delta_length) pairs sharing one baseline."""
    strategy = StrategyKind.parse(strategy)
    caps, baseline = _baseline(topo, strategy, epsilon)
    partition = psd_of(topo, strategy)
    reports = []
    for link_id, delta_length in perturbations:
        if not topo.has_link(link_id):
            raise ConfigError('unknown link %s' % link_id)
        reports.append(_cascade(topo, caps, baseline, strategy, link_id, delta_length, epsilon, partition))
    return reports


def sharing_graph(topo, strategy):
    """BSAs coupled through variables this strategy may adjust."""
    return variable_sharing_graph(build_constraints(topo, capability_of(strategy, topo)))

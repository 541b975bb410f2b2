"""Network topology: sources, BSA support nodes, memories, detectors and links.

All times are integer picoseconds; lengths are meters.
"""
import logging
import re
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, Optional, Tuple

import networkx as nx
from scipy.constants import c as SPEED_OF_LIGHT

from photonic_sync.errors import ConfigError
from photonic_sync.notation_parser.notation import ChainNotation, PathNotation

logger = logging.getLogger(__name__)

PS_PER_SECOND = 10 ** 12
DEFAULT_GROUP_INDEX = 1.468
DEFAULT_REP_PERIOD = 1000          # 1 ns
DEFAULT_WINDOW = 100               # 100 ps
DEFAULT_ODL_RANGE = 10000          # 10 ns


class NodeKind(str, Enum):
    SOURCE = 'Source'
    BSA = 'BsaSupport'
    MEMORY = 'Memory'
    DETECTOR = 'EndDetector'


class ChannelKind(str, Enum):
    QUANTUM = 'Quantum'
    CONTROL = 'ClassicalControl'


def id_key(identifier):
    """Natural ordering for ids, so S2 sorts before S10."""
    return [(0, int(part), '') if part.isdigit() else (1, 0, part)
            for part in re.split(r'(\d+)', identifier) if part]


@dataclass(frozen=True)
class MemoryMode:
    kind: str
    delay: int = 0
    max_hold: Optional[int] = None

    FIXED = 'FixedDelayBuffer'
    HOLD = 'HoldUntilReady'

    @classmethod
    def fixed_delay(cls, delay):
        return cls(cls.FIXED, delay=int(delay))

    @classmethod
    def hold_until_ready(cls, max_hold=None):
        return cls(cls.HOLD, max_hold=max_hold)

    @property
    def is_fixed(self):
        return self.kind == self.FIXED

    @property
    def is_hold(self):
        return self.kind == self.HOLD


@dataclass(frozen=True)
class NodeSpec:
    id: str
    kind: NodeKind
    rep_period: Optional[int] = None
    emission_offset: int = 0
    coincidence_window: Optional[int] = None
    odl_bounds: Tuple[Tuple[int, int], ...] = ()
    odl_settings: Tuple[int, ...] = ()
    coherence_time: Optional[int] = None       # None is an unlimited coherence time
    capture_efficiency: float = 1.0
    release_efficiency: float = 1.0
    memory_mode: Optional[MemoryMode] = None
    partner: Optional[str] = None

    def odl_setting(self, port):
        if port < len(self.odl_settings):
            return self.odl_settings[port]
        return self.odl_bounds[port][0] if port < len(self.odl_bounds) else 0


@dataclass(frozen=True)
class Endpoint:
    node: str
    port: int = 0


@dataclass(frozen=True)
class Link:
    id: str
    endpoints: Tuple[Endpoint, Endpoint]
    channel_kind: ChannelKind = ChannelKind.QUANTUM
    length: float = 0.0
    group_index: float = DEFAULT_GROUP_INDEX
    extra_fixed_delay: int = 0
    drift_ref: Optional[str] = None
    pump_bounds: Optional[Tuple[int, int]] = None
    pump_setting: int = 0
    shares_fiber_with: Optional[str] = None

    @property
    def head(self):
        return self.endpoints[0]

    @property
    def tail(self):
        return self.endpoints[1]

    @property
    def is_quantum(self):
        return self.channel_kind == ChannelKind.QUANTUM


@dataclass(frozen=True)
class PhotonPath:
    """Route of one photon from its source to the node that absorbs it."""
    source: str
    source_port: int
    links: Tuple[str, ...]
    terminal: str
    terminal_port: int
    memories: Tuple[str, ...] = ()


@dataclass(frozen=True)
class NetworkTopology:
    nodes: Tuple[NodeSpec, ...] = ()
    links: Tuple[Link, ...] = ()
    _node_index: Dict[str, NodeSpec] = field(default=None, compare=False, repr=False)
    _link_index: Dict[str, Link] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, 'nodes', tuple(self.nodes))
        object.__setattr__(self, 'links', tuple(self.links))
        object.__setattr__(self, '_node_index', {n.id: n for n in self.nodes})
        object.__setattr__(self, '_link_index', {l.id: l for l in self.links})

    def node(self, node_id):
        return self._node_index[node_id]

    def link(self, link_id):
        return self._link_index[link_id]

    def has_node(self, node_id):
        return node_id in self._node_index

    def has_link(self, link_id):
        return link_id in self._link_index

    def of_kind(self, kind):
        return sorted((n for n in self.nodes if n.kind == kind), key=lambda n: id_key(n.id))

    @property
    def sources(self):
        return self.of_kind(NodeKind.SOURCE)

    @property
    def bsas(self):
        return self.of_kind(NodeKind.BSA)

    @property
    def memories(self):
        return self.of_kind(NodeKind.MEMORY)

    def quantum_links(self):
        return [l for l in self.links if l.is_quantum]

    def control_links(self):
        return [l for l in self.links if not l.is_quantum]

    def links_from(self, node_id, quantum=True):
        return sorted((l for l in self.links if l.head.node == node_id and l.is_quantum == quantum),
                      key=lambda l: (l.head.port, id_key(l.id)))

    def links_into(self, node_id, quantum=True):
        return sorted((l for l in self.links if l.tail.node == node_id and l.is_quantum == quantum),
                      key=lambda l: (l.tail.port, id_key(l.id)))

    def rep_period(self):
        periods = {n.rep_period for n in self.sources if n.rep_period}
        return min(periods) if periods else DEFAULT_REP_PERIOD

    def replace_node(self, node):
        return replace(self, nodes=tuple(node if n.id == node.id else n for n in self.nodes))

    def replace_link(self, link):
        return replace(self, links=tuple(link if l.id == link.id else l for l in self.links))


def propagation_delay(link):
    """Fixed delay of a link in seconds: length * group_index / c + extra."""
    return link.length * link.group_index / SPEED_OF_LIGHT + link.extra_fixed_delay / PS_PER_SECOND


def propagation_delay_ps(link):
    return int(round(link.length * link.group_index * PS_PER_SECOND / SPEED_OF_LIGHT)) + int(link.extra_fixed_delay)


def length_for_delay(delay_ps, group_index=DEFAULT_GROUP_INDEX):
    """Fiber length (m) whose propagation delay is delay_ps."""
    return delay_ps * SPEED_OF_LIGHT / (group_index * PS_PER_SECOND)


def _q(head, hport, tail, tport, length, group_index):
    return Link('q-%s-%s' % (head, tail), (Endpoint(head, hport), Endpoint(tail, tport)),
                ChannelKind.QUANTUM, float(length), group_index)


def _c(head, hport, tail, tport, length, group_index):
    return Link('c-%s-%s' % (head, tail), (Endpoint(head, hport), Endpoint(tail, tport)),
                ChannelKind.CONTROL, float(length), group_index)


class ChainBuilder(object):
    """Numbers nodes along a chain and wires quantum plus parallel control links."""

    def __init__(self, default_link_length, group_index, rep_period, window, odl_range):
        self.length = default_link_length
        self.group_index = group_index
        self.rep_period = rep_period
        self.window = window
        self.odl_range = odl_range
        self.counters = {}
        self.nodes = []
        self.links = []

    def new_id(self, letter):
        self.counters[letter] = self.counters.get(letter, 0) + 1
        return '%s%d' % (letter, self.counters[letter])

    def add(self, symbol):
        node_id = self.new_id(symbol)
        if symbol == 'S':
            node = NodeSpec(node_id, NodeKind.SOURCE, rep_period=self.rep_period)
        elif symbol == 'I':
            node = NodeSpec(node_id, NodeKind.BSA, coincidence_window=self.window,
                            odl_bounds=((0, self.odl_range), (0, self.odl_range)),
                            odl_settings=(0, 0))
        elif symbol == 'M':
            node = NodeSpec(node_id, NodeKind.MEMORY, memory_mode=MemoryMode.hold_until_ready())
        else:
            node = NodeSpec(node_id, NodeKind.DETECTOR)
        self.nodes.append(node)
        return node

    def wire_segment(self, symbols):
        """Wires one segment; returns its (first, last) nodes."""
        chain = [self.add(s) for s in symbols]
        for i, node in enumerate(chain):
            if node.kind != NodeKind.SOURCE:
                continue
            for port, neighbour in ((0, chain[i - 1]), (1, chain[i + 1])):
                if neighbour.kind == NodeKind.BSA:
                    in_port = 1 if port == 0 else 0
                    self.links.append(_q(node.id, port, neighbour.id, in_port, self.length, self.group_index))
                    self.links.append(_c(neighbour.id, in_port, node.id, port, self.length, self.group_index))
                else:
                    self.links.append(_q(node.id, port, neighbour.id, 0, self.length, self.group_index))
                    self.links.append(_c(node.id, port, neighbour.id, 0, self.length, self.group_index))
        return chain[0], chain[-1]

    def build(self):
        return NetworkTopology(tuple(self.nodes), tuple(self.links))


def parse_path_notation(text, default_link_length=10000.0, group_index=DEFAULT_GROUP_INDEX,
                        rep_period=DEFAULT_REP_PERIOD, window=DEFAULT_WINDOW, odl_range=DEFAULT_ODL_RANGE):
    """Builds a linear chain from notation such as DSD, DSISD, DSISISD."""
    symbols = PathNotation(text).parse()
    builder = ChainBuilder(default_link_length, group_index, rep_period, window, odl_range)
    builder.wire_segment(symbols)
    return builder.build()


def parse_chain_notation(text, default_link_length=10000.0, group_index=DEFAULT_GROUP_INDEX,
                         rep_period=DEFAULT_REP_PERIOD, window=DEFAULT_WINDOW, odl_range=DEFAULT_ODL_RANGE):
    """Builds a memory chain such as MSM|MSM or DSISM|MSISD.

    Memories on both sides of a '|' sit at the same repeater node and
    are each other's swap partner.
    """
    segments = ChainNotation(text).parse()
    builder = ChainBuilder(default_link_length, group_index, rep_period, window, odl_range)
    ends = [builder.wire_segment(list(segment)) for segment in segments]
    partners = {}
    for (_, last), (first, _) in zip(ends, ends[1:]):
        partners[last.id] = first.id
        partners[first.id] = last.id
    builder.nodes = [replace(n, partner=partners[n.id]) if n.id in partners else n for n in builder.nodes]
    return builder.build()


def photon_paths(topo):
    """Every photon route, following in-line fixed-delay memories."""
    paths = []
    for source in topo.sources:
        for first in topo.links_from(source.id):
            links = [first.id]
            memories = []
            here = first.tail
            seen = {source.id}
            while True:
                node = topo.node(here.node) if topo.has_node(here.node) else None
                if node is None or node.kind != NodeKind.MEMORY or node.memory_mode is None \
                        or not node.memory_mode.is_fixed or node.id in seen:
                    break
                seen.add(node.id)
                onward = topo.links_from(node.id)
                if not onward:
                    break
                memories.append(node.id)
                links.append(onward[0].id)
                here = onward[0].tail
            paths.append(PhotonPath(source.id, first.head.port, tuple(links), here.node, here.port, tuple(memories)))
    return paths


def path_delay_ps(topo, path):
    delay = sum(propagation_delay_ps(topo.link(l)) for l in path.links)
    delay += sum(topo.node(m).memory_mode.delay for m in path.memories)
    return delay


def bsa_inputs(topo):
    """bsa id -> {port: PhotonPath}."""
    inputs = {}
    for path in photon_paths(topo):
        if topo.has_node(path.terminal) and topo.node(path.terminal).kind == NodeKind.BSA:
            inputs.setdefault(path.terminal, {})[path.terminal_port] = path
    return inputs


def quantum_path(topo, source, bsa, port):
    path = bsa_inputs(topo).get(bsa, {}).get(port)
    if path is None or path.source != source:
        raise ConfigError('no quantum path from %s to %s port %d' % (source, bsa, port))
    return list(path.links)


def trigger_link(topo, source_id):
    """Control link over which the lowest-id adjacent BSA triggers a source."""
    candidates = [l for l in topo.control_links()
                  if l.tail.node == source_id and topo.has_node(l.head.node)
                  and topo.node(l.head.node).kind == NodeKind.BSA]
    if not candidates:
        return None
    return min(candidates, key=lambda l: (id_key(l.head.node), id_key(l.id)))


@dataclass(frozen=True)
class Violation:
    subject: str
    message: str

    def __str__(self):
        return '%s: %s' % (self.subject, self.message)


def validate_topology(topo):
    """Lists every invariant violation; an empty list means the topology is valid."""
    report = []

    def violation(subject, message):
        report.append(Violation(subject, message))

    seen = set()
    for node in topo.nodes:
        if node.id in seen:
            violation(node.id, 'duplicate node id')
        seen.add(node.id)
    seen = set()
    for link in topo.links:
        if link.id in seen:
            violation(link.id, 'duplicate link id')
        seen.add(link.id)

    periods = set()
    for node in topo.nodes:
        if node.kind == NodeKind.SOURCE:
            if node.rep_period is None or node.rep_period <= 0:
                violation(node.id, 'rep_period must be > 0')
            else:
                periods.add(node.rep_period)
        elif node.kind == NodeKind.BSA:
            if node.coincidence_window is None or node.coincidence_window < 0:
                violation(node.id, 'coincidence_window must be >= 0')
            if len(node.odl_bounds) != 2:
                violation(node.id, 'odl_bounds needs one interval per input port (2)')
            for port, (lo, hi) in enumerate(node.odl_bounds):
                if lo < 0 or lo > hi:
                    violation(node.id, 'odl_bounds port %d must satisfy 0 <= lo <= hi' % port)
                elif port < len(node.odl_settings) and not lo <= node.odl_settings[port] <= hi:
                    violation(node.id, 'odl setting port %d outside bounds' % port)
        elif node.kind == NodeKind.MEMORY:
            if node.memory_mode is None:
                violation(node.id, 'memory needs a mode')
            elif node.memory_mode.is_fixed and node.memory_mode.delay < 0:
                violation(node.id, 'fixed buffer delay must be >= 0')
            elif node.memory_mode.is_hold and node.memory_mode.max_hold is not None \
                    and node.memory_mode.max_hold <= 0:
                violation(node.id, 'max_hold must be > 0')
            for name in ('capture_efficiency', 'release_efficiency'):
                if not 0.0 <= getattr(node, name) <= 1.0:
                    violation(node.id, '%s outside [0, 1]' % name)
            if node.coherence_time is not None and node.coherence_time <= 0:
                violation(node.id, 'coherence_time must be > 0')
            if node.partner is not None and not topo.has_node(node.partner):
                violation(node.id, 'partner %s does not exist' % node.partner)
    if len(periods) > 1:
        violation('sources', 'all sources must share one rep_period, got %s' % sorted(periods))

    for link in topo.links:
        if link.length < 0:
            violation(link.id, 'length < 0')
        if link.group_index < 1:
            violation(link.id, 'group_index < 1')
        if link.extra_fixed_delay < 0:
            violation(link.id, 'extra_fixed_delay < 0')
        if link.pump_bounds is not None and not 0 <= link.pump_bounds[0] <= link.pump_bounds[1]:
            violation(link.id, 'pump_bounds must satisfy 0 <= lo <= hi')
        dangling = [e.node for e in link.endpoints if not topo.has_node(e.node)]
        if dangling:
            violation(link.id, 'dangling endpoint %s' % ', '.join(dangling))
            continue
        if link.is_quantum:
            head, tail = topo.node(link.head.node), topo.node(link.tail.node)
            if head.kind == NodeKind.BSA and tail.kind == NodeKind.BSA:
                violation(link.id, 'quantum link joins two BSA ports')
            elif head.kind == NodeKind.BSA:
                violation(link.id, 'quantum link leaves a BSA (BSAs only receive photons)')
            if head.kind == NodeKind.DETECTOR:
                violation(link.id, 'quantum link leaves an end detector')

    for bsa in topo.bsas:
        incoming = topo.links_into(bsa.id)
        if len(incoming) != 2:
            violation(bsa.id, 'quantum in-degree %d ≠ 2' % len(incoming))
        elif sorted(l.tail.port for l in incoming) != [0, 1]:
            violation(bsa.id, 'quantum inputs must use ports 0 and 1')
    return report


def perturb_link(topo, link_id, delta_length):
    if not topo.has_link(link_id):
        raise ConfigError('unknown link %s' % link_id)
    link = topo.link(link_id)
    new_length = link.length + delta_length
    if new_length < 0:
        raise ConfigError('perturbation makes %s shorter than zero' % link_id)
    return topo.replace_link(replace(link, length=new_length))


def place_memories(topo, placement):
    """Inserts memories at chain sources.

    HoldUntilReady splits the source into two half sources whose local
    photons are stored in partner memories; FixedDelayBuffer puts an
    in-line memory on the source's right-hand quantum link.
    """
    for source_id in sorted(placement, key=id_key):
        mode = placement[source_id]
        if not topo.has_node(source_id) or topo.node(source_id).kind != NodeKind.SOURCE:
            raise ConfigError('memory placement names unknown source %s' % source_id)
        if mode.is_hold:
            topo = _split_source(topo, source_id, mode)
        else:
            topo = _insert_buffer(topo, source_id, mode)
    return topo


def _split_source(topo, source_id, mode):
    source = topo.node(source_id)
    left_id, right_id = source_id + 'a', source_id + 'b'
    mem_left, mem_right = 'M' + left_id, 'M' + right_id
    nodes = [n for n in topo.nodes if n.id != source_id]
    nodes += [
        replace(source, id=left_id),
        replace(source, id=right_id),
        NodeSpec(mem_left, NodeKind.MEMORY, memory_mode=mode, partner=mem_right),
        NodeSpec(mem_right, NodeKind.MEMORY, memory_mode=mode, partner=mem_left),
    ]
    links = []
    for link in topo.links:
        touches = [e.node == source_id for e in link.endpoints]
        if not any(touches):
            links.append(link)
            continue
        port = link.endpoints[touches.index(True)].port
        owner = left_id if port == 0 else right_id
        endpoints = tuple(Endpoint(owner, e.port) if e.node == source_id else e for e in link.endpoints)
        new_id = re.sub(r'(?<=-)%s(?=-|$)' % re.escape(source_id), owner, link.id)
        links.append(replace(link, id=new_id, endpoints=endpoints))
    links.append(_q(left_id, 1, mem_left, 0, 0.0, DEFAULT_GROUP_INDEX))
    links.append(_q(right_id, 0, mem_right, 0, 0.0, DEFAULT_GROUP_INDEX))
    logger.debug('split %s into %s/%s with hold memories', source_id, left_id, right_id)
    return NetworkTopology(tuple(nodes), tuple(links))


def _insert_buffer(topo, source_id, mode):
    outgoing = [l for l in topo.links_from(source_id) if l.head.port == 1]
    if not outgoing:
        raise ConfigError('source %s has no right-hand quantum link' % source_id)
    link = outgoing[0]
    mem_id = 'M' + source_id
    first = replace(link, id='q-%s-%s' % (source_id, mem_id), endpoints=(link.head, Endpoint(mem_id, 0)))
    second = replace(link, id='q-%s-%s' % (mem_id, link.tail.node), length=0.0, extra_fixed_delay=0,
                     drift_ref=None, endpoints=(Endpoint(mem_id, 1), link.tail))
    nodes = topo.nodes + (NodeSpec(mem_id, NodeKind.MEMORY, memory_mode=mode),)
    links = tuple(l for l in topo.links if l.id != link.id) + (first, second)
    return NetworkTopology(nodes, links)


def memory_segments(topo):
    """Groups nodes of a memory chain into elementary links.

    Returns a list of node-id sets, one per connected component of the
    quantum graph, ordered by their lowest source.
    """
    graph = nx.Graph()
    graph.add_nodes_from(n.id for n in topo.nodes)
    graph.add_edges_from((l.head.node, l.tail.node) for l in topo.quantum_links())
    components = [set(c) for c in nx.connected_components(graph)]

    def order(component):
        sources = [n for n in component if topo.node(n).kind == NodeKind.SOURCE]
        return min(id_key(n) for n in (sources or component))
    return sorted(components, key=order)

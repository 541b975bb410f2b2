"""Quantum buffers and the hop-by-hop operating mode they enable.

A HoldUntilReady memory stores the local photon of a link until every
other link of the path has succeeded, so links no longer have to
succeed in the same slot and no timing constraint crosses a memory.
"""
import logging
import math
from dataclasses import dataclass, replace
from typing import Optional

import networkx as nx

from photonic_sync.errors import BufferEmpty, BufferOccupied, ConfigError
from photonic_sync.simulator import PhotonRecord, RunMetrics, Simulator, stream_for, swap_probability
from photonic_sync.strategies import StrategyKind, capability_of
from photonic_sync.timing_solver import build_constraints, variable_sharing_graph
from photonic_sync.topology import NodeKind, bsa_inputs, id_key, memory_segments, place_memories

logger = logging.getLogger(__name__)

DRAW_CHUNK = 4096


@dataclass
class QuantumBuffer:
    """Capacity-1 memory; coherence_time None means it never decays."""
    node: str
    coherence_time: Optional[int] = None
    capture_efficiency: float = 1.0
    release_efficiency: float = 1.0
    occupancy: Optional[PhotonRecord] = None
    store_time: Optional[int] = None

    def __post_init__(self):
        for name in ('capture_efficiency', 'release_efficiency'):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError('%s of %s outside [0, 1]' % (name, self.node))

    @classmethod
    def from_node(cls, node):
        return cls(node.id, node.coherence_time, node.capture_efficiency, node.release_efficiency)

    @property
    def occupied(self):
        return self.occupancy is not None


def survival_probability(buf, hold):
    """release_efficiency * exp(-hold / coherence_time)."""
    if hold < 0:
        raise ValueError('hold duration must be >= 0')
    if buf.coherence_time is None:
        return buf.release_efficiency
    return buf.release_efficiency * math.exp(-hold / buf.coherence_time)


def store(buf, photon, t, rng):
    """Captures photon at time t; returns False when the capture fails."""
    if buf.occupied:
        raise BufferOccupied('%s already holds %s' % (buf.node, buf.occupancy.pair_id))
    if rng.random() < buf.capture_efficiency:
        buf.occupancy = photon
        buf.store_time = t
        return True
    return False


def release(buf, t_release, rng):
    """Empties the buffer; returns the photon if it survived, else None."""
    if not buf.occupied:
        raise BufferEmpty('%s is empty' % buf.node)
    if t_release < buf.store_time:
        raise ValueError('release at %d ps precedes store at %d ps' % (t_release, buf.store_time))
    photon = buf.occupancy
    survived = rng.random() < survival_probability(buf, t_release - buf.store_time)
    buf.occupancy = None
    buf.store_time = None
    return photon if survived else None


def discard(buf):
    buf.occupancy = None
    buf.store_time = None


class BernoulliStream(object):
    """Pre-drawn Bernoulli trials, served one at a time."""

    def __init__(self, rng, p):
        self.rng = rng
        self.p = p
        self.draws = ()
        self.index = 0

    def next(self):
        if self.index >= len(self.draws):
            self.draws = self.rng.random(DRAW_CHUNK) < self.p
            self.index = 0
        value = bool(self.draws[self.index])
        self.index += 1
        return value


@dataclass
class Segment:
    """One elementary link between hold memories."""
    index: int
    sources: list
    bsas: list
    memories: list
    held_since: Optional[int] = None

    @property
    def held(self):
        return self.held_since is not None


def _segments(topo):
    inputs = bsa_inputs(topo)
    segments = []
    owner = {}
    for index, nodes in enumerate(memory_segments(topo)):
        kinds = {}
        for node_id in sorted(nodes, key=id_key):
            kinds.setdefault(topo.node(node_id).kind, []).append(node_id)
        sources = kinds.get(NodeKind.SOURCE, [])
        if not sources:
            continue
        memories = [m for m in kinds.get(NodeKind.MEMORY, [])
                    if topo.node(m).memory_mode is not None and topo.node(m).memory_mode.is_hold]
        bsas = [b for b in kinds.get(NodeKind.BSA, []) if len(inputs.get(b, {})) == 2]
        for m in memories:
            owner[m] = index
        segments.append(Segment(index, sources, bsas, memories))
    if not segments:
        raise ConfigError('topology has no sources')
    for m, index in owner.items():
        partner = topo.node(m).partner
        if partner is not None and owner.get(partner) == index:
            raise ConfigError('memories %s and %s are partners inside one link' % (m, partner))
        if partner is not None and partner not in owner:
            raise ConfigError('memory %s is partnered with %s, which is not a hold memory' % (m, partner))
    return segments


class HopByHopRun(object):
    """Links succeed independently; a deferred swap joins them once all hold."""

    def __init__(self, topo, config, seed, strategy=StrategyKind.QUANTUM_ODL, synchronous=False):
        self.config = config.check()
        self.topo = topo
        self.seed = int(seed)
        self.synchronous = synchronous
        self.segments = _segments(topo)
        self.period = config.rep_period or topo.rep_period()
        # static geometry decides each BSA's swap probability
        geometry = Simulator(topo, strategy, replace(config, slots=1, controller=None), seed)
        self.swap_p = {}
        for seg in self.segments:
            for b in seg.bsas:
                delta = geometry.nominal_delta(b)
                inside = abs(delta) <= geometry.windows[b]
                self.swap_p[b] = swap_probability(delta, config.p0, config.sigma) if inside else 0.0
        self.fire = {s: BernoulliStream(stream_for(self.seed, 'emit:' + s), config.p_gen)
                     for seg in self.segments for s in seg.sources}
        self.swap = {b: BernoulliStream(stream_for(self.seed, 'swap:' + b), p) for b, p in self.swap_p.items()}
        self.buffers = {m: QuantumBuffer.from_node(topo.node(m)) for seg in self.segments for m in seg.memories}
        self.memory_rngs = {m: stream_for(self.seed, 'memory:' + m) for m in self.buffers}
        self.deferred = BernoulliStream(stream_for(self.seed, 'deferred-swap'), config.p_swap_mem)
        self.pairs = sorted({tuple(sorted((m, topo.node(m).partner), key=id_key))
                             for m in self.buffers if topo.node(m).partner}, key=lambda p: id_key(p[0]))
        bsas = [b for seg in self.segments for b in seg.bsas]
        self.metrics = RunMetrics(self.seed, config.slots, 'hop-by-hop' if not synchronous else 'synchronous',
                                  self.period, sorted(bsas, key=id_key))

    def attempt(self, seg, slot):
        """One generation attempt on a link; True when the link now holds."""
        fired = [self.fire[s].next() for s in seg.sources]
        if not all(fired):
            return False
        for b in seg.bsas:
            if not self.swap[b].next():
                return False
            self.metrics.swaps[b] = self.metrics.swaps.get(b, 0) + 1
        t = slot * self.period
        stored = []
        for m in seg.memories:
            photon = PhotonRecord(seg.sources[0], '%s:%d' % (seg.sources[0], slot), slot, t, t, m, 0)
            if not store(self.buffers[m], photon, t, self.memory_rngs[m]):
                for other in stored:
                    discard(self.buffers[other])
                return False
            stored.append(m)
        seg.held_since = slot
        return True

    def expire(self, seg, slot):
        limits = [self.topo.node(m).memory_mode.max_hold for m in seg.memories]
        limits = [l for l in limits if l is not None]
        if seg.held and limits and (slot - seg.held_since) * self.period > min(limits):
            for m in seg.memories:
                discard(self.buffers[m])
            seg.held_since = None
            self.metrics.retention_losses += len(seg.memories)

    def deliver(self, slot):
        t = slot * self.period
        survived = True
        for m in sorted(self.buffers, key=id_key):
            if release(self.buffers[m], t, self.memory_rngs[m]) is None:
                survived = False
                self.metrics.retention_losses += 1
        swapped = all(self.deferred.next() for _ in self.pairs) if survived else False
        for seg in self.segments:
            seg.held_since = None
        return survived and swapped

    def reset(self):
        for seg in self.segments:
            for m in seg.memories:
                discard(self.buffers[m])
            seg.held_since = None

    def run(self, deliveries=None):
        metrics = self.metrics
        cycle_start = 0
        for slot in range(self.config.slots):
            for seg in self.segments:
                self.expire(seg, slot)
                if not seg.held:
                    self.attempt(seg, slot)
            if self.synchronous and not all(seg.held for seg in self.segments):
                self.reset()
                continue
            if all(seg.held for seg in self.segments):
                if self.deliver(slot):
                    metrics.deliveries += 1
                    metrics.delivery_latencies.append(slot - cycle_start + 1)
                cycle_start = slot + 1
                if deliveries is not None and metrics.deliveries >= deliveries:
                    metrics.slots = slot + 1
                    break
        metrics.end_to_end = metrics.deliveries
        if metrics.retention_losses:
            logger.info('%d stored qubits lost to retention', metrics.retention_losses)
        return metrics


def run_hop_by_hop(topo, config, seed, strategy=StrategyKind.QUANTUM_ODL, synchronous=False, deliveries=None):
    """Hop-by-hop delivery; synchronous=True is the memoryless comparison."""
    return HopByHopRun(topo, config, seed, strategy, synchronous).run(deliveries)


def expected_latency_two_links(q):
    """Mean slots until two independent links with per-slot success q have both succeeded."""
    if not 0 < q <= 1:
        raise ValueError('q must lie in (0, 1]')
    return 2.0 / q - 1.0 / (2.0 * q - q * q)


def coupling_graph(topo, strategy, placement=None):
    """Elementary links (one per BSA) joined when an adjustable variable couples them."""
    if placement:
        topo = place_memories(topo, placement)
    system = build_constraints(topo, capability_of(strategy, topo))
    graph = variable_sharing_graph(system)
    for con in system.constraints:
        graph.nodes[con.bsa]['links'] = list(con.left.path) + list(con.right.path)
    return graph


def coupled_pairs(graph):
    return sorted((tuple(sorted(e, key=id_key)) for e in graph.edges()), key=lambda e: [id_key(x) for x in e])


def decoupled(graph):
    return nx.number_of_edges(graph) == 0

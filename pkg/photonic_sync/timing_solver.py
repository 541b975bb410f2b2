"""Simultaneity constraints at every BSA and their exact solution.

Every BSA needs the photons on its two input ports to arrive together.
Emission epochs of sources are shared between the BSAs a source feeds;
ODL settings belong to one BSA.  The system therefore reduces to
difference constraints between source epochs, where each BSA allows the
epoch difference to move inside an interval set by its own ODL range and
the tolerance.  Feasibility is a negative-cycle question on that graph.
"""
import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, Optional, Tuple

import networkx as nx

from photonic_sync.errors import BoundsViolation, CapabilityMismatch, NotACycle, UnknownVariable
from photonic_sync.topology import (NodeKind, bsa_inputs, id_key, path_delay_ps, propagation_delay_ps,
                                    trigger_link)

logger = logging.getLogger(__name__)

DEFAULT_EPSILON = 1      # ps
ZERO = '__zero__'
ROOT = '__root__'


class VariableKind(str, Enum):
    EMISSION_OFFSET = 'EmissionOffset'
    ODL_DELAY = 'OdlDelay'
    PUMP_PATH_DELAY = 'PumpPathDelay'


class ConstraintMode(str, Enum):
    EXACT = 'Exact'
    MODULO_PERIOD = 'ModuloPeriod'


@dataclass(frozen=True)
class TimingVariable:
    id: str
    kind: VariableKind
    node: str
    bounds: Tuple[int, int]
    port: Optional[int] = None
    link: Optional[str] = None
    controller: str = 'bsa'

    @property
    def shared(self):
        """Source-level variables move every photon of that source."""
        return self.kind != VariableKind.ODL_DELAY


def offset_var_id(source):
    return 'offset:%s' % source


def odl_var_id(bsa, port):
    return 'odl:%s:%d' % (bsa, port)


def pump_var_id(link):
    return 'pump:%s' % link


def topology_variables(topo):
    """Every timing variable the topology could expose, keyed by id."""
    variables = {}
    for source in topo.sources:
        period = source.rep_period or topo.rep_period()
        vid = offset_var_id(source.id)
        variables[vid] = TimingVariable(vid, VariableKind.EMISSION_OFFSET, source.id, (0, period - 1),
                                        controller='source')
        trigger = trigger_link(topo, source.id)
        if trigger is not None:
            vid = pump_var_id(trigger.id)
            bounds = trigger.pump_bounds or (0, period - 1)
            variables[vid] = TimingVariable(vid, VariableKind.PUMP_PATH_DELAY, source.id, tuple(bounds),
                                            link=trigger.id, controller='bsa')
    for bsa in topo.bsas:
        for port, bounds in enumerate(bsa.odl_bounds):
            vid = odl_var_id(bsa.id, port)
            variables[vid] = TimingVariable(vid, VariableKind.ODL_DELAY, bsa.id, tuple(bounds), port=port)
    return variables


def current_value(topo, var):
    if var.kind == VariableKind.EMISSION_OFFSET:
        return topo.node(var.node).emission_offset
    if var.kind == VariableKind.ODL_DELAY:
        return topo.node(var.node).odl_setting(var.port)
    return topo.link(var.link).pump_setting


def source_epoch_ps(topo, source_id, triggered, extra_delay=0):
    """Emission epoch of a source within its period, from current settings."""
    epoch = topo.node(source_id).emission_offset
    if triggered:
        trigger = trigger_link(topo, source_id)
        if trigger is not None:
            epoch += propagation_delay_ps(trigger) + trigger.pump_setting + extra_delay
    return epoch


@dataclass(frozen=True)
class ArrivalExpr:
    source: str
    path: Tuple[str, ...]
    epoch_base: int
    fixed_offset: int
    fixed_odl: int
    terms: Tuple[str, ...]

    def value(self, values):
        return self.epoch_base + self.fixed_offset + self.fixed_odl + sum(values[t] for t in self.terms)


@dataclass(frozen=True)
class SimultaneityConstraint:
    bsa: str
    left: ArrivalExpr
    right: ArrivalExpr
    modulo: Optional[int] = None

    def variables(self):
        return self.left.terms + self.right.terms

    def delta(self, values, period_shift=0):
        return self.left.value(values) - self.right.value(values) - period_shift


@dataclass(frozen=True)
class TimingConstraintSystem:
    topo: object
    constraints: Tuple[SimultaneityConstraint, ...]
    variables: Dict[str, TimingVariable]
    mode: ConstraintMode = ConstraintMode.EXACT
    period: int = 0
    triggered: bool = False
    strategy: Optional[str] = None


@dataclass
class TimingAssignment:
    values: Dict[str, int]
    residuals: Dict[str, int]
    epsilon: int = DEFAULT_EPSILON
    period_shifts: Dict[str, int] = field(default_factory=dict)
    status: str = 'Feasible'

    @property
    def feasible(self):
        return True

    def to_records(self):
        records = [{'record': 'variable', 'id': vid, 'value_ps': self.values[vid]}
                   for vid in sorted(self.values, key=id_key)]
        records += [{'record': 'residual', 'bsa': bsa, 'delta_ps': self.residuals[bsa]}
                    for bsa in sorted(self.residuals, key=id_key)]
        return records


@dataclass
class InfeasibilityCertificate:
    """A quantum-path loop whose fixed imbalance no adjustment can cancel."""
    cycle: Tuple[str, ...]
    fixed_imbalance: int
    total_adjustable_range: int
    tolerance: int = 0
    period: Optional[int] = None
    period_shift: int = 0
    bsas: Tuple[str, ...] = ()
    status: str = 'Infeasible'

    @property
    def feasible(self):
        return False

    @property
    def effective_imbalance(self):
        return self.fixed_imbalance + self.period_shift

    def holds(self):
        return self.effective_imbalance > self.total_adjustable_range + self.tolerance

    def to_records(self):
        return [{'record': 'certificate', 'kind': 'cycle', 'cycle': list(self.cycle), 'bsas': list(self.bsas),
                 'fixed_imbalance_ps': self.fixed_imbalance, 'period_shift_ps': self.period_shift,
                 'total_adjustable_range_ps': self.total_adjustable_range, 'tolerance_ps': self.tolerance,
                 'period_ps': self.period}]


@dataclass
class BoundsCertificate:
    """A constraint whose required adjustment lies outside its variables' range."""
    bsa: str
    required_adjustment: int
    available: Tuple[int, int]
    involved_bsas: Tuple[str, ...] = ()
    status: str = 'Infeasible'

    @property
    def feasible(self):
        return False

    def to_records(self):
        return [{'record': 'certificate', 'kind': 'bounds', 'bsa': self.bsa,
                 'required_adjustment_ps': self.required_adjustment,
                 'available_ps': list(self.available), 'involved_bsas': list(self.involved_bsas)}]


def build_constraints(topo, caps):
    """One simultaneity constraint per BSA, over the variables caps may adjust."""
    known = topology_variables(topo)
    adjustable = {}
    for var in caps.variables:
        if var.id not in known:
            raise CapabilityMismatch('capability references %s, absent from the topology' % var.id)
        adjustable[var.id] = known[var.id]
    triggered = bool(getattr(caps, 'triggered', False))
    mode = ConstraintMode(getattr(caps, 'constraint_mode', ConstraintMode.EXACT))
    period = topo.rep_period()

    def side(path):
        source = path.source
        terms = []
        base = 0
        offset = offset_var_id(source)
        if offset in adjustable:
            terms.append(offset)
        else:
            base += topo.node(source).emission_offset
        if triggered:
            trigger = trigger_link(topo, source)
            if trigger is not None:
                base += propagation_delay_ps(trigger)
                pump = pump_var_id(trigger.id)
                if pump in adjustable:
                    terms.append(pump)
                else:
                    base += trigger.pump_setting
        bsa = topo.node(path.terminal)
        odl = odl_var_id(bsa.id, path.terminal_port)
        fixed_odl = 0
        if odl in adjustable:
            terms.append(odl)
        else:
            fixed_odl = bsa.odl_setting(path.terminal_port)
        return ArrivalExpr(source, path.links, base, path_delay_ps(topo, path), fixed_odl, tuple(terms))

    constraints = []
    inputs = bsa_inputs(topo)
    for bsa in topo.bsas:
        ports = inputs.get(bsa.id, {})
        if 0 not in ports or 1 not in ports:
            continue
        constraints.append(SimultaneityConstraint(
            bsa.id, side(ports[0]), side(ports[1]),
            period if mode == ConstraintMode.MODULO_PERIOD else None))
    return TimingConstraintSystem(topo, tuple(constraints), adjustable, mode, period, triggered,
                                  getattr(caps, 'strategy', None))


def variable_sharing_graph(system, include_fixed=False):
    """BSAs joined when their constraints share a variable.

    With include_fixed the shared, non-adjustable source epochs count too.
    """
    graph = nx.Graph()
    owners = {}
    for con in system.constraints:
        graph.add_node(con.bsa)
        keys = set(t for t in con.variables() if system.variables[t].shared)
        if include_fixed:
            keys |= {'epoch:' + con.left.source, 'epoch:' + con.right.source}
        for key in sorted(keys):
            owners.setdefault(key, []).append(con.bsa)
    for key, bsas in sorted(owners.items()):
        for i, a in enumerate(bsas):
            for b in bsas[i + 1:]:
                if graph.has_edge(a, b):
                    graph[a][b]['variables'].append(key)
                else:
                    graph.add_edge(a, b, variables=[key])
    return graph


class _EpochModel(object):
    """Difference-constraint view of a system for one tolerance."""

    def __init__(self, system, epsilon):
        self.system = system
        self.epsilon = epsilon
        self.vars = system.variables
        self.sources = sorted({c.left.source for c in system.constraints}
                              | {c.right.source for c in system.constraints}, key=id_key)
        self.base = {}
        self.epoch_terms = {}
        for con in system.constraints:
            for side in (con.left, con.right):
                self.base[side.source] = side.epoch_base
                self.epoch_terms[side.source] = tuple(sorted((t for t in side.terms if self.vars[t].shared),
                                                             key=id_key))
        self.shifts = {}
        self.intervals = {}
        self.graph = nx.DiGraph()
        self.graph.add_nodes_from(self.sources)
        for con in system.constraints:
            self.add_constraint(con)

    def epoch_bounds(self, source):
        terms = self.epoch_terms.get(source, ())
        lo = sum(self.vars[t].bounds[0] for t in terms)
        hi = sum(self.vars[t].bounds[1] for t in terms)
        return self.base[source] + lo, self.base[source] + hi

    def current_epoch(self, source):
        topo = self.system.topo
        return self.base[source] + sum(current_value(topo, self.vars[t]) for t in self.epoch_terms.get(source, ()))

    def local_range(self, expr):
        terms = [t for t in expr.terms if not self.vars[t].shared]
        return (sum(self.vars[t].bounds[0] for t in terms), sum(self.vars[t].bounds[1] for t in terms))

    def add_constraint(self, con):
        left_lo, left_hi = self.local_range(con.left)
        right_lo, right_hi = self.local_range(con.right)
        fixed_l = con.left.fixed_offset + con.left.fixed_odl
        fixed_r = con.right.fixed_offset + con.right.fixed_odl
        lo = fixed_r - fixed_l + right_lo - left_hi - self.epsilon
        hi = fixed_r - fixed_l + right_hi - left_lo + self.epsilon
        shift = 0
        if con.modulo:
            now = self.current_epoch(con.left.source) - self.current_epoch(con.right.source)
            m = math.ceil((now - hi) / con.modulo)
            if lo + m * con.modulo > now:
                m = round((now - (lo + hi) / 2) / con.modulo)
            shift = m * con.modulo
        lo, hi = lo + shift, hi + shift
        self.shifts[con.bsa] = shift
        self.intervals[con.bsa] = (lo, hi)
        left, right = con.left.source, con.right.source
        if left == right:
            return
        # E_left - E_right <= hi ; E_right - E_left <= -lo
        self._edge(right, left, hi, con.bsa)
        self._edge(left, right, -lo, con.bsa)

    def _edge(self, u, v, weight, bsa):
        if self.graph.has_edge(u, v) and self.graph[u][v]['weight'] <= weight:
            return
        self.graph.add_edge(u, v, weight=weight, bsa=bsa)

    def self_loop_violation(self):
        for con in self.system.constraints:
            if con.left.source == con.right.source:
                lo, hi = self.intervals[con.bsa]
                if not lo <= 0 <= hi:
                    return con
        return None

    def source_cycle(self):
        graph = self.graph.copy()
        graph.add_node(ROOT)
        for s in self.sources:
            graph.add_edge(ROOT, s, weight=0)
        return _negative_cycle(graph, ROOT)

    def bounded_graph(self):
        graph = self.graph.copy()
        graph.add_node(ZERO)
        for s in self.sources:
            lo, hi = self.epoch_bounds(s)
            graph.add_edge(ZERO, s, weight=hi)
            graph.add_edge(s, ZERO, weight=-lo)
        return graph

    def least_epochs(self):
        graph = self.bounded_graph()
        if _negative_cycle(graph, ZERO) is not None:
            return None
        dist = nx.single_source_bellman_ford_path_length(graph.reverse(copy=True), ZERO)
        return {s: -dist[s] for s in self.sources}


def _negative_cycle(graph, source):
    try:
        return nx.find_negative_cycle(graph, source)
    except nx.NetworkXError:
        return None


def _split(total, var_ids, variables):
    """Spreads total over variables in id order, each from its lower bound."""
    values = {v: variables[v].bounds[0] for v in var_ids}
    rest = total - sum(values.values())
    for v in var_ids:
        room = variables[v].bounds[1] - values[v]
        step = min(room, rest)
        values[v] += step
        rest -= step
    return values


def _place_odl(r, left_ids, right_ids, variables):
    """Chooses local sums with oR - oL = r, loading the earlier port only."""
    low_l = sum(variables[v].bounds[0] for v in left_ids)
    high_l = sum(variables[v].bounds[1] for v in left_ids)
    low_r = sum(variables[v].bounds[0] for v in right_ids)
    high_r = sum(variables[v].bounds[1] for v in right_ids)
    o_l = max(low_l, low_r - r)
    o_r = o_l + r
    if o_r > high_r:
        o_r = high_r
        o_l = o_r - r
    o_l = min(max(o_l, low_l), high_l)
    o_r = min(max(o_r, low_r), high_r)
    values = _split(o_l, left_ids, variables)
    values.update(_split(o_r, right_ids, variables))
    return values, r - (o_r - o_l)


def solve(system, epsilon=DEFAULT_EPSILON):
    """Canonical assignment, or a certificate explaining infeasibility."""
    if epsilon < 0:
        raise ValueError('epsilon must be >= 0')
    model = _EpochModel(system, epsilon)

    looping = model.self_loop_violation()
    if looping is not None:
        return _bounds_certificate(model, looping.bsa, (looping.bsa,))

    cycle = model.source_cycle()
    if cycle is not None:
        cert = _cycle_certificate(model, cycle)
        logger.info('infeasible loop through %s: imbalance %d ps > range %d ps',
                    ','.join(cert.bsas), cert.effective_imbalance, cert.total_adjustable_range)
        return cert

    bounded = model.bounded_graph()
    cycle = _negative_cycle(bounded, ZERO)
    if cycle is not None:
        bsas = [model.graph[u][v]['bsa'] for u, v in zip(cycle, cycle[1:]) if ZERO not in (u, v)]
        cert = _bounds_certificate(model, bsas[0], tuple(bsas))
        logger.info('bounds violated at %s: need %d ps, have %s', cert.bsa, cert.required_adjustment,
                    cert.available)
        return cert

    # exact first, tolerance only when nothing exact exists
    epochs = None
    chosen = model
    if epsilon > 0:
        exact = _EpochModel(system, 0)
        if exact.self_loop_violation() is None:
            epochs = exact.least_epochs()
            chosen = exact
    if epochs is None:
        chosen = model
        epochs = model.least_epochs()
    return _assignment(system, chosen, epochs, epsilon)


def _assignment(system, model, epochs, epsilon):
    variables = system.variables
    values = {}
    for source in model.sources:
        terms = model.epoch_terms.get(source, ())
        if terms:
            values.update(_split(epochs[source] - model.base[source], terms, variables))
    residuals = {}
    for con in system.constraints:
        shift = model.shifts[con.bsa]
        e_left = epochs[con.left.source]
        e_right = epochs[con.right.source]
        r = (e_left + con.left.fixed_offset + con.left.fixed_odl) \
            - (e_right + con.right.fixed_offset + con.right.fixed_odl) - shift
        left_ids = sorted((t for t in con.left.terms if not variables[t].shared), key=id_key)
        right_ids = sorted((t for t in con.right.terms if not variables[t].shared), key=id_key)
        local, residual = _place_odl(r, left_ids, right_ids, variables)
        values.update(local)
        residuals[con.bsa] = residual
    for vid, var in variables.items():
        if vid not in values:
            values[vid] = current_value(system.topo, var)
    ordered = {vid: values[vid] for vid in sorted(values, key=id_key)}
    assignment = TimingAssignment(ordered, residuals, epsilon, dict(model.shifts))
    worst = max((abs(d) for d in residuals.values()), default=0)
    if worst > epsilon:
        raise AssertionError('solver produced residual %d ps above tolerance %d ps' % (worst, epsilon))
    return assignment


def _edge_links(model, u, v):
    """Links of the loop piece u -> bsa -> v, oriented along the loop."""
    bsa = model.graph[u][v]['bsa']
    con = next(c for c in model.system.constraints if c.bsa == bsa)
    first, second = (con.right, con.left) if con.right.source == u else (con.left, con.right)
    return bsa, list(first.path) + list(reversed(second.path)), first, second


def _cycle_certificate(model, cycle):
    nodes = [n for n in cycle if n != ROOT]
    if nodes[0] != nodes[-1]:
        nodes.append(nodes[0])
    variables = model.vars
    forward = []
    bsas = []
    adjustable = 0
    shift = 0
    for u, v in zip(nodes, nodes[1:]):
        bsa, links, first, second = _edge_links(model, u, v)
        forward.extend(links)
        bsas.append(bsa)
        first_locals = [t for t in first.terms if not variables[t].shared]
        second_locals = [t for t in second.terms if not variables[t].shared]
        # correction available at this BSA in the loop direction
        adjustable += (sum(variables[t].bounds[1] for t in first_locals) + first.fixed_odl) \
            - (sum(variables[t].bounds[0] for t in second_locals) + second.fixed_odl)
        con_shift = model.shifts[bsa]
        shift += con_shift if first is next(c for c in model.system.constraints if c.bsa == bsa).right \
            else -con_shift
    cycle_links = tuple(reversed(forward))
    imbalance = cycle_imbalance(model.system.topo, list(cycle_links))
    return InfeasibilityCertificate(
        cycle=cycle_links, fixed_imbalance=imbalance, total_adjustable_range=adjustable,
        tolerance=model.epsilon * len(bsas), period=model.system.period if model.shifts and any(
            c.modulo for c in model.system.constraints) else None,
        period_shift=-shift, bsas=tuple(reversed(bsas)))


def _bounds_certificate(model, bsa, involved):
    con = next(c for c in model.system.constraints if c.bsa == bsa)
    required = (model.current_epoch(con.left.source) + con.left.fixed_offset + con.left.fixed_odl) \
        - (model.current_epoch(con.right.source) + con.right.fixed_offset + con.right.fixed_odl) \
        - model.shifts.get(bsa, 0)
    left_lo, left_hi = model.local_range(con.left)
    right_lo, right_hi = model.local_range(con.right)
    return BoundsCertificate(bsa, required, (right_lo - left_hi, right_hi - left_lo), tuple(involved))


def cycle_imbalance(topo, cycle):
    """Signed sum of fixed delays around a closed quantum loop.

    Links traversed in their source-to-BSA direction count positive.
    """
    if len(cycle) < 2:
        raise NotACycle('a loop needs at least two links')
    links = []
    for link_id in cycle:
        if not topo.has_link(link_id):
            raise NotACycle('unknown link %s' % link_id)
        link = topo.link(link_id)
        if not link.is_quantum:
            raise NotACycle('%s is not a quantum link' % link_id)
        links.append(link)
    first_nodes = {links[0].head.node, links[0].tail.node}
    second_nodes = {links[1].head.node, links[1].tail.node}
    shared = first_nodes & second_nodes
    if not shared:
        raise NotACycle('%s and %s do not touch' % (links[0].id, links[1].id))
    if len(shared) == 2:
        start = links[0].head.node
    else:
        start = (first_nodes - shared).pop()
    here = start
    total = 0
    for link in links:
        if link.head.node == here:
            sign, here = 1, link.tail.node
        elif link.tail.node == here:
            sign, here = -1, link.head.node
        else:
            raise NotACycle('%s does not continue the loop at %s' % (link.id, here))
        total += sign * propagation_delay_ps(link)
        tail = topo.node(link.tail.node)
        if tail.kind == NodeKind.MEMORY and tail.memory_mode is not None and tail.memory_mode.is_fixed:
            total += sign * tail.memory_mode.delay
    if here != start:
        raise NotACycle('loop does not close: ends at %s, started at %s' % (here, start))
    return total


def apply_assignment(topo, assignment):
    """Copy of topo with the assignment's offsets, ODL and pump settings."""
    known = topology_variables(topo)
    for vid, value in assignment.values.items():
        var = known.get(vid)
        if var is None:
            raise UnknownVariable('%s does not exist in this topology' % vid)
        lo, hi = var.bounds
        if not lo <= value <= hi:
            raise BoundsViolation('%s = %d ps outside [%d, %d]' % (vid, value, lo, hi))
        if var.kind == VariableKind.EMISSION_OFFSET:
            topo = topo.replace_node(replace(topo.node(var.node), emission_offset=value))
        elif var.kind == VariableKind.ODL_DELAY:
            node = topo.node(var.node)
            settings = [node.odl_setting(p) for p in range(len(node.odl_bounds))]
            settings[var.port] = value
            topo = topo.replace_node(replace(node, odl_settings=tuple(settings)))
        else:
            topo = topo.replace_link(replace(topo.link(var.link), pump_setting=value))
    return topo


def assignment_deltas(topo, assignment):
    known = topology_variables(topo)
    deltas = {}
    for vid, value in assignment.values.items():
        if vid not in known:
            raise UnknownVariable('%s does not exist in this topology' % vid)
        deltas[vid] = value - current_value(topo, known[vid])
    return deltas

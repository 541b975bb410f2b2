"""Seeded discrete-event simulation of emission, propagation and BSA measurement.

One EMIT event per fired source and slot, one ARRIVE event per photon.
ODL settings are read when a photon reaches its BSA, so a feedback
update takes effect for every photon that arrives after it.
"""
import itertools
import logging
import math
import zlib
from collections import Counter, deque
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from photonic_sync.errors import ConfigError, InsufficientHeralds
from photonic_sync.events import Event, EventKind, EventQueue
from photonic_sync.spawn import ProcessSweepPool, SweepPool
from photonic_sync.strategies import capability_of
from photonic_sync.timing_solver import (ConstraintMode, VariableKind, build_constraints, current_value,
                                         odl_var_id, offset_var_id, pump_var_id, topology_variables)
from photonic_sync.topology import bsa_inputs, id_key, photon_paths, propagation_delay_ps, trigger_link

logger = logging.getLogger(__name__)

EMISSION_CHUNK = 4096


def stream_for(seed, purpose):
    """Independent generator per (seed, purpose), stable across event orderings."""
    return np.random.default_rng([int(seed), zlib.crc32(purpose.encode('utf-8'))])


@dataclass(frozen=True)
class DriftModel:
    """Additive delay on a link; times in ps, rate in ps per ps."""
    id: str
    kind: str
    offset: int = 0
    rate: float = 0.0
    amplitude: float = 0.0
    period: int = 0
    phase: float = 0.0
    step_std: float = 0.0
    step_interval: int = 0

    KINDS = ('Static', 'Linear', 'Sinusoidal', 'RandomWalk')

    @classmethod
    def static(cls, model_id, offset):
        return cls(model_id, 'Static', offset=int(offset))

    @classmethod
    def linear(cls, model_id, rate):
        return cls(model_id, 'Linear', rate=float(rate))

    @classmethod
    def sinusoidal(cls, model_id, amplitude, period, phase=0.0):
        return cls(model_id, 'Sinusoidal', amplitude=amplitude, period=int(period), phase=float(phase))

    @classmethod
    def random_walk(cls, model_id, step_std, step_interval):
        return cls(model_id, 'RandomWalk', step_std=float(step_std), step_interval=int(step_interval))

    def problems(self):
        problems = []
        if self.kind not in self.KINDS:
            problems.append('unknown drift kind %r' % self.kind)
        if self.kind == 'Sinusoidal':
            if self.amplitude <= 0:
                problems.append('amplitude must be > 0')
            if self.period <= 0:
                problems.append('period must be > 0')
        if self.kind == 'RandomWalk':
            if self.step_interval <= 0:
                problems.append('step_interval must be > 0')
            if self.step_std < 0:
                problems.append('step_std must be >= 0')
        return problems


class RandomWalkStream(object):
    """Cumulative Gaussian steps drawn lazily from a dedicated generator."""

    def __init__(self, rng, step_std):
        self.rng = rng
        self.step_std = step_std
        self.path = np.zeros(1)

    def value_at_step(self, k):
        if k >= len(self.path):
            need = max(k + 1 - len(self.path), len(self.path))
            steps = self.rng.normal(0.0, self.step_std, need)
            self.path = np.concatenate([self.path, self.path[-1] + np.cumsum(steps)])
        return float(self.path[k])


def drift_value(model, t, stream=None):
    """Extra delay (ps) the model adds at time t (ps)."""
    if t < 0:
        raise ValueError('drift is defined for t >= 0')
    if model.kind == 'Static':
        return float(model.offset)
    if model.kind == 'Linear':
        return model.rate * t
    if model.kind == 'Sinusoidal':
        return model.amplitude * math.sin(2 * math.pi * t / model.period + model.phase)
    if model.kind == 'RandomWalk':
        if stream is None:
            stream = RandomWalkStream(np.random.default_rng(0), model.step_std)
        return stream.value_at_step(int(t // model.step_interval))
    raise ConfigError('unknown drift kind %r' % model.kind)


@dataclass(frozen=True)
class ControllerConfig:
    gain: float = 0.5
    estimate_window: int = 20
    max_step: int = 1000


@dataclass(frozen=True)
class SimulationConfig:
    slots: int = 1000
    rep_period: Optional[int] = None
    p_gen: float = 1.0
    p0: float = 1.0
    sigma: int = 50
    window: Optional[int] = None
    controller: Optional[ControllerConfig] = None
    drift: Tuple[Tuple[str, str], ...] = ()
    report_interval: int = 1000
    record_photons: bool = False
    p_swap_mem: float = 1.0
    seed: int = 0

    def problems(self):
        problems = []
        if self.slots < 1:
            problems.append('slots must be >= 1')
        if self.rep_period is not None and self.rep_period <= 0:
            problems.append('rep_period must be > 0')
        for name in ('p_gen', 'p0', 'p_swap_mem'):
            if not 0.0 <= getattr(self, name) <= 1.0:
                problems.append('%s must lie in [0, 1]' % name)
        if self.sigma <= 0:
            problems.append('sigma must be > 0')
        if self.window is not None and self.window < 0:
            problems.append('window must be >= 0')
        if self.report_interval < 1:
            problems.append('report_interval must be >= 1')
        if self.controller is not None:
            if not 0 < self.controller.gain <= 1:
                problems.append('controller gain must lie in (0, 1]')
            if self.controller.estimate_window < 1:
                problems.append('controller estimate_window must be >= 1')
            if self.controller.max_step <= 0:
                problems.append('controller max_step must be > 0')
        return problems

    def check(self):
        problems = self.problems()
        if problems:
            raise ConfigError('; '.join(problems))
        return self


@dataclass(frozen=True)
class PhotonRecord:
    source: str
    pair_id: str
    emission_slot: int
    emit_time: int
    arrival_time: int
    destination: str
    port: int


@dataclass(frozen=True)
class BsaOutcome:
    bsa: Optional[str]
    slot: int
    delta: Optional[int]
    coincidence: bool
    swap_success: bool


def swap_probability(delta, p0, sigma):
    return p0 * math.exp(-(delta * delta) / (2.0 * sigma * sigma))


def bsa_measure(t_left, t_right, window, p0, sigma, rng, bsa=None, slot=0):
    """Coincidence gate followed by the Gaussian swap law."""
    if t_left is None or t_right is None:
        return BsaOutcome(bsa, slot, None, False, False)
    delta = t_left - t_right
    if abs(delta) > window:
        return BsaOutcome(bsa, slot, delta, False, False)
    success = bool(rng.random() < swap_probability(delta, p0, sigma))
    return BsaOutcome(bsa, slot, delta, True, success)


def estimate_delta(outcomes, n):
    """Mean mismatch over the last n heralded swaps."""
    heralds = [o.delta for o in outcomes if o.coincidence and o.swap_success]
    if n < 1 or len(heralds) < n:
        raise InsufficientHeralds('need %d heralds, have %d' % (n, len(heralds)))
    return float(np.mean(heralds[-n:]))


@dataclass
class FeedbackController:
    bsa: str
    gain: float
    estimate_window: int
    max_step: int
    targets: Tuple = ()   # (left variable, right variable)
    heralds: deque = field(default_factory=deque)

    def __post_init__(self):
        if not 0 < self.gain <= 1:
            raise ConfigError('gain must lie in (0, 1]')
        if self.estimate_window < 1:
            raise ConfigError('estimate_window must be >= 1')


def feedback_step(ctrl, estimate, values):
    """Moves the controller's variables against the estimated mismatch.

    The later port gives up delay first, down to its lower bound; what
    remains is added to the earlier port.  Returns (changed values,
    saturated).
    """
    correction = int(round(ctrl.gain * estimate))
    correction = max(-ctrl.max_step, min(ctrl.max_step, correction))
    if correction == 0:
        return {}, False
    left, right = ctrl.targets
    later, earlier = (left, right) if correction > 0 else (right, left)
    amount = abs(correction)
    if later is not None and earlier is not None and later.id == earlier.id:
        return {}, False
    updates = {}
    taken = 0
    if later is not None:
        taken = min(amount, values[later.id] - later.bounds[0])
        if taken:
            updates[later.id] = values[later.id] - taken
    rest = amount - taken
    added = 0
    if earlier is not None and rest:
        added = min(rest, earlier.bounds[1] - values[earlier.id])
        if added:
            updates[earlier.id] = values[earlier.id] + added
    return updates, rest - added > 0


def end_to_end_rate_analytic(p_gen, n_sources, p_swap_each=()):
    """Per-slot probability that every source fires and every BSA swaps."""
    for p in [p_gen] + list(p_swap_each):
        if not 0.0 <= p <= 1.0:
            raise ConfigError('probability %r outside [0, 1]' % p)
    rate = p_gen ** n_sources
    for p in p_swap_each:
        rate *= p
    return rate


@dataclass
class RunMetrics:
    seed: int
    slots: int
    strategy: str
    rep_period: int
    bsas: List[str] = field(default_factory=list)
    coincidences: Dict[str, int] = field(default_factory=dict)
    swaps: Dict[str, int] = field(default_factory=dict)
    deltas: Dict[str, list] = field(default_factory=dict)
    saturations: Dict[str, int] = field(default_factory=dict)
    controller_updates: Dict[str, int] = field(default_factory=dict)
    detections: Dict[str, int] = field(default_factory=dict)
    end_to_end: int = 0
    all_sources_fired: int = 0
    intervals: List[dict] = field(default_factory=list)
    final_settings: Dict[str, int] = field(default_factory=dict)
    photons: List[PhotonRecord] = field(default_factory=list)
    deliveries: int = 0
    retention_losses: int = 0
    delivery_latencies: List[int] = field(default_factory=list)

    @property
    def mean_delivery_latency_slots(self):
        if not self.delivery_latencies:
            return None
        return float(np.mean(self.delivery_latencies))

    def summary(self):
        return {
            'record': 'summary', 'seed': self.seed, 'slots': self.slots, 'strategy': self.strategy,
            'rep_period_ps': self.rep_period,
            'coincidences': {b: self.coincidences.get(b, 0) for b in self.bsas},
            'swaps': {b: self.swaps.get(b, 0) for b in self.bsas},
            'saturations': {b: self.saturations.get(b, 0) for b in self.bsas},
            'controller_updates': {b: self.controller_updates.get(b, 0) for b in self.bsas},
            'end_to_end': self.end_to_end, 'all_sources_fired': self.all_sources_fired,
            'end_to_end_rate': self.end_to_end / self.slots,
            'deliveries': self.deliveries, 'retention_losses': self.retention_losses,
            'mean_delivery_latency_slots': self.mean_delivery_latency_slots,
            'final_settings_ps': dict(self.final_settings),
        }


def _drift_bindings(topo, config, drift_models):
    models = {m.id: m for m in drift_models}
    bindings = {link.id: link.drift_ref for link in topo.links if link.drift_ref}
    bindings.update(dict(config.drift))
    resolved = {}
    for link in topo.links:
        key = link.id
        model_id = bindings.get(link.id)
        if model_id is None and link.shares_fiber_with:
            key = link.shares_fiber_with
            model_id = bindings.get(key)
        if model_id is None:
            continue
        if model_id not in models:
            raise ConfigError('link %s refers to unknown drift model %s' % (link.id, model_id))
        resolved[link.id] = (models[model_id], key)
    return resolved


class Simulator(object):
    """One sequential run of a topology under a strategy."""

    def __init__(self, topo, strategy, config, seed=None, drift_models=()):
        self.config = config.check()
        self.topo = topo
        self.seed = config.seed if seed is None else int(seed)
        self.caps = capability_of(strategy, topo)
        self.system = build_constraints(topo, self.caps)
        self.period = config.rep_period or topo.rep_period()
        self.variables = topology_variables(topo)
        self.values = {vid: current_value(topo, var) for vid, var in self.variables.items()}
        self.sources = [s.id for s in topo.sources]
        self.paths = {}
        for path in photon_paths(topo):
            self.paths.setdefault(path.source, []).append(path)
        self.base_delay = {link.id: propagation_delay_ps(link) for link in topo.links}
        self.memory_delay = {m.id: m.memory_mode.delay for m in topo.memories
                             if m.memory_mode is not None and m.memory_mode.is_fixed}
        self.drift = _drift_bindings(topo, config, drift_models)
        self.walks = {}
        self.triggers = {}
        if self.caps.triggered:
            for s in self.sources:
                link = trigger_link(topo, s)
                if link is not None:
                    self.triggers[s] = link.id

        self.inputs = inputs = bsa_inputs(topo)
        self.bsas = [b.id for b in topo.bsas if 0 in inputs.get(b.id, {}) and 1 in inputs.get(b.id, {})]
        self.windows = {}
        for b in self.bsas:
            node = topo.node(b)
            self.windows[b] = config.window if config.window is not None else node.coincidence_window
        self.shifts = {b: 0 for b in self.bsas}
        if self.caps.constraint_mode == ConstraintMode.MODULO_PERIOD:
            for b in self.bsas:
                left = self._nominal_arrival(inputs[b][0])
                right = self._nominal_arrival(inputs[b][1])
                self.shifts[b] = int(round((left - right) / self.period))
        self.bsa_rngs = {b: stream_for(self.seed, 'swap:' + b) for b in self.bsas}
        self.controllers = self._controllers()

        self.queue = EventQueue()
        self.pending = {b: {} for b in self.bsas}
        self.swap_slots = Counter()
        self.horizon = self._horizon()
        self.metrics = RunMetrics(self.seed, config.slots, self.caps.strategy.value, self.period, list(self.bsas))
        self.interval_stats = {}

    def _controllers(self):
        ctrl_cfg = self.config.controller
        if ctrl_cfg is None:
            return {}
        controllers = {}
        odl = VariableKind.ODL_DELAY in self.caps.adjustable
        for con in self.system.constraints:
            if con.bsa not in self.windows:
                continue
            if odl:
                targets = (self.variables[odl_var_id(con.bsa, 0)], self.variables[odl_var_id(con.bsa, 1)])
            else:
                targets = tuple(next((self.variables[t] for t in side.terms if self.variables[t].shared), None)
                                for side in (con.left, con.right))
                if targets == (None, None):
                    continue
            controllers[con.bsa] = FeedbackController(con.bsa, ctrl_cfg.gain, ctrl_cfg.estimate_window,
                                                      ctrl_cfg.max_step, targets)
        return controllers

    def _nominal_arrival(self, path):
        return self.epoch(path.source, 0) + self.path_delay(path, 0) \
            + self.values[odl_var_id(path.terminal, path.terminal_port)]

    def nominal_delta(self, bsa):
        """Mismatch at a BSA from the static geometry, after the pairing shift."""
        ports = self.inputs[bsa]
        return self._nominal_arrival(ports[0]) - self._nominal_arrival(ports[1]) - self.shifts[bsa] * self.period

    def _horizon(self):
        """Slots a pending photon may wait for its partner before being dropped."""
        worst = 0
        for paths in self.paths.values():
            for path in paths:
                worst = max(worst, self.path_delay(path, 0))
        odl = max((hi for var in self.variables.values() if var.kind == VariableKind.ODL_DELAY
                   for hi in var.bounds[1:]), default=0)
        epoch = max((self.epoch(s, 0) for s in self.sources), default=0)
        lag = (worst + odl + epoch) // self.period
        return int(lag) + max((abs(m) for m in self.shifts.values()), default=0) + 16

    def link_delay(self, link_id, t):
        delay = self.base_delay[link_id]
        bound = self.drift.get(link_id)
        if bound is not None:
            model, key = bound
            stream = None
            if model.kind == 'RandomWalk':
                stream = self.walks.get(key)
                if stream is None:
                    stream = self.walks[key] = RandomWalkStream(stream_for(self.seed, 'drift:' + key),
                                                                model.step_std)
            delay += int(round(drift_value(model, t, stream)))
        return max(0, delay)

    def path_delay(self, path, t):
        return sum(self.link_delay(l, t) for l in path.links) + sum(self.memory_delay[m] for m in path.memories)

    def epoch(self, source, t):
        epoch = self.values[offset_var_id(source)]
        trigger = self.triggers.get(source)
        if trigger is not None:
            epoch += self.link_delay(trigger, t) + self.values[pump_var_id(trigger)]
        return epoch

    def run(self):
        cfg = self.config
        emit_rngs = {s: stream_for(self.seed, 'emit:' + s) for s in self.sources}
        for start in range(0, cfg.slots, EMISSION_CHUNK):
            stop = min(cfg.slots, start + EMISSION_CHUNK)
            fired = {s: emit_rngs[s].random(stop - start) < cfg.p_gen for s in self.sources}
            if self.sources:
                self.metrics.all_sources_fired += int(np.logical_and.reduce([fired[s] for s in self.sources]).sum())
            slots = sorted(set(itertools.chain.from_iterable(np.flatnonzero(m).tolist() for m in fired.values())))
            for i in slots:
                for s in self.sources:
                    if fired[s][i]:
                        self.queue.push(Event((start + i) * self.period, EventKind.EMIT, (s, start + i)))
            self._drain(stop * self.period)
            self._prune(stop)
        self._drain(None)
        return self._finish()

    def _drain(self, until):
        queue = self.queue
        while not queue.is_empty() and (until is None or queue.peek_time() < until):
            event = queue.pop()
            if event.kind == EventKind.EMIT:
                self._emit(event.time, *event.payload)
            else:
                self._arrive(event.time, *event.payload)

    def _emit(self, t, source, slot):
        emit_time = t + self.epoch(source, t)
        for path in self.paths.get(source, ()):
            arrival = emit_time + self.path_delay(path, emit_time)
            self.queue.push(Event(arrival, EventKind.ARRIVE, (path, slot, emit_time)))

    def _arrive(self, t, path, slot, emit_time):
        terminal = path.terminal
        if terminal in self.pending:
            t += self.values[odl_var_id(terminal, path.terminal_port)]
            self._register(terminal, path.terminal_port, slot, t)
        else:
            self.metrics.detections[terminal] = self.metrics.detections.get(terminal, 0) + 1
        if self.config.record_photons:
            self.metrics.photons.append(PhotonRecord(path.source, '%s:%d' % (path.source, slot), slot, emit_time, t,
                                                     terminal, path.terminal_port))

    def _register(self, bsa, port, slot, t):
        shift = self.shifts[bsa]
        pair = slot if port == 0 else slot - shift
        waiting = self.pending[bsa].setdefault(pair, {})
        waiting[port] = t
        if len(waiting) < 2:
            return
        del self.pending[bsa][pair]
        if not 0 <= pair < self.config.slots:
            return
        # port 1 arrived from slot pair + shift; its absolute time already carries the shift
        outcome = bsa_measure(waiting[0], waiting[1], self.windows[bsa], self.config.p0, self.config.sigma,
                              self.bsa_rngs[bsa], bsa=bsa, slot=pair)
        self._record(outcome)

    def _record(self, outcome):
        metrics = self.metrics
        bsa = outcome.bsa
        stats = self.interval_stats.setdefault((bsa, outcome.slot // self.config.report_interval), [0, 0, 0, 0])
        if outcome.coincidence:
            metrics.coincidences[bsa] = metrics.coincidences.get(bsa, 0) + 1
            metrics.deltas.setdefault(bsa, []).append((outcome.slot, outcome.delta))
            stats[0] += 1
            stats[2] += outcome.delta
            stats[3] = max(stats[3], abs(outcome.delta))
        if not outcome.swap_success:
            return
        stats[1] += 1
        metrics.swaps[bsa] = metrics.swaps.get(bsa, 0) + 1
        self.swap_slots[outcome.slot] += 1
        if self.swap_slots[outcome.slot] == len(self.bsas):
            metrics.end_to_end += 1
            del self.swap_slots[outcome.slot]
        ctrl = self.controllers.get(bsa)
        if ctrl is not None:
            ctrl.heralds.append(outcome)
            if len(ctrl.heralds) >= ctrl.estimate_window:
                estimate = estimate_delta(ctrl.heralds, ctrl.estimate_window)
                updates, saturated = feedback_step(ctrl, estimate, self.values)
                self.values.update(updates)
                ctrl.heralds.clear()
                metrics.controller_updates[bsa] = metrics.controller_updates.get(bsa, 0) + 1
                if saturated:
                    metrics.saturations[bsa] = metrics.saturations.get(bsa, 0) + 1
                    logger.debug('%s: controller saturated at slot %d', bsa, outcome.slot)

    def _prune(self, next_slot):
        oldest = next_slot - self.horizon
        for waiting in self.pending.values():
            for pair in [p for p in waiting if p < oldest]:
                del waiting[pair]
        for pair in [p for p in self.swap_slots if p < oldest]:
            del self.swap_slots[pair]

    def _finish(self):
        metrics = self.metrics
        if not self.bsas:
            metrics.end_to_end = metrics.all_sources_fired
        for (bsa, index), (coinc, swaps, total, worst) in sorted(self.interval_stats.items(),
                                                                 key=lambda kv: (id_key(kv[0][0]), kv[0][1])):
            start = index * self.config.report_interval
            metrics.intervals.append({
                'record': 'interval', 'bsa': bsa, 'start_slot': start,
                'end_slot': min(self.config.slots, start + self.config.report_interval),
                'coincidences': coinc, 'swaps': swaps,
                'mean_delta_ps': (total / coinc) if coinc else None, 'max_abs_delta_ps': worst})
        metrics.final_settings = {vid: self.values[vid] for vid in sorted(self.caps_variable_ids(), key=id_key)}
        for bsa, count in metrics.saturations.items():
            logger.info('%s: controller saturated %d times', bsa, count)
        return metrics

    def caps_variable_ids(self):
        return [var.id for var in self.caps.variables]


def run(topo, strategy, config, seed=None, drift_models=()):
    """Simulates config.slots emission periods; identical inputs give identical metrics."""
    return Simulator(topo, strategy, config, seed, drift_models).run()


def run_document(doc, seed=None, config=None):
    """Runs a scenario document, hop by hop when it declares hold memories."""
    from photonic_sync import memory
    config = config or doc.simulation
    if any(m.memory_mode is not None and m.memory_mode.is_hold for m in doc.topology.memories):
        return memory.run_hop_by_hop(doc.topology, config, config.seed if seed is None else seed,
                                     strategy=doc.strategy)
    return run(doc.topology, doc.strategy, config, seed, doc.drift_models)


def grid_points(grid):
    """Cartesian product of a {name: values} grid, names in sorted order."""
    names = sorted(grid)
    return [dict(zip(names, values)) for values in itertools.product(*(grid[n] for n in names))]


def apply_overrides(config, point):
    """Copy of config with dotted names such as controller.gain replaced."""
    for name, value in sorted(point.items()):
        if name.startswith('controller.'):
            controller = config.controller or ControllerConfig()
            config = replace(config, controller=replace(controller, **{name.split('.', 1)[1]: value}))
        elif name in SimulationConfig.__dataclass_fields__:
            config = replace(config, **{name: value})
        else:
            raise ConfigError('cannot sweep unknown parameter %s' % name)
    return config


def _sweep_job(doc, seed, point):
    return run_document(doc, seed, apply_overrides(doc.simulation, point))


def run_sweep(doc, seeds, grid=None, jobs=1, processes=False):
    """Runs every (seed, grid point); results ordered by seed, then grid point."""
    points = grid_points(grid or {})
    jobs_list = [(seed, point) for seed in seeds for point in points]
    for _, point in jobs_list[:1]:
        apply_overrides(doc.simulation, point).check()
    pool_class = ProcessSweepPool if processes else SweepPool
    pool = pool_class(max_workers=max(1, int(jobs)))
    for index, (seed, point) in enumerate(jobs_list):
        pool.submit_id(index, _sweep_job, doc, seed, point)
    results = pool.collect(len(jobs_list))
    logger.info('sweep finished: %d runs on %d workers', len(jobs_list), pool.max_workers)
    return [(seed, point, metrics) for (seed, point), metrics in zip(jobs_list, results)]

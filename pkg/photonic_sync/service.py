"""Request handlers shared by the command line and the HTTP service.

Every handler takes a loaded ScenarioDocument and returns
(exit_code, records); SyncService exposes them as JSON POST routes and
SyncClient calls those routes with requests.
"""
import logging
from dataclasses import replace
from functools import wraps

import requests
from flask import Flask, jsonify, request

from photonic_sync.errors import PhotonicSyncError
from photonic_sync.notation_parser.notation import flags, parse_quantity
from photonic_sync.report import metrics_records, one_record
from photonic_sync.scenario import load_scenario
from photonic_sync.simulator import run_document
from photonic_sync.strategies import StrategyKind, cascade_sweep, capability_of, psd_of
from photonic_sync.timing_solver import apply_assignment, assignment_deltas, build_constraints, solve

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INFEASIBLE = 3


def validate_payload(doc):
    topo = doc.topology
    return EXIT_OK, [{'record': 'valid', 'nodes': len(topo.nodes), 'links': len(topo.links),
                      'sources': len(topo.sources), 'bsas': len(topo.bsas), 'memories': len(topo.memories),
                      'strategy': doc.strategy.value}]


def solve_payload(doc, epsilon=None, strategy=None):
    strategy = StrategyKind.parse(strategy or doc.strategy)
    epsilon = doc.epsilon if epsilon is None else epsilon
    system = build_constraints(doc.topology, capability_of(strategy, doc.topology))
    result = solve(system, epsilon)
    records = [{'record': 'solve', 'strategy': strategy.value, 'status': result.status, 'epsilon_ps': epsilon,
                'constraints': len(system.constraints), 'variables': len(system.variables)}]
    records += result.to_records()
    if not result.feasible:
        return EXIT_INFEASIBLE, records
    deltas = assignment_deltas(doc.topology, result)
    records += [{'record': 'delta', 'id': vid, 'change_ps': change} for vid, change in deltas.items() if change]
    return EXIT_OK, records


def cascade_payload(doc, perturbations, strategy=None, epsilon=None):
    strategy = StrategyKind.parse(strategy or doc.strategy)
    epsilon = doc.epsilon if epsilon is None else epsilon
    if not perturbations:
        return EXIT_OK, [{'record': 'psd', 'strategy': strategy.value,
                          'psd_partition': psd_of(doc.topology, strategy)}]
    records = []
    for report in cascade_sweep(doc.topology, strategy, perturbations, epsilon):
        records += report.to_records()
    return EXIT_OK, records


def simulate_payload(doc, seed=None, slots=None, apply_solution=False, include_deltas=False):
    config = doc.simulation
    if slots is not None:
        config = replace(config, slots=int(slots))
    if apply_solution:
        result = solve(build_constraints(doc.topology, capability_of(doc.strategy, doc.topology)), doc.epsilon)
        if result.feasible:
            doc = replace(doc, topology=apply_assignment(doc.topology, result))
        else:
            logger.warning('no feasible assignment to apply, simulating the scenario as given')
    seed = config.seed if seed is None else int(seed)
    metrics = run_document(doc, seed, replace(config, seed=seed))
    return EXIT_OK, metrics_records(metrics, include_deltas)


def _perturbations(value):
    """Accepts 'link=500m' strings or [link, meters] pairs."""
    if value is None:
        return []
    if isinstance(value, str):
        value = [value]
    out = []
    for item in value:
        out.append(flags.parse_perturbation(item) if isinstance(item, str) else (item[0], float(item[1])))
    return out


class SyncService(object):

    def __init__(self, name='photonic_sync', port: int = 5000, host: str = '0.0.0.0', debug=None, lenient=False):
        """SyncService(name, port: int=5000, host: str='0.0.0.0', debug=None)

        Arguments:
            name {str} -- Flask application name
            port {int} -- listening port, default 5000
            host {str} -- bind address, default 0.0.0.0
            debug {boolean} -- True for development, False/None for production
            lenient {boolean} -- downgrade unknown scenario keys to warnings
        """
        self.port = port
        self.host = host
        self.debug = debug
        self.lenient = lenient
        self.init_app(name)
        self.register_routes()

    def init_app(self, name):
        self.app = Flask(name)

    def route(self, rule: str, **options):
        if not rule.startswith('/'):
            rule = '/' + rule

        def decorator(f):
            endpoint = options.pop('endpoint', None)
            if options.get('methods') is None:
                options['methods'] = ('POST',)
            self.app.add_url_rule(rule, endpoint, f, **options)
            return f
        return decorator

    def scenario_json(self, f):
        """Loads body['scenario'] and passes the remaining keys as kwargs."""
        @wraps(f)
        def wrapper(*args, **kwargs):
            content = request.get_json(silent=True)
            if not isinstance(content, dict) or 'scenario' not in content:
                return jsonify({'type': 'error', 'exit_code': 2, 'message': 'body needs a "scenario" object'}), 400
            try:
                doc = load_scenario(content['scenario'], lenient=self.lenient)
                for key in content:
                    if key != 'scenario':
                        kwargs[key] = content[key]
                code, records = f(doc, *args, **kwargs)
            except PhotonicSyncError as e:
                logger.info('%s rejected: %s', request.path, e)
                return jsonify({'type': 'error', 'exit_code': e.exit_code, 'message': str(e)}), 422
            return jsonify({'type': 'result', 'exit_code': code, 'records': one_record(records)})
        return wrapper

    def register_routes(self):
        @self.route('/validate', endpoint='validate')
        @self.scenario_json
        def validate_route(doc, **ignored):
            return validate_payload(doc)

        @self.route('/solve', endpoint='solve')
        @self.scenario_json
        def solve_route(doc, epsilon=None, strategy=None):
            return solve_payload(doc, None if epsilon is None else parse_quantity(epsilon), strategy)

        @self.route('/cascade', endpoint='cascade')
        @self.scenario_json
        def cascade_route(doc, perturb=None, strategy=None, epsilon=None):
            return cascade_payload(doc, _perturbations(perturb), strategy,
                                   None if epsilon is None else parse_quantity(epsilon))

        @self.route('/simulate', endpoint='simulate')
        @self.scenario_json
        def simulate_route(doc, seed=None, slots=None, apply_solution=False):
            return simulate_payload(doc, seed, slots, bool(apply_solution))

    def run(self, port=None, host=None, debug=None):
        if port is None:
            port = self.port
        if host is None:
            host = self.host
        if debug is None:
            debug = self.debug
        logger.info('serving on %s:%s', host, port)
        self.app.run(port=port, host=host, debug=debug)


class SyncClient(object):
    """Calls a running SyncService."""

    def __init__(self, address: str, timeout=60):
        if not address.startswith('http://') and not address.startswith('https://'):
            address = 'http://' + address
        self.address = address.rstrip('/')
        self.timeout = timeout
        self.last_reply = None

    def post(self, rule, scenario, **kwargs):
        body = {'scenario': scenario}
        body.update({k: v for k, v in kwargs.items() if v is not None})
        r = requests.post(self.address + rule, json=body, timeout=self.timeout)
        self.last_reply = r
        if r.headers.get('Content-Type', '').startswith('application/json'):
            content = r.json()
            if content.get('type') == 'error':
                err = PhotonicSyncError(content.get('message'))
                err.exit_code = content.get('exit_code', 1)
                raise err
            return content
        r.raise_for_status()
        return {'type': 'result', 'exit_code': 0, 'records': []}

    def validate(self, scenario):
        return self.post('/validate', scenario)

    def solve(self, scenario, epsilon=None, strategy=None):
        return self.post('/solve', scenario, epsilon=epsilon, strategy=strategy)

    def cascade(self, scenario, perturb=None, strategy=None, epsilon=None):
        return self.post('/cascade', scenario, perturb=perturb, strategy=strategy, epsilon=epsilon)

    def simulate(self, scenario, seed=None, slots=None, apply_solution=None):
        return self.post('/simulate', scenario, seed=seed, slots=slots, apply_solution=apply_solution)

"""photonic-sync: validate, solve, analyze and simulate BSA timing scenarios.

Usage:
  photonic-sync validate fig5_chain4
  photonic-sync solve dsisd_asymmetric --epsilon 1ps
  photonic-sync cascade fig5_chain4 --strategy pump-path --perturb q-S1-I1=20m
  photonic-sync simulate fig7_continuous --seed 3 --slots 30000
  photonic-sync sweep dsisd_symmetric --seeds 0..9 --param p_gen=0.001,0.01 --jobs 8
  photonic-sync serve --port 5000

Exit codes: 0 success, 1 semantic or configuration error, 2 parse error,
3 infeasible timing.
"""
import argparse
import logging
import os
import sys

from photonic_sync import __version__
from photonic_sync.errors import PhotonicSyncError, ScenarioError
from photonic_sync.notation_parser.notation import flags, parse_quantity
from photonic_sync.report import ReportBundle, human, metrics_records, output_dir
from photonic_sync.scenario import load_scenario
from photonic_sync.service import (EXIT_OK, SyncService, cascade_payload, simulate_payload, solve_payload,
                                   validate_payload)
from photonic_sync.simulator import run_sweep
from photonic_sync.spawn import default_jobs

logger = logging.getLogger('photonic_sync.cli')


def emit(args, bundle, stream=None, filename=None):
    """Writes the bundle to --output (file or directory) or to stdout."""
    stream = stream or sys.stdout
    target = args.output
    if target is None and filename is not None and os.environ.get('PHOTONIC_SYNC_OUTPUT_DIR'):
        target = output_dir()
    if target is not None:
        path = os.path.join(target, filename) if (filename and (os.path.isdir(target) or target.endswith(os.sep)
                                                                 or not os.path.splitext(target)[1])) else target
        bundle.write(path)
        if args.human:
            stream.write(human(bundle.records))
        return path
    stream.write(human(bundle.records) if args.human else bundle.text())
    return None


def _doc(args):
    return load_scenario(args.scenario, lenient=args.lenient)


def _name(args, doc):
    base = os.path.basename(args.scenario)
    return doc.name or (base[:-5] if base.endswith('.json') else base)


def cmd_validate(args):
    try:
        doc = _doc(args)
    except ScenarioError as e:
        for v in e.violations:
            sys.stderr.write('%s\n' % v)
        return e.exit_code
    code, records = validate_payload(doc)
    emit(args, ReportBundle('validate', doc.hash, records))
    return code


def cmd_solve(args):
    doc = _doc(args)
    epsilon = parse_quantity(args.epsilon) if args.epsilon is not None else None
    code, records = solve_payload(doc, epsilon, args.strategy)
    emit(args, ReportBundle('solve', doc.hash, records))
    return code


def cmd_cascade(args):
    doc = _doc(args)
    perturbations = [flags.parse_perturbation(p) for p in args.perturb or ()]
    epsilon = parse_quantity(args.epsilon) if args.epsilon is not None else None
    code, records = cascade_payload(doc, perturbations, args.strategy, epsilon)
    emit(args, ReportBundle('cascade', doc.hash, records))
    return code


def cmd_simulate(args):
    doc = _doc(args)
    seed = doc.simulation.seed if args.seed is None else args.seed
    code, records = simulate_payload(doc, seed, args.slots, args.apply_solution, args.deltas)
    bundle = ReportBundle('simulate', doc.hash, records, seed=seed)
    emit(args, bundle, filename='%s-seed%d.jsonl' % (_name(args, doc), seed))
    return code


def cmd_sweep(args):
    doc = _doc(args)
    seeds = flags.parse_seeds(args.seeds)
    grid = dict(flags.parse_grid(p) for p in args.param or ())
    jobs = args.jobs or default_jobs()
    records = []
    for seed, point, metrics in run_sweep(doc, seeds, grid, jobs, processes=args.processes):
        records.append({'record': 'run', 'seed': seed, 'point': point})
        records += metrics_records(metrics)
    bundle = ReportBundle('sweep', doc.hash, records, extra={'seeds': seeds, 'grid': grid})
    emit(args, bundle, filename='%s-sweep.jsonl' % _name(args, doc))
    return EXIT_OK


def cmd_serve(args):
    service = SyncService(port=args.port, host=args.host, lenient=args.lenient)
    if args.scenario:
        _doc(args)
    service.run()
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog='photonic-sync', description=__doc__.split('\n')[0])
    parser.add_argument('--version', action='version', version='%(prog)s ' + __version__)
    parser.add_argument('-v', '--verbose', action='store_true', help='debug logging')
    parser.add_argument('-q', '--quiet', action='store_true', help='warnings and errors only')
    parser.add_argument('--human', action='store_true', help='tabular output instead of JSON lines')
    parser.add_argument('--lenient', action='store_true', help='warn about unknown scenario keys')
    parser.add_argument('-o', '--output', default=None,
                        help='output file or directory (default stdout, or $PHOTONIC_SYNC_OUTPUT_DIR for runs)')
    sub = parser.add_subparsers(dest='command')
    sub.required = True

    p = sub.add_parser('validate', help='check a scenario')
    p.add_argument('scenario', help='scenario file or shipped scenario name')
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser('solve', help='solve the simultaneity constraints')
    p.add_argument('scenario')
    p.add_argument('--epsilon', default=None, help='tolerance, e.g. 1ps')
    p.add_argument('--strategy', default=None)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser('cascade', help='perturbation cascade and PSD analysis')
    p.add_argument('scenario')
    p.add_argument('--strategy', default=None)
    p.add_argument('--perturb', action='append', help='link=length[m|km], repeatable')
    p.add_argument('--epsilon', default=None)
    p.set_defaults(func=cmd_cascade)

    p = sub.add_parser('simulate', help='run the discrete-event simulation')
    p.add_argument('scenario')
    p.add_argument('--seed', type=int, default=None)
    p.add_argument('--slots', type=int, default=None)
    p.add_argument('--apply-solution', action='store_true', help='apply the solver assignment first')
    p.add_argument('--deltas', action='store_true', help='include per-BSA delta series')
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser('sweep', help='simulate over seeds and a parameter grid')
    p.add_argument('scenario')
    p.add_argument('--seeds', default='0', help='a or a..b')
    p.add_argument('--param', action='append', help='name=v1,v2,..., repeatable')
    p.add_argument('--jobs', type=int, default=None, help='workers (default $PHOTONIC_SYNC_JOBS or 1)')
    p.add_argument('--processes', action='store_true', help='use worker processes instead of threads')
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser('serve', help='HTTP service exposing validate/solve/cascade/simulate')
    p.add_argument('scenario', nargs='?', help='optional scenario checked before serving')
    p.add_argument('--host', default='127.0.0.1')
    p.add_argument('--port', type=int, default=5000)
    p.set_defaults(func=cmd_serve)
    return parser


def configure_logging(args):
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter('%(asctime)s %(levelname)s %(name)s: %(message)s'))
    root = logging.getLogger('photonic_sync')
    root.handlers[:] = [handler]
    root.setLevel(level)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args)
    try:
        return args.func(args)
    except PhotonicSyncError as e:
        logger.error('%s', e)
        return e.exit_code


if __name__ == '__main__':
    sys.exit(main())

"""Line-delimited report records, their digest, and a human-readable table view."""
import dataclasses
import hashlib
import json
import logging
import os
import platform
import time
from enum import Enum

import numpy as np

import photonic_sync

logger = logging.getLogger(__name__)

OUTPUT_ENV = 'PHOTONIC_SYNC_OUTPUT_DIR'


def one_record(res):
    """JSON-safe copy of a result value."""
    if res is None or isinstance(res, (bool, str)):
        return res
    if isinstance(res, Enum):
        return res.value
    if isinstance(res, np.generic):
        return res.item()
    if isinstance(res, (float, int)):
        return res
    if isinstance(res, (list, tuple)):
        return [one_record(i) for i in res]
    if isinstance(res, (set, frozenset)):
        return sorted(one_record(i) for i in res)
    if isinstance(res, dict):
        return {str(k): one_record(v) for k, v in res.items()}
    if dataclasses.is_dataclass(res):
        return props_of(res)
    return str(res)


def props_of(obj):
    return {f.name: one_record(getattr(obj, f.name)) for f in dataclasses.fields(obj)
            if not f.name.startswith('_')}


def versions():
    return {'photonic_sync': photonic_sync.__version__, 'numpy': np.__version__,
            'python': platform.python_version()}


def metrics_records(metrics, include_deltas=False):
    records = list(metrics.intervals)
    if include_deltas:
        for bsa in metrics.bsas:
            records.append({'record': 'delta_series', 'bsa': bsa,
                            'slots': [s for s, _ in metrics.deltas.get(bsa, [])],
                            'delta_ps': [d for _, d in metrics.deltas.get(bsa, [])]})
    for photon in metrics.photons:
        records.append(dict(props_of(photon), record='photon'))
    records.append(metrics.summary())
    return [one_record(r) for r in records]


class ReportBundle(object):
    """Header, payload records and a wall-clock record left out of the digest."""

    def __init__(self, subcommand, scenario_hash, records, seed=None, extra=None):
        self.subcommand = subcommand
        self.scenario_hash = scenario_hash
        self.records = [one_record(r) for r in records]
        self.seed = seed
        self.extra = extra or {}
        self.wall_clock = time.time()

    def header(self):
        header = {'record': 'header', 'subcommand': self.subcommand, 'scenario_hash': self.scenario_hash,
                  'seed': self.seed, 'versions': versions()}
        header.update(one_record(self.extra))
        return header

    def payload_lines(self):
        return [json.dumps(r, sort_keys=True, ensure_ascii=False) for r in [self.header()] + self.records]

    def digest(self):
        return hashlib.sha256('\n'.join(self.payload_lines()).encode('utf-8')).hexdigest()

    def lines(self):
        meta = {'record': 'meta', 'wall_clock': self.wall_clock, 'payload_sha256': self.digest()}
        return self.payload_lines() + [json.dumps(meta, sort_keys=True)]

    def text(self):
        return '\n'.join(self.lines()) + '\n'

    def write(self, path):
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            f.write(self.text())
        logger.info('wrote %d records to %s', len(self.records) + 2, path)
        return path


def output_dir(explicit=None):
    return explicit or os.environ.get(OUTPUT_ENV) or '.'


def _cell(value):
    if isinstance(value, float):
        return '%.6g' % value
    if isinstance(value, (list, dict)):
        return json.dumps(value, sort_keys=True)
    return '' if value is None else str(value)


def human(records):
    """Records grouped by kind, each group printed as an aligned table."""
    groups = {}
    for r in records:
        groups.setdefault(r.get('record', '?'), []).append(r)
    out = []
    for kind, rows in groups.items():
        columns = [c for c in rows[0] if c != 'record']
        for row in rows[1:]:
            columns += [c for c in row if c != 'record' and c not in columns]
        cells = [[_cell(row.get(c)) for c in columns] for row in rows]
        widths = [max([len(c)] + [len(r[i]) for r in cells]) for i, c in enumerate(columns)]
        out.append('[%s]' % kind)
        out.append('  '.join(c.ljust(w) for c, w in zip(columns, widths)).rstrip())
        for r in cells:
            out.append('  '.join(v.ljust(w) for v, w in zip(r, widths)).rstrip())
        out.append('')
    return '\n'.join(out)

import re
from decimal import Decimal, InvalidOperation

from photonic_sync.errors import GrammarError, ScenarioParseError

# unit suffix -> picoseconds per unit
UNIT_TYPES = {
    'ps': (1, r'ps'),
    'ns': (10 ** 3, r'ns'),
    'us': (10 ** 6, r'us|µs'),
    'ms': (10 ** 9, r'ms'),
    's': (10 ** 12, r's'),
}

LENGTH_TYPES = {
    'm': Decimal(1),
    'km': Decimal(1000),
}

NUMBER = r'[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?'


class QuantityParse(object):
    """Reads unit-suffixed time quantities into integer picoseconds.

    For example::
        QuantityParse().parse('10ns') -> 10000
        QuantityParse().parse({'value': 1.5, 'unit': 'us'}) -> 1500000
    """

    def __init__(self, units=UNIT_TYPES):
        self.units = units
        alternatives = '|'.join(pattern for _, pattern in units.values())
        self.pattern = re.compile(r'^\s*({})\s*({})\s*$'.format(NUMBER, alternatives))

    def unit_factor(self, unit):
        for name, (factor, pattern) in self.units.items():
            if re.fullmatch(pattern, unit):
                return factor
        raise ScenarioParseError('unknown time unit %r' % unit)

    def to_ps(self, value, unit):
        try:
            exact = Decimal(str(value)) * self.unit_factor(unit)
        except InvalidOperation:
            raise ScenarioParseError('not a number: %r' % (value,))
        return int(exact.to_integral_value())

    def parse(self, quantity):
        if isinstance(quantity, dict):
            if set(quantity) != {'value', 'unit'}:
                raise ScenarioParseError('quantity needs exactly "value" and "unit": %r' % (quantity,))
            return self.to_ps(quantity['value'], quantity['unit'])
        if isinstance(quantity, str):
            res = self.pattern.search(quantity)
            if res is None:
                raise ScenarioParseError('cannot read time quantity %r' % quantity)
            return self.to_ps(*res.groups())
        raise ScenarioParseError('time quantities need a unit, got %r' % (quantity,))


parse_quantity = QuantityParse().parse


def format_quantity(ps):
    return {'value': int(ps), 'unit': 'ps'}


class PathNotation(object):
    """Grammar check for optical path notation D S (I S)* D.

    The automaton walks the text once so the first offending position
    (1-based) can be reported.
    """

    # state -> {symbol: next state}
    transitions = {
        'start': {'D': 'end_left'},
        'end_left': {'S': 'source'},
        'source': {'I': 'bsa', 'D': 'done'},
        'bsa': {'S': 'source'},
        'done': {},
    }

    def __init__(self, text):
        self.text = text

    def expected(self, state):
        options = sorted(self.transitions[state])
        return ' or '.join(options) if options else 'end of text'

    def parse(self):
        text = self.text
        if not text:
            raise GrammarError(text, 1, 'D')
        state = 'start'
        for pos, symbol in enumerate(text, start=1):
            nxt = self.transitions[state].get(symbol)
            if nxt is None:
                raise GrammarError(text, pos, self.expected(state))
            state = nxt
        if state != 'done':
            raise GrammarError(text, len(text) + 1, self.expected(state))
        return list(text)


class ChainNotation(PathNotation):
    """Memory-aware chain notation: segments (D|M) S (I S)* (D|M) joined by '|'.

    Interior segment ends must be memories so both sides of a '|' can be
    swapped at the repeater node.
    """

    transitions = {
        'start': {'D': 'end_left', 'M': 'end_left'},
        'end_left': {'S': 'source'},
        'source': {'I': 'bsa', 'D': 'done', 'M': 'memory_done'},
        'bsa': {'S': 'source'},
        'memory_done': {'|': 'boundary'},
        'boundary': {'M': 'end_left'},
        'done': {},
    }

    def parse(self):
        text = self.text
        if not text:
            raise GrammarError(text, 1, 'D or M')
        state = 'start'
        for pos, symbol in enumerate(text, start=1):
            nxt = self.transitions[state].get(symbol)
            if nxt is None:
                raise GrammarError(text, pos, self.expected(state))
            state = nxt
        if state not in ('done', 'memory_done'):
            raise GrammarError(text, len(text) + 1, self.expected(state))
        return text.split('|')


class FlagParse(object):
    """Parses the small command-line grammars: seed ranges, perturbations, grids."""

    seed_range = re.compile(r'^(\d+)(?:\.\.(\d+))?$')
    perturbation = re.compile(r'^([^=]+)=({})\s*(m|km)?$'.format(NUMBER))
    grid = re.compile(r'^([A-Za-z_][A-Za-z0-9_.]*)=(.+)$')

    def parse_seeds(self, text):
        res = self.seed_range.search(text.strip())
        if res is None:
            raise GrammarError(text, 1, 'a or a..b')
        first = int(res.group(1))
        last = int(res.group(2)) if res.group(2) is not None else first
        if last < first:
            raise GrammarError(text, text.index('..') + 3, 'upper bound >= lower bound')
        return list(range(first, last + 1))

    def parse_perturbation(self, text):
        res = self.perturbation.search(text.strip())
        if res is None:
            raise GrammarError(text, 1, 'link=length[m|km]')
        link, value, unit = res.groups()
        meters = Decimal(value) * LENGTH_TYPES[unit or 'm']
        return link.strip(), float(meters)

    def parse_grid(self, text):
        res = self.grid.search(text.strip())
        if res is None:
            raise GrammarError(text, 1, 'name=v1,v2,...')
        name, values = res.groups()
        parsed = []
        for item in values.split(','):
            item = item.strip()
            try:
                parsed.append(int(item) if re.fullmatch(r'[-+]?\d+', item) else float(item))
            except ValueError:
                raise GrammarError(text, text.index(item) + 1, 'a number')
        return name, parsed


flags = FlagParse()

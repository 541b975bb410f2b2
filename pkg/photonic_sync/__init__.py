__version__ = '0.1.0'

from . import errors, topology, timing_solver, strategies, simulator, memory, scenario, report, service

__all__ = ['errors', 'topology', 'timing_solver', 'strategies', 'simulator', 'memory', 'scenario', 'report',
           'service']
__copyright__ = "Copyright 2026, photonic_sync developers"

# python setup.py sdist bdist_wheel
# twine upload dist/*

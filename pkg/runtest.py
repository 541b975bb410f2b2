#!/usr/bin/env python
"""Runs every test under tests/: python runtest.py [-v]"""
import os
import sys
import unittest

if __name__ == '__main__':
    here = os.path.dirname(os.path.abspath(__file__))
    sys.path.insert(0, here)
    verbosity = 2 if '-v' in sys.argv[1:] else 1
    suite = unittest.TestLoader().discover(os.path.join(here, 'tests'), top_level_dir=here)
    result = unittest.TextTestRunner(verbosity=verbosity).run(suite)
    sys.exit(0 if result.wasSuccessful() else 1)

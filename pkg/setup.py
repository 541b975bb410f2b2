#!/usr/bin/env python
from setuptools import setup, find_packages

# python setup.py sdist bdist_wheel
# twine upload dist/*

# PyPi prefers reStructuredText.  Convert README.md when pypandoc is around,
# otherwise ship without a long description.
readme = ''
try:
    import pypandoc
    readme = pypandoc.convert_file('README.md', 'rst', format='md')
except (IOError, ImportError):
    readme = ''


setup(
    name='photonic_sync',
    version='0.1.0',
    description='Timing synchronization of Bell state analyzers in photonic quantum networks: '
                'constraint solver, strategy analysis and discrete-event simulator',
    long_description=readme,
    license='BSD',
    platforms='any',
    classifiers=[
        'Development Status :: 3 - Alpha',
        'License :: OSI Approved :: BSD License',
        'Operating System :: OS Independent',
        'Programming Language :: Python',
        'Programming Language :: Python :: 3.8',
        'Programming Language :: Python :: 3.9',
        'Programming Language :: Python :: 3.10',
        'Topic :: Scientific/Engineering :: Physics',
        'Topic :: System :: Networking',
        ],
    keywords=['quantum network', 'entanglement swapping', 'bell state analyzer', 'timing', 'simulation'],
    entry_points={'console_scripts': [
        'photonic-sync = photonic_sync.cli:main',
    ]},
    packages=find_packages(exclude=('test*', 'runtest*', 'examples*')),
    package_data={'photonic_sync': ['scenarios/*.json']},
    include_package_data=True,
    python_requires='>=3.8',
    install_requires=['flask', 'requests', 'numpy', 'networkx>=2.8', 'scipy'],
)

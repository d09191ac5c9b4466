#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
.. currentmodule:: setup.py
.. moduleauthor:: Pat Daburu <pat@daburu.net>

This file is used to create the package we'll publish to PyPI.
"""

import os
import depthkd
from setuptools import setup, find_packages  # Always prefer setuptools over distutils
from codecs import open  # To use a consistent encoding
from os import path

here = path.abspath(path.dirname(__file__))

# Get the long description from the relevant file
with open(path.join(here, 'README.md'), encoding='utf-8') as f:
    long_description = f.read()

# Get the base version from the library.
version = depthkd.__version__

# If the environment has a build number set...
if os.getenv('buildnum') is not None:
    # ...append it to the version.
    version = "{version}.{buildnum}".format(version=version, buildnum=os.getenv('buildnum'))

setup(
  name='depthkd',
  description="Data-free knowledge distillation for monocular depth estimation",
  long_description=long_description,
  long_description_content_type='text/markdown',
  packages=find_packages(exclude=["*.tests", "*.tests.*", "tests.*", "tests"]),
  version=version,
  install_requires=[
    'addict>=2.1.3,<3',
    'matplotlib>=3.5,<4',
    'numpy>=1.21,<3',
    'ordered-set>=4.0.2,<5',
    'Pillow>=9.0,<12',
    'scipy>=1.7,<2',
    'titlecase>=0.12.0,<3',
    'torch>=1.13,<3',
    'tqdm>=4.62,<5'
  ],
  entry_points={
    'console_scripts': [
      'depthkd=depthkd.cli:main'
    ]
  },
  package_data={
    'depthkd': ['defaults.json']
  },
  python_requires=">=3.8",
  license='MIT',
  author='Pat Daburu',
  author_email='pat@daburu.net',
  url='http://depthkd.readthedocs.io/en/latest/index.html',  # Use the URL to the github repo.
  download_url='https://github.com/patdaburu/depthkd/archive/{version}.tar.gz'.format(version=version),
  keywords=[
    'depth estimation', 'knowledge distillation', 'data-free', 'pytorch'
  ],
  # See https://PyPI.python.org/PyPI?%3Aaction=list_classifiers
  classifiers=[
    # How mature is this project? Common values are
    #   3 - Alpha
    #   4 - Beta
    #   5 - Production/Stable
    'Development Status :: 3 - Alpha',

    # Indicate who your project is intended for
    'Intended Audience :: Science/Research',
    'Topic :: Scientific/Engineering :: Artificial Intelligence',

    # Pick your license as you wish (should match "license" above)
    'License :: OSI Approved :: MIT License',

    # Specify the Python versions you support here. In particular, ensure
    # that you indicate whether you support Python 2, Python 3 or both.
    'Programming Language :: Python :: 3.8',
  ],
  include_package_data=True
)

#!/usr/bin/env python
from setuptools import setup, find_packages
import glob

scripts = glob.glob("scripts/*")

VERSION = "0.1.0"

setup(name='pvebayes',
      packages=find_packages(),
      version=VERSION,
      description='Empirical Bayes signal detection and signal strength '
                  'estimation for pharmacovigilance report tables',
      setup_requires=["numpy"],
      install_requires=["numpy", "scipy", "astropy>=4.1", "tqdm",
                        "pyyaml", "appdirs"],
      extras_require={"test": ["pytest"]},
      package_data={"pvebayes": ["files/*.csv", "files/*.yaml"]},
      include_package_data=True,
      scripts=scripts,
      classifiers=[
          'Intended Audience :: Science/Research',
          'Operating System :: OS Independent',
          'Programming Language :: Python :: 3',
          'Topic :: Scientific/Engineering :: Medical Science Apps.',
      ],
      )

#!/usr/bin/env python
from setuptools import setup

setup(
    name="fg-explore",
    version="0.1.0",
    description="Fixed-confidence best-vertex identification with feedback graphs",
    author="fg-explore developers",
    classifiers=["Programming Language :: Python :: 3 :: Only"],
    py_modules=["fg_explore"],
    install_requires=[
        "singer-python",
        "numpy>=1.22",
        "scipy>=1.8",
        "pandas>=1.4",
    ],
    extras_require={
        'dev': [
            'ipdb',
            'pylint',
            'nose'
        ]
    },
    entry_points={
        'console_scripts': [
            'fg-explore = fg_explore:main',
        ]
    },
    packages=["fg_explore"],
    include_package_data=True,
)

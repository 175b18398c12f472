#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Setup script for recovery-sim
"""

from setuptools import setup

with open("README.md", "r", encoding="utf-8") as fh:
    long_description = fh.read()

with open("requirements.txt", "r", encoding="utf-8") as fh:
    requirements = [line.strip() for line in fh if line.strip() and not line.startswith("#")]

setup(
    name="recovery-sim",
    version="1.0.0",
    description="Discrete-event simulator comparing SRM and NDN/SVS loss recovery",
    long_description=long_description,
    long_description_content_type="text/markdown",
    py_modules=[
        "sim_engine",
        "topology",
        "ip_multicast",
        "srm",
        "ndn_core",
        "ndn_forwarder",
        "svs",
        "group_app",
        "metrics_trace",
        "scenario",
        "recovery_sim",
    ],
    data_files=[("scenarios", [
        "scenarios/fig1.json",
        "scenarios/fig1.srm.json",
        "scenarios/fig3.json",
        "scenarios/fig3.ndn.json",
        "scenarios/svs-quiet.json",
        "scenarios/timer-window.srm.json",
        "scenarios/lossy-x.json",
    ])],
    classifiers=[
        "Development Status :: 4 - Beta",
        "Intended Audience :: Science/Research",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.8",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Topic :: System :: Networking",
    ],
    python_requires=">=3.8",
    install_requires=requirements,
    entry_points={
        "console_scripts": [
            "recovery-sim=recovery_sim:main",
        ],
    },
)

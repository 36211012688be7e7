"""Simulator of a six-ion dual-type trapped-ion quantum memory.

Modules
-------
qstate       dense density-matrix engine over three-level sites
circuits     native gates, Bell-state preparation and analysis circuits
noise        field-profile dephasing, OU field noise, leakage, storage
estimators   GHZ fidelity decomposition and Monte-Carlo parity estimation
detection    four-stage multi-state detection and post-selection
gatedesign   segmented spin-dependent-force gate design
experiments  config, pipelines, likelihood fits and the command line
"""

__version__ = "0.1.0"

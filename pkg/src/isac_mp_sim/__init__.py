"""Simulation and estimation toolkit for uplink OFDM tracking in a
RIS-assisted cell-free network.

Submodules
----------
scenario   geometric world model (anchors, user kinematics, link geometry)
channel    per-link gains, array steering, LOS blockage
protocol   resource-element grid, repetition-coded transmit and RIS schedules
synth      vectorized per-BS observation synthesis
beliefs    Gaussian / complex-Gaussian / von Mises belief algebra
hvmp       hybrid variational message-passing estimator
bcrb       recursive Bayesian information matrix and weighted bound
risopt     gradient-based RIS phase-profile optimization
harness    experiment orchestration, metrics, CSV output
"""

__version__ = "0.1.0"

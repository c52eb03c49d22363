"""Executable two-level architecture for serverless cloud-native apps.

The bottom level is a typed dataflow calculus (``meshflow.calculus``);
the top level is a simulated mesh of sidecar-managed microservices
(``meshflow.microservice``, ``meshflow.mesh``, ``meshflow.backend``)
driven by a deterministic discrete-event simulator.
"""

__version__ = "0.1.0"

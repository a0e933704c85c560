"""Optimal-transport rollout monitoring and human-in-the-loop fleet simulation.

The package couples three layers:

* a discrete optimal-transport core (exact min-cost-flow solver and a
  log-domain Sinkhorn approximation),
* an online rollout monitor that scores live trajectories against a bank
  of expert demonstrations and raises intervention alerts past a
  calibrated threshold, and
* a simulated multi-robot fleet with a FIFO intervention queue, rewinding,
  scripted or human operators, and a metrics pipeline.

A FastAPI service (``otfleet.service``) wraps the library for long-running
fleet sessions and operator consoles; ``otfleet.cli`` is a thin client over
the same entry points.
"""

__version__ = "0.1.0"

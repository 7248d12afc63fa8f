"""Viewpoint optimization for simulated strawberry harvesting.

Modules: ``scene`` (procedural plants, camera, renderer), ``dataset``
(annotated frame collection), ``detector`` (oracle and grid detectors, PR
evaluation), ``env`` (the hemisphere MDP), ``nets`` (numpy networks and
Adam), ``agent`` (DDPG), ``policies`` (baselines), ``evaluation`` and
``cli``.
"""

from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]

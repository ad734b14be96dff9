"""AoI-optimal sampling and mini-slot scheduling for energy-limited sensors.

Modules: ``model`` (sensor dynamics), ``mdp`` (value iteration),
``steady_state`` (policy averages), ``cmdp`` (energy-constrained mixing),
``sampling`` (rate search), ``sim`` (multi-sensor simulator), ``oracle``
(brute-force and Monte-Carlo checks), ``experiments`` and ``cli``.
"""

__version__ = "0.1.0"

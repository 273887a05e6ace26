"""Zipf's Gridworld: a skew-aware gridworld benchmark with a desk-scale RL harness.

The package bundles five pieces that are usable on their own:

* :mod:`zipfgrid.zipf` -- discrete power-law (Zipfian) distributions and samplers.
* :mod:`zipfgrid.gridworld` -- the environment engine (map generation, dynamics,
  pixel rendering, level splits ``zipf_2`` / ``uniform`` / ``rare``).
* :mod:`zipfgrid.nets` -- a minimal numpy function approximator with exact
  reverse-mode gradients and an AdamW optimizer.
* :mod:`zipfgrid.replay` / :mod:`zipfgrid.agents` -- prioritized episode replay,
  a Q(lambda) learner with value rescaling, and an advantage actor-critic.
* :mod:`zipfgrid.evaluation` / :mod:`zipfgrid.training` -- the measurement
  protocol (split evaluation, seed/window aggregation) and the training loop
  behind the ``zipfgrid`` command line tool.
"""

from zipfgrid.zipf import ZipfDistribution, build_zipf, rare_tail

__all__ = ["ZipfDistribution", "build_zipf", "rare_tail"]

__version__ = "0.1.0"

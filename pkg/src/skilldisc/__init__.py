"""Unsupervised manipulation skill discovery, desk scale.

Pretrains a multiplicative compositional policy with mutual-information
intrinsic rewards on a kinematic toy simulator, then transfers the frozen
primitives to goal-conditioned and multi-task RL.
"""

__version__ = "0.1.0"

"""Cost-sensitive classification under adversarial attack.

Submodules:

cost
    cost matrices, expected cost, max-probability / min-cost decisions
model
    small fully connected classifier with input gradients and training
attack
    l-infinity PGD with targeted and maxi-min expected-cost objectives
calibration
    ECE, reliability bins, temperature fitting
game
    payoff matrices, pure Nash, dominance, fictitious-play solver
harness
    synthetic experiment pipeline behind the ``costadv`` CLI
"""

from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]

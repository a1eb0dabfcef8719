"""Parameter-space Bellman operators and the experiment harness around them."""

from . import agents, autodiff, environments, evaluation, families, operators, training

__version__ = "0.1.0"

__all__ = [
    "agents",
    "autodiff",
    "environments",
    "evaluation",
    "families",
    "operators",
    "training",
]

from .base import FiniteModel, Transition, TransitionBatch, load_transitions, save_transitions
from .bicycle import Bicycle
from .car_on_hill import CarOnHill, start_state_grid
from .chain_walk import ChainWalk
from .collect import (
    collect_bicycle,
    collect_car_on_hill,
    collect_chain_walk,
    collect_lqr,
    default_dataset,
)
from .lqr import LqrEnv

__all__ = [
    "Bicycle",
    "CarOnHill",
    "ChainWalk",
    "FiniteModel",
    "LqrEnv",
    "Transition",
    "TransitionBatch",
    "collect_bicycle",
    "collect_car_on_hill",
    "collect_chain_walk",
    "collect_lqr",
    "default_dataset",
    "load_transitions",
    "save_transitions",
    "start_state_grid",
]

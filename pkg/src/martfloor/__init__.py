"""Martingale measures with a density floor on finite scenario trees."""
from .exceptions import InputError, MartFloorError, NAViolationError, SolverError, TreeValidationError
from .market import OnePeriodModel, ScenarioTree, load_tree, save_tree

__version__ = "0.1.0"

__all__ = ["InputError", "MartFloorError", "NAViolationError", "SolverError", "TreeValidationError",
           "OnePeriodModel", "ScenarioTree", "load_tree", "save_tree", "__version__"]

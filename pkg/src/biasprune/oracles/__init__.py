"""Independent checks: finite-difference gradients, brute-force prune search
and analytically wired fixtures."""

from .fixture import GradientFixture, PlantedFixture, build_gradient_fixture, build_planted_fixture
from .gradcheck import finite_difference_gradient, finite_difference_sweep
from .search import exhaustive_prune_search, search_candidates, subset_accuracy

__all__ = [
    "GradientFixture",
    "PlantedFixture",
    "build_gradient_fixture",
    "build_planted_fixture",
    "exhaustive_prune_search",
    "finite_difference_gradient",
    "finite_difference_sweep",
    "search_candidates",
    "subset_accuracy",
]

"""Consistent histories with both branching and merging of histories.

Submodules
----------
core        dense matrix primitives, entropies, validation
histories   chain operators, probabilities, decoherence functional
world       world state with branch / merge transformations
verifiers   entropy-inequality checks and ensembles
worldsim    random instances and the record-saturation simulation
cli         ``histmerge`` command-line entry point
"""
from importlib import resources

from .core import (
    DensityMatrix,
    Hamiltonian,
    ProjectorDecomposition,
    evolve_unitary,
    hermitian_eig,
    quadratic_entropy,
    validate,
    von_neumann_entropy,
)
from .errors import (
    CapacityError,
    DoubleEraseError,
    HistmergeError,
    SchemaError,
    SelectorError,
    ValidationError,
    ZeroBranchError,
)
from .histories import (
    ERASED,
    EventSlot,
    HistoryFamily,
    chain_operator,
    check_consistency,
    conditional_state_direct,
    conditional_state_step,
    decoherence_functional,
    heisenberg_projector,
    history_probability,
    load_family,
)
from .world import (
    WorldState,
    branch,
    init_world,
    merge_deterministic,
    merge_with_event,
    world_entropy,
)

__version__ = "0.1.0"


def fixture_path(name: str):
    """Path of a shipped JSON fixture, e.g. ``fixture_path("double_slit.json")``."""
    return resources.files(__name__).joinpath("fixtures", name)

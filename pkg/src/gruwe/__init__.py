"""GRUwE: a GRU whose state decays through learnable exponential basis
functions between irregularly timed observations."""

from .cell import MarkovState, StepInput, backward_sequence, forward_sequence, step, step_all_masked
from .data import EventSequence, IrregularSeries
from .decay import DecayParams, DecayRegime, classify_regimes, gamma, lipschitz_constant
from .params import GruweParams

__version__ = "0.1.0"

__all__ = [
    "DecayParams",
    "DecayRegime",
    "EventSequence",
    "GruweParams",
    "IrregularSeries",
    "MarkovState",
    "StepInput",
    "backward_sequence",
    "classify_regimes",
    "forward_sequence",
    "gamma",
    "lipschitz_constant",
    "step",
    "step_all_masked",
]

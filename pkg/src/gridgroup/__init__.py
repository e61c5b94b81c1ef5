"""Group N-1 line contingencies of a power network and design one controller per group."""
from .clustering import Grouping, divisive, k_centers, k_medoids
from .errors import (GridGroupError, NumericalError, UnhandledContingency, UnstableError,
                     ValidationError)
from .evaluation import EvaluationReport, evaluate_grouping, scaled_cost, sweep_k
from .lti import (ClosedLoopSystem, DynamicController, StateSpaceModel, close_loop,
                  h2_norm, hinf_norm)
from .metrics import DistanceMatrix, d_fr, d_psn, d_sr, distance_matrix
from .pipeline import (ControllerLibrary, PipelineConfig, run_offline, run_sweep,
                       select_controller)
from .power import PowerNetwork, build_dynamics, enumerate_contingencies, load_network
from .synthesis import ControllerGain, SynthesisOptions, synthesize

__version__ = "0.1.0"

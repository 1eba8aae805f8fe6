"""Joint bit-width and layer-width search with k-means TPE, at desk scale."""

from .cluster import Clustering, k_means_and_sort, top_bottom
from .driver import (RaceReport, SearchState, Trial, TrialLog, load_state, optimize, resume,
                     run_race, run_search, save_state)
from .errors import (CapacityError, ConfigurationError, InputError, IntegrityError, KmtpeError,
                     NumericalError)
from .evalsim import BenchObjective, Evaluation, SyntheticTask, evaluate, pretrain
from .hw import ConstraintSet, CostReport, HardwareSpec, cost_report, packed_mac_simulate
from .networks import preset
from .sensitivity import SensitivityReport, analyze_hessian, hutchinson_trace, trace_bound_check
from .space import Configuration, LayerShape, SearchSpace, build_pruned_space, sample_randomly
from .tinynet import TinyNet
from .tpe import TpeParams, classic_threshold, kmeans_split

__version__ = "0.1.0"

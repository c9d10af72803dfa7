"""bagvote: instance annotation inside weakly labeled bags.

Positive bags contain at least one object instance, negative bags none.
The package annotates individual instances by similarity voting: the
soft-label density estimator (``ekde``), the negative-mining baselines
(``negmin``, ``crane``, ``negvote``), adjacency-based score refinement,
an overlap-based evaluation harness, and a seeded synthetic generator.
"""

__version__ = "0.1.0"

from .backends import HAS_NUMBA, active_backend
from .baselines import (
    BaselineScores,
    crane_scores,
    negmin_score,
    negmin_scores,
    negmin_select,
    negvote_scores,
    top_k_select,
)
from .data import Bag, Dataset, Instance, l2_normalize, load_dataset, write_dataset
from .ekde import (
    EkdeConfig,
    EkdeResult,
    Priors,
    ScoreTable,
    SoftLabels,
    class_conditionals,
    class_priors,
    decide,
    margin_table,
    posterior_margins,
    run_ekde,
    update_soft_labels,
    voting_score,
    voting_scores,
)
from .errors import BagvoteError, DegenerateClassError, ParseError, ValidationError
from .evaluation import (
    EvalReport,
    PRCurve,
    average_precision,
    bag_overlap,
    pr_curve,
)
from .kernels import (
    DEFAULT_BANDWIDTH_GRID,
    KernelConfig,
    KernelMatrix,
    gaussian_kernel,
    kernel_matrix,
    select_bandwidths,
)
from .refinement import AdjacencyGraph, build_adjacency, refine_scores
from .synth import SynthConfig, SynthResult, generate

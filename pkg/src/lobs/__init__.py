"""Layer-wise second-order pruning toolkit.

Prunes feed-forward networks one layer at a time using curvature-aware
sensitivity scores with compensating weight updates, verifies the layer
and accumulated error bounds numerically, and benchmarks the criterion
against magnitude, random, diagonal-curvature, and input-weighted
baselines.
"""

from .baselines import prune_by_criterion, score_apozw, score_magnitude, \
    score_obd_diagonal, score_random
from .bounds import BoundReport, accumulated_error, build_bound_report, \
    layer_error, relative_output_error, sensitivity_histogram, theorem1_rhs
from .data import Dataset, generate_synthetic_digits, load_mnist
from .hessian import PatchSet, PsiInverse, PsiMatrix, accumulate_psi, \
    extract_patches, materialize_error_hessian, pinv_diag_entry, \
    recursive_psi_inverse
from .layers import ConvLayer, DenseLayer
from .network import LayerSnapshot, Network, capture_snapshots, forward, \
    test_error
from .pruner import PruneConfig, PruneDecision, SensitivityTable, \
    iterative_lobs, prune_layer, prune_one, sensitivities, threshold_sweep
from .train import TrainConfig, train_sgd

__version__ = "0.1.0"

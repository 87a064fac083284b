"""Logit-shift model surgery and its effect on gradient attributions.

A class-independent shift added to every logit of a CNN classifier leaves
softmax outputs, predictions and training gradients provably unchanged while
arbitrarily corrupting heatmaps computed from pre-softmax gradients.  This
package builds such modified networks, verifies every invariance claim
numerically, and demonstrates the heatmap corruption end to end on a
synthetic task.
"""

__version__ = "0.1.0"

from .attribution import (
    ELEMENTWISE,
    GAP,
    AttributionMap,
    ComparisonReport,
    Heatmap,
    NormalizeResult,
    Rect,
    compare_heatmaps,
    default_tap_region,
    grad_cam,
    integrated_gradients,
    normalize,
    project_rect_upstream,
    saliency,
    upsample,
)
from .network import (
    INPUT,
    POST,
    PRE,
    Conv2D,
    Dense,
    Flatten,
    ForwardTrace,
    GradientSet,
    MaxPool,
    Network,
    ReLU,
    ScoreSelector,
    backward,
    cross_entropy,
    finite_diff_gradient,
    forward,
    kink_margin,
    predict,
    score,
    softmax,
)
from .surgery import (
    AttackConfig,
    AttackedNetwork,
    EquivalenceReport,
    SingleClassShiftNetwork,
    apply_logit_shift,
    apply_single_class_shift,
    default_attack,
    presoftmax_gradient_delta,
    run_full_verification,
    shift_term,
    verify_output_equivalence,
    verify_postsoftmax_gradient_equality,
    verify_training_gradient_equality,
)
from .tensor import Tensor, argmax_flat, elementwise, reduce_sum
from .trainer import (
    LockstepResult,
    SyntheticDataset,
    TrainConfig,
    TrainingDiverged,
    TrainResult,
    accuracy,
    gen_blob_dataset,
    init_network,
    lockstep_training_check,
    quadrant_of,
    train_sgd,
)

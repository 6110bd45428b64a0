"""Earth mover distance objectives for auto-regressive language models."""

from .kernels import BACKEND
from .losses import (
    LossConfig,
    LossOutput,
    Objective,
    demd_general_loss,
    demd_loss,
    emo_loss,
    mixce_loss,
    mle_loss,
    sequence_loss,
    tailr_loss,
)
from .numerics import as_distribution, grad_check, log_softmax, softmax
from .transport import (
    CostMatrix,
    TransportPlan,
    cost_matrix_from_embeddings,
    exact_emd,
    plan_cost,
    surrogate_plan,
)

__version__ = "0.1.0"

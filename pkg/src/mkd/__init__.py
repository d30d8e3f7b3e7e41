"""Meta knowledge distillation: distill a student network while learning the
teacher/student softmax temperatures online via one-step-lookahead
meta-gradients."""

from .autograd import Tensor, finite_difference_grad, grad, no_grad
from .config import ExperimentConfig, load_config
from .data import Dataset, gaussian_mixture, split_train_val
from .estimators import DistilledClassifier, TeacherClassifier
from .losses import ce_loss, kd_loss, label_smooth, meta_loss
from .models import (
    MLPConfig,
    Temperatures,
    meta_init,
    mlp_forward,
    mlp_init,
    tempnet_forward,
)
from .optim import (
    AdamWState,
    SGDState,
    adamw_step,
    cosine_schedule,
    meta_grad_exact,
    meta_grad_fd,
    mkd_step,
    sgd_step,
)
from .train import DistillRun, distill, grid_search, train_teacher

__all__ = [
    "Tensor", "grad", "no_grad", "finite_difference_grad",
    "ExperimentConfig", "load_config",
    "Dataset", "gaussian_mixture", "split_train_val",
    "DistilledClassifier", "TeacherClassifier",
    "kd_loss", "ce_loss", "meta_loss", "label_smooth",
    "MLPConfig", "Temperatures", "mlp_init", "mlp_forward",
    "meta_init", "tempnet_forward",
    "SGDState", "AdamWState", "sgd_step", "adamw_step", "cosine_schedule",
    "meta_grad_exact", "meta_grad_fd", "mkd_step",
    "DistillRun", "distill", "grid_search", "train_teacher",
]

__version__ = "0.1.0"

"""Scikit-learn style estimators wrapping the training loops, so the
distillation machinery composes with pipelines and model selection."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .autograd import Tensor, no_grad
from .config import ExperimentConfig
from .data import Dataset
from .models import mlp_forward
from .train import DistillRun, train_teacher


def _dataset_from_xy(X, y):
    classes, encoded = np.unique(y, return_inverse=True)
    return Dataset(np.asarray(X, dtype=np.float64), encoded,
                   num_classes=len(classes)), classes


class _InMemoryMixin:
    """Shared predict path over a fitted parameter dict."""

    def predict_proba(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X)
        with no_grad():
            z = mlp_forward(self.params_, Tensor(X)).data
        e = np.exp(z - z.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, X):
        proba = self.predict_proba(X)
        return self.classes_[np.argmax(proba, axis=1)]


class TeacherClassifier(_InMemoryMixin, BaseEstimator, ClassifierMixin):
    """MLP classifier trained on cross-entropy; used as distillation teacher."""

    def __init__(self, hidden_dims=(64, 64), epochs=30, batch_size=64,
                 lr=0.05, lr_min=0.0005, momentum=0.9, weight_decay=5e-4,
                 label_smooth_eps=0.0, mixup_alpha=0.0, holdout_fraction=0.1,
                 seed=0):
        self.hidden_dims = hidden_dims
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.lr_min = lr_min
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.label_smooth_eps = label_smooth_eps
        self.mixup_alpha = mixup_alpha
        self.holdout_fraction = holdout_fraction
        self.seed = seed

    def _config(self, ds):
        return ExperimentConfig(
            teacher_hidden=tuple(self.hidden_dims),
            epochs=self.epochs, batch_size=self.batch_size,
            lr=self.lr, lr_min=self.lr_min, momentum=self.momentum,
            weight_decay=self.weight_decay,
            label_smooth_eps=self.label_smooth_eps,
            mixup_alpha=self.mixup_alpha,
            holdout_fraction=self.holdout_fraction,
            seed=self.seed,
        ).validate()

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        ds, self.classes_ = _dataset_from_xy(X, y)
        cfg = self._config(ds)
        self.params_, self.mlp_config_ = train_teacher(cfg, dataset=ds)
        return self


class DistilledClassifier(_InMemoryMixin, BaseEstimator, ClassifierMixin):
    """Student trained by fixed-temperature KD or temperature-learning MKD.

    ``teacher`` is a fitted TeacherClassifier (or any object exposing
    ``params_`` and ``classes_``).
    """

    def __init__(self, teacher=None, method="mkd", hidden_dims=(32,),
                 epochs=30, batch_size=64, lr=0.05, lr_min=0.0005,
                 momentum=0.9, weight_decay=5e-4, tau_init=2.0,
                 meta_lr=3e-4, meta_weight_decay=5e-5, meta_objective="eq8",
                 meta_grad="exact", holdout_fraction=0.1, seed=0):
        self.teacher = teacher
        self.method = method
        self.hidden_dims = hidden_dims
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.lr_min = lr_min
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.tau_init = tau_init
        self.meta_lr = meta_lr
        self.meta_weight_decay = meta_weight_decay
        self.meta_objective = meta_objective
        self.meta_grad = meta_grad
        self.holdout_fraction = holdout_fraction
        self.seed = seed

    def fit(self, X, y):
        if self.teacher is None:
            raise ValueError("DistilledClassifier needs a fitted teacher")
        check_is_fitted(self.teacher, "params_")
        X, y = check_X_y(X, y)
        ds, self.classes_ = _dataset_from_xy(X, y)
        if not np.array_equal(self.classes_, self.teacher.classes_):
            raise ValueError("teacher and training data disagree on classes")
        cfg = ExperimentConfig(
            student_hidden=tuple(self.hidden_dims),
            epochs=self.epochs, batch_size=self.batch_size,
            lr=self.lr, lr_min=self.lr_min, momentum=self.momentum,
            weight_decay=self.weight_decay, tau_init=self.tau_init,
            meta_lr=self.meta_lr, meta_weight_decay=self.meta_weight_decay,
            meta_objective=self.meta_objective, meta_grad=self.meta_grad,
            holdout_fraction=self.holdout_fraction, seed=self.seed,
        ).validate()
        teacher_params = {k: v.detach() for k, v in self.teacher.params_.items()}
        run = DistillRun(cfg=cfg, teacher=teacher_params, method=self.method,
                         dataset=ds)
        run.run()
        self.params_ = run.student
        self.temperatures_ = run.current_temps().values()
        return self

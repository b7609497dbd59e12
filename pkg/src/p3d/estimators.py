"""scikit-learn style wrappers around network training and features.

These give the library a fit/predict/transform surface that composes
with sklearn pipelines and model selection (get_params/set_params come
from BaseEstimator).  X is always a batch of clips shaped
(n_samples, 3, frames, height, width).
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin

from .errors import ShapeError
from .network import ArchSpec, build_network
from .training import TrainConfig, evaluate, train


def validate_clips(X, min_hw: int = 8) -> np.ndarray:
    """Check and coerce a clip batch: 5-D, 3 channels, finite float32."""
    X = np.asarray(X)
    if X.ndim != 5:
        raise ShapeError(
            f"X must be (n_samples, 3, T, H, W), got ndim={X.ndim}")
    if X.shape[1] != 3:
        raise ShapeError(f"X must have 3 channels, got {X.shape[1]}")
    if X.shape[3] < min_hw or X.shape[4] < min_hw:
        raise ShapeError(f"frames must be at least {min_hw}x{min_hw}, "
                         f"got {X.shape[3]}x{X.shape[4]}")
    X = X.astype(np.float32, copy=False)
    if not np.all(np.isfinite(X)):
        raise ValueError("X contains non-finite values")
    return X


class P3DClassifier(ClassifierMixin, BaseEstimator):
    """Clip classifier trained from scratch with SGD.

    Parameters mirror ArchSpec and TrainConfig; the network geometry is
    taken from the clips passed to fit.
    """

    def __init__(self, base_depth=50, block_policy="mixed", stem_width=8,
                 dropout_rate=0.0, lr=1e-2, lr_step=3000, momentum=0.9,
                 weight_decay=1e-4, batch_size=16, iters=200, seed=0,
                 freeze_bn=False):
        self.base_depth = base_depth
        self.block_policy = block_policy
        self.stem_width = stem_width
        self.dropout_rate = dropout_rate
        self.lr = lr
        self.lr_step = lr_step
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.iters = iters
        self.seed = seed
        self.freeze_bn = freeze_bn

    def fit(self, X, y):
        X = validate_clips(X)
        y = np.asarray(y)
        if y.shape != (X.shape[0],):
            raise ShapeError("y must be one label per clip")
        self.classes_, encoded = np.unique(y, return_inverse=True)
        arch = ArchSpec(base_depth=self.base_depth,
                        block_policy=self.block_policy,
                        num_classes=len(self.classes_),
                        input_geometry=tuple(X.shape[2:]),
                        dropout_rate=self.dropout_rate,
                        stem_width=self.stem_width)
        self.net_ = build_network(arch, seed=self.seed)
        cfg = TrainConfig(lr=self.lr, lr_step=self.lr_step,
                          momentum=self.momentum,
                          weight_decay=self.weight_decay,
                          batch_size=self.batch_size, iters=self.iters,
                          seed=self.seed, freeze_bn=self.freeze_bn)
        self.log_ = train(self.net_, X, encoded, cfg)
        return self

    def decision_function(self, X):
        self._check_fitted()
        X = validate_clips(X)
        return self.net_.forward(X, train=False)

    def predict(self, X):
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]

    def predict_proba(self, X):
        logits = self.decision_function(X)
        shifted = np.exp(logits - logits.max(axis=1, keepdims=True))
        return shifted / shifted.sum(axis=1, keepdims=True)

    def train_accuracy(self, X, y):
        self._check_fitted()
        X = validate_clips(X)
        encoded = np.searchsorted(self.classes_, np.asarray(y))
        return evaluate(self.net_, X, encoded)

    def _check_fitted(self):
        if not hasattr(self, "net_"):
            raise RuntimeError("estimator is not fitted")


class P3DFeatureExtractor(TransformerMixin, BaseEstimator):
    """Pooled clip representations from a built or loaded network."""

    def __init__(self, checkpoint=None, net=None):
        self.checkpoint = checkpoint
        self.net = net

    def fit(self, X=None, y=None):
        if self.net is not None:
            self.net_ = self.net
        elif self.checkpoint is not None:
            from .checkpoint import network_from_checkpoint
            self.net_ = network_from_checkpoint(self.checkpoint)
        else:
            raise ValueError("provide a checkpoint path or a network")
        return self

    def transform(self, X):
        if not hasattr(self, "net_"):
            self.fit()
        X = validate_clips(X)
        return np.stack([self.net_.features(X[i:i + 1])[0]
                         for i in range(X.shape[0])])

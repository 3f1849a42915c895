"""scikit-learn style wrappers around the preprocessing chain and PSRNet."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .harness import PreprocConfig, TrainConfig, extract_series, Sample, train
from .normalize import WINDOW_LEN
from .psrnet import PSRNet, PSRNetConfig


class MotionSeriesExtractor(TransformerMixin, BaseEstimator):
    """Detection clips to fixed-length relative-position windows.

    Each input item is one clip: a sequence of :class:`DetectionFrame`. The
    output row is the last ``window_len`` values of the clip's motion series.

    Parameters
    ----------
    variant : {"filtered", "normalized", "raw"}
    gate_px : float
        Association gate on the object coordinate.
    kalman_q, kalman_r, kalman_p0 : float
        Filter noise settings, used by the ``"filtered"`` variant.
    image_width : float
        Scale for the ``"raw"`` variant.
    """

    def __init__(self, variant="filtered", gate_px=40.0, kalman_q=0.05, kalman_r=4.0, kalman_p0=10.0, image_width=1920.0, window_len=WINDOW_LEN):
        self.variant = variant
        self.gate_px = gate_px
        self.kalman_q = kalman_q
        self.kalman_r = kalman_r
        self.kalman_p0 = kalman_p0
        self.image_width = image_width
        self.window_len = window_len

    def _pre(self):
        return PreprocConfig(self.variant, self.gate_px, self.kalman_q, self.kalman_r, self.kalman_p0, self.image_width)

    def fit(self, X, y=None):
        self._pre()  # validates settings
        self.n_features_out_ = self.window_len
        return self

    def transform_series(self, X):
        return extract_series([Sample(-1, list(clip)) for clip in X], self._pre())

    def transform(self, X):
        check_is_fitted(self, "n_features_out_")
        return np.array([s.last_window(self.window_len) for s in self.transform_series(X)]).reshape(-1, self.window_len)


class PSRNetClassifier(ClassifierMixin, BaseEstimator):
    """PSRNet trained with Adam on windows of relative position.

    Parameters
    ----------
    n_orders : int
        Highest reconstruction order; 0 feeds the raw window only.
    recon_channels : int
    classifier_channels : tuple of int
    lam : float
        Weight of the reconstruction losses.
    epochs, batch_size, lr : training settings
    pool : bool
        2x2 max-pooling after each classifier convolution.
    random_state : int
    """

    def __init__(self, n_orders=4, recon_channels=8, classifier_channels=(16, 32), lam=0.5, epochs=100, batch_size=32, lr=1e-3, pool=True, random_state=0):
        self.n_orders = n_orders
        self.recon_channels = recon_channels
        self.classifier_channels = classifier_channels
        self.lam = lam
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.pool = pool
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        check_classification_targets(y)
        self.classes_, yi = np.unique(y, return_inverse=True)
        cfg = PSRNetConfig(
            n_orders=self.n_orders,
            recon_channels=self.recon_channels,
            classifier_channels=tuple(self.classifier_channels),
            window_len=X.shape[1],
            n_classes=len(self.classes_),
            lam=self.lam,
            pool=self.pool,
        )
        res = train(X, yi, TrainConfig(self.epochs, self.batch_size, self.lr, self.lam, self.random_state), cfg)
        self.model_ = res.model
        self.loss_curve_ = res.curve
        self.n_features_in_ = X.shape[1]
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return self.model_.predict_proba(X)

    def predict(self, X):
        proba = self.predict_proba(X)
        return self.classes_[np.argmax(proba, axis=1)]

    @classmethod
    def from_model(cls, model: PSRNet, classes=None):
        """Wrap an already trained network (for example one loaded from a checkpoint)."""
        c = model.config
        est = cls(c.n_orders, c.recon_channels, c.classifier_channels, c.lam, pool=c.pool)
        est.model_ = model
        est.classes_ = np.arange(c.n_classes) if classes is None else np.asarray(classes)
        est.n_features_in_ = c.window_len
        est.loss_curve_ = []
        return est

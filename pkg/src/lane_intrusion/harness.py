"""Training, evaluation and k-fold cross-validation of PSRNet on motion series."""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .ingest import SchemaError, frame_from_dict
from .normalize import DEFAULT_STRIDE, VARIANTS, WINDOW_LEN, MotionSeries, make_windows, series_from_frames
from .psrnet import Adam, LossBreakdown, PSRNet, PSRNetConfig
from .scenegen import LABEL_INDEX, LABELS
from .smoothing import KalmanConfig
from .tracking import DEFAULT_GATE_PX

N_CLASSES = len(LABELS)


class TooFewSamples(ValueError):
    pass


class EmptyClass(ValueError):
    pass


class DataError(ValueError):
    """A dataset record could not be read or turned into a motion series."""


# -- data ----------------------------------------------------------------------


@dataclass
class Sample:
    label: int
    frames: list
    meta: dict = field(default_factory=dict, repr=False)


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def load_dataset(path) -> list:
    samples = []
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read dataset {path}: {exc}") from None
    with fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                rec = json.loads(raw)
                label = rec["label"]
                if label not in LABEL_INDEX:
                    raise SchemaError("label", f"unknown label {label!r}")
                frames = sorted((frame_from_dict(d) for d in rec["frames"]), key=lambda f: f.frame_index)
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            samples.append(Sample(LABEL_INDEX[label], frames, rec.get("meta", {})))
    if not samples:
        raise DataError(f"{path}: no samples")
    return samples


@dataclass(frozen=True)
class PreprocConfig:
    variant: str = "filtered"
    gate_px: float = DEFAULT_GATE_PX
    kalman_q: float = 0.05
    kalman_r: float = 4.0
    kalman_p0: float = 10.0
    image_width: float = 1920.0
    stride: int = DEFAULT_STRIDE

    def kalman(self) -> KalmanConfig:
        return KalmanConfig(self.kalman_q, self.kalman_r, self.kalman_p0)


def extract_series(samples, pre: PreprocConfig = PreprocConfig()) -> list:
    """One :class:`MotionSeries` per sample, in order."""
    out = []
    for i, s in enumerate(samples):
        try:
            out.append(
                series_from_frames(
                    s.frames, pre.variant, label=s.label, gate_px=pre.gate_px, kalman=pre.kalman(), image_width=pre.image_width
                )
            )
        except (ValueError, RuntimeError) as exc:
            raise DataError(f"sample {i}: {type(exc).__name__}: {exc}") from None
    return out


def training_windows(series_list, stride=DEFAULT_STRIDE, length=WINDOW_LEN):
    """Windows every ``stride`` frames plus each series' last window, with labels."""
    xs, ys = [], []
    for s in series_list:
        w = make_windows(s, stride, length)
        if (len(s) - length) % stride:
            w = np.vstack([w, s.last_window(length)])
        xs.append(w)
        ys.append(np.full(len(w), s.label, dtype=int))
    if not xs:
        return np.zeros((0, length)), np.zeros(0, dtype=int)
    return np.vstack(xs), np.concatenate(ys)


def last_windows(series_list, length=WINDOW_LEN):
    x = np.array([s.last_window(length) for s in series_list]).reshape(-1, length)
    y = np.array([s.label for s in series_list], dtype=int)
    return x, y


# -- folds ---------------------------------------------------------------------


@dataclass(frozen=True)
class FoldSplit:
    k: int
    assignments: np.ndarray  # sample index -> fold id
    seed: int

    def test_indices(self, fold) -> np.ndarray:
        return np.flatnonzero(self.assignments == fold)

    def train_indices(self, fold) -> np.ndarray:
        return np.flatnonzero(self.assignments != fold)

    def sizes(self):
        return np.bincount(self.assignments, minlength=self.k)


def kfold_split(n_samples, k, seed=0) -> FoldSplit:
    if k < 2 or n_samples < k:
        raise TooFewSamples(f"cannot split {n_samples} samples into {k} folds")
    order = np.random.default_rng(seed).permutation(n_samples)
    assign = np.empty(n_samples, dtype=int)
    assign[order] = np.arange(n_samples) % k
    return FoldSplit(k, assign, seed)


# -- training ------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    lr: float = 1e-3
    lam: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or not self.lr > 0 or self.lam < 0:
            raise ValueError("epochs, batch_size and lr must be positive and lam non-negative")


@dataclass
class TrainResult:
    model: PSRNet
    curve: list  # per-epoch mean LossBreakdown
    initial_loss: LossBreakdown
    steps: list = field(default_factory=list, repr=False)  # per-step LossBreakdown when logged


def _mean_breakdown(parts, weights, lam):
    w = np.asarray(weights, dtype=float) / float(np.sum(weights))
    recon = tuple(float(v) for v in np.sum([np.asarray(p.recon) * wi for p, wi in zip(parts, w)], axis=0)) if parts[0].recon else ()
    ce = float(np.sum([p.ce * wi for p, wi in zip(parts, w)]))
    return LossBreakdown(recon, ce, lam)


def dataset_loss(model: PSRNet, x, y, batch_size=256) -> LossBreakdown:
    parts, sizes = [], []
    for i in range(0, len(x), batch_size):
        xb, yb = x[i : i + batch_size], y[i : i + batch_size]
        parts.append(model.loss(model.forward(xb), yb))
        sizes.append(len(xb))
    return _mean_breakdown(parts, sizes, model.config.lam)


def train(x, y, cfg: TrainConfig = TrainConfig(), model_config: PSRNetConfig | None = None, log_steps=False, require_all_classes=True) -> TrainResult:
    """Mini-batch Adam on shuffled windows.

    Parameters
    ----------
    x : ndarray of shape (n_windows, window_len)
    y : ndarray of int class indices
    cfg : TrainConfig
        Epochs, batch size, learning rate, loss weight and seed.
    model_config : PSRNetConfig, optional
        Architecture; ``lam`` is taken from ``cfg``.
    log_steps : bool
        Keep the loss breakdown of every optimizer step.

    Returns
    -------
    TrainResult
        The trained model, per-epoch mean losses and the loss of the
        initial weights on the whole training set.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=int)
    if len(x) == 0:
        raise EmptyClass("no training windows")
    mcfg = replace(model_config or PSRNetConfig(), lam=cfg.lam)
    if require_all_classes:
        missing = sorted(set(range(mcfg.n_classes)) - set(y.tolist()))
        if missing:
            raise EmptyClass(f"no training windows for class(es) {missing}")
    init_seed, shuffle_seed = np.random.SeedSequence(cfg.seed).spawn(2)
    model = PSRNet(mcfg, seed=int(init_seed.generate_state(1)[0]))
    rng = np.random.default_rng(shuffle_seed)
    opt = Adam(model.params, lr=cfg.lr)
    initial = dataset_loss(model, x, y)
    curve, steps = [], []
    for _ in range(cfg.epochs):
        order = rng.permutation(len(x))
        parts, sizes = [], []
        for i in range(0, len(x), cfg.batch_size):
            idx = order[i : i + cfg.batch_size]
            lb, grads = model.loss_and_grads(x[idx], y[idx])
            opt.step(model.params, grads)
            parts.append(lb)
            sizes.append(len(idx))
            if log_steps:
                steps.append(lb)
        curve.append(_mean_breakdown(parts, sizes, mcfg.lam))
    return TrainResult(model, curve, initial, steps)


# -- evaluation ----------------------------------------------------------------


@dataclass
class MetricsReport:
    """Per-fold accuracies (percent) with pooled and per-fold confusion matrices."""

    fold_accuracies: list
    confusion: np.ndarray
    fold_confusions: list = field(default_factory=list, repr=False)
    loss_curves: list = field(default_factory=list, repr=False)
    fold_sizes: list = field(default_factory=list)

    @property
    def mean(self) -> float:
        return float(np.mean(self.fold_accuracies))

    @property
    def std(self) -> float:
        return float(np.std(self.fold_accuracies))  # population std over folds

    def summary(self) -> str:
        return f"{self.mean:.1f} ± {self.std:.1f}"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["fold", "n_test", "accuracy"])
        for i, (a, n) in enumerate(zip(self.fold_accuracies, self.fold_sizes)):
            w.writerow([i, n, f"{a:.6f}"])
        w.writerow(["mean", sum(self.fold_sizes), f"{self.mean:.6f}"])
        w.writerow(["std", "", f"{self.std:.6f}"])
        return buf.getvalue()

    def confusion_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["true\\pred", *LABELS])
        for name, row in zip(LABELS, self.confusion):
            w.writerow([name, *(int(v) for v in row)])
        return buf.getvalue()

    def table(self) -> str:
        lines = [f"{'fold':>6}  {'n':>4}  {'accuracy':>8}"]
        for i, (a, n) in enumerate(zip(self.fold_accuracies, self.fold_sizes)):
            lines.append(f"{i:>6}  {n:>4}  {a:8.2f}")
        lines.append(f"{'mean':>6}  {sum(self.fold_sizes):>4}  {self.mean:8.2f}")
        lines.append(f"{'std':>6}  {'':>4}  {self.std:8.2f}")
        lines.append("")
        width = max(len(s) for s in LABELS)
        lines.append(" " * (width + 2) + "  ".join(f"{s[:width]:>{width}}" for s in LABELS))
        for name, row in zip(LABELS, self.confusion):
            lines.append(f"{name:>{width}}  " + "  ".join(f"{int(v):>{width}}" for v in row))
        return "\n".join(lines)


def confusion_matrix(y_true, y_pred, n_classes=N_CLASSES) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=int)
    np.add.at(cm, (np.asarray(y_true, dtype=int), np.asarray(y_pred, dtype=int)), 1)
    return cm


def _predict(model, x):
    if isinstance(model, PSRNet):
        return np.argmax(model.predict_proba(x), axis=1)
    return np.asarray(model.predict(x), dtype=int)


def evaluate(model, samples) -> MetricsReport:
    """Sample-level accuracy from each sample's last window.

    ``samples`` is a list of :class:`MotionSeries` or a ``(windows, labels)``
    pair. ``model`` is a :class:`PSRNet` or anything with ``predict``.
    """
    if isinstance(samples, tuple):
        x, y = np.asarray(samples[0], dtype=float), np.asarray(samples[1], dtype=int)
    else:
        x, y = last_windows(samples)
    if len(y) == 0:
        raise TooFewSamples("nothing to evaluate")
    pred = _predict(model, x)
    cm = confusion_matrix(y, pred)
    acc = 100.0 * float(np.mean(pred == y))
    return MetricsReport([acc], cm, [cm], [], [len(y)])


def _fold_seed(seed, fold) -> int:
    return int(np.random.SeedSequence([int(seed), int(fold)]).generate_state(1)[0])


def crossval(series_list, k=3, cfg: TrainConfig = TrainConfig(), model_config: PSRNetConfig | None = None, stride=DEFAULT_STRIDE, split_seed=None, progress=None) -> MetricsReport:
    """Fresh model per fold, trained on the other folds' windows, scored per sample.

    Folds are drawn over samples (``split_seed`` defaults to ``cfg.seed``) so no
    window of a test sample is ever trained on.
    """
    split = kfold_split(len(series_list), k, cfg.seed if split_seed is None else split_seed)
    accs, cms, curves, sizes = [], [], [], []
    for fold in range(k):
        train_set = [series_list[i] for i in split.train_indices(fold)]
        test_set = [series_list[i] for i in split.test_indices(fold)]
        x, y = training_windows(train_set, stride)
        res = train(x, y, replace(cfg, seed=_fold_seed(cfg.seed, fold)), model_config)
        rep = evaluate(res.model, test_set)
        accs.append(rep.fold_accuracies[0])
        cms.append(rep.confusion)
        curves.append(res.curve)
        sizes.append(len(test_set))
        if progress:
            progress(fold, rep.fold_accuracies[0])
    return MetricsReport(accs, np.sum(cms, axis=0), cms, curves, sizes)


# -- ablations -----------------------------------------------------------------


@dataclass
class AblationGrid:
    """Cross-validation reports for each (row setting, fold count), one per seed."""

    row_name: str
    rows: list
    folds: list
    reports: dict  # (row, k) -> list of MetricsReport, one per seed

    def cell(self, row, k):
        reps = self.reports[(row, k)]
        return float(np.mean([r.mean for r in reps])), float(np.mean([r.std for r in reps]))

    def row_mean(self, row, k=None) -> float:
        ks = self.folds if k is None else [k]
        return float(np.mean([self.cell(row, kk)[0] for kk in ks]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        head = [self.row_name]
        for k in self.folds:
            head += [f"{k}-fold mean", f"{k}-fold std"]
        w.writerow(head + ["seeds"])
        for row in self.rows:
            cells = []
            for k in self.folds:
                m, s = self.cell(row, k)
                cells += [f"{m:.6f}", f"{s:.6f}"]
            w.writerow([row, *cells, len(self.reports[(row, self.folds[0])])])
        return buf.getvalue()

    def table(self) -> str:
        width = max(len(str(r)) for r in self.rows + [self.row_name])
        lines = [f"{self.row_name:>{width}}  " + "  ".join(f"{f'{k}-fold':>12}" for k in self.folds)]
        for row in self.rows:
            cells = []
            for k in self.folds:
                m, s = self.cell(row, k)
                cells.append(f"{m:5.1f} ± {s:4.1f}")
            lines.append(f"{str(row):>{width}}  " + "  ".join(f"{c:>12}" for c in cells))
        return "\n".join(lines)


def ablation_orders(series_list, orders=(0, 1, 2, 3, 4), folds=(3, 5, 7), seeds=(0,), cfg: TrainConfig = TrainConfig(), model_config: PSRNetConfig | None = None, stride=DEFAULT_STRIDE, progress=None) -> AblationGrid:
    """Cross-validate each maximum order with identical folds and seeds."""
    base = model_config or PSRNetConfig()
    reports = {}
    for n in orders:
        for k in folds:
            reps = []
            for s in seeds:
                reps.append(crossval(series_list, k, replace(cfg, seed=s), replace(base, n_orders=n), stride))
                if progress:
                    progress(n, k, s, reps[-1])
            reports[(n, k)] = reps
    return AblationGrid("order", list(orders), list(folds), reports)


def ablation_preproc(samples, folds=(3, 5, 7), seeds=(0,), cfg: TrainConfig = TrainConfig(), model_config: PSRNetConfig | None = None, pre: PreprocConfig = PreprocConfig(), variants=VARIANTS, progress=None) -> AblationGrid:
    """Cross-validate each preprocessing variant on the same samples and folds."""
    reports = {}
    for v in variants:
        series = extract_series(samples, replace(pre, variant=v))
        for k in folds:
            reps = []
            for s in seeds:
                reps.append(crossval(series, k, replace(cfg, seed=s), model_config, pre.stride))
                if progress:
                    progress(v, k, s, reps[-1])
            reports[(v, k)] = reps
    return AblationGrid("variant", list(variants), list(folds), reports)


# -- output --------------------------------------------------------------------


def loss_curve_csv(curve) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    n = len(curve[0].recon) if curve else 0
    w.writerow(["epoch", "total", "cross_entropy", *(f"recon_{k}" for k in range(1, n + 1))])
    for e, lb in enumerate(curve, start=1):
        w.writerow([e, repr(lb.total), repr(lb.ce), *(repr(v) for v in lb.recon)])
    return buf.getvalue()


def manifest(command, config: dict, dataset_path=None, extra=None) -> dict:
    m = {"command": command, "config": config}
    if dataset_path is not None:
        m["dataset"] = {"path": str(dataset_path), "sha256": file_sha256(dataset_path)}
    if extra:
        m.update(extra)
    return m


def dumps_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if hasattr(o, "__dataclass_fields__"):
        return asdict(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")

"""Frozen downstream predictors, segmentation metrics and distribution proxies."""

from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import minimize

from . import codec as codecs
from .errors import RejectedInput
from .sampler import FORWARD, translate

LINEAR = "linear"  # points: softmax regression on coordinates
PIXEL = "pixel"  # images: per-pixel softmax regression on 3x3 patches
MAX_TRAIN_ROWS = 200_000
L2 = 1e-4


@dataclass(frozen=True)
class DownstreamModel:
    kind: str
    weights: np.ndarray  # (n_features + 1, classes)
    classes: int
    side: int = 0
    train_accuracy: float = float("nan")


@dataclass
class EvalReport:
    config_name: str
    miou: float
    macc: float
    accuracy: float
    fd_gaussian: float
    paired_rmse: float
    n_eval: int

    def record(self):
        return asdict(self)


# -- downstream -------------------------------------------------------------

def patch_features(x, side):
    """3x3 edge-padded neighbourhood of every pixel; rows ordered image-major."""
    imgs = np.asarray(x, dtype=np.float64).reshape(-1, side, side)
    padded = np.pad(imgs, ((0, 0), (1, 1), (1, 1)), mode="edge")
    cols = [padded[:, dy:dy + side, dx:dx + side] for dy in range(3) for dx in range(3)]
    return np.stack(cols, axis=-1).reshape(-1, 9)


def _features(kind, x, side):
    x = np.asarray(x, dtype=np.float64)
    feats = patch_features(x, side) if kind == PIXEL else x.reshape(len(x), -1)
    return np.hstack([feats, np.ones((len(feats), 1))])


def _softmax(logits):
    logits = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=1, keepdims=True)


def _fit_softmax(feats, labels, classes):
    n, f = feats.shape
    onehot = np.eye(classes)[labels]

    def objective(w_flat):
        w = w_flat.reshape(f, classes)
        logits = feats @ w
        logits -= logits.max(axis=1, keepdims=True)
        logz = np.log(np.exp(logits).sum(axis=1))
        nll = np.mean(logz - (logits * onehot).sum(axis=1))
        p = np.exp(logits - logz[:, None])
        g = feats.T @ (p - onehot) / n
        return nll + 0.5 * L2 * np.sum(w * w), (g + L2 * w).ravel()

    res = minimize(objective, np.zeros(f * classes), jac=True, method="L-BFGS-B",
                   options={"maxiter": 500})
    return res.x.reshape(f, classes)


def train_downstream(x, y, kind=PIXEL, classes=None, side=0, seed=0):
    """Fit a predictor on one domain's labelled data.

    ``x`` rows are samples; ``y`` holds one label per row (points) or one
    per pixel (images).
    """
    y = np.asarray(y).astype(np.int64).ravel()
    classes = int(classes or y.max() + 1)
    if len(np.unique(y)) < 2:
        raise RejectedInput("downstream training data contains a single class")
    feats = _features(kind, x, side)
    if len(feats) != len(y):
        raise RejectedInput(f"{len(feats)} feature rows but {len(y)} labels")
    if len(feats) > MAX_TRAIN_ROWS:
        keep = np.sort(np.random.default_rng(seed).choice(len(feats), MAX_TRAIN_ROWS, replace=False))
        feats, y = feats[keep], y[keep]
    w = _fit_softmax(feats, y, classes)
    acc = float(np.mean(np.argmax(feats @ w, axis=1) == y))
    w.setflags(write=False)
    return DownstreamModel(kind, w, classes, side, acc)


def predict(model, x):
    """Hard labels, shaped like the label arrays (per row or per pixel)."""
    x = np.asarray(x, dtype=np.float64)
    pred = np.argmax(_features(model.kind, x, model.side) @ model.weights, axis=1)
    return pred.reshape(len(x), -1)


# -- metrics ----------------------------------------------------------------

def confusion(pred, true, classes):
    pred = np.asarray(pred).astype(np.int64).ravel()
    true = np.asarray(true).astype(np.int64).ravel()
    if pred.shape != true.shape:
        raise RejectedInput(f"{pred.size} predictions vs {true.size} labels")
    return np.bincount(true * classes + pred, minlength=classes * classes).reshape(classes, classes)


def miou(pred, true, classes):
    """Mean IoU over classes present in the prediction or the truth."""
    cm = confusion(pred, true, classes)
    inter = np.diag(cm)
    union = cm.sum(0) + cm.sum(1) - inter
    present = union > 0
    if not present.any():
        return 1.0
    return float(np.mean(inter[present] / union[present]))


def mean_accuracy(pred, true, classes):
    """Mean per-class recall over classes present in the truth."""
    cm = confusion(pred, true, classes)
    support = cm.sum(1)
    present = support > 0
    if not present.any():
        return 1.0
    return float(np.mean(np.diag(cm)[present] / support[present]))


def accuracy(pred, true):
    pred = np.asarray(pred).ravel()
    true = np.asarray(true).ravel()
    if pred.shape != true.shape:
        raise RejectedInput(f"{pred.size} predictions vs {true.size} labels")
    return float(np.mean(pred == true)) if pred.size else 1.0


def _psd_sqrt(cov):
    w, v = np.linalg.eigh(cov)
    if w.min() < -1e-8 * max(1.0, abs(w.max())):
        raise RejectedInput(f"covariance is not positive semidefinite (min eigenvalue {w.min():.3g})")
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def frechet_from_moments(mu_a, cov_a, mu_b, cov_b):
    """``||mu_a - mu_b||^2 + Tr(A + B - 2 (A B)^{1/2})`` for Gaussian moments."""
    mu_a, mu_b = np.atleast_1d(mu_a).astype(np.float64), np.atleast_1d(mu_b).astype(np.float64)
    cov_a = np.atleast_2d(cov_a).astype(np.float64)
    cov_b = np.atleast_2d(cov_b).astype(np.float64)
    cov_a = 0.5 * (cov_a + cov_a.T)
    cov_b = 0.5 * (cov_b + cov_b.T)
    root_a = _psd_sqrt(cov_a)
    mid = root_a @ cov_b @ root_a
    mid = 0.5 * (mid + mid.T)
    ev = np.linalg.eigvalsh(mid)
    if ev.min() < -1e-8 * max(1.0, abs(ev.max())):
        raise RejectedInput("product covariance is not positive semidefinite")
    tr_sqrt = np.sum(np.sqrt(np.clip(ev, 0.0, None)))
    diff = mu_a - mu_b
    d = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * tr_sqrt)
    return max(d, 0.0)


def fd_gaussian(set_a, set_b):
    a = np.asarray(set_a, dtype=np.float64)
    b = np.asarray(set_b, dtype=np.float64)
    if a.ndim == 1:
        a, b = a[:, None], b[:, None]
    if a.shape[1] != b.shape[1]:
        raise RejectedInput("sets have different dimensions")
    if min(len(a), len(b)) < 2:
        raise RejectedInput("need at least two samples per set")
    return frechet_from_moments(a.mean(0), np.cov(a, rowvar=False), b.mean(0), np.cov(b, rowvar=False))


def paired_rmse(translated, references):
    a = np.asarray(translated, dtype=np.float64)
    b = np.asarray(references, dtype=np.float64)
    if a.shape != b.shape:
        raise RejectedInput(f"shape mismatch {a.shape} vs {b.shape}")
    if a.size == 0:
        return 0.0
    a, b = a.reshape(len(a), -1), b.reshape(len(b), -1)
    return float(np.mean(np.sqrt(np.mean((a - b) ** 2, axis=1))))


# -- protocol ---------------------------------------------------------------

def report(name, downstream, x, labels, refs, codec=None):
    """Score ``x`` with the frozen ``downstream`` and compare it to ``refs``.

    Gaussian-Fréchet features are codec latents when ``codec`` is given,
    raw values otherwise.
    """
    pred = predict(downstream, x)
    feats_x = codecs.encode(codec, x) if codec is not None else x
    feats_r = codecs.encode(codec, refs) if codec is not None else refs
    return EvalReport(
        config_name=name,
        miou=miou(pred, labels, downstream.classes),
        macc=mean_accuracy(pred, labels, downstream.classes),
        accuracy=accuracy(pred, labels),
        fd_gaussian=fd_gaussian(feats_x, feats_r),
        paired_rmse=paired_rmse(x, refs),
        n_eval=len(x),
    )


def evaluate_configuration(state, codec, test, downstream, grid=None, direction=FORWARD,
                           name="flow", raw_features=False, translated=None):
    """No-adaptation, adapted and upper-bound reports on one test split.

    Forward: translate domain-0 inputs and score them with the domain-1
    predictor against the domain-0 truth. Backward swaps the roles, so
    ``downstream`` must then be the domain-0 predictor.
    """
    if direction == FORWARD:
        x_in, y_in, refs, y_ref = test.x0, test.y0, test.x1, test.y1
    else:
        x_in, y_in, refs, y_ref = test.x1, test.y1, test.x0, test.y0
    if translated is None:
        translated = translate(state, codec, x_in, direction, grid)
    feat_codec = None if raw_features else codec
    return {
        "no_adaptation": report(f"{name}/no_adaptation", downstream, x_in, y_in, refs, feat_codec),
        "adapted": report(f"{name}/adapted", downstream, translated, y_in, refs, feat_codec),
        "upper_bound": report(f"{name}/upper_bound", downstream, refs, y_ref, refs, feat_codec),
    }

"""RBF-kernel support vector machine with Platt-scaled probabilities.

The dual is solved by sequential minimal optimisation with second-order
working-set selection on a precomputed kernel matrix; training stops once the
maximal KKT violating pair is within ``tol``.  Labels are +1 for fake and -1
for authentic frames.
"""

import json
import logging
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DegenerateTrainingError,
    InvalidInputError,
    ModelIncompleteError,
    ParseError,
)

log = logging.getLogger(__name__)

FORMAT_VERSION = "headpose-forensics-svm/1"
KKT_TOL = 1e-3
PLATT_FOLDS = 3
_TAU = 1e-12

LABEL_VALUES = {"fake": 1, "authentic": -1}


@dataclass(frozen=True)
class SvmModel:
    support_vectors: np.ndarray
    dual_coef: np.ndarray
    bias: float
    gamma: float
    C: float = 1.0
    platt_a: float = None
    platt_b: float = None
    seed: int = 0
    n_features: int = None
    support_indices: tuple = ()

    def __post_init__(self):
        coef = np.array(self.dual_coef, dtype=float).reshape(-1)
        sv = np.array(self.support_vectors, dtype=float)
        if sv.ndim != 2:
            sv = sv.reshape(len(coef), -1) if len(coef) else sv.reshape(0, self.n_features or 0)
        if len(coef) != len(sv):
            raise InvalidInputError("one dual coefficient per support vector expected")
        if not (np.all(np.isfinite(sv)) and np.all(np.isfinite(coef))):
            raise InvalidInputError("model parameters must be finite")
        if not self.gamma > 0 or not self.C > 0:
            raise InvalidInputError("gamma and C must be positive")
        if np.any(np.abs(coef) > self.C * (1 + 1e-12)):
            raise InvalidInputError("dual coefficient exceeds C")
        n_features = sv.shape[1] if self.n_features is None else int(self.n_features)
        if sv.shape[1] != n_features:
            raise InvalidInputError("support vector width differs from n_features")
        sv.setflags(write=False)
        coef.setflags(write=False)
        object.__setattr__(self, "support_vectors", sv)
        object.__setattr__(self, "dual_coef", coef)
        object.__setattr__(self, "bias", float(self.bias))
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "C", float(self.C))
        object.__setattr__(self, "n_features", n_features)
        object.__setattr__(self, "support_indices", tuple(int(i) for i in self.support_indices))

    @property
    def has_platt(self):
        return self.platt_a is not None and self.platt_b is not None

    def to_dict(self):
        return {
            "version": FORMAT_VERSION,
            "support_vectors": self.support_vectors.tolist(),
            "dual_coef": self.dual_coef.tolist(),
            "bias": self.bias,
            "gamma": self.gamma,
            "platt_a": self.platt_a,
            "platt_b": self.platt_b,
            "training": {
                "C": self.C,
                "seed": self.seed,
                "n_features": self.n_features,
                "support_indices": list(self.support_indices),
            },
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("version") != FORMAT_VERSION:
            raise InvalidInputError(f"unsupported model version {d.get('version')!r}")
        meta = d["training"]
        return cls(
            support_vectors=np.array(d["support_vectors"], dtype=float).reshape(
                -1, meta["n_features"]
            ),
            dual_coef=d["dual_coef"],
            bias=d["bias"],
            gamma=d["gamma"],
            C=meta["C"],
            platt_a=d["platt_a"],
            platt_b=d["platt_b"],
            seed=meta["seed"],
            n_features=meta["n_features"],
            support_indices=meta.get("support_indices", ()),
        )


def save_model(model, path):
    Path(path).write_text(json.dumps(model.to_dict(), indent=1, sort_keys=True) + "\n")


def load_model(path):
    path = Path(path)
    try:
        d = json.loads(path.read_text())
        return SvmModel.from_dict(d)
    except FileNotFoundError:
        raise
    except (ValueError, KeyError, TypeError) as exc:
        raise ParseError(f"invalid model file: {exc}", path) from exc


def rbf_kernel(A, B, gamma):
    """``exp(-gamma * |a - b|^2)`` for every row pair."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    d2 = (
        np.sum(A * A, axis=1)[:, None]
        + np.sum(B * B, axis=1)[None, :]
        - 2.0 * (A @ B.T)
    )
    return np.exp(-gamma * np.maximum(d2, 0.0))


def _as_xy(X, y):
    if y is None:
        rows = list(X)
        if any(getattr(r, "label", None) not in LABEL_VALUES for r in rows):
            raise InvalidInputError("every feature vector needs an authentic/fake label")
        y = [LABEL_VALUES[r.label] for r in rows]
        X = [r.values for r in rows]
    X = np.array([getattr(r, "values", r) for r in X], dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    y = np.array([LABEL_VALUES.get(v, v) if isinstance(v, str) else v for v in y], dtype=float)
    if X.ndim != 2 or len(X) != len(y):
        raise InvalidInputError("features and labels differ in length")
    if not np.all(np.isfinite(X)):
        raise InvalidInputError("non-finite feature values")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise InvalidInputError("labels must be +1 (fake) or -1 (authentic)")
    return X, y


def _smo(K, y, C, tol=KKT_TOL, max_iter=None):
    """Solve ``min 0.5 a'Qa - sum(a)`` with ``Q = yy'K``, ``y'a = 0``, ``0 <= a <= C``."""
    n = len(y)
    Q = np.outer(y, y) * K
    QD = np.diag(K).copy()
    alpha = np.zeros(n)
    G = -np.ones(n)
    max_iter = max_iter or max(10_000_000, 100 * n)
    it = 0
    while it < max_iter:
        yG = -y * G
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
        i = int(np.flatnonzero(up)[np.argmax(yG[up])])
        g_max = yG[i]
        g_min = np.min(yG[low])
        if g_max - g_min < tol:
            break
        cand = low & (yG < g_max)
        b = g_max - yG[cand]
        a = np.maximum(K[i, i] + QD[cand] - 2.0 * K[i, cand], _TAU)
        j = int(np.flatnonzero(cand)[np.argmin(-(b * b) / a)])

        old_i, old_j = alpha[i], alpha[j]
        if y[i] != y[j]:
            quad = max(QD[i] + QD[j] + 2.0 * Q[i, j], _TAU)
            delta = (-G[i] - G[j]) / quad
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j], alpha[i] = 0.0, diff
            elif alpha[i] < 0:
                alpha[i], alpha[j] = 0.0, -diff
            if diff > 0:
                if alpha[i] > C:
                    alpha[i], alpha[j] = C, C - diff
            elif alpha[j] > C:
                alpha[j], alpha[i] = C, C + diff
        else:
            quad = max(QD[i] + QD[j] - 2.0 * Q[i, j], _TAU)
            delta = (G[i] - G[j]) / quad
            total = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if total > C:
                if alpha[i] > C:
                    alpha[i], alpha[j] = C, total - C
                if alpha[j] > C:
                    alpha[j], alpha[i] = C, total - C
            else:
                if alpha[j] < 0:
                    alpha[j], alpha[i] = 0.0, total
                if alpha[i] < 0:
                    alpha[i], alpha[j] = 0.0, total
        G += Q[:, i] * (alpha[i] - old_i) + Q[:, j] * (alpha[j] - old_j)
        it += 1
    else:
        warnings.warn(f"SMO stopped after {max_iter} iterations", RuntimeWarning, stacklevel=3)

    yG = -y * G
    free = (alpha > 0) & (alpha < C)
    if np.any(free):
        bias = float(np.mean(yG[free]))
    else:
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
        bias = float((np.max(yG[up]) + np.min(yG[low])) / 2.0)
    return alpha, bias, it


def dual_objective(K, y, alpha):
    """Dual objective ``sum(a) - 0.5 a'Qa`` (to be maximised)."""
    ay = alpha * y
    return float(np.sum(alpha) - 0.5 * ay @ K @ ay)


def _fit_svm(X, y, C, gamma, tol, seed):
    if len(np.unique(y)) < 2:
        raise DegenerateTrainingError("training data contain a single class")
    K = rbf_kernel(X, X, gamma)
    alpha, bias, it = _smo(K, y, C, tol)
    log.debug("SMO converged in %d iterations", it)
    sv = np.flatnonzero(alpha > 0)
    return SvmModel(
        support_vectors=X[sv],
        dual_coef=alpha[sv] * y[sv],
        bias=bias,
        gamma=gamma,
        C=C,
        seed=seed,
        n_features=X.shape[1],
        support_indices=tuple(sv),
    )


def _cv_folds(y, k, seed):
    rng = np.random.default_rng([int(seed), 0x706C74])
    fold = np.empty(len(y), dtype=int)
    for cls in (-1.0, 1.0):
        idx = np.flatnonzero(y == cls)
        fold[rng.permutation(idx)] = np.arange(len(idx)) % k
    return fold


def platt_fit(f, y, max_iter=100, min_step=1e-10, sigma=1e-12):
    """Sigmoid ``1 / (1 + exp(a f + b))`` by damped Newton on regularised targets."""
    f = np.asarray(f, dtype=float)
    y = np.asarray(y, dtype=float)
    n_pos = int(np.sum(y > 0))
    n_neg = len(y) - n_pos
    hi = (n_pos + 1.0) / (n_pos + 2.0)
    lo = 1.0 / (n_neg + 2.0)
    t = np.where(y > 0, hi, lo)

    def objective(a, b):
        z = f * a + b
        return float(np.sum(np.where(z >= 0, t * z + np.log1p(np.exp(-np.abs(z))),
                                     (t - 1) * z + np.log1p(np.exp(-np.abs(z))))))

    a, b = 0.0, math.log((n_neg + 1.0) / (n_pos + 1.0))
    fval = objective(a, b)
    for _ in range(max_iter):
        z = f * a + b
        e = np.exp(-np.abs(z))
        p = np.where(z >= 0, e / (1 + e), 1 / (1 + e))
        q = 1 - p
        d2 = p * q
        h11 = sigma + np.sum(f * f * d2)
        h22 = sigma + np.sum(d2)
        h21 = np.sum(f * d2)
        d1 = t - p
        g1 = np.sum(f * d1)
        g2 = np.sum(d1)
        if abs(g1) < 1e-5 and abs(g2) < 1e-5:
            break
        det = h11 * h22 - h21 * h21
        da = -(h22 * g1 - h21 * g2) / det
        db = -(-h21 * g1 + h11 * g2) / det
        gd = g1 * da + g2 * db
        step = 1.0
        while step >= min_step:
            na, nb = a + step * da, b + step * db
            nf = objective(na, nb)
            if nf < fval + 1e-4 * step * gd:
                a, b, fval = na, nb, nf
                break
            step /= 2.0
        else:
            log.debug("Platt line search failed")
            break
    return float(a), float(b)


def train(X, y=None, C=1.0, seed=0, gamma=None, tol=KKT_TOL, platt_folds=PLATT_FOLDS):
    """Fit the SVM and its Platt sigmoid.

    ``X`` is an array of feature rows or a sequence of labelled
    :class:`~headpose_forensics.features.FeatureVector` (then ``y`` is omitted).
    The sigmoid is fitted on cross-validated decision values when every class
    has at least ``platt_folds`` samples, otherwise on in-sample values.
    """
    X, y = _as_xy(X, y)
    if len(y) < 2 or len(np.unique(y)) < 2:
        raise DegenerateTrainingError("training data contain a single class")
    if not C > 0:
        raise InvalidInputError("C must be positive")
    gamma = 1.0 / X.shape[1] if gamma is None else float(gamma)
    model = _fit_svm(X, y, float(C), gamma, tol, seed)

    counts = min(np.sum(y > 0), np.sum(y < 0))
    if platt_folds and counts >= platt_folds:
        fold = _cv_folds(y, platt_folds, seed)
        f = np.empty(len(y))
        for k in range(platt_folds):
            held = fold == k
            sub = _fit_svm(X[~held], y[~held], float(C), gamma, tol, seed)
            f[held] = decision_values(sub, X[held])
    else:
        f = decision_values(model, X)
    a, b = platt_fit(f, y)
    return _with_platt(model, a, b)


def _with_platt(model, a, b):
    d = model.to_dict()
    d["platt_a"], d["platt_b"] = a, b
    return SvmModel.from_dict(d)


def _rows(model, X):
    X = np.asarray(getattr(X, "values", X), dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != model.n_features:
        raise InvalidInputError(
            f"feature length {X.shape[1]} does not match model ({model.n_features})"
        )
    return X, single


def decision_values(model, X):
    X, _ = _rows(model, X)
    if len(model.dual_coef) == 0:
        return np.full(len(X), model.bias)
    return rbf_kernel(X, model.support_vectors, model.gamma) @ model.dual_coef + model.bias


def decision_value(model, x):
    """``sum_i alpha_i y_i K(sv_i, x) + b`` for a single feature vector."""
    X, single = _rows(model, x)
    if not single:
        raise InvalidInputError("decision_value expects a single feature vector")
    return float(decision_values(model, X)[0])


def sigmoid_proba(f, a, b):
    z = np.asarray(f, dtype=float) * a + b
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, e / (1 + e), 1 / (1 + e))


def predict_proba(model, X):
    """Probability of the fake class; scalar for a single vector."""
    if not model.has_platt:
        raise ModelIncompleteError("model has no fitted Platt parameters")
    X, single = _rows(model, X)
    p = sigmoid_proba(decision_values(model, X), model.platt_a, model.platt_b)
    return float(p[0]) if single else p


def kkt_residuals(model, X, y):
    """Per-sample violation of the soft-margin KKT conditions on training data."""
    X, y = _as_xy(X, y)
    alpha = np.zeros(len(y))
    for k, i in enumerate(model.support_indices):
        alpha[i] = abs(model.dual_coef[k])
    margin = y * decision_values(model, X) - 1.0
    return np.where(
        alpha <= 0,
        np.maximum(0.0, -margin),
        np.where(alpha >= model.C, np.maximum(0.0, margin), np.abs(margin)),
    )

"""Hard-margin linear SVM (large penalty C) trained in the dual.

The solver is SMO on the Gram matrix with second-order working-set
selection, the scheme LibSVM uses. Training stops once the duality gap
between ``0.5 |w|^2 + C sum hinge(y (w.x + b))`` and the dual objective
drops below ``tol * (1 + |primal|)``.

Labels follow the repo-wide convention: attack/fake = +1, real = -1.
Features are standardized with training statistics; the stored weights
and bias are folded back into raw feature space so ``score`` is a plain
affine map.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from ._jit import JIT_ENABLED, njit
from .errors import DegenerateLabels, InvalidArgument, ShapeError

log = logging.getLogger(__name__)

DEFAULT_C = 1e5
GAP_TOL = 1e-6
TAU = 1e-12


@dataclass
class LinearModel:
    weights: np.ndarray
    bias: float
    C: float = DEFAULT_C
    mean: np.ndarray = None
    scale: np.ndarray = None
    n_iter: int = 0
    objective: float = 0.0
    gap: float = 0.0
    converged: bool = True
    meta: dict = field(default_factory=dict)

    @property
    def dim(self):
        return self.weights.shape[0]

    def to_dict(self):
        d = {
            "weights": self.weights.tolist(),
            "bias": float(self.bias),
            "C": float(self.C),
            "n_iter": int(self.n_iter),
            "objective": float(self.objective),
            "gap": float(self.gap),
            "converged": bool(self.converged),
        }
        if self.mean is not None:
            d["scaler"] = {"mean": self.mean.tolist(), "scale": self.scale.tolist()}
        return d

    @classmethod
    def from_dict(cls, d):
        scaler = d.get("scaler")
        return cls(
            weights=np.asarray(d["weights"], dtype=np.float64),
            bias=float(d["bias"]),
            C=float(d["C"]),
            mean=None if scaler is None else np.asarray(scaler["mean"], dtype=np.float64),
            scale=None if scaler is None else np.asarray(scaler["scale"], dtype=np.float64),
            n_iter=int(d.get("n_iter", 0)),
            objective=float(d.get("objective", 0.0)),
            gap=float(d.get("gap", 0.0)),
            converged=bool(d.get("converged", True)),
        )


def _smo_py(K, y, C, alpha, G, eps, max_iter):
    """Run SMO iterations in place until the maximal KKT violation is < eps.

    ``G`` is the dual gradient ``Q alpha - 1`` with ``Q = yy^T * K``.
    Returns the number of iterations performed.
    """
    n = y.shape[0]
    it = 0
    while it < max_iter:
        # i: maximal violator in I_up
        gmax = -np.inf
        i = -1
        for t in range(n):
            if (y[t] > 0 and alpha[t] < C) or (y[t] < 0 and alpha[t] > 0):
                v = -y[t] * G[t]
                if v > gmax:
                    gmax = v
                    i = t
        # j: second-order choice in I_low
        gmin = np.inf
        best = np.inf
        j = -1
        for t in range(n):
            if (y[t] > 0 and alpha[t] > 0) or (y[t] < 0 and alpha[t] < C):
                v = -y[t] * G[t]
                if v < gmin:
                    gmin = v
                if i >= 0 and v < gmax:
                    b = gmax - v
                    a = K[i, i] + K[t, t] - 2.0 * K[i, t]
                    if a <= 0:
                        a = TAU
                    obj = -(b * b) / a
                    if obj < best:
                        best = obj
                        j = t
        if i < 0 or j < 0 or gmax - gmin < eps:
            break
        it += 1

        ai_old = alpha[i]
        aj_old = alpha[j]
        quad = K[i, i] + K[j, j] - 2.0 * K[i, j]
        if quad <= 0:
            quad = TAU
        if y[i] != y[j]:
            delta = (-G[i] - G[j]) / quad
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = diff
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = -diff
            if diff > 0:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = C - diff
            else:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = C + diff
        else:
            delta = (G[i] - G[j]) / quad
            total = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if total > C:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = total - C
            else:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = total
            if total > C:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = total - C
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = total

        di = alpha[i] - ai_old
        dj = alpha[j] - aj_old
        for t in range(n):
            G[t] += y[t] * (y[i] * K[i, t] * di + y[j] * K[j, t] * dj)
    return it


_smo = njit(_smo_py) if JIT_ENABLED else _smo_py


def _best_bias(f, y):
    """Minimize sum hinge(y (f + b)) over b; returns (b, hinge_sum).

    The objective is convex piecewise linear with kinks at ``y_k - f_k``;
    when the minimum is attained on a flat segment its midpoint is used.
    """
    knots = np.unique(y - f)
    margins = y[None, :] * (f[None, :] + knots[:, None])
    h = np.maximum(0.0, 1.0 - margins).sum(axis=1)
    hmin = h.min()
    flat = knots[h <= hmin + 1e-12 * (1.0 + hmin)]
    b = 0.5 * (flat.min() + flat.max())
    return b, float(np.maximum(0.0, 1.0 - y * (f + b)).sum())


def _check_labels(y):
    y = np.asarray(y, dtype=np.float64).ravel()
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise InvalidArgument("labels must be +1 (fake) or -1 (real)")
    if np.all(y == y[0]):
        raise DegenerateLabels("training needs at least one sample of each class")
    return y


def train(X, y, C=DEFAULT_C, standardize=True, tol=GAP_TOL, max_iter=10_000_000):
    """Fit a linear max-margin classifier to rows of ``X`` with labels ``y``."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError(f"features must be a 2-D array, got shape {X.shape}")
    y = _check_labels(y)
    if X.shape[0] != y.shape[0]:
        raise ShapeError(f"{X.shape[0]} feature rows but {y.shape[0]} labels")
    if C <= 0:
        raise InvalidArgument("C must be positive")

    if standardize:
        mean = X.mean(axis=0)
        scale = X.std(axis=0)
        scale[scale <= 0] = 1.0
        Xs = (X - mean) / scale
    else:
        mean = scale = None
        Xs = X
    K = Xs @ Xs.T
    n = len(y)
    alpha = np.zeros(n)
    G = -np.ones(n)
    eps = 1e-3
    total_iter = 0
    while True:
        total_iter += _smo(K, y, float(C), alpha, G, eps, max_iter - total_iter)
        coef = alpha * y
        w = coef @ Xs
        f = K @ coef
        wnorm2 = float(coef @ f)
        b, hinge = _best_bias(f, y)
        primal = 0.5 * wnorm2 + C * hinge
        dual = float(alpha.sum()) - 0.5 * wnorm2
        gap = primal - dual
        converged = gap <= tol * (1.0 + abs(primal))
        if converged or total_iter >= max_iter or eps < 1e-15:
            break
        eps *= 0.1
        # a fresh gradient keeps rounding drift from stalling the tight phase
        G = y * (K @ coef) - 1.0
    if not converged:
        log.warning("SVM stopped with duality gap %.3g (primal %.6g)", gap, primal)

    if standardize:
        w_raw = w / scale
        b_raw = b - float(np.dot(w_raw, mean))
    else:
        w_raw, b_raw = w, b
    return LinearModel(
        weights=w_raw,
        bias=float(b_raw),
        C=float(C),
        mean=mean,
        scale=scale,
        n_iter=total_iter,
        objective=float(primal),
        gap=float(gap),
        converged=bool(converged),
        meta={"alpha": alpha, "bias_standardized": float(b), "weights_standardized": w},
    )


def score(model, x):
    """Signed score ``w.x + b`` for one vector or a matrix of rows."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.dim:
        raise ShapeError(f"feature dimension {x.shape[-1]} does not match model dimension {model.dim}")
    return x @ model.weights + model.bias

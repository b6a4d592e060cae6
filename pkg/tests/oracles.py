"""Slow reference implementations written straight from the formulas.

Nothing here imports the library's numeric code; these are the
independent side of every oracle comparison in the suite.
"""
import itertools
import math
from collections import Counter
from fractions import Fraction

import numpy as np


def conv_naive(img, bank):
    h, w, m = img.shape
    n, L = bank.shape[0], bank.shape[1]
    out = np.zeros((h - L + 1, w - L + 1, n))
    for i in range(n):
        for y in range(h - L + 1):
            for x in range(w - L + 1):
                acc = 0.0
                for dy in range(L):
                    for dx in range(L):
                        for b in range(m):
                            acc += img[y + dy, x + dx, b] * bank[i, dy, dx, b]
                out[y, x, i] = acc
    return out


def pool_naive(img, L, s, alpha):
    h, w, c = img.shape
    ys = list(range(0, h - L + 1, s))
    xs = list(range(0, w - L + 1, s))
    out = np.zeros((len(ys), len(xs), c))
    for i in range(c):
        for oy, y in enumerate(ys):
            for ox, x in enumerate(xs):
                acc = 0.0
                for dy in range(L):
                    for dx in range(L):
                        acc += img[y + dy, x + dx, i] ** alpha
                out[oy, ox, i] = acc ** (1.0 / alpha)
    return out


def divnorm_naive(img, L, eps=1e-8):
    h, w, c = img.shape
    r = (L - 1) // 2
    out = np.zeros((h - L + 1, w - L + 1, c))
    for y in range(h - L + 1):
        for x in range(w - L + 1):
            energy = 0.0
            for j in range(c):
                for dy in range(L):
                    for dx in range(L):
                        energy += img[y + dy, x + dx, j] ** 2
            for i in range(c):
                out[y, x, i] = img[y + r, x + r, i] / math.sqrt(energy + eps)
    return out


def shape_chain(height, width, layers):
    """Per-layer output shapes by counting window anchors; None on collapse."""
    h, w = height, width
    out = []
    for spec in layers:
        h = len(range(0, h - spec.filter_size + 1))
        w = len(range(0, w - spec.filter_size + 1))
        if h == 0 or w == 0:
            return None
        h = len(range(0, h - spec.pool_size + 1, spec.pool_stride))
        w = len(range(0, w - spec.pool_size + 1, spec.pool_stride))
        if h == 0 or w == 0:
            return None
        if spec.use_norm:
            h = len(range(0, h - spec.norm_size + 1))
            w = len(range(0, w - spec.norm_size + 1))
            if h == 0 or w == 0:
                return None
        out.append((h, w, spec.n_filters))
    return out


def svm_qp_bruteforce(X, y, C):
    """Solve the soft-margin linear SVM dual by enumerating active sets.

    Every sample is either off the margin (alpha = 0), on it
    (0 < alpha < C) or bounded (alpha = C). For each labelling the KKT
    equalities form a linear system; the feasible candidate with the
    largest dual objective is the optimum. Returns (w, b, alpha).
    """
    n = len(y)
    Q = (y[:, None] * y[None, :]) * (X @ X.T)
    best = None
    for states in itertools.product((0, 1, 2), repeat=n):
        free = [i for i in range(n) if states[i] == 1]
        bound = [i for i in range(n) if states[i] == 2]
        if not free:
            continue
        alpha = np.zeros(n)
        alpha[bound] = C
        k = len(free)
        # unknowns: alpha_free, b. equations: margin equalities + sum alpha y = 0
        A = np.zeros((k + 1, k + 1))
        rhs = np.zeros(k + 1)
        A[:k, :k] = Q[np.ix_(free, free)]
        A[:k, k] = y[free]
        rhs[:k] = 1.0 - Q[np.ix_(free, bound)] @ alpha[bound]
        A[k, :k] = y[free]
        rhs[k] = -np.dot(y[bound], alpha[bound])
        sol, *_ = np.linalg.lstsq(A, rhs, rcond=None)
        if not np.allclose(A @ sol, rhs, atol=1e-9):
            continue
        alpha[free] = sol[:k]
        b = sol[k]
        if np.any(alpha[free] < -1e-9) or np.any(alpha[free] > C + 1e-9):
            continue
        w = (alpha * y) @ X
        margins = y * (X @ w + b)
        ok = True
        for i in range(n):
            if states[i] == 0 and margins[i] < 1 - 1e-7:
                ok = False
            if states[i] == 2 and margins[i] > 1 + 1e-7:
                ok = False
        if not ok:
            continue
        dual = alpha.sum() - 0.5 * alpha @ Q @ alpha
        if best is None or dual > best[0] + 1e-12:
            best = (dual, w, b, alpha.copy())
    if best is None:
        raise RuntimeError("no feasible active set")
    return best[1], float(best[2]), best[3]


def eer_bruteforce(real, fake):
    """Exhaustive scan: every midpoint cut, O(n^2). Returns (tau, far, frr)."""
    values = sorted(set(list(real) + list(fake)))
    cands = [(a + b) / 2 for a, b in zip(values[:-1], values[1:])] or [values[0]]
    best = None
    for t in cands:
        far = Fraction(sum(1 for s in fake if s <= t), len(fake))
        frr = Fraction(sum(1 for s in real if s > t), len(real))
        key = (abs(far - frr), t)
        if best is None or key < best[0]:
            best = (key, t, far, frr)
    return best[1], float(best[2]), best[3]


def check_fold_constraints(records, fa):
    """Independent validator: individual-disjoint and +-1 per attack type."""
    where = {}
    for r in records:
        f = fa.fold_of(r.path)
        assert where.setdefault(r.individual_id, f) == f
    totals = Counter(r.attack_type for r in records)
    for f in range(fa.k):
        c = Counter(r.attack_type for r in records if fa.fold_of(r.path) == f)
        for t, n in totals.items():
            assert abs(c.get(t, 0) - n / fa.k) <= 1.0 + 1e-12, (f, t, c, totals)
    assert len(set(where.values())) == fa.k


def fold_bands_feasible(records, k=10):
    """Whether any individual-disjoint assignment meets the +-1 attack-type bands.

    Decided exactly by a 0/1 program over (individual, fold) indicators.
    """
    from scipy.optimize import Bounds, LinearConstraint, milp

    inds = sorted({r.individual_id for r in records})
    types = sorted({r.attack_type for r in records})
    C = np.zeros((len(inds), len(types)))
    for r in records:
        C[inds.index(r.individual_id), types.index(r.attack_type)] += 1
    target = C.sum(axis=0) / k
    n = len(inds)
    A, lo, hi = [], [], []
    for i in range(n):
        row = np.zeros(n * k)
        row[i * k:(i + 1) * k] = 1
        A.append(row), lo.append(1), hi.append(1)
    for f in range(k):
        row = np.zeros(n * k)
        row[f::k] = 1
        A.append(row), lo.append(1), hi.append(np.inf)
        for t in range(len(types)):
            row = np.zeros(n * k)
            row[f::k] = C[:, t]
            A.append(row), lo.append(target[t] - 1), hi.append(target[t] + 1)
    res = milp(np.zeros(n * k), constraints=LinearConstraint(np.array(A), lo, hi),
               integrality=np.ones(n * k), bounds=Bounds(0, 1))
    return res.status == 0

"""Evaluation protocol: folds, thresholds, error rates and score fusion.

Conventions used throughout:

* positive class = attack/fake (label +1), real = -1;
* a sample is predicted fake iff ``score > tau``;
* FAR (false acceptance) = fraction of *attacks* classified as real;
* FRR (false rejection) = fraction of *real* samples classified as attacks;
* HTER = (FAR + FRR) / 2. Rates are reported in percent.
"""
import csv
import json
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateLabels, InvalidArgument, ManifestIntegrityError

FAKE, REAL = 1, -1
THRESHOLD_RULES = ("dev-eer", "cv-eer", "fixed-0.5")


# --------------------------------------------------------------------------
# folds


@dataclass
class FoldAssignment:
    k: int
    sample_ids: list
    folds: np.ndarray
    individual_fold: dict
    type_histogram: list = field(default_factory=list)

    def fold_of(self, sample_id):
        return int(self.folds[self.sample_ids.index(sample_id)])

    def members(self, fold):
        return np.flatnonzero(self.folds == fold)


def _fold_cost(counts, sizes, targets, size_target):
    dev = counts - targets[None, :]
    over = np.maximum(0.0, np.abs(dev) - 1.0)
    return float((dev ** 2).sum() + 1e3 * over.sum() + ((sizes - size_target) ** 2).sum())


def _exact_assignment(comp, targets, k, time_limit=10.0):
    """Individual-to-fold assignment meeting every +-1 band, or None.

    A pure feasibility integer program: one fold per individual, no empty
    fold, each attack-type count within one sample of its target. Rows of
    ``comp`` arrive in seeded order, which is what makes the answer vary
    with the seed.
    """
    from scipy.optimize import Bounds, LinearConstraint, milp

    n, nt = comp.shape
    nx = n * k  # x[i, f] at i * k + f
    rows, lo, hi = [], [], []
    for i in range(n):
        row = np.zeros(nx)
        row[i * k:(i + 1) * k] = 1.0
        rows.append(row)
        lo.append(1.0)
        hi.append(1.0)
    for f in range(k):
        row = np.zeros(nx)
        row[f::k] = 1.0
        rows.append(row)
        lo.append(1.0)
        hi.append(np.inf)
        for t in range(nt):
            row = np.zeros(nx)
            row[f::k] = comp[:, t]
            rows.append(row)
            lo.append(targets[t] - 1.0)
            hi.append(targets[t] + 1.0)
    res = milp(np.zeros(nx), constraints=LinearConstraint(np.array(rows), lo, hi), integrality=np.ones(nx),
               bounds=Bounds(0.0, 1.0), options={"time_limit": time_limit})
    if res.status != 0 or res.x is None:
        return None
    return np.argmax(res.x.reshape(n, k), axis=1)


def make_folds(records, k=10, rng_seed=0):
    """Split samples into ``k`` folds, keeping each individual in one fold.

    ``records`` need ``path`` (sample id), ``individual_id`` and
    ``attack_type`` attributes. Individuals are shuffled with the seed,
    placed largest-first into the fold that best keeps every attack type
    near ``count / k`` per fold, then refined by single moves and pairwise
    swaps until no change lowers the imbalance. If a +-1 band is still
    violated, an exact integer program looks for an assignment meeting all
    bands; when none exists the local-search result is kept.
    """
    if k < 2:
        raise InvalidArgument("k must be >= 2")
    records = list(records)
    individuals = sorted({r.individual_id for r in records})
    if len(individuals) < k:
        raise InvalidArgument(f"{len(individuals)} individuals cannot fill {k} folds")
    types = sorted({r.attack_type for r in records})
    tindex = {t: i for i, t in enumerate(types)}

    rng = np.random.default_rng(rng_seed)
    order = [individuals[i] for i in rng.permutation(len(individuals))]
    comp = {ind: np.zeros(len(types)) for ind in individuals}
    for r in records:
        comp[r.individual_id][tindex[r.attack_type]] += 1
    order.sort(key=lambda ind: -comp[ind].sum())  # stable: ties keep shuffled order

    targets = np.array([sum(1 for r in records if r.attack_type == t) for t in types], dtype=float) / k
    size_target = len(records) / k
    counts = np.zeros((k, len(types)))
    members = [[] for _ in range(k)]

    def cost():
        return _fold_cost(counts, counts.sum(axis=1), targets, size_target)

    for pos, ind in enumerate(order):
        if pos < k:
            f = pos
        else:
            best = None
            for f_try in range(k):
                counts[f_try] += comp[ind]
                c = cost()
                counts[f_try] -= comp[ind]
                if best is None or c < best[0] - 1e-12:
                    best = (c, f_try)
            f = best[1]
        counts[f] += comp[ind]
        members[f].append(ind)

    current = cost()
    for _ in range(50):
        improved = False
        for f in range(k):
            for ind in list(members[f]):
                if len(members[f]) == 1:
                    continue
                for g in range(k):
                    if g == f:
                        continue
                    counts[f] -= comp[ind]
                    counts[g] += comp[ind]
                    c = cost()
                    if c < current - 1e-9:
                        members[f].remove(ind)
                        members[g].append(ind)
                        current = c
                        improved = True
                        break
                    counts[g] -= comp[ind]
                    counts[f] += comp[ind]
        if np.any(np.abs(counts - targets[None, :]) > 1.0 + 1e-9) or not improved:
            # swaps only when a +-1 band is still violated or moves stalled
            for f in range(k):
                for g in range(f + 1, k):
                    for a in list(members[f]):
                        for b in list(members[g]):
                            if a not in members[f] or b not in members[g]:
                                continue
                            delta = comp[b] - comp[a]
                            counts[f] += delta
                            counts[g] -= delta
                            c = cost()
                            if c < current - 1e-9:
                                members[f].remove(a)
                                members[g].remove(b)
                                members[f].append(b)
                                members[g].append(a)
                                current = c
                                improved = True
                            else:
                                counts[f] -= delta
                                counts[g] += delta
        if not improved:
            break

    if np.any(np.abs(counts - targets[None, :]) > 1.0 + 1e-9):
        exact = _exact_assignment(np.array([comp[ind] for ind in order]), targets, k)
        if exact is not None:
            members = [[ind for ind, f in zip(order, exact) if f == g] for g in range(k)]

    individual_fold = {ind: f for f in range(k) for ind in members[f]}
    sample_ids = [r.path for r in records]
    folds = np.array([individual_fold[r.individual_id] for r in records], dtype=np.int64)
    hist = [dict(Counter(r.attack_type for r, fo in zip(records, folds) if fo == f)) for f in range(k)]
    return FoldAssignment(k, sample_ids, folds, individual_fold, hist)


# --------------------------------------------------------------------------
# scores and metrics


@dataclass
class ScoreSet:
    sample_ids: list
    group_ids: list
    labels: np.ndarray
    scores: np.ndarray
    rule: str = None

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if not (len(self.sample_ids) == len(self.group_ids) == len(self.labels) == len(self.scores)):
            raise InvalidArgument("score set columns differ in length")
        if not np.all(np.isin(self.labels, (FAKE, REAL))):
            raise InvalidArgument("labels must be +1 (fake) or -1 (real)")
        if not np.all(np.isfinite(self.scores)):
            raise InvalidArgument("scores must be finite")

    @classmethod
    def from_arrays(cls, scores, labels, sample_ids=None, group_ids=None, rule=None):
        n = len(scores)
        sample_ids = list(range(n)) if sample_ids is None else list(sample_ids)
        group_ids = list(sample_ids) if group_ids is None else list(group_ids)
        return cls(sample_ids, group_ids, labels, scores, rule)

    def __len__(self):
        return len(self.scores)

    def concat(self, other):
        return ScoreSet(self.sample_ids + other.sample_ids, self.group_ids + other.group_ids,
                        np.concatenate([self.labels, other.labels]),
                        np.concatenate([self.scores, other.scores]), self.rule)


@dataclass
class EvalReport:
    tau: float
    acc: float
    hter: float
    far: float
    frr: float
    n_real: int
    n_fake: int
    n_correct: int
    rule: str = None

    def to_dict(self):
        return {
            "tau": self.tau,
            "ACC": self.acc,
            "HTER": self.hter,
            "FAR": self.far,
            "FRR": self.frr,
            "counts": {"real": self.n_real, "fake": self.n_fake, "correct": self.n_correct},
            "threshold_rule": self.rule,
        }


def _split(scores):
    fake = np.sort(scores.scores[scores.labels == FAKE])
    real = np.sort(scores.scores[scores.labels == REAL])
    if fake.size == 0 or real.size == 0:
        raise DegenerateLabels("threshold selection needs both real and fake scores")
    return real, fake


def eer_threshold(scores):
    """Threshold at the cut where FAR and FRR are closest.

    Candidate cuts are midpoints between adjacent distinct scores. The
    comparison of ``|FAR - FRR|`` is done in exact integer arithmetic;
    ties go to the lowest threshold.
    """
    real, fake = _split(scores)
    values = np.unique(np.concatenate([real, fake]))
    if values.size == 1:
        return float(values[0])
    n_real, n_fake = real.size, fake.size
    below = values[:-1]
    fake_accepted = np.searchsorted(fake, below, side="right")        # fake <= cut
    real_rejected = n_real - np.searchsorted(real, below, side="right")  # real > cut
    # |fa/nf - rr/nr| compared as |fa*nr - rr*nf|
    gap = np.abs(fake_accepted.astype(np.int64) * n_real - real_rejected.astype(np.int64) * n_fake)
    k = int(np.argmin(gap))
    return float(0.5 * (values[k] + values[k + 1]))


def compute_metrics(scores, tau, rule=None):
    pred_fake = scores.scores > tau
    is_fake = scores.labels == FAKE
    n_fake = int(is_fake.sum())
    n_real = int((~is_fake).sum())
    fa = int((is_fake & ~pred_fake).sum())
    fr = int((~is_fake & pred_fake).sum())
    far = 100.0 * fa / n_fake if n_fake else 0.0
    frr = 100.0 * fr / n_real if n_real else 0.0
    correct = len(scores) - fa - fr
    acc = 100.0 * correct / len(scores) if len(scores) else 0.0
    return EvalReport(float(tau), acc, (far + frr) / 2.0, far, frr, n_real, n_fake, correct, rule)


def fuse_max(scores):
    """One entry per group holding the maximum member score."""
    first = {}
    labels = {}
    best = {}
    for sid, gid, lab, s in zip(scores.sample_ids, scores.group_ids, scores.labels, scores.scores):
        if gid is None:
            raise ManifestIntegrityError(f"sample {sid} has no group id")
        if gid not in first:
            first[gid] = len(first)
            labels[gid] = int(lab)
            best[gid] = float(s)
        else:
            if labels[gid] != lab:
                raise ManifestIntegrityError(f"group {gid} mixes real and fake samples")
            best[gid] = max(best[gid], float(s))
    groups = sorted(first, key=first.get)
    return ScoreSet(groups, list(groups), [labels[g] for g in groups], [best[g] for g in groups], scores.rule)


def select_threshold(rule, dev_scores=None, cv_scores=None):
    if rule == "fixed-0.5":
        return 0.5
    if rule == "dev-eer":
        if dev_scores is None or len(dev_scores) == 0:
            raise InvalidArgument("dev-eer needs development-set scores")
        return eer_threshold(dev_scores)
    if rule == "cv-eer":
        if cv_scores is None or len(cv_scores) == 0:
            raise InvalidArgument("cv-eer needs pooled cross-validation scores")
        return eer_threshold(cv_scores)
    raise InvalidArgument(f"unknown threshold rule {rule!r}; expected one of {THRESHOLD_RULES}")


def det_points(scores):
    """Raw (tau, FAR, FRR) triples at every candidate cut, for export."""
    real, fake = _split(scores)
    values = np.unique(np.concatenate([real, fake]))
    cuts = 0.5 * (values[:-1] + values[1:]) if values.size > 1 else values
    out = []
    for t in cuts:
        far = 100.0 * np.count_nonzero(fake <= t) / fake.size
        frr = 100.0 * np.count_nonzero(real > t) / real.size
        out.append((float(t), far, frr))
    return out


def write_scores_csv(path, scores):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["sample_id", "group_id", "label", "score"])
        for sid, gid, lab, s in zip(scores.sample_ids, scores.group_ids, scores.labels, scores.scores):
            wr.writerow([sid, gid, "fake" if lab == FAKE else "real", repr(float(s))])


def write_report(path, report, **extra):
    doc = dict(extra)
    doc.update(report.to_dict())
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    return doc


from collections import Counter, namedtuple

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import check_fold_constraints, eer_bruteforce, fold_bands_feasible
from spoofbench import protocol as pr
from spoofbench.errors import DegenerateLabels, InvalidArgument, ManifestIntegrityError

Rec = namedtuple("Rec", "path individual_id attack_type")


def scoreset(real, fake):
    scores = list(real) + list(fake)
    labels = [-1] * len(real) + [1] * len(fake)
    return pr.ScoreSet.from_arrays(scores, labels)


def test_one_individual_per_fold():
    recs = [Rec(f"s{i}-{j}", f"p{i}", "none") for i in range(10) for j in range(3)]
    fa = pr.make_folds(recs, 10, rng_seed=1)
    assert sorted(Counter(fa.individual_fold.values()).values()) == [1] * 10


def test_two_per_fold_balanced_sizes():
    recs = [Rec(f"s{i}-{j}", f"p{i}", "none" if j < 10 else "print") for i in range(20) for j in range(20)]
    fa = pr.make_folds(recs, 10, rng_seed=2)
    sizes = np.bincount(fa.folds, minlength=10)
    assert np.all(np.abs(sizes - sizes.mean()) <= 1)
    assert sorted(Counter(fa.individual_fold.values()).values()) == [2] * 10
    check_fold_constraints(recs, fa)


def test_two_attack_types_stratified():
    rng = np.random.default_rng(5)
    recs = []
    for i in range(30):
        for t in ("none", "print", "replay"):
            if rng.random() < 0.7:
                recs.append(Rec(f"s{i}-{t}", f"p{i}", t))
    fa = pr.make_folds(recs, 10, rng_seed=3)
    check_fold_constraints(recs, fa)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 2), st.integers(0, 2), st.integers(0, 1)), min_size=10, max_size=30),
       st.integers(0, 2**16))
def test_folds_meet_bands_whenever_possible(counts, seed):
    recs = [Rec(f"s{i}-{t}-{j}", f"p{i}", t) for i, c in enumerate(counts)
            for t, n in zip(("none", "print", "replay"), c) for j in range(n)]
    if len({r.individual_id for r in recs}) < 10 or not fold_bands_feasible(recs):
        return
    check_fold_constraints(recs, pr.make_folds(recs, 10, rng_seed=seed))


def test_make_folds_errors_and_determinism():
    recs = [Rec(f"s{i}", f"p{i}", "none") for i in range(5)]
    with pytest.raises(InvalidArgument):
        pr.make_folds(recs, 10)
    recs = [Rec(f"s{i}", f"p{i % 12}", "none") for i in range(40)]
    a = pr.make_folds(recs, 10, rng_seed=9)
    b = pr.make_folds(recs, 10, rng_seed=9)
    assert a.folds.tolist() == b.folds.tolist()


def test_eer_separable():
    s = scoreset([0.1, 0.2], [0.8, 0.9])
    tau = pr.eer_threshold(s)
    assert tau == pytest.approx(0.5)
    rep = pr.compute_metrics(s, tau)
    assert rep.far == 0 and rep.frr == 0


def test_eer_interleaved():
    s = scoreset([0, 2, 4, 6], [1, 3, 5, 7])
    tau = pr.eer_threshold(s)
    ref_tau, far, frr = eer_bruteforce([0, 2, 4, 6], [1, 3, 5, 7])
    assert tau == ref_tau
    rep = pr.compute_metrics(s, tau)
    assert rep.far == pytest.approx(100 * far) and rep.frr == pytest.approx(100 * frr)
    s = scoreset([0, 2], [1, 3])
    rep = pr.compute_metrics(s, pr.eer_threshold(s))
    assert rep.far == rep.frr == 50.0


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 30), min_size=1, max_size=25),
       st.lists(st.integers(0, 30), min_size=1, max_size=25))
def test_eer_matches_exhaustive_scan(real, fake):
    s = scoreset(real, fake)
    tau = pr.eer_threshold(s)
    ref_tau, _, _ = eer_bruteforce(real, fake)
    assert tau == ref_tau


def test_eer_monotone_invariance(rng):
    real = rng.normal(0, 1, 50)
    fake = rng.normal(1, 1, 40)
    s = scoreset(real, fake)
    tau = pr.eer_threshold(s)
    rep = pr.compute_metrics(s, tau)
    t = scoreset(np.exp(real), np.exp(fake))
    tau2 = pr.eer_threshold(t)
    rep2 = pr.compute_metrics(t, tau2)
    assert (rep.far, rep.frr) == (rep2.far, rep2.frr)


def test_eer_single_class():
    with pytest.raises(DegenerateLabels):
        pr.eer_threshold(scoreset([0.1, 0.2], []))


def test_metrics_arithmetic():
    # 10 real (1 rejected), 5 fake (1 accepted) -> FRR 10, FAR 20, HTER 15
    real = [0.0] * 9 + [1.0]
    fake = [1.0] * 4 + [0.0]
    rep = pr.compute_metrics(scoreset(real, fake), 0.5)
    assert (rep.far, rep.frr, rep.hter) == (20.0, 10.0, 15.0)
    assert rep.acc == pytest.approx(100 * 13 / 15)
    rep = pr.compute_metrics(scoreset([0.0] * 5, [0.0] * 4 + [1.0]), 0.5)
    assert rep.acc == 60.0
    low = pr.compute_metrics(scoreset([0.1], [0.2]), 0.9)
    assert low.frr == 0 and low.far == 100


def test_acc_equals_100_minus_hter_when_balanced(rng):
    s = scoreset(rng.normal(0, 1, 100), rng.normal(1, 1, 100))
    rep = pr.compute_metrics(s, pr.eer_threshold(s))
    assert rep.acc == pytest.approx(100 - rep.hter, abs=100 / 200)


def test_fuse_max():
    s = pr.ScoreSet(["a", "b", "c", "d"], ["v1", "v1", "v1", "v2"], [1, 1, 1, -1], [0.2, 0.7, 0.5, 0.1])
    fused = pr.fuse_max(s)
    assert fused.sample_ids == ["v1", "v2"]
    assert fused.scores.tolist() == [0.7, 0.1]
    single = pr.ScoreSet.from_arrays([0.3, 0.4], [1, -1])
    assert pr.fuse_max(single).scores.tolist() == [0.3, 0.4]
    bad = pr.ScoreSet(["a", "b"], ["g", "g"], [1, -1], [0.1, 0.2])
    with pytest.raises(ManifestIntegrityError):
        pr.fuse_max(bad)


def test_fusion_then_threshold_is_any_member_above(rng):
    groups = [f"g{i // 5}" for i in range(50)]
    labels = [1 if (i // 5) % 2 else -1 for i in range(50)]
    s = pr.ScoreSet(list(range(50)), groups, labels, rng.random(50))
    fused = pr.fuse_max(s)
    tau = 0.8
    for gid, score in zip(fused.sample_ids, fused.scores):
        members = s.scores[[g == gid for g in groups]]
        assert (score > tau) == bool(np.any(members > tau))


def test_select_threshold():
    sep = scoreset([0.1, 0.2], [0.8, 0.9])
    assert pr.select_threshold("fixed-0.5") == 0.5
    tau = pr.select_threshold("cv-eer", cv_scores=sep)
    assert 0.2 < tau < 0.8
    assert pr.select_threshold("dev-eer", dev_scores=sep) == pr.eer_threshold(sep)
    with pytest.raises(InvalidArgument):
        pr.select_threshold("dev-eer")
    with pytest.raises(InvalidArgument):
        pr.select_threshold("cv-eer")


def test_scores_csv(tmp_path):
    s = pr.ScoreSet(["a"], ["g"], [1], [0.25])
    pr.write_scores_csv(tmp_path / "s.csv", s)
    assert (tmp_path / "s.csv").read_text().splitlines() == ["sample_id,group_id,label,score", "a,g,fake,0.25"]

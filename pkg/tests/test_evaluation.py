import numpy as np
import pytest

from maw import evaluation as E
from maw import model as M
from maw.errors import DataError, DomainError, MetricError


# ------------------------------------------------------------ synthetic data


def test_gen_synthetic_counts_and_labels():
    ds = E.gen_synthetic(6, 2, 100, 0.2, noise=0.1, seed=0)
    assert ds.features.shape == (120, 6)
    assert ds.n_outliers == 20
    assert np.all(ds.labels[:100] == 0)
    assert np.all(ds.labels[100:] == 1)
    assert np.allclose(np.linalg.norm(ds.features, axis=1), 1.0)


def test_gen_synthetic_rank_one_no_noise():
    ds = E.gen_synthetic(5, 1, 50, 0.0, noise=0.0, seed=1)
    q = ds.features[0]
    dots = np.abs(ds.features @ q)
    assert np.allclose(dots, 1.0, atol=1e-9)  # all rows are +-q


def test_gen_synthetic_deterministic():
    a = E.gen_synthetic(6, 2, 40, 0.25, noise=0.05, seed=3)
    b = E.gen_synthetic(6, 2, 40, 0.25, noise=0.05, seed=3)
    assert np.array_equal(a.features, b.features)
    assert np.array_equal(a.labels, b.labels)


def test_family_shares_frame_across_splits():
    family = E.SyntheticFamily(8, 1, noise=0.0, seed=5)
    train = family.sample(20, 0, sample_seed=0)
    test = family.sample(20, 0, sample_seed=1)
    # same rank-1 frame: every train row is colinear with every test row
    dots = np.abs(train.features @ test.features.T)
    assert np.allclose(dots, 1.0, atol=1e-9)
    assert not np.array_equal(train.features, test.features)


def test_gen_synthetic_rejects_bad_rank():
    with pytest.raises(DomainError):
        E.gen_synthetic(4, 4, 10, 0.1, noise=0.1, seed=0)


# ------------------------------------------------------------ CSV ingestion


def test_load_csv_normalizes(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("f1,f2,label\n3,4,0\n")
    ds = E.load_csv(p)
    assert np.allclose(ds.features, [[0.6, 0.8]])
    assert ds.labels.tolist() == [0]
    assert ds.provenance == "csv"


def test_load_csv_missing_label_column(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("f1,f2\n1,0\n0,2\n")
    ds = E.load_csv(p)
    assert ds.labels.tolist() == [0, 0]


def test_load_csv_parse_error_position(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("f1\nabc\n")
    with pytest.raises(DataError, match="row 1"):
        E.load_csv(p)


def test_load_csv_empty_and_missing(tmp_path):
    p = tmp_path / "empty.csv"
    p.write_text("")
    with pytest.raises(DataError):
        E.load_csv(p)
    with pytest.raises(DataError):
        E.load_csv(tmp_path / "nope.csv")


def test_load_csv_skips_comment_lines(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text('# config {"seed": 1}\nf1,f2,label\n1,0,1\n')
    ds = E.load_csv(p)
    assert ds.labels.tolist() == [1]


# ------------------------------------------------------------ metrics


def test_auc_examples():
    assert E.auc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0
    assert E.auc([0.9, 0.8, 0.2, 0.1], [0, 0, 1, 1]) == 0.0
    assert E.auc([0.5, 0.5], [1, 0]) == 0.5


def test_auc_single_class_rejected():
    with pytest.raises(MetricError):
        E.auc([0.1, 0.2], [1, 1])


def test_ap_examples():
    assert E.ap([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0
    # ranking (1, 0, 1, 0): (1/1 + 2/3) / 2
    assert E.ap([0.9, 0.8, 0.7, 0.6], [1, 0, 1, 0]) == pytest.approx(5.0 / 6.0)
    assert E.ap([0.9, 0.8, 0.7, 0.6], [0, 0, 0, 1]) == pytest.approx(0.25)
    with pytest.raises(MetricError):
        E.ap([0.5, 0.6], [0, 0])


def test_auc_monotone_transform_invariance():
    rng = np.random.default_rng(0)
    s = rng.standard_normal(50)
    labels = rng.integers(0, 2, size=50)
    if labels.sum() in (0, 50):
        labels[0] = 1 - labels[0]
    assert E.auc(s, labels) == pytest.approx(E.auc(np.exp(2.0 * s), labels))


def test_auc_complement_without_ties():
    rng = np.random.default_rng(1)
    s = rng.standard_normal(60)
    labels = np.concatenate([np.ones(20, int), np.zeros(40, int)])
    assert E.auc(s, labels) + E.auc(-s, labels) == pytest.approx(1.0)


def test_ap_is_one_iff_perfect_ranking():
    rng = np.random.default_rng(2)
    for _ in range(20):
        labels = rng.integers(0, 2, size=12)
        if labels.sum() in (0, 12):
            continue
        scores = rng.standard_normal(12)
        perfect = bool(np.min(scores[labels == 1]) > np.max(scores[labels == 0]))
        assert (E.ap(scores, labels) == 1.0) == perfect


def _brute_force_roc_auc(scores, labels):
    # explicit all-thresholds ROC with trapezoidal area, in exact rationals
    from fractions import Fraction

    scores = np.asarray(scores, float)
    labels = np.asarray(labels, int)
    thresholds = np.concatenate([[np.inf], np.sort(np.unique(scores))[::-1]])
    pos, neg = int(labels.sum()), int((1 - labels).sum())
    points = []
    for th in thresholds:
        pred = scores >= th
        tpr = Fraction(int(np.sum(pred & (labels == 1))), pos)
        fpr = Fraction(int(np.sum(pred & (labels == 0))), neg)
        points.append((fpr, tpr))
    area = Fraction(0)
    for (f0, t0), (f1, t1) in zip(points, points[1:]):
        area += (f1 - f0) * (t0 + t1) / 2
    return float(area)


def _brute_force_pr_ap(scores, labels):
    # step-wise AP from the explicit precision/recall sequence
    scores = np.asarray(scores, float)
    labels = np.asarray(labels, int)
    order = np.argsort(-scores, kind="stable")
    ranked = labels[order]
    pos = ranked.sum()
    tp = 0
    total = 0.0
    for k, lab in enumerate(ranked, start=1):
        if lab == 1:
            tp += 1
            total += tp / k
    return total / pos


def test_metrics_match_brute_force_constructions():
    rng = np.random.default_rng(3)
    for _ in range(200):
        n = int(rng.integers(5, 40))
        scores = rng.standard_normal(n)  # continuous, ties a.s. absent
        labels = rng.integers(0, 2, size=n)
        if labels.sum() in (0, n):
            labels[0] = 1 - labels[0]
        assert E.auc(scores, labels) == pytest.approx(_brute_force_roc_auc(scores, labels), abs=1e-12)
        assert E.ap(scores, labels) == pytest.approx(_brute_force_pr_ap(scores, labels), abs=1e-12)


def test_metric_row_permutation_invariance():
    rng = np.random.default_rng(4)
    scores = rng.standard_normal(30)
    labels = rng.integers(0, 2, size=30)
    labels[0] = 1
    labels[1] = 0
    perm = rng.permutation(30)
    assert E.auc(scores, labels) == pytest.approx(E.auc(scores[perm], labels[perm]))
    # AP's stable tie-break only matters with ties; continuous scores permute freely
    assert E.ap(scores, labels) == pytest.approx(E.ap(scores[perm], labels[perm]))


# ------------------------------------------------------------ experiment driver


def _tiny_hp():
    return M.Hyperparams(
        d=2, dprime=4, samples=2, epochs=2, batch_size=16,
        encoder_widths=(8, 8), decoder_widths=(8, 8), critic_widths=(8, 8),
        lr_vae=1e-3, lr_critic=1e-3,
    )


def test_run_experiment_single_cell():
    family = E.SyntheticFamily(6, 1, noise=0.1, seed=0)
    split = E.SplitSpec(n_train=24, c=0.25, n_test=16, c_tests=(0.5,), seed=0)
    reports = E.run_experiment(family, [split], ["maw"], [0], _tiny_hp())
    assert len(reports) == 1
    rep = reports[0]
    assert rep.auc_std == 0.0 and rep.ap_std == 0.0
    assert 0.0 <= rep.auc_mean <= 1.0
    assert len(rep.per_seed) == 1


def test_run_experiment_std_is_population_std():
    family = E.SyntheticFamily(6, 1, noise=0.1, seed=1)
    split = E.SplitSpec(n_train=24, c=0.25, n_test=16, c_tests=(0.5,), seed=0)
    reports = E.run_experiment(family, [split], ["maw"], [0, 1, 2], _tiny_hp())
    rep = reports[0]
    vals = np.array([e["auc"] for e in rep.per_seed])
    assert rep.auc_mean == pytest.approx(vals.mean())
    assert rep.auc_std == pytest.approx(vals.std())  # ddof=0


def test_run_experiment_grid_shape():
    family = E.SyntheticFamily(6, 1, noise=0.1, seed=2)
    splits = [
        E.SplitSpec(n_train=20, c=c, n_test=12, c_tests=(0.5,), seed=0)
        for c in (0.1, 0.2)
    ]
    reports = E.run_experiment(family, splits, ["maw", "vae"], [0], _tiny_hp())
    assert [(r.variant, r.c) for r in reports] == [
        ("maw", 0.1), ("maw", 0.2), ("vae", 0.1), ("vae", 0.2),
    ]


def test_run_experiment_deterministic():
    family = E.SyntheticFamily(6, 1, noise=0.1, seed=3)
    split = E.SplitSpec(n_train=20, c=0.2, n_test=12, c_tests=(0.3,), seed=0)
    r1 = E.run_experiment(family, [split], ["maw"], [0], _tiny_hp())
    r2 = E.run_experiment(family, [split], ["maw"], [0], _tiny_hp())
    assert r1[0].to_dict() == r2[0].to_dict()

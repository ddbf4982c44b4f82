import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import metrics_oracle as ref
from coco.errors import MetricsError, UndefinedAUCError
from coco.metrics import Binning, all_metrics, auc, bin_summaries, brier, cce_hat, ece_hat, mce_hat, roc_curve

MS4 = [0.95, 0.95, 0.05, 0.05]
LAB4 = [1, 0, 0, 0]


def test_binning_edges_and_boundaries():
    b = Binning(10)
    assert np.allclose(b.edges, np.arange(11) / 10)
    assert b.assign([0.0, 0.1, 0.0999, 1.0, 0.95]).tolist() == [0, 1, 0, 9, 9]


def test_bin_summaries_hand_example():
    s = bin_summaries(MS4, LAB4, 10)
    assert s.count[9] == 2 and s.conf[9] == pytest.approx(0.95) and s.occ[9] == 0.5
    assert s.count[0] == 2 and s.conf[0] == pytest.approx(0.05) and s.occ[0] == 0.0
    assert s.count.sum() == s.total == 4
    assert np.isnan(s.conf[4])


def test_one_is_in_last_bin():
    assert bin_summaries([1.0], [1], 10).count[9] == 1


def test_empty_and_mismatch():
    with pytest.raises(MetricsError):
        bin_summaries([], [], 10)
    with pytest.raises(MetricsError):
        ece_hat([0.1, 0.2], [1], 10)


def test_hand_values():
    assert ece_hat(MS4, LAB4) == pytest.approx(0.25)
    assert mce_hat(MS4, LAB4) == pytest.approx(0.45)
    assert cce_hat(MS4, LAB4) == pytest.approx(0.45)
    assert brier(MS4, LAB4) == pytest.approx(0.2275)
    assert ece_hat([0.7], [1]) == pytest.approx(0.3)
    assert mce_hat([0.55, 0.55], [1, 0]) == pytest.approx(0.05)
    assert cce_hat([0.1, 0.1], [1, 1]) == pytest.approx(-0.9)
    assert brier([0.5, 0.5], [1, 0]) == 0.25


def test_perfect_labels():
    ms = [0.0, 1.0, 1.0, 0.0]
    assert ece_hat(ms, ms) == mce_hat(ms, ms) == cce_hat(ms, ms) == brier(ms, ms) == 0.0


@pytest.mark.parametrize("ms, labels, expected", [
    ([0.9, 0.8, 0.4, 0.3], [1, 1, 0, 0], 1.0),
    ([0.9, 0.4, 0.8, 0.3], [1, 1, 0, 0], 0.75),
    ([0.5, 0.5, 0.5], [1, 0, 1], 0.5),
])
def test_auc_examples(ms, labels, expected):
    assert auc(ms, labels) == pytest.approx(expected)


def test_auc_single_class():
    with pytest.raises(UndefinedAUCError):
        auc([0.1, 0.2], [1, 1])
    assert np.isnan(all_metrics([0.1, 0.2], [1, 1])["AuC"])


def test_roc_endpoints():
    fpr, tpr = roc_curve([0.9, 0.4, 0.8, 0.3], [1, 1, 0, 0])
    assert (fpr[0], tpr[0]) == (0.0, 0.0) and (fpr[-1], tpr[-1]) == (1.0, 1.0)
    assert np.all(np.diff(fpr) >= 0) and np.all(np.diff(tpr) >= 0)


def test_reliability_csv(tmp_path):
    path = bin_summaries(MS4, LAB4, 10).to_csv(tmp_path / "r.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "bin_lo,bin_hi,count,conf,occ" and len(lines) == 3


data = st.integers(1, 200).flatmap(lambda n: st.tuples(
    st.lists(st.one_of(st.floats(0, 1), st.sampled_from([0.0, 0.1, 0.5, 0.9, 1.0])), min_size=n, max_size=n),
    st.lists(st.booleans(), min_size=n, max_size=n)))


@settings(max_examples=150, deadline=None)
@given(data, st.integers(1, 12))
def test_against_loop_oracle(d, K):
    ms, labels = d
    assert ece_hat(ms, labels, K) == pytest.approx(ref.ece(ms, labels, K), abs=1e-12)
    assert mce_hat(ms, labels, K) == pytest.approx(ref.mce(ms, labels, K), abs=1e-12)
    assert cce_hat(ms, labels, K) == pytest.approx(ref.cce(ms, labels, K), abs=1e-12)
    assert brier(ms, labels) == pytest.approx(ref.brier(ms, labels), abs=1e-12)
    if 0 < sum(labels) < len(labels):
        assert auc(ms, labels) == pytest.approx(ref.auc_pairs(ms, labels), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(data)
def test_error_orderings(d):
    ms, labels = d
    m, e, c = mce_hat(ms, labels), ece_hat(ms, labels), cce_hat(ms, labels)
    assert m >= e - 1e-15 and m >= c - 1e-15
    s = bin_summaries(ms, labels)
    gaps = s.conf[s.nonempty] - s.occ[s.nonempty]
    if gaps[np.argmax(np.abs(gaps))] > 0:
        assert c == pytest.approx(m, abs=1e-15)


@settings(max_examples=50, deadline=None)
@given(data, st.randoms(use_true_random=False))
def test_ece_order_invariant(d, rnd):
    ms, labels = d
    idx = list(range(len(ms)))
    rnd.shuffle(idx)
    assert ece_hat([ms[i] for i in idx], [labels[i] for i in idx]) == pytest.approx(ece_hat(ms, labels), abs=1e-12)


def test_calibrated_generator_has_small_ece():
    rng = np.random.default_rng(0)
    m = rng.random(100_000)
    assert ece_hat(m, rng.random(m.size) < m) < 0.02

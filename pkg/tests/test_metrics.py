import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import auc_oracle, bpcer_oracle, d_eer_oracle
from wavemorph import metrics
from wavemorph.errors import MetricError
from wavemorph.metrics import ScoreSet, auc, bpcer_at_apcer, d_eer


def make(bona, morph):
    return ScoreSet(np.r_[bona, morph], np.r_[np.zeros(len(bona)), np.ones(len(morph))])


def test_hand_case():
    ss = make([0.1, 0.2, 0.6], [0.4, 0.8, 0.9])
    assert d_eer(ss) == pytest.approx(1 / 3, abs=1e-15)
    assert auc(ss) == pytest.approx(8 / 9, abs=1e-15)


def test_apcer_bpcer_at_threshold():
    ss = make([0.1, 0.2, 0.6], [0.4, 0.8, 0.9])
    assert metrics.apcer(ss, 0.4) == 0.0  # score >= t is morph
    assert metrics.bpcer(ss, 0.6) == pytest.approx(1 / 3)
    assert metrics.apcer(ss, 0.85) == pytest.approx(2 / 3)


def test_separable_and_inverted():
    ss = make([0.1, 0.2, 0.3], [0.7, 0.8, 0.9])
    assert d_eer(ss) == 0.0 and auc(ss) == 1.0
    assert bpcer_at_apcer(ss, 0.05) == 0.0
    inv = make([0.7, 0.8, 0.9], [0.1, 0.2, 0.3])
    assert d_eer(inv) == 1.0 and auc(inv) == 0.0


def test_all_tied():
    ss = make([0.5] * 4, [0.5] * 3)
    assert auc(ss) == 0.5
    assert d_eer(ss) == 0.5  # rates are (0,1) or (1,0) at every threshold


def test_errors():
    with pytest.raises(MetricError):
        d_eer(make([0.1, 0.2], []))
    with pytest.raises(MetricError):
        auc(make([], [0.3]))
    with pytest.raises(MetricError):
        ScoreSet([0.1, np.nan], [0, 1])
    with pytest.raises(MetricError):
        ScoreSet([0.1, 0.2], [0, 2])


@pytest.mark.parametrize("seed", range(20))
def test_against_oracles(seed):
    r = np.random.default_rng(seed)
    nb, nm = r.integers(1, 60, size=2)
    # coarse grid forces ties
    bona = list(np.round(r.normal(0.3, 0.2, nb), 2))
    morph = list(np.round(r.normal(0.6, 0.2, nm), 2))
    ss = make(bona, morph)
    assert d_eer(ss) == d_eer_oracle(bona, morph)
    for target in (0.05, 0.1, 0.3):
        assert bpcer_at_apcer(ss, target) == bpcer_oracle(bona, morph, target)
    assert abs(auc(ss) - auc_oracle(bona, morph)) < 1e-12


@settings(max_examples=40, deadline=None)
@given(
    bona=st.lists(st.floats(-5, 5, allow_nan=False), min_size=1, max_size=25),
    morph=st.lists(st.floats(-5, 5, allow_nan=False), min_size=1, max_size=25),
)
def test_invariants(bona, morph):
    ss = make(bona, morph)
    e, a = d_eer(ss), auc(ss)
    assert 0.0 <= e <= 1.0 and 0.0 <= a <= 1.0
    # strictly increasing transform leaves everything unchanged
    warped = make(np.tanh(np.array(bona) / 7), np.tanh(np.array(morph) / 7))
    if len(set(np.tanh(np.r_[bona, morph] / 7))) == len(set(bona) | set(morph)):
        assert d_eer(warped) == e and auc(warped) == a
    # class swap with negated scores is the same detector
    assert auc(make(-np.array(morph), -np.array(bona))) == pytest.approx(a, abs=1e-12)
    assert auc(ss.swapped()) == pytest.approx(1 - a, abs=1e-12)
    assert bpcer_at_apcer(ss, 0.05) >= bpcer_at_apcer(ss, 0.10)


def test_det_curve_monotone_and_csv(tmp_path, rng):
    ss = make(rng.normal(0, 1, 40), rng.normal(1, 1, 30))
    det = metrics.det_curve(ss)
    assert np.all(np.diff(det.apcer) >= 0) and np.all(np.diff(det.bpcer) <= 0)
    assert (det.apcer[0], det.bpcer[0]) == (0.0, 1.0)
    assert (det.apcer[-1], det.bpcer[-1]) == (1.0, 0.0)
    det.to_csv(tmp_path / "det.csv")
    lines = (tmp_path / "det.csv").read_text().splitlines()
    assert lines[0] == "threshold,apcer,bpcer" and lines[1].startswith("-inf,")
    assert len(lines) == det.thresholds.size + 1


def test_report_keys():
    rec = metrics.report(make([0.1, 0.2, 0.6], [0.4, 0.8, 0.9]))
    assert rec["n_bonafide"] == 3 and rec["percent"]["d_eer"] == 33.33
    assert metrics.dumps_report(rec) == metrics.dumps_report(dict(reversed(rec.items())))

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adwin_reference import brute_force_adwin
from odestream.data import synthesize
from odestream.drift import AdwinDetector, annotate_report, detect_drifts
from odestream.errors import ContractError
from odestream.stream import StreamReport, StreamStep


def test_constant_stream_no_flags():
    assert detect_drifts(np.full(3000, 0.7)) == []


def test_rejects_non_finite():
    with pytest.raises(ContractError):
        AdwinDetector().update(float("nan"))


def test_window_cap_and_post_cut_contents():
    det = AdwinDetector(max_window=50)
    for v in np.random.default_rng(0).normal(0, 0.1, 200):
        det.update(v)
        assert len(det) <= 50
    det = AdwinDetector()
    values = list(np.random.default_rng(1).normal(0, 0.1, 300)) + list(np.random.default_rng(2).normal(1, 0.1, 60))
    flagged_at = None
    for i, v in enumerate(values):
        if det.update(v) and flagged_at is None:
            flagged_at = i
    assert flagged_at is not None
    # everything left in the window arrived after the shift
    assert len(det) <= len(values) - 300


def test_monotone_sensitivity_in_delta():
    x = synthesize("mean_shift", 4000, {"at": 2000, "sigma": 0.5, "after": 0.3}, seed=3).values[:, 0]
    firsts = []
    for delta in (1e-4, 1e-3, 0.002, 0.01, 0.1):
        flags = [f for f in detect_drifts(x, delta) if f >= 2000]
        firsts.append(flags[0] if flags else np.inf)
    assert all(b <= a for a, b in zip(firsts, firsts[1:]))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(20, 200), st.floats(0.0, 1.0))
def test_matches_brute_force(seed, n, shift):
    rng = np.random.default_rng(seed)
    seq = np.concatenate([rng.normal(0, 0.1, n), rng.normal(shift, 0.1, n)])
    assert detect_drifts(seq) == brute_force_adwin(seq)


def _report(values):
    steps = [StreamStep(i, np.zeros((1, 1)), np.array([[v]]), 0.0) for i, v in enumerate(values)]
    return StreamReport(steps)


def test_annotate_report_pure_and_in_range():
    values = np.concatenate([np.zeros(300), np.ones(300)]) + np.random.default_rng(0).normal(0, 0.1, 600)
    rep = _report(values)
    a, b = annotate_report(rep), annotate_report(rep)
    flags = [s.index for s in a.steps if s.drift_flag]
    assert flags and flags == [s.index for s in b.steps if s.drift_flag]
    assert all(0 <= f < 600 for f in flags)
    assert not any(s.drift_flag for s in rep.steps)  # input left untouched
    assert not any(s.drift_flag for s in annotate_report(_report(np.full(500, 2.0))).steps)

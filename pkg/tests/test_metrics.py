import numpy as np
import pytest

from temdenoise import csvio
from temdenoise.metrics import SNR_CAP_DB, mean_abs_first_diff, snr, snr_rows


def test_snr_closed_forms():
    c = np.ones(900)
    assert snr(c, c) == SNR_CAP_DB
    assert snr(c, c + 0.1) == pytest.approx(20.0)
    assert snr(c, np.zeros(900)) == pytest.approx(0.0)
    with pytest.raises(ValueError):
        snr(np.zeros(5), np.ones(5))
    assert snr_rows(np.ones((3, 4)), np.ones((3, 4)) * 1.1).tolist() == pytest.approx([20.0] * 3)


def test_first_diff_metric():
    assert mean_abs_first_diff([0.0, 1.0, 3.0, 2.0]) == pytest.approx(4 / 3)
    assert mean_abs_first_diff(np.full(10, 5.0)) == 0.0
    with pytest.raises(ValueError):
        mean_abs_first_diff([1.0])


def test_csv_roundtrip_and_schema(tmp_path):
    rows = [{"a": 1, "b": 0.1 + 0.2, "c": "x"}, {"a": 2, "b": float("nan"), "c": "y"}]
    p = tmp_path / "r.csv"
    csvio.write(p, "demo", 2, ["a", "b", "c"], rows)
    assert p.read_text().splitlines()[:2] == ["# schema: demo v2", "a,b,c"]
    back = csvio.read(p, "demo", 2, ["a", "b", "c"], {"a": int, "c": str})
    assert back[0] == rows[0] and np.isnan(back[1]["b"])
    with pytest.raises(ValueError):
        csvio.read(p, "demo", 1, ["a", "b", "c"])
    with pytest.raises(ValueError):
        csvio.read(p, "demo", 2, ["a", "c", "b"])


def test_examples_and_scale_invariance():
    assert mean_abs_first_diff([0.0, 1.0, 0.0, 1.0]) == 1.0
    rng = np.random.default_rng(0)
    c = rng.standard_normal(900)
    e = c + 0.1 * rng.standard_normal(900)
    for k in (-3.0, 1e-3, 250.0):
        assert abs(snr(k * c, k * e) - snr(c, e)) < 1e-9


def test_clean_decay_first_diff_shrinks():
    from temdenoise import simgen

    s = simgen.clean_signal(simgen.SignalParams(1000.0, 2.0, 4.0))
    vals = [mean_abs_first_diff(s[i:]) for i in range(0, 900, 100)]
    assert vals[-1] > 0 and all(a > b for a, b in zip(vals, vals[1:]))

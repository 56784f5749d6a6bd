import numpy as np
import pytest

from temdenoise import experiments, simgen
from temdenoise.tta import TTAConfig


def test_metric_row_arithmetic():
    clean = np.tile(np.arange(900.0), (2, 1))
    est = clean + 0.5 * np.tile([1.0, -1.0], 450)
    r = experiments.metric_row("agn", "noisy", clean, est)
    assert r.n == 2 and r.std_snr_db == pytest.approx(0.0)
    # clean slope 1 plus alternating +-0.5: 450 diffs of 0 and 449 of 2
    assert r.mean_abs_first_diff == pytest.approx(898 / 899)
    assert r.mafd_gap == pytest.approx(1 / 899)
    with pytest.raises(ValueError):
        experiments.MetricRow("a", "b", 0, 0, 0, 0, 0)


def test_metric_rows_csv(tmp_path):
    rows = [experiments.MetricRow("lfi", "source", 1.5, 0.25, 0.1, 0.01, 10)]
    experiments.write_metric_rows(rows, tmp_path / "m.csv")
    assert experiments.read_metric_rows(tmp_path / "m.csv") == rows


def test_subsets():
    subs = experiments.all_subsets()
    assert len(subs) == 8 and subs[0] == ()
    assert set(experiments.LOSS_SUBSETS) == set(subs[1:])


def test_domain_report_requires_data(tiny_model, tiny_dict):
    with pytest.raises(ValueError):
        experiments.domain_report(tiny_model, tiny_dict, {"agn": None})


def test_loss_ablation_empty_subset_is_exact_zero(tiny_model):
    data = simgen.make_dataset("hfi", 4, 0)
    grid = experiments.ablate_losses(tiny_model, data, TTAConfig(), 0, subsets=[()])
    assert grid.cells[0]["components"] == "none" and grid.cells[0]["gain_db"] == 0.0


def test_ablate_k_errors():
    with pytest.raises(ValueError):
        experiments.ablate_k([], np.ones((3, 900)))
    with pytest.raises(ValueError):
        experiments.ablate_k([5], np.ones((3, 900)))


def test_pooled_ablation_is_sample_weighted(tiny_model):
    a = simgen.make_dataset("agn", 4, 0)
    b = simgen.make_dataset("lfi", 2, 1)
    cfg = TTAConfig(lr=1e-3)
    pooled = experiments.ablate_losses(tiny_model, {"a": a, "b": b}, cfg, 0, subsets=[("den",)]).cells[0]
    ga = experiments.ablate_losses(tiny_model, a, cfg, 0, subsets=[("den",)]).cells[0]
    gb = experiments.ablate_losses(tiny_model, b, cfg, 0, subsets=[("den",)]).cells[0]
    assert pooled["gain_db"] == pytest.approx((4 * ga["gain_db"] + 2 * gb["gain_db"]) / 6)

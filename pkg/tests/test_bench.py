import pytest

from nodulesynth.bench import (BenchConfig, ConvLayerSpec, compare,
                               estimate_flops, format_table, run_bench,
                               tiny_conv_arch, write_report_csv)
from nodulesynth.errors import NoduleSynthError


def test_estimate_flops_hand_computed():
    # One 3^3 conv layer, 2 -> 8 channels, on an 8^3 volume:
    # 2 * 27 * 2 * 8 * 512 = 442368.
    arch = (ConvLayerSpec(2, 8),)
    assert estimate_flops(arch, (8, 8, 8)) == 442368
    # The full tiny architecture on 16^3:
    # 2 * 27 * (2*8 + 8*8 + 8*1) * 4096 = 19464192.
    assert estimate_flops(tiny_conv_arch(), (16, 16, 16)) == 19464192


def test_flops_scale_linearly_with_voxels():
    arch = tiny_conv_arch()
    f64 = estimate_flops(arch, (64, 64, 64))
    f128 = estimate_flops(arch, (128, 128, 128))
    assert f128 / f64 == 8.0


def test_estimate_flops_rejects_unknown_layer():
    with pytest.raises(NoduleSynthError):
        estimate_flops((ConvLayerSpec(2, 8, kind="attention"),), (8, 8, 8))


def _make_cfg(name="fast", nfe=5, dims=(8, 8, 8), fail=False):
    def run(trial_seed):
        if fail:
            raise RuntimeError("boom")
        return nfe

    return BenchConfig(name=name, dims=dims, run=run)


def test_run_bench_report_fields():
    rep = run_bench(_make_cfg(), n_trials=3, warmup=1)
    assert rep.config == "fast"
    assert rep.nfe == 5
    assert rep.trials == 3
    assert rep.est_flops_per_eval == estimate_flops(tiny_conv_arch(), (8, 8, 8))
    assert rep.est_flops_chain == rep.est_flops_per_eval * 5
    assert rep.wall_mean_s >= 0
    assert rep.peak_alloc_bytes >= 0


def test_run_bench_all_failures_raise():
    with pytest.raises(NoduleSynthError, match="failed"):
        run_bench(_make_cfg(fail=True), n_trials=2, warmup=0)


def test_run_bench_validation():
    with pytest.raises(ValueError):
        run_bench(_make_cfg(), n_trials=0)


def test_compare_ratios():
    slow = run_bench(_make_cfg(name="slow", nfe=100, dims=(16, 16, 16)),
                     n_trials=1, warmup=0)
    fast = run_bench(_make_cfg(name="fast", nfe=10, dims=(8, 8, 8)),
                     n_trials=1, warmup=0)
    rows = compare([slow, fast], baseline=0, cost_ratio_threshold=10.0)
    assert rows[0]["cost_ratio"] == 1.0
    assert rows[1]["nfe_ratio"] == 10.0
    assert rows[1]["flops_ratio"] == 8.0
    assert rows[1]["cost_ratio"] == 80.0
    assert rows[1]["dims_differ"]
    assert rows[1]["meets_threshold"]


def test_compare_needs_two_reports():
    rep = run_bench(_make_cfg(), n_trials=1, warmup=0)
    with pytest.raises(ValueError):
        compare([rep])


def test_report_csv_and_table(tmp_path):
    reps = [run_bench(_make_cfg(name=n), n_trials=1, warmup=0)
            for n in ("a", "b")]
    write_report_csv(reps, tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().strip().splitlines()
    assert lines[0].startswith("config,dims,nfe")
    assert len(lines) == 3
    table = format_table(reps)
    assert "a" in table and "b" in table and "nfe" in table

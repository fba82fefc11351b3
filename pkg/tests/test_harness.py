"""Tests for the benchmark harness, configs, exports and CLI."""

import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from delayfilter import cli
from delayfilter.channel import DelayProfile
from delayfilter.exceptions import ConfigError
from delayfilter.harness import (
    CampaignResult,
    ScenarioConfig,
    build_model,
    build_profile,
    channel_diagnostics,
    load_config,
    problem1_config,
    problem2_config,
    rmse_selectors,
    run_campaign,
    run_single,
    write_outputs,
)

REPO = Path(__file__).resolve().parent.parent


def tiny_dict(**over):
    d = {
        "model": {"name": "growth", "params": {}},
        "channel": {"lambda": 0.8, "max_delay": 3},
        "steps": 6,
        "mc_runs": 3,
        "particles": 50,
        "filters": ["gaf", "smc", "standard_pf", "pf_rd"],
        "dropout_policy": "predicted",
        "seed": 123,
    }
    d.update(over)
    return d


def tiny_config(**over):
    return ScenarioConfig.from_dict(tiny_dict(**over))


# ---------------------------------------------------------------------------
# Configuration


def test_bundled_configs_match_presets():
    assert load_config(REPO / "configs" / "problem1.json") == problem1_config()
    assert load_config(REPO / "configs" / "problem2.json") == problem2_config()


def test_config_round_trips_through_dict_and_json():
    cfg = problem2_config(seed=5)
    again = ScenarioConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again == cfg


def _mutated(path, value):
    d = tiny_dict()
    node = d
    for key in path[:-1]:
        node = node[key]
    if value is _DEL:
        del node[path[-1]]
    else:
        node[path[-1]] = value
    return d


_DEL = object()


@pytest.mark.parametrize(
    "path, value",
    [
        (("unknown_key",), 1),
        (("model", "name"), "does_not_exist"),
        (("model", "params"), {"bogus": 1.0}),
        (("channel", "bandwidth"), 3),
        (("channel", "lambda"), "fast"),
        (("channel", "lambda"), True),
        (("channel", "max_delay"), 2.5),
        (("steps",), True),
        (("steps",), 10.5),
        (("steps",), 0),
        (("mc_runs",), 0),
        (("particles",), 0),
        (("filters",), ["gaf", "ukf"]),
        (("filters",), ["smc", "smc"]),
        (("filters",), []),
        (("filters",), "gaf"),
        (("dropout_policy",), "retry"),
        (("seed",), -1),
        (("model",), _DEL),
        (("channel",), _DEL),
        (("steps",), _DEL),
    ],
)
def test_invalid_config_is_rejected(path, value):
    with pytest.raises(ConfigError):
        ScenarioConfig.from_dict(_mutated(path, value))


def test_config_rejects_non_mapping():
    with pytest.raises(ConfigError):
        ScenarioConfig.from_dict([1, 2, 3])


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_model_params_feed_the_model():
    cfg = tiny_config(model={"name": "growth", "params": {"meas_var": 2.5}})
    model = build_model(cfg)
    assert model.meas_cov[0, 0] == 2.5
    profile = build_profile(cfg)
    assert isinstance(profile, DelayProfile)
    assert profile.rate == 0.8 and profile.max_delay == 3


def test_rmse_selectors():
    assert rmse_selectors("growth") == {"state": (0,)}
    ct = rmse_selectors("coordinated_turn")
    assert ct == {"position": (0, 2), "velocity": (1, 3), "turn_rate": (4,)}
    with pytest.raises(ConfigError):
        rmse_selectors("pendulum")


# ---------------------------------------------------------------------------
# Campaigns


@pytest.fixture(scope="module")
def tiny_campaign():
    return run_campaign(tiny_config(), check_invariants=True)


def test_campaign_result_shape(tiny_campaign):
    res = tiny_campaign
    assert set(res.rmse) == {"gaf", "smc", "standard_pf", "pf_rd"}
    for sel in res.rmse.values():
        assert set(sel) == {"state"}
        assert sel["state"].shape == (6,)
    assert res.delay_rmse["map"].shape == (6,)
    assert res.invariant_violations == 0
    assert not res.failed
    assert res.channel["delivered_rate"] + res.channel["dropout_rate"] == pytest.approx(1.0)
    hist = res.channel["true_delay_hist"]
    assert len(hist) == 4 and sum(hist) == int(res.delivered_per_step.sum())


def test_campaign_exports_are_byte_deterministic(tiny_campaign, tmp_path):
    res2 = run_campaign(tiny_config(), check_invariants=True)
    d1, d2 = tmp_path / "a", tmp_path / "b"
    write_outputs(tiny_campaign, d1)
    write_outputs(res2, d2)
    names = sorted(p.name for p in d1.iterdir())
    assert names == sorted(p.name for p in d2.iterdir())
    assert "rmse_smc.csv" in names and "channel.csv" in names
    for name in names:
        if name == "summary.json":
            s1 = json.loads((d1 / name).read_text())
            s2 = json.loads((d2 / name).read_text())
            s1.pop("timing"), s2.pop("timing")
            assert s1 == s2
        else:
            assert (d1 / name).read_bytes() == (d2 / name).read_bytes()


def test_campaign_result_json_round_trip(tiny_campaign):
    blob = json.loads(json.dumps(tiny_campaign.to_dict()))
    back = CampaignResult.from_dict(blob)
    assert back.config == tiny_campaign.config
    assert back.backend == tiny_campaign.backend
    for f, sel in tiny_campaign.rmse.items():
        for s, v in sel.items():
            np.testing.assert_allclose(back.rmse[f][s], v)
    np.testing.assert_array_equal(back.delivered_per_step, tiny_campaign.delivered_per_step)
    assert back.invariant_violations == tiny_campaign.invariant_violations


def test_run_single_matches_campaign(tiny_campaign):
    cfg = tiny_config()
    acc = {f: np.zeros(cfg.steps) for f in ("smc", "pf_rd")}
    for r in range(cfg.mc_runs):
        truth, events, results = run_single(cfg, run_index=r)
        assert len(events) == cfg.steps
        for f in acc:
            err = results[f].means - truth
            acc[f] += np.sum(err[:, [0]] ** 2, axis=1)
    for f in acc:
        rebuilt = np.sqrt(acc[f] / cfg.mc_runs)
        np.testing.assert_allclose(rebuilt, tiny_campaign.rmse[f]["state"], rtol=1e-12)


def test_run_single_rejects_bad_index():
    with pytest.raises(IndexError):
        run_single(tiny_config(), run_index=99)


def test_filter_subset_is_self_consistent():
    res = run_campaign(tiny_config(filters=["smc"]))
    assert set(res.rmse) == {"smc"}
    assert res.timing["smc"]["relative_to_standard_pf"] is None
    full = run_campaign(tiny_config())
    np.testing.assert_array_equal(res.rmse["smc"]["state"], full.rmse["smc"]["state"])


# ---------------------------------------------------------------------------
# Channel diagnostics


def test_channel_diagnostics_reports():
    profile = DelayProfile(rate=0.8, max_delay=3)
    diag = channel_diagnostics(profile, 40_000, seed=3)
    assert diag.observed.sum() == diag.strided_n
    assert diag.expected.sum() == pytest.approx(diag.strided_n)
    assert diag.chi2_dof == 4
    assert 0.0 <= diag.chi2_pvalue <= 1.0
    assert diag.full_hist.shape == (4,)
    lags = [w["lag"] for w in diag.whiteness]
    assert lags == [0, 1, 2, 3]
    blob = diag.to_dict()
    json.dumps(blob)
    assert blob["samples"] == 40_000


def test_channel_diagnostics_rejects_small_samples():
    with pytest.raises(ValueError):
        channel_diagnostics(DelayProfile(rate=0.8, max_delay=3), 100)


# ---------------------------------------------------------------------------
# Command line


def write_cfg(tmp_path, data, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data), encoding="utf-8")
    return p


def test_cli_benchmark_writes_outputs(tmp_path, capsys):
    cfg = write_cfg(tmp_path, tiny_dict())
    out = tmp_path / "out"
    code = cli.main(["benchmark", "--config", str(cfg), "--out", str(out)])
    assert code == 0
    assert (out / "summary.json").exists()
    assert (out / "rmse_gaf.csv").exists()
    text = capsys.readouterr().out
    assert "smc: rmse" in text


def test_cli_rejects_bad_config(tmp_path, capsys):
    cfg = write_cfg(tmp_path, tiny_dict(unknown_key=1))
    code = cli.main(["benchmark", "--config", str(cfg), "--out", str(tmp_path / "o"), "--quiet"])
    assert code == 2
    assert "error" in capsys.readouterr().err
    code = cli.main(["benchmark", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path / "o")])
    assert code == 2


def test_cli_reports_numerical_failure(tmp_path, capsys):
    data = tiny_dict(
        model={"name": "growth", "params": {"process_var": 1e300}},
        filters=["gaf"],
        steps=5,
        mc_runs=2,
    )
    cfg = write_cfg(tmp_path, data)
    with np.errstate(all="ignore"):
        code = cli.main(["benchmark", "--config", str(cfg), "--out", str(tmp_path / "o"), "--quiet"])
    assert code == 3


def test_cli_channel_stats(tmp_path):
    cfg = write_cfg(tmp_path, tiny_dict())
    out = tmp_path / "stats.json"
    code = cli.main(
        ["channel-stats", "--config", str(cfg), "--samples", "5000", "--out", str(out)]
    )
    assert code == 0
    blob = json.loads(out.read_text())
    assert blob["samples"] == 5000
    assert len(blob["observed"]) == 5


def test_cli_simulate_with_traces(tmp_path):
    cfg = write_cfg(tmp_path, tiny_dict())
    out = tmp_path / "sim"
    code = cli.main(
        ["simulate", "--config", str(cfg), "--out", str(out), "--runs", "2", "--trace"]
    )
    assert code == 0
    for r in range(2):
        assert (out / f"trace_channel_run{r}.csv").exists()
        assert (out / f"truth_run{r}.csv").exists()
        assert (out / f"estimates_smc_run{r}.csv").exists()
        assert (out / f"smc_diag_run{r}.csv").exists()


def test_cli_backend_bench(tmp_path, capsys):
    cfg = write_cfg(tmp_path, tiny_dict(mc_runs=1))
    code = cli.main(["backend-bench", "--config", str(cfg), "--runs", "1"])
    assert code == 0
    text = capsys.readouterr().out
    assert "backend" in text


def test_cli_module_entry_point(tmp_path):
    cfg = write_cfg(tmp_path, tiny_dict())
    out = tmp_path / "stats.json"
    proc = subprocess.run(
        [
            sys.executable,
            "-m",
            "delayfilter.cli",
            "channel-stats",
            "--config",
            str(cfg),
            "--samples",
            "5000",
            "--out",
            str(out),
        ],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert out.exists()

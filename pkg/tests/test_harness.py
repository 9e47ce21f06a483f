import csv
import io
import math

import numpy as np
import pytest

from beamest import cli, harness
from beamest.errors import ConfigError, InvalidParams
from beamest.linalg import beam_grid

SMALL = dict(P_v=8, P_h=8, K=32, trials=6, snr_grid_db=(0.0, 20.0), bomp_block_v=2, bomp_block_h=2,
             n_clusters=4, rays_per_cluster=4)


def small_cfg(**kw):
    return harness.ExperimentConfig(**{**SMALL, **kw})


def strip_timing(path):
    with open(path, newline="") as fh:
        return [row[:-1] for row in csv.reader(fh)]


# ------------------------------------------------------------- config


def test_defaults_describe_the_benchmark():
    cfg = harness.ExperimentConfig()
    assert (cfg.P_v, cfg.P_h, cfg.K, cfg.rho, cfg.mu) == (32, 32, 256, 0.45, 0.9)
    assert cfg.snr_grid_db == (-5.0, 0.0, 5.0, 10.0, 15.0, 20.0)
    assert cfg.trials == 500
    harness.validate_config(cfg)


def test_parse_flat_file(tmp_path):
    p = tmp_path / "a.cfg"
    p.write_text("# comment\n\nrho = 0.0   # stationary\nsnr_grid_db = -5, 20\nestimators = asd, samp\nfreeze_phi = yes\n")
    cfg = harness.parse_config(p)
    assert cfg.rho == 0.0 and cfg.snr_grid_db == (-5.0, 20.0)
    assert cfg.estimators == ("asd", "samp") and cfg.freeze_phi is True
    assert cfg.K == 256


def test_format_config_roundtrip():
    cfg = small_cfg(oracle_energy_fraction=0.95, sparsity=7, snr_grid_db=(-5.0, math.inf))
    assert harness.parse_config_text(harness.format_config(cfg)) == cfg


@pytest.mark.parametrize(
    "text,key,line",
    [
        ("K = 64\nbogus = 1\n", "bogus", 2),
        ("rho = 1.5\n", "rho", 1),
        ("\n\nmu = 0\n", "mu", 3),
        ("trials = many\n", "trials", 1),
        ("estimators = omp, lasso\n", "estimators", 1),
        ("K = 2000\n", "K", 1),
        ("seed = 1\nseed = 2\n", "seed", 2),
        ("just words\n", "just words", 1),
        ("neighbor_rule = sideways\n", "neighbor_rule", 1),
        ("P_v = 30\n", "bomp_block_v", None),
    ],
)
def test_config_errors_name_key_and_line(text, key, line):
    with pytest.raises(ConfigError) as info:
        harness.parse_config_text(text)
    assert info.value.key == key
    assert info.value.line == line


def test_missing_config_file_is_config_error(tmp_path):
    with pytest.raises(ConfigError):
        harness.parse_config(tmp_path / "nope.cfg")


# ------------------------------------------------------------- sweep


def test_sweep_rows_and_csv_roundtrip(tmp_path):
    cfg = small_cfg(estimators=harness.ESTIMATORS)
    result = harness.run_sweep(cfg)
    assert len(result.rows) == 2 * len(harness.ESTIMATORS)
    assert not result.failures
    out = tmp_path / "s.csv"
    harness.emit_csv(result, out)
    with open(out) as fh:
        assert fh.readline().strip() == ",".join(harness.CSV_HEADER)
    back = harness.read_csv(out)
    assert back.rows == sorted(result.rows, key=lambda r: (r.snr_db, r.estimator))
    for r in result.rows:
        assert r.trials == 6 and r.nmse_stderr == pytest.approx(r.nmse_std / math.sqrt(6))
        assert r.nmse_mean > 0 and r.mean_support_size >= 1


def test_csv_float_precision(tmp_path):
    row = harness.SweepRow(1.0, "x", 1 / 3, 0.1, 0.2, 5, 2.5, 3.0, 0.01)
    harness.emit_csv(harness.SweepResult([row]), tmp_path / "p.csv")
    line = (tmp_path / "p.csv").read_text().splitlines()[1]
    third = line.split(",")[2]
    assert len(third.split("e")[0].replace(".", "").lstrip("0")) >= 9
    assert float(third) == 1 / 3


def test_sweep_reproducible_and_worker_independent(tmp_path):
    cfg = small_cfg()
    a, b, c = tmp_path / "a.csv", tmp_path / "b.csv", tmp_path / "c.csv"
    harness.emit_csv(harness.run_sweep(cfg), a)
    harness.emit_csv(harness.run_sweep(cfg), b)
    harness.emit_csv(harness.run_sweep(cfg.replace(workers=2)), c)
    assert strip_timing(a) == strip_timing(b) == strip_timing(c)


def test_aggregation_ignores_completion_order():
    cfg = small_cfg(trials=4)
    per_trial = [harness.run_trial(cfg, t) for t in range(4)]
    ref = harness.aggregate(cfg, per_trial)
    # trial results are keyed by index; aggregation walks them in index order
    again = harness.aggregate(cfg, [per_trial[i] for i in range(4)])
    assert [r.nmse_mean for r in ref.rows] == [r.nmse_mean for r in again.rows]


def test_trial_streams_are_independent_of_snr_grid():
    ch_a, phi_a, _ = harness.trial_streams(7, 3, 2)
    ch_b, phi_b, _ = harness.trial_streams(7, 3, 6)
    assert ch_a.integers(1 << 30) == ch_b.integers(1 << 30)
    assert phi_a.integers(1 << 30) == phi_b.integers(1 << 30)


def test_frozen_phi_is_shared():
    cfg = small_cfg(freeze_phi=True)
    np.testing.assert_array_equal(harness.draw_phi(cfg, 0), harness.draw_phi(cfg, 5))
    cfg = small_cfg()
    assert np.any(harness.draw_phi(cfg, 0) != harness.draw_phi(cfg, 5))


def test_estimator_failures_are_counted(monkeypatch, caplog):
    real = harness.run_estimator

    def flaky(name, cfg, y, Phi, snr_db, sparsity, gram=None):
        if name == "samp" and snr_db == 20.0:
            raise InvalidParams("boom")
        return real(name, cfg, y, Phi, snr_db, sparsity, gram)

    monkeypatch.setattr(harness, "run_estimator", flaky)
    result = harness.run_sweep(small_cfg(trials=3))
    assert result.failures == {(20.0, "samp"): 3}
    assert ("samp" not in {r.estimator for r in result.rows if r.snr_db == 20.0})
    assert "boom" in caplog.text


def test_oracle_no_worse_than_estimators_on_average():
    result = harness.run_sweep(small_cfg(trials=10, snr_grid_db=(20.0,)))
    oracle = result.row(20.0, "oracle-ls").nmse_mean
    assert all(oracle <= r.nmse_mean for r in result.rows)


# ------------------------------------------------------------- dumps


def test_channel_dump_roundtrip(tmp_path):
    cfg = small_cfg()
    drop = harness.channel_drop(cfg, 42)
    path = tmp_path / "c.txt"
    harness.write_channel_dump(path, drop.H_B, cfg.rho, 42)
    header = path.read_text().splitlines()[0]
    assert header == "# P_v=8 P_h=8 rho=0.45 seed=42"
    H_B, meta = harness.read_channel_dump(path)
    np.testing.assert_array_equal(H_B, drop.H_B)
    assert meta == {"P_v": 8, "P_h": 8, "rho": 0.45, "seed": 42}
    row = path.read_text().splitlines()[1].split(",")
    assert len(row) == 8 and all(tok.endswith("j") for tok in row)


def test_channel_drop_depends_only_on_seed():
    cfg = small_cfg()
    np.testing.assert_array_equal(harness.channel_drop(cfg, 1).H_B, harness.channel_drop(cfg, 1).H_B)
    assert np.any(harness.channel_drop(cfg, 1).H_B != harness.channel_drop(cfg, 2).H_B)


def test_leakage_table():
    pairs = harness.run_leakage(8, 15, 0.0, 32)
    assert len(pairs) == 32
    assert max(v for _, v in pairs) == pytest.approx(1.0)


# ------------------------------------------------------------- CLI


def write_cfg(tmp_path, **kw):
    text = harness.format_config(small_cfg(**kw))
    p = tmp_path / "run.cfg"
    p.write_text(text)
    return p


def test_cli_sweep(tmp_path):
    out = tmp_path / "o.csv"
    assert cli.main(["sweep", "--config", str(write_cfg(tmp_path, trials=2)), "--out", str(out)]) == 0
    assert len(harness.read_csv(out).rows) == 2 * 5


def test_cli_channel_and_leakage(tmp_path):
    cfg = write_cfg(tmp_path)
    assert cli.main(["channel", "--config", str(cfg), "--seed", "3", "--out", str(tmp_path / "c.txt")]) == 0
    H_B, meta = harness.read_channel_dump(tmp_path / "c.txt")
    assert H_B.shape == (8, 8) and meta["seed"] == 3
    out = tmp_path / "l.csv"
    assert cli.main(["leakage", "--is", "8", "--ie", "15", "--theta0", "0", "--grid", "32", "--out", str(out)]) == 0
    rows = list(csv.reader(io.StringIO(out.read_text())))
    assert rows[0] == ["theta", "envelope"] and len(rows) == 33


def test_cli_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("rho = 1.5\n")
    assert cli.main(["sweep", "--config", str(bad), "--out", str(tmp_path / "x.csv")]) == 1
    assert "rho" in capsys.readouterr().err
    assert cli.main(["sweep", "--config", str(tmp_path / "missing.cfg"), "--out", "x"]) == 1
    assert cli.main(["leakage", "--is", "9", "--ie", "3", "--theta0", "0", "--grid", "8", "--out", "x"]) == 1
    assert cli.main(["nonsense"]) == 1
    good = write_cfg(tmp_path)
    assert cli.main(["sweep", "--config", str(good), "--out", str(tmp_path / "no" / "dir.csv")]) == 2


def test_empty_config_is_default():
    cfg = harness.parse_config_text("")
    assert cfg == harness.ExperimentConfig()
    assert cfg.carrier_freq == 11e9 and cfg.geometry.P == 1024


def test_two_by_two_sweep_has_four_rows(tmp_path):
    cfg = small_cfg(trials=2, estimators=("samp", "asd"))
    harness.emit_csv(harness.run_sweep(cfg), tmp_path / "x.csv")
    assert len((tmp_path / "x.csv").read_text().splitlines()) == 5


def test_noiseless_on_grid_sweep_is_exact(monkeypatch):
    from beamest.channel import single_path

    def on_grid(geometry, params, rng):
        return single_path(geometry, beam_grid(geometry.P_h)[2], beam_grid(geometry.P_v)[5])

    monkeypatch.setattr(harness, "sample_clusters", on_grid)
    result = harness.run_sweep(small_cfg(trials=1, snr_grid_db=(math.inf,), estimators=("bds-samp",)))
    assert result.row(math.inf, "bds-samp").nmse_mean < 1e-16


def test_leakage_table_cases():
    full = harness.run_leakage(1, 32, beam_grid(32)[9], 32)
    vals = np.array([v for _, v in full])
    assert vals[9] == pytest.approx(1.0) and np.delete(vals, 9).max() < 1e-10
    fig4 = np.array([v for _, v in harness.run_leakage(8, 15, 0.0, 32)])
    j0 = int(np.argmin(np.abs(beam_grid(32))))
    assert fig4[j0] == pytest.approx(1.0)
    np.testing.assert_allclose(fig4[j0 - 5 : j0], fig4[j0 + 1 : j0 + 6][::-1], atol=1e-12)
    mid = np.array([v for _, v in harness.run_leakage(8, 15, 0.5 / 32, 32)])
    top2 = np.sort(mid)[-2:]
    assert top2[0] == pytest.approx(top2[1], rel=1e-12)


def test_shipped_configs_parse():
    from pathlib import Path

    root = Path(__file__).resolve().parents[1] / "configs"
    assert harness.parse_config(root / "sns_32x32.cfg") == harness.ExperimentConfig()
    assert harness.parse_config(root / "ss_32x32.cfg") == harness.ExperimentConfig(rho=0.0)
    assert harness.parse_config(root / "small.cfg").K == 32

import math
import textwrap
from pathlib import Path

import numpy as np
import pytest

from aca_dp import accountant
from aca_dp.cli import main
from aca_dp.collective import apply_signal_batch
from aca_dp.config import ConfigError, load_config, parse_floats, parse_privacy
from aca_dp.data import write_idx
from aca_dp.experiments import (
    BOUND_COLUMNS,
    MIA_COLUMNS,
    SWEEP_COLUMNS,
    fit,
    load_data,
    make_strategy,
    model_spec,
    read_csv,
    read_pnm,
    replay_row,
    run_bound,
    run_mia,
    run_sweep,
)
from aca_dp.models import predict_batch


def _write(tmp_path, text, name="cfg.ini"):
    p = tmp_path / name
    p.write_text(textwrap.dedent(text))
    return p


SWEEP_INI = """
    [data]
    source = blobs
    n = 200
    d_in = 5
    [train]
    learning_rate = 0.5
    steps = 30
    batch = poisson
    sample_rate = 0.2
    [privacy]
    configs = 0:inf, 1.0:1.0
    [collective]
    index = 2
    offset = 10
    alphas = 0:0.1:0.05
    target_success = 0.9
    [run]
    seed = 4
    replicates = 2
"""


@pytest.fixture
def sweep_cfg(tmp_path):
    return load_config(_write(tmp_path, SWEEP_INI))


@pytest.fixture
def idx_cfg(tmp_path):
    rng = np.random.default_rng(0)
    imgs = rng.integers(0, 256, (30, 28, 28), dtype=np.uint8)
    write_idx(imgs, rng.integers(0, 3, 30), tmp_path / "img.idx", tmp_path / "lab.idx")
    return _write(tmp_path, """
        [data]
        source = idx
        images = img.idx
        labels = lab.idx
        normalization = divide_by_255
        [collective]
        transform = patch
        value = 50
    """, "img.ini")


# ---------------------------------------------------------------- config


def test_parse_floats():
    assert parse_floats("0:0.1:0.02") == (0.0, 0.02, 0.04, 0.06, 0.08, 0.1)
    assert parse_floats("0.5, 1,2") == (0.5, 1.0, 2.0)
    assert len(parse_floats("0:0.1:0.005")) == 21
    with pytest.raises(ConfigError):
        parse_floats("0:1:0")


def test_parse_privacy():
    assert parse_privacy("0:inf, 1:1.5") == ((0.0, math.inf), (1.0, 1.5))
    with pytest.raises(ConfigError):
        parse_privacy("1.0")


def test_load_config_values(tmp_path, sweep_cfg):
    assert sweep_cfg.data.n == 200 and sweep_cfg.seed == 4 and sweep_cfg.replicates == 2
    assert sweep_cfg.privacy == ((0.0, math.inf), (1.0, 1.0))
    assert sweep_cfg.collective.alphas == (0.0, 0.05, 0.1)
    assert sweep_cfg.out == tmp_path / "results"
    assert sweep_cfg.collective.row0 == 0 and sweep_cfg.collective.col0 == 0
    epochs = load_config(_write(tmp_path, "[train]\nepochs = 3\n", "e.ini"))
    assert epochs.train.epochs == 3 and epochs.train.steps is None


@pytest.mark.parametrize("body", [
    "[privacy]\nconfigs = 1:inf\n",
    "[privacy]\nconfigs = \n[collective]\nalphas = 0.2, 0.1\n",
    "[collective]\nalphas = 0.1, 0.2\ntarget_success = 0\n",
    "[data]\nsource = csv\npath = missing.csv\n",
    "[train]\nsteps = 5\nepochs = 2\n",
    "[data]\nsource = parquet\n",
    "no section header\n",
])
def test_load_config_errors(tmp_path, body):
    with pytest.raises(ConfigError):
        load_config(_write(tmp_path, body, "bad.ini"))


def test_missing_config(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.ini")


# ---------------------------------------------------------------- sweep


def test_degenerate_sweep_success_is_base_rate(tmp_path):
    cfg = load_config(_write(tmp_path, """
        [data]
        n = 150
        d_in = 4
        [train]
        steps = 20
        [collective]
        index = 1
        alphas = 0
    """))
    res = run_sweep(cfg, tmp_path / "out")
    assert len(res.rows) == 1 and res.all_ok
    row = res.rows[0]
    data = load_data(cfg)
    spec = model_spec(cfg, data.train)
    theta, _, _ = fit(cfg, spec, data.normalized(data.train), 0.0, math.inf, row["seed"], row["init_seed"])
    planted = apply_signal_batch(data.test.features, make_strategy(cfg, data.train, 0.0).transform)
    assert row["success"] == np.mean(predict_batch(theta, spec, planted) == 1)


def test_sweep_outputs(tmp_path, sweep_cfg):
    res = run_sweep(sweep_cfg, tmp_path / "a")
    assert res.all_ok and len(res.rows) == 2 * 2 * 3
    rows = read_csv(tmp_path / "a" / "results.csv")
    assert list(rows[0].keys()) == SWEEP_COLUMNS
    for r in rows:
        if float(r["sigma"]) == 0:
            assert r["epsilon"] == "inf" and r["clip"] == "inf"
        else:
            eps = accountant.epsilon(float(r["sigma"]), float(r["q"]), int(r["steps"]), sweep_cfg.delta)
            assert abs(eps - float(r["epsilon"])) <= 1e-9 * eps
    crit = read_csv(tmp_path / "a" / "critical_mass.csv")
    assert len(crit) == 4
    for c in crit:
        group = [r for r in rows if (r["sigma"], r["clip"], r["replicate"]) == (c["sigma"], c["clip"], c["replicate"])]
        reached = [float(r["alpha"]) for r in group if float(r["success"]) >= 0.9]
        assert c["alpha_star"] == (repr(min(reached)) if reached else "")


def test_sweep_byte_identical_across_runs_and_workers(tmp_path, sweep_cfg):
    run_sweep(sweep_cfg, tmp_path / "a")
    run_sweep(sweep_cfg, tmp_path / "b")
    run_sweep(sweep_cfg, tmp_path / "c", workers=2)
    for name in ("results.csv", "critical_mass.csv"):
        a = (tmp_path / "a" / name).read_bytes()
        assert a == (tmp_path / "b" / name).read_bytes() == (tmp_path / "c" / name).read_bytes()


def test_replay_row_is_exact(tmp_path, sweep_cfg):
    run_sweep(sweep_cfg, tmp_path / "a")
    for row in read_csv(tmp_path / "a" / "results.csv")[::5]:
        again = replay_row(sweep_cfg, row)
        assert repr(again["success"]) == row["success"]
        assert repr(again["clean_accuracy"]) == row["clean_accuracy"]


def test_failed_cells_are_recorded(tmp_path):
    cfg = load_config(_write(tmp_path, "[data]\nn = 100\nd_in = 3\n[collective]\nindex = 7\nalphas = 0, 0.1\n[train]\nsteps = 5\n"))
    res = run_sweep(cfg, tmp_path / "o")
    assert not res.all_ok
    assert all(r["status"].startswith("error: ") for r in res.rows)
    assert len(read_csv(tmp_path / "o" / "results.csv")) == 2


# ---------------------------------------------------------------- bound

BOUND_INI = """
    [bound]
    dim = 5
    lr = 0.1
    steps = 40
    alphas = 0.5
    sigmas = 0, 1
    clips = 5
    trials = 200
    {extra}
"""


def test_bound_rows(tmp_path):
    cfg = load_config(_write(tmp_path, BOUND_INI.format(extra="")))
    rows = run_bound(cfg, tmp_path / "b")
    assert [r["status"] for r in rows] == ["pass", "pass"]
    file_rows = read_csv(tmp_path / "b" / "bound.csv")
    assert list(file_rows[0].keys()) == BOUND_COLUMNS
    for r in rows:
        assert r["violation_rate"] <= r["allowed_rate"]
        assert r["xi_mode"] == "realized"


def test_bound_sigma0_reproduces_noiseless_form(tmp_path):
    cfg = load_config(_write(tmp_path, BOUND_INI.format(extra="xi_min = 4.0")))
    r0 = run_bound(cfg, tmp_path / "b")[0]
    assert r0["sigma"] == 0 and r0["xi_mode"] == "analytic"
    assert r0["bound"] == pytest.approx(-(1 - 0.1 * r0["B"]) ** 40 * 1.0, rel=1e-12, abs=0)
    assert r0["f2"] == pytest.approx(math.sqrt(5) + math.sqrt(2 * math.log(20)), rel=1e-12)


def test_bound_flags_non_contraction(tmp_path):
    cfg = load_config(_write(tmp_path, BOUND_INI.format(extra="xi_min = 30.0")))
    rows = run_bound(cfg, tmp_path / "b")
    assert all(r["status"] == "flagged" and r["contraction_ok"] is False for r in rows)
    assert "flagged" in (tmp_path / "b" / "bound.csv").read_text()


# ---------------------------------------------------------------- mia

MIA_INI = """
    [data]
    n = 200
    d_in = 4
    separation = 1.0
    [model]
    architecture = mlp
    hidden_units = 8
    init_scale = 0.3
    [train]
    learning_rate = 0.1
    epochs = 20
    batch = fixed_shuffle
    batch_size = 8
    [privacy]
    configs = 0:inf, 1:1
    [collective]
    index = 0
    offset = 5
    [mia]
    pool_size = 40
    shadows = 4
    alphas = 0, 0.1
"""


def _mann_whitney(s, lab):
    pos, neg = s[lab], s[~lab]
    d = pos[:, None] - neg[None, :]
    return (np.sum(d > 0) + 0.5 * np.sum(d == 0)) / (pos.size * neg.size)


def test_mia_grid(tmp_path):
    cfg = load_config(_write(tmp_path, MIA_INI))
    rows = run_mia(cfg, tmp_path / "m")
    assert len(rows) == 4 and all(r["status"] == "ok" for r in rows)
    summary = read_csv(tmp_path / "m" / "mia_summary.csv")
    assert list(summary[0].keys()) == MIA_COLUMNS == ["alpha", "epsilon", "clip", "auc", "tpr_at_0.001_fpr", "seed", "status"]
    assert [r["epsilon"] for r in summary[:2]] == ["inf", "inf"]
    assert all(math.isfinite(float(r["epsilon"])) for r in summary[2:])
    assert len(read_csv(tmp_path / "m" / "mia_details.csv")) == 4
    for k, r in enumerate(summary):
        cell = read_csv(tmp_path / "m" / "mia_scores" / f"cell_{k:04d}.csv")
        s = np.array([float(c["score"]) for c in cell])
        lab = np.array([c["is_member"] == "1" for c in cell])
        assert len(cell) == 40
        assert abs(_mann_whitney(s, lab) - float(r["auc"])) <= 1e-9


def test_mia_deterministic(tmp_path):
    cfg = load_config(_write(tmp_path, MIA_INI))
    run_mia(cfg, tmp_path / "a")
    run_mia(cfg, tmp_path / "b", workers=2)
    assert (tmp_path / "a" / "mia_summary.csv").read_bytes() == (tmp_path / "b" / "mia_summary.csv").read_bytes()


# ---------------------------------------------------------------- signals, CLI


def test_export_signals_patch(tmp_path, idx_cfg):
    out = tmp_path / "sig"
    assert main(["export-signals", "--config", str(idx_cfg), "--count", "3", "--out", str(out)]) == 0
    files = sorted(p.name for p in out.iterdir())
    assert files == [f"{i:04d}_{t}.pgm" for i in range(3) for t in ("original", "signal")]
    sig = read_pnm(out / "0000_signal.pgm")
    orig = read_pnm(out / "0000_original.pgm")
    assert (out / "0000_signal.pgm").read_bytes().startswith(b"P5\n28 28\n255\n")
    assert sig.shape == (28, 28, 1)
    assert (sig[:2, :2] == 50).all()
    np.testing.assert_array_equal(sig[2:], orig[2:])
    np.testing.assert_array_equal(sig[:, 2:], orig[:, 2:])


def test_export_signals_count_zero(tmp_path, idx_cfg):
    out = tmp_path / "none"
    assert main(["export-signals", "--config", str(idx_cfg), "--count", "0", "--out", str(out)]) == 0
    assert not out.exists() or not any(out.iterdir())


def test_export_signals_tabular_errors(tmp_path, sweep_cfg, capsys):
    cfg = tmp_path / "cfg.ini"
    assert main(["export-signals", "--config", str(cfg), "--out", str(tmp_path / "x")]) == 2
    assert "image" in capsys.readouterr().err


def test_cli_accountant(tmp_path, capsys):
    rdp = tmp_path / "rdp.csv"
    assert main(["accountant", "--sigma", "1.0", "--q", "0.01", "--steps", "1000", "--rdp-csv", str(rdp)]) == 0
    out = capsys.readouterr().out
    eps = float(out.split("epsilon=")[1].split()[0])
    assert eps == accountant.epsilon(1.0, 0.01, 1000, 1e-5)
    assert rdp.read_text().startswith("order,rdp")
    assert main(["accountant", "--sigma", "0", "--q", "1", "--steps", "1"]) == 0
    assert "epsilon=inf" in capsys.readouterr().out
    assert main(["accountant", "--sigma", "1", "--q", "1.5", "--steps", "1"]) == 2


def test_cli_sweep_and_plot(tmp_path, capsys):
    cfg = _write(tmp_path, SWEEP_INI)
    out = tmp_path / "res"
    assert main(["sweep", "--config", str(cfg), "--out", str(out), "--workers", "2", "--seed", "9"]) == 0
    rows = read_csv(out / "results.csv")
    assert len(rows) == 12
    assert main(["plot", "--input", str(out / "results.csv"), "--out", str(tmp_path / "fig")]) == 0
    svg = (tmp_path / "fig" / "sweep.svg").read_text()
    assert "<svg" in svg


def test_cli_exit_codes(tmp_path, capsys):
    bad_cells = _write(tmp_path, "[data]\nn = 100\nd_in = 3\n[collective]\nindex = 7\n[train]\nsteps = 5\n", "bad.ini")
    assert main(["sweep", "--config", str(bad_cells), "--out", str(tmp_path / "o")]) == 1
    assert main(["sweep", "--config", str(tmp_path / "missing.ini")]) == 2
    assert main(["bound", "--config", str(_write(tmp_path, BOUND_INI.format(extra=""), "b.ini")),
                 "--out", str(tmp_path / "b")]) == 0
    with pytest.raises(SystemExit) as exc:
        main(["sweep", "--config", str(bad_cells), "--seed", "-1"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit):
        main([])


def test_module_entry_point(tmp_path):
    import subprocess
    import sys

    proc = subprocess.run([sys.executable, "-m", "aca_dp", "accountant", "--sigma", "2", "--q", "0.1", "--steps", "10"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0 and proc.stdout.startswith("epsilon=")

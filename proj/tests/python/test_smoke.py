import pytest

import profusion as pf

TINY = """
[experiment]
kind = dim_sweep
trials = 2
seed = 7

[task]
type = lattice
d = 2
m = 4
p = 4
n_train = 96
n_val = 48
n_test = 48

[model]
r = 2

[dim_sweep]
grid = 2

[train]
epochs = 2
batch_size = 32
patience = 2
"""


def test_version():
    assert pf.__version__ == "0.1.0"


def test_parse_and_hash():
    cfg = pf.parse_config(TINY)
    assert cfg.kind == "dim_sweep"
    assert cfg.trials == 2
    assert cfg.config_hash == pf.parse_config(TINY).config_hash
    cfg.seed = 8
    assert cfg.config_hash != pf.parse_config(TINY).config_hash
    assert "seed=8" in cfg.canonical_text()


def test_run_command_tiny():
    res = pf.run_command(pf.parse_config(TINY), jobs=1)
    assert res.exit_code == 0
    lines = res.csv.splitlines()
    assert lines[0] == "model,hidden,trials,mean_accuracy,sd_accuracy"
    assert len(lines) == 4  # three variants, one hidden dim
    assert "late" in res.summary


def test_run_and_write(tmp_path):
    out = tmp_path / "run"
    code = pf.run_and_write(pf.parse_config(TINY), jobs=2, out=str(out))
    assert code == 0
    for name in ("results.csv", "summary.txt", "manifest.txt"):
        assert (out / name).is_file(), name


def test_config_errors():
    with pytest.raises(pf.ConfigError):
        pf.parse_config("[experiment]\nkind = nope\n")
    with pytest.raises(pf.ConfigError):
        pf.load_config("/nonexistent/profusion.cfg")


def test_robustness_metrics():
    f = pf.RobustnessCurve([0.0, 1.0, 2.0], [1.0, 1.0, 1.0], metric="mse")
    b = pf.RobustnessCurve([0.0, 1.0, 2.0], [2.0, 2.0, 2.0], metric="mse")
    assert pf.robust_auc(f, f) == 0.0
    assert pf.robust_auc(f, b) == pytest.approx(1.0)
    assert pf.robust_auc(b, f) == pytest.approx(-1.0)
    assert pf.minmax_scale([0.2, 0.6]) == [0.0, 1.0]


def test_trial_seeds():
    seeds = pf.derive_trial_seeds(123, 4)
    assert len(seeds) == 4
    assert len(set(seeds)) == 4
    assert seeds == pf.derive_trial_seeds(123, 4)

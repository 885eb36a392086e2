import json
import subprocess
import sys

import pytest

from splitsde.cli import ConfigError, main, parse_config, resolve_defaults, serialize_config


def run_dirs(out):
    return sorted(p for p in out.iterdir() if not p.name.startswith("."))


def test_parse_single_line():
    cfg = parse_config("model=cir theta=2 mu=6 b=0.2 seed=42")
    assert cfg.model == "cir" and cfg.params == (2.0, 6.0, 0.2) and cfg.seed == 42


def test_parse_key_value_lines_and_comments():
    cfg = parse_config("# study\nmodel = wf\nparams = theta=1,mu=0.4,a=-0.2\nh_list = 2^-4,2^-5\n")
    assert cfg.param_dict() == {"theta": 1.0, "mu": 0.4, "a": -0.2}
    assert cfg.h_list == (0.0625, 0.03125)


def test_unknown_key_names_valid_keys():
    with pytest.raises(ConfigError) as ei:
        parse_config("model=cir gamma=1")
    msg = str(ei.value)
    assert "gamma" in msg and "theta" in msg and "seed" in msg and "line 1" in msg


def test_line_addressed_errors():
    with pytest.raises(ConfigError, match="line 3"):
        parse_config("model = cir\nseed = 1\nM = many\n")
    with pytest.raises(ConfigError, match="line 2"):
        parse_config("model = cir\njunk\n")


def test_model_parameter_mismatch():
    with pytest.raises(ConfigError, match="valid: theta, mu"):
        parse_config("model = ou", {"params": "theta=1,b=2"})
    with pytest.raises(ConfigError, match="not admissible"):
        parse_config("model = cir", {"params": "mu=-1"})
    with pytest.raises(ConfigError, match="unknown model"):
        parse_config("model = heston")


def test_flags_override_file():
    cfg = parse_config("model=cir seed=42 theta=3", {"seed": "7", "params": "theta=2.5"})
    assert cfg.seed == 7 and cfg.params[0] == 2.5


def test_round_trip():
    cfg = resolve_defaults("converge", parse_config("model=cir theta=2 mu=6 b=0.2 seed=42 x0=0.1"))
    assert parse_config(serialize_config(cfg)) == cfg
    cfg = resolve_defaults("infer", parse_config("model=ahngao", {"fixed": "kappa", "h_obs": "0.1,0.5"}))
    assert parse_config(serialize_config(cfg)) == cfg


def test_paper_scale_defaults():
    cfg = resolve_defaults("converge", parse_config("model=cir paper_scale=true"))
    assert cfg.M == 1000 and cfg.h_fine == 2.0 ** -13
    cfg = resolve_defaults("infer", parse_config("model=cir", {"paper_scale": "true"}))
    assert cfg.M == 1000 and cfg.h_fine == 1e-4
    cfg = resolve_defaults("converge", parse_config("model=cir"))
    assert cfg.M == 500 and len(cfg.h_list) == 6


def test_check_subcommand(tmp_path, capsys):
    assert main(["check", "--out", str(tmp_path)]) == 0
    d, = run_dirs(tmp_path)
    assert (d / "check.csv").exists() and (d / "manifest.json").exists()
    assert "FAIL" not in capsys.readouterr().out


def test_converge_rows(tmp_path):
    rc = main(["converge", "--model", "cir", "--params", "theta=2,mu=6,b=0.2", "--M", "20",
               "--h-fine", "2^-10", "--scheme", "LT,Strang", "--seed", "3", "--out", str(tmp_path)])
    assert rc == 0
    d, = run_dirs(tmp_path)
    lines = (d / "mse.csv").read_text().splitlines()
    assert lines[0] == "h,s_n,m,scheme,model"
    assert sum(l.split(",")[3] == "LT" for l in lines[1:]) == 6
    assert len((d / "slopes.csv").read_text().splitlines()) == 3
    man = json.loads((d / "manifest.json").read_text())
    assert "M = 20" in man["config"] and man["runtime_s"]["converge"] > 0
    assert d.name.endswith("-seed3")


def test_rerun_from_config_reproduces(tmp_path):
    args = ["--model", "wf", "--M", "3", "--T", "0.5", "--h-fine", "0.01", "--x0", "0.5",
            "--scheme", "Strang", "--seed", "11"]
    assert main(["simulate", *args, "--out", str(tmp_path / "a")]) == 0
    assert main(["simulate", *args, "--out", str(tmp_path / "b")]) == 0
    a, = run_dirs(tmp_path / "a")
    b, = run_dirs(tmp_path / "b")
    assert (a / "paths.csv").read_bytes() == (b / "paths.csv").read_bytes()
    cfg = tmp_path / "c.txt"
    cfg.write_text((a / "config.txt").read_text().replace(str(tmp_path / "a"), str(tmp_path / "c")))
    assert main(["simulate", "--config", str(cfg)]) == 0
    c, = run_dirs(tmp_path / "c")
    assert (c / "paths.csv").read_bytes() == (a / "paths.csv").read_bytes()


def test_infer_and_wasserstein_outputs(tmp_path):
    assert main(["infer", "--model", "cir", "--x0", "6", "--M", "2", "--N", "100", "--h-obs", "0.1",
                 "--estimators", "LT,Kessler", "--fixed", "theta", "--out", str(tmp_path)]) == 0
    d, = run_dirs(tmp_path)
    head = (d / "estimates.csv").read_text().splitlines()
    assert head[0] == "replicate,estimator,h_obs,n,param,value,nll,converged,runtime_ms"
    assert len(head) == 1 + 2 * 2 * 2
    assert main(["wasserstein", "--model", "cir", "--M", "1000", "--out", str(tmp_path / "w")]) == 0
    w, = run_dirs(tmp_path / "w")
    assert (w / "wasserstein.csv").read_text().startswith("scheme,h,w1,m\n")


def test_exit_codes_and_atomicity(tmp_path, capsys):
    assert main(["simulate", "--model", "cir", "--params", "gamma=1", "--out", str(tmp_path)]) == 1
    assert "gamma" in capsys.readouterr().err
    assert main(["wasserstein", "--model", "student", "--out", str(tmp_path)]) == 1
    # CIR with mu < b/2 leaves the state space under plain LT
    rc = main(["simulate", "--model", "cir", "--params", "mu=0.05", "--x0", "0.05", "--h-fine", "0.5",
               "--T", "20", "--M", "1", "--out", str(tmp_path)])
    assert rc == 2
    assert list(tmp_path.iterdir()) == []


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "splitsde", "simulate", "--M", "1", "--T", "0.05",
                        "--out", str(tmp_path)], capture_output=True, text=True)
    assert r.returncode == 0 and "seed0" in r.stdout

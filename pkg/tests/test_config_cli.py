import json
import subprocess
import sys

import pytest

from framp_sim.cli import main
from framp_sim.config import Config, ConfigError, dump_config, load_config, parse_config_text

MINIMAL = """\
# four clients, two rounds
method = framp
seed = 3
rounds = 2
N = 4
C = 3
k = 4
n_per_class = 20
layer_widths = 4, 8, 6, 3
l = 8
hn_hidden = 6
participation = 1.0
local_steps = 2
"""


def write(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return path


# --- parsing -----------------------------------------------------------------------

def test_parse_values_and_fractions():
    vals = parse_config_text("levels = 1/64, 1/4, 1\nlr = 0.05  # comment\nactivation = relu\n")
    assert vals == {"levels": (1 / 64, 0.25, 1.0), "lr": 0.05, "activation": "relu"}


@pytest.mark.parametrize(
    "text, line, fragment",
    [
        ("seed = 1\nbogus = 3\n", 2, "unknown key"),
        ("seed = 1\n\nseed = 2\n", 3, "duplicate key"),
        ("rounds = ten\n", 1, "bad value"),
        ("# header\njust words\n", 2, "key = value"),
        ("levels = 1/0\n", 1, "bad value"),
    ],
)
def test_parse_errors_carry_line(tmp_path, text, line, fragment):
    path = write(tmp_path, text)
    with pytest.raises(ConfigError) as info:
        load_config(path)
    assert info.value.line == line
    assert str(info.value).startswith(f"{path}:{line}: ") and fragment in str(info.value)


@pytest.mark.parametrize(
    "text, line",
    [
        ("seed = 0\nalpha = -1\n", 2),
        ("method = fedavg\n", 1),
        ("rounds = 4\nparticipation = 1.5\n", 2),
        ("C = 4\n", None),  # layer_widths default follows C; still valid
    ],
)
def test_validation_errors_point_at_key(tmp_path, text, line):
    path = write(tmp_path, text)
    if line is None:
        assert load_config(path).layer_widths[-1] == 4
        return
    with pytest.raises(ConfigError) as info:
        load_config(path)
    assert info.value.line == line


def test_overrides_win(tmp_path):
    cfg = load_config(write(tmp_path, MINIMAL), method="shared_rolling", seed=9, rounds=None)
    assert (cfg.method, cfg.seed, cfg.rounds) == ("shared_rolling", 9, 2)


def test_dump_roundtrip(tmp_path):
    cfg = Config(levels=(0.04, 0.16, 0.36, 0.64, 1.0), N=10, union_gammas=(0.5,), lam=0.7)
    back = load_config(write(tmp_path, dump_config(cfg)))
    assert back == cfg


def test_sub_seeds_distinct():
    cfg = Config(seed=100)
    roles = ["data", "partition", "extractor", "capacity", "init", "participants", "batches", "noise", "holdout"]
    seeds = [cfg.sub_seed(r) for r in roles]
    assert len(set(seeds)) == len(seeds) and min(seeds) > 100


# --- CLI ---------------------------------------------------------------------------------

def test_cli_writes_all_outputs(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["--config", str(write(tmp_path, MINIMAL)), "--out", str(out)]) == 0
    for name in ("metrics.csv", "report.json", "masks.npz", "prototypes.csv"):
        assert (out / name).stat().st_size > 0
    header = (out / "metrics.csv").read_text().splitlines()[0]
    assert header == ("round,group_0.015625,group_0.0625,group_0.25,group_1,local,union,align_loss,"
                      "train_loss,gini_0.015625,gini_0.0625,gini_0.25,gini_1")
    report = json.loads((out / "report.json").read_text())
    assert set(report["table"]) == {"Local", "0.015625", "0.0625", "0.25", "1", "Union"}
    assert "Local=" in capsys.readouterr().out


def test_cli_method_override(tmp_path):
    out = tmp_path / "o"
    assert main(["--config", str(write(tmp_path, MINIMAL)), "--out", str(out), "--method", "shared_rolling"]) == 0
    assert json.loads((out / "report.json").read_text())["config"]["method"] == "shared_rolling"


def test_cli_byte_identical_reruns(tmp_path):
    cfg = write(tmp_path, MINIMAL)
    assert main(["--config", str(cfg), "--out", str(tmp_path / "a"), "--rounds", "4"]) == 0
    assert main(["--config", str(cfg), "--out", str(tmp_path / "b"), "--rounds", "4"]) == 0
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()
    assert (tmp_path / "a" / "prototypes.csv").read_bytes() == (tmp_path / "b" / "prototypes.csv").read_bytes()


def test_cli_malformed_config_exit_2(tmp_path, capsys):
    cfg = write(tmp_path, MINIMAL + "unknown_thing = 1\n")
    assert main(["--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert f"{cfg}:14:" in err and "unknown key" in err
    assert not (tmp_path / "o").exists()


def test_cli_missing_config_exit_2(tmp_path):
    assert main(["--config", str(tmp_path / "nope.cfg")]) == 2


def test_cli_runtime_failure_exit_1(tmp_path, capsys):
    # 40 clients cannot all receive train and test samples from 2x5 samples
    cfg = write(tmp_path, MINIMAL.replace("N = 4", "N = 40").replace("n_per_class = 20", "n_per_class = 5"))
    assert main(["--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    assert "PartitionError" in capsys.readouterr().err


def test_module_entry_point(tmp_path):
    cfg = write(tmp_path, MINIMAL)
    proc = subprocess.run(
        [sys.executable, "-m", "framp_sim", "--config", str(cfg), "--out", str(tmp_path / "o")],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr

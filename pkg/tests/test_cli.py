from pathlib import Path

import pytest

from gamenest.harness import cli, logs

FIXTURES = Path(__file__).parent / "fixtures"
GAMES = str(Path(__import__("gamenest.data", fromlist=["x"]).__file__).parent / "canonical_games.jsonl")


def tsv(text):
    lines = [l for l in text.splitlines() if l and not l.startswith("#")]
    header = lines[0].split("\t")
    return [dict(zip(header, l.split("\t"))) for l in lines[1:]]


def test_nash(capsys):
    assert cli.main(["nash", GAMES]) == 0
    rows = {r["game"]: r for r in tsv(capsys.readouterr().out)}
    assert rows["Prisoner's Dilemma"]["pure_nash"] == "(Defect,Defect)"
    assert rows["IESDS"]["iesds_rows"] == "Up" and rows["IESDS"]["iesds_cols"] == "Middle"


def test_nash_sign_flip(tmp_path):
    out = tmp_path / "n.tsv"
    assert cli.main(["nash", GAMES, "--sign", "-1", "--offset", "100", "--out", str(out)]) == 0
    rows = {r["game"]: r for r in tsv(out.read_text())}
    assert rows["Prisoner's Dilemma"]["pure_nash"] == "(Cooperate,Cooperate)"


def test_selfplay(capsys):
    assert cli.main(["selfplay-ttt", "--games", "30", "--opponent", "minimax"]) == 0
    out = capsys.readouterr()
    assert {r["result"] for r in tsv(out.out)} == {"draw"}
    assert "loss=0" in out.err


def test_spy_sim(tmp_path):
    out = tmp_path / "s.tsv"
    assert cli.main(["spy-sim", "--matches", "20", "--out", str(out)]) == 0
    rows = tsv(out.read_text())
    assert len(rows) == 20 and all(r["winner"] in ("civilians", "undercover") for r in rows)


def test_eval_flags_override_config(tmp_path, capsys):
    args = ["eval", "--config", str(FIXTURES / "minimal_eval.yaml"), "--eval-rounds", "7", "--policy", "random",
            "--output-dir", str(tmp_path)]
    assert cli.main(args) == 0
    rows = tsv(capsys.readouterr().out)
    assert rows[0]["task"] == "Matrix" and rows[0]["rounds"] == "7"
    assert (tmp_path / "report.csv").exists()


def test_train_and_export(tmp_path, capsys):
    for comp in ("nested", "mixed"):
        args = ["train", "--tasks", "Arith", "Matrix", "--composition", comp, "--iterations", "4",
                "--group-size", "4", "--groups-per-iteration", "2", "--output-dir", str(tmp_path / comp)]
        assert cli.main(args) == 0
    capsys.readouterr()
    fig = tmp_path / "cmp.png"
    assert cli.main(["export-metrics", str(tmp_path / "nested"), str(tmp_path / "mixed"),
                     "--window", "1", "3", "--figure", str(fig)]) == 0
    rows = tsv(capsys.readouterr().out)
    assert [r["run"] for r in rows] == ["nested", "mixed"]
    assert all(float(r["mean_entropy"]) > 0 for r in rows)
    assert fig.stat().st_size > 0


def test_errors_exit_2(tmp_path, capsys):
    assert cli.main(["eval", "--config", str(tmp_path / "missing.yaml")]) == 2
    assert "not found" in capsys.readouterr().err
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{}\n")
    assert cli.main(["nash", str(bad)]) == 2


def test_train_rejects_fixed_policies(tmp_path):
    assert cli.main(["train", "--tasks", "Arith", "--policy", "oracle", "--output-dir", str(tmp_path)]) == 2


def test_unknown_command():
    with pytest.raises(SystemExit):
        cli.main(["dance"])

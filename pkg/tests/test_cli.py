from bftdsn.cli.interface import EXIT_ERROR, EXIT_OK, run_cli
from bftdsn.harness.runner import ScenarioResult, TrialResult
from bftdsn.harness.storage import ResultStorage


def test_help(capsys):
    assert run_cli([]) == EXIT_OK
    assert "Команды" in capsys.readouterr().out


def test_unknown_command(capsys):
    assert run_cli(["dance"]) == EXIT_ERROR
    assert "Неизвестная команда" in capsys.readouterr().out


def test_dangling_flag():
    assert run_cli(["run", "--n"]) == EXIT_ERROR


def test_bad_format(capsys):
    assert run_cli(["run", "--format", "xml"]) == EXIT_ERROR
    assert "xml" in capsys.readouterr().out


def test_experiment_needs_a_kind(capsys):
    assert run_cli(["experiment", "--trials", "10"]) == EXIT_ERROR
    assert "--kind" in capsys.readouterr().out


def test_unknown_strategy(capsys):
    assert run_cli(["run", "--strategy", "teleport"]) == EXIT_ERROR
    assert "teleport" in capsys.readouterr().out


def test_storage_experiment(capsys):
    assert run_cli(["experiment", "--kind", "storage", "--n", "10", "--file-size", "56"]) == EXIT_OK
    assert "LinearFit" in capsys.readouterr().out


def test_plot_data_from_written_csv(tmp_path, capsys):
    trial = TrialResult(
        trial=0, seed=1, n=4, f=1, byzantine_fraction=0.0, strategy="none", file_count=1
    )
    result = ScenarioResult(
        scenario="cli", seed=1, n=4, byzantine_fraction=0.0, strategy="none", trials=[trial]
    )
    storage = ResultStorage(tmp_path)
    storage.emit([result], formats=("csv",))
    out = tmp_path / "points.dat"
    assert run_cli(["plot-data", "--in", str(storage.trials_path), "--out", str(out)]) == EXIT_OK
    assert out.exists()
    assert str(out) in capsys.readouterr().out

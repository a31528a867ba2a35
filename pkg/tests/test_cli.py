from __future__ import annotations

import csv
import io

import pytest

from gateau.checkpoint import load_checkpoint, save_checkpoint
from gateau.cli import EXIT_IO, EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, _threads, main
from gateau.config import ConfigError, RunConfig
from gateau.elo import MatchTable
from gateau.model import ModelConfig

from conftest import perturbed_net

TINY_TRAIN = [
    "--set", "train.iterations=1", "--set", "train.games=1", "--set", "search.simulations=2",
    "--set", "model.hidden=4", "--set", "model.blocks=1", "--set", "train.max_plies_gardner=6",
    "--set", "train.max_plies_chess=4", "--set", "train.batch_size=2", "--set", "train.window=100",
]


def run(capsys, *argv) -> tuple[int, str, str]:
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_perft(capsys):
    code, out, _ = run(capsys, "perft", "--fen", "startpos", "--depth", "3")
    assert code == EXIT_OK and out.strip() == "8902"
    code, out, _ = run(capsys, "perft", "--variant", "gardner", "--depth", "1", "--divide")
    assert code == EXIT_OK and out.strip().splitlines()[-1] == "7"


def test_encode_writes_feature_csvs(capsys, tmp_path):
    code, out, _ = run(capsys, "encode", "--fen", "startpos", "--variant", "chess", "--out", tmp_path)
    assert code == EXIT_OK
    assert out.split() == ["nodes,64,119", "edges,1858,15"]
    nodes = list(csv.reader((tmp_path / "nodes.csv").open()))
    edges = list(csv.reader((tmp_path / "edges.csv").open()))
    assert len(nodes) == 65 and len(edges) == 1859


def test_bad_fen_is_a_validation_error(capsys):
    code, _, err = run(capsys, "perft", "--fen", "not a fen")
    assert code == EXIT_VALIDATION and "error" in err


def test_config_show_and_unknown_key(capsys):
    code, out, _ = run(capsys, "config", "show", "--preset", "desk-scale")
    assert code == EXIT_OK and "variant = gardner" in out and "hidden = 32" in out
    assert RunConfig.load("desk-scale").to_ini().strip() == out.strip()
    code, _, err = run(capsys, "config", "show", "--set", "train.itertions=3")
    assert code == EXIT_USAGE and "train.itertions" in err
    code, _, _ = run(capsys, "config", "show", "--preset", "nope")
    assert code == EXIT_USAGE


@pytest.mark.parametrize("preset", ["alg1-defaults", "paper-8x8", "paper-5x5", "desk-scale"])
def test_presets_are_fully_specified(preset):
    cfg = RunConfig.load(preset)
    tc = cfg.train_config()
    assert tc.batch_size <= tc.window
    assert RunConfig.load(preset, overrides=["search.simulations=7"]).search_params().simulations == 7


def test_config_file_layers_over_preset(tmp_path):
    path = tmp_path / "c.ini"
    path.write_text("[train]\ngames = 5\n")
    assert RunConfig.load("desk-scale", path).get("train", "games") == 5
    path.write_text("[train]\ngames = five\n")
    with pytest.raises(ConfigError, match="train.games"):
        RunConfig.load("desk-scale", path)


def test_finetune_requires_source(capsys, tmp_path):
    code, _, err = run(capsys, "finetune", "--preset", "desk-scale", "--out", tmp_path / "ft")
    assert code == EXIT_USAGE and "--from" in err


def test_train_then_finetune(capsys, tmp_path):
    code, out, _ = run(capsys, "train", "--preset", "desk-scale", "--variant", "gardner", "--out", tmp_path / "g1",
                       "--threads", "1", *TINY_TRAIN)
    assert code == EXIT_OK
    assert [line.rsplit("/", 1)[-1] for line in out.split()] == ["iter_0000.ckpt", "iter_0001.ckpt"]
    assert (tmp_path / "g1" / "config.ini").exists()
    code, out, _ = run(capsys, "finetune", "--from", tmp_path / "g1" / "iter1", "--variant", "chess",
                       "--preset", "desk-scale", "--out", tmp_path / "c1", "--threads", "1", *TINY_TRAIN)
    assert code == EXIT_OK
    tuned = load_checkpoint(tmp_path / "c1" / "latest.ckpt")
    assert tuned.metadata["variants"] == ["gardner", "chess"]


def test_selfplay_writes_pgn(capsys, tmp_path):
    code, out, _ = run(capsys, "selfplay", "--preset", "desk-scale", "--games", "2", "--out", tmp_path / "g.pgn",
                       "--set", "search.simulations=2", "--set", "train.max_plies_gardner=8")
    assert code == EXIT_OK
    assert out.splitlines()[0] == "game,result,reason,plies" and len(out.splitlines()) == 3
    assert (tmp_path / "g.pgn").read_text().count("[Event ") == 2


def test_gradcheck_exit_code(capsys):
    code, out, _ = run(capsys, "gradcheck", "--seeds", "2")
    assert code == EXIT_OK
    assert "FAIL" not in out and out.splitlines()[-1].startswith("model,")


def _ratings(path) -> dict[str, tuple[float, float]]:
    return {r["player"]: (float(r["rating"]), float(r["sigma"])) for r in csv.DictReader(open(path))}


def test_rate_roster(capsys, tmp_path):
    for i in range(4):
        save_checkpoint(perturbed_net(ModelConfig(hidden=4, blocks=1), seed=i), tmp_path / f"p{i}.ckpt")
    (tmp_path / "roster.csv").write_text("label,checkpoint\n" + "".join(f"p@{i},p{i}.ckpt\n" for i in range(3)))
    fast = ["--preset", "desk-scale", "--set", "rate.simulations=2", "--set", "rate.max_plies=6", "--threads", "1"]
    store = tmp_path / "store"
    code, out, _ = run(capsys, "rate", "--roster", tmp_path / "roster.csv", "--out", store, *fast)
    assert code == EXIT_OK
    ratings = _ratings(store / "ratings.csv")
    assert len(ratings) == 3
    assert sum(r for r, _ in ratings.values()) / 3 == pytest.approx(1000.0, abs=1e-2)
    table = MatchTable.load(store / "matches.csv")
    assert len(table.pairs()) == 3 and all(sum(c) == 20 for _, _, c in table.pairs())
    assert len(list((store / "games").glob("*.pgn"))) == 3

    # same store, no new players: a pure re-fit
    first = (store / "ratings.csv").read_text()
    code, _, _ = run(capsys, "rate", "--roster", tmp_path / "roster.csv", "--out", store, *fast)
    assert code == EXIT_OK and (store / "ratings.csv").read_text() == first

    # one newcomer plays exactly five matches of rate.games games
    with open(tmp_path / "roster.csv", "a") as f:
        f.write("p@3,p3.ckpt\n")
    code, _, _ = run(capsys, "rate", "--roster", tmp_path / "roster.csv", "--out", store, *fast,
                     "--set", "rate.games=60")
    assert code == EXIT_OK
    after = MatchTable.load(store / "matches.csv")
    assert sum(sum(after.get("p@3", o)) for o in after.opponents("p@3")) == 300
    assert len(list((store / "games").glob("*.pgn"))) == 3 + 5
    assert len(_ratings(store / "ratings.csv")) == 4


def test_rate_bad_roster(capsys, tmp_path):
    (tmp_path / "roster.csv").write_text("a,b,c\n")
    code, _, _ = run(capsys, "rate", "--roster", tmp_path / "roster.csv", "--out", tmp_path / "s")
    assert code == EXIT_USAGE
    code, _, _ = run(capsys, "rate", "--roster", tmp_path / "missing.csv", "--out", tmp_path / "s")
    assert code == EXIT_IO


def _ratings_csv(path, rows):
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["player", "rating", "sigma"])
    w.writerows(rows)
    path.write_text(buf.getvalue())


def test_plot_single_series(capsys, tmp_path):
    _ratings_csv(tmp_path / "r.csv", [("run@0", 900, 20), ("run@5", 1000, 25), ("run@10", 1100, 30)])
    code, out, _ = run(capsys, "plot", tmp_path / "r.csv", "--out", tmp_path / "elo.svg")
    assert code == EXIT_OK
    svg = (tmp_path / "elo.svg").read_text()
    assert svg.count('id="series-') == 1 and svg.count('id="band-') == 1
    assert 'id="legend' not in svg
    merged = list(csv.DictReader(open(tmp_path / "elo.csv")))
    assert [m["iteration"] for m in merged] == ["0", "5", "10"]
    again = tmp_path / "again.svg"
    run(capsys, "plot", tmp_path / "r.csv", "--out", again)
    assert again.read_bytes() == (tmp_path / "elo.svg").read_bytes()


def test_plot_two_series_has_legend(capsys, tmp_path):
    _ratings_csv(tmp_path / "r.csv", [("a@1", 900, 20), ("a@2", 950, 20), ("b@1", 1050, 20), ("b@2", 1100, 20)])
    code, _, _ = run(capsys, "plot", tmp_path / "r.csv", "--out", tmp_path / "elo.svg")
    assert code == EXIT_OK
    svg = (tmp_path / "elo.svg").read_text()
    assert 'id="series-0"' in svg and 'id="series-1"' in svg and 'id="legend_1"' in svg


def test_plot_metrics_and_png(capsys, tmp_path):
    (tmp_path / "metrics.csv").write_text("iteration,policy_loss,value_loss\n1,2.0,0.8\n2,1.5,0.6\n")
    code, _, _ = run(capsys, "plot", tmp_path / "metrics.csv", "--out", tmp_path / "loss.png")
    assert code == EXIT_OK and (tmp_path / "loss.png").read_bytes()[:4] == b"\x89PNG"


def test_plot_empty_input_is_an_error(capsys, tmp_path):
    (tmp_path / "empty.csv").write_text("player,rating,sigma\n")
    code, _, err = run(capsys, "plot", tmp_path / "empty.csv", "--out", tmp_path / "x.svg")
    assert code == EXIT_VALIDATION and "no data" in err
    assert not (tmp_path / "x.svg").exists()
    code, _, _ = run(capsys, "plot", tmp_path / "missing.csv", "--out", tmp_path / "x.svg")
    assert code == EXIT_IO


def test_threads_environment_override(monkeypatch, capsys, tmp_path):
    monkeypatch.setenv("GATEAU_THREADS", "3")
    assert _threads(8) == 3
    monkeypatch.delenv("GATEAU_THREADS")
    assert _threads(5) == 5
    monkeypatch.setenv("GATEAU_THREADS", "many")
    blocker = tmp_path / "file"
    blocker.write_text("")
    code, _, _ = run(capsys, "selfplay", "--preset", "desk-scale", "--out", blocker / "x.pgn",
                      "--set", "search.simulations=2", "--set", "train.max_plies_gardner=4")
    # selfplay takes no --threads, so the bad variable only matters for commands that do
    assert code == EXIT_IO
    code, _, err = run(capsys, "train", "--preset", "desk-scale", "--out", tmp_path / "unused")
    assert code == EXIT_USAGE and "GATEAU_THREADS" in err


def test_log_level_accepted_before_and_after_command(capsys):
    assert run(capsys, "--log-level", "ERROR", "perft", "--depth", "1")[0] == EXIT_OK
    assert run(capsys, "perft", "--depth", "1", "--log-level", "ERROR")[0] == EXIT_OK

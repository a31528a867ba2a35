"""Command-line entry point: ``gateau <command> ...``.

Exit codes: 0 success, 1 usage or configuration error, 2 validation
failure, 3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, atomic_write, load_checkpoint
from .chess import Position, apply_move, get_variant, perft
from .config import PRESETS, ConfigError, RunConfig
from .elo import EloError, MatchTable, fit_ratings_wls, round_robin, run_matchmaking
from .graph import build_move_graph, encode_position, feature_csv_rows
from .notation import FenError, PgnError, emit_pgn, parse_fen
from .plotting import PlotError, plot_files
from .selfplay import FrameError, match_games, match_score, selfplay_games

log = logging.getLogger("gateau")

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _threads(requested: int | None) -> int:
    env = os.environ.get("GATEAU_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"GATEAU_THREADS={env!r} is not an integer") from None
    return requested or os.cpu_count() or 1


def _load_config(args, **extra) -> RunConfig:
    overrides = list(getattr(args, "set", None) or [])
    if getattr(args, "variant", None):
        overrides.append(f"run.variant={args.variant}")
    if getattr(args, "seed", None) is not None:
        overrides.append(f"run.seed={args.seed}")
    if hasattr(args, "threads"):
        overrides.append(f"run.threads={_threads(args.threads)}")
    for key, value in extra.items():
        overrides.append(f"{key}={value}")
    cfg = RunConfig.load(args.preset, getattr(args, "config", None), overrides)
    log.info("resolved config:\n%s", cfg.to_ini())
    return cfg


def _resolve_checkpoint(path) -> Path:
    """A checkpoint file, a run directory (its latest checkpoint) or ``<run>/iterN``."""
    path = Path(path)
    if path.is_dir():
        for candidate in (path / "latest.ckpt", *sorted((path / "checkpoints").glob("iter_*.ckpt"))[-1:]):
            if candidate.exists():
                return candidate
        raise FileNotFoundError(f"{path}: no checkpoint in directory")
    tail = path.name.removeprefix("iter").lstrip("_")
    if not path.exists() and tail.isdigit():
        return path.parent / "checkpoints" / f"iter_{int(tail):04d}.ckpt"
    return path


# --- commands ----------------------------------------------------------------


def cmd_train(args) -> int:
    from .train import run_training

    cfg = _load_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write(out / "config.ini", cfg.to_ini().encode())
    initial = None
    if args.command == "finetune":
        initial = load_checkpoint(_resolve_checkpoint(args.from_))
        if initial.config != cfg.model_config():
            log.info("model shape taken from the source checkpoint: %s", initial.config)
    tc = cfg.train_config()
    if initial is not None:
        tc.model = initial.config
    written = run_training(tc, out, initial=initial, resume=not args.no_resume)
    for path in written:
        print(path)
    return EXIT_OK


def _read_roster(path) -> list[tuple[str, Path]]:
    rows = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        for lineno, row in enumerate(reader, start=1):
            if not row or row[0].startswith("#") or (lineno == 1 and row[:2] == ["label", "checkpoint"]):
                continue
            if len(row) != 2:
                raise ConfigError(f"{path}:{lineno}: expected 'label,checkpoint'")
            label, ckpt = row[0].strip(), row[1].strip()
            ckpt_path = Path(ckpt) if Path(ckpt).is_absolute() else Path(path).parent / ckpt
            rows.append((label, ckpt_path))
    labels = [r[0] for r in rows]
    if len(set(labels)) != len(labels):
        raise ConfigError(f"{path}: duplicate player labels")
    return rows


def cmd_rate(args) -> int:
    cfg = _load_config(args)
    roster = _read_roster(args.roster)
    store = Path(args.store or args.out)
    store.mkdir(parents=True, exist_ok=True)
    table_path = store / "matches.csv"
    table = MatchTable.load(table_path) if table_path.exists() else MatchTable()
    nets = {}

    def net_of(label):
        if label not in nets:
            nets[label] = load_checkpoint(_resolve_checkpoint(dict(roster)[label]))
        return nets[label]

    variant = get_variant(cfg.get("run", "variant"))
    games = cfg.get("rate", "games")
    sp = cfg.search_params(cfg.get("rate", "simulations"))
    max_plies = cfg.get("rate", "max_plies") or cfg.max_plies(variant.name)

    def play(a, b, n):
        k = sum(sum(c) for c in table.counts.values()) // 2
        played = match_games(net_of(a), net_of(b), variant, n, sp, max_plies, cfg.get("run", "seed"),
                             names=(a, b), stream=k)
        index = len(list((store / "games").glob("*.pgn")))  # repeat pairings must not overwrite
        safe = f"{index:04d}_{a}_vs_{b}".replace("/", "_").replace("@", "-")
        atomic_write(store / "games" / f"{safe}.pgn", "\n".join(emit_pgn(g.record) for g in played).encode())
        result = match_score(played, a)
        log.info("%s vs %s: %s", a, b, result)
        return result

    labels = [label for label, _ in roster]
    unmatched = [p for p in labels if p not in table.matched()]
    if len(table.matched()) < 2:
        seeds = unmatched[: cfg.get("rate", "initial_players")]
        round_robin(table, seeds, play, games)
        table.save(table_path)
        unmatched = [p for p in unmatched if p not in seeds]
    for player in unmatched:
        run_matchmaking(table, [player], play, games, cfg.get("rate", "rounds"))
        table.save(table_path)
    table.save(table_path)
    ratings = fit_ratings_wls(table, [p for p in table.matched() if p in labels] or None)
    out = Path(args.out)
    atomic_write(out / "ratings.csv", ratings.to_csv().encode())
    sys.stdout.write(ratings.to_csv())
    return EXIT_OK


def cmd_plot(args) -> int:
    image, data = plot_files(args.inputs, args.out)
    print(f"{image}\n{data}")
    return EXIT_OK


def _position(args) -> Position:
    variant = get_variant(args.variant) if args.variant else None
    return parse_fen(args.fen, variant)


def cmd_perft(args) -> int:
    p = _position(args)
    if args.divide:
        for m in p.legal_moves():
            print(f"{m.uci(p.side)},{perft(apply_move(p, m), args.depth - 1)}")
    print(perft(p, args.depth))
    return EXIT_OK


def cmd_encode(args) -> int:
    p = _position(args)
    graph = build_move_graph(p.variant)
    fs = encode_position(p, graph)
    (nh, nrows), (eh, erows) = feature_csv_rows(fs, graph)
    out = Path(args.out)
    for name, header, rows in (("nodes.csv", nh, nrows), ("edges.csv", eh, erows)):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
        atomic_write(out / name, buf.getvalue().encode())
    print(f"nodes,{fs.node_features.shape[0]},{fs.node_features.shape[1]}")
    print(f"edges,{fs.edge_features.shape[0]},{fs.edge_features.shape[1]}")
    return EXIT_OK


def cmd_selfplay(args) -> int:
    from .model import GateauNet

    cfg = _load_config(args)
    variant = get_variant(cfg.get("run", "variant"))
    if args.checkpoint:
        net = load_checkpoint(_resolve_checkpoint(args.checkpoint))
    else:
        net = GateauNet(cfg.model_config(), seed=cfg.get("run", "seed"))
    games = selfplay_games(net, variant, args.games, cfg.search_params(), cfg.max_plies(variant.name),
                           cfg.get("run", "seed"))
    atomic_write(args.out, "\n".join(emit_pgn(g.record) for g in games).encode())
    print("game,result,reason,plies")
    for i, g in enumerate(games):
        print(f"{i + 1},{g.outcome.pgn_result},{g.outcome.reason},{len(g.positions)}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import check_model, check_primitives

    results = check_primitives(seeds=args.seeds)
    results.append(check_model(seeds=args.seeds))
    print("check,worst_rel_error,tolerance,status")
    for r in results:
        print(f"{r.name},{r.worst:.3e},{r.tolerance:.0e},{'pass' if r.passed else 'FAIL'}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_VALIDATION


def cmd_config(args) -> int:
    cfg = RunConfig.load(args.preset, args.config, args.set)
    sys.stdout.write(cfg.to_ini())
    return EXIT_OK


# --- parser ------------------------------------------------------------------


def _config_args(p: argparse.ArgumentParser, threads: bool = True) -> None:
    p.add_argument("--preset", default="alg1-defaults", choices=sorted(PRESETS))
    p.add_argument("--config", help="INI file layered over the preset")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one key")
    p.add_argument("--variant", help="chess or gardner")
    p.add_argument("--seed", type=int)
    if threads:
        p.add_argument("--threads", type=int, help="self-play worker processes (GATEAU_THREADS wins)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gateau", description="Graph-attention AlphaZero for chess variants.")
    parser.add_argument("--log-level", default="WARNING")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--log-level", default=argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    _add = sub.add_parser

    def add_parser(name, **kw):
        return _add(name, parents=[common], **kw)

    sub.add_parser = add_parser

    for name in ("train", "finetune"):
        p = sub.add_parser(name, help=f"{name} a network by self-play")
        _config_args(p)
        p.add_argument("--out", required=True, help="run directory")
        p.add_argument("--no-resume", action="store_true")
        if name == "finetune":
            p.add_argument("--from", dest="from_", required=True, help="source checkpoint or run directory")
        p.set_defaults(func=cmd_train)

    p = sub.add_parser("rate", help="rate checkpoints by adaptive matchmaking")
    _config_args(p)
    p.add_argument("--roster", required=True, help="CSV of label,checkpoint rows")
    p.add_argument("--store", help="match store directory (default: --out)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rate)

    p = sub.add_parser("plot", help="plot ratings or training metrics")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out", required=True, help="image path (.svg or .png); merged CSV goes alongside")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("perft", help="count leaf nodes of the legal move tree")
    p.add_argument("--fen", default="startpos")
    p.add_argument("--variant")
    p.add_argument("--depth", type=int, default=3)
    p.add_argument("--divide", action="store_true")
    p.set_defaults(func=cmd_perft)

    p = sub.add_parser("encode", help="dump node and edge features as CSV")
    p.add_argument("--fen", default="startpos")
    p.add_argument("--variant")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("selfplay", help="play self-play games to a PGN file")
    _config_args(p, threads=False)
    p.add_argument("--checkpoint")
    p.add_argument("--games", type=int, default=2)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_selfplay)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--seeds", type=int, default=100)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("config", help="configuration utilities")
    csub = p.add_subparsers(dest="action", required=True, parser_class=_Parser)
    show = csub.add_parser("show", help="print a resolved preset")
    show.add_argument("--preset", default="alg1-defaults")
    show.add_argument("--config")
    show.add_argument("--set", action="append")
    show.set_defaults(func=cmd_config)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=args.log_level.upper(), format="%(asctime)s %(levelname)s %(message)s")
        np.seterr(all="ignore")
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FenError, PgnError, EloError, PlotError, CheckpointError, FrameError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

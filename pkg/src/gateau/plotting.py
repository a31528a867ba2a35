"""Rating and loss curves rendered with matplotlib.

Inputs are ratings CSVs (player, rating, sigma) whose player labels look
like ``series@iteration``, or training metrics CSVs (iteration,
policy_loss, value_loss, ...). Each curve becomes a line with gid
``series-i`` and, when it carries uncertainties, a 2-sigma band with gid
``band-i``.
"""

from __future__ import annotations

import csv
import io
import re
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .checkpoint import atomic_write  # noqa: E402


class PlotError(ValueError):
    pass


@dataclass
class Series:
    label: str
    x: list[float] = field(default_factory=list)
    y: list[float] = field(default_factory=list)
    sigma: list[float] = field(default_factory=list)

    def sorted(self) -> Series:
        order = sorted(range(len(self.x)), key=self.x.__getitem__)
        return Series(self.label, [self.x[i] for i in order], [self.y[i] for i in order],
                      [self.sigma[i] for i in order])


def _split_label(label: str, default: str) -> tuple[str, float]:
    if "@" in label:
        name, _, it = label.rpartition("@")
        try:
            return name, float(it)
        except ValueError:
            pass
    m = re.search(r"(\d+)$", label)
    if not m:
        raise PlotError(f"cannot read an iteration from player label {label!r}")
    return default, float(m.group(1))


def read_series(path) -> tuple[str, list[Series]]:
    """("elo" | "loss", series) from one CSV file."""
    path = Path(path)
    try:
        rows = list(csv.DictReader(io.StringIO(path.read_text())))
    except csv.Error as exc:
        raise PlotError(f"{path}: {exc}") from None
    if not rows:
        raise PlotError(f"{path}: no data rows")
    cols = set(rows[0])
    out: dict[str, Series] = {}
    try:
        if {"player", "rating", "sigma"} <= cols:
            for r in rows:
                name, it = _split_label(r["player"], path.stem)
                s = out.setdefault(name, Series(name))
                s.x.append(it)
                s.y.append(float(r["rating"]))
                s.sigma.append(float(r["sigma"]))
            kind = "elo"
        elif {"iteration", "policy_loss", "value_loss"} <= cols:
            for col in ("policy_loss", "value_loss"):
                s = out.setdefault(col, Series(f"{path.stem}:{col}"))
                for r in rows:
                    s.x.append(float(r["iteration"]))
                    s.y.append(float(r[col]))
                    s.sigma.append(0.0)
            kind = "loss"
        else:
            raise PlotError(f"{path}: unrecognised columns {sorted(cols)}")
    except (KeyError, ValueError) as exc:
        if isinstance(exc, PlotError):
            raise
        raise PlotError(f"{path}: malformed row ({exc})") from None
    return kind, [s.sorted() for s in out.values()]


def merged_csv(series: list[Series]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["series", "iteration", "value", "sigma"])
    for s in series:
        for x, y, sd in zip(s.x, s.y, s.sigma):
            writer.writerow([s.label, f"{x:g}", f"{y:.6g}", f"{sd:.6g}"])
    return buf.getvalue()


def render(series: list[Series], ylabel: str = "Elo", title: str | None = None, fmt: str = "svg") -> bytes:
    if not series or not any(s.x for s in series):
        raise PlotError("nothing to plot")
    plt.rcParams["svg.hashsalt"] = "gateau"
    fig, ax = plt.subplots(figsize=(7, 4.2))
    for i, s in enumerate(series):
        (line,) = ax.plot(s.x, s.y, marker="o", markersize=3, label=s.label)
        line.set_gid(f"series-{i}")
        if any(sd > 0 for sd in s.sigma):
            lo = [y - 2 * sd for y, sd in zip(s.y, s.sigma)]
            hi = [y + 2 * sd for y, sd in zip(s.y, s.sigma)]
            band = ax.fill_between(s.x, lo, hi, alpha=0.2, color=line.get_color(), linewidth=0)
            band.set_gid(f"band-{i}")
    ax.set_xlabel("iteration")
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    if len(series) > 1:
        ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    buf = io.BytesIO()
    metadata = {"Date": None} if fmt == "svg" else None
    fig.savefig(buf, format=fmt, metadata=metadata)
    plt.close(fig)
    return buf.getvalue()


def plot_files(inputs: list, out_path) -> tuple[Path, Path]:
    """Render ``inputs`` to ``out_path`` and write the merged data next to it."""
    if not inputs:
        raise PlotError("no input files")
    kinds, series = set(), []
    for path in inputs:
        kind, s = read_series(path)
        kinds.add(kind)
        series.extend(s)
    if len(kinds) > 1:
        raise PlotError("cannot mix ratings and metrics files in one plot")
    out_path = Path(out_path)
    fmt = out_path.suffix.lstrip(".").lower() or "svg"
    ylabel = "Elo (2-sigma band)" if kinds == {"elo"} else "loss"
    image = render(series, ylabel, fmt=fmt)
    csv_path = out_path.with_suffix(".csv")
    atomic_write(out_path, image)
    atomic_write(csv_path, merged_csv(series).encode())
    return out_path, csv_path

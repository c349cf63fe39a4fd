"""Result aggregation and deterministic SVG rendering.

Two CSV schemas, both documented in the README:

  aggregate:  x, series, mean, std, n       (one row per sweep point and series)
  probe:      task, model, x, seed, metric, mean, std   (x is N or depth)

SVG output is fully hand-rolled so renders are byte-identical across
invocations: fixed canvas, fixed palette, fixed float formatting, no
timestamps and no generated ids.  Plot kinds: line with a shaded std band,
and grouped bars with std whiskers.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass


PALETTE = (
    "#1f77b4",
    "#d62728",
    "#2ca02c",
    "#9467bd",
    "#ff7f0e",
    "#8c564b",
    "#17becf",
    "#7f7f7f",
)

AGGREGATE_HEADER = ["x", "series", "mean", "std", "n"]
PROBE_HEADER = ["task", "model", "x", "seed", "metric", "mean", "std"]


# -- aggregation ------------------------------------------------------------


def aggregate_points(points) -> list:
    """Collapse (x, series, value) triples to (x, series, mean, std, n) rows.

    std is the sample standard deviation (ddof=1), 0.0 when n == 1.  Rows
    come back sorted by (series, x) so downstream output is deterministic.
    """
    groups: dict = {}
    for x, series, value in points:
        groups.setdefault((series, x), []).append(float(value))
    rows = []
    for (series, x), vals in sorted(groups.items(), key=lambda kv: (kv[0][0], _sort_x(kv[0][1]))):
        n = len(vals)
        mean = sum(vals) / n
        std = math.sqrt(sum((v - mean) ** 2 for v in vals) / (n - 1)) if n > 1 else 0.0
        rows.append({"x": x, "series": series, "mean": mean, "std": std, "n": n})
    return rows


def _sort_x(x):
    # numeric x sorts numerically, string x lexically; mixing the two in one
    # aggregate is a schema error surfaced here
    return (0, float(x), "") if isinstance(x, (int, float)) else (1, 0.0, x)


def write_aggregate_csv(path, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(AGGREGATE_HEADER)
        for row in rows:
            writer.writerow(
                [_cell(row["x"]), row["series"], repr(float(row["mean"])), repr(float(row["std"])), row["n"]]
            )


def read_aggregate_csv(path) -> list:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != AGGREGATE_HEADER:
            raise ValueError(f"{path}: expected header {AGGREGATE_HEADER}, got {header}")
        rows = []
        for record in reader:
            if len(record) != 5:
                raise ValueError(f"{path}: bad row {record!r}")
            x_raw, series, mean, std, n = record
            rows.append(
                {
                    "x": _parse_cell(x_raw),
                    "series": series,
                    "mean": float(mean),
                    "std": float(std),
                    "n": int(n),
                }
            )
        return rows


def write_probe_csv(path, rows) -> None:
    """rows: dicts with task, model, x, seed, metric, mean, std."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PROBE_HEADER)
        for row in rows:
            writer.writerow(
                [
                    row["task"],
                    row["model"],
                    _cell(row["x"]),
                    row["seed"],
                    row["metric"],
                    repr(float(row["mean"])),
                    repr(float(row["std"])),
                ]
            )


def _cell(x):
    return repr(x) if isinstance(x, float) else x


def _parse_cell(raw: str):
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        return raw


# -- figure catalog ---------------------------------------------------------


@dataclass(frozen=True)
class FigureSpec:
    fid: str
    kind: str  # "line+band" | "bar"
    title: str
    xlabel: str
    ylabel: str
    x_scale: str = "linear"  # linear | log2 | log10
    y_scale: str = "linear"
    y_limits: tuple | None = None


FIGURES = {
    "fig5a": FigureSpec(
        "fig5a", "line+band", "Recall accuracy vs neighbor count",
        "neighbors N", "test accuracy", x_scale="log2", y_limits=(0.0, 1.05),
    ),
    "fig5b": FigureSpec(
        "fig5b", "line+band", "Trainable parameters vs neighbor count",
        "neighbors N", "parameters", x_scale="log2", y_scale="log10",
    ),
    "fig6a": FigureSpec(
        "fig6a", "line+band", "Mean neighbor Jacobian norm",
        "neighbors N", "Jacobian 1-norm", x_scale="log2", y_scale="log10",
    ),
    "fig6b": FigureSpec(
        "fig6b", "line+band", "Selected vs background sensitivity ratio",
        "neighbors N", "Jacobian norm ratio", x_scale="log2",
    ),
    "fig7": FigureSpec(
        "fig7", "line+band", "Maximal query-value mixing",
        "neighbors N", "max mixed second derivative", x_scale="log2", y_scale="log10",
    ),
    "fig2": FigureSpec(
        "fig2", "line+band", "Root-to-leaf sensitivity decay",
        "depth", "log10 Jacobian 1-norm",
    ),
    "fig9": FigureSpec(
        "fig9", "line+band", "Ring transfer accuracy vs ring size",
        "ring size", "test accuracy", y_limits=(0.0, 1.05),
    ),
    "table1-desk": FigureSpec(
        "table1-desk", "bar", "Structural regression error",
        "task", "log10 MSE",
    ),
}


# -- geometry helpers -------------------------------------------------------

_W, _H = 720.0, 480.0
_ML, _MR, _MT, _MB = 76.0, 20.0, 44.0, 60.0
_LOG_FLOOR = 1e-30


def _fmt(v: float) -> str:
    """Fixed coordinate formatting so output bytes never drift."""
    return f"{v:.2f}"


def _fmt_tick(v: float) -> str:
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return f"{v:g}"


def _transform(value: float, scale: str) -> float:
    if scale == "linear":
        return float(value)
    if value <= 0.0:
        raise ValueError(f"log scale needs positive values, got {value!r}")
    base = 2.0 if scale == "log2" else 10.0
    return math.log(max(value, _LOG_FLOOR), base)


def _lin_ticks(lo: float, hi: float, target: int = 6) -> list:
    if hi <= lo:
        hi = lo + 1.0
    span = hi - lo
    raw = span / target
    mag = 10.0 ** math.floor(math.log10(raw))
    for mult in (1.0, 2.0, 5.0, 10.0):
        if raw <= mult * mag:
            step = mult * mag
            break
    first = math.ceil(lo / step) * step
    ticks = []
    t = first
    while t <= hi + 1e-9 * span:
        ticks.append(0.0 if abs(t) < step * 1e-9 else t)
        t += step
    return ticks


def _log_ticks(lo_t: float, hi_t: float, base: float) -> list:
    """Tick positions in transformed units, at integer exponents."""
    first = math.ceil(lo_t - 1e-9)
    last = math.floor(hi_t + 1e-9)
    step = max(1, (last - first) // 6 + (1 if (last - first) % 6 else 0)) if last > first else 1
    return [(e, base**e) for e in range(first, last + 1, step)]


@dataclass
class _Axis:
    scale: str
    lo: float
    hi: float

    def to_px(self, value: float, px_lo: float, px_hi: float) -> float:
        t = _transform(value, self.scale)
        if self.hi == self.lo:
            frac = 0.5
        else:
            frac = (t - self.lo) / (self.hi - self.lo)
        return px_lo + frac * (px_hi - px_lo)

    def ticks(self) -> list:
        """(transformed_pos, label) pairs."""
        if self.scale == "linear":
            return [(t, _fmt_tick(t)) for t in _lin_ticks(self.lo, self.hi)]
        base = 2.0 if self.scale == "log2" else 10.0
        return [(e, _fmt_tick(v)) for e, v in _log_ticks(self.lo, self.hi, base)]


def _axis_range(values, scale: str, limits=None) -> _Axis:
    ts = [_transform(v, scale) for v in values]
    lo, hi = min(ts), max(ts)
    if limits is not None:
        lo = limits[0] if scale == "linear" else _transform(max(limits[0], _LOG_FLOOR), scale)
        hi = limits[1] if scale == "linear" else _transform(limits[1], scale)
    elif lo == hi:
        pad = 0.5 if lo == 0 else abs(lo) * 0.1
        lo, hi = lo - pad, hi + pad
    else:
        pad = (hi - lo) * 0.05
        lo, hi = lo - pad, hi + pad
    return _Axis(scale, lo, hi)


# -- svg assembly -----------------------------------------------------------


def _esc(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


class _Svg:
    def __init__(self):
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{int(_W)}" height="{int(_H)}" '
            f'viewBox="0 0 {int(_W)} {int(_H)}" font-family="Helvetica, Arial, sans-serif">',
            f'<rect width="{int(_W)}" height="{int(_H)}" fill="#ffffff"/>',
        ]

    def line(self, x1, y1, x2, y2, stroke, width=1.0, dash=None):
        d = f' stroke-dasharray="{dash}"' if dash else ""
        self.parts.append(
            f'<line x1="{_fmt(x1)}" y1="{_fmt(y1)}" x2="{_fmt(x2)}" y2="{_fmt(y2)}" '
            f'stroke="{stroke}" stroke-width="{_fmt(width)}"{d}/>'
        )

    def polyline(self, pts, stroke, width=2.0):
        body = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in pts)
        self.parts.append(
            f'<polyline points="{body}" fill="none" stroke="{stroke}" stroke-width="{_fmt(width)}"/>'
        )

    def polygon(self, pts, fill, opacity):
        body = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in pts)
        self.parts.append(f'<polygon points="{body}" fill="{fill}" fill-opacity="{opacity}"/>')

    def circle(self, cx, cy, r, fill):
        self.parts.append(f'<circle cx="{_fmt(cx)}" cy="{_fmt(cy)}" r="{_fmt(r)}" fill="{fill}"/>')

    def rect(self, x, y, w, h, fill, opacity=None, stroke=None):
        o = f' fill-opacity="{opacity}"' if opacity is not None else ""
        s = f' stroke="{stroke}"' if stroke else ""
        self.parts.append(
            f'<rect x="{_fmt(x)}" y="{_fmt(y)}" width="{_fmt(w)}" height="{_fmt(h)}" fill="{fill}"{o}{s}/>'
        )

    def text(self, x, y, s, size=12, anchor="middle", fill="#222222", rotate=None):
        r = f' transform="rotate({rotate} {_fmt(x)} {_fmt(y)})"' if rotate is not None else ""
        self.parts.append(
            f'<text x="{_fmt(x)}" y="{_fmt(y)}" font-size="{size}" text-anchor="{anchor}" '
            f'fill="{fill}"{r}>{_esc(s)}</text>'
        )

    def done(self) -> str:
        return "\n".join(self.parts + ["</svg>"]) + "\n"


def _frame(svg: _Svg, spec: FigureSpec, xaxis: _Axis, yaxis: _Axis):
    x0, x1 = _ML, _W - _MR
    y0, y1 = _H - _MB, _MT  # px grows downward
    svg.text(_W / 2.0, _MT - 18.0, spec.title, size=15)
    for t, label in xaxis.ticks():
        if t < xaxis.lo - 1e-9 or t > xaxis.hi + 1e-9:
            continue
        frac = 0.5 if xaxis.hi == xaxis.lo else (t - xaxis.lo) / (xaxis.hi - xaxis.lo)
        px = x0 + frac * (x1 - x0)
        svg.line(px, y0, px, y1, "#dddddd")
        svg.line(px, y0, px, y0 + 5.0, "#222222")
        svg.text(px, y0 + 20.0, label)
    for t, label in yaxis.ticks():
        if t < yaxis.lo - 1e-9 or t > yaxis.hi + 1e-9:
            continue
        frac = 0.5 if yaxis.hi == yaxis.lo else (t - yaxis.lo) / (yaxis.hi - yaxis.lo)
        py = y0 + frac * (y1 - y0)
        svg.line(x0, py, x1, py, "#dddddd")
        svg.line(x0 - 5.0, py, x0, py, "#222222")
        svg.text(x0 - 9.0, py + 4.0, label, anchor="end")
    svg.line(x0, y0, x1, y0, "#222222", 1.5)
    svg.line(x0, y0, x0, y1, "#222222", 1.5)
    svg.text((x0 + x1) / 2.0, _H - 14.0, spec.xlabel, size=13)
    svg.text(18.0, (y0 + y1) / 2.0, spec.ylabel, size=13, rotate=-90)


def _legend(svg: _Svg, labels: list):
    x = _W - _MR - 8.0
    y = _MT + 10.0
    for i, label in enumerate(labels):
        color = PALETTE[i % len(PALETTE)]
        ly = y + 18.0 * i
        svg.line(x - 150.0, ly, x - 126.0, ly, color, 3.0)
        svg.text(x - 120.0, ly + 4.0, label, anchor="start", size=12)


def _series_from_rows(rows) -> dict:
    """Group aggregate rows by series label, keeping x order sorted."""
    series: dict = {}
    for row in rows:
        series.setdefault(row["series"], []).append(row)
    for label, srows in series.items():
        srows.sort(key=lambda r: _sort_x(r["x"]))
        xs = [r["x"] for r in srows]
        if len(set(xs)) != len(xs):
            raise ValueError(f"series {label!r} repeats an x value")
    return dict(sorted(series.items()))


def render_line_band(spec: FigureSpec, rows) -> str:
    if not rows:
        raise ValueError(f"{spec.fid}: no data rows")
    series = _series_from_rows(rows)
    xs_all = [r["x"] for r in rows]
    if any(isinstance(x, str) for x in xs_all):
        raise ValueError(f"{spec.fid}: line plot needs numeric x")
    xaxis = _axis_range(xs_all, spec.x_scale)
    band_vals = []
    for r in rows:
        band_vals.append(r["mean"])
        if spec.y_scale == "linear":
            band_vals.extend([r["mean"] - r["std"], r["mean"] + r["std"]])
        else:
            band_vals.append(r["mean"] + r["std"])  # lower edge clamps at floor
    yaxis = _axis_range(band_vals, spec.y_scale, spec.y_limits)

    svg = _Svg()
    _frame(svg, spec, xaxis, yaxis)

    def px_x(v):
        return xaxis.to_px(v, _ML, _W - _MR)

    def clamp_y(v):
        if spec.y_scale != "linear":
            v = max(v, _LOG_FLOOR)
        t = _transform(v, spec.y_scale)
        t = min(max(t, yaxis.lo), yaxis.hi)
        frac = 0.5 if yaxis.hi == yaxis.lo else (t - yaxis.lo) / (yaxis.hi - yaxis.lo)
        return (_H - _MB) + frac * (_MT - (_H - _MB))

    for i, (label, srows) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        upper = [(px_x(r["x"]), clamp_y(r["mean"] + r["std"])) for r in srows]
        lower = [(px_x(r["x"]), clamp_y(r["mean"] - r["std"])) for r in srows]
        if len(srows) > 1:
            svg.polygon(upper + lower[::-1], color, "0.18")
        line_pts = [(px_x(r["x"]), clamp_y(r["mean"])) for r in srows]
        if len(line_pts) > 1:
            svg.polyline(line_pts, color)
        for px, py in line_pts:
            svg.circle(px, py, 3.0, color)
    _legend(svg, list(series))
    return svg.done()


def render_bars(spec: FigureSpec, rows) -> str:
    if not rows:
        raise ValueError(f"{spec.fid}: no data rows")
    series = _series_from_rows(rows)
    categories = sorted({r["x"] for r in rows}, key=_sort_x)
    for label, srows in series.items():
        got = [r["x"] for r in srows]
        if got != sorted(categories, key=_sort_x):
            missing = set(categories) - set(got)
            raise ValueError(f"{spec.fid}: series {label!r} missing categories {sorted(missing, key=str)}")
    vals = []
    for r in rows:
        vals.extend([r["mean"] - r["std"], r["mean"] + r["std"], 0.0])
    lo, hi = min(vals), max(vals)
    pad = (hi - lo) * 0.08 or 1.0
    yaxis = _Axis("linear", lo - (pad if lo < 0 else 0.0), hi + pad)

    svg = _Svg()
    x0, x1 = _ML, _W - _MR
    y0, y1 = _H - _MB, _MT
    svg.text(_W / 2.0, _MT - 18.0, spec.title, size=15)
    for t, label in yaxis.ticks():
        if t < yaxis.lo - 1e-9 or t > yaxis.hi + 1e-9:
            continue
        frac = (t - yaxis.lo) / (yaxis.hi - yaxis.lo)
        py = y0 + frac * (y1 - y0)
        svg.line(x0, py, x1, py, "#dddddd")
        svg.line(x0 - 5.0, py, x0, py, "#222222")
        svg.text(x0 - 9.0, py + 4.0, label, anchor="end")
    svg.line(x0, y0, x1, y0, "#222222", 1.5)
    svg.line(x0, y0, x0, y1, "#222222", 1.5)
    svg.text((x0 + x1) / 2.0, _H - 14.0, spec.xlabel, size=13)
    svg.text(18.0, (y0 + y1) / 2.0, spec.ylabel, size=13, rotate=-90)

    def py_of(v):
        frac = (v - yaxis.lo) / (yaxis.hi - yaxis.lo)
        return y0 + frac * (y1 - y0)

    n_cat = len(categories)
    n_ser = len(series)
    slot = (x1 - x0) / n_cat
    group = slot * 0.76
    bar_w = group / n_ser
    base_py = py_of(max(yaxis.lo, min(0.0, yaxis.hi)))
    for ci, cat in enumerate(categories):
        cx = x0 + slot * (ci + 0.5)
        svg.text(cx, y0 + 20.0, str(cat))
        for si, (label, srows) in enumerate(series.items()):
            row = next(r for r in srows if r["x"] == cat)
            color = PALETTE[si % len(PALETTE)]
            bx = cx - group / 2.0 + si * bar_w
            top = py_of(row["mean"])
            y_hi, y_lo = min(top, base_py), max(top, base_py)
            svg.rect(bx + bar_w * 0.08, y_hi, bar_w * 0.84, max(y_lo - y_hi, 0.5), color, "0.85")
            if row["std"] > 0.0:
                ex = bx + bar_w / 2.0
                e_hi = py_of(row["mean"] + row["std"])
                e_lo = py_of(row["mean"] - row["std"])
                svg.line(ex, e_hi, ex, e_lo, "#222222", 1.2)
                svg.line(ex - 4.0, e_hi, ex + 4.0, e_hi, "#222222", 1.2)
                svg.line(ex - 4.0, e_lo, ex + 4.0, e_lo, "#222222", 1.2)
    _legend(svg, list(series))
    return svg.done()


def render_figure(fid: str, rows) -> str:
    """Aggregate rows to SVG text for one of the cataloged figures."""
    if fid not in FIGURES:
        raise ValueError(f"unknown figure id {fid!r}, expected one of {sorted(FIGURES)}")
    spec = FIGURES[fid]
    if spec.kind == "bar":
        return render_bars(spec, rows)
    return render_line_band(spec, rows)

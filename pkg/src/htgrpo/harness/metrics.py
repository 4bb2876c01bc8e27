"""Per-inner-step metrics rows, CSV/JSONL persistence and a small SVG plot."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path


@dataclass(frozen=True)
class MetricsRow:
    cycle: int
    stage: str
    k_s: int
    gamma: float
    mean_reward: float
    std_reward: float
    loss: float
    kl: float
    clip_fraction: float
    mean_ratio: float
    mean_entropy_structure: float
    mean_entropy_refinement: float


CSV_HEADER = [f.name for f in fields(MetricsRow)]
_INT_FIELDS = {"cycle", "k_s"}


def write_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for row in rows:
            # repr keeps floats round-trippable
            w.writerow([v if isinstance(v, str) else repr(v) for v in asdict(row).values()])


def _coerce(name: str, value: str):
    if name == "stage":
        return value
    if name in _INT_FIELDS:
        return int(value)
    return float(value)


def read_csv(path) -> list[MetricsRow]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != CSV_HEADER:
            raise ValueError(f"unexpected metrics header: {header}")
        return [MetricsRow(**{k: _coerce(k, v) for k, v in zip(header, rec)}) for rec in reader]


def write_jsonl(rows, path) -> None:
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(asdict(row)) + "\n")


def read_jsonl(path) -> list[MetricsRow]:
    with open(path) as fh:
        return [MetricsRow(**json.loads(line)) for line in fh if line.strip()]


def read_metrics(path) -> list[MetricsRow]:
    path = Path(path)
    if path.is_dir():
        path = path / "metrics.jsonl" if (path / "metrics.jsonl").exists() else path / "metrics.csv"
    return read_jsonl(path) if path.suffix == ".jsonl" else read_csv(path)


def per_cycle(rows) -> list[tuple[int, float, float]]:
    """(cycle, mean reward, mean loss) per cycle, in cycle order."""
    out: dict[int, list] = {}
    for row in rows:
        acc = out.setdefault(row.cycle, [row.mean_reward, 0.0, 0])
        acc[1] += row.loss
        acc[2] += 1
    return [(c, acc[0], acc[1] / acc[2]) for c, acc in sorted(out.items())]


def svg_plot(rows, width: int = 640, height: int = 320) -> str:
    """Line chart of mean reward and mean loss against cycle, as standalone SVG."""
    series = per_cycle(rows)
    pad = 40
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<text x="{width / 2}" y="{height - 8}" font-size="12" text-anchor="middle">cycle</text>',
    ]
    if series:
        cycles = [s[0] for s in series]
        c0, c1 = min(cycles), max(cycles)
        span_c = (c1 - c0) or 1
        for idx, (label, colour) in ((1, ("reward", "steelblue")), (2, ("loss", "firebrick"))):
            ys = [s[idx] for s in series]
            lo, hi = min(ys), max(ys)
            span = (hi - lo) or 1.0
            pts = " ".join(
                f"{pad + (c - c0) / span_c * (width - 2 * pad):.2f},"
                f"{height - pad - (y - lo) / span * (height - 2 * pad):.2f}"
                for c, y in zip(cycles, ys)
            )
            parts.append(f'<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{pts}"/>')
            ty = 16 if idx == 1 else 32
            parts.append(
                f'<text x="{width - pad}" y="{ty}" font-size="12" fill="{colour}" text-anchor="end">'
                f"{label} [{lo:.3g}, {hi:.3g}]</text>"
            )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"

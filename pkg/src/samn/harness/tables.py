"""Per-repetition CSV and Markdown summary tables."""
import csv
import io
import os
import tempfile
from dataclasses import asdict, dataclass
from pathlib import Path

from .metrics import METRICS, aggregate

COLUMNS = ("dataset", "model", "seed") + METRICS


@dataclass(frozen=True)
class ResultRow:
    dataset: str
    model: str
    seed: int
    accuracy: float
    precision: float
    recall: float
    f1: float


def atomic_write(path, text):
    """Write ``text`` to a temporary file beside ``path``, then rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def rows_to_csv(rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COLUMNS)
    for r in rows:
        # repr round-trips floats exactly
        writer.writerow([r.dataset, r.model, r.seed] + [repr(float(getattr(r, m))) for m in METRICS])
    return buf.getvalue()


def read_csv(path):
    with open(path, newline="") as fh:
        return [
            ResultRow(d["dataset"], d["model"], int(d["seed"]), *(float(d[m]) for m in METRICS))
            for d in csv.DictReader(fh)
        ]


def format_cell(mean, std):
    """Percent with two decimals: 0.9282, 0.0340 -> ``92.82±3.40``."""
    return f"{100 * mean:.2f}±{100 * std:.2f}"


def summary_markdown(rows):
    groups = {}
    for r in rows:
        groups.setdefault((r.dataset, r.model), []).append(asdict(r))
    lines = [
        "| Dataset | Model | Accuracy | Precision | Recall | F1 |",
        "|---|---|---|---|---|---|",
    ]
    for (dataset, model), members in groups.items():
        s = aggregate(members)
        cells = [format_cell(s.mean[m], s.std[m]) for m in METRICS]
        lines.append(f"| {dataset} | {model} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def emit_table(rows, out_dir, stem="results"):
    """Write ``<stem>.csv`` and ``<stem>.md`` into ``out_dir``; returns both paths."""
    if not rows:
        raise ValueError("emit_table needs at least one result row")
    out_dir = Path(out_dir)
    csv_path, md_path = out_dir / f"{stem}.csv", out_dir / f"{stem}.md"
    atomic_write(csv_path, rows_to_csv(rows))
    atomic_write(md_path, summary_markdown(rows))
    return csv_path, md_path

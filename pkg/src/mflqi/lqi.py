"""Per-link statistics built from detection events.

``mean_peak_mf`` on a unit-energy template scales linearly with the link's
channel amplitude and serves as the strength estimate; ``mean_peak_corr`` is
a match-confidence score.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .detector import DetectionEvent

CSV_COLUMNS = ("template_id", "count", "mean_peak_corr", "mean_peak_mf", "mean_rss",
               "inter_arrival_mean", "inter_arrival_std")


@dataclass(frozen=True)
class LinkStats:
    template_id: str
    event_count: int
    mean_peak_corr: float | None = None
    mean_rss: float | None = None
    mean_peak_mf: float | None = None
    inter_arrival_mean: float | None = None
    inter_arrival_std: float | None = None


def accumulate(events: Iterable[DetectionEvent], template_ids: Iterable[str] = ()) -> dict[str, LinkStats]:
    """Group events by template and take moments.

    ``template_ids`` adds zero-count entries for links that saw no events.
    Inter-arrival statistics need two events; the std is the population std.
    """
    by_id: dict[str, list[DetectionEvent]] = {tid: [] for tid in template_ids}
    for ev in events:
        by_id.setdefault(ev.template_id, []).append(ev)
    stats: dict[str, LinkStats] = {}
    for tid in sorted(by_id):
        evs = sorted(by_id[tid], key=lambda e: e.index)
        if not evs:
            stats[tid] = LinkStats(tid, 0)
            continue
        gaps = np.diff([e.index for e in evs]).astype(np.float64)
        stats[tid] = LinkStats(
            tid,
            len(evs),
            mean_peak_corr=float(np.mean([e.peak_corr for e in evs])),
            mean_rss=float(np.mean([e.rss for e in evs])),
            mean_peak_mf=float(np.mean([e.peak_mf for e in evs])),
            inter_arrival_mean=float(gaps.mean()) if gaps.size else None,
            inter_arrival_std=float(gaps.std()) if gaps.size else None,
        )
    return stats


def _fmt(v: float | None) -> str:
    return "" if v is None else repr(float(v))


def _parse(v: str) -> float | None:
    return None if v == "" else float(v)


def to_csv(stats: dict[str, LinkStats]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for tid in sorted(stats):
        s = stats[tid]
        w.writerow([s.template_id, s.event_count, _fmt(s.mean_peak_corr), _fmt(s.mean_peak_mf),
                    _fmt(s.mean_rss), _fmt(s.inter_arrival_mean), _fmt(s.inter_arrival_std)])
    return buf.getvalue()


def from_csv(text: str) -> dict[str, LinkStats]:
    reader = csv.DictReader(io.StringIO(text))
    missing = set(CSV_COLUMNS) - set(reader.fieldnames or ())
    if missing:
        raise ValueError(f"CSV is missing columns: {sorted(missing)}")
    out: dict[str, LinkStats] = {}
    for row in reader:
        out[row["template_id"]] = LinkStats(
            row["template_id"],
            int(row["count"]),
            mean_peak_corr=_parse(row["mean_peak_corr"]),
            mean_rss=_parse(row["mean_rss"]),
            mean_peak_mf=_parse(row["mean_peak_mf"]),
            inter_arrival_mean=_parse(row["inter_arrival_mean"]),
            inter_arrival_std=_parse(row["inter_arrival_std"]),
        )
    return out


def format_table(stats: dict[str, LinkStats], sample_rate_hz: float | None = None) -> str:
    """Aligned plain-text table; with a sample rate, spacing is shown in seconds too."""

    def num(v, spec=".4f"):
        return "-" if v is None or (isinstance(v, float) and math.isnan(v)) else format(v, spec)

    header = ["link", "count", "peak|c|", "peak|mf|", "rss", "gap", "gap std"]
    rows = []
    for tid in sorted(stats):
        s = stats[tid]
        gap = num(s.inter_arrival_mean, ".0f")
        if sample_rate_hz and s.inter_arrival_mean is not None:
            gap += f" ({s.inter_arrival_mean / sample_rate_hz:.3f}s)"
        rows.append([tid, str(s.event_count), num(s.mean_peak_corr), num(s.mean_peak_mf),
                     num(s.mean_rss, ".3g"), gap, num(s.inter_arrival_std, ".1f")])
    widths = [max(len(r[k]) for r in [header] + rows) for k in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(header, widths)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    lines.extend("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows)
    return "\n".join(lines)


def report(stats: dict[str, LinkStats], sample_rate_hz: float | None = None) -> tuple[str, str]:
    """Return (human-readable table, CSV text)."""
    return format_table(stats, sample_rate_hz), to_csv(stats)

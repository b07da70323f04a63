"""Three-threshold matched-filter cascade over a bank of templates.

Per sample ``i`` and template ``h`` (length N):

1. energy gate: the moving-average power ``rss[i]`` over ``energy_window``
   samples must exceed ``t1``, otherwise the matched filter is not evaluated
   and both ``mf_mag[i]`` and ``corr[i]`` are zero;
2. rising-edge gate: ``|mf[i]| / |mf[i-1]|`` must exceed ``t2``;
3. correlation gate: the centred, normalised correlation ``|c[i]|`` between
   the last N samples and the template must exceed ``t3``.

``mf[i]`` correlates the template against the window ``x[i-N+1 .. i]``, i.e.
the filter impulse response is the time-reversed template, so the output
peaks when the template's last sample lines up with ``i``.

Streams are processed in blocks of at most ``BLOCK`` samples.  Window sums
are rebuilt from scratch in every block, and correlation values that could
pass ``t3`` are recomputed two-pass before they are reported.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import fftconvolve

from .iq import SampleStream
from .template import Template

log = logging.getLogger(__name__)

BLOCK = 1 << 16
# Above this many multiply-accumulates per block the FFT path is cheaper.
_DIRECT_MAC_LIMIT = 1 << 20
# Streaming |c| this close below t3 is re-evaluated exactly.
_CANDIDATE_MARGIN = 1e-6
# Relative variance floor; below it a window is treated as constant.
_VAR_FLOOR = 1e-12


@dataclass(frozen=True)
class DetectorConfig:
    t1: float = 0.01
    t2: float = 1.0
    t3: float = 0.8
    energy_window: int = 16
    refractory: int | None = None  # None: template length

    def __post_init__(self) -> None:
        if not self.t1 >= 0:
            raise ValueError(f"t1 must be >= 0, got {self.t1}")
        if not self.t2 > 0:
            raise ValueError(f"t2 must be > 0, got {self.t2}")
        if not 0 < self.t3 <= 1:
            raise ValueError(f"t3 must be in (0, 1], got {self.t3}")
        if self.energy_window < 1:
            raise ValueError(f"energy_window must be >= 1, got {self.energy_window}")
        if self.refractory is not None and self.refractory < 1:
            raise ValueError(f"refractory must be >= 1, got {self.refractory}")

    def refractory_for(self, t: Template) -> int:
        return t.n if self.refractory is None else self.refractory


@dataclass
class GatedOutputs:
    rss: np.ndarray
    mf_mag: np.ndarray
    corr: np.ndarray


@dataclass(frozen=True, order=True)
class DetectionEvent:
    index: int
    template_id: str
    peak_corr: float = field(compare=False)
    peak_mf: float = field(compare=False)
    rss: float = field(compare=False)

    def to_dict(self) -> dict:
        return {"index": self.index, "template_id": self.template_id,
                "peak_corr": self.peak_corr, "peak_mf": self.peak_mf, "rss": self.rss}

    @classmethod
    def from_dict(cls, d: dict) -> "DetectionEvent":
        return cls(int(d["index"]), str(d["template_id"]), float(d["peak_corr"]),
                   float(d["peak_mf"]), float(d["rss"]))


def _as_array(x) -> np.ndarray:
    if isinstance(x, SampleStream):
        x = x.samples
    return np.asarray(x, dtype=np.complex128).reshape(-1)


def _taps(h) -> np.ndarray:
    return h.taps if isinstance(h, Template) else np.asarray(h, dtype=np.complex128)


# -- single-value operations --------------------------------------------------


def rss(stream, window: int = 16) -> np.ndarray:
    """Trailing moving-average power; the first ``window-1`` outputs average
    over the samples available so far."""
    if window < 1:
        raise ValueError("window must be >= 1")
    p = np.abs(_as_array(stream)) ** 2
    csum = np.concatenate(([0.0], np.cumsum(p)))
    idx = np.arange(p.size)
    lo = np.maximum(idx + 1 - window, 0)
    out = (csum[idx + 1] - csum[lo]) / (idx + 1 - lo)
    return np.maximum(out, 0.0)


def matched_filter(h, x, i: int) -> complex:
    """``mf[i] = sum_n conj(h[n]) * x[i-N+1+n]``; zero while ``i < N-1``."""
    taps = _taps(h)
    n = taps.size
    if i < n - 1:
        return 0j
    xa = _as_array(x)
    return complex(np.dot(np.conj(taps), xa[i - n + 1:i + 1]))


def matched_filter_series(h, x) -> np.ndarray:
    """Ungated ``mf`` for every sample of ``x`` (warm-up samples are zero)."""
    taps = _taps(h)
    xa = _as_array(x)
    out = np.zeros(xa.size, dtype=np.complex128)
    if xa.size >= taps.size:
        out[taps.size - 1:] = fftconvolve(xa, np.conj(taps[::-1]), mode="valid")
    return out


def mf_metric(mf_now: float, mf_prev: float) -> float:
    """Ratio of consecutive ``|mf|`` values.

    A rise from exactly zero counts as infinitely steep; zero over zero is 0.
    """
    if mf_now < 0 or mf_prev < 0:
        raise ValueError("mf_metric takes magnitudes")
    if mf_prev == 0:
        return float("inf") if mf_now > 0 else 0.0
    return mf_now / mf_prev


def _mf_metric_array(now: np.ndarray, prev: np.ndarray) -> np.ndarray:
    out = np.zeros_like(now)
    pos = prev > 0
    np.divide(now, prev, out=out, where=pos)
    out[~pos & (now > 0)] = np.inf
    return out


def pearson_corr(h, x_window) -> complex:
    """Centred complex correlation coefficient of a window against a template.

    Two-pass: both vectors are mean-removed before the inner product.  A
    constant window gives 0.
    """
    taps = _taps(h)
    w = _as_array(x_window)
    if w.size != taps.size:
        raise ValueError(f"window has {w.size} samples, template has {taps.size}")
    hc = taps - taps.mean()
    wc = w - w.mean()
    hv = np.vdot(hc, hc).real
    wv = np.vdot(wc, wc).real
    if hv == 0 or wv <= _VAR_FLOOR * np.vdot(w, w).real or wv == 0:
        return 0j
    c = np.vdot(hc, wc) / np.sqrt(hv * wv)
    mag = abs(c)
    if mag > 1.0:  # rounding only; Cauchy-Schwarz bounds |c| by 1
        c = c / mag
    return complex(c)


def _corr_from_sums(mf, s1, s2, hsum, hv, n) -> np.ndarray:
    """|c| from the window sums: numerator ``mf - S1*conj(sum h)/N``,
    window variance ``S2 - |S1|^2/N``."""
    num = mf - s1 * np.conj(hsum) / n
    varx = s2 - np.abs(s1) ** 2 / n
    ok = varx > _VAR_FLOOR * s2
    out = np.zeros(np.shape(mf))
    out[ok] = np.abs(num[ok]) / np.sqrt(varx[ok] * hv)
    return out


def _window_sums(ext: np.ndarray, starts: np.ndarray, n: int):
    c1 = np.concatenate(([0j], np.cumsum(ext)))
    c2 = np.concatenate(([0.0], np.cumsum(ext.real ** 2 + ext.imag ** 2)))
    return c1[starts + n] - c1[starts], c2[starts + n] - c2[starts]


def pearson_series(h, x) -> np.ndarray:
    """Ungated ``|c|`` for every sample via running window sums.

    This is the fast path the detector uses to pick candidates; warm-up
    samples are zero.  Values are not clamped.
    """
    taps = _taps(h)
    n = taps.size
    xa = _as_array(x)
    out = np.zeros(xa.size)
    if xa.size < n:
        return out
    hc = taps - taps.mean()
    hv = float(np.vdot(hc, hc).real)
    starts = np.arange(xa.size - n + 1)
    s1, s2 = _window_sums(xa, starts, n)
    mf = matched_filter_series(taps, xa)[n - 1:]
    out[n - 1:] = _corr_from_sums(mf, s1, s2, taps.sum(), hv, n)
    return out


def _pearson_exact_many(hc: np.ndarray, hv: float, windows: np.ndarray) -> np.ndarray:
    wc = windows - windows.mean(axis=1, keepdims=True)
    wv = np.einsum("ij,ij->i", wc.real, wc.real) + np.einsum("ij,ij->i", wc.imag, wc.imag)
    raw = np.einsum("ij,ij->i", windows.real, windows.real) + np.einsum(
        "ij,ij->i", windows.imag, windows.imag)
    num = np.abs(wc @ np.conj(hc))
    out = np.zeros(windows.shape[0])
    ok = (wv > _VAR_FLOOR * raw) & (wv > 0)
    out[ok] = num[ok] / np.sqrt(hv * wv[ok])
    return np.minimum(out, 1.0)


# -- streaming machinery --------------------------------------------------------


class _RssTracker:
    def __init__(self, window: int):
        self.window = window
        self.tail = np.zeros(0)
        self.seen = 0

    def update(self, x: np.ndarray) -> np.ndarray:
        p = x.real ** 2 + x.imag ** 2
        ext = np.concatenate((self.tail, p))
        t = self.tail.size
        csum = np.concatenate(([0.0], np.cumsum(ext)))
        j = np.arange(p.size) + t
        lo = np.maximum(j + 1 - self.window, 0)
        count = np.minimum(self.seen + np.arange(1, p.size + 1), self.window)
        out = np.maximum((csum[j + 1] - csum[lo]) / count, 0.0)
        keep = min(self.window - 1, ext.size)
        self.tail = ext[ext.size - keep:] if keep else np.zeros(0)
        self.seen += p.size
        return out


class _FilterState:
    """Per-template state carried between blocks."""

    def __init__(self, template: Template, cfg: DetectorConfig):
        self.t = template
        self.cfg = cfg
        taps = template.taps
        self.n = taps.size
        self.ctaps = np.conj(taps)
        self.kernel = np.conj(taps[::-1])
        self.hsum = taps.sum()
        self.hc = taps - taps.mean()
        self.hv = float(np.vdot(self.hc, self.hc).real)
        self.refractory = cfg.refractory_for(template)
        self.hist = np.zeros(0, dtype=np.complex128)
        self.prev_mag = 0.0
        self.pending: DetectionEvent | None = None
        self.mf_evaluations = 0

    def step(self, x: np.ndarray, r: np.ndarray, base: int):
        cfg, n = self.cfg, self.n
        L = x.size
        ext = np.concatenate((self.hist, x))
        h = self.hist.size
        g = base + np.arange(L)
        gated = (g >= n - 1) & (r > cfg.t1)
        idx = np.flatnonzero(gated)
        # window ending at block index j starts at ext index j + h - n + 1
        starts = idx + h - n + 1

        mf = np.zeros(L, dtype=np.complex128)
        if idx.size:
            self.mf_evaluations += idx.size
            if idx.size * n <= _DIRECT_MAC_LIMIT:
                mf[idx] = sliding_window_view(ext, n)[starts] @ self.ctaps
            else:
                mf[idx] = fftconvolve(ext, self.kernel, mode="valid")[starts]
        mf_mag = np.abs(mf)

        prev = np.empty(L)
        prev[0] = self.prev_mag
        prev[1:] = mf_mag[:-1]
        self.prev_mag = float(mf_mag[-1]) if L else self.prev_mag
        rising = gated & (_mf_metric_array(mf_mag, prev) > cfg.t2)

        corr = np.zeros(L)
        ridx = np.flatnonzero(rising)
        if ridx.size:
            rs = ridx + h - n + 1
            s1, s2 = _window_sums(ext, rs, n)
            approx = _corr_from_sums(mf[ridx], s1, s2, self.hsum, self.hv, n)
            cand = approx > cfg.t3 - _CANDIDATE_MARGIN
            if cand.any():
                cidx = ridx[cand]
                exact = _pearson_exact_many(
                    self.hc, self.hv, sliding_window_view(ext, n)[rs[cand]])
                corr[cidx] = np.where(exact > cfg.t3, exact, 0.0)

        events = self._cluster(corr, mf_mag, r, base)
        keep = min(n - 1, ext.size)
        self.hist = ext[ext.size - keep:].copy() if keep else np.zeros(0, dtype=np.complex128)
        return mf_mag, corr, events

    def _cluster(self, corr, mf_mag, r, base) -> list[DetectionEvent]:
        out: list[DetectionEvent] = []
        for j in np.flatnonzero(corr):
            gi = base + int(j)
            p = self.pending
            if p is not None and gi >= p.index + self.refractory:
                out.append(p)
                p = None
            if p is None or corr[j] > p.peak_corr:
                self.pending = DetectionEvent(gi, self.t.id, float(corr[j]),
                                              float(mf_mag[j]), float(r[j]))
        end = base + corr.size
        if self.pending is not None and end >= self.pending.index + self.refractory:
            out.append(self.pending)
            self.pending = None
        return out

    def flush(self) -> list[DetectionEvent]:
        out = [self.pending] if self.pending is not None else []
        self.pending = None
        return out


@dataclass
class BlockOutput:
    rss: np.ndarray
    mf_mag: dict[str, np.ndarray]
    corr: dict[str, np.ndarray]
    events: list[DetectionEvent]


class StreamingDetector:
    """Incremental cascade: feed chunks of any size, then :meth:`flush`.

    Each template keeps its own state; there is no coupling between filters.
    """

    def __init__(self, templates: Sequence[Template], cfg: DetectorConfig | None = None):
        templates = list(templates)
        if not templates:
            raise ValueError("at least one template is required")
        ids = [t.id for t in templates]
        if len(set(ids)) != len(ids):
            raise ValueError(f"template ids must be unique, got {ids}")
        self.cfg = cfg or DetectorConfig()
        self.templates = templates
        self._rss = _RssTracker(self.cfg.energy_window)
        self._filters = [_FilterState(t, self.cfg) for t in templates]
        self.position = 0

    @property
    def mf_evaluations(self) -> dict[str, int]:
        return {f.t.id: f.mf_evaluations for f in self._filters}

    def feed(self, chunk) -> BlockOutput:
        x = _as_array(chunk)
        rss_parts: list[np.ndarray] = []
        mf_parts: dict[str, list[np.ndarray]] = {t.id: [] for t in self.templates}
        corr_parts: dict[str, list[np.ndarray]] = {t.id: [] for t in self.templates}
        events: list[DetectionEvent] = []
        for s in range(0, x.size, BLOCK):
            block = x[s:s + BLOCK]
            r = self._rss.update(block)
            rss_parts.append(r)
            for f in self._filters:
                m, c, ev = f.step(block, r, self.position)
                mf_parts[f.t.id].append(m)
                corr_parts[f.t.id].append(c)
                events.extend(ev)
            self.position += block.size

        def cat(parts):
            return np.concatenate(parts) if parts else np.zeros(0)

        events.sort()
        return BlockOutput(cat(rss_parts), {k: cat(v) for k, v in mf_parts.items()},
                           {k: cat(v) for k, v in corr_parts.items()}, events)

    def flush(self) -> list[DetectionEvent]:
        events = [e for f in self._filters for e in f.flush()]
        events.sort()
        return events


@dataclass
class DetectionResult:
    events: list[DetectionEvent]
    outputs: dict[str, GatedOutputs] | None
    mf_evaluations: dict[str, int]
    n_samples: int

    def events_for(self, template_id: str) -> list[DetectionEvent]:
        return [e for e in self.events if e.template_id == template_id]


def process_stream(
    stream,
    templates: Sequence[Template],
    cfg: DetectorConfig | None = None,
    chunk_size: int | None = None,
    keep_traces: bool = True,
) -> DetectionResult:
    """Run the cascade over a whole stream.

    ``chunk_size`` only changes how the input is fed to the streaming engine;
    output is the same up to floating-point rounding.  With
    ``keep_traces=False`` the per-sample traces are dropped, which keeps
    memory flat on long captures.
    """
    det = StreamingDetector(templates, cfg)
    x = stream.samples if isinstance(stream, SampleStream) else np.asarray(stream)
    step = chunk_size or BLOCK
    events: list[DetectionEvent] = []
    rss_parts, mf_parts, corr_parts = [], {t.id: [] for t in det.templates}, {
        t.id: [] for t in det.templates}
    for s in range(0, x.size, step):
        out = det.feed(x[s:s + step])
        events.extend(out.events)
        if keep_traces:
            rss_parts.append(out.rss)
            for k in mf_parts:
                mf_parts[k].append(out.mf_mag[k].astype(np.float64))
                corr_parts[k].append(out.corr[k])
    events.extend(det.flush())
    events.sort()
    outputs = None
    if keep_traces:
        r = np.concatenate(rss_parts) if rss_parts else np.zeros(0)
        outputs = {
            k: GatedOutputs(r, np.concatenate(mf_parts[k]) if mf_parts[k] else np.zeros(0),
                            np.concatenate(corr_parts[k]) if corr_parts[k] else np.zeros(0))
            for k in mf_parts
        }
    log.debug("processed %d samples, %d events", x.size, len(events))
    return DetectionResult(events, outputs, det.mf_evaluations, int(x.size))


def iter_events(chunks: Iterable, templates: Sequence[Template], cfg: DetectorConfig | None = None):
    """Yield events from an iterable of chunks as soon as each is final."""
    det = StreamingDetector(templates, cfg)
    for chunk in chunks:
        yield from det.feed(chunk).events
    yield from det.flush()

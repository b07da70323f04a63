"""Matched-filter templates, one per monitored link.

A template holds the expected waveform segment in transmission order; the
detector slides it across the input and correlates window-by-window.
Templates come either from known bytes (protocol-aware) or from a clip of a
previous noisy capture (protocol-blind).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np

from .iq import SampleStream, read_iq_file, read_sidecar, sidecar_path, write_iq_file, write_sidecar
from .synth import CHIP_RATE_HZ, oqpsk_waveform


class TemplateError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Template:
    taps: np.ndarray
    id: str
    source: dict[str, Any] = field(default_factory=dict)
    normalized: bool = False

    def __post_init__(self) -> None:
        taps = np.array(self.taps, dtype=np.complex128).reshape(-1)
        if taps.size < 2:
            raise TemplateError(f"template {self.id!r}: need at least 2 taps, got {taps.size}")
        if not np.all(np.isfinite(taps)):
            raise TemplateError(f"template {self.id!r}: non-finite taps")
        if np.all(taps == taps[0]):
            raise TemplateError(f"template {self.id!r}: taps have zero variance")
        taps.setflags(write=False)
        object.__setattr__(self, "taps", taps)

    @property
    def n(self) -> int:
        return self.taps.size

    @property
    def energy(self) -> float:
        return float(np.vdot(self.taps, self.taps).real)


def template_from_bytes(data: bytes, samples_per_chip: int = 2, id: str = "") -> Template:
    """Protocol-aware template: the modulated waveform of ``data``."""
    data = bytes(data)
    if not data:
        raise TemplateError("template_from_bytes needs at least one byte")
    taps = oqpsk_waveform(data, samples_per_chip).astype(np.complex64)
    return Template(
        taps,
        id or data.hex().upper(),
        source={
            "kind": "bytes",
            "bytes": data.hex().upper(),
            "samples_per_chip": samples_per_chip,
            "sample_rate_hz": CHIP_RATE_HZ * samples_per_chip,
        },
    )


def template_from_recording(
    stream: SampleStream,
    start: int,
    length: int,
    id: str,
    path: str | None = None,
) -> Template:
    """Protocol-blind template: a verbatim clip ``stream[start:start+length]``."""
    if length < 2:
        raise TemplateError(f"clip length must be >= 2, got {length}")
    if start < 0 or start + length > len(stream):
        raise TemplateError(
            f"clip [{start}, {start + length}) is outside the {len(stream)}-sample recording"
        )
    clip = stream.samples[start:start + length]
    if np.all(clip == clip[0]):
        raise TemplateError(f"clip [{start}, {start + length}) has zero variance")
    return Template(
        clip,
        id,
        source={
            "kind": "recording",
            "path": None if path is None else str(path),
            "start": int(start),
            "length": int(length),
            "sample_rate_hz": stream.sample_rate_hz,
        },
    )


def normalize_template(t: Template) -> Template:
    """Scale taps to unit energy.  Correlation magnitudes are unaffected."""
    if t.normalized:
        return t
    return replace(t, taps=t.taps / np.sqrt(t.energy), normalized=True)


def locate_burst(stream: SampleStream, threshold: float, window: int = 16, start: int = 0) -> int | None:
    """First index ``>= start`` whose trailing ``window``-sample mean power exceeds ``threshold``.

    Returns the index where that window begins, i.e. the approximate burst
    onset, or ``None`` if the power never crosses.  A convenience for picking
    clip offsets; it does not know anything about packet structure.
    """
    p = np.abs(stream.samples[start:].astype(np.complex128)) ** 2
    if p.size < window:
        return None
    csum = np.concatenate(([0.0], np.cumsum(p)))
    mean = (csum[window:] - csum[:-window]) / window
    hits = np.flatnonzero(mean > threshold)
    if hits.size == 0:
        return None
    return start + int(hits[0])


def save_template(t: Template, path: str | Path) -> Path:
    """Write ``<name>.cf32`` taps and the ``<name>.meta.json`` descriptor."""
    path = Path(path)
    if path.suffix != ".cf32":
        path = path.with_name(path.name + ".cf32")
    fs = t.source.get("sample_rate_hz") or 1.0
    write_iq_file(SampleStream(t.taps, fs), path, sidecar=False)
    meta = {"id": t.id, "n": t.n, "source": t.source, "normalized": t.normalized,
            "sample_rate_hz": fs}
    write_sidecar(path, meta)
    return path


def load_template(path: str | Path) -> Template:
    path = Path(path)
    if path.suffix != ".cf32" and not path.exists():
        path = path.with_name(path.name + ".cf32")
    meta = read_sidecar(path)
    for key in ("id", "n"):
        if key not in meta:
            raise TemplateError(f"{sidecar_path(path)}: missing field '{key}'")
    stream = read_iq_file(path, sample_rate_hz=float(meta.get("sample_rate_hz") or 1.0))
    if len(stream) != int(meta["n"]):
        raise TemplateError(f"{path}: holds {len(stream)} taps but sidecar says n={meta['n']}")
    return Template(stream.samples, str(meta["id"]), dict(meta.get("source", {})),
                    bool(meta.get("normalized", False)))

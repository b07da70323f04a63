"""Complex baseband sample streams and raw ``.cf32`` file I/O.

A ``.cf32`` file holds interleaved little-endian float32 ``I0 Q0 I1 Q1 ...``.
The sample rate lives in a JSON sidecar (``capture.cf32`` ->
``capture.meta.json``) so the payload stays readable by any SDR tool.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

# Storage dtype of a stream; matches the on-disk format so read(write(s)) == s.
SAMPLE_DTYPE = np.complex64
_FILE_DTYPE = np.dtype("<c8")
_RECORD_BYTES = _FILE_DTYPE.itemsize


class IqFormatError(ValueError):
    """Raised for malformed IQ payloads or sidecars."""


def _first_nonfinite(samples: np.ndarray) -> int | None:
    bad = ~np.isfinite(samples)
    if bad.any():
        return int(np.flatnonzero(bad)[0])
    return None


@dataclass(frozen=True)
class SampleStream:
    """An immutable run of complex baseband samples at a fixed rate.

    ``samples`` is stored as complex64. Index 0 is the first sample; all
    downstream sample indices refer to positions in this array.
    """

    samples: np.ndarray
    sample_rate_hz: float
    metadata: dict[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        if not (self.sample_rate_hz > 0 and np.isfinite(self.sample_rate_hz)):
            raise ValueError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        arr = np.ascontiguousarray(np.asarray(self.samples).reshape(-1), dtype=SAMPLE_DTYPE)
        bad = _first_nonfinite(arr)
        if bad is not None:
            raise ValueError(f"non-finite sample at index {bad}")
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)
        object.__setattr__(self, "sample_rate_hz", float(self.sample_rate_hz))

    def __len__(self) -> int:
        return self.samples.size

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SampleStream):
            return NotImplemented
        return (
            self.sample_rate_hz == other.sample_rate_hz
            and self.samples.shape == other.samples.shape
            and self.samples.tobytes() == other.samples.tobytes()
        )

    __hash__ = None  # type: ignore[assignment]

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate_hz

    def chunks(self, size: int):
        """Yield consecutive read-only views of at most ``size`` samples."""
        if size < 1:
            raise ValueError("chunk size must be >= 1")
        for start in range(0, len(self), size):
            yield self.samples[start:start + size]


def sidecar_path(path: str | Path) -> Path:
    """Return the ``<name>.meta.json`` sidecar location for an IQ file."""
    p = Path(path)
    stem = p.name[: -len(p.suffix)] if p.suffix else p.name
    return p.with_name(stem + ".meta.json")


def read_sidecar(path: str | Path) -> dict[str, Any]:
    meta_path = sidecar_path(path)
    with open(meta_path, encoding="utf-8") as fh:
        meta = json.load(fh)
    if not isinstance(meta, dict):
        raise IqFormatError(f"{meta_path}: sidecar must be a JSON object")
    return meta


def write_sidecar(path: str | Path, meta: dict[str, Any]) -> Path:
    meta_path = sidecar_path(path)
    with open(meta_path, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return meta_path


def read_iq_file(path: str | Path, sample_rate_hz: float | None = None) -> SampleStream:
    """Load a ``.cf32`` capture.

    The sample rate comes from ``sample_rate_hz`` when given, otherwise from
    the sidecar's ``sample_rate_hz`` key; one of the two must exist.
    """
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) % _RECORD_BYTES:
        raise IqFormatError(
            f"{path}: truncated file, {len(raw)} bytes is not a multiple of "
            f"{_RECORD_BYTES}-byte IQ records"
        )
    meta: dict[str, Any] = {}
    if sidecar_path(path).exists():
        meta = read_sidecar(path)
    if sample_rate_hz is None:
        if "sample_rate_hz" not in meta:
            raise IqFormatError(
                f"{path}: no sample rate (missing {sidecar_path(path).name} "
                "and no explicit sample_rate_hz)"
            )
        sample_rate_hz = float(meta["sample_rate_hz"])
    samples = np.frombuffer(raw, dtype=_FILE_DTYPE).astype(SAMPLE_DTYPE)
    bad = _first_nonfinite(samples)
    if bad is not None:
        raise IqFormatError(f"{path}: non-finite sample at index {bad}")
    return SampleStream(samples, sample_rate_hz, metadata=meta)


def write_iq_file(
    stream: SampleStream,
    path: str | Path,
    extra_meta: dict[str, Any] | None = None,
    sidecar: bool = True,
) -> Path:
    """Write ``stream`` as ``.cf32`` plus (by default) its sidecar."""
    path = Path(path)
    bad = _first_nonfinite(stream.samples)
    if bad is not None:
        raise ValueError(f"non-finite sample at index {bad}")
    with open(path, "wb") as fh:
        fh.write(stream.samples.astype(_FILE_DTYPE, copy=False).tobytes())
    if sidecar:
        meta = dict(stream.metadata)
        meta.update(extra_meta or {})
        meta["sample_rate_hz"] = stream.sample_rate_hz
        write_sidecar(path, meta)
    return path

"""Baseband signal synthesis for detection experiments.

Produces IEEE 802.15.4 2.4 GHz O-QPSK frames, GMSK interferer bursts,
continuous-tone interferers and AWGN, and mixes them into a scene.

Timing convention: chips run at 2 Mchip/s; ``samples_per_chip=2`` gives a
4 Msps stream and 64 chips (128 samples) per byte.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence, Union

import numpy as np

from .iq import SAMPLE_DTYPE, SampleStream

CHIP_RATE_HZ = 2_000_000
CHIPS_PER_SYMBOL = 32
MAX_PAYLOAD = 127

# IEEE 802.15.4-2006 Table 24 (2450 MHz O-QPSK symbol-to-chip mapping),
# chips listed c0 first.  Chip c0 is transmitted first, even chips on I.
_CHIP_STRINGS = (
    "11011001110000110101001000101110",  # 0
    "11101101100111000011010100100010",  # 1
    "00101110110110011100001101010010",  # 2
    "00100010111011011001110000110101",  # 3
    "01010010001011101101100111000011",  # 4
    "00110101001000101110110110011100",  # 5
    "11000011010100100010111011011001",  # 6
    "10011100001101010010001011101101",  # 7
    "10001100100101100000011101111011",  # 8
    "10111000110010010110000001110111",  # 9
    "01111011100011001001011000000111",  # 10
    "01110111101110001100100101100000",  # 11
    "00000111011110111000110010010110",  # 12
    "01100000011101111011100011001001",  # 13
    "10010110000001110111101110001100",  # 14
    "11001001011000000111011110111000",  # 15
)
CHIP_TABLE = np.array([[int(c) for c in s] for s in _CHIP_STRINGS], dtype=np.int8)


def bytes_to_symbols(data: bytes | Sequence[int]) -> np.ndarray:
    """Split each byte into two 4-bit symbols, low nibble first."""
    arr = np.asarray(bytearray(data), dtype=np.uint8)
    out = np.empty(2 * arr.size, dtype=np.uint8)
    out[0::2] = arr & 0x0F
    out[1::2] = arr >> 4
    return out


def bytes_to_chips(data: bytes | Sequence[int]) -> np.ndarray:
    """Spread bytes to the 0/1 chip sequence (32 chips per symbol)."""
    return CHIP_TABLE[bytes_to_symbols(data)].reshape(-1)


def oqpsk_waveform(data: bytes | Sequence[int], samples_per_chip: int = 2) -> np.ndarray:
    """Half-sine O-QPSK baseband as a complex128 array.

    Even chips drive I and odd chips drive Q; each chip is a half-sine
    spanning two chip periods, with Q delayed by one chip period.  The Q tail
    past the last I pulse is cut so the output holds exactly
    ``64 * samples_per_chip`` samples per byte.
    """
    if samples_per_chip < 1:
        raise ValueError("samples_per_chip must be >= 1")
    chips = bytes_to_chips(data).astype(np.float64) * 2.0 - 1.0
    n_out = chips.size * samples_per_chip
    if n_out == 0:
        return np.zeros(0, dtype=np.complex128)
    span = 2 * samples_per_chip
    pulse = np.sin(np.pi * np.arange(span) / span)
    i_rail = (chips[0::2, None] * pulse).reshape(-1)
    q_rail = np.zeros(n_out, dtype=np.float64)
    q_full = (chips[1::2, None] * pulse).reshape(-1)
    q_rail[samples_per_chip:] = q_full[: n_out - samples_per_chip]
    return i_rail + 1j * q_rail


def modulate_oqpsk(
    data: bytes | Sequence[int],
    samples_per_chip: int = 2,
    sample_rate_hz: float | None = None,
) -> SampleStream:
    """Modulate bytes into a :class:`SampleStream` at ``2 MHz * samples_per_chip``."""
    if sample_rate_hz is None:
        sample_rate_hz = CHIP_RATE_HZ * samples_per_chip
    return SampleStream(oqpsk_waveform(data, samples_per_chip), sample_rate_hz)


def _gaussian_frequency_pulse(bt: float, samples_per_bit: int, span_bits: int = 4) -> np.ndarray:
    # Gaussian low-pass impulse response, time in bit periods.
    sigma = np.sqrt(np.log(2.0)) / (2.0 * np.pi * bt)
    half = span_bits * samples_per_bit // 2
    t = np.arange(-half, half + 1) / samples_per_bit
    g = np.exp(-0.5 * (t / sigma) ** 2)
    return g / g.sum()


def gmsk_waveform(bits: Sequence[int], bt: float = 0.3, samples_per_bit: int = 4) -> np.ndarray:
    """Unit-envelope GMSK baseband; each bit advances the phase by +-pi/2."""
    if not 0 < bt <= 1:
        raise ValueError(f"bt must be in (0, 1], got {bt}")
    if samples_per_bit < 1:
        raise ValueError("samples_per_bit must be >= 1")
    b = np.asarray(bits, dtype=np.float64).reshape(-1)
    if b.size == 0:
        return np.zeros(0, dtype=np.complex128)
    if np.any((b != 0) & (b != 1)):
        raise ValueError("bits must be 0 or 1")
    nrz = np.repeat(2.0 * b - 1.0, samples_per_bit)
    freq = np.convolve(nrz, _gaussian_frequency_pulse(bt, samples_per_bit), mode="same")
    phase = np.cumsum(freq) * (np.pi / 2.0 / samples_per_bit)
    return np.exp(1j * phase)


def gen_gmsk_burst(
    bits: Sequence[int],
    bt: float = 0.3,
    samples_per_bit: int = 4,
    sample_rate_hz: float = 4e6,
) -> SampleStream:
    return SampleStream(gmsk_waveform(bits, bt, samples_per_bit), sample_rate_hz)


def tone_waveform(length: int, freq_hz: float, sample_rate_hz: float) -> np.ndarray:
    if length < 0:
        raise ValueError("length must be >= 0")
    n = np.arange(length)
    return np.exp(2j * np.pi * (freq_hz / sample_rate_hz) * n)


def gen_continuous_burst(
    length: int,
    freq_hz: float = 50e3,
    sample_rate_hz: float = 4e6,
) -> SampleStream:
    """Unit-amplitude complex tone, the stand-in for a jammer that never stops."""
    return SampleStream(tone_waveform(length, freq_hz, sample_rate_hz), sample_rate_hz)


# -- frames and scene description -------------------------------------------


@dataclass(frozen=True)
class FrameSpec:
    """An 802.15.4 PHY frame: preamble, SFD, length byte, payload."""

    sfd: int
    payload: bytes = b""
    label: str = ""
    preamble_bytes: int = 4
    samples_per_chip: int = 2

    def __post_init__(self) -> None:
        if not 0 <= int(self.sfd) <= 0xFF:
            raise ValueError(f"sfd must be a single byte, got {self.sfd!r}")
        if self.preamble_bytes < 0:
            raise ValueError("preamble_bytes must be >= 0")
        object.__setattr__(self, "payload", bytes(self.payload))

    @property
    def n_bytes(self) -> int:
        return self.preamble_bytes + 2 + len(self.payload)

    @property
    def n_samples(self) -> int:
        return self.n_bytes * 2 * CHIPS_PER_SYMBOL * self.samples_per_chip

    def byte_offset(self, index: int) -> int:
        """Sample offset of frame byte ``index`` from the frame start."""
        return index * 2 * CHIPS_PER_SYMBOL * self.samples_per_chip

    @property
    def sfd_offset(self) -> int:
        return self.byte_offset(self.preamble_bytes)

    @property
    def payload_offset(self) -> int:
        return self.byte_offset(self.preamble_bytes + 2)


def build_frame(spec: FrameSpec) -> bytes:
    """Return preamble || SFD || length || payload."""
    if len(spec.payload) > MAX_PAYLOAD:
        raise ValueError(
            f"payload of {len(spec.payload)} bytes overflows the length byte (max {MAX_PAYLOAD})"
        )
    return bytes(spec.preamble_bytes) + bytes([spec.sfd, len(spec.payload)]) + spec.payload


@dataclass(frozen=True)
class GmskBurstSpec:
    """A GMSK interferer packet.  Defaults give 1 Mbit/s at 4 Msps."""

    bits: tuple[int, ...]
    bt: float = 0.3
    samples_per_bit: int = 4
    label: str = "gmsk"

    @classmethod
    def random(cls, n_bits: int, seed: int, **kw: Any) -> "GmskBurstSpec":
        rng = np.random.default_rng(seed)
        return cls(bits=tuple(int(b) for b in rng.integers(0, 2, n_bits)), **kw)

    @property
    def n_samples(self) -> int:
        return len(self.bits) * self.samples_per_bit


@dataclass(frozen=True)
class ContinuousBurstSpec:
    """Constant-envelope tone; ``length=None`` runs to the end of the scene."""

    length: int | None = None
    freq_hz: float = 50e3
    label: str = "continuous"


Source = Union[FrameSpec, GmskBurstSpec, ContinuousBurstSpec]


@dataclass(frozen=True)
class Emission:
    source: Source
    start: int
    gain: complex = 1.0
    cfo_hz: float = 0.0


@dataclass(frozen=True)
class SceneSpec:
    duration_s: float
    sample_rate_hz: float
    noise_power: float = 0.0
    emissions: tuple[Emission, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        object.__setattr__(self, "emissions", tuple(self.emissions))
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be positive")
        if self.duration_s < 0:
            raise ValueError("duration_s must be >= 0")
        if self.noise_power < 0:
            raise ValueError("noise_power must be >= 0")

    @property
    def n_samples(self) -> int:
        return int(round(self.duration_s * self.sample_rate_hz))

    def emission_length(self, em: Emission) -> int:
        src = em.source
        if isinstance(src, ContinuousBurstSpec) and src.length is None:
            return max(self.n_samples - em.start, 0)
        if isinstance(src, ContinuousBurstSpec):
            return src.length
        return src.n_samples

    def validate(self) -> None:
        total = self.n_samples
        for k, em in enumerate(self.emissions):
            n = self.emission_length(em)
            if em.start < 0 or em.start + n > total:
                raise ValueError(
                    f"emission {k} ({em.source.label or type(em.source).__name__}) "
                    f"spans [{em.start}, {em.start + n}) outside the scene's {total} samples"
                )

    def positions(self, label: str) -> list[int]:
        """Start indices of every emission whose source carries ``label``."""
        return [em.start for em in self.emissions if em.source.label == label]


def render_source(src: Source, length: int, sample_rate_hz: float) -> np.ndarray:
    if isinstance(src, FrameSpec):
        return oqpsk_waveform(build_frame(src), src.samples_per_chip)
    if isinstance(src, GmskBurstSpec):
        return gmsk_waveform(src.bits, src.bt, src.samples_per_bit)
    if isinstance(src, ContinuousBurstSpec):
        return tone_waveform(length, src.freq_hz, sample_rate_hz)
    raise TypeError(f"unknown source type {type(src).__name__}")


_NOISE_BLOCK = 1 << 20


def compose_scene(spec: SceneSpec, seed: int = 0) -> SampleStream:
    """Mix all emissions plus circularly-symmetric AWGN into one stream.

    Noise is drawn block-wise from ``numpy.random.default_rng(seed)`` so the
    result is deterministic for a given (spec, seed).
    """
    spec.validate()
    total = spec.n_samples
    out = np.zeros(total, dtype=SAMPLE_DTYPE)
    if spec.noise_power > 0:
        rng = np.random.default_rng(seed)
        scale = np.sqrt(spec.noise_power / 2.0)
        for start in range(0, total, _NOISE_BLOCK):
            n = min(_NOISE_BLOCK, total - start)
            block = rng.standard_normal((n, 2))
            out[start:start + n] = scale * (block[:, 0] + 1j * block[:, 1])
    cache: dict[tuple[Source, int], np.ndarray] = {}
    for em in spec.emissions:
        n = spec.emission_length(em)
        key = (em.source, n)
        if key not in cache:
            cache[key] = render_source(em.source, n, spec.sample_rate_hz)
        wave = complex(em.gain) * cache[key]
        if em.cfo_hz:
            wave = wave * np.exp(2j * np.pi * em.cfo_hz / spec.sample_rate_hz * np.arange(n))
        seg = slice(em.start, em.start + n)
        out[seg] = out[seg].astype(np.complex128) + wave
    return SampleStream(out, spec.sample_rate_hz)


# -- scene.json ---------------------------------------------------------------


class SceneFormatError(ValueError):
    """A scene document is missing a field or holds an invalid value."""


def _req(obj: dict, key: str, where: str) -> Any:
    if not isinstance(obj, dict):
        raise SceneFormatError(f"'{where}' must be a JSON object")
    if key not in obj:
        raise SceneFormatError(f"missing field '{where}.{key}'" if where else f"missing field '{key}'")
    return obj[key]


def _parse_byte(value: Any, where: str) -> int:
    if isinstance(value, str):
        value = int(value, 16 if value.lower().startswith("0x") else 10)
    if not isinstance(value, int) or not 0 <= value <= 0xFF:
        raise SceneFormatError(f"'{where}' must be one byte")
    return value


def _parse_bytes(value: Any, where: str) -> bytes:
    if isinstance(value, str):
        try:
            return bytes.fromhex(value)
        except ValueError as exc:
            raise SceneFormatError(f"'{where}' is not a hex string: {exc}") from None
    if isinstance(value, list):
        return bytes(_parse_byte(v, f"{where}[{k}]") for k, v in enumerate(value))
    raise SceneFormatError(f"'{where}' must be a hex string or list of bytes")


def _parse_gain(value: Any, where: str) -> complex:
    if isinstance(value, (int, float)):
        return complex(value)
    if isinstance(value, list) and len(value) == 2:
        return complex(float(value[0]), float(value[1]))
    if isinstance(value, dict):
        amp = float(_req(value, "amplitude", where))
        return amp * np.exp(1j * float(value.get("phase_rad", 0.0)))
    raise SceneFormatError(f"'{where}' must be a number, [re, im] or {{amplitude, phase_rad}}")


def _source_from_dict(d: dict, where: str) -> Source:
    kind = _req(d, "type", where)
    label = str(d.get("label", ""))
    if kind == "frame":
        return FrameSpec(
            sfd=_parse_byte(_req(d, "sfd", where), f"{where}.sfd"),
            payload=_parse_bytes(d.get("payload", ""), f"{where}.payload"),
            label=label,
            preamble_bytes=int(d.get("preamble_bytes", 4)),
            samples_per_chip=int(d.get("samples_per_chip", 2)),
        )
    if kind == "gmsk":
        kw = dict(bt=float(d.get("bt", 0.3)), samples_per_bit=int(d.get("samples_per_bit", 4)),
                  label=label or "gmsk")
        if "bits" in d:
            bits = str(d["bits"])
            if set(bits) - {"0", "1"}:
                raise SceneFormatError(f"'{where}.bits' must be a string of 0/1")
            return GmskBurstSpec(bits=tuple(int(b) for b in bits), **kw)
        n_bits = int(_req(d, "n_bits", where))
        return GmskBurstSpec.random(n_bits, int(d.get("bits_seed", 0)), **kw)
    if kind == "continuous":
        length = d.get("length")
        return ContinuousBurstSpec(
            length=None if length is None else int(length),
            freq_hz=float(d.get("freq_hz", 50e3)),
            label=label or "continuous",
        )
    raise SceneFormatError(f"'{where}.type' must be one of frame, gmsk, continuous; got {kind!r}")


def scene_from_dict(doc: dict) -> SceneSpec:
    """Build a :class:`SceneSpec` from the ``scene.json`` document model.

    Each emission may carry ``repeat`` and ``interval`` (samples) to schedule
    a periodic transmitter without listing every packet.
    """
    fs = float(_req(doc, "sample_rate_hz", ""))
    emissions: list[Emission] = []
    for k, ed in enumerate(_req(doc, "emissions", "")):
        where = f"emissions[{k}]"
        src = _source_from_dict(_req(ed, "source", where), f"{where}.source")
        start = int(_req(ed, "start", where))
        gain = _parse_gain(ed.get("gain", 1.0), f"{where}.gain")
        cfo = float(ed.get("cfo_hz", 0.0))
        repeat = int(ed.get("repeat", 1))
        interval = int(_req(ed, "interval", where)) if repeat > 1 else 0
        for r in range(repeat):
            emissions.append(Emission(src, start + r * interval, gain, cfo))
    try:
        spec = SceneSpec(
            duration_s=float(_req(doc, "duration_s", "")),
            sample_rate_hz=fs,
            noise_power=float(doc.get("noise_power", 0.0)),
            emissions=tuple(emissions),
        )
        spec.validate()
    except SceneFormatError:
        raise
    except ValueError as exc:
        raise SceneFormatError(str(exc)) from None
    return spec


def _source_to_dict(src: Source) -> dict:
    if isinstance(src, FrameSpec):
        return {"type": "frame", "label": src.label, "sfd": f"0x{src.sfd:02X}",
                "payload": src.payload.hex().upper(), "preamble_bytes": src.preamble_bytes,
                "samples_per_chip": src.samples_per_chip}
    if isinstance(src, GmskBurstSpec):
        return {"type": "gmsk", "label": src.label, "bits": "".join(map(str, src.bits)),
                "bt": src.bt, "samples_per_bit": src.samples_per_bit}
    return {"type": "continuous", "label": src.label, "length": src.length, "freq_hz": src.freq_hz}


def scene_to_dict(spec: SceneSpec) -> dict:
    ems = []
    for em in spec.emissions:
        g = complex(em.gain)
        d: dict[str, Any] = {"source": _source_to_dict(em.source), "start": em.start,
                             "gain": [g.real, g.imag]}
        if em.cfo_hz:
            d["cfo_hz"] = em.cfo_hz
        ems.append(d)
    return {"duration_s": spec.duration_s, "sample_rate_hz": spec.sample_rate_hz,
            "noise_power": spec.noise_power, "emissions": ems}

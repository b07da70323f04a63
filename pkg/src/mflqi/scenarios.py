"""Scene documents for the three reference experiments.

Each builder returns a ``scene.json``-shaped dict; :func:`mflqi.synth.scene_from_dict`
turns it into a :class:`~mflqi.synth.SceneSpec`.  The shipped presets under
``mflqi/presets`` are these builders evaluated at their defaults.

Power levels: packets arrive at ``signal_power`` (0.1 by default) and the
noise floor sits at ``signal_power / 10**(snr_db/10)``, so idle air stays
below the 0.01 energy threshold with a wide margin.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources

from .synth import FrameSpec, SceneSpec, scene_from_dict

SAMPLE_RATE_HZ = 4e6
SIGNAL_POWER = 0.1
SAMPLES_PER_BYTE = 128  # 64 chips at 2 samples per chip

TX1_SFD = 0xA7
TX2_SFD = 0x98
TX1_ADDR = 0xAAAA
TX2_ADDR = 0x37BD

RECORDING_LEAD = 2000

# Fixed per-link carrier phase; the detector must not care.
_PHASE = {"tx1": 0.7, "tx2": -2.1, "if1": 1.3, "jam": 0.4}


def _mac_payload(node_addr: int, seq: int = 0x2C) -> bytes:
    """Minimal 802.15.4 data frame carrying a TinyOS-style AM message.

    FCF, sequence number, dest PAN, broadcast dest address, source address
    (the node's own), AM type, then a short application payload.
    """
    return bytes([0x41, 0x88, seq, 0x22, 0x00, 0xFF, 0xFF,
                  node_addr & 0xFF, node_addr >> 8, 0x3F,
                  0x00, 0x05, 0x13, 0x6E, 0x01, 0x10])


# Offset of the 2-byte dest + 2-byte source address block within the payload.
ADDRESS_PAYLOAD_OFFSET = 5
ADDRESS_BYTES = 4


@dataclass(frozen=True)
class Link:
    label: str
    frame: FrameSpec

    def frame_dict(self) -> dict:
        return {"type": "frame", "label": self.label, "sfd": f"0x{self.frame.sfd:02X}",
                "payload": self.frame.payload.hex().upper(),
                "preamble_bytes": self.frame.preamble_bytes,
                "samples_per_chip": self.frame.samples_per_chip}

    @property
    def sfd_end(self) -> int:
        """Offset of the last SFD sample from the frame start."""
        return self.frame.sfd_offset + SAMPLES_PER_BYTE - 1

    @property
    def address_offset(self) -> int:
        return self.frame.payload_offset + ADDRESS_PAYLOAD_OFFSET * SAMPLES_PER_BYTE


def aware_links() -> tuple[Link, Link]:
    return (Link("tx1", FrameSpec(TX1_SFD, _mac_payload(0x0001), "tx1")),
            Link("tx2", FrameSpec(TX2_SFD, _mac_payload(0x0002), "tx2")))


def blind_links() -> tuple[Link, Link]:
    # Same standard SFD on both motes; only the address block differs.
    return (Link("tx1", FrameSpec(0xA7, _mac_payload(TX1_ADDR), "tx1")),
            Link("tx2", FrameSpec(0xA7, _mac_payload(TX2_ADDR), "tx2")))


def _gain(label: str, power: float) -> dict:
    return {"amplitude": math.sqrt(power), "phase_rad": _PHASE[label]}


def _gmsk(n_bits: int, seed: int) -> dict:
    return {"type": "gmsk", "label": "if1", "n_bits": n_bits, "bits_seed": seed,
            "bt": 0.3, "samples_per_bit": 4}


def protocol_aware_doc(
    n_packets: int = 20,
    interval_s: float = 0.5,
    snr_db: float = 20.0,
    interferer_power: float = SIGNAL_POWER,
    sample_rate_hz: float = SAMPLE_RATE_HZ,
) -> dict:
    """Tx1, Tx2 and a GMSK interferer each sending one packet per interval,
    staggered so the three never overlap."""
    interval = int(round(interval_s * sample_rate_hz))
    lead = interval // 10
    tx1, tx2 = aware_links()
    ems = [
        {"source": tx1.frame_dict(), "start": lead, "gain": _gain("tx1", SIGNAL_POWER),
         "repeat": n_packets, "interval": interval},
        {"source": tx2.frame_dict(), "start": lead + interval // 3,
         "gain": _gain("tx2", SIGNAL_POWER), "repeat": n_packets, "interval": interval},
        {"source": _gmsk(600, 7), "start": lead + 2 * interval // 3,
         "gain": _gain("if1", interferer_power), "repeat": n_packets, "interval": interval},
    ]
    return {"duration_s": n_packets * interval / sample_rate_hz,
            "sample_rate_hz": sample_rate_hz,
            "noise_power": SIGNAL_POWER / 10 ** (snr_db / 10),
            "emissions": ems}


def protocol_blind_doc(
    n_packets: int = 10,
    interval_s: float = 1.0,
    interferer_interval_s: float = 0.5,
    snr_db: float = 20.0,
    interferer_power: float = SIGNAL_POWER,
    sample_rate_hz: float = SAMPLE_RATE_HZ,
) -> dict:
    """Two motes at one packet per ``interval_s``; GMSK bursts twice as often."""
    interval = int(round(interval_s * sample_rate_hz))
    if_interval = int(round(interferer_interval_s * sample_rate_hz))
    duration = n_packets * interval
    lead = interval // 10
    tx1, tx2 = blind_links()
    ems = [
        {"source": tx1.frame_dict(), "start": lead, "gain": _gain("tx1", SIGNAL_POWER),
         "repeat": n_packets, "interval": interval},
        {"source": tx2.frame_dict(), "start": lead + interval // 2 + if_interval // 7,
         "gain": _gain("tx2", SIGNAL_POWER), "repeat": n_packets, "interval": interval},
        {"source": _gmsk(600, 11), "start": lead + if_interval // 3,
         "gain": _gain("if1", interferer_power),
         "repeat": max(1, (duration - lead - if_interval // 3 - 2400) // if_interval + 1),
         "interval": if_interval},
    ]
    return {"duration_s": duration / sample_rate_hz, "sample_rate_hz": sample_rate_hz,
            "noise_power": SIGNAL_POWER / 10 ** (snr_db / 10), "emissions": ems}


def jammer_power(snir_db: float, noise_power: float, signal_power: float = SIGNAL_POWER) -> float:
    """Tone power that brings the packets' SNIR down to ``snir_db``."""
    return signal_power / 10 ** (snir_db / 10) - noise_power


def continuous_burst_doc(
    n_packets: int = 10,
    interval_s: float = 1.0,
    snir_db: float = -3.0,
    snr_db: float = 20.0,
    tone_freq_hz: float = 50e3,
    sample_rate_hz: float = SAMPLE_RATE_HZ,
) -> dict:
    """The protocol-blind motes under a jammer that is on for the whole scene."""
    interval = int(round(interval_s * sample_rate_hz))
    lead = interval // 10
    noise = SIGNAL_POWER / 10 ** (snr_db / 10)
    tx1, tx2 = blind_links()
    ems = [
        {"source": tx1.frame_dict(), "start": lead, "gain": _gain("tx1", SIGNAL_POWER),
         "repeat": n_packets, "interval": interval},
        {"source": tx2.frame_dict(), "start": lead + interval // 2,
         "gain": _gain("tx2", SIGNAL_POWER), "repeat": n_packets, "interval": interval},
        {"source": {"type": "continuous", "label": "jam", "length": None,
                    "freq_hz": tone_freq_hz},
         "start": 0, "gain": _gain("jam", jammer_power(snir_db, noise))},
    ]
    return {"duration_s": n_packets * interval / sample_rate_hz,
            "sample_rate_hz": sample_rate_hz, "noise_power": noise, "emissions": ems}


def recording_doc(link: Link, snr_db: float = 10.0, sample_rate_hz: float = SAMPLE_RATE_HZ) -> dict:
    """A short capture holding one packet of ``link``, for clipping a template."""
    lead = RECORDING_LEAD
    n = lead + link.frame.n_samples + RECORDING_LEAD
    return {"duration_s": n / sample_rate_hz, "sample_rate_hz": sample_rate_hz,
            "noise_power": SIGNAL_POWER / 10 ** (snr_db / 10),
            "emissions": [{"source": link.frame_dict(), "start": lead,
                           "gain": _gain(link.label, SIGNAL_POWER)}]}


PRESETS = {
    "protocol_aware": protocol_aware_doc,
    "protocol_blind": protocol_blind_doc,
    "continuous_burst": continuous_burst_doc,
}


def load_preset(name: str) -> SceneSpec:
    text = resources.files("mflqi.presets").joinpath(f"{name}.json").read_text(encoding="utf-8")
    return scene_from_dict(json.loads(text))


def preset_path(name: str):
    return resources.files("mflqi.presets").joinpath(f"{name}.json")

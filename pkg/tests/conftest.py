import numpy as np
import pytest

from mflqi import scenarios as sc
from mflqi.synth import compose_scene, scene_from_dict
from mflqi.template import template_from_bytes, template_from_recording

# Filled by tests/test_acceptance.py, printed at the end of the run.
ACCEPTANCE_LINES: dict[str, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES, key=lambda k: int(k.split(".")[0])):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def crandn(rng, n, power=1.0):
    return np.sqrt(power / 2) * (rng.standard_normal(n) + 1j * rng.standard_normal(n))


@pytest.fixture(scope="session")
def aware_templates():
    return [template_from_bytes(bytes([sc.TX1_SFD]), 2, "tx1"),
            template_from_bytes(bytes([sc.TX2_SFD]), 2, "tx2")]


CLIP_LENGTH = 576


@pytest.fixture(scope="session")
def blind_templates():
    """Clips of the address block from single-packet captures at 10 dB SNR."""
    out = []
    for k, link in enumerate(sc.blind_links()):
        rec = compose_scene(scene_from_dict(sc.recording_doc(link, snr_db=10.0)), 500 + k)
        out.append(template_from_recording(
            rec, sc.RECORDING_LEAD + link.address_offset, CLIP_LENGTH, link.label))
    return out

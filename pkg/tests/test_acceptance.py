"""Acceptance criteria, one test per criterion.

Each test records a one-line PASS/FAIL verdict that is printed in the
"acceptance criteria" section at the end of the pytest run.
"""

import json
import time
from dataclasses import replace

import numpy as np
import pytest

from mflqi import scenarios as sc
from mflqi.cli import main
from mflqi.detector import (
    DetectorConfig,
    matched_filter_series,
    pearson_corr,
    pearson_series,
    process_stream,
)
from mflqi.synth import Emission, SceneSpec, compose_scene, scene_from_dict
from mflqi.template import Template

from conftest import ACCEPTANCE_LINES, crandn

REFERENCE_CFG = DetectorConfig(t1=0.01, t2=1.0, t3=0.8)
MATCH_TOL = 16  # samples between an event and the expected alignment index


class Verdict:
    def __init__(self, key):
        self.key = key
        self.checks: list[tuple[str, bool]] = []
        self.info: list[str] = []

    def check(self, label, ok):
        self.checks.append((label, bool(ok)))
        return bool(ok)

    def note(self, text):
        self.info.append(text)

    def line(self, crashed=False):
        failed = [label for label, ok in self.checks if not ok]
        status = "FAIL" if failed or crashed or not self.checks else "PASS"
        detail = "; ".join(self.info)
        if failed:
            detail += " | failed: " + ", ".join(failed)
        if crashed:
            detail += " | raised before completing"
        return f"[{status}] {self.key}: {detail}"


@pytest.fixture
def verdict(request):
    v = Verdict(request.node.get_closest_marker("criterion").args[0])
    yield v
    if v.key not in ACCEPTANCE_LINES:
        ACCEPTANCE_LINES[v.key] = v.line(crashed=True)


def _finish(v):
    ACCEPTANCE_LINES[v.key] = v.line()
    print(ACCEPTANCE_LINES[v.key])
    failed = [label for label, ok in v.checks if not ok]
    assert not failed, v.line()


def _match(events, expected, tol=MATCH_TOL):
    """Pair events with expected indices; return (hits, strays)."""
    expected = np.asarray(sorted(expected))
    used = np.zeros(expected.size, dtype=bool)
    strays = []
    for e in events:
        d = np.abs(expected - e.index)
        k = int(np.argmin(d)) if d.size else -1
        if k >= 0 and d[k] <= tol and not used[k]:
            used[k] = True
        else:
            strays.append(e)
    return int(used.sum()), strays


def _check_links(v, res, expected):
    for label, idx in expected.items():
        hits, strays = _match(res.events_for(label), idx)
        peaks = [e.peak_corr for e in res.events_for(label)]
        v.note(f"{label} {hits}/{len(idx)} strays={len(strays)} "
               f"peak|c| {min(peaks, default=0):.3f}..{max(peaks, default=0):.3f}")
        v.check(f"{label} detected all", hits == len(idx))
        v.check(f"{label} no events off its own packets", not strays)


# -- 1 ---------------------------------------------------------------------------------


def _mf_direct(taps, x):
    """mf[i] = sum_k conj(g[i-k]) x[k], g the reversed template, with the loop over
    output samples vectorised and the loop over the N lags explicit."""
    g = taps[::-1]
    n = len(g)
    out = np.zeros(len(x), dtype=complex)
    i = np.arange(n - 1, len(x))
    for m in range(n):
        out[i] += np.conj(g[m]) * x[i - m]
    return out


def _mf_double_loop(taps, x):
    g = taps[::-1]
    n = len(g)
    out = np.zeros(len(x), dtype=complex)
    for i in range(n - 1, len(x)):
        acc = 0j
        for k in range(i - n + 1, i + 1):
            acc += np.conj(g[i - k]) * x[k]
        out[i] = acc
    return out


@pytest.mark.criterion("1. MF oracle equivalence")
def test_mf_oracle_equivalence(verdict):
    rng = np.random.default_rng(101)
    cfg = DetectorConfig(t1=0.0)
    worst = 0.0
    stream_time = 0.0
    long_pairs = 0
    for k in range(1000):
        n = int(rng.integers(8, 577))
        extra = int(rng.integers(0, 4000)) if k % 10 == 0 else int(rng.integers(0, 400))
        if extra * n > 1 << 20:
            long_pairs += 1
        h = crandn(rng, n, 10 ** rng.uniform(-2, 2))
        x = crandn(rng, n + extra, 10 ** rng.uniform(-2, 2))
        chunk = int(rng.integers(1, 2 * (n + extra)))
        t0 = time.perf_counter()
        res = process_stream(x, [Template(h, "h")], cfg, chunk_size=chunk)
        stream_time += time.perf_counter() - t0
        ref = np.abs(_mf_direct(h, x))
        got = res.outputs["h"].mf_mag
        err = np.abs(got[n - 1:] - ref[n - 1:]) / ref[n - 1:]
        worst = max(worst, float(err.max()))
        if k < 20:
            lit = _mf_double_loop(h[:16], x[:200])
            assert np.allclose(lit, _mf_direct(h[:16], x[:200]), rtol=1e-12, atol=1e-12)
        if k % 50 == 0:
            cx = matched_filter_series(h, x)[n - 1:]
            worst = max(worst, float(np.max(np.abs(cx - _mf_direct(h, x)[n - 1:])
                                            / np.abs(cx))))
    verdict.note(f"max rel err {worst:.1e} over 1000 pairs ({long_pairs} on the FFT path)")
    verdict.note(f"streaming time {stream_time:.2f} s")
    verdict.check("rel err <= 1e-6", worst <= 1e-6)
    verdict.check("runtime < 10 s", stream_time < 10.0)
    verdict.check("FFT path exercised", long_pairs > 0)
    _finish(verdict)


# -- 2 ---------------------------------------------------------------------------------


def _corr_two_pass(h, w):
    w = np.asarray(w, dtype=complex)
    h = np.asarray(h, dtype=complex)
    wc, hc = w - w.mean(), h - h.mean()
    den = np.sqrt(np.vdot(wc, wc).real * np.vdot(hc, hc).real)
    if den == 0 or np.vdot(wc, wc).real <= 1e-24 * np.vdot(w, w).real:
        return 0.0
    return float(abs(np.vdot(hc, wc)) / den)


@pytest.mark.criterion("2. Pearson properties")
def test_pearson_properties(verdict):
    rng = np.random.default_rng(202)
    over_one = 0
    oracle_err = 0.0
    for k in range(10_000):
        n = int(rng.integers(2, 577))
        h = crandn(rng, n)
        kind = k % 5
        if kind == 0:
            w = crandn(rng, n)
        elif kind == 1:  # strong DC offset
            w = crandn(rng, n, 1e-4) + complex(*rng.normal(size=2)) * 100
        elif kind == 2:  # real-valued
            w = rng.normal(size=n).astype(complex)
        elif kind == 3:  # partial match
            w = rng.uniform(0.5, 2) * h + crandn(rng, n, rng.uniform(0.01, 1))
        else:  # extreme scale
            w = crandn(rng, n, 10 ** rng.uniform(-12, 12))
        c = abs(pearson_corr(h, w))
        over_one += c > 1.0
        oracle_err = max(oracle_err, abs(c - _corr_two_pass(h, w)))
    affine_err = 0.0
    for _ in range(100):
        n = int(rng.integers(2, 577))
        h = crandn(rng, n)
        a = complex(*rng.normal(size=2)) * 10 ** rng.uniform(-3, 3)
        b = complex(*rng.normal(size=2)) * 10 ** rng.uniform(-3, 3)
        affine_err = max(affine_err, abs(abs(pearson_corr(h, a * h + b)) - 1.0))
    # running-sum series against the same oracle
    series_err = 0.0
    for _ in range(20):
        n = int(rng.integers(2, 200))
        h = crandn(rng, n)
        x = crandn(rng, 1500) + complex(*rng.normal(size=2))
        x[300:300 + n] += 2 * h
        ps = pearson_series(h, x)
        over_one += int(np.sum(ps > 1.0))
        ref = np.array([_corr_two_pass(h, x[i - n + 1:i + 1]) for i in range(n - 1, x.size)])
        series_err = max(series_err, float(np.max(np.abs(ps[n - 1:] - ref))))
    verdict.note(f"|c|>1 count {over_one}")
    verdict.note(f"affine max |1-|c|| {affine_err:.1e}")
    verdict.note(f"oracle max err {oracle_err:.1e}, series {series_err:.1e}")
    verdict.check("|c| <= 1", over_one == 0)
    verdict.check("affine within 1e-9", affine_err <= 1e-9)
    verdict.check("oracle within 1e-9", oracle_err <= 1e-9 and series_err <= 1e-9)
    _finish(verdict)


# -- 3 ---------------------------------------------------------------------------------


@pytest.mark.slow
@pytest.mark.criterion("3. Protocol-aware scenario")
def test_protocol_aware_scenario(verdict, aware_templates):
    spec = sc.load_preset("protocol_aware")
    verdict.note(f"{spec.n_samples / spec.sample_rate_hz:g} s scene")
    t0 = time.perf_counter()
    stream = compose_scene(spec, seed=1)
    t_synth = time.perf_counter() - t0
    t0 = time.perf_counter()
    res = process_stream(stream, aware_templates, REFERENCE_CFG, keep_traces=False)
    t_det = time.perf_counter() - t0
    expected = {link.label: [p + link.sfd_end for p in spec.positions(link.label)]
                for link in sc.aware_links()}
    for label, idx in expected.items():
        verdict.check(f"{label} has 20 packets", len(idx) == 20)
    _check_links(verdict, res, expected)
    verdict.note(f"synth {t_synth:.1f} s, detect {t_det:.1f} s")
    verdict.check("runtime < 30 s", t_synth + t_det < 30.0)
    _finish(verdict)


# -- 4 ---------------------------------------------------------------------------------


@pytest.mark.slow
@pytest.mark.criterion("4. Protocol-blind scenario")
def test_protocol_blind_scenario(verdict, blind_templates):
    doc = sc.protocol_blind_doc(n_packets=20, interval_s=0.5, interferer_interval_s=0.25)
    spec = scene_from_dict(doc)
    t0 = time.perf_counter()
    res = process_stream(compose_scene(spec, seed=2), blind_templates, REFERENCE_CFG,
                         keep_traces=False)
    elapsed = time.perf_counter() - t0
    clip = blind_templates[0].n
    expected = {link.label: [p + link.address_offset + clip - 1
                             for p in spec.positions(link.label)]
                for link in sc.blind_links()}
    _check_links(verdict, res, expected)
    verdict.note(f"{spec.n_samples / 4e6:g} s scene in {elapsed:.1f} s")
    _finish(verdict)


# -- 5 ---------------------------------------------------------------------------------


# 80,050 samples, not a whole number of 80-sample tone periods, so every
# packet meets the jammer at a different phase.
JAM_INTERVAL_S = 80_050 / 4e6


@pytest.mark.slow
@pytest.mark.criterion("5. Continuous-burst interference")
def test_continuous_burst(verdict, blind_templates):
    cfg = DetectorConfig(t1=0.01, t2=1.0, t3=0.5)
    clip = blind_templates[0].n
    means = {}
    for snir in (-3.0, 20.0):
        spec = scene_from_dict(sc.continuous_burst_doc(n_packets=20, interval_s=JAM_INTERVAL_S,
                                                       snir_db=snir))
        res = process_stream(compose_scene(spec, seed=3), blind_templates, cfg,
                             keep_traces=False)
        expected = {link.label: [p + link.address_offset + clip - 1
                                 for p in spec.positions(link.label)]
                    for link in sc.blind_links()}
        own = []
        for label, idx in expected.items():
            hits, strays = _match(res.events_for(label), idx)
            own += [e.peak_corr for e in res.events_for(label) if e not in strays]
            if snir < 0:
                verdict.note(f"{label} {hits}/20 strays={len(strays)}")
                verdict.check(f"{label} >= 19/20", hits >= 19)
                verdict.check(f"{label} no cross events", not strays)
        means[snir] = float(np.mean(own)) if own else 0.0
    verdict.note(f"mean peak |c| {means[-3.0]:.3f} at -3 dB vs {means[20.0]:.3f} at +20 dB")
    verdict.check("peak lower at -3 dB", means[-3.0] < means[20.0])
    _finish(verdict)


# -- 6 ---------------------------------------------------------------------------------


@pytest.mark.criterion("6. Energy-gate economy")
def test_energy_gate_economy(verdict, aware_templates):
    tx1, tx2 = sc.aware_links()
    frame_len = tx1.frame.n_samples
    period = 100 * frame_len  # 1% duty
    n_packets = 20
    ems = []
    for k in range(n_packets):
        link = (tx1, tx2)[k % 2]
        ems.append(Emission(link.frame, k * period + period // 2, np.sqrt(sc.SIGNAL_POWER)))
    spec = SceneSpec(n_packets * period / 4e6, 4e6, sc.SIGNAL_POWER / 100, tuple(ems))
    duty = n_packets * frame_len / spec.n_samples
    res = process_stream(compose_scene(spec, seed=6), aware_templates, REFERENCE_CFG,
                         keep_traces=False)
    frac = max(res.mf_evaluations.values()) / res.n_samples
    verdict.note(f"duty {duty:.2%}, MF evaluations {frac:.2%} of {res.n_samples} samples")
    verdict.note(f"{len(res.events)} events")
    verdict.check("duty about 1%", abs(duty - 0.01) < 1e-3)
    verdict.check("MF evaluations <= 5%", frac <= 0.05)
    verdict.check("packets still found", len(res.events) == n_packets)
    _finish(verdict)


# -- 7 ---------------------------------------------------------------------------------


@pytest.mark.criterion("7. False-alarm floor")
def test_false_alarm_floor(verdict, aware_templates, blind_templates):
    spec = SceneSpec(1e6 / 4e6, 4e6, 1e-4, ())
    stream = compose_scene(spec, seed=7)
    res = process_stream(stream, aware_templates, DetectorConfig(),
                         keep_traces=False)
    res_blind = process_stream(stream, blind_templates, DetectorConfig(), keep_traces=False)
    n_events = len(res.events) + len(res_blind.events)
    verdict.note(f"{len(stream)} noise samples, {n_events} events, "
                 f"MF evaluations {sum(res.mf_evaluations.values())}")
    verdict.check("1e6 samples", len(stream) == 10**6)
    verdict.check("zero events", n_events == 0)
    _finish(verdict)


# -- 8 ---------------------------------------------------------------------------------


def _pipeline(workdir, doc):
    workdir.mkdir()
    (workdir / "scene.json").write_text(json.dumps(doc))
    rc = [main(["synth", str(workdir / "scene.json"), "--seed", "8",
                "-o", str(workdir / "scene.cf32")])]
    for tid, sfd in (("tx1", "A7"), ("tx2", "98")):
        rc.append(main(["template", "--bytes", sfd, "--id", tid, "-o", str(workdir / tid)]))
    rc.append(main(["detect", str(workdir / "scene.cf32"), "-t", str(workdir / "tx1.cf32"),
                    "-t", str(workdir / "tx2.cf32"), "--events", str(workdir / "events.jsonl"),
                    "--trace", str(workdir / "trace.csv"), "--chunk-size", "12345"]))
    rc.append(main(["report", str(workdir / "events.jsonl"), "--csv",
                    str(workdir / "links.csv")]))
    assert rc == [0] * 5
    return {p.name: p.read_bytes() for p in sorted(workdir.iterdir())}


@pytest.mark.criterion("8. Determinism and chunking")
def test_determinism_and_chunking(verdict, tmp_path, aware_templates, blind_templates):
    rng = np.random.default_rng(808)
    doc = sc.protocol_blind_doc(n_packets=4, interval_s=0.02, interferer_interval_s=0.01)
    stream = compose_scene(scene_from_dict(doc), seed=8)
    templates = aware_templates + [replace(t, id=f"blind_{t.id}") for t in blind_templates]
    cfg = DetectorConfig(t3=0.5)
    whole = process_stream(stream, templates, cfg, chunk_size=len(stream))
    worst = {"rss": 0.0, "mf": 0.0, "corr": 0.0, "peak": 0.0}
    same_events = True
    for chunk in (1000, 4097, 65_536, 70_001, int(rng.integers(1, 3000))):
        part = process_stream(stream, templates, cfg, chunk_size=chunk)
        same_events &= [(e.index, e.template_id) for e in part.events] == \
                       [(e.index, e.template_id) for e in whole.events]
        for e, f in zip(part.events, whole.events):
            worst["peak"] = max(worst["peak"], abs(e.peak_corr - f.peak_corr))
        for tid, out in whole.outputs.items():
            other = part.outputs[tid]
            worst["rss"] = max(worst["rss"], float(np.max(np.abs(other.rss - out.rss))))
            scale = max(float(out.mf_mag.max()), 1e-30)
            worst["mf"] = max(worst["mf"],
                              float(np.max(np.abs(other.mf_mag - out.mf_mag))) / scale)
            worst["corr"] = max(worst["corr"], float(np.max(np.abs(other.corr - out.corr))))
    verdict.note(f"{len(whole.events)} events; chunked diffs rss {worst['rss']:.1e}, "
                 f"mf {worst['mf']:.1e} rel, corr {worst['corr']:.1e}, "
                 f"peak {worst['peak']:.1e}")
    verdict.check("events identical across chunkings", same_events)
    verdict.check("traces within 1e-9", max(worst.values()) <= 1e-9)
    verdict.check("some events", len(whole.events) >= 8)

    aware_doc = sc.protocol_aware_doc(n_packets=4, interval_s=0.01)
    a = _pipeline(tmp_path / "run1", aware_doc)
    b = _pipeline(tmp_path / "run2", aware_doc)
    verdict.note(f"CLI runs compared over {len(a)} files")
    verdict.check("CLI outputs byte-identical", a == b)
    verdict.check("CLI found events", a["events.jsonl"].count(b"\n") == 8)
    _finish(verdict)

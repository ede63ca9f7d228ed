"""Dominant-path channel behavior tests."""

import math

import numpy as np
import pytest

from subbeam.arrays import ArrayGeometry, Beamformer, conjugate_beam
from subbeam.codebook import UserLink
from subbeam.channel import (
    PathModel,
    Reflector,
    Scene,
    SceneUser,
    SlotBeamPlan,
    apply_downlink,
    apply_monostatic,
    default_rx_gain,
    load_scene,
    save_scene,
    scene_from_dict,
)
from subbeam.waveform import Numerology, SubSymbolSchedule, generate_slot

NUM = Numerology()
GEO = ArrayGeometry.ula(8)


def unity_plan(num_beams=2):
    # single-element "array": every beam has unit gain everywhere
    geo1 = ArrayGeometry.ula(1)
    beam = Beamformer(np.ones(1))
    sched = SubSymbolSchedule.for_numerology(NUM, num_beams)
    return geo1, SlotBeamPlan.uniform(NUM, sched, [beam] * num_beams, beam)


def test_identity_path_is_passthrough():
    geo1, plan = unity_plan()
    slot = generate_slot(NUM, "QPSK", seed=0)
    su = SceneUser(UserLink(0.0, 1.0), PathModel(1.0, 0.0, 0))
    scene = Scene(users=(su,), noise_power=1e-30, self_interference_inr_db=None)
    rx = apply_downlink(slot, plan, su, geo1, scene, seed=1)
    assert np.allclose(rx, slot.samples, atol=1e-12)


def test_gain_four_doubles_amplitude():
    geo2 = ArrayGeometry.ula(2)
    beam = Beamformer(np.ones(2))  # broadside gain 4
    sched = SubSymbolSchedule.for_numerology(NUM, 2)
    plan = SlotBeamPlan.uniform(NUM, sched, [beam, beam], beam)
    slot = generate_slot(NUM, "QPSK", seed=2)
    su = SceneUser(UserLink(0.0, 1.0), PathModel(1.0, 0.0, 0))
    scene = Scene(users=(su,), noise_power=1e-30, self_interference_inr_db=None)
    rx = apply_downlink(slot, plan, su, geo2, scene, seed=1)
    assert np.allclose(rx, 2.0 * slot.samples, atol=1e-12)


def test_delay_peaks_cross_correlation():
    geo1, plan = unity_plan()
    slot = generate_slot(NUM, "QPSK", seed=3)
    d = 5
    su = SceneUser(UserLink(0.0, 1.0), PathModel(0.8, 0.4, d))
    scene = Scene(users=(su,), noise_power=1e-12, self_interference_inr_db=None)
    rx = apply_downlink(slot, plan, su, geo1, scene, seed=7)
    lags = range(0, 12)
    corr = [abs(np.vdot(slot.samples[: -lag or None], rx[lag:])) for lag in lags]
    assert int(np.argmax(corr)) == d


def test_phase_and_attenuation_applied():
    geo1, plan = unity_plan()
    slot = generate_slot(NUM, "QPSK", seed=4)
    su = SceneUser(UserLink(0.0, 1.0), PathModel(0.25, 1.1, 0))
    scene = Scene(users=(su,), noise_power=1e-30, self_interference_inr_db=None)
    rx = apply_downlink(slot, plan, su, geo1, scene, seed=1)
    assert np.allclose(rx, 0.25 * np.exp(1.1j) * slot.samples, atol=1e-12)


def test_empty_scene_noise_power_calibrated():
    geo1, plan = unity_plan()
    slot = generate_slot(NUM, "QPSK", seed=5)
    scene = Scene(noise_power=2.5e-4, self_interference_inr_db=None)
    rx = apply_monostatic(slot, plan, scene, geo1, lambda az, el=0.0: 1.0, seed=9)
    measured = float(np.mean(np.abs(rx) ** 2))
    assert len(rx) > 1e4
    assert measured == pytest.approx(2.5e-4, rel=0.05)


def test_noise_tighter_calibration_100k_samples():
    rng_scene = Scene(noise_power=1e-3, self_interference_inr_db=None)
    geo1, plan = unity_plan()
    slot = generate_slot(NUM, "QPSK", seed=6)
    samples = []
    for seed in range(7):
        rx = apply_monostatic(slot, plan, rng_scene, geo1, lambda az, el=0.0: 1.0, seed=seed)
        samples.append(rx)
    allrx = np.concatenate(samples)
    assert len(allrx) > 1e5
    assert float(np.mean(np.abs(allrx) ** 2)) == pytest.approx(1e-3, rel=0.02)


def test_reflector_copies_aligned_window():
    # one reflector exactly at beam 1's angle: its sub-symbol window of the
    # received DMRS is a scaled shifted copy of the transmitted window
    geo = ArrayGeometry.ula(8)
    angles = [math.radians(-20), math.radians(15)]
    beams = [conjugate_beam(geo, a) for a in angles]
    sched = SubSymbolSchedule.for_numerology(NUM, 2)
    plan = SlotBeamPlan.uniform(NUM, sched, beams, beams[0])
    slot = generate_slot(NUM, "QPSK", seed=8)
    d = 4
    refl = Reflector(angles[1], PathModel(0.7, 0.3, d), label="x")
    scene = Scene(reflectors=(refl,), noise_power=1e-30, self_interference_inr_db=None)
    rx = apply_monostatic(slot, plan, scene, geo, lambda az, el=0.0: 1.0, seed=1)
    pos = NUM.dmrs_positions()[0]
    tx_body = slot.symbol_body(pos)
    sl = sched.window(1)
    g = 64.0  # conjugate gain toward its own angle
    expected = 0.7 * np.exp(0.3j) * math.sqrt(g) * tx_body[sl]
    # the echo of the last window spills past the symbol body, so index the
    # full received stream
    body_start = NUM.symbol_slice(pos, include_cp=False).start
    got = rx[body_start + sl.start + d : body_start + sl.stop + d]
    assert np.allclose(got, expected, atol=1e-9)


def test_orthogonal_reflectors_track_in_beam_power():
    # two reflectors in each other's beam nulls: per-window received power
    # follows only the in-beam reflector
    geo = ArrayGeometry.ula(8)
    # broadside and the first Dirichlet null of an 8-element array
    null_angle = math.asin(2.0 / 8.0)
    beams = [conjugate_beam(geo, 0.0), conjugate_beam(geo, null_angle)]
    sched = SubSymbolSchedule.for_numerology(NUM, 2)
    plan = SlotBeamPlan.uniform(NUM, sched, beams, beams[0])
    slot = generate_slot(NUM, "QPSK", seed=9)
    scene = Scene(
        reflectors=(
            Reflector(0.0, PathModel(0.5, 0.0, 0)),
            Reflector(null_angle, PathModel(0.5, 0.0, 0)),
        ),
        noise_power=1e-30,
        self_interference_inr_db=None,
    )
    rx = apply_monostatic(slot, plan, scene, geo, lambda az, el=0.0: 1.0, seed=2)
    pos = NUM.dmrs_positions()[0]
    rx_body = rx[NUM.symbol_slice(pos, include_cp=False)]
    tx_body = slot.symbol_body(pos)
    for m in range(2):
        sl = sched.window(m)
        ratio = np.mean(np.abs(rx_body[sl]) ** 2) / np.mean(np.abs(tx_body[sl]) ** 2)
        expected = 0.25 * 64.0  # alpha^2 * conjugate gain, other reflector nulled
        assert 10 * math.log10(ratio / expected) == pytest.approx(0.0, abs=0.5)


def test_linearity_of_reflector_responses():
    geo = ArrayGeometry.ula(8)
    beams = [conjugate_beam(geo, 0.0), conjugate_beam(geo, math.radians(10))]
    sched = SubSymbolSchedule.for_numerology(NUM, 2)
    plan = SlotBeamPlan.uniform(NUM, sched, beams, beams[0])
    slot = generate_slot(NUM, "QPSK", seed=10)
    r1 = Reflector(math.radians(3), PathModel(0.6, 0.5, 2))
    r2 = Reflector(math.radians(-7), PathModel(0.3, -0.9, 6))
    kw = dict(rx_gain_fn=lambda az, el=0.0: 1.0, seed=0)
    quiet = dict(noise_power=1e-30, self_interference_inr_db=None)
    rx1 = apply_monostatic(slot, plan, Scene(reflectors=(r1,), **quiet), geo, **kw)
    rx2 = apply_monostatic(slot, plan, Scene(reflectors=(r2,), **quiet), geo, **kw)
    rx12 = apply_monostatic(slot, plan, Scene(reflectors=(r1, r2), **quiet), geo, **kw)
    assert np.allclose(rx12, rx1 + rx2, atol=1e-9)


def test_amplitude_doubling_quadruples_power():
    geo1, plan = unity_plan()
    slot = generate_slot(NUM, "QPSK", seed=11)
    quiet = dict(noise_power=1e-30, self_interference_inr_db=None)
    kw = dict(rx_gain_fn=lambda az, el=0.0: 1.0, seed=0)
    rx_a = apply_monostatic(
        slot, plan, Scene(reflectors=(Reflector(0.0, PathModel(0.4, 0.0, 3)),), **quiet),
        geo1, **kw,
    )
    rx_b = apply_monostatic(
        slot, plan, Scene(reflectors=(Reflector(0.0, PathModel(0.8, 0.0, 3)),), **quiet),
        geo1, **kw,
    )
    p_a = np.sum(np.abs(rx_a) ** 2)
    p_b = np.sum(np.abs(rx_b) ** 2)
    assert p_b / p_a == pytest.approx(4.0, rel=1e-9)


def test_self_interference_level():
    geo1, plan = unity_plan()
    slot = generate_slot(NUM, "QPSK", seed=12)
    noise = 1e-6
    scene = Scene(noise_power=noise, self_interference_inr_db=20.0)
    rx = apply_monostatic(slot, plan, scene, geo1, lambda az, el=0.0: 1.0, seed=3)
    # leak should dominate the noise by ~20 dB
    leak_power = float(np.mean(np.abs(rx) ** 2)) - noise
    assert 10 * math.log10(leak_power / noise) == pytest.approx(20.0, abs=0.5)


def test_default_rx_gain_peak():
    gain = default_rx_gain()
    assert gain(0.0, 0.0) == pytest.approx(256.0, rel=1e-9)
    assert gain(0.3, 0.0) < 256.0


class TestSceneIo:
    def test_round_trip(self, tmp_path):
        scene = Scene(
            users=(SceneUser(UserLink(math.radians(30), 2.0), PathModel(0.5, 0.2, 3)),),
            reflectors=(Reflector(math.radians(-5), PathModel(0.25, -0.7, 6), label="box"),),
            noise_power=1e-5,
            self_interference_inr_db=None,
        )
        path = tmp_path / "scene.json"
        save_scene(path, scene)
        loaded = load_scene(path, NUM.sample_rate)
        assert loaded.users[0].link.base_snr == pytest.approx(2.0)
        assert loaded.users[0].path.attenuation == pytest.approx(0.5, rel=1e-9)
        assert loaded.users[0].path.delay_samples == 3
        assert loaded.reflectors[0].label == "box"
        assert loaded.noise_power == pytest.approx(1e-5)
        assert loaded.self_interference_inr_db is None

    def test_meters_conversion(self):
        c = 299792458.0
        d = {
            "users": [
                {"angle_deg": 0.0, "path": {"attenuation_db": 0.0, "delay_meters": 12.0}}
            ],
            "reflectors": [
                {"azimuth_deg": 0.0, "path": {"attenuation_db": 0.0, "delay_meters": 12.0}}
            ],
            "noise_power": 1e-6,
        }
        scene = scene_from_dict(d, NUM.sample_rate)
        one_way = round(NUM.sample_rate * 12.0 / c)
        assert scene.users[0].path.delay_samples == one_way
        assert scene.reflectors[0].path.delay_samples == round(
            NUM.sample_rate * 2 * 12.0 / c
        )

    def test_exactly_one_delay_spec(self):
        bad = {"users": [{"angle_deg": 0.0, "path": {"delay_samples": 1, "delay_meters": 2.0}}]}
        with pytest.raises(ValueError):
            scene_from_dict(bad, NUM.sample_rate)

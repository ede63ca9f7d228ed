"""Dominant-path channel simulation with sub-symbol beam switching.

Each link is a single path: amplitude attenuation, constant phase shift,
and an integer sample delay. The transmit gain seen by a delayed sample is
the gain of the beamformer that was active when that sample left the array,
so reflections straddling a beam switch are modeled faithfully.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .arrays import ArrayGeometry, Beamformer, beamforming_gain, conjugate_beam
from .codebook import UserLink
from .waveform import Numerology, SlotWaveform, SubSymbolSchedule

__all__ = [
    "SPEED_OF_LIGHT",
    "PathModel",
    "Reflector",
    "SceneUser",
    "Scene",
    "SlotBeamPlan",
    "apply_downlink",
    "apply_monostatic",
    "default_rx_gain",
    "save_scene",
    "load_scene",
]

SPEED_OF_LIGHT = 299792458.0
FIELD_OF_VIEW = math.radians(60.0)


@dataclass(frozen=True)
class PathModel:
    """One propagation path: amplitude attenuation, phase shift, sample delay."""

    attenuation: float
    phase_shift: float = 0.0
    delay_samples: int = 0

    def __post_init__(self):
        if not 0.0 <= self.attenuation <= 1.0:
            raise ValueError("attenuation must be in [0, 1]")
        if self.delay_samples < 0:
            raise ValueError("delay_samples must be >= 0")

    @property
    def coefficient(self) -> complex:
        return self.attenuation * np.exp(1j * self.phase_shift)


@dataclass(frozen=True)
class Reflector:
    azimuth: float
    path: PathModel
    elevation: float = 0.0
    label: str = ""

    def __post_init__(self):
        if abs(self.azimuth) > FIELD_OF_VIEW + 1e-12:
            raise ValueError("reflector azimuth outside the field of view")
        if abs(self.elevation) > FIELD_OF_VIEW + 1e-12:
            raise ValueError("reflector elevation outside the field of view")


@dataclass(frozen=True)
class SceneUser:
    link: UserLink
    path: PathModel


@dataclass(frozen=True)
class Scene:
    users: tuple[SceneUser, ...] = ()
    reflectors: tuple[Reflector, ...] = ()
    noise_power: float = 1e-3
    self_interference_inr_db: float | None = 20.0

    def __post_init__(self):
        if self.noise_power <= 0:
            raise ValueError("noise_power must be > 0")
        object.__setattr__(self, "users", tuple(self.users))
        object.__setattr__(self, "reflectors", tuple(self.reflectors))


@dataclass(frozen=True)
class SlotBeamPlan:
    """Which beamformer is active for every sample of a slot.

    ``dmrs_beams`` holds one beam list per DMRS symbol (in ascending symbol
    order); data symbols use the fixed ``data_beam``. CP samples inherit the
    beam of the body sample they duplicate, and samples in the schedule's
    unused tail keep the last window's beam.
    """

    numerology: Numerology
    schedule: SubSymbolSchedule
    dmrs_beams: tuple  # tuple[tuple[Beamformer, ...], ...]
    data_beam: Beamformer

    def __post_init__(self):
        per_symbol = []
        for beams in self.dmrs_beams:
            beams = tuple(beams)
            if len(beams) != self.schedule.num_beams:
                raise ValueError("beam list does not match the schedule size")
            per_symbol.append(beams)
        if len(per_symbol) != len(self.numerology.dmrs_positions()):
            raise ValueError("need one beam list per DMRS symbol")
        object.__setattr__(self, "dmrs_beams", tuple(per_symbol))

    @classmethod
    def uniform(cls, numerology, schedule, beams, data_beam) -> "SlotBeamPlan":
        """Same beam sweep on every DMRS symbol of the slot."""
        reps = len(numerology.dmrs_positions())
        return cls(numerology, schedule, tuple(tuple(beams) for _ in range(reps)), data_beam)

    def tx_amplitude(self, geometry: ArrayGeometry, azimuth: float,
                     elevation: float | None = None) -> np.ndarray:
        """sqrt(tx gain) toward one direction for every slot sample."""
        num = self.numerology
        amp = np.empty(num.slot_len)
        data_amp = math.sqrt(beamforming_gain(self.data_beam, geometry, azimuth, elevation))
        amp[:] = data_amp
        dmrs_positions = num.dmrs_positions()
        body_amp = np.empty(num.fft_size)
        for row, pos in enumerate(dmrs_positions):
            beams = self.dmrs_beams[row]
            gains = [
                math.sqrt(beamforming_gain(b, geometry, azimuth, elevation))
                for b in beams
            ]
            for m in range(self.schedule.num_beams):
                body_amp[self.schedule.window(m)] = gains[m]
            if self.schedule.unused_tail:
                body_amp[self.schedule.num_beams * self.schedule.sub_len:] = gains[-1]
            sl = num.symbol_slice(pos)
            cp = num.cp_length
            amp[sl] = np.concatenate([body_amp[-cp:] if cp else body_amp[:0], body_amp])
        return amp


def _complex_noise(rng, n, power):
    scale = math.sqrt(power / 2.0)
    return scale * (rng.standard_normal(n) + 1j * rng.standard_normal(n))


def _delayed(signal: np.ndarray, delay: int) -> np.ndarray:
    out = np.zeros_like(signal)
    if delay == 0:
        out[:] = signal
    elif delay < len(signal):
        out[delay:] = signal[: len(signal) - delay]
    return out


def apply_downlink(
    slot: SlotWaveform,
    plan: SlotBeamPlan,
    user: SceneUser,
    geometry: ArrayGeometry,
    scene: Scene,
    seed: int,
) -> np.ndarray:
    """Received samples at one user through its dominant path plus AWGN."""
    elevation = 0.0 if geometry.layout == "planar" else None
    amp = plan.tx_amplitude(geometry, user.link.angle, elevation)
    faded = user.path.coefficient * _delayed(amp * slot.samples, user.path.delay_samples)
    rng = np.random.default_rng(seed)
    return faded + _complex_noise(rng, len(faded), scene.noise_power)


def apply_monostatic(
    slot: SlotWaveform,
    plan: SlotBeamPlan,
    scene: Scene,
    geometry: ArrayGeometry,
    rx_gain_fn=None,
    seed: int = 0,
) -> np.ndarray:
    """Round-trip reflections captured at the co-located sensing receiver.

    Sums the per-reflector responses (TX gain taken at each sample's
    transmit time, RX gain from ``rx_gain_fn``), adds AWGN at the scene
    noise power, and, when configured, direct TX leakage at the scene's
    interference-to-noise ratio with zero delay.
    """
    rx_gain_fn = rx_gain_fn or default_rx_gain()
    elevation_aware = geometry.layout == "planar"
    out = np.zeros(len(slot.samples), dtype=complex)
    for refl in scene.reflectors:
        el = refl.elevation if elevation_aware else None
        amp = plan.tx_amplitude(geometry, refl.azimuth, el)
        rx_amp = math.sqrt(rx_gain_fn(refl.azimuth, refl.elevation))
        contribution = refl.path.coefficient * rx_amp * _delayed(
            amp * slot.samples, refl.path.delay_samples
        )
        out += contribution
    if scene.self_interference_inr_db is not None:
        mean_power = float(np.mean(np.abs(slot.samples) ** 2))
        if mean_power > 0:
            leak_power = scene.noise_power * 10.0 ** (scene.self_interference_inr_db / 10.0)
            out += math.sqrt(leak_power / mean_power) * slot.samples
    rng = np.random.default_rng(seed)
    return out + _complex_noise(rng, len(out), scene.noise_power)


def default_rx_gain(n_az: int = 4, n_el: int = 4, spacing: float = 0.5):
    """Fixed broadside conjugate beam on a small planar receive array."""
    geo = ArrayGeometry.planar(n_az, n_el, spacing)
    beam = conjugate_beam(geo, 0.0, 0.0)

    def gain(azimuth: float, elevation: float = 0.0) -> float:
        return beamforming_gain(beam, geo, azimuth, elevation)

    return gain


# ---------------------------------------------------------------------------
# Scene files (JSON; angles in degrees, attenuation in dB, delay in samples
# or meters — meters are converted with the supplied sample rate, one-way
# for users and round-trip for reflectors)
# ---------------------------------------------------------------------------


def _path_from_dict(d: dict, sample_rate: float, round_trip: bool) -> PathModel:
    if ("delay_samples" in d) == ("delay_meters" in d):
        raise ValueError("specify exactly one of delay_samples / delay_meters")
    if "delay_samples" in d:
        delay = int(d["delay_samples"])
    else:
        trips = 2.0 if round_trip else 1.0
        delay = round(sample_rate * trips * float(d["delay_meters"]) / SPEED_OF_LIGHT)
    return PathModel(
        attenuation=10.0 ** (float(d.get("attenuation_db", 0.0)) / 20.0),
        phase_shift=math.radians(float(d.get("phase_deg", 0.0))),
        delay_samples=delay,
    )


def scene_from_dict(d: dict, sample_rate: float) -> Scene:
    users = []
    for u in d.get("users", []):
        if "base_snr" in u:
            base_snr = u["base_snr"]
        elif "base_snr_db" in u:
            base_snr = 10.0 ** (u["base_snr_db"] / 10.0)
        else:
            base_snr = 1.0
        users.append(
            SceneUser(
                link=UserLink(math.radians(u["angle_deg"]), base_snr),
                path=_path_from_dict(u.get("path", {"delay_samples": 0}), sample_rate, False),
            )
        )
    reflectors = [
        Reflector(
            azimuth=math.radians(r["azimuth_deg"]),
            elevation=math.radians(r.get("elevation_deg", 0.0)),
            path=_path_from_dict(r["path"], sample_rate, True),
            label=r.get("label", ""),
        )
        for r in d.get("reflectors", [])
    ]
    noise_power = (
        d["noise_power"]
        if "noise_power" in d
        else 10.0 ** (d.get("noise_power_db", -30.0) / 10.0)
    )
    return Scene(
        users=tuple(users),
        reflectors=tuple(reflectors),
        noise_power=noise_power,
        self_interference_inr_db=d.get("self_interference_inr_db", 20.0),
    )


def scene_to_dict(scene: Scene) -> dict:
    def path_dict(p: PathModel) -> dict:
        att_db = -math.inf if p.attenuation == 0 else 20.0 * math.log10(p.attenuation)
        return {
            "attenuation_db": max(att_db, -400.0),
            "phase_deg": math.degrees(p.phase_shift),
            "delay_samples": p.delay_samples,
        }

    return {
        "users": [
            {
                "angle_deg": math.degrees(su.link.angle),
                "base_snr": su.link.base_snr,
                "path": path_dict(su.path),
            }
            for su in scene.users
        ],
        "reflectors": [
            {
                "label": r.label,
                "azimuth_deg": math.degrees(r.azimuth),
                "elevation_deg": math.degrees(r.elevation),
                "path": path_dict(r.path),
            }
            for r in scene.reflectors
        ],
        "noise_power": scene.noise_power,
        "self_interference_inr_db": scene.self_interference_inr_db,
    }


def save_scene(path, scene: Scene) -> None:
    with open(path, "w") as f:
        json.dump(scene_to_dict(scene), f, indent=2, sort_keys=True)
        f.write("\n")


def load_scene(path, sample_rate: float) -> Scene:
    with open(path) as f:
        return scene_from_dict(json.load(f), sample_rate)

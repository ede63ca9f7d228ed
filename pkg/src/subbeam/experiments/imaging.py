"""2D reflection imaging by sweeping pixel beams across azimuth and elevation.

Each DMRS symbol carries one chunk of pixel beams (one per sub-symbol
window); the received power of every pixel's sensing CSI fills the heatmap.
Pixel values are gain-normalized by default so brightness tracks
reflectivity rather than beam-gain variation; raw powers are kept too.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..arrays import ArrayGeometry, Beamformer, beamforming_gain, conjugate_beam, steering_vector
from ..channel import Scene, SlotBeamPlan, apply_monostatic, default_rx_gain
from ..codebook import OptimizerConfig, optimize_max_min, SensingTarget
from ..sensing import DelaySearchConfig, estimate_symbol_csi, extract_features
from ..waveform import Numerology, PredistortionPlan, SubSymbolSchedule, generate_slot

__all__ = ["ImagingGrid", "air_time", "run_imaging"]


@dataclass
class ImagingGrid:
    az_angles: np.ndarray  # radians
    el_angles: np.ndarray  # radians
    power_db: np.ndarray  # (n_el, n_az), gain-normalized
    raw_power_db: np.ndarray  # (n_el, n_az)
    slots_used: int
    air_time_ms: float  # whole-slot accounting
    air_time_ms_dmrs: float  # partial slot counted by DMRS symbols used


def air_time(num_pixels: int, beams_per_symbol: int, numerology: Numerology):
    """Both air-time accountings for a sweep of ``num_pixels`` directions.

    Whole-slot: ceil(pixels / (beams * DMRS symbols per slot)) slots.
    DMRS-counted: each fully-used DMRS symbol costs 1/D of a slot, with the
    partially-filled final symbol dropped from the tally.
    """
    d = len(numerology.dmrs_positions())
    per_slot = beams_per_symbol * d
    slots = math.ceil(num_pixels / per_slot)
    slot_ms = numerology.slot_duration * 1e3
    dmrs_ms = (num_pixels // beams_per_symbol) * slot_ms / d
    return slots, slots * slot_ms, dmrs_ms


def _pixel_beam(
    geometry: ArrayGeometry,
    azimuth: float,
    elevation: float,
    az_entries: dict | None,
) -> Beamformer:
    """Conjugate pixel beam; with users, azimuth weights come from the codebook.

    The planar weights are the separable product of the azimuth row weights
    and the conjugate elevation column taper.
    """
    if geometry.layout != "planar":
        raise ValueError("imaging requires a planar geometry")
    n_az, n_el = geometry.planar_shape
    if az_entries is None:
        return conjugate_beam(geometry, azimuth, elevation)
    w_az = az_entries[azimuth].weights.weights
    row_geo = ArrayGeometry.ula(n_el, geometry.spacing)
    w_el = np.conj(steering_vector(row_geo, elevation))
    return Beamformer(np.kron(w_el, w_az))


def run_imaging(
    scene: Scene,
    az_angles,
    el_angles,
    numerology: Numerology,
    geometry: ArrayGeometry,
    beams_per_symbol: int,
    cfg: OptimizerConfig,
    search: DelaySearchConfig,
    seed: int,
    repeats: int = 1,
) -> ImagingGrid:
    """Sweep all (azimuth, elevation) pixels and map received sensing power.

    With users in the scene the azimuth weights of each pixel column are
    optimized once per azimuth (max-min user SNR around that sensing angle)
    and combined with a conjugate elevation taper; otherwise pixels use
    plain planar conjugate beams. ``repeats`` re-runs the sweep on fresh
    slots and averages per-pixel power, suppressing the per-window fading
    ripple of a single snapshot; the air-time figures always describe one
    sweep.
    """
    az_angles = np.asarray(az_angles, dtype=float)
    el_angles = np.asarray(el_angles, dtype=float)
    users = [su.link for su in scene.users]

    az_entries = None
    if users:
        n_az = geometry.planar_shape[0]
        row_geo = ArrayGeometry.ula(n_az, geometry.spacing)
        az_entries = {
            az: optimize_max_min(users, SensingTarget(az), row_geo, cfg)
            for az in az_angles
        }

    pixels = [(az, el) for el in el_angles for az in az_angles]
    beams = [_pixel_beam(geometry, az, el, az_entries) for az, el in pixels]
    rx_gain = default_rx_gain()

    schedule = SubSymbolSchedule.for_numerology(numerology, beams_per_symbol)
    dmrs_positions = numerology.dmrs_positions()
    chunks = [beams[i : i + beams_per_symbol] for i in range(0, len(beams), beams_per_symbol)]
    chunk_sizes = [len(c) for c in chunks]
    for c in chunks:
        while len(c) < beams_per_symbol:  # pad the final symbol's sweep
            c.append(c[-1])

    plan = PredistortionPlan.identity(beams_per_symbol)
    raw_power = np.zeros(len(pixels))
    for sweep_idx in range(repeats):
        pixel = 0
        chunk_idx = 0
        slots_used = 0
        while chunk_idx < len(chunks):
            slot_chunks = chunks[chunk_idx : chunk_idx + len(dmrs_positions)]
            while len(slot_chunks) < len(dmrs_positions):
                slot_chunks.append(slot_chunks[-1])
            bplan = SlotBeamPlan(
                numerology, schedule, tuple(tuple(c) for c in slot_chunks), slot_chunks[0][0]
            )
            # Fresh reference sequence per slot: frozen DMRS would freeze the
            # per-window bin weights and bias pixels relative to each other.
            slot_seed = seed + 31 * slots_used + 1_000_003 * sweep_idx
            slot = generate_slot(numerology, "QPSK", seed=slot_seed, dmrs_seed=slot_seed)
            rx = apply_monostatic(
                slot, bplan, scene, geometry, rx_gain, seed=slot_seed + 7919
            )
            for row, pos in enumerate(dmrs_positions):
                if chunk_idx >= len(chunks):
                    break
                rx_body = rx[numerology.symbol_slice(pos, include_cp=False)]
                results = estimate_symbol_csi(
                    rx_body, slot.symbol_body(pos), schedule, search, plan
                )
                for m in range(chunk_sizes[chunk_idx]):
                    raw_power[pixel] += extract_features(results[m]).received_power
                    pixel += 1
                chunk_idx += 1
            slots_used += 1
    raw_power /= repeats

    norm = np.array(
        [
            beamforming_gain(b, geometry, az, el) * rx_gain(az, el)
            for b, (az, el) in zip(beams, pixels)
        ]
    )
    shape = (len(el_angles), len(az_angles))
    raw_db = 10.0 * np.log10(raw_power + 1e-30).reshape(shape)
    norm_db = 10.0 * np.log10(raw_power / norm + 1e-30).reshape(shape)
    slots, air_ms, air_ms_dmrs = air_time(len(pixels), beams_per_symbol, numerology)
    return ImagingGrid(
        az_angles=az_angles,
        el_angles=el_angles,
        power_db=norm_db,
        raw_power_db=raw_db,
        slots_used=slots,
        air_time_ms=air_ms,
        air_time_ms_dmrs=air_ms_dmrs,
    )

"""End-to-end single-scene simulation: codebook, slot, channel, both receivers.

This is the piece the `simulate` command and the baseline comparisons build
on: optimize the codebook for the scene's users, transmit one or more
pre-distorted slots, estimate the communication CSI at each user and the
sensing CSI at the base station, and score both sides.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..arrays import ArrayGeometry, Beamformer, beamforming_gain
from ..channel import Scene, SceneUser, SlotBeamPlan, apply_downlink, apply_monostatic, default_rx_gain
from ..codebook import Codebook, OptimizerConfig, UserLink, build_codebook, design_data_beam
from ..sensing import DelaySearchConfig, estimate_symbol_csi, extract_features
from ..waveform import (
    Numerology,
    PredistortionPlan,
    SlotWaveform,
    SubSymbolSchedule,
    build_predistortion_plan,
    demodulate_and_score,
    generate_slot,
    predistort_dmrs,
    slot_user_csi,
)

__all__ = ["LinkResult", "noise_power_for_user_snr", "genie_csi", "run_link"]


@dataclass
class LinkResult:
    per_user: list[dict]
    sensing_rows: list[dict]
    codebook: Codebook
    data_beam: Beamformer
    plan: PredistortionPlan


def noise_power_for_user_snr(
    snr_db: float,
    data_beam: Beamformer,
    geometry: ArrayGeometry,
    user: SceneUser,
    numerology: Numerology,
) -> float:
    """Noise power giving the requested per-subcarrier data SNR at a user.

    Occupied-bin signal power is g_data * attenuation^2 (unit-power
    constellations); an FFT bin collects fft_size times the per-sample
    noise power.
    """
    elevation = 0.0 if geometry.layout == "planar" else None
    g = beamforming_gain(data_beam, geometry, user.link.angle, elevation)
    snr = 10.0 ** (snr_db / 10.0)
    return g * user.path.attenuation**2 / (numerology.fft_size * snr)


def genie_csi(
    data_beam: Beamformer,
    geometry: ArrayGeometry,
    user: SceneUser,
    numerology: Numerology,
) -> np.ndarray:
    """Exact data-symbol channel at the occupied bins (no estimation error)."""
    elevation = 0.0 if geometry.layout == "planar" else None
    g = beamforming_gain(data_beam, geometry, user.link.angle, elevation)
    bins = numerology.occupied_bins()
    ramp = np.exp(
        -2j * np.pi * np.fft.fftfreq(numerology.fft_size)[bins] * user.path.delay_samples
    )
    return math.sqrt(g) * user.path.coefficient * ramp


def run_link(
    scene: Scene,
    geometry: ArrayGeometry,
    sweep: list[float],
    numerology: Numerology,
    cfg: OptimizerConfig,
    search: DelaySearchConfig,
    snr_db: float,
    modulation: str,
    seed: int,
    num_slots: int = 1,
    predistort: bool = True,
    codebook: Codebook | None = None,
) -> LinkResult:
    """Simulate ``num_slots`` slots over one scene and score both functions.

    User-side noise is set per user from ``snr_db`` (data-symbol,
    per-subcarrier); the sensing receiver uses the scene's own noise power.
    EVM is reported for the estimated CSI and for genie CSI on the same
    received samples.
    """
    users = [su.link for su in scene.users]
    if codebook is None:
        codebook = build_codebook(users, sweep, 1.0, geometry, cfg)
    beams = codebook.beams()
    schedule = SubSymbolSchedule.for_numerology(numerology, len(beams))
    if users:
        data_beam = design_data_beam(users, geometry, cfg)
        plan = build_predistortion_plan(beams, data_beam, users, geometry)
    else:
        data_beam = beams[0]
        plan = PredistortionPlan.identity(len(beams))
    applied_plan = plan if predistort else PredistortionPlan.identity(len(beams))
    bplan = SlotBeamPlan.uniform(numerology, schedule, beams, data_beam)
    rx_gain = default_rx_gain()

    per_user_acc = [
        {"evm_sq_est": 0.0, "evm_sq_genie": 0.0, "bit_errors": 0, "bits": 0}
        for _ in scene.users
    ]
    sensing_rows: list[dict] = []
    data_pos = numerology.data_positions()

    for slot_idx in range(num_slots):
        reference = generate_slot(numerology, modulation, seed=seed + 1000 * slot_idx)
        tx = predistort_dmrs(reference, schedule, applied_plan) if users else reference

        # Sensing side (monostatic, scene noise)
        rx_sense = apply_monostatic(
            tx, bplan, scene, geometry, rx_gain, seed=seed + 7919 * slot_idx
        )
        for sym_row, pos in enumerate(numerology.dmrs_positions()):
            rx_body = rx_sense[numerology.symbol_slice(pos, include_cp=False)]
            results = estimate_symbol_csi(
                rx_body, reference.symbol_body(pos), schedule, search, applied_plan
            )
            for m, res in enumerate(results):
                feats = extract_features(res)
                angle = codebook.entries[m].sensing_angle
                g_norm = beamforming_gain(beams[m], geometry, angle) * rx_gain(angle)
                sensing_rows.append(
                    {
                        "slot": slot_idx,
                        "symbol": sym_row,
                        "beam_index": m,
                        "angle_deg": math.degrees(angle),
                        "best_delay": res.best_delay,
                        "power_db": 10.0 * math.log10(feats.received_power + 1e-30),
                        "power_db_normalized": 10.0
                        * math.log10(feats.received_power / g_norm + 1e-30),
                        "slope": feats.phase_slope,
                        "loss": feats.linearity_loss,
                    }
                )

        # Communication side (per-user noise)
        for u_idx, su in enumerate(scene.users):
            noise = noise_power_for_user_snr(snr_db, data_beam, geometry, su, numerology)
            user_scene = Scene(
                users=scene.users, noise_power=noise, self_interference_inr_db=None
            )
            rx_u = apply_downlink(
                tx, bplan, su, geometry, user_scene, seed=seed + 104729 * slot_idx + u_idx
            )
            csi_est = slot_user_csi(rx_u, reference, numerology)
            csi_gen = genie_csi(data_beam, geometry, su, numerology)
            rx_grids = np.array(
                [
                    np.fft.fft(rx_u[numerology.symbol_slice(p, include_cp=False)])
                    for p in data_pos
                ]
            )
            est = demodulate_and_score(rx_grids, reference, csi_est)
            gen = demodulate_and_score(rx_grids, reference, csi_gen)
            acc = per_user_acc[u_idx]
            acc["evm_sq_est"] += (est["evm_percent"] / 100.0) ** 2
            acc["evm_sq_genie"] += (gen["evm_percent"] / 100.0) ** 2
            acc["bit_errors"] += round(est["ber"] * est["bits"])
            acc["bits"] += est["bits"]

    per_user = []
    for u_idx, acc in enumerate(per_user_acc):
        per_user.append(
            {
                "user": u_idx,
                "angle_deg": math.degrees(scene.users[u_idx].link.angle),
                "evm_percent": 100.0 * math.sqrt(acc["evm_sq_est"] / num_slots),
                "evm_percent_genie": 100.0 * math.sqrt(acc["evm_sq_genie"] / num_slots),
                "ber": acc["bit_errors"] / acc["bits"] if acc["bits"] else 0.0,
            }
        )
    return LinkResult(
        per_user=per_user,
        sensing_rows=sensing_rows,
        codebook=codebook,
        data_beam=data_beam,
        plan=plan,
    )

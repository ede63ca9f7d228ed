"""Reference operating modes sharing one scene for comparisons.

* ``subf``: conjugate beam to a single user on every symbol (classic
  single-user beamforming); sensing rides on whatever that beam reflects.
* ``fixed``: one sensing angle per DMRS symbol, whole-symbol conjugate beam
  (SSB-style sweeping baseline), full-bandwidth sensing CSI.
* ``switched``: the full sub-symbol switching pipeline with pre-distortion.
"""

from __future__ import annotations

import math

import numpy as np

from ..arrays import ArrayGeometry, beamforming_gain, conjugate_beam
from ..channel import Scene, SlotBeamPlan, apply_downlink, apply_monostatic, default_rx_gain
from ..codebook import OptimizerConfig, build_codebook, design_data_beam
from ..sensing import DelaySearchConfig, estimate_symbol_csi
from ..waveform import (
    Numerology,
    PredistortionPlan,
    SubSymbolSchedule,
    build_predistortion_plan,
    demodulate_and_score,
    generate_slot,
    predistort_dmrs,
    slot_user_csi,
)
from .link import genie_csi

__all__ = ["run_baseline", "BASELINE_MODES"]

BASELINE_MODES = ("subf", "fixed", "switched")


def _sensing_profile(res, beam, rx_gain, geometry, angle):
    """Mean normalized CSI amplitude (dB) over usable bins at one angle.

    The round-trip gain divisor is floored at isotropic so a mode whose beam
    does not illuminate the angle reports its noise level rather than an
    unbounded number.
    """
    g = max(beamforming_gain(beam, geometry, angle) * rx_gain(angle), 1.0)
    amps = np.abs(res.csi[res.valid]) / math.sqrt(g)
    return 20.0 * math.log10(float(np.mean(amps)) + 1e-30), amps


def _conjugate_reference_noise(su, geometry, numerology, snr_db):
    """Noise power putting a user at ``snr_db`` under dedicated conjugate
    beamforming; the same floor is then used for every mode so beamformer
    quality differences show up in the scores."""
    g = geometry.num_elements**2
    snr = 10.0 ** (snr_db / 10.0)
    return g * su.path.attenuation**2 / (numerology.fft_size * snr)


def run_baseline(
    mode: str,
    scene: Scene,
    sensing_angle: float,
    sweep: list[float],
    geometry: ArrayGeometry,
    numerology: Numerology,
    cfg: OptimizerConfig,
    search: DelaySearchConfig,
    snr_db: float,
    modulation: str,
    seed: int,
) -> dict:
    """Run one mode over the scene; returns per-user EVM and sensing CSI quality.

    All modes transmit the same number of slots and are scored identically:
    EVM per user from estimated CSI, and the gain-normalized sensing CSI
    amplitude toward ``sensing_angle``.
    """
    if mode not in BASELINE_MODES:
        raise ValueError(f"unknown baseline mode {mode!r}")
    users = [su.link for su in scene.users]
    if not users:
        raise ValueError("baselines need at least one user")

    if mode == "subf":
        beam = conjugate_beam(geometry, users[0].angle)
        dmrs_beams = [beam]
        data_beam = beam
        plan = PredistortionPlan.identity(1)
    elif mode == "fixed":
        dmrs_beams = [conjugate_beam(geometry, sensing_angle)]
        data_beam = design_data_beam(users, geometry, cfg)
        plan = PredistortionPlan.identity(1)
    else:
        codebook = build_codebook(users, sweep, 1.0, geometry, cfg)
        dmrs_beams = codebook.beams()
        data_beam = design_data_beam(users, geometry, cfg)
        plan = build_predistortion_plan(dmrs_beams, data_beam, users, geometry)

    schedule = SubSymbolSchedule.for_numerology(numerology, len(dmrs_beams))
    bplan = SlotBeamPlan.uniform(numerology, schedule, dmrs_beams, data_beam)
    rx_gain = default_rx_gain()

    reference = generate_slot(numerology, modulation, seed=seed)
    tx = predistort_dmrs(reference, schedule, plan)

    per_user = []
    for u_idx, su in enumerate(scene.users):
        noise = _conjugate_reference_noise(su, geometry, numerology, snr_db)
        user_scene = Scene(users=scene.users, noise_power=noise, self_interference_inr_db=None)
        rx_u = apply_downlink(tx, bplan, su, geometry, user_scene, seed=seed + u_idx)
        csi = slot_user_csi(rx_u, reference, numerology)
        rx_grids = np.array(
            [
                np.fft.fft(rx_u[numerology.symbol_slice(p, include_cp=False)])
                for p in numerology.data_positions()
            ]
        )
        est = demodulate_and_score(rx_grids, reference, csi)
        gen = demodulate_and_score(
            rx_grids, reference, genie_csi(data_beam, geometry, su, numerology)
        )
        per_user.append(
            {
                "user": u_idx,
                "evm_percent": est["evm_percent"],
                "evm_percent_genie": gen["evm_percent"],
                "ber": est["ber"],
            }
        )

    # Sensing: estimate at the DMRS beam matching the requested angle.
    rx_sense = apply_monostatic(tx, bplan, scene, geometry, rx_gain, seed=seed + 97)
    pos = numerology.dmrs_positions()[0]
    rx_body = rx_sense[numerology.symbol_slice(pos, include_cp=False)]
    results = estimate_symbol_csi(rx_body, reference.symbol_body(pos), schedule, search, plan)
    if mode == "switched":
        beam_idx = int(np.argmin([abs(a - sensing_angle) for a in sweep]))
    else:
        beam_idx = 0
    res = results[beam_idx]
    level_db, amps = _sensing_profile(
        res, dmrs_beams[beam_idx], rx_gain, geometry, sensing_angle
    )
    return {
        "mode": mode,
        "per_user": per_user,
        "sensing": {
            "angle_deg": math.degrees(sensing_angle),
            "best_delay": res.best_delay,
            "amplitude_db_normalized": level_db,
            "bins": int(np.sum(res.valid)),
        },
        "beam_switches_per_dmrs": len(dmrs_beams),
    }

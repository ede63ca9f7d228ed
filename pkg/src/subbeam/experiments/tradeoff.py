"""Sensing/communication trade-off versus the perturbation radius."""

from __future__ import annotations

import math
from dataclasses import replace

from ..arrays import ArrayGeometry, beamforming_gain
from ..codebook import OptimizerConfig, SensingTarget, UserLink, optimize_max_min

__all__ = ["epsilon_sweep"]


def epsilon_sweep(
    users: list[UserLink],
    target: SensingTarget,
    geometry: ArrayGeometry,
    epsilons,
    cfg: OptimizerConfig,
) -> list[dict]:
    """Solve the codebook entry across a radius grid, warm-starting upward.

    Solutions nest (a feasible point for one radius stays feasible for any
    larger one), so each radius also tries the previous solution as a warm
    start and keeps the better result; the achieved minimum user SNR is then
    non-decreasing in the radius up to float noise.
    """
    rows = []
    prev = None
    for eps in epsilons:
        cfg_eps = replace(cfg, epsilon=float(eps))
        entry = optimize_max_min(users, target, geometry, cfg_eps)
        if prev is not None and prev.min_snr > entry.min_snr:
            warm = optimize_max_min(
                users, target, geometry, cfg_eps, warm_start=prev.weights
            )
            if warm.min_snr > entry.min_snr:
                entry = warm
        prev = entry
        sensing_gain = beamforming_gain(entry.weights, geometry, target.angle)
        rows.append(
            {
                "epsilon": float(eps),
                "sensing_gain_db": 10.0 * math.log10(sensing_gain + 1e-30),
                "min_snr_db": 10.0 * math.log10(entry.min_snr + 1e-30)
                if not math.isinf(entry.min_snr)
                else math.inf,
                "user_gains_db": [
                    10.0 * math.log10(beamforming_gain(entry.weights, geometry, u.angle) + 1e-30)
                    for u in users
                ],
                "converged": entry.converged,
            }
        )
    return rows

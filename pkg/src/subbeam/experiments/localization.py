"""Linear (signal-processing) localization from per-beam sensing features.

A reflector is swept over a distance grid and an angle grid; per DMRS
symbol the beam sweep yields three features per beam, and two linear
regressors (calibrated by least squares on a disjoint training split) map
the stacked features to distance and angle.

The feature stack uses power in dB and the *total* phase slope
(fit slope minus 2*pi*best_delay/window), which folds the integer window
alignment back into the slope so one linear feature carries the full
propagation delay.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from ..arrays import ArrayGeometry, conjugate_beam
from ..channel import (
    SPEED_OF_LIGHT,
    PathModel,
    Reflector,
    Scene,
    SlotBeamPlan,
    apply_monostatic,
    default_rx_gain,
)
from ..sensing import DelaySearchConfig, SensingCsi, estimate_symbol_csi, extract_features
from ..waveform import Numerology, PredistortionPlan, SubSymbolSchedule, generate_slot

__all__ = [
    "SpWeights",
    "feature_stack",
    "calibrate_sp",
    "sp_localize",
    "run_localization",
]


@dataclass(frozen=True)
class SpWeights:
    """Per-feature per-beam linear weights (bias last) for the two regressors."""

    distance: np.ndarray | None = None
    angle: np.ndarray | None = None

    def __post_init__(self):
        for w in (self.distance, self.angle):
            if w is not None and not np.all(np.isfinite(w)):
                raise ValueError("weights must be finite")

    @property
    def calibrated(self) -> bool:
        return self.distance is not None or self.angle is not None


def feature_stack(results: list[SensingCsi], sub_len: int) -> np.ndarray:
    """Flatten per-beam features into one regression input row."""
    row = []
    for res in results:
        f = extract_features(res)
        total_slope = f.phase_slope - 2.0 * np.pi * res.best_delay / sub_len
        row.extend(
            [
                10.0 * math.log10(f.received_power + 1e-30),
                total_slope,
                f.linearity_loss,
            ]
        )
    return np.array(row)


def calibrate_sp(training_runs: list[tuple[np.ndarray, float]]) -> np.ndarray:
    """Least-squares weights (bias appended) mapping feature stacks to truth."""
    truths = {t for _, t in training_runs}
    if len(truths) < 2:
        raise ValueError("need at least 2 distinct truth values")
    x = np.array([np.append(feats, 1.0) for feats, _ in training_runs])
    y = np.array([t for _, t in training_runs])
    sol, _, rank, _ = np.linalg.lstsq(x, y, rcond=None)
    if rank < x.shape[1]:
        raise ValueError(f"rank-deficient design matrix (rank {rank} < {x.shape[1]})")
    return sol


def sp_localize(features: np.ndarray, weights: SpWeights) -> dict:
    """Weighted-sum prediction of distance (m) and/or angle (deg)."""
    if not weights.calibrated:
        raise ValueError("weights are not calibrated")
    x = np.append(features, 1.0)
    out = {}
    for name, w in (("distance_m", weights.distance), ("angle_deg", weights.angle)):
        if w is not None:
            if len(w) != len(x):
                raise ValueError(f"feature/weight length mismatch for {name}")
            out[name] = float(x @ w)
    return out


def _collect_samples(
    scene: Scene,
    beams,
    geometry: ArrayGeometry,
    numerology: Numerology,
    schedule: SubSymbolSchedule,
    search: DelaySearchConfig,
    num_slots: int,
    seed: int,
) -> list[np.ndarray]:
    """One feature stack per DMRS symbol over ``num_slots`` slots."""
    plan = PredistortionPlan.identity(schedule.num_beams)
    bplan = SlotBeamPlan.uniform(numerology, schedule, beams, beams[0])
    rx_gain = default_rx_gain()
    stacks = []
    for slot_idx in range(num_slots):
        slot_seed = seed + 613 * slot_idx
        slot = generate_slot(numerology, "QPSK", seed=slot_seed, dmrs_seed=slot_seed)
        rx = apply_monostatic(
            slot, bplan, scene, geometry, rx_gain, seed=seed + 7919 * slot_idx
        )
        for pos in numerology.dmrs_positions():
            rx_body = rx[numerology.symbol_slice(pos, include_cp=False)]
            results = estimate_symbol_csi(rx_body, slot.symbol_body(pos), schedule, search, plan)
            stacks.append(feature_stack(results, schedule.sub_len))
    return stacks


def _distance_attenuation(distance_m: float) -> float:
    # Inverse-square amplitude decay, unit reflectivity at 1 m.
    return min(1.0, 1.0 / distance_m**2)


def run_localization(
    geometry: ArrayGeometry,
    numerology: Numerology,
    cfg_search: DelaySearchConfig,
    seed: int,
    distances_m=None,
    angles_deg=None,
    angle_task_distance_m: float = 3.0,
    slots_per_position: int = 25,
    sweep_deg=None,
    noise_power: float = 1e-7,
) -> dict:
    """Calibrate and evaluate both regressors on disjoint seeded splits.

    Distance task: reflector broadside on a 1..8 m grid. Angle task:
    reflector at a fixed distance across +/-15 degrees. Returns medians of
    absolute test errors plus the calibrated weights.
    """
    distances_m = np.round(np.arange(1.0, 8.0 + 1e-9, 0.1), 3) if distances_m is None else np.asarray(distances_m)
    angles_deg = np.arange(-15.0, 15.0 + 1e-9, 1.0) if angles_deg is None else np.asarray(angles_deg)
    sweep_deg = np.linspace(-15.0, 15.0, 31) if sweep_deg is None else np.asarray(sweep_deg)

    beams = [conjugate_beam(geometry, math.radians(a)) for a in sweep_deg]
    schedule = SubSymbolSchedule.for_numerology(numerology, len(beams))
    rng = np.random.default_rng(seed)

    def scene_for(distance_m: float, angle_deg: float) -> Scene:
        delay = round(numerology.sample_rate * 2.0 * distance_m / SPEED_OF_LIGHT)
        return Scene(
            reflectors=(
                Reflector(
                    azimuth=math.radians(angle_deg),
                    path=PathModel(_distance_attenuation(distance_m), 0.0, delay),
                    label="target",
                ),
            ),
            noise_power=noise_power,
            self_interference_inr_db=None,
        )

    def gather(task_values, make_scene, truth_of):
        samples = []
        for idx, value in enumerate(task_values):
            stacks = _collect_samples(
                make_scene(value),
                beams,
                geometry,
                numerology,
                schedule,
                cfg_search,
                slots_per_position,
                seed=seed + 100_003 * (idx + 1),
            )
            samples.append([(s, truth_of(value)) for s in stacks])
        return samples

    def split_eval(samples):
        # Disjoint sample split: every grid position contributes half of its
        # captures to calibration and the other half to evaluation.
        train, test = [], []
        for per_position in samples:
            order = rng.permutation(len(per_position))
            cut = len(per_position) // 2
            train.extend(per_position[i] for i in order[:cut])
            test.extend(per_position[i] for i in order[cut:])
        weights = calibrate_sp(train)
        errors = [abs(float(np.append(s, 1.0) @ weights) - t) for s, t in test]
        return weights, float(np.median(errors))

    dist_samples = gather(
        distances_m, lambda d: scene_for(d, 0.0), lambda d: float(d)
    )
    w_dist, median_dist = split_eval(dist_samples)

    angle_samples = gather(
        angles_deg, lambda a: scene_for(angle_task_distance_m, a), lambda a: float(a)
    )
    w_angle, median_angle = split_eval(angle_samples)

    return {
        "median_distance_error_m": median_dist,
        "median_angle_error_deg": median_angle,
        "weights": SpWeights(distance=w_dist, angle=w_angle),
        "sweep_deg": sweep_deg,
    }

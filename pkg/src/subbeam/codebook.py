"""ISAC beamforming codebook design and online maintenance.

Two solvers are provided:

* ``optimize_weighted_sum`` maximizes a weighted sum of the sensing SNR and
  the mean user SNR over the unit polydisk (per-element |w_n| <= 1).
* ``optimize_max_min`` maximizes the minimum user SNR while keeping every
  weight within a per-element radius ``epsilon`` of the conjugate beamformer
  for the sensing angle, so each codebook entry keeps a strong sensing beam.

Both use monotone projected gradient ascent with deterministic backtracking
(halving from 0.1). The max-min objective is smoothed by a softmin whose
temperature anneals toward zero, which makes the kinked objective
differentiable during early iterations and exact at convergence.
"""

from __future__ import annotations

import json
import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .arrays import ArrayGeometry, Beamformer, conjugate_beam, steering_vector

__all__ = [
    "UserLink",
    "SensingTarget",
    "OptimizerConfig",
    "CodebookEntry",
    "Codebook",
    "UpdateStats",
    "optimize_weighted_sum",
    "optimize_max_min",
    "design_data_beam",
    "build_codebook",
    "update_codebook",
    "save_codebook",
    "load_codebook",
]

FIELD_OF_VIEW = math.radians(60.0)

# Solver constants (deterministic; see module docstring).
_STEP_INIT = 0.1
_STEP_MIN = 1e-7
_TAU_INIT = 0.5
_TAU_DECAY = 0.9
_TAU_MIN = 1e-3
_DB_FLOOR = -400.0  # serialization floor for a zero linear SNR


@dataclass(frozen=True)
class UserLink:
    """One served user: dominant-path angle and baseline (unbeamformed) SNR."""

    angle: float
    base_snr: float

    def __post_init__(self):
        if self.base_snr <= 0:
            raise ValueError("base_snr must be > 0")
        if abs(self.angle) > FIELD_OF_VIEW + 1e-12:
            raise ValueError("user angle outside the array field of view")


@dataclass(frozen=True)
class SensingTarget:
    """Desired sensing direction and its baseline round-trip SNR."""

    angle: float
    base_snr: float = 1.0

    def __post_init__(self):
        if self.base_snr <= 0:
            raise ValueError("base_snr must be > 0")


@dataclass(frozen=True)
class OptimizerConfig:
    epsilon: float = 0.5
    sensing_weight: float = 1.0  # weighted-sum solver only
    grad_tol: float = 1e-2
    max_iters: int = 2000
    snr_match_tol: float = 1e-2  # linear-SNR absolute tolerance for entry reuse

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.sensing_weight < 0:
            raise ValueError("sensing_weight must be >= 0")
        if self.grad_tol <= 0:
            raise ValueError("grad_tol must be > 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass(frozen=True)
class CodebookEntry:
    """One optimized beamformer: sensing angle, weights, achieved min user SNR."""

    sensing_angle: float
    weights: Beamformer
    min_snr: float  # +inf sentinel when there are no users
    converged: bool


@dataclass(frozen=True)
class Codebook:
    entries: tuple[CodebookEntry, ...]
    users: tuple[UserLink, ...]

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def sweep(self) -> np.ndarray:
        return np.array([e.sensing_angle for e in self.entries])

    def beams(self) -> list[Beamformer]:
        return [e.weights for e in self.entries]


@dataclass
class UpdateStats:
    reused: int = 0
    reoptimized: int = 0
    entry_seconds: list[float] = field(default_factory=list)

    @property
    def total_seconds(self) -> float:
        return sum(self.entry_seconds)


def _user_matrix(users, geometry):
    """Stack user steering vectors (U x N) and base SNRs (U,)."""
    s = np.array([steering_vector(geometry, u.angle) for u in users])
    gamma = np.array([u.base_snr for u in users])
    return s, gamma


def _snrs(w, s, gamma):
    return gamma * np.abs(s @ w) ** 2


def _grad(w, s, gamma, coef):
    # d/dw* of sum_u coef_u * gamma_u * |s_u^T w|^2
    inner = s @ w
    return (coef * gamma * inner) @ np.conj(s)


def _project_polydisk(w):
    amp = np.abs(w)
    over = amp > 1.0
    if np.any(over):
        w = np.where(over, w / np.maximum(amp, 1e-300), w)
    return w


def _project_ball_then_disk(w, anchor, eps):
    """Clip each element into the radius-eps ball around ``anchor``, then the unit disk.

    The two clips do not commute in general, but with the anchor inside the
    unit disk one pass in this order already satisfies both constraints
    exactly (disk projection is non-expansive toward the ball center), so
    re-alternating would change nothing.
    """
    if eps == 0.0:
        return anchor.copy()
    d = w - anchor
    dabs = np.abs(d)
    over = dabs > eps
    if np.any(over):
        w = np.where(over, anchor + d * (eps / np.maximum(dabs, 1e-300)), w)
    return _project_polydisk(w)


def _warn_close_angles(users, geometry):
    hpbw = 0.886 / (geometry.num_elements * geometry.spacing)
    for i in range(len(users)):
        for j in range(i + 1, len(users)):
            if abs(users[i].angle - users[j].angle) < hpbw:
                warnings.warn(
                    f"user angles {math.degrees(users[i].angle):.1f} and "
                    f"{math.degrees(users[j].angle):.1f} deg are within one HPBW; "
                    "the solver may not separate their beams",
                    stacklevel=3,
                )


def _normalized_direction(g):
    peak = np.max(np.abs(g))
    if peak <= 0:
        return None
    return g / peak


def _line_search(w, f, d, objective, project, step0=_STEP_INIT):
    """Halving backtracking along direction d; accept strict improvement.

    Returns (w, f, accepted, step_used). ``step0`` carries the last accepted
    step across iterations so the search rarely has to halve far.
    """
    step = min(step0, _STEP_INIT)
    while step >= _STEP_MIN:
        w_try = project(w + step * d)
        f_try = objective(w_try)
        if f_try > f * (1.0 + 1e-12) + 1e-15:
            return w_try, f_try, True, step
        step *= 0.5
    return w, f, False, _STEP_INIT


def _dither(w0, scale):
    """Deterministic per-element phase dither that breaks mirror symmetries.

    Symmetric user layouts (e.g. +/-30 deg around a broadside sensing beam)
    make the balanced subgradient vanish on a whole element subset; a generic
    starting point keeps the ascent off that saddle manifold.
    """
    n = np.arange(len(w0))
    return w0 * np.exp(1j * scale * np.sin(2.4 * n + 0.7))


def _fair_point(s_all, gamma_all, w0, cfg):
    """Max-min over all targets by annealed softmin ascent (anchor-free).

    Steps (combined direction and per-target probes) are accepted when they
    improve the softmin at the current temperature; the temperature then
    anneals toward zero so the final iterate maximizes the true minimum.
    Used to seed the weighted-sum solver with a balanced allocation.
    """

    def softmin(x, t):
        z = -x / t
        zmax = np.max(z)
        return -t * (zmax + math.log(np.sum(np.exp(z - zmax))))

    w = _project_polydisk(w0)
    best_w = w
    best_min = float(np.min(_snrs(w, s_all, gamma_all)))
    tau = _TAU_INIT
    for _ in range(14):
        x = _snrs(w, s_all, gamma_all)
        t = tau * max(float(np.mean(x)), 1e-30)

        def objective(wc):
            return softmin(_snrs(wc, s_all, gamma_all), t)

        f = objective(w)
        for _ in range(max(cfg.max_iters // 10, 50)):
            x = _snrs(w, s_all, gamma_all)
            lam = np.exp(-(x - np.min(x)) / t)
            lam /= np.sum(lam)
            inner = s_all @ w
            dirs = [(lam * gamma_all * inner) @ np.conj(s_all)]
            dirs += [gamma_all[i] * inner[i] * np.conj(s_all[i]) for i in np.argsort(x)]
            accepted = False
            for g in dirs:
                d = _normalized_direction(g)
                if d is None:
                    continue
                w, f, accepted, _ = _line_search(w, f, d, objective, _project_polydisk)
                if accepted:
                    break
            if not accepted:
                break
        cur_min = float(np.min(_snrs(w, s_all, gamma_all)))
        if cur_min > best_min:
            best_w, best_min = w, cur_min
        tau = max(tau * 0.5, _TAU_MIN)
    return best_w


def _ascend(w0, objective, gradient, project, cfg, trace=None, probes=None,
            tau0=_TAU_INIT):
    """Monotone projected gradient ascent with halving backtracking.

    ``gradient`` may depend on an annealed temperature; it is re-queried each
    iteration. When the combined direction yields no improving step,
    ``probes(w)`` directions are tried before annealing further; kinked or
    symmetric objectives need these because the combined (sub)gradient can
    vanish at saddle points that single-target directions escape.
    Returns (w, converged).
    """
    w = project(w0)
    f = objective(w)
    if trace is not None:
        trace.append(f)
    tau = tau0
    converged = False
    at_final_tau = False
    stall_mark, stall_count = f, 0
    step_mem = _STEP_INIT
    for _ in range(cfg.max_iters):
        g = gradient(w, tau)
        if at_final_tau:
            gnorm = np.linalg.norm(project(w + _STEP_INIT * g) - w) / _STEP_INIT
            if gnorm < cfg.grad_tol:
                converged = True
                break
        d = _normalized_direction(g)
        accepted = False
        if d is not None:
            w, f, accepted, step_used = _line_search(
                w, f, d, objective, project, step_mem
            )
            if accepted:
                step_mem = step_used * 2.0
        if not accepted and probes is not None:
            for p in probes(w):
                dp = _normalized_direction(p)
                if dp is None:
                    continue
                w, f, accepted, _ = _line_search(w, f, dp, objective, project)
                if accepted:
                    break
        if trace is not None:
            trace.append(f)
        if not accepted:
            step_mem = _STEP_INIT
            if not at_final_tau:
                tau = max(tau * 0.5, _TAU_MIN)
                at_final_tau = tau <= _TAU_MIN
                continue
            # Stationary: no improving step along the subgradient or any probe.
            converged = True
            break
        # Progress-based stop: monotone but negligible improvement.
        if f <= stall_mark * (1.0 + 1e-9):
            stall_count += 1
            if stall_count >= 50 and at_final_tau:
                converged = True
                break
        else:
            stall_mark, stall_count = f, 0
        tau = max(tau * _TAU_DECAY, _TAU_MIN)
        at_final_tau = tau <= _TAU_MIN
    return w, converged


def optimize_weighted_sum(
    users: list[UserLink],
    target: SensingTarget,
    geometry: ArrayGeometry,
    cfg: OptimizerConfig,
    trace: list | None = None,
) -> Beamformer:
    """Joint beamformer maximizing sensing_weight*sensing SNR + mean user SNR.

    Subject only to per-element |w_n| <= 1. The reported objective (appended
    to ``trace`` when given) is non-decreasing over iterations.
    """
    if not users:
        raise ValueError("at least one user is required")
    _warn_close_angles(users, geometry)
    s_users, gamma = _user_matrix(users, geometry)
    s_t = steering_vector(geometry, target.angle)
    n_users = len(users)

    s_all = np.vstack([s_t[None, :], s_users])
    gamma_all = np.concatenate([[target.base_snr], gamma])
    coef = np.concatenate([[cfg.sensing_weight], np.full(n_users, 1.0 / n_users)])

    def objective(w):
        return float(np.sum(coef * _snrs(w, s_all, gamma_all)))

    def gradient(w, tau):
        return _grad(w, s_all, gamma_all, coef)

    # For well-separated targets the achievable gains trade off along a
    # near-flat frontier (sum of gains <= N^2 by Parseval), so the objective
    # is nearly degenerate across beam allocations and the ascent's endpoint
    # depends on its start. Run a deterministic set of starts, including a
    # fairness-optimal one (max-min over all targets); among finals whose
    # objectives tie within solver tolerance, keep the one with the largest
    # minimum per-target SNR (fairness tie-break).
    v = (coef * gamma_all) @ np.conj(s_all)
    peak = np.max(np.abs(v))
    mixture = _project_polydisk(v) if peak > 0 else np.conj(s_t)
    amp = np.abs(v)
    phase_only = np.where(amp > 1e-12, v / np.maximum(amp, 1e-300), 1.0 + 0.0j)

    # Fairness is judged only across targets the objective actually values.
    active = coef > 0
    s_act, gamma_act = s_all[active], gamma_all[active]
    fair_inits = [phase_only, _dither(phase_only, 0.05), _dither(phase_only, 0.3)]
    # Anchored starts travel the same asymmetric region the max-min solver
    # uses and reliably reach the balanced allocation.
    fair_inits += [np.conj(s) + 0.05 * phase_only for s in s_act]
    fair_start, fair_val = None, -math.inf
    for w0 in fair_inits:
        w_f = _fair_point(s_act, gamma_act, w0, cfg)
        val = float(np.min(_snrs(w_f, s_act, gamma_act)))
        if val > fair_val:
            fair_start, fair_val = w_f, val

    finals = []
    for w0 in [mixture, phase_only, _dither(mixture, 0.05), _dither(phase_only, 0.05)]:
        w_i, _ = _ascend(w0, objective, gradient, _project_polydisk, cfg)
        finals.append((objective(w_i), float(np.min(_snrs(w_i, s_act, gamma_act))), w_i))
    finals.append((objective(fair_start), fair_val, fair_start))
    f_best = max(f for f, _, _ in finals)
    # 5% objective window ~ 0.2 dB, the solver tolerance used throughout.
    w = max(
        (cand for cand in finals if cand[0] >= f_best * 0.95),
        key=lambda cand: cand[1],
    )[2]
    if trace is not None:
        # Re-run the winning start so the reported objective trace matches.
        trace.clear()
        w, _ = _ascend(w, objective, gradient, _project_polydisk, cfg, trace)

    # Remove the global-phase degeneracy: align the first element's phase
    # with the sensing-conjugate anchor (whose first element is real).
    if np.abs(w[0]) > 1e-12:
        w = w * np.exp(-1j * np.angle(w[0]))
    return Beamformer(w)


def optimize_max_min(
    users: list[UserLink],
    target: SensingTarget,
    geometry: ArrayGeometry,
    cfg: OptimizerConfig,
    warm_start: Beamformer | None = None,
    trace: list | None = None,
) -> CodebookEntry:
    """Max-min user SNR around the sensing conjugate anchor.

    The weights stay within ``cfg.epsilon`` of conj(s(sensing angle)) per
    element and within the unit disk. With no users the anchor itself is
    returned with a +inf min-SNR sentinel. If no feasible step improves the
    minimum SNR, the anchor is returned unchanged (still a valid entry).
    """
    anchor = np.conj(steering_vector(geometry, target.angle))
    if not users:
        return CodebookEntry(target.angle, Beamformer(anchor), math.inf, True)
    _warn_close_angles(users, geometry)
    s_users, gamma = _user_matrix(users, geometry)

    def project(w):
        return _project_ball_then_disk(w, anchor, cfg.epsilon)

    def objective(w):
        return float(np.min(_snrs(w, s_users, gamma)))

    def gradient(w, tau):
        x = _snrs(w, s_users, gamma)
        t = tau * max(float(np.mean(x)), 1e-30)
        lam = np.exp(-(x - np.min(x)) / t)
        lam /= np.sum(lam)
        return _grad(w, s_users, gamma, lam)

    def probes(w):
        # Single-user gradient directions, weakest user first. Users at
        # well-separated angles are near-orthogonal, so boosting one barely
        # perturbs the rest; these steps escape balanced saddle points where
        # the combined subgradient vanishes.
        x = _snrs(w, s_users, gamma)
        inner = s_users @ w
        return [
            gamma[u] * inner[u] * np.conj(s_users[u]) for u in np.argsort(x)
        ]

    if cfg.epsilon == 0.0:
        w = anchor
        converged = True
    elif warm_start is not None:
        # Refine from the near-optimal previous weights, but guard against
        # the warm chain drifting into a stale basin with one anchored
        # restart; keep whichever lands higher.
        w, converged = _ascend(
            warm_start.weights, objective, gradient, project, cfg, trace, probes,
            tau0=0.05,
        )
        v = gamma @ np.conj(s_users)
        peak = np.max(np.abs(v))
        nudge = v / peak if peak > 0 else 0.0
        w0 = _dither(anchor + 0.5 * min(cfg.epsilon, _STEP_INIT) * nudge,
                     min(cfg.epsilon, 0.2) / 4.0)
        w_cold, conv_cold = _ascend(w0, objective, gradient, project, cfg, probes=probes)
        if objective(w_cold) > objective(w):
            w, converged = w_cold, conv_cold
        if objective(w) <= objective(anchor) + 1e-15:
            w = anchor
    else:
        # Deterministic multi-start: nudge toward the users (the ascent
        # would otherwise stall when the anchor is exactly orthogonal to
        # every user) and dither off mirror-symmetric saddle manifolds.
        v = gamma @ np.conj(s_users)
        peak = np.max(np.abs(v))
        nudge = v / peak if peak > 0 else 0.0
        inits = [
            _dither(anchor + 0.5 * min(cfg.epsilon, _STEP_INIT) * nudge,
                    min(cfg.epsilon, 0.2) / 4.0),
            _dither(anchor + min(cfg.epsilon, 0.5) * nudge,
                    min(cfg.epsilon, 0.4)),
            _dither(anchor, min(cfg.epsilon, 0.3)),
        ]
        w, converged, best = None, False, -math.inf
        for w0 in inits:
            w_i, conv_i = _ascend(w0, objective, gradient, project, cfg, trace, probes)
            f_i = objective(w_i)
            if f_i > best:
                w, converged, best = w_i, conv_i, f_i
        if objective(w) <= objective(anchor) + 1e-15:
            w = anchor

    return CodebookEntry(
        sensing_angle=target.angle,
        weights=Beamformer(w),
        min_snr=objective(w),
        converged=converged,
    )


def design_data_beam(
    users: list[UserLink], geometry: ArrayGeometry, cfg: OptimizerConfig | None = None
) -> Beamformer:
    """Fixed beamformer for the data symbols: max-min user SNR, no sensing beam.

    Solved by the annealed-softmin fair-point routine from a deterministic
    set of starts (normalized conjugate mixture plus each user's conjugate).
    """
    if not users:
        raise ValueError("at least one user is required")
    cfg = cfg or OptimizerConfig()
    s_users, gamma = _user_matrix(users, geometry)
    v = gamma @ np.conj(s_users)
    peak = np.max(np.abs(v))
    amp = np.abs(v)
    mixture = np.where(amp > 1e-12, v / np.maximum(amp, 1e-300), 1.0 + 0.0j)
    if peak <= 0:
        mixture = np.conj(s_users[0])
    inits = [mixture, _dither(mixture, 0.05)]
    inits += [np.conj(s) + 0.05 * mixture for s in s_users]
    best_w, best_val = None, -math.inf
    for w0 in inits:
        w = _fair_point(s_users, gamma, w0, cfg)
        val = float(np.min(_snrs(w, s_users, gamma)))
        if val > best_val:
            best_w, best_val = w, val
    return Beamformer(best_w)


def build_codebook(
    users: list[UserLink],
    sweep: list[float],
    target_base_snr: float,
    geometry: ArrayGeometry,
    cfg: OptimizerConfig,
) -> Codebook:
    """One max-min entry per sensing angle. Deterministic for fixed inputs."""
    if len(sweep) == 0:
        raise ValueError("sweep must be non-empty")
    entries = tuple(
        optimize_max_min(users, SensingTarget(angle, target_base_snr), geometry, cfg)
        for angle in sweep
    )
    return Codebook(entries=entries, users=tuple(users))


def update_codebook(
    codebook: Codebook,
    moved_users: list[UserLink],
    geometry: ArrayGeometry,
    cfg: OptimizerConfig,
) -> tuple[Codebook, UpdateStats]:
    """Refresh a codebook after users moved, re-optimizing only stale entries.

    An entry is reused verbatim (bit-identical weights) when the minimum user
    SNR evaluated with its old weights at the new angles still matches its
    stored value within ``cfg.snr_match_tol`` (linear). Otherwise the entry
    is re-optimized warm-started from the old weights.
    """
    if len(moved_users) != len(codebook.users):
        raise ValueError("moved_users must match the codebook's user list")
    stats = UpdateStats()
    new_entries = []
    if moved_users:
        s_users, gamma = _user_matrix(moved_users, geometry)
    for entry in codebook.entries:
        t0 = time.perf_counter()
        if not moved_users or math.isinf(entry.min_snr):
            new_entries.append(entry)
            stats.reused += 1
        else:
            new_min = float(np.min(_snrs(entry.weights.weights, s_users, gamma)))
            if abs(new_min - entry.min_snr) <= cfg.snr_match_tol:
                new_entries.append(entry)
                stats.reused += 1
            else:
                target = SensingTarget(entry.sensing_angle)
                new_entries.append(
                    optimize_max_min(
                        moved_users, target, geometry, cfg, warm_start=entry.weights
                    )
                )
                stats.reoptimized += 1
        stats.entry_seconds.append(time.perf_counter() - t0)
    return Codebook(entries=tuple(new_entries), users=tuple(moved_users)), stats


# ---------------------------------------------------------------------------
# Serialization (versioned JSON; angles in degrees, min SNR in dB)
# ---------------------------------------------------------------------------


def _geometry_to_dict(geometry: ArrayGeometry) -> dict:
    return {
        "layout": geometry.layout,
        "num_elements": geometry.num_elements,
        "spacing": geometry.spacing,
        "planar_shape": list(geometry.planar_shape) if geometry.planar_shape else None,
    }


def _geometry_from_dict(d: dict) -> ArrayGeometry:
    shape = d.get("planar_shape")
    return ArrayGeometry(
        num_elements=d["num_elements"],
        spacing=d["spacing"],
        layout=d["layout"],
        planar_shape=tuple(shape) if shape else None,
    )


def codebook_to_dict(codebook: Codebook, geometry: ArrayGeometry) -> dict:
    entries = []
    for e in codebook.entries:
        if math.isinf(e.min_snr):
            snr_db = None  # +inf sentinel (no users)
        elif e.min_snr <= 0:
            snr_db = _DB_FLOOR
        else:
            snr_db = max(10.0 * math.log10(e.min_snr), _DB_FLOOR)
        w = e.weights.weights
        entries.append(
            {
                "sensing_angle_deg": math.degrees(e.sensing_angle),
                "weights": [[float(c.real), float(c.imag)] for c in w],
                "min_snr_db": snr_db,
                "converged": e.converged,
            }
        )
    return {
        "format": "subbeam-codebook",
        "version": 1,
        "geometry": _geometry_to_dict(geometry),
        "users": [
            {"angle_deg": math.degrees(u.angle), "base_snr": u.base_snr}
            for u in codebook.users
        ],
        "entries": entries,
    }


def codebook_from_dict(d: dict) -> tuple[Codebook, ArrayGeometry]:
    if d.get("format") != "subbeam-codebook":
        raise ValueError("not a codebook file")
    if d.get("version") != 1:
        raise ValueError(f"unsupported codebook version {d.get('version')!r}")
    geometry = _geometry_from_dict(d["geometry"])
    users = tuple(
        UserLink(math.radians(u["angle_deg"]), u["base_snr"]) for u in d["users"]
    )
    entries = []
    for e in d["entries"]:
        w = np.array([re + 1j * im for re, im in e["weights"]])
        snr_db = e["min_snr_db"]
        min_snr = math.inf if snr_db is None else 10.0 ** (snr_db / 10.0)
        entries.append(
            CodebookEntry(
                sensing_angle=math.radians(e["sensing_angle_deg"]),
                weights=Beamformer(w),
                min_snr=min_snr,
                converged=e["converged"],
            )
        )
    return Codebook(entries=tuple(entries), users=users), geometry


def save_codebook(path, codebook: Codebook, geometry: ArrayGeometry) -> None:
    with open(path, "w") as f:
        json.dump(codebook_to_dict(codebook, geometry), f, indent=2, sort_keys=True)
        f.write("\n")


def load_codebook(path) -> tuple[Codebook, ArrayGeometry]:
    with open(path) as f:
        return codebook_from_dict(json.load(f))

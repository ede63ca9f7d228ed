"""Sub-symbol sensing CSI recovery with a queue-accelerated delay search.

For each beam window the propagation delay is unknown; candidate delays are
enumerated and the one whose CSI phase profile is most nearly linear
(weighted least squares across subcarriers) wins. Advancing the candidate
window by one sample updates its spectrum in O(N') via the sliding DFT
instead of recomputing an O(N' log N') FFT.

DFT convention: forward transform uses exp(-j*2*pi*k*n/N), so advancing the
window one sample multiplies each bin by exp(+j*2*pi*k/N).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .waveform import PredistortionPlan, SubSymbolSchedule

__all__ = [
    "DelaySearchConfig",
    "LineFit",
    "SensingCsi",
    "CsiFeatures",
    "OpCounter",
    "sliding_dft_step",
    "sub_symbol_csi",
    "estimate_beam_csi",
    "estimate_symbol_csi",
    "extract_features",
]

# Tx bins with magnitude at or below this floor are excluded from CSI fits.
TX_MAGNITUDE_FLOOR = 1e-12


@dataclass(frozen=True)
class DelaySearchConfig:
    """Delay-candidate count, bin-validity floor, and optional weight override.

    The default candidate count follows ceil(log2(fft_size)) for the
    standard 1024-bin numerology. When ``weights`` is None the fit weights
    the residual of each subcarrier by the transmitted magnitude |X[k]|
    (zero-weight bins are skipped entirely). Bins whose transmit magnitude
    falls below ``min_tx_fraction`` of the window's RMS are treated as
    unusable: dividing by a deeply faded bin amplifies whatever is not
    aligned with it, which would otherwise splatter spikes across power
    maps.
    """

    num_candidates: int = 10
    weights: np.ndarray | None = None
    min_tx_fraction: float = 0.3

    def __post_init__(self):
        if self.num_candidates < 1:
            raise ValueError("num_candidates must be >= 1")
        if self.min_tx_fraction < 0:
            raise ValueError("min_tx_fraction must be >= 0")

    def valid_bins(self, tx_spectrum: np.ndarray) -> np.ndarray:
        rms = math.sqrt(float(np.mean(np.abs(tx_spectrum) ** 2)))
        floor = max(TX_MAGNITUDE_FLOOR, self.min_tx_fraction * rms)
        return np.abs(tx_spectrum) > floor


@dataclass(frozen=True)
class LineFit:
    slope: float  # radians per bin
    intercept: float  # radians
    mse: float  # weighted mean squared phase residual


@dataclass(frozen=True)
class SensingCsi:
    """Recovered CSI for one beam window at its best-fitting delay."""

    beam_index: int
    csi: np.ndarray
    best_delay: int
    fit: LineFit
    valid: np.ndarray  # per-bin usability mask


@dataclass(frozen=True)
class CsiFeatures:
    received_power: float  # sum |H|^2 over usable bins, linear
    phase_slope: float  # radians per bin
    linearity_loss: float  # weighted MSE of the linear phase fit

    def __post_init__(self):
        if self.linearity_loss < 0:
            raise ValueError("linearity_loss must be >= 0")


class OpCounter:
    """Complex multiply-add model for spectrum acquisition.

    A length-L FFT is charged L*ceil(log2 L) operations; one sliding-DFT
    update is charged 2L (one add and one twiddle multiply per bin).
    """

    def __init__(self):
        self.fft_ops = 0
        self.slide_ops = 0

    def count_fft(self, length: int, times: int = 1):
        self.fft_ops += times * length * max(1, math.ceil(math.log2(length)))

    def count_slide(self, length: int, times: int = 1):
        self.slide_ops += times * 2 * length

    @property
    def total(self) -> int:
        return self.fft_ops + self.slide_ops


def sliding_dft_step(spectrum: np.ndarray, y_in: complex, y_out: complex) -> np.ndarray:
    """Spectrum of the window advanced by one sample.

    ``spectrum`` is the DFT of the previous window, ``y_out`` the sample
    leaving at the front, ``y_in`` the sample entering at the back.
    """
    n = len(spectrum)
    twiddle = np.exp(2j * np.pi * np.arange(n) / n)
    return (spectrum + (y_in - y_out)) * twiddle


def _padded_window(rx: np.ndarray, start: int, length: int) -> np.ndarray:
    """Window [start, start+length) of rx; out-of-range samples are zero."""
    out = np.zeros(length, dtype=complex)
    lo = max(start, 0)
    hi = min(start + length, len(rx))
    if hi > lo:
        out[lo - start : hi - start] = rx[lo:hi]
    return out


def _sample_or_zero(rx: np.ndarray, idx: int) -> complex:
    return rx[idx] if 0 <= idx < len(rx) else 0.0


def sub_symbol_csi(
    rx_symbol: np.ndarray,
    tx_symbol: np.ndarray,
    schedule: SubSymbolSchedule,
    beam_index: int,
    delay: int,
    plan: PredistortionPlan | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """CSI of one beam window under an assumed delay.

    Divides the spectrum of the delayed receive window by the transmitted
    window's spectrum and removes the pre-distortion factor, so the result
    reflects the physical round-trip response only. Returns (csi, valid);
    bins whose transmit magnitude is at the numerical floor are invalid
    (csi forced to zero there) and excluded from downstream fits.
    """
    if delay < 0:
        raise ValueError("delay must be >= 0")
    length = schedule.sub_len
    start = beam_index * length
    x_win = tx_symbol[schedule.window(beam_index)]
    y_win = _padded_window(rx_symbol, start + delay, length)
    x_f = np.fft.fft(x_win)
    y_f = np.fft.fft(y_win)
    factor = plan.factors[beam_index] if plan is not None else 1.0
    valid = np.abs(x_f) > TX_MAGNITUDE_FLOOR
    csi = np.zeros(length, dtype=complex)
    csi[valid] = y_f[valid] / (factor * x_f[valid])
    return csi, valid


def _weighted_line_fit(k: np.ndarray, y: np.ndarray, weights: np.ndarray) -> LineFit:
    """Closed-form weighted least squares of y = slope*k + intercept.

    ``weights`` multiply the residuals inside the squared norm, so the
    effective least-squares weights are weights**2; the reported MSE is the
    weight-normalized mean of the squared weighted residuals.
    """
    w2 = weights**2
    s_w = float(np.sum(w2))
    s_k = float(np.sum(w2 * k))
    s_kk = float(np.sum(w2 * k * k))
    s_y = float(np.sum(w2 * y))
    s_ky = float(np.sum(w2 * k * y))
    denom = s_w * s_kk - s_k * s_k
    if denom <= 1e-30 * max(s_w * s_kk, 1e-300):
        slope = 0.0
        intercept = s_y / s_w if s_w > 0 else 0.0
    else:
        slope = (s_w * s_ky - s_k * s_y) / denom
        intercept = (s_y - slope * s_k) / s_w
    resid = y - (slope * k + intercept)
    mse = float(np.sum(w2 * resid**2) / s_w) if s_w > 0 else 0.0
    return LineFit(slope=slope, intercept=intercept, mse=mse)


def _fit_csi_phase(csi: np.ndarray, valid: np.ndarray, weights: np.ndarray) -> LineFit:
    usable = valid & (weights > 0)
    k = np.flatnonzero(usable)
    if len(k) == 0:
        raise ValueError("no usable subcarriers")
    phases = np.unwrap(np.angle(csi[k]))
    return _weighted_line_fit(k.astype(float), phases, weights[k])


def estimate_beam_csi(
    rx_symbol: np.ndarray,
    tx_symbol: np.ndarray,
    schedule: SubSymbolSchedule,
    beam_index: int,
    cfg: DelaySearchConfig,
    plan: PredistortionPlan | None = None,
    counter: OpCounter | None = None,
    accelerated: bool = True,
) -> SensingCsi:
    """Delay search for one beam window: best linear-phase fit wins.

    Candidate delays 0..num_candidates-1 are scanned; the first window's
    spectrum comes from a full FFT, each subsequent one from a sliding-DFT
    update (unless ``accelerated`` is off, which recomputes the FFT per
    candidate; useful for benchmarking). Ties break toward smaller delay.
    Receive windows running past the end of the buffer are zero-filled.
    """
    length = schedule.sub_len
    start = beam_index * length
    x_f = np.fft.fft(tx_symbol[schedule.window(beam_index)])
    factor = plan.factors[beam_index] if plan is not None else 1.0
    weights = np.abs(factor * x_f) if cfg.weights is None else np.asarray(cfg.weights, float)
    valid = cfg.valid_bins(x_f)
    if not np.any(valid & (weights > 0)):
        raise ValueError("no usable subcarriers")

    twiddle = np.exp(2j * np.pi * np.arange(length) / length)
    best = None
    y_f = None
    for dn in range(cfg.num_candidates):
        if dn == 0 or not accelerated:
            y_f = np.fft.fft(_padded_window(rx_symbol, start + dn, length))
            if counter is not None:
                counter.count_fft(length)
        else:
            y_out = _sample_or_zero(rx_symbol, start + dn - 1)
            y_in = _sample_or_zero(rx_symbol, start + dn - 1 + length)
            y_f = (y_f + (y_in - y_out)) * twiddle
            if counter is not None:
                counter.count_slide(length)
        csi = np.zeros(length, dtype=complex)
        csi[valid] = y_f[valid] / (factor * x_f[valid])
        fit = _fit_csi_phase(csi, valid, weights)
        if best is None or fit.mse < best.fit.mse:
            best = SensingCsi(
                beam_index=beam_index,
                csi=csi,
                best_delay=dn,
                fit=fit,
                valid=valid.copy(),
            )
    return best


def estimate_symbol_csi(
    rx_symbol: np.ndarray,
    tx_symbol: np.ndarray,
    schedule: SubSymbolSchedule,
    cfg: DelaySearchConfig,
    plan: PredistortionPlan | None = None,
    counter: OpCounter | None = None,
) -> list[SensingCsi]:
    """Delay search for every beam window of one DMRS symbol.

    Equivalent to running ``estimate_beam_csi`` per beam (the per-beam
    searches are independent), but batched across beams for speed.
    """
    if plan is not None and len(plan) != schedule.num_beams:
        raise ValueError("plan length does not match the schedule")
    m_beams = schedule.num_beams
    length = schedule.sub_len
    factors = plan.factors if plan is not None else np.ones(m_beams, dtype=complex)

    x_wins = tx_symbol[: m_beams * length].reshape(m_beams, length)
    x_f = np.fft.fft(x_wins, axis=1)
    valid = np.array([cfg.valid_bins(x_f[m]) for m in range(m_beams)])
    if cfg.weights is None:
        weights = np.abs(factors[:, None] * x_f)
    else:
        weights = np.broadcast_to(np.asarray(cfg.weights, float), x_f.shape)

    starts = np.arange(m_beams) * length
    offsets = np.arange(length)
    rxp = np.zeros(m_beams * length + cfg.num_candidates + length, dtype=complex)
    rxp[: min(len(rx_symbol), len(rxp))] = rx_symbol[: len(rxp)]

    twiddle = np.exp(2j * np.pi * offsets / length)
    results: list[SensingCsi | None] = [None] * m_beams
    y_f = None
    for dn in range(cfg.num_candidates):
        if dn == 0:
            y_f = np.fft.fft(rxp[starts[:, None] + offsets[None, :]], axis=1)
            if counter is not None:
                counter.count_fft(length, times=m_beams)
        else:
            y_out = rxp[starts + dn - 1]
            y_in = rxp[starts + dn - 1 + length]
            y_f = (y_f + (y_in - y_out)[:, None]) * twiddle[None, :]
            if counter is not None:
                counter.count_slide(length, times=m_beams)
        denom = factors[:, None] * x_f
        for m in range(m_beams):
            csi = np.zeros(length, dtype=complex)
            csi[valid[m]] = y_f[m, valid[m]] / denom[m, valid[m]]
            fit = _fit_csi_phase(csi, valid[m], weights[m])
            if results[m] is None or fit.mse < results[m].fit.mse:
                results[m] = SensingCsi(
                    beam_index=m,
                    csi=csi,
                    best_delay=dn,
                    fit=fit,
                    valid=valid[m].copy(),
                )
    return results


def extract_features(csi: SensingCsi) -> CsiFeatures:
    """The three per-beam scalars consumed by downstream sensing tasks."""
    usable = csi.valid
    return CsiFeatures(
        received_power=float(np.sum(np.abs(csi.csi[usable]) ** 2)),
        phase_slope=csi.fit.slope,
        linearity_loss=csi.fit.mse,
    )



"""Slot waveform generation, DMRS pre-distortion, and user-side demodulation.

A slot holds 14 OFDM symbols (CP + body each); four of them carry known
reference (DMRS) grids used for channel estimation, the rest carry random
QAM data. Only the middle block of subcarriers is occupied. Frequency grids
use the natural FFT bin order; "occupied" bins are the centered block around
DC after fftshift.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .arrays import ArrayGeometry, Beamformer, beamforming_gain, steering_vector

__all__ = [
    "Numerology",
    "SubSymbolSchedule",
    "SlotWaveform",
    "PredistortionPlan",
    "MODULATIONS",
    "generate_slot",
    "build_predistortion_plan",
    "predistort_dmrs",
    "estimate_user_csi",
    "slot_user_csi",
    "demodulate_and_score",
    "write_iq",
    "read_iq",
]

# Default seed for the reference-signal sequence; shared by transmitter and
# receivers so the DMRS grids are pre-defined and identical across users.
DEFAULT_DMRS_SEED = 0x5103

MODULATIONS = {
    "QPSK": 2,
    "16QAM": 4,
    "64QAM": 6,
    "256QAM": 8,
}


@dataclass(frozen=True)
class Numerology:
    """OFDM slot parameters (defaults follow 5G FR2 numerology 3)."""

    fft_size: int = 1024
    occupied_subcarriers: int = 768
    cp_length: int = 72
    sample_rate: float = 122.88e6
    symbols_per_slot: int = 14
    dmrs_symbol_indices: frozenset = frozenset({3, 4, 11, 12})  # 1-based
    # Nominal over-the-air slot duration. The uniform-CP sample budget above
    # is a hair shorter (the real frame pads the first CP); air-time
    # accounting uses this figure.
    slot_duration_s: float | None = 125e-6

    def __post_init__(self):
        if self.fft_size < 1 or self.occupied_subcarriers < 1:
            raise ValueError("fft_size and occupied_subcarriers must be positive")
        if self.occupied_subcarriers > self.fft_size:
            raise ValueError("occupied_subcarriers exceeds fft_size")
        if self.cp_length < 0:
            raise ValueError("cp_length must be >= 0")
        bad = [i for i in self.dmrs_symbol_indices if not 1 <= i <= self.symbols_per_slot]
        if bad:
            raise ValueError(f"DMRS symbol indices out of range: {bad}")

    @property
    def symbol_len(self) -> int:
        return self.cp_length + self.fft_size

    @property
    def slot_len(self) -> int:
        return self.symbols_per_slot * self.symbol_len

    @property
    def slot_duration(self) -> float:
        if self.slot_duration_s is not None:
            return self.slot_duration_s
        return self.slot_len / self.sample_rate

    def occupied_bins(self) -> np.ndarray:
        """FFT bin indices (natural order) of the centered occupied block."""
        half = self.occupied_subcarriers // 2
        upper = np.arange(0, self.occupied_subcarriers - half)
        lower = np.arange(self.fft_size - half, self.fft_size)
        return np.concatenate([lower, upper])

    def dmrs_positions(self) -> list[int]:
        """0-based symbol positions of the DMRS symbols, ascending."""
        return sorted(i - 1 for i in self.dmrs_symbol_indices)

    def data_positions(self) -> list[int]:
        dmrs = set(self.dmrs_positions())
        return [i for i in range(self.symbols_per_slot) if i not in dmrs]

    def symbol_slice(self, position: int, include_cp: bool = True) -> slice:
        start = position * self.symbol_len
        if include_cp:
            return slice(start, start + self.symbol_len)
        return slice(start + self.cp_length, start + self.symbol_len)


@dataclass(frozen=True)
class SubSymbolSchedule:
    """Beam-per-window mapping inside one DMRS symbol body.

    The body is split into ``num_beams`` windows of ``sub_len`` samples;
    the trailing fft_size - num_beams*sub_len samples belong to no window
    (the estimator ignores them).
    """

    num_beams: int
    sub_len: int
    fft_size: int

    def __post_init__(self):
        if self.num_beams < 1 or self.sub_len < 1:
            raise ValueError("num_beams and sub_len must be positive")
        if self.num_beams * self.sub_len > self.fft_size:
            raise ValueError("schedule does not fit in the symbol body")

    @classmethod
    def for_numerology(cls, numerology: Numerology, num_beams: int) -> "SubSymbolSchedule":
        return cls(
            num_beams=num_beams,
            sub_len=numerology.fft_size // num_beams,
            fft_size=numerology.fft_size,
        )

    @property
    def unused_tail(self) -> int:
        return self.fft_size - self.num_beams * self.sub_len

    def beam_of_sample(self, n: int) -> int | None:
        """Window index owning body sample n, or None in the unused tail."""
        if not 0 <= n < self.fft_size:
            raise IndexError("sample outside the symbol body")
        m = n // self.sub_len
        return m if m < self.num_beams else None

    def window(self, m: int) -> slice:
        if not 0 <= m < self.num_beams:
            raise IndexError("beam index out of range")
        return slice(m * self.sub_len, (m + 1) * self.sub_len)


def _axis_levels(bits_per_axis: int) -> np.ndarray:
    n = 1 << bits_per_axis
    return 2.0 * np.arange(n) - (n - 1)


def _gray(n: np.ndarray) -> np.ndarray:
    return n ^ (n >> 1)


def constellation(modulation: str) -> tuple[np.ndarray, float]:
    """(per-axis levels, normalization) for a square Gray-mapped QAM."""
    if modulation not in MODULATIONS:
        raise ValueError(f"unknown modulation {modulation!r}")
    bits = MODULATIONS[modulation]
    levels = _axis_levels(bits // 2)
    norm = math.sqrt(2.0 * (len(levels) ** 2 - 1) / 3.0)
    return levels, norm


def _symbols_from_indices(i_idx, q_idx, levels, norm):
    return (levels[i_idx] + 1j * levels[q_idx]) / norm


def _slice_axis(values: np.ndarray, levels: np.ndarray, norm: float) -> np.ndarray:
    idx = np.round((values * norm + len(levels) - 1) / 2.0).astype(int)
    return np.clip(idx, 0, len(levels) - 1)


def _bits_of_indices(idx: np.ndarray, bits_per_axis: int) -> np.ndarray:
    codes = _gray(idx)
    out = np.zeros((len(idx), bits_per_axis), dtype=np.uint8)
    for b in range(bits_per_axis):
        out[:, bits_per_axis - 1 - b] = (codes >> b) & 1
    return out


@dataclass(frozen=True)
class SlotWaveform:
    """One slot: concatenated (CP + body) samples plus per-symbol grids."""

    numerology: Numerology
    modulation: str
    grids: np.ndarray  # (symbols_per_slot, fft_size) complex
    samples: np.ndarray  # (slot_len,) complex

    def symbol_body(self, position: int) -> np.ndarray:
        return self.samples[self.numerology.symbol_slice(position, include_cp=False)]

    def grid(self, position: int) -> np.ndarray:
        return self.grids[position]


def _assemble_samples(numerology: Numerology, grids: np.ndarray) -> np.ndarray:
    bodies = np.fft.ifft(grids, axis=1)
    out = np.empty(numerology.slot_len, dtype=np.complex128)
    cp = numerology.cp_length
    for pos in range(numerology.symbols_per_slot):
        sl = numerology.symbol_slice(pos)
        body = bodies[pos]
        out[sl] = np.concatenate([body[-cp:] if cp else body[:0], body])
    return out


def generate_slot(
    numerology: Numerology,
    modulation: str,
    seed: int,
    dmrs_seed: int | None = None,
) -> SlotWaveform:
    """Build a slot: random QAM data symbols plus known unit-modulus DMRS.

    ``seed`` drives the data payload only. The DMRS sequence is drawn from
    ``dmrs_seed`` (a fixed default), so waveforms generated for different
    users share identical reference symbols. Unoccupied bins are exactly
    zero.
    """
    levels, norm = constellation(modulation)
    bins = numerology.occupied_bins()
    rng = np.random.default_rng(seed)
    base_dmrs = DEFAULT_DMRS_SEED if dmrs_seed is None else dmrs_seed

    grids = np.zeros((numerology.symbols_per_slot, numerology.fft_size), dtype=complex)
    for pos in range(numerology.symbols_per_slot):
        if pos in numerology.dmrs_positions():
            # Per-symbol sequence; unit modulus on every occupied bin.
            rng_d = np.random.default_rng(base_dmrs + pos)
            quad = rng_d.integers(0, 4, size=len(bins))
            grids[pos, bins] = np.exp(1j * (np.pi / 4.0 + np.pi / 2.0 * quad))
        else:
            i_idx = rng.integers(0, len(levels), size=len(bins))
            q_idx = rng.integers(0, len(levels), size=len(bins))
            grids[pos, bins] = _symbols_from_indices(i_idx, q_idx, levels, norm)

    return SlotWaveform(
        numerology=numerology,
        modulation=modulation,
        grids=grids,
        samples=_assemble_samples(numerology, grids),
    )


@dataclass(frozen=True)
class PredistortionPlan:
    """Per-sub-symbol scaling applied to the DMRS waveform at the transmitter.

    ``amplitude[m]`` is the gain-ratio sqrt(sum_u g_data_u / sum_u g_dmrs_mu)
    that equalizes the received DMRS power with the data symbols.
    ``phase[m]`` additionally aligns the user-averaged complex response of
    beam m with the data beamformer, so the full-symbol channel estimate at
    the user is not scrambled by per-window phase jumps.
    """

    amplitude: np.ndarray
    phase: np.ndarray = None

    def __post_init__(self):
        amp = np.asarray(self.amplitude, dtype=float)
        if np.any(amp <= 0):
            raise ValueError("pre-distortion amplitudes must be > 0")
        object.__setattr__(self, "amplitude", amp)
        ph = np.zeros_like(amp) if self.phase is None else np.asarray(self.phase, float)
        if ph.shape != amp.shape:
            raise ValueError("phase and amplitude shapes differ")
        object.__setattr__(self, "phase", ph)

    def __len__(self) -> int:
        return len(self.amplitude)

    @property
    def factors(self) -> np.ndarray:
        return self.amplitude * np.exp(1j * self.phase)

    @classmethod
    def identity(cls, num_beams: int) -> "PredistortionPlan":
        return cls(amplitude=np.ones(num_beams))


def build_predistortion_plan(
    dmrs_beams: list[Beamformer],
    data_beam: Beamformer,
    users,
    geometry: ArrayGeometry,
    phase_align: bool = False,
) -> PredistortionPlan:
    """Gain-ratio factors for each sub-symbol beam.

    The simulated channel applies magnitude beam gains, so amplitude-only
    factors make the received DMRS level match the data symbols exactly;
    ``phase_align`` additionally rotates each window onto the data beam's
    user-averaged complex response, which only matters for receivers that
    model the full complex array response. With no users there is nothing
    to compensate and the identity plan is returned.
    """
    m_beams = len(dmrs_beams)
    if not users:
        return PredistortionPlan.identity(m_beams)
    s_users = np.array([steering_vector(geometry, u.angle) for u in users])
    inner_data = s_users @ data_beam.weights
    g_data = np.abs(inner_data) ** 2
    amplitude = np.empty(m_beams)
    phase = np.zeros(m_beams)
    for m, beam in enumerate(dmrs_beams):
        inner = s_users @ beam.weights
        g_sum = float(np.sum(np.abs(inner) ** 2))
        if g_sum <= 1e-30:
            raise ValueError(
                f"sub-symbol beam {m} has no gain toward any user; "
                "cannot form the pre-distortion ratio"
            )
        amplitude[m] = math.sqrt(float(np.sum(g_data)) / g_sum)
        if phase_align:
            phase[m] = float(np.angle(np.sum(np.conj(inner) * inner_data)))
    return PredistortionPlan(amplitude=amplitude, phase=phase)


def predistort_dmrs(
    slot: SlotWaveform,
    schedule: SubSymbolSchedule,
    plan: PredistortionPlan,
) -> SlotWaveform:
    """Scale each DMRS sub-symbol window by its plan factor.

    Data symbols are untouched (bit-exact). The CP of each DMRS symbol is
    rebuilt from the scaled body so it stays a true cyclic prefix; samples
    in the unused tail of the schedule keep unit scaling.
    """
    if len(plan) != schedule.num_beams:
        raise ValueError("plan length does not match the schedule")
    num = slot.numerology
    if schedule.fft_size != num.fft_size:
        raise ValueError("schedule does not match the slot numerology")
    samples = slot.samples.copy()
    grids = slot.grids.copy()
    factors = plan.factors
    cp = num.cp_length
    for pos in num.dmrs_positions():
        body = slot.symbol_body(pos).copy()
        for m in range(schedule.num_beams):
            body[schedule.window(m)] *= factors[m]
        sl = num.symbol_slice(pos)
        samples[sl] = np.concatenate([body[-cp:] if cp else body[:0], body])
        grids[pos] = np.fft.fft(body)
    return replace(slot, samples=samples, grids=grids)


def estimate_user_csi(
    rx_symbol: np.ndarray,
    tx_symbol: np.ndarray,
    numerology: Numerology,
) -> np.ndarray:
    """Per-subcarrier channel estimate Y[k]/X[k] on the occupied bins.

    Both inputs are CP-stripped time-domain symbol bodies of fft_size
    samples.
    """
    if len(rx_symbol) != numerology.fft_size or len(tx_symbol) != numerology.fft_size:
        raise ValueError("symbol bodies must have fft_size samples")
    bins = numerology.occupied_bins()
    rx_f = np.fft.fft(rx_symbol)
    tx_f = np.fft.fft(tx_symbol)
    return rx_f[bins] / tx_f[bins]


def slot_user_csi(
    rx_samples: np.ndarray,
    reference: SlotWaveform,
    numerology: Numerology,
) -> np.ndarray:
    """Average the per-DMRS-symbol estimates over the slot.

    The reference is the undistorted slot (the sequence users know); the
    received samples are whatever the channel delivered, CPs included.
    """
    acc = None
    for pos in numerology.dmrs_positions():
        rx_body = rx_samples[numerology.symbol_slice(pos, include_cp=False)]
        h = estimate_user_csi(rx_body, reference.symbol_body(pos), numerology)
        acc = h if acc is None else acc + h
    return acc / len(numerology.dmrs_positions())


def demodulate_and_score(
    rx_grids: np.ndarray,
    tx_slot: SlotWaveform,
    csi: np.ndarray,
    modulation: str | None = None,
) -> dict:
    """Equalize the data symbols, slice, and report EVM (%) and uncoded BER.

    ``rx_grids`` holds the received frequency grids for the data symbols in
    slot order, shape (num_data_symbols, fft_size). EVM is the RMS error
    vector relative to the transmitted constellation points, in percent.
    """
    modulation = modulation or tx_slot.modulation
    if modulation != tx_slot.modulation:
        raise ValueError(
            f"modulation {modulation!r} does not match the slot ({tx_slot.modulation!r})"
        )
    levels, norm = constellation(modulation)
    bits_axis = MODULATIONS[modulation] // 2
    num = tx_slot.numerology
    bins = num.occupied_bins()
    data_pos = num.data_positions()
    if len(rx_grids) != len(data_pos):
        raise ValueError("rx_grids must cover exactly the data symbols")

    err_power = 0.0
    ref_power = 0.0
    bit_errors = 0
    bit_total = 0
    for row, pos in enumerate(data_pos):
        eq = rx_grids[row][bins] / csi
        ref = tx_slot.grid(pos)[bins]
        err_power += float(np.sum(np.abs(eq - ref) ** 2))
        ref_power += float(np.sum(np.abs(ref) ** 2))
        for part in (np.real, np.imag):
            rx_idx = _slice_axis(part(eq), levels, norm)
            tx_idx = _slice_axis(part(ref), levels, norm)
            rx_bits = _bits_of_indices(rx_idx, bits_axis)
            tx_bits = _bits_of_indices(tx_idx, bits_axis)
            bit_errors += int(np.sum(rx_bits != tx_bits))
            bit_total += rx_bits.size
    return {
        "evm_percent": 100.0 * math.sqrt(err_power / ref_power),
        "ber": bit_errors / bit_total,
        "bits": bit_total,
    }


# ---------------------------------------------------------------------------
# I/Q file exchange: text header + interleaved float32 little-endian payload
# ---------------------------------------------------------------------------


def write_iq(path, samples: np.ndarray, numerology: Numerology, extra: dict | None = None):
    starts = [numerology.symbol_slice(i).start for i in range(numerology.symbols_per_slot)]
    header = [
        "IQ32F v1",
        f"sample_rate_hz {numerology.sample_rate!r}",
        f"fft_size {numerology.fft_size}",
        f"cp_length {numerology.cp_length}",
        f"symbols_per_slot {numerology.symbols_per_slot}",
        f"num_samples {len(samples)}",
        "symbol_starts " + ",".join(str(s) for s in starts),
    ]
    for key, value in (extra or {}).items():
        header.append(f"{key} {value}")
    header.append("end_header")
    interleaved = np.empty(2 * len(samples), dtype="<f4")
    interleaved[0::2] = np.real(samples)
    interleaved[1::2] = np.imag(samples)
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        f.write(interleaved.tobytes())


def read_iq(path) -> tuple[np.ndarray, dict]:
    meta = {}
    with open(path, "rb") as f:
        magic = f.readline().decode("ascii").strip()
        if magic != "IQ32F v1":
            raise ValueError(f"not an IQ32F v1 file: {magic!r}")
        while True:
            line = f.readline().decode("ascii").strip()
            if line == "end_header":
                break
            if not line:
                raise ValueError("truncated I/Q header")
            key, _, value = line.partition(" ")
            meta[key] = value
        payload = np.frombuffer(f.read(), dtype="<f4")
    samples = payload[0::2].astype(np.float64) + 1j * payload[1::2].astype(np.float64)
    expected = int(meta.get("num_samples", len(samples)))
    if len(samples) != expected:
        raise ValueError("payload length does not match the header")
    return samples, meta

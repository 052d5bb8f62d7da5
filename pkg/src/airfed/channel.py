"""Wireless layer: fading, analog aggregation, digital cost and energy.

The analog uplink works per time slot. Every client inverts its own
complex channel gain on each subcarrier it is allowed to use (gain
magnitude above the truncation threshold), scales by a shared factor
alpha negotiated so nobody exceeds their average power budget, and all
clients transmit simultaneously. The receiver sees the superposed
symbols plus AWGN, divides by alpha and keeps the real part, which
recovers the coordinate-wise sum of the transmitted chunks.

Channel gains are plain complex128 arrays, one row per client, one
column per subcarrier.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

INF_SCALE = math.inf  # sentinel: client has nothing it can transmit this slot


@dataclass(frozen=True)
class OtaConfig:
    """Link-level constants; defaults follow LTE-style numerology."""

    b: int = 1200  # subcarriers per time slot
    w_sub: float = 15_000.0  # subcarrier bandwidth, Hz
    tau_sym: float = 1e-3  # symbol duration, s
    h_th: float = 0.1  # truncation threshold on |h|
    snr_db: float = 25.0  # transmit SNR defining the analog noise floor
    p_n: float = 1e-3  # per-client average power budget, W
    n0: float = 1e-9  # noise spectral density, W/Hz (digital model)

    def __post_init__(self):
        if self.b < 1:
            raise ValueError("b must be >= 1")
        for name in ("w_sub", "tau_sym", "snr_db", "p_n", "n0"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if self.h_th < 0:
            raise ValueError("h_th must be >= 0")

    @property
    def noise_sigma(self) -> float:
        """AWGN std from the transmit-SNR convention sigma^2 = p_n / 10^(snr/10)."""
        return math.sqrt(self.p_n / 10.0 ** (self.snr_db / 10.0))


@dataclass(frozen=True)
class EnergyLedger:
    """Per-client running totals; every field only ever grows."""

    e_compute_j: float = 0.0
    e_transmit_j: float = 0.0
    bits_sent: int = 0
    slots_used: int = 0

    @property
    def total_j(self) -> float:
        return self.e_compute_j + self.e_transmit_j


def sample_channel_matrix(
    n_clients: int, b: int, rng: np.random.Generator
) -> np.ndarray:
    """(n_clients, b) complex gains with E|h|^2 = 1 (Rayleigh magnitudes)."""
    if n_clients < 1 or b < 1:
        raise ValueError("n_clients and b must be >= 1")
    scale = math.sqrt(0.5)
    re = rng.standard_normal((n_clients, b)) * scale
    im = rng.standard_normal((n_clients, b)) * scale
    return re + 1j * im


def eligible_indices(gains_row: np.ndarray, h_th: float) -> np.ndarray:
    """Subcarrier indices whose gain magnitude clears the threshold."""
    if h_th < 0:
        raise ValueError("h_th must be >= 0")
    return np.flatnonzero(np.abs(np.asarray(gains_row)) >= h_th)


def client_scale_factor(
    chunk: np.ndarray, gains_row: np.ndarray, h_th: float, p_n: float
) -> float:
    """Largest alpha this client can tolerate without busting its power cap.

    Solves (alpha^2 / |e|) * sum_{i in e} |chunk_i / h_i|^2 <= p_n for the
    eligible set e. Returns the INF_SCALE sentinel when the client has no
    eligible subcarrier or only zero coordinates to send (then it imposes
    no constraint on the shared scale).
    """
    chunk = np.asarray(chunk, dtype=np.float64)
    gains_row = np.asarray(gains_row)
    if chunk.shape != gains_row.shape:
        raise ValueError("chunk and gains row must have equal length")
    if p_n <= 0:
        raise ValueError("p_n must be > 0")
    idx = eligible_indices(gains_row, h_th)
    if idx.size == 0:
        return INF_SCALE
    load = np.sum(np.abs(chunk[idx] / gains_row[idx]) ** 2)
    if load == 0.0:
        return INF_SCALE
    return math.sqrt(p_n * idx.size / load)


def global_scale_factor(alphas) -> float:
    """Minimum of the per-client factors, ignoring sentinel entries."""
    alphas = list(alphas)
    if not alphas:
        raise ValueError("need at least one scale factor")
    finite = [a for a in alphas if math.isfinite(a)]
    if not finite:
        return INF_SCALE
    return min(finite)


def ota_aggregate_slot(
    chunks: np.ndarray,
    gains: np.ndarray,
    h_th: float,
    alpha: float,
    noise_sigma: float,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """One analog slot: superpose all clients' precoded symbols, add AWGN.

    Args:
        chunks: (n_clients, L) real coordinates to convey this slot.
        gains: (n_clients, L) complex channel matrix for the slot.
        h_th: truncation threshold on |h|.
        alpha: shared scale factor (finite, > 0; caller skips dead slots).
        noise_sigma: std of the complex receiver noise (0 disables it).
        rng: noise source.

    Returns:
        (received, participants): per-subcarrier sum of the participating
        clients' coordinates plus Re(z)/alpha, and how many clients
        contributed to each subcarrier.
    """
    chunks = np.asarray(chunks, dtype=np.float64)
    gains = np.asarray(gains)
    if chunks.shape != gains.shape:
        raise ValueError("chunks and gains must have the same shape")
    if not (math.isfinite(alpha) and alpha > 0):
        raise ValueError("alpha must be finite and > 0")

    mask = np.abs(gains) >= h_th
    symbols = np.where(mask, alpha * chunks / np.where(mask, gains, 1.0), 0.0)
    received_c = (gains * symbols).sum(axis=0)
    if noise_sigma > 0:
        scale = noise_sigma * math.sqrt(0.5)
        noise = rng.standard_normal(chunks.shape[1]) * scale + 1j * (
            rng.standard_normal(chunks.shape[1]) * scale
        )
        received_c = received_c + noise
    received = np.real(received_c) / alpha
    participants = mask.sum(axis=0)
    return received, participants


def ota_slots_for_round(d: int, b: int, hessian_round: bool) -> int:
    """Slots to move a d-vector over b subcarriers; curvature rounds pay twice."""
    if d < 1 or b < 1:
        raise ValueError("d and b must be >= 1")
    base = -(-d // b)
    return 2 * base if hessian_round else base


def digital_rate(p: float, gain_sq: float, n0: float, w: float) -> float:
    """Shannon rate w * log2(1 + p * gain_sq / (n0 * w)) in bits/s."""
    if w <= 0:
        raise ValueError("bandwidth must be > 0")
    if p < 0 or gain_sq < 0 or n0 < 0:
        raise ValueError("p, gain_sq and n0 must be >= 0")
    return w * math.log2(1.0 + p * gain_sq / (n0 * w))


def digital_slots(
    d: int,
    bits_per_param: int,
    subcarriers_per_client: int,
    cfg: OtaConfig,
    rng: np.random.Generator | None,
) -> int:
    """Slots a client needs to push bits_per_param * d bits digitally.

    Each slot draws fresh Rayleigh gains on the client's subcarrier
    allocation and credits tau_sym * rate bits per subcarrier. With
    rng=None the fading is disabled (|h|^2 = 1 on every subcarrier),
    which makes the count a deterministic ceiling.
    """
    if d <= 0:
        return 0
    if bits_per_param < 1 or subcarriers_per_client < 1:
        raise ValueError("bits_per_param and subcarriers_per_client must be >= 1")
    budget = float(bits_per_param) * d
    s = subcarriers_per_client

    if rng is None:
        per_slot = s * cfg.tau_sym * digital_rate(cfg.p_n, 1.0, cfg.n0, cfg.w_sub)
        return int(math.ceil(budget / per_slot))

    slots = 0
    sent = 0.0
    block = 256  # draw fading in blocks; cheaper than slot-at-a-time
    while True:
        gains_sq = np.abs(sample_channel_matrix(block, s, rng)) ** 2
        snr = cfg.p_n * gains_sq / (cfg.n0 * cfg.w_sub)
        bits_per_slot = (cfg.w_sub * np.log2(1.0 + snr)).sum(axis=1) * cfg.tau_sym
        cum = sent + np.cumsum(bits_per_slot)
        hit = np.flatnonzero(cum >= budget)
        if hit.size:
            return slots + int(hit[0]) + 1
        slots += block
        sent = cum[-1]


def energy_accumulate(
    ledger: EnergyLedger,
    e_compute_round: float,
    bits_sent_round: int,
    e_per_bit: float,
    slots_round: int = 0,
) -> EnergyLedger:
    """Charge one round of compute plus per-bit transmission energy."""
    if e_compute_round < 0 or bits_sent_round < 0 or e_per_bit < 0 or slots_round < 0:
        raise ValueError("energy inputs must be >= 0")
    return replace(
        ledger,
        e_compute_j=ledger.e_compute_j + e_compute_round,
        e_transmit_j=ledger.e_transmit_j + bits_sent_round * e_per_bit,
        bits_sent=ledger.bits_sent + bits_sent_round,
        slots_used=ledger.slots_used + slots_round,
    )

"""BPSK/AWGN channel LLRs for the all-zero codeword."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .bp import LLR_MAX

# sub-streams of one trial seed
_NOISE, _MANIP = 0, 1


def noise_variance(snr_db: float, rate: float) -> float:
    """sigma^2 = 1 / (2 R 10^(Eb/N0 / 10)) for unit-energy BPSK."""
    return 1.0 / (2.0 * rate * 10.0 ** (snr_db / 10.0))


def channel_ber(snr_db: float, rate: float) -> float:
    """Uncoded BPSK bit-error rate Q(1/sigma)."""
    return 0.5 * math.erfc(1.0 / math.sqrt(2.0 * noise_variance(snr_db, rate)))


def trial_rng(seed: int, trial: int, stream: int = _NOISE) -> np.random.Generator:
    """Counter-based stream: depends only on (seed, trial, stream), never on scheduling."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(trial, stream))))


@dataclass(frozen=True, eq=False)
class LlrFrame:
    llr: np.ndarray
    L: int
    n: int
    snr_db: float
    rate: float
    seed: int = 0
    trial: int = 0
    manip: tuple[int, float] | None = None

    def __post_init__(self):
        if self.llr.shape != (self.L * self.n,):
            raise ValueError(f"frame holds {self.llr.shape} LLRs, expected {self.L * self.n}")
        if not np.all(np.isfinite(self.llr)):
            raise ValueError("frame LLRs must be finite")

    @property
    def sigma2(self) -> float:
        return noise_variance(self.snr_db, self.rate)

    def block(self, j: int) -> np.ndarray:
        """LLRs of spatial position ``j`` (1-based)."""
        return self.llr[(j - 1) * self.n:j * self.n]

    def pre_errors(self) -> int:
        return int(np.count_nonzero(self.llr < 0))


def awgn_llrs(L: int, n: int, snr_db: float, rate: float, seed: int, trial: int = 0) -> LlrFrame:
    if not 0.0 < rate < 1.0:
        raise ValueError(f"rate must lie in (0, 1), got {rate}")
    if not math.isfinite(snr_db):
        if snr_db > 0:
            return LlrFrame(np.full(L * n, LLR_MAX), L, n, snr_db, rate, seed, trial)
        raise ValueError("snr_db must be finite or +inf")
    sigma2 = noise_variance(snr_db, rate)
    y = 1.0 + math.sqrt(sigma2) * trial_rng(seed, trial).standard_normal(L * n)
    llr = np.clip(2.0 * y / sigma2, -LLR_MAX, LLR_MAX)
    return LlrFrame(llr, L, n, float(snr_db), float(rate), seed, trial)


def manipulate_block(frame: LlrFrame, j: int, snr_manip_db: float) -> LlrFrame:
    """Lower the effective SNR of block ``j`` by adding noise to its received values.

    The receiver is unaware of the extra noise, so LLRs are rescaled with the
    nominal variance.
    """
    if not snr_manip_db < frame.snr_db:
        raise ValueError(f"manipulated SNR {snr_manip_db} dB must be below nominal {frame.snr_db} dB")
    if not 1 <= j <= frame.L:
        raise ValueError(f"block {j} outside 1..{frame.L}")
    s_nom = frame.sigma2
    s_add = noise_variance(snr_manip_db, frame.rate) - s_nom
    lo, hi = (j - 1) * frame.n, j * frame.n
    y = frame.llr[lo:hi] * s_nom / 2.0
    y = y + math.sqrt(s_add) * trial_rng(frame.seed, frame.trial, _MANIP).standard_normal(frame.n)
    llr = frame.llr.copy()
    llr[lo:hi] = np.clip(2.0 * y / s_nom, -LLR_MAX, LLR_MAX)
    return replace(frame, llr=llr, manip=(j, float(snr_manip_db)))

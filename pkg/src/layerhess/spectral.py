"""Spectral and statistical summaries of Hessians and value series."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import NamedTuple

import numpy as np

from .local_hessian import LocalHessian, NeuronBlockHessian
from .numerics import NumericsError, check_symmetric, real_fft_power, sym_eigenvalues

WELCH_WINDOW = 256
WELCH_HOP = 128
MIN_WINDOW = 8
HIST_BINS = 64
N_PEAKS = 5
NEAR_ZERO_RTOL = 1e-6

_EPS = np.finfo(np.float64).eps


@dataclass
class HessianSpectrum:
    layer_index: int
    eigenvalues: np.ndarray
    trace: float
    log_abs_det: float  # over eigenvalues above the rank tolerance
    singular: bool
    rank: int
    condition: float  # inf when rank deficient
    pseudo_condition: float  # largest / smallest non-negligible magnitude; inf if rank 0
    near_zero_fraction: float
    symmetry_score: float

    @property
    def dim(self) -> int:
        return int(self.eigenvalues.size)


def rank_tolerance(eigenvalues: np.ndarray) -> float:
    if eigenvalues.size == 0:
        return 0.0
    return eigenvalues.size * _EPS * float(np.max(np.abs(eigenvalues)))


def symmetry_score(eigenvalues) -> float:
    lam = np.asarray(eigenvalues, dtype=np.float64)
    total = float(np.sum(np.abs(lam)))
    if total == 0.0:
        return 0.0
    return 1.0 - abs(float(np.sum(lam))) / total


def near_zero_fraction(eigenvalues, rtol: float = NEAR_ZERO_RTOL) -> float:
    lam = np.abs(np.asarray(eigenvalues, dtype=np.float64))
    if lam.size == 0:
        return 0.0
    cut = rtol * max(1.0, float(lam.max()))
    return float(np.count_nonzero(lam <= cut)) / lam.size


def spectrum_from_eigenvalues(eigenvalues, layer_index: int = 0) -> HessianSpectrum:
    lam = np.sort(np.asarray(eigenvalues, dtype=np.float64), kind="stable")
    mags = np.abs(lam)
    tau = rank_tolerance(lam)
    live = mags > tau
    rank = int(np.count_nonzero(live))
    dim = lam.size
    biggest = float(mags.max()) if dim else 0.0
    pseudo = biggest / float(mags[live].min()) if rank else math.inf
    return HessianSpectrum(
        layer_index=layer_index,
        eigenvalues=lam,
        trace=float(np.sum(lam)),
        log_abs_det=float(np.sum(np.log(mags[live]))) if rank else -math.inf,
        singular=rank < dim,
        rank=rank,
        condition=pseudo if rank == dim and dim else math.inf,
        pseudo_condition=pseudo,
        near_zero_fraction=near_zero_fraction(lam),
        symmetry_score=symmetry_score(lam),
    )


def hessian_spectrum(h: LocalHessian | NeuronBlockHessian | np.ndarray,
                     method: str = "lapack") -> HessianSpectrum:
    """Eigen-statistics of a local Hessian.

    Dense input goes through the symmetric eigensolver; per-neuron block
    input uses the union of block spectra, which is the same multiset.
    """
    if isinstance(h, NeuronBlockHessian):
        return spectrum_from_eigenvalues(h.eigenvalues(), h.layer_index)
    if isinstance(h, LocalHessian):
        idx, mat = h.layer_index, h.matrix
    else:
        idx, mat = 0, h
    return spectrum_from_eigenvalues(sym_eigenvalues(check_symmetric(mat, "Hessian"), method), idx)


class WelchPSD(NamedTuple):
    psd: np.ndarray
    frequencies: np.ndarray  # cycles per sample
    window: int
    segments: int


def hann(n: int) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def welch_psd(signal, window: int = WELCH_WINDOW, hop: int = WELCH_HOP) -> WelchPSD:
    """Averaged Hann-windowed periodograms, one-sided density scaling.

    Unit-variance white noise gives a flat level of about 2. Signals shorter
    than ``window`` fall back to one periodogram over the largest power of
    two that fits (at least 8 samples, zero padded if needed).
    """
    x = np.asarray(signal, dtype=np.float64).reshape(-1)
    if x.size == 0:
        raise NumericsError("empty signal")
    if not np.all(np.isfinite(x)):
        raise NumericsError("signal has non-finite samples")
    if x.size < window:
        win_len = max(MIN_WINDOW, 1 << int(math.floor(math.log2(x.size))))
        seg = np.zeros(win_len)
        m = min(win_len, x.size)
        seg[:m] = x[:m]
        starts, data = [0], seg
    else:
        win_len = window
        starts = list(range(0, x.size - window + 1, hop))
        data = x
    w = hann(win_len)
    norm = float(np.sum(w * w))
    acc = np.zeros(win_len // 2 + 1)
    for s in starts:
        acc += real_fft_power(data[s:s + win_len] * w)
    psd = acc / (len(starts) * norm)
    psd[1:-1] *= 2.0
    return WelchPSD(psd, np.arange(psd.size) / win_len, win_len, len(starts))


class Peak(NamedTuple):
    bin: int
    frequency: float
    power: float


def top_peaks(psd, k: int = N_PEAKS) -> list[Peak]:
    """Strict local maxima of a one-sided PSD, strongest first."""
    p = np.asarray(psd, dtype=np.float64).reshape(-1)
    if p.size == 0:
        raise NumericsError("empty PSD")
    if k < 1:
        raise ValueError("k must be >= 1")
    n = p.size
    win_len = max(2 * (n - 1), 1)
    found = []
    for i in range(n):
        left = i == 0 or p[i] > p[i - 1]
        right = i == n - 1 or p[i] > p[i + 1]
        if left and right and n > 1:
            found.append(i)
        elif n == 1:
            found.append(0)
    found.sort(key=lambda i: (-p[i], i))
    return [Peak(i, i / win_len, float(p[i])) for i in found[:k]]


# coefficients of the Royston (1995) approximation, ascending powers
_C1 = (0.0, 0.221157, -0.147981, -2.07119, 4.434685, -2.706056)
_C2 = (0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633)
_C3 = (0.544, -0.39978, 0.025054, -6.714e-4)
_C4 = (1.3822, -0.77857, 0.062767, -0.0020322)
_C5 = (-1.5861, -0.31082, -0.083751, 0.0038915)
_C6 = (-0.4803, -0.082676, 0.0030302)
_G = (-2.273, 0.459)


def _poly(c, x: float) -> float:
    out = 0.0
    for coef in reversed(c):
        out = out * x + coef
    return out


def shapiro_wilk(sample) -> tuple[float, float]:
    """Shapiro-Wilk W and its p-value via Royston's normalising transform."""
    x = np.sort(np.asarray(sample, dtype=np.float64).reshape(-1))
    n = x.size
    if not 3 <= n <= 5000:
        raise NumericsError(f"Shapiro-Wilk needs 3 <= n <= 5000, got {n}")
    if not np.all(np.isfinite(x)):
        raise NumericsError("sample has non-finite values")
    rng = x[-1] - x[0]
    if rng <= 1e-19 * max(1.0, abs(x[0])):
        raise NumericsError("Shapiro-Wilk undefined for a constant sample")

    half = n // 2
    if n == 3:
        a = np.array([math.sqrt(0.5)])
    else:
        nd = NormalDist()
        m = np.array([nd.inv_cdf((i - 0.375) / (n + 0.25)) for i in range(1, half + 1)])
        summ2 = 2.0 * float(m @ m)
        ssumm2 = math.sqrt(summ2)
        rsn = 1.0 / math.sqrt(n)
        a1 = _poly(_C1, rsn) - m[0] / ssumm2
        if n > 5:
            a2 = -m[1] / ssumm2 + _poly(_C2, rsn)
            fac = math.sqrt((summ2 - 2 * m[0] ** 2 - 2 * m[1] ** 2) / (1 - 2 * a1 ** 2 - 2 * a2 ** 2))
            a = -m / fac
            a[1] = a2
        else:
            fac = math.sqrt((summ2 - 2 * m[0] ** 2) / (1 - 2 * a1 ** 2))
            a = -m / fac
        a[0] = a1

    xs = x / rng  # scale-free for numerical safety
    num = float(np.sum(a * (xs[::-1][:half] - xs[:half])))
    ssq = float(np.sum((xs - xs.mean()) ** 2))
    w = min(1.0, num * num / ssq)

    if n == 3:
        pw = (6.0 / math.pi) * (math.asin(math.sqrt(w)) - math.pi / 3.0)
        return w, min(1.0, max(0.0, pw))
    w1 = math.log1p(-w) if w < 1.0 else -math.inf
    if w1 == -math.inf:
        return w, 1.0
    if n <= 11:
        gamma = _poly(_G, n)
        if w1 >= gamma:
            return w, 1e-99
        y = -math.log(gamma - w1)
        mean, sd = _poly(_C3, n), math.exp(_poly(_C4, n))
    else:
        ln = math.log(n)
        y = w1
        mean, sd = _poly(_C5, ln), math.exp(_poly(_C6, ln))
    z = (y - mean) / sd
    return w, 0.5 * math.erfc(z / math.sqrt(2.0))


@dataclass
class SpectralSummary:
    mean: float
    std: float
    min: float
    max: float
    bin_edges: list[float]
    counts: list[int]
    welch: list[float]
    welch_window: int
    top_peaks: list[tuple[int, float, float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "mean": self.mean, "std": self.std, "min": self.min, "max": self.max,
            "histogram": {"bin_edges": list(self.bin_edges), "counts": list(self.counts)},
            "welch": list(self.welch),
            "welch_window": self.welch_window,
            "top_peaks": [list(p) for p in self.top_peaks],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SpectralSummary":
        return cls(d["mean"], d["std"], d["min"], d["max"],
                   list(d["histogram"]["bin_edges"]), list(d["histogram"]["counts"]),
                   list(d["welch"]), d["welch_window"],
                   [(int(b), f, p) for b, f, p in d["top_peaks"]])


def series_summary(values) -> SpectralSummary:
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    if v.size == 0:
        raise NumericsError("cannot summarise an empty series")
    if not np.all(np.isfinite(v)):
        raise NumericsError("series has non-finite values")
    lo, hi = float(v.min()), float(v.max())
    mean = min(hi, max(lo, float(np.mean(v))))
    std = float(np.sqrt(np.mean((v - mean) ** 2)))
    if lo == hi:
        edges = np.linspace(lo - 0.5, hi + 0.5, HIST_BINS + 1)
        counts = np.zeros(HIST_BINS, dtype=np.int64)
        counts[HIST_BINS // 2] = v.size
    else:
        counts, edges = np.histogram(v, bins=HIST_BINS, range=(lo, hi))
    wp = welch_psd(v)
    peaks = top_peaks(wp.psd, N_PEAKS)
    return SpectralSummary(
        mean=mean, std=std, min=lo, max=hi,
        bin_edges=edges.tolist(), counts=[int(c) for c in counts],
        welch=wp.psd.tolist(), welch_window=wp.window,
        top_peaks=[(p.bin, p.frequency, p.power) for p in peaks],
    )

"""Binary exposure-code design for flutter-shutter photography.

A shutter code is a fixed-length 0/1 sequence; during one exposure each bit
gates an equal sub-exposure segment (1 = shutter open). Two properties drive
the code search:

* the DFT magnitude spectrum of the sequence should have a large minimum and
  a low variance, so the induced motion-blur kernel keeps energy at all
  frequencies (a box blur, all ones, has spectral zeros);
* the sequence should not be a palindrome, so that a motion trajectory and
  its time reversal produce different blur profiles and the motion direction
  stays recoverable from a single snapshot.

Ranking uses the minimum over the *non-DC* bins: the DC bin always equals
the number of open segments and says nothing about kernel invertibility.
Scores are quantized to 1e-9 before comparison so that mathematically tied
candidates fall through to the lexicographic tie-break instead of being
ordered by floating-point noise of the FFT backend.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

# above this length exhaustive enumeration of C(length, ones) gets slow;
# fall back to seeded uniform sampling of this many candidates
EXHAUSTIVE_MAX_LENGTH = 20
DEFAULT_SAMPLE_SIZE = 100_000

_SCORE_DECIMALS = 9


class EmptySearchError(ValueError):
    """No candidate code survived the search filters."""


@dataclass(frozen=True)
class ExposureCode:
    """A binary shutter sequence, e.g. parsed from "11100101"."""

    bits: tuple[int, ...]

    def __post_init__(self):
        if len(self.bits) < 1:
            raise ValueError("exposure code needs at least one bit")
        if any(b not in (0, 1) for b in self.bits):
            raise ValueError(f"exposure code bits must be 0/1, got {self.bits}")

    @classmethod
    def parse(cls, text: str) -> "ExposureCode":
        if not text or set(text) - {"0", "1"}:
            raise ValueError(f"not a binary code string: {text!r}")
        return cls(tuple(int(ch) for ch in text))

    @property
    def id_string(self) -> str:
        return "".join(str(b) for b in self.bits)

    @property
    def ones_count(self) -> int:
        return sum(self.bits)

    def __len__(self) -> int:
        return len(self.bits)

    def reversed(self) -> "ExposureCode":
        return ExposureCode(self.bits[::-1])

    def __str__(self) -> str:
        return self.id_string


@dataclass(frozen=True)
class SpectrumScore:
    """DFT magnitude statistics of a code (all N bins).

    ``min_nondc`` is the minimum over bins 1..N-1; for N == 1 there are no
    non-DC bins and it is +inf.
    """

    magnitudes: np.ndarray = field(repr=False)
    min_mag: float
    min_nondc: float
    variance: float

    def sort_key(self, id_string: str):
        """(min_nondc desc, variance asc, id_string asc), quantized."""
        return (
            -round(self.min_nondc, _SCORE_DECIMALS),
            round(self.variance, _SCORE_DECIMALS),
            id_string,
        )


def dft_magnitude_spectrum(code: ExposureCode) -> SpectrumScore:
    """Score a code by the magnitudes of its length-N DFT.

    magnitudes[k] = |sum_n bits[n] exp(-i 2 pi k n / N)| for k = 0..N-1.
    """
    mags = np.abs(np.fft.fft(np.asarray(code.bits, dtype=np.float64)))
    return _score_from_magnitudes(mags)


def _score_from_magnitudes(mags: np.ndarray) -> SpectrumScore:
    min_nondc = float(mags[1:].min()) if mags.shape[0] > 1 else math.inf
    return SpectrumScore(
        magnitudes=mags,
        min_mag=float(mags.min()),
        min_nondc=min_nondc,
        variance=float(mags.var()),
    )


def is_symmetric(code: ExposureCode) -> bool:
    """True iff the bit string is a palindrome.

    A palindromic code weights a trajectory and its time reversal
    identically, so opposite motion directions collapse onto the same
    blurry snapshot.
    """
    return code.bits == code.bits[::-1]


def search_codes(
    length: int,
    ones_count: int,
    top_k: int,
    require_asymmetric: bool = True,
    seed: int = 0,
    sample_size: int = DEFAULT_SAMPLE_SIZE,
) -> list[tuple[ExposureCode, SpectrumScore]]:
    """Rank candidate codes of fixed length and duty by spectrum quality.

    Enumerates all C(length, ones_count) candidates exhaustively up to
    length 20, otherwise scores ``sample_size`` uniformly sampled candidates
    (seeded, duplicates dropped). Ranking is a total deterministic order:
    min_nondc descending, variance ascending, id_string ascending.

    Raises EmptySearchError when the asymmetry filter removes every
    candidate (every code with the requested duty is a palindrome).
    """
    if length < 1:
        raise ValueError(f"length must be >= 1, got {length}")
    if not 1 <= ones_count <= length:
        raise ValueError(f"need 1 <= ones_count <= length, got {ones_count}/{length}")
    if top_k < 1:
        raise ValueError(f"top_k must be >= 1, got {top_k}")

    if length <= EXHAUSTIVE_MAX_LENGTH:
        candidates = np.zeros((math.comb(length, ones_count), length), dtype=np.float64)
        for row, ones_at in enumerate(itertools.combinations(range(length), ones_count)):
            candidates[row, list(ones_at)] = 1.0
    else:
        rng = np.random.default_rng(seed)
        picks = {
            tuple(sorted(rng.choice(length, size=ones_count, replace=False)))
            for _ in range(sample_size)
        }
        candidates = np.zeros((len(picks), length), dtype=np.float64)
        for row, ones_at in enumerate(sorted(picks)):
            candidates[row, list(ones_at)] = 1.0

    if require_asymmetric:
        keep = ~np.all(candidates == candidates[:, ::-1], axis=1)
        candidates = candidates[keep]
        if candidates.shape[0] == 0:
            raise EmptySearchError(
                f"no asymmetric code with {ones_count} ones of length {length}"
            )

    mags = np.abs(np.fft.fft(candidates, axis=1))
    scored = []
    for row in range(candidates.shape[0]):
        code = ExposureCode(tuple(int(b) for b in candidates[row]))
        scored.append((code, _score_from_magnitudes(mags[row])))
    scored.sort(key=lambda cs: cs[1].sort_key(cs[0].id_string))
    return scored[:top_k]

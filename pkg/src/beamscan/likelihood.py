"""Dirichlet-multinomial marginal likelihoods over SNP-set diplotypes.

A width-w SNP set has 3^w possible diplotypes (genotype code sequences).
Counts are modelled by a multinomial with a symmetric Dirichlet prior whose
per-cell pseudocount is alpha_h = rho / 3^w, so the total pseudocount mass is
rho regardless of width. All evaluation is in log space; alpha_h underflows
double precision past w ~ 650, so per-cell terms use the exact identity

    lnG(n + a) - lnG(a) = ln(a) + lnG(n + a) - lnG(1 + a)      (n >= 1)

with ln(a) formed as ln(rho) - w * ln(3).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .dataio import GenotypeDataset

LOG3 = math.log(3.0)

WHO_BOTH = "both"
WHO_CASES = "cases"
WHO_CONTROLS = "controls"


@dataclass(frozen=True)
class DirichletConfig:
    """Total pseudocount mass shared by the 3^width diplotype cells."""

    rho: float = 1.5

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError("rho must be positive")

    def log_alpha(self, width: int) -> float:
        return math.log(self.rho) - width * LOG3


@dataclass
class DiplotypeCounts:
    """Sparse case/control counts of observed diplotypes in one SNP set.

    ``entries`` maps a packed key (2 bits per SNP, first SNP in the low bits)
    to an (n_cases, n_controls) pair. Unobserved diplotypes are absent.
    """

    width: int
    entries: dict[int, tuple[int, int]] = field(default_factory=dict)
    n_total: int = 0
    m_total: int = 0

    def validate(self) -> None:
        if self.width < 0:
            raise ValueError("width must be non-negative")
        n = m = 0
        for key, (cn, cm) in self.entries.items():
            if key < 0 or key >= 1 << (2 * self.width):
                raise ValueError(f"packed key {key} out of range for width {self.width}")
            if cn < 0 or cm < 0 or cn + cm == 0:
                raise ValueError("entries must hold non-negative counts, not both zero")
            n += cn
            m += cm
        if (n, m) != (self.n_total, self.m_total):
            raise ValueError("totals do not match entry sums")


def pack_codes(codes) -> int:
    """Pack a genotype code sequence into an integer key, 2 bits per SNP."""
    key = 0
    for j, c in enumerate(codes):
        c = int(c)
        if c not in (0, 1, 2):
            raise ValueError(f"genotype code {c} out of range")
        key |= c << (2 * j)
    return key


def unpack_codes(key: int, width: int) -> tuple[int, ...]:
    """Inverse of :func:`pack_codes`."""
    return tuple((key >> (2 * j)) & 3 for j in range(width))


def _pack_matrix(mat: np.ndarray) -> np.ndarray:
    """Pack each row of an (n, w) code matrix into an integer key.

    Rows with w <= 31 fit an int64; wider rows are packed chunk-wise into
    Python ints (rare: only very wide blocks reach this path).
    """
    n, w = mat.shape
    if w == 0:
        return np.zeros(n, dtype=np.int64)
    if w <= 31:
        weights = np.left_shift(np.int64(1), 2 * np.arange(w, dtype=np.int64))
        return mat.astype(np.int64) @ weights
    keys = [0] * n
    for start in range(0, w, 24):
        chunk = mat[:, start : start + 24].astype(np.int64)
        weights = np.left_shift(np.int64(1), 2 * np.arange(chunk.shape[1], dtype=np.int64))
        vals = (chunk @ weights).tolist()
        shift = 2 * start
        keys = [k | (int(v) << shift) for k, v in zip(keys, vals)]
    return np.array(keys, dtype=object)


def count_snp_set(dataset: GenotypeDataset, snps, who: str = WHO_BOTH) -> DiplotypeCounts:
    """Count observed diplotypes over an arbitrary SNP index set."""
    snps = tuple(int(s) for s in snps)
    for s in snps:
        if not 0 <= s < dataset.n_snps:
            raise IndexError(f"SNP index {s} out of range")
    if len(set(snps)) != len(snps):
        raise ValueError("duplicate SNP indices")
    cols = list(snps)
    want_cases = who in (WHO_BOTH, WHO_CASES)
    want_controls = who in (WHO_BOTH, WHO_CONTROLS)
    if not (want_cases or want_controls):
        raise ValueError(f"unknown cohort selector: {who!r}")

    entries: dict[int, list[int]] = {}

    def tally(mat: np.ndarray, slot: int) -> int:
        if mat.shape[0] == 0:
            return 0
        if not cols:
            # Zero-width set: every individual shares the empty diplotype.
            entries.setdefault(0, [0, 0])[slot] += mat.shape[0]
            return mat.shape[0]
        keys = _pack_matrix(mat[:, cols])
        vals, counts = np.unique(keys, return_counts=True)
        for k, c in zip(vals.tolist(), counts.tolist()):
            entries.setdefault(int(k), [0, 0])[slot] += int(c)
        return mat.shape[0]

    n_total = tally(dataset.cases, 0) if want_cases else 0
    m_total = tally(dataset.controls, 1) if want_controls else 0
    packed = {k: (v[0], v[1]) for k, v in entries.items()}
    counts = DiplotypeCounts(width=len(snps), entries=packed, n_total=n_total, m_total=m_total)
    counts.validate()
    return counts


def count_diplotypes(dataset: GenotypeDataset, block: tuple[int, int], who: str = WHO_BOTH) -> DiplotypeCounts:
    """Count observed diplotypes in the half-open SNP range ``[a, b)``."""
    a, b = int(block[0]), int(block[1])
    if not (0 <= a < b <= dataset.n_snps):
        raise ValueError(f"empty or out-of-range block [{a}, {b})")
    return count_snp_set(dataset, range(a, b), who=who)


def _log_marginal_from_counts(counts: np.ndarray, width: int, rho: float) -> float:
    """Log marginal of one multinomial sample under the width-scaled prior.

    ``counts`` holds the positive per-diplotype totals; absent diplotypes
    contribute nothing.
    """
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum()
    if total == 0:
        return 0.0
    log_alpha = math.log(rho) - width * LOG3
    alpha = math.exp(log_alpha)  # may underflow to 0.0 for huge widths; harmless
    k = counts.size
    per_cell = k * (log_alpha - float(gammaln(1.0 + alpha))) + float(gammaln(counts + alpha).sum())
    return per_cell + float(gammaln(rho)) - float(gammaln(total + rho))


def log_marginal(counts: DiplotypeCounts, config: DirichletConfig = DirichletConfig()) -> float:
    """Log marginal likelihood of the combined case+control counts."""
    counts.validate()
    if not counts.entries:
        return 0.0
    combined = np.fromiter(
        (cn + cm for cn, cm in counts.entries.values()), dtype=np.float64, count=len(counts.entries)
    )
    return _log_marginal_from_counts(combined, counts.width, config.rho)


def log_conditional(
    full: DiplotypeCounts, sub: DiplotypeCounts, config: DirichletConfig = DirichletConfig()
) -> float:
    """Log probability of the full-set counts given counts on a subset.

    Both count objects must cover the same individuals; the value is the
    difference of the two log marginals.
    """
    if (full.n_total, full.m_total) != (sub.n_total, sub.m_total):
        raise ValueError("mismatched individual totals between full set and subset")
    if sub.width > full.width:
        raise ValueError("subset is wider than the full set")
    return log_marginal(full, config) - log_marginal(sub, config)


class LikelihoodEngine:
    """Memoized marginal evaluator bound to one dataset and one rho.

    Keys are (sorted SNP index tuple, cohort selector); values are the log
    marginals. The sampler and the exact enumerator share one instance so
    identical subsets are never recounted.
    """

    def __init__(self, dataset: GenotypeDataset, rho: float = 1.5):
        if not rho > 0:
            raise ValueError("rho must be positive")
        self.rho = float(rho)
        self.n_cases = dataset.n_cases
        self.n_controls = dataset.n_controls
        # One combined matrix, cases stacked above controls.
        self._all = np.ascontiguousarray(
            np.vstack([dataset.cases, dataset.controls]), dtype=np.int8
        )
        self._marg: dict[tuple[tuple[int, ...], str], float] = {}
        self._distinct: dict[tuple[int, ...], int] = {}

    def _rows(self, who: str) -> np.ndarray:
        if who == WHO_BOTH:
            return self._all
        if who == WHO_CASES:
            return self._all[: self.n_cases]
        if who == WHO_CONTROLS:
            return self._all[self.n_cases :]
        raise ValueError(f"unknown cohort selector: {who!r}")

    def marginal(self, snps: tuple[int, ...], who: str) -> float:
        if not snps:
            return 0.0
        key = (snps, who)
        hit = self._marg.get(key)
        if hit is not None:
            return hit
        rows = self._rows(who)
        if rows.shape[0] == 0:
            value = 0.0
        else:
            keys = _pack_matrix(rows[:, list(snps)])
            _, counts = np.unique(keys, return_counts=True)
            value = _log_marginal_from_counts(counts, len(snps), self.rho)
            if who == WHO_BOTH:
                self._distinct[snps] = int(counts.size)
        self._marg[key] = value
        return value

    def distinct_count(self, snps: tuple[int, ...]) -> int:
        """Number of distinct diplotypes observed across both cohorts."""
        if not snps:
            return 0
        hit = self._distinct.get(snps)
        if hit is not None:
            return hit
        if self._all.shape[0] == 0:
            self._distinct[snps] = 0
            return 0
        keys = _pack_matrix(self._all[:, list(snps)])
        n = int(np.unique(keys).size)
        self._distinct[snps] = n
        return n

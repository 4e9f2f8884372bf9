"""Case-control simulator with founder-block LD and two-locus disease models.

Haplotypes are drawn per block from a small founder panel (independent founder
choice per block per haplotype, so LD exists within blocks and vanishes across
block boundaries); genotypes are allele sums of two haplotypes, which leaves
non-disease SNPs in Hardy-Weinberg proportions. Disease status enters through
a 3x3 relative-risk table at two loci in different blocks: a large
odds-ratio-1 pool is generated, case diplotype frequencies at the loci are
computed analytically from the table, and cases/controls are drawn from the
pool without replacement accordingly.

Blocks containing a disease locus are constructed so the locus allele is
carried by exactly one founder (its frequency equals the requested MAF) and at
least one other SNP in the block tags that founder, mirroring panels in which
dropped disease SNPs remain tagged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from .dataio import GenotypeDataset
from .model import ConstraintError

MODEL_IDS = (1, 2, 3)


class PoolError(ConstraintError):
    """Pool too small (or exhausted) for the requested cohort sizes."""


# -- founder pools --------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FounderBlock:
    """One LD block: founder haplotypes (0/1 alleles) and their frequencies."""

    haplotypes: np.ndarray  # (n_founders, width) int8
    frequencies: np.ndarray  # (n_founders,)

    def __post_init__(self):
        haps = np.asarray(self.haplotypes, dtype=np.int8)
        freqs = np.asarray(self.frequencies, dtype=float)
        object.__setattr__(self, "haplotypes", haps)
        object.__setattr__(self, "frequencies", freqs)
        if haps.ndim != 2 or haps.shape[0] < 1 or haps.shape[1] < 1:
            raise ValueError("haplotypes must be a non-empty 2-d array")
        if haps.min() < 0 or haps.max() > 1:
            raise ValueError("haplotype alleles must be 0/1")
        if freqs.shape != (haps.shape[0],):
            raise ValueError("one frequency per founder required")
        if freqs.min() <= 0 or abs(freqs.sum() - 1.0) > 1e-9:
            raise ValueError("founder frequencies must be positive and sum to 1")
        haps.setflags(write=False)
        freqs.setflags(write=False)

    @property
    def width(self) -> int:
        return self.haplotypes.shape[1]

    def allele_frequency(self, local: int) -> float:
        return float(self.frequencies @ self.haplotypes[:, local])


@dataclass(frozen=True)
class FounderPool:
    """Ordered founder blocks covering the panel."""

    blocks: tuple[FounderBlock, ...]

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        if not self.blocks:
            raise ValueError("pool needs at least one block")

    @property
    def n_snps(self) -> int:
        return sum(b.width for b in self.blocks)

    @property
    def block_starts(self) -> tuple[int, ...]:
        starts = []
        at = 0
        for b in self.blocks:
            starts.append(at)
            at += b.width
        return tuple(starts)

    def block_of(self, snp: int) -> int:
        at = 0
        for idx, b in enumerate(self.blocks):
            if snp < at + b.width:
                return idx
            at += b.width
        raise IndexError("SNP index out of range")


def _block_widths(n_snps: int, block_width: int) -> list[int]:
    if n_snps < 1 or block_width < 1:
        raise ValueError("n_snps and block_width must be positive")
    widths = [block_width] * (n_snps // block_width)
    if n_snps % block_width:
        widths.append(n_snps % block_width)
    return widths


def _draw_frequencies(rng: np.random.Generator, k: int, floor: float) -> np.ndarray:
    for _ in range(1000):
        f = rng.dirichlet(np.full(k, 2.0))
        if f.min() >= floor:
            return f
    f = np.clip(f, floor, None)
    return f / f.sum()


def _random_haplotypes(rng: np.random.Generator, k: int, width: int) -> np.ndarray:
    haps = rng.integers(0, 2, size=(k, width), dtype=np.int8)
    for j in range(width):
        if haps[:, j].min() == haps[:, j].max():  # keep every SNP polymorphic
            haps[int(rng.integers(k)), j] ^= 1
    return haps


def random_pool(
    n_snps: int,
    block_width: int = 5,
    n_founders: int = 4,
    seed: int = 0,
    min_frequency: float = 0.05,
) -> FounderPool:
    """Random founder pool with polymorphic SNPs in every block."""
    if n_founders < 2:
        raise ValueError("need at least two founders")
    rng = np.random.default_rng(seed)
    blocks = []
    for w in _block_widths(n_snps, block_width):
        freqs = _draw_frequencies(rng, n_founders, min_frequency)
        haps = _random_haplotypes(rng, n_founders, w)
        blocks.append(FounderBlock(haplotypes=haps, frequencies=freqs))
    return FounderPool(tuple(blocks))


def _founder_r2(freqs: np.ndarray, x: np.ndarray, y: np.ndarray) -> float:
    px = float(freqs @ x)
    py = float(freqs @ y)
    if px <= 0 or px >= 1 or py <= 0 or py >= 1:
        return 0.0
    cov = float(freqs @ (x * y)) - px * py
    return cov * cov / (px * (1 - px) * py * (1 - py))


def _disease_block(
    rng: np.random.Generator,
    width: int,
    n_founders: int,
    maf: float,
    locus_local: int,
    min_tag_r2: float,
) -> FounderBlock:
    """Block whose locus allele rides a single founder of frequency ``maf``."""
    rest = _draw_frequencies(rng, n_founders - 1, 0.02) * (1.0 - maf)
    freqs = np.concatenate([[maf], rest])
    carrier = np.zeros(n_founders, dtype=np.int8)
    carrier[0] = 1
    best = None
    for _ in range(50):
        haps = _random_haplotypes(rng, n_founders, width)
        haps[:, locus_local] = carrier
        r2 = max(
            _founder_r2(freqs, carrier.astype(float), haps[:, j].astype(float))
            for j in range(width)
            if j != locus_local
        ) if width > 1 else 0.0
        if best is None or r2 > best[0]:
            best = (r2, haps)
        if r2 >= min_tag_r2:
            break
    r2, haps = best
    if width > 1 and r2 < min_tag_r2:
        # force one tagging SNP so the locus stays visible after dropping it
        spots = [j for j in range(width) if j != locus_local]
        haps[:, spots[int(rng.integers(len(spots)))]] = carrier
    return FounderBlock(haplotypes=haps, frequencies=freqs)


def disease_pool(
    n_snps: int,
    maf: float,
    block_width: int = 5,
    n_founders: int = 4,
    seed: int = 0,
    min_frequency: float = 0.05,
    min_tag_r2: float = 0.5,
) -> tuple[FounderPool, tuple[int, int]]:
    """Founder pool with two disease loci at block-interior positions.

    The loci sit near the centers of the blocks at roughly 1/4 and 3/4 of
    the panel; their allele frequencies equal ``maf`` exactly.
    """
    if not 0.0 < maf <= 0.5:
        raise ValueError("maf must lie in (0, 0.5]")
    widths = _block_widths(n_snps, block_width)
    if len(widths) < 2:
        raise ValueError("need at least two blocks to place two loci")
    rng = np.random.default_rng(seed)

    def nearest_wide(anchor: int, taken: set[int]) -> int:
        order = sorted(range(len(widths)), key=lambda i: (abs(i - anchor), i))
        for i in order:
            if widths[i] >= 3 and i not in taken:
                return i
        raise ValueError("need two blocks at least 3 SNPs wide for the disease loci")

    d1 = nearest_wide(len(widths) // 4, set())
    d2 = nearest_wide((3 * len(widths)) // 4, {d1})
    if d1 > d2:
        d1, d2 = d2, d1
    blocks = []
    starts = []
    at = 0
    loci = []
    for idx, w in enumerate(widths):
        starts.append(at)
        if idx in (d1, d2):
            local = w // 2
            blocks.append(_disease_block(rng, w, n_founders, maf, local, min_tag_r2))
            loci.append(at + local)
        else:
            freqs = _draw_frequencies(rng, n_founders, min_frequency)
            haps = _random_haplotypes(rng, n_founders, w)
            blocks.append(FounderBlock(haplotypes=haps, frequencies=freqs))
        at += w
    return FounderPool(tuple(blocks)), (loci[0], loci[1])


def sample_pool_genotypes(pool: FounderPool, n_individuals: int, rng: np.random.Generator) -> np.ndarray:
    """Draw unaffected individuals: two independent founder picks per block."""
    out = np.empty((n_individuals, pool.n_snps), dtype=np.int8)
    at = 0
    for block in pool.blocks:
        k = block.haplotypes.shape[0]
        picks = rng.choice(k, size=(n_individuals, 2), p=block.frequencies)
        out[:, at : at + block.width] = (
            block.haplotypes[picks[:, 0]] + block.haplotypes[picks[:, 1]]
        )
        at += block.width
    return out


# -- disease models --------------------------------------------------------------


def hw_probs(maf: float) -> np.ndarray:
    """Hardy-Weinberg genotype probabilities (0, 1, 2 copies)."""
    return np.array([(1 - maf) ** 2, 2 * maf * (1 - maf), maf**2])


def risk_table(model_id: int, theta: float) -> np.ndarray:
    """3x3 relative-risk table indexed by the two locus genotype codes.

    Model 1: multiplicative, (1+theta)^(i+j). Model 2: baseline 1 whenever
    either locus is wild-type homozygous, multiplicative elsewhere. Model 3:
    threshold, 1+theta whenever both loci carry at least one disease allele.
    """
    if model_id not in MODEL_IDS:
        raise ValueError(f"unknown model id {model_id}")
    if theta < 0:
        raise ValueError("theta must be non-negative")
    t = 1.0 + theta
    table = np.ones((3, 3))
    for i in range(3):
        for j in range(3):
            if model_id == 1:
                table[i, j] = t ** (i + j)
            elif model_id == 2:
                table[i, j] = t ** (i + j) if i >= 1 and j >= 1 else 1.0
            else:
                table[i, j] = t if i >= 1 and j >= 1 else 1.0
    return table


def marginal_log_odds_ratio(model_id: int, theta: float, maf: float) -> float:
    """Per-locus carrier-vs-baseline log odds ratio, other locus collapsed.

    The 3x3 table is collapsed over the second locus under Hardy-Weinberg
    frequencies; the value is the log ratio of the carrier-averaged collapsed
    risk to the wild-type collapsed risk (prevalence-free because controls
    mirror the population pool).
    """
    table = risk_table(model_id, theta)
    pi = hw_probs(maf)
    collapsed = table @ pi  # collapsed[g] = sum_h pi[h] * R[g, h]
    carrier_weight = pi[1] + pi[2]
    carrier = (pi[1] * collapsed[1] + pi[2] * collapsed[2]) / carrier_weight
    return math.log(carrier / collapsed[0])


def solve_theta(model_id: int, marginal_effect: float, maf: float, tol: float = 1e-10) -> float:
    """Invert the marginal log-odds-ratio map; monotone in theta."""
    if marginal_effect < 0:
        raise ValueError("marginal_effect must be non-negative")
    if marginal_effect == 0:
        return 0.0
    f = lambda th: marginal_log_odds_ratio(model_id, th, maf) - marginal_effect
    hi = 1.0
    while f(hi) < 0:
        hi *= 2.0
        if hi > 1e9:
            raise ValueError("marginal effect unreachable for this model and MAF")
    return float(brentq(f, 0.0, hi, xtol=tol))


@dataclass(frozen=True, eq=False)
class DiseaseModel:
    """Two-locus relative-risk model with its realized penetrance table."""

    model_id: int
    theta: float
    maf: float
    loci: tuple[int, int]
    penetrance: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "loci", tuple(int(v) for v in self.loci))
        if len(self.loci) != 2 or self.loci[0] == self.loci[1]:
            raise ValueError("need two distinct loci")
        if not 0.0 < self.maf <= 0.5:
            raise ValueError("maf must lie in (0, 0.5]")
        pen = np.asarray(self.penetrance, dtype=float)
        object.__setattr__(self, "penetrance", pen)
        pen.setflags(write=False)

    @classmethod
    def from_theta(cls, model_id: int, theta: float, maf: float, loci) -> "DiseaseModel":
        return cls(model_id, float(theta), maf, tuple(loci), risk_table(model_id, theta))

    @classmethod
    def from_effect(cls, model_id: int, marginal_effect: float, maf: float, loci) -> "DiseaseModel":
        theta = solve_theta(model_id, marginal_effect, maf)
        return cls.from_theta(model_id, theta, maf, loci)


# -- dataset synthesis -------------------------------------------------------------


@dataclass(frozen=True)
class TruthInfo:
    """Ground truth attached to a simulated dataset."""

    model_id: int
    theta: float
    maf: float
    loci: tuple[int, int]  # original (pre-drop) SNP indices
    block_starts: tuple[int, ...]  # current indexing
    windows: tuple[tuple[int, int], ...] | None = None  # current indexing, post-drop
    loci_present: bool = True


@dataclass(frozen=True)
class SimulatedDataset:
    dataset: GenotypeDataset
    truth: TruthInfo


def case_diplotype_probs(model: DiseaseModel) -> np.ndarray:
    """Analytic case probabilities over the 9 two-locus diplotypes."""
    pi9 = np.outer(hw_probs(model.maf), hw_probs(model.maf)).ravel()
    weighted = pi9 * model.penetrance.ravel()
    return weighted / weighted.sum()


def min_pool_size(model: DiseaseModel, n_cases: int, n_controls: int) -> int:
    """Smallest pool whose expected stratum yields cover the quotas."""
    pi9 = np.outer(hw_probs(model.maf), hw_probs(model.maf)).ravel()
    expected_risk = float(pi9 @ model.penetrance.ravel())
    worst = float(model.penetrance.max()) / expected_risk
    return int(math.ceil(n_controls + n_cases * worst))


def simulate_dataset(
    pool: FounderPool,
    model: DiseaseModel,
    n_cases: int,
    n_controls: int,
    pool_size: int | None = None,
    seed: int = 0,
    position_spacing: int = 1000,
) -> SimulatedDataset:
    """Draw a case-control panel from the pool under the disease model."""
    if n_cases < 1 or n_controls < 1:
        raise ValueError("both cohorts must be non-empty")
    n_snps = pool.n_snps
    l1, l2 = model.loci
    if not (0 <= l1 < n_snps and 0 <= l2 < n_snps):
        raise ValueError("loci outside the panel")
    if pool.block_of(l1) == pool.block_of(l2):
        raise ValueError("loci must sit in different founder blocks")
    for locus in model.loci:
        b = pool.blocks[pool.block_of(locus)]
        local = locus - pool.block_starts[pool.block_of(locus)]
        if abs(b.allele_frequency(local) - model.maf) > 1e-9:
            raise ValueError(
                f"pool allele frequency at locus {locus} differs from the model MAF"
            )

    floor = min_pool_size(model, n_cases, n_controls)
    auto_size = pool_size is None
    if auto_size:
        pool_size = max(int(math.ceil(1.5 * floor)), 2 * (n_cases + n_controls))
    elif pool_size < floor:
        raise PoolError(f"pool_size {pool_size} below the computed minimum {floor}")

    rng = np.random.default_rng(seed)
    genotypes = sample_pool_genotypes(pool, pool_size, rng)
    strata = genotypes[:, l1].astype(np.int64) * 3 + genotypes[:, l2]
    case_probs = case_diplotype_probs(model)
    demand = rng.multinomial(n_cases, case_probs)
    if auto_size:
        # the floor only covers stratum demand in expectation; double the pool
        # until every realized quota is satisfiable
        supply = np.bincount(strata, minlength=9)
        grows = 0
        while np.any(supply[:9] < demand):
            if grows >= 8:
                raise PoolError("pool regrow limit reached before the case quota")
            extra = sample_pool_genotypes(pool, genotypes.shape[0], rng)
            genotypes = np.vstack([genotypes, extra])
            strata = np.concatenate(
                [strata, extra[:, l1].astype(np.int64) * 3 + extra[:, l2]]
            )
            supply = np.bincount(strata, minlength=9)
            grows += 1
        pool_size = genotypes.shape[0]

    taken = np.zeros(pool_size, dtype=bool)
    case_rows: list[np.ndarray] = []
    for s in range(9):
        need = int(demand[s])
        if need == 0:
            continue
        members = np.flatnonzero(strata == s)
        if members.size < need:
            raise PoolError(
                f"pool exhausted before the case quota in stratum {s} "
                f"({members.size} available, {need} needed)"
            )
        chosen = members[rng.permutation(members.size)[:need]]
        taken[chosen] = True
        case_rows.append(chosen)
    case_idx = np.concatenate(case_rows) if case_rows else np.zeros(0, dtype=np.int64)
    remaining = np.flatnonzero(~taken)
    if remaining.size < n_controls:
        raise PoolError("pool exhausted before the control quota")
    control_idx = remaining[rng.permutation(remaining.size)[:n_controls]]

    id_width = max(4, len(str(n_snps)))
    dataset = GenotypeDataset(
        cases=genotypes[case_idx],
        controls=genotypes[control_idx],
        snp_ids=tuple(f"snp{i + 1:0{id_width}d}" for i in range(n_snps)),
        positions=tuple(1 + i * position_spacing for i in range(n_snps)),
    )
    truth = TruthInfo(
        model_id=model.model_id,
        theta=model.theta,
        maf=model.maf,
        loci=(l1, l2),
        block_starts=pool.block_starts,
    )
    return SimulatedDataset(dataset=dataset, truth=truth)


def drop_loci(sim: SimulatedDataset, policy: str = "drop", window: int = 5) -> SimulatedDataset:
    """Remove the disease-locus columns, re-expressing truth as index windows.

    Each window spans the surviving SNPs within ``window`` positions of a
    dropped locus, in the new indexing. ``policy="keep"`` returns the input
    unchanged.
    """
    if policy == "keep":
        return sim
    if policy != "drop":
        raise ValueError(f"unknown drop policy: {policy!r}")
    truth = sim.truth
    if not truth.loci_present:
        raise ValueError("loci already dropped")
    ds = sim.dataset
    loci = sorted(truth.loci)
    keep = [j for j in range(ds.n_snps) if j not in loci]
    new_index = {old: new for new, old in enumerate(keep)}

    windows = []
    for locus in truth.loci:
        lo_old = max(0, locus - window)
        hi_old = min(ds.n_snps - 1, locus + window)
        kept_in = [new_index[j] for j in range(lo_old, hi_old + 1) if j in new_index]
        windows.append((min(kept_in), max(kept_in)))

    new_starts = tuple(
        sorted({s - sum(1 for l in loci if l < s) for s in truth.block_starts})
    )
    new_ds = GenotypeDataset(
        cases=ds.cases[:, keep],
        controls=ds.controls[:, keep],
        snp_ids=tuple(ds.snp_ids[j] for j in keep),
        positions=tuple(ds.positions[j] for j in keep),
    )
    new_truth = replace(
        truth, block_starts=new_starts, windows=tuple(windows), loci_present=False
    )
    return SimulatedDataset(dataset=new_ds, truth=new_truth)


def write_truth(truth: TruthInfo, path: str | Path) -> None:
    """Serialize the ground truth as a small keyed TSV."""
    lines = [
        "#field\tvalues",
        f"model\t{truth.model_id}",
        f"theta\t{truth.theta!r}",
        f"maf\t{truth.maf!r}",
        "loci\t" + "\t".join(str(v) for v in truth.loci),
        "block_starts\t" + "\t".join(str(v) for v in truth.block_starts),
        f"loci_present\t{int(truth.loci_present)}",
    ]
    if truth.windows is not None:
        lines.append("windows\t" + "\t".join(f"{a}:{b}" for a, b in truth.windows))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_truth(path: str | Path) -> TruthInfo:
    """Inverse of :func:`write_truth`."""
    fields: dict[str, list[str]] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.startswith("#") or not line:
            continue
        toks = line.split("\t")
        fields[toks[0]] = toks[1:]
    windows = None
    if "windows" in fields:
        windows = tuple(
            (int(a), int(b)) for a, b in (tok.split(":") for tok in fields["windows"])
        )
    return TruthInfo(
        model_id=int(fields["model"][0]),
        theta=float(fields["theta"][0]),
        maf=float(fields["maf"][0]),
        loci=tuple(int(v) for v in fields["loci"]),
        block_starts=tuple(int(v) for v in fields["block_starts"]),
        windows=windows,
        loci_present=bool(int(fields["loci_present"][0])),
    )

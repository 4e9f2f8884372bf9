"""Exact posterior enumeration for small panels, for sampler verification.

The joint factorizes over blocks once the partition and the genome-wide
group-2 set are fixed, so instead of visiting every membership vector the
enumerator sums, per (partition, group-2 set) pair, the within-block mixture
over group-0/1 labels in closed form. The mass covered is identical to the
brute-force state sum; block terms come from the same cached evaluator the
sampler uses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations, product

import numpy as np
from scipy.special import logsumexp

from .dataio import GenotypeDataset
from .model import (
    NEG_INF,
    ConstraintError,
    JointModel,
    ModelConstraints,
    PriorConfig,
)

ORACLE_MAX_SNPS = 10


class OracleGuardError(ConstraintError):
    """Panel too large for exhaustive enumeration."""


@dataclass
class OracleResult:
    """Exact posteriors and evidence for one dataset."""

    marginal_posterior: np.ndarray  # P(label = 1) per SNP
    epistatic_posterior: np.ndarray  # P(label = 2) per SNP
    boundary_posterior: np.ndarray  # P(SNP starts a block)
    log_normalizer: float
    states_enumerated: int

    @property
    def assoc_posterior(self) -> np.ndarray:
        return self.marginal_posterior + self.epistatic_posterior


def _admissible_membership_count(n_snps: int, max_order: int) -> int:
    total = 0
    for k in range(0, min(max_order, n_snps) + 1):
        total += math.comb(n_snps, k) * (2 ** (n_snps - k))
    return total


def enumerate_posterior(
    dataset: GenotypeDataset,
    priors: PriorConfig,
    constraints: ModelConstraints | None = None,
) -> OracleResult:
    """Exhaustively sum the joint over all partitions and memberships."""
    n = dataset.n_snps
    if n > ORACLE_MAX_SNPS:
        raise OracleGuardError(
            f"exact enumeration is limited to {ORACLE_MAX_SNPS} SNPs, got {n}"
        )
    model = JointModel(dataset, priors, constraints)
    max_order = min(model.max_order, n)
    log_p2 = model._log_label[2]
    log_label01 = (model._log_label[0], model._log_label[1])

    subsets: list[tuple[int, ...]] = [()]
    if log_p2 > NEG_INF:
        for k in range(1, max_order + 1):
            subsets.extend(combinations(range(n), k))
    g2term = {s: model.group2_term(s) + len(s) * (log_p2 if s else 0.0) for s in subsets}

    # (a, b, local group-2 tuple) -> (logW, per-local-SNP logW1)
    weight_cache: dict[tuple[int, int, tuple[int, ...]], tuple[float, np.ndarray]] = {}

    def block_weights(a: int, b: int, t_local: tuple[int, ...]) -> tuple[float, np.ndarray]:
        key = (a, b, t_local)
        hit = weight_cache.get(key)
        if hit is not None:
            return hit
        w = b - a
        free = [j for j in range(w) if j not in t_local]
        base = sum(2 * 3**j for j in t_local)
        terms: list[float] = []
        bits: list[tuple[int, ...]] = []
        for sigma in product((0, 1), repeat=len(free)):
            mask = base
            prior = 0.0
            for j, lab in zip(free, sigma):
                mask += lab * 3**j
                prior += log_label01[lab]
            terms.append(model.block_term(a, b, mask) + prior)
            bits.append(sigma)
        terms_arr = np.asarray(terms)
        log_w = float(logsumexp(terms_arr)) if terms_arr.size else NEG_INF
        log_w1 = np.full(w, NEG_INF)
        for pos, j in enumerate(free):
            sel = np.asarray([sigma[pos] == 1 for sigma in bits])
            if sel.any():
                log_w1[j] = float(logsumexp(terms_arr[sel]))
        result = (log_w, log_w1)
        weight_cache[key] = result
        return result

    # Enumerate partitions once, keeping only those satisfying the cap.
    partitions: list[tuple[tuple[int, ...], list[tuple[int, int]]]] = []
    for bitmask in range(1 << (n - 1)):
        starts = [0] + [i + 1 for i in range(n - 1) if (bitmask >> i) & 1]
        blocks = [
            (s, starts[k + 1] if k + 1 < len(starts) else n) for k, s in enumerate(starts)
        ]
        if all(model.block_allowed(a, b) for a, b in blocks):
            partitions.append((tuple(starts), blocks))
    if not partitions:
        raise ConstraintError("every partition violates the diplotype cap")

    def split_by_blocks(s: tuple[int, ...], blocks) -> list[tuple[int, ...]]:
        out = []
        idx = 0
        for a, b in blocks:
            local = []
            while idx < len(s) and s[idx] < b:
                local.append(s[idx] - a)
                idx += 1
            out.append(tuple(local))
        return out

    entries: list[tuple[float, int, tuple[int, ...]]] = []
    for p_idx, (starts, blocks) in enumerate(partitions):
        log_pb = model.log_partition_prior(len(starts))
        for s in subsets:
            lz = log_pb + g2term[s]
            if lz == NEG_INF:
                continue
            for (a, b), t_local in zip(blocks, split_by_blocks(s, blocks)):
                log_w, _ = block_weights(a, b, t_local)
                lz += log_w
                if lz == NEG_INF:
                    break
            if lz > NEG_INF:
                entries.append((lz, p_idx, s))
    if not entries:
        raise ConstraintError("no state carries positive probability")

    top = max(e[0] for e in entries)
    z_rel = 0.0
    p1 = np.zeros(n)
    p2 = np.zeros(n)
    boundary = np.zeros(n)
    for lz, p_idx, s in entries:
        wt = math.exp(lz - top)
        z_rel += wt
        starts, blocks = partitions[p_idx]
        for snp in s:
            p2[snp] += wt
        for (a, b), t_local in zip(blocks, split_by_blocks(s, blocks)):
            log_w, log_w1 = block_weights(a, b, t_local)
            for j in range(b - a):
                if log_w1[j] > NEG_INF:
                    p1[a + j] += wt * math.exp(log_w1[j] - log_w)
        for snp in starts:
            boundary[snp] += wt

    log_z = top + math.log(z_rel)
    states = (2 ** (n - 1)) * _admissible_membership_count(
        n, max_order if constraints is not None else n
    )
    return OracleResult(
        marginal_posterior=p1 / z_rel,
        epistatic_posterior=p2 / z_rel,
        boundary_posterior=boundary / z_rel,
        log_normalizer=log_z,
        states_enumerated=states,
    )

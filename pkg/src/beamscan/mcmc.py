"""Metropolis-within-Gibbs sampler over block partitions and membership labels.

Each iteration applies, in order: one block move (split / merge / shift drawn
with probabilities 0.1 / 0.1 / 0.8, Metropolis-Hastings accepted), one Gibbs
sweep over the membership labels in fixed index order, and one swap pass that
offers every group-1/2 SNP an exchange with a uniformly chosen SNP from
another group (symmetric proposal). Chains are deterministic given
(dataset, priors, schedule, seed); chain ``c`` of a multi-chain run uses
``base_seed + c``.
"""

from __future__ import annotations

import math
import sys
from bisect import bisect_right, insort
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dataio import GenotypeDataset
from .model import (
    NEG_INF,
    BlockPartition,
    ConstraintError,
    JointModel,
    MembershipVector,
    ModelConstraints,
    PriorConfig,
    mask_from_labels,
)

KIND_SPLIT = "split"
KIND_MERGE = "merge"
KIND_SHIFT = "shift"
_KIND_PROBS = ((KIND_SPLIT, 0.1), (KIND_MERGE, 0.1), (KIND_SHIFT, 0.8))


@dataclass(frozen=True)
class Schedule:
    """Burn-in, retained iterations, and sample thinning."""

    burnin: int
    iterations: int
    thin: int = 1

    def __post_init__(self):
        if self.burnin < 0 or self.iterations < 0:
            raise ValueError("burnin and iterations must be non-negative")
        if self.thin < 1:
            raise ValueError("thin must be at least 1")


def default_schedule(n_snps: int) -> Schedule:
    """Default run length scales with panel size."""
    return Schedule(burnin=10 * n_snps, iterations=50 * n_snps, thin=1)


@dataclass
class PosteriorSummary:
    """Monte Carlo posterior estimates from one chain (or a chain average)."""

    marginal_posterior: np.ndarray  # P(label = 1) per SNP
    epistatic_posterior: np.ndarray  # P(label = 2) per SNP
    assoc_posterior: np.ndarray  # P(label != 0) per SNP
    boundary_posterior: np.ndarray  # P(SNP starts a block)
    interaction_sets: dict[tuple[int, ...], float]
    samples_used: int
    log_joint_trace: np.ndarray
    acceptance: dict[str, float] = field(default_factory=dict)
    warning: str | None = None


@dataclass
class Diagnostics:
    """Per-chain log-joint autocorrelations and cross-chain agreement."""

    autocorrelation: np.ndarray  # (n_chains, n_lags), lag k at column k-1
    lags: tuple[int, ...]
    cross_chain_correlation: np.ndarray  # (n_chains, n_chains) Pearson of assoc


@dataclass
class BlockProposal:
    """One proposed partition change with its Hastings log-ratio."""

    kind: str
    new_starts: tuple[int, ...]
    removed: tuple[tuple[int, int], ...]
    added: tuple[tuple[int, int], ...]
    log_q_ratio: float


class ChainState:
    """Mutable sampler state bound to one :class:`JointModel`.

    Tracks the partition (block start list), labels, per-block ternary label
    masks, the sorted group-2 set and label counts, so the cached joint can be
    reassembled from memoized block terms at any time.
    """

    def __init__(self, model: JointModel, rng: np.random.Generator):
        self.model = model
        self.rng = rng
        n = model.n_snps
        self.starts: list[int] = list(range(n))
        self.labels: list[int] = [0] * n
        self.block_masks: dict[tuple[int, int], int] = {(i, i + 1): 0 for i in range(n)}
        self.s2: list[int] = []
        self.label_counts: list[int] = [n, 0, 0]
        self.iteration = 0
        self.counters: dict[str, int] = {}
        for i in range(n):
            if not model.block_allowed(i, i + 1):
                raise ConstraintError(
                    f"SNP {i} exceeds the diplotype cap even as a singleton block; "
                    "no admissible state exists"
                )

    # -- bookkeeping ---------------------------------------------------------

    def bump(self, key: str, by: int = 1) -> None:
        self.counters[key] = self.counters.get(key, 0) + by

    def blocks(self) -> list[tuple[int, int]]:
        n = self.model.n_snps
        return [
            (s, self.starts[k + 1] if k + 1 < len(self.starts) else n)
            for k, s in enumerate(self.starts)
        ]

    def block_of(self, snp: int) -> tuple[int, int]:
        k = bisect_right(self.starts, snp) - 1
        end = self.starts[k + 1] if k + 1 < len(self.starts) else self.model.n_snps
        return (self.starts[k], end)

    def partition(self) -> BlockPartition:
        return BlockPartition(tuple(self.starts), self.model.n_snps)

    def membership(self) -> MembershipVector:
        return MembershipVector(tuple(self.labels))

    def log_joint(self) -> float:
        """Joint log probability assembled from cached per-block terms."""
        model = self.model
        total = model.group2_term(tuple(self.s2))
        for rng_key, mask in self.block_masks.items():
            term = model.block_term(rng_key[0], rng_key[1], mask)
            if term == NEG_INF:
                return NEG_INF
            total += term
        total += model.log_partition_prior(len(self.starts))
        total += model.log_membership_prior(tuple(self.label_counts))
        return total


def init_state(
    dataset: GenotypeDataset,
    priors: PriorConfig,
    seed: int,
    constraints: ModelConstraints | None = None,
) -> ChainState:
    """All-singleton, all-unassociated starting state with a seeded generator."""
    model = JointModel(dataset, priors, constraints)
    return ChainState(model, np.random.default_rng(seed))


# -- block moves --------------------------------------------------------------


def propose_block_move(state: ChainState, kind: str) -> BlockProposal | None:
    """Draw one partition proposal; ``None`` marks an inapplicable no-op."""
    starts = state.starts
    nb = len(starts)
    n = state.model.n_snps
    rng = state.rng
    if kind == KIND_SPLIT:
        k = int(rng.integers(nb))
        a = starts[k]
        b = starts[k + 1] if k + 1 < nb else n
        w = b - a
        if w < 2:
            return None
        cut = a + 1 + int(rng.integers(w - 1))
        new_starts = tuple(starts[: k + 1]) + (cut,) + tuple(starts[k + 1 :])
        # forward: pick block (1/nb) and cut (1/(w-1)); reverse merge picks the
        # new adjacent pair among nb pairs.
        log_q_ratio = math.log(w - 1)
        return BlockProposal(kind, new_starts, ((a, b),), ((a, cut), (cut, b)), log_q_ratio)
    if kind == KIND_MERGE:
        if nb < 2:
            return None
        k = int(rng.integers(nb - 1))
        a = starts[k]
        mid = starts[k + 1]
        b = starts[k + 2] if k + 2 < nb else n
        new_starts = tuple(starts[: k + 1]) + tuple(starts[k + 2 :])
        # forward: pick pair (1/(nb-1)); reverse split picks the merged block
        # (1/(nb-1)) and the former cut (1/(w-1)).
        log_q_ratio = -math.log(b - a - 1)
        return BlockProposal(kind, new_starts, ((a, mid), (mid, b)), ((a, b),), log_q_ratio)
    if kind == KIND_SHIFT:
        if nb < 2:
            return None
        k = 1 + int(rng.integers(nb - 1))  # never the fixed first boundary
        t = starts[k]
        lo = starts[k - 1] + 1
        hi = (starts[k + 1] if k + 1 < nb else n) - 1
        n_targets = hi - lo  # positions in [lo, hi] minus the current one
        if n_targets < 1:
            return None
        pick = int(rng.integers(n_targets))
        new_t = lo + pick
        if new_t >= t:
            new_t += 1
        new_starts = tuple(starts[:k]) + (new_t,) + tuple(starts[k + 1 :])
        a = starts[k - 1]
        b = starts[k + 1] if k + 1 < nb else n
        # neighbours are unchanged, so the reverse target count equals n_targets
        log_q_ratio = math.log(n_targets) - math.log(hi - lo)
        return BlockProposal(
            kind, new_starts, ((a, t), (t, b)), ((a, new_t), (new_t, b)), log_q_ratio
        )
    raise ValueError(f"unknown move kind: {kind!r}")


def accept(state: ChainState, proposal: BlockProposal) -> bool:
    """Metropolis-Hastings decision; exactly one uniform draw per call."""
    model = state.model
    labels = state.labels
    old = 0.0
    for a, b in proposal.removed:
        old += model.block_term(a, b, state.block_masks[(a, b)])
    new_masks = {}
    new = 0.0
    for a, b in proposal.added:
        mask = mask_from_labels(labels, a, b)
        new_masks[(a, b)] = mask
        new += model.block_term(a, b, mask)
    delta_blocks = len(proposal.new_starts) - len(state.starts)
    log_ratio = (
        new - old + delta_blocks * (model._log_p - model._log_1mp) + proposal.log_q_ratio
    )
    u = state.rng.random()
    if new == NEG_INF:
        ok = False
    else:
        ok = log_ratio >= 0.0 or u < math.exp(log_ratio)
    if ok:
        state.starts = list(proposal.new_starts)
        for key in proposal.removed:
            del state.block_masks[key]
        state.block_masks.update(new_masks)
    return ok


# -- membership moves ----------------------------------------------------------


def gibbs_membership_sweep(state: ChainState) -> int:
    """Resample every label from its full conditional, in index order.

    Labels that would push the group-2 set over the interaction-order cap are
    skipped. Returns the number of labels that changed.
    """
    model = state.model
    rng = state.rng
    labels = state.labels
    log_label = model._log_label
    max_order = model.max_order
    changed = 0
    for i in range(model.n_snps):
        a, b = state.block_of(i)
        mask = state.block_masks[(a, b)]
        cur = labels[i]
        power = 3 ** (i - a)
        base = mask - cur * power
        if cur == 2:
            s2_without = tuple(v for v in state.s2 if v != i)
            s2_with = tuple(state.s2)
        else:
            s2_without = tuple(state.s2)
            s2_with = None  # built lazily below
        allow2 = cur == 2 or len(state.s2) < max_order
        weights = []
        labs = []
        g2_without = model.group2_term(s2_without)
        for lab in (0, 1, 2):
            if lab == 2 and not allow2:
                continue
            if lab == 2:
                if s2_with is None:
                    tmp = list(s2_without)
                    insort(tmp, i)
                    s2_with = tuple(tmp)
                g2 = model.group2_term(s2_with)
            else:
                g2 = g2_without
            w = model.block_term(a, b, base + lab * power) + g2 + log_label[lab]
            weights.append(w)
            labs.append(lab)
        top = max(weights)
        probs = [math.exp(w - top) for w in weights]
        total = sum(probs)
        u = rng.random() * total
        acc = 0.0
        pick = labs[-1]
        for lab, p in zip(labs, probs):
            acc += p
            if u < acc:
                pick = lab
                break
        state.bump("gibbs_draws")
        if pick != cur:
            changed += 1
            state.bump("gibbs_changes")
            labels[i] = pick
            state.block_masks[(a, b)] = base + pick * power
            state.label_counts[cur] -= 1
            state.label_counts[pick] += 1
            if cur == 2:
                state.s2.remove(i)
            if pick == 2:
                insort(state.s2, i)
    return changed


def swap_membership_move(state: ChainState) -> int:
    """Offer each associated SNP one label exchange with another group.

    The partner is uniform over SNPs holding a different label; swapping
    preserves the label multiset, so the proposal is symmetric and the
    membership prior cancels. Returns the number of accepted swaps.
    """
    model = state.model
    rng = state.rng
    labels = state.labels
    n = model.n_snps
    accepted = 0
    snapshot = [i for i in range(n) if labels[i] != 0]
    for i in snapshot:
        li = labels[i]
        if li == 0:  # label moved away by an earlier swap in this pass
            continue
        n_other = n - state.label_counts[li]
        if n_other == 0:
            continue
        pick = int(rng.integers(n_other))
        j = -1
        seen = 0
        for idx in range(n):
            if labels[idx] != li:
                if seen == pick:
                    j = idx
                    break
                seen += 1
        lj = labels[j]
        state.bump("swap_proposed")

        bi = state.block_of(i)
        bj = state.block_of(j)
        pi = 3 ** (i - bi[0])
        pj = 3 ** (j - bj[0])
        old_terms = model.block_term(*bi, state.block_masks[bi])
        if bj != bi:
            old_terms += model.block_term(*bj, state.block_masks[bj])
            mask_i = state.block_masks[bi] + (lj - li) * pi
            mask_j = state.block_masks[bj] + (li - lj) * pj
            new_terms = model.block_term(*bi, mask_i) + model.block_term(*bj, mask_j)
        else:
            mask_i = state.block_masks[bi] + (lj - li) * pi + (li - lj) * pj
            mask_j = mask_i
            new_terms = model.block_term(*bi, mask_i)

        if li == 2 or lj == 2:
            drop, add = (i, j) if li == 2 else (j, i)
            tmp = [v for v in state.s2 if v != drop]
            insort(tmp, add)
            new_s2 = tuple(tmp)
            delta_g2 = model.group2_term(new_s2) - model.group2_term(tuple(state.s2))
        else:
            new_s2 = None
            delta_g2 = 0.0

        log_ratio = new_terms - old_terms + delta_g2
        u = rng.random()
        if log_ratio >= 0.0 or u < math.exp(log_ratio):
            accepted += 1
            state.bump("swap_accepted")
            labels[i], labels[j] = lj, li
            state.block_masks[bi] = mask_i
            state.block_masks[bj] = mask_j
            if new_s2 is not None:
                state.s2 = list(new_s2)
    return accepted


# -- chain drivers --------------------------------------------------------------


def _choose_kind(rng: np.random.Generator) -> str:
    u = rng.random()
    acc = 0.0
    for kind, p in _KIND_PROBS:
        acc += p
        if u < acc:
            return kind
    return _KIND_PROBS[-1][0]


def run_chain(
    dataset: GenotypeDataset,
    priors: PriorConfig,
    schedule: Schedule,
    seed: int,
    constraints: ModelConstraints | None = None,
    sample_membership: bool = True,
    progress: int = 0,
) -> PosteriorSummary:
    """Run one chain and summarize post-burn-in samples.

    With ``sample_membership=False`` only the partition is sampled (labels
    stay 0), which is the block-inference mode. ``progress > 0`` logs to
    stderr every that many iterations.
    """
    state = init_state(dataset, priors, seed, constraints)
    n = dataset.n_snps
    marg = np.zeros(n)
    epi = np.zeros(n)
    bound = np.zeros(n)
    set_counts: dict[tuple[int, ...], int] = {}
    trace: list[float] = []
    samples = 0
    total_iters = schedule.burnin + schedule.iterations
    for t in range(total_iters):
        kind = _choose_kind(state.rng)
        proposal = propose_block_move(state, kind)
        if proposal is None:
            state.bump("block_noop")
        else:
            state.bump(f"{kind}_proposed")
            if accept(state, proposal):
                state.bump(f"{kind}_accepted")
        if sample_membership:
            gibbs_membership_sweep(state)
            swap_membership_move(state)
        state.iteration += 1
        if t >= schedule.burnin:
            trace.append(state.log_joint())
            if (t - schedule.burnin) % schedule.thin == 0:
                samples += 1
                lab = np.asarray(state.labels)
                marg += lab == 1
                epi += lab == 2
                bound[state.starts] += 1
                if len(state.s2) >= 2:
                    key = tuple(state.s2)
                    set_counts[key] = set_counts.get(key, 0) + 1
        if progress and (t + 1) % progress == 0:
            print(
                f"iteration {t + 1}/{total_iters} log_joint={state.log_joint():.4f} "
                f"counters={state.counters}",
                file=sys.stderr,
            )

    acceptance: dict[str, float] = {}
    for kind, _ in _KIND_PROBS:
        prop = state.counters.get(f"{kind}_proposed", 0)
        acc = state.counters.get(f"{kind}_accepted", 0)
        acceptance[kind] = acc / prop if prop else 0.0
    sp = state.counters.get("swap_proposed", 0)
    acceptance["swap"] = state.counters.get("swap_accepted", 0) / sp if sp else 0.0
    gd = state.counters.get("gibbs_draws", 0)
    acceptance["gibbs_change"] = state.counters.get("gibbs_changes", 0) / gd if gd else 0.0

    if samples == 0:
        return PosteriorSummary(
            marginal_posterior=np.zeros(n),
            epistatic_posterior=np.zeros(n),
            assoc_posterior=np.zeros(n),
            boundary_posterior=np.zeros(n),
            interaction_sets={},
            samples_used=0,
            log_joint_trace=np.asarray(trace),
            acceptance=acceptance,
            warning="no samples recorded (iterations=0 or thinning too coarse)",
        )
    marg /= samples
    epi /= samples
    bound /= samples
    return PosteriorSummary(
        marginal_posterior=marg,
        epistatic_posterior=epi,
        assoc_posterior=marg + epi,
        boundary_posterior=bound,
        interaction_sets={k: v / samples for k, v in sorted(set_counts.items())},
        samples_used=samples,
        log_joint_trace=np.asarray(trace),
        acceptance=acceptance,
    )


def _chain_worker(args) -> PosteriorSummary:
    dataset, priors, schedule, seed, constraints, sample_membership = args
    return run_chain(
        dataset, priors, schedule, seed, constraints=constraints,
        sample_membership=sample_membership,
    )


def run_chains(
    dataset: GenotypeDataset,
    priors: PriorConfig,
    schedule: Schedule,
    n_chains: int,
    base_seed: int,
    constraints: ModelConstraints | None = None,
    sample_membership: bool = True,
    threads: int = 1,
    progress: int = 0,
) -> tuple[PosteriorSummary, list[PosteriorSummary], Diagnostics]:
    """Run independent chains (chain c seeded with base_seed + c) and merge.

    The averaged summary is the arithmetic mean of the per-chain posteriors;
    interaction-set frequencies are sample-weighted. Results do not depend on
    ``threads``.
    """
    if n_chains < 1:
        raise ValueError("n_chains must be at least 1")
    jobs = [
        (dataset, priors, schedule, base_seed + c, constraints, sample_membership)
        for c in range(n_chains)
    ]
    if threads > 1 and n_chains > 1:
        with ProcessPoolExecutor(max_workers=min(threads, n_chains)) as pool:
            chains = list(pool.map(_chain_worker, jobs))
    else:
        chains = [
            run_chain(*job[:4], constraints=job[4], sample_membership=job[5], progress=progress)
            for job in jobs
        ]

    total_samples = sum(c.samples_used for c in chains)
    merged_counts: dict[tuple[int, ...], float] = {}
    for c in chains:
        for key, freq in c.interaction_sets.items():
            merged_counts[key] = merged_counts.get(key, 0.0) + freq * c.samples_used
    merged_sets = (
        {k: v / total_samples for k, v in sorted(merged_counts.items())}
        if total_samples
        else {}
    )
    averaged = PosteriorSummary(
        marginal_posterior=np.mean([c.marginal_posterior for c in chains], axis=0),
        epistatic_posterior=np.mean([c.epistatic_posterior for c in chains], axis=0),
        assoc_posterior=np.mean([c.assoc_posterior for c in chains], axis=0),
        boundary_posterior=np.mean([c.boundary_posterior for c in chains], axis=0),
        interaction_sets=merged_sets,
        samples_used=total_samples,
        log_joint_trace=np.asarray([]),
        acceptance={},
        warning=None if total_samples else "no samples recorded",
    )

    max_lag = 100
    lag_count = min(max_lag, max(int(min(c.log_joint_trace.size for c in chains)) - 1, 0))
    auto = np.zeros((n_chains, lag_count))
    for idx, c in enumerate(chains):
        auto[idx, :] = _autocorrelation(c.log_joint_trace, lag_count)
    cross = _cross_correlation([c.assoc_posterior for c in chains])
    diagnostics = Diagnostics(
        autocorrelation=auto,
        lags=tuple(range(1, lag_count + 1)),
        cross_chain_correlation=cross,
    )
    return averaged, chains, diagnostics


def _autocorrelation(trace: np.ndarray, n_lags: int) -> np.ndarray:
    x = np.asarray(trace, dtype=float)
    out = np.zeros(n_lags)
    if x.size < 2 or n_lags < 1:
        return out
    x = x - x.mean()
    denom = float(x @ x)
    if denom == 0.0:
        return out
    for k in range(1, n_lags + 1):
        if k >= x.size:
            break
        out[k - 1] = float(x[:-k] @ x[k:]) / denom
    return out


def _cross_correlation(vectors: list[np.ndarray]) -> np.ndarray:
    k = len(vectors)
    out = np.eye(k)
    for i in range(k):
        for j in range(i + 1, k):
            a = vectors[i] - vectors[i].mean()
            b = vectors[j] - vectors[j].mean()
            sa = float(a @ a)
            sb = float(b @ b)
            if sa == 0.0 or sb == 0.0:
                r = float("nan")
            else:
                r = float(a @ b) / math.sqrt(sa * sb)
            out[i, j] = out[j, i] = r
    return out

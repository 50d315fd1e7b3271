"""Real-coded NSGA-II building blocks (minimization convention).

Standard components: fast non-dominated sorting, crowding distance, binary
tournament on (rank, crowding), simulated binary crossover, and bounded
polynomial mutation.  All randomness flows through one generator consumed
in fixed bulk-draw order, so runs are reproducible for equal seeds.
"""

from __future__ import annotations

import numpy as np


def fast_non_dominated_sort(objectives: np.ndarray) -> tuple[np.ndarray, list[list[int]]]:
    """Rank a population by Pareto dominance (all objectives minimized).

    Returns (ranks, fronts) where fronts[0] is the non-dominated set.
    """
    objs = np.asarray(objectives, dtype=float)
    count = objs.shape[0]
    # dominates[i, j]: i is no worse everywhere and strictly better somewhere
    less_equal = np.all(objs[:, None, :] <= objs[None, :, :], axis=2)
    strictly_less = np.any(objs[:, None, :] < objs[None, :, :], axis=2)
    dominates = less_equal & strictly_less
    domination_count = dominates.sum(axis=0)
    ranks = np.full(count, -1, dtype=int)
    fronts: list[list[int]] = []
    current = np.flatnonzero(domination_count == 0)
    rank = 0
    while current.size:
        ranks[current] = rank
        fronts.append(current.tolist())
        domination_count = domination_count - dominates[current].sum(axis=0)
        domination_count[ranks >= 0] = -1
        current = np.flatnonzero(domination_count == 0)
        rank += 1
    return ranks, fronts


def crowding_distance(objectives: np.ndarray) -> np.ndarray:
    """Crowding distance within one front; boundary members get infinity."""
    objs = np.asarray(objectives, dtype=float)
    count, n_obj = objs.shape
    distance = np.zeros(count)
    if count <= 2:
        return np.full(count, np.inf)
    for m in range(n_obj):
        order = np.argsort(objs[:, m], kind="stable")
        spread = objs[order[-1], m] - objs[order[0], m]
        distance[order[0]] = np.inf
        distance[order[-1]] = np.inf
        if spread > 0.0:
            gaps = (objs[order[2:], m] - objs[order[:-2], m]) / spread
            distance[order[1:-1]] += gaps
    return distance


def crowded_better(rank_a: int, crowd_a: float, rank_b: int, crowd_b: float) -> bool:
    """Crowded-comparison: lower rank wins, then larger crowding distance."""
    if rank_a != rank_b:
        return rank_a < rank_b
    return crowd_a > crowd_b


def tournament_selection(
    rng: np.random.Generator, ranks: np.ndarray, crowding: np.ndarray, n_parents: int
) -> np.ndarray:
    """Binary tournaments; the first contender wins ties."""
    draws = rng.integers(0, ranks.shape[0], size=(n_parents, 2))
    winners = np.empty(n_parents, dtype=int)
    for i, (a, b) in enumerate(draws):
        winners[i] = b if crowded_better(ranks[b], crowding[b], ranks[a], crowding[a]) else a
    return winners


def sbx_crossover(
    rng: np.random.Generator,
    parent_a: np.ndarray,
    parent_b: np.ndarray,
    eta: float,
    crossover_probability: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Simulated binary crossover on paired rows, vectorized over genes.

    Each pair recombines with ``crossover_probability``; within a
    recombining pair each gene crosses with probability 1/2.  Children are
    returned unbounded; circular variables are wrapped by the caller.
    """
    a = np.array(parent_a, dtype=float)
    b = np.array(parent_b, dtype=float)
    n_pairs, n_genes = a.shape
    pair_on = rng.random(n_pairs) <= crossover_probability
    gene_on = rng.random((n_pairs, n_genes)) <= 0.5
    u = rng.random((n_pairs, n_genes))
    beta = np.where(
        u <= 0.5,
        (2.0 * u) ** (1.0 / (eta + 1.0)),
        (1.0 / (2.0 * (1.0 - u))) ** (1.0 / (eta + 1.0)),
    )
    apply = pair_on[:, None] & gene_on
    child_a = np.where(apply, 0.5 * ((1.0 + beta) * a + (1.0 - beta) * b), a)
    child_b = np.where(apply, 0.5 * ((1.0 - beta) * a + (1.0 + beta) * b), b)
    return child_a, child_b


def polynomial_mutation(
    rng: np.random.Generator,
    genomes: np.ndarray,
    eta: float,
    probability: float,
    low: float,
    high: float,
    scheme: str = "per_gene",
) -> np.ndarray:
    """Bounded polynomial mutation.

    ``scheme="per_gene"``: every gene mutates independently with
    ``probability``.  ``scheme="per_individual"``: ``probability`` selects
    whole rows, and a selected row mutates each gene with probability
    1/n_genes (about one gene per mutated individual).  Both schemes draw
    the same random shapes, so the stream stays aligned across schemes.
    """
    x = np.array(genomes, dtype=float)
    span = high - low
    row_u = rng.random(x.shape[0])
    gene_u = rng.random(x.shape)
    if scheme == "per_gene":
        apply = gene_u <= probability
    elif scheme == "per_individual":
        apply = (row_u <= probability)[:, None] & (gene_u <= 1.0 / x.shape[1])
    else:
        raise ValueError(f"unknown mutation scheme {scheme!r}")
    u = rng.random(x.shape)
    d1 = (x - low) / span
    d2 = (high - x) / span
    exp = 1.0 / (eta + 1.0)
    delta_low = (2.0 * u + (1.0 - 2.0 * u) * (1.0 - d1) ** (eta + 1.0)) ** exp - 1.0
    delta_high = 1.0 - (2.0 * (1.0 - u) + 2.0 * (u - 0.5) * (1.0 - d2) ** (eta + 1.0)) ** exp
    delta = np.where(u < 0.5, delta_low, delta_high)
    return np.where(apply, np.clip(x + delta * span, low, high), x)


def environmental_selection(
    objectives: np.ndarray, target_size: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Elitist truncation of a combined population to ``target_size``.

    Fronts fill in rank order; the split front is truncated by descending
    crowding distance with stable index tie-breaks.  Returns the selected
    indices plus their ranks and crowding distances.
    """
    ranks, fronts = fast_non_dominated_sort(objectives)
    selected: list[int] = []
    crowding = np.zeros(objectives.shape[0])
    for front in fronts:
        front_crowd = crowding_distance(objectives[front])
        crowding[front] = front_crowd
        if len(selected) + len(front) <= target_size:
            selected.extend(front)
            if len(selected) == target_size:
                break
        else:
            need = target_size - len(selected)
            # descending crowding, stable in original front order
            order = np.argsort(-front_crowd, kind="stable")[:need]
            selected.extend(np.asarray(front)[order].tolist())
            break
    chosen = np.asarray(selected, dtype=int)
    return chosen, ranks[chosen], crowding[chosen]

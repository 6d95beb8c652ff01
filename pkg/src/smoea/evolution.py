"""Constrained NSGA-II over binary filter masks.

Population members carry a binary genome (1 = filter retained), the two
objective values, a non-domination rank and a crowding distance. Retention
is kept inside [tau1, tau2] by stochastic repair. All randomness is drawn
from per-individual streams keyed by (seed, generation, index), so results
do not depend on how evaluations are scheduled.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from math import ceil, floor
from pathlib import Path
from typing import Callable

import numpy as np

from .exceptions import EvolutionError
from .network import FilterMask
from .objectives import EvaluationContext, ObjectiveVector, evaluate_individual


@dataclass(eq=False)
class Individual:
    genes: np.ndarray  # bool, 1 = retained
    objectives: ObjectiveVector | None = None
    rank: int = 0
    crowding: float = 0.0

    @property
    def retained(self) -> int:
        return int(self.genes.sum())


@dataclass
class EvolutionConfig:
    population_size: int = 100
    elite_size: int = 30
    generations: int = 100
    crossover_prob: float = 1.0
    mutation_prob: float = 0.05
    tau1: float = 0.2
    tau2: float = 0.8
    seed: int = 0
    alpha_mode: str = "optimized"
    crossover: str = "uniform"  # or "one-point"

    def __post_init__(self):
        if self.elite_size > self.population_size:
            raise EvolutionError("elite_size must be <= population_size")
        if not 0 < self.tau1 < self.tau2 < 1:
            raise EvolutionError("need 0 < tau1 < tau2 < 1")


@dataclass
class EvolutionResult:
    elites: list[Individual]
    front: list[Individual]  # rank-1 members of the final elites, deduplicated
    history: dict[str, list[float]]


EvaluateFn = Callable[[np.ndarray], ObjectiveVector]


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, *key)))


def count_bounds(num_filters: int, tau1: float, tau2: float) -> tuple[int, int]:
    """Feasible retained-count range [lo, hi]; errors if empty."""
    lo = max(1, ceil(tau1 * num_filters))
    hi = floor(tau2 * num_filters)
    if lo > hi:
        raise EvolutionError(
            f"no feasible retained count for n={num_filters}, "
            f"bounds [{tau1}, {tau2}]"
        )
    return lo, hi


def init_population(num_filters: int, cfg: EvolutionConfig) -> list[Individual]:
    if num_filters < 2:
        raise EvolutionError("need at least 2 filters to evolve")
    lo, hi = count_bounds(num_filters, cfg.tau1, cfg.tau2)
    pop = []
    for i in range(cfg.population_size):
        rng = _rng(cfg.seed, 0, i)
        r = rng.uniform(cfg.tau1, cfg.tau2)
        k = int(np.clip(round(r * num_filters), lo, hi))
        genes = np.zeros(num_filters, dtype=bool)
        genes[rng.choice(num_filters, size=k, replace=False)] = True
        pop.append(Individual(genes))
    return pop


def dominates(a: ObjectiveVector, b: ObjectiveVector) -> bool:
    """Both objectives minimized: a <= b everywhere, < somewhere."""
    return (
        a.filter_pct <= b.filter_pct
        and a.error <= b.error
        and (a.filter_pct < b.filter_pct or a.error < b.error)
    )


def fast_nondominated_sort(pop: list[Individual]) -> list[list[int]]:
    """Deb's fast non-dominated sort; writes 1-based ranks back."""
    n = len(pop)
    dominated_by: list[list[int]] = [[] for _ in range(n)]
    domination_count = [0] * n
    fronts: list[list[int]] = [[]]
    for i in range(n):
        for j in range(i + 1, n):
            if dominates(pop[i].objectives, pop[j].objectives):
                dominated_by[i].append(j)
                domination_count[j] += 1
            elif dominates(pop[j].objectives, pop[i].objectives):
                dominated_by[j].append(i)
                domination_count[i] += 1
    for i in range(n):
        if domination_count[i] == 0:
            pop[i].rank = 1
            fronts[0].append(i)
    f = 0
    while fronts[f]:
        nxt = []
        for i in fronts[f]:
            for j in dominated_by[i]:
                domination_count[j] -= 1
                if domination_count[j] == 0:
                    pop[j].rank = f + 2
                    nxt.append(j)
        fronts.append(sorted(nxt))
        f += 1
    return fronts[:-1]


def crowding_distance(front: list[int], pop: list[Individual]) -> None:
    """Writes crowding back for the given front; boundaries get +inf and a
    zero objective range contributes nothing."""
    for i in front:
        pop[i].crowding = 0.0
    if len(front) <= 2:
        for i in front:
            pop[i].crowding = float("inf")
        return
    for value in (
        lambda i: pop[i].objectives.filter_pct,
        lambda i: pop[i].objectives.error,
    ):
        order = sorted(front, key=value)
        lo, hi = value(order[0]), value(order[-1])
        pop[order[0]].crowding = float("inf")
        pop[order[-1]].crowding = float("inf")
        if hi == lo:
            continue
        for k in range(1, len(order) - 1):
            pop[order[k]].crowding += (value(order[k + 1]) - value(order[k - 1])) / (
                hi - lo
            )


def select_elites(pop: list[Individual], k: int) -> list[Individual]:
    """Fill by ascending front; truncate the straddling front by descending
    crowding, ties by lower filter_pct, then stable input order."""
    if len(pop) < k:
        raise EvolutionError(f"cannot select {k} elites from {len(pop)} individuals")
    fronts = fast_nondominated_sort(pop)
    for front in fronts:
        crowding_distance(front, pop)
    elites: list[Individual] = []
    for front in fronts:
        if len(elites) + len(front) <= k:
            elites.extend(pop[i] for i in front)
        else:
            ordered = sorted(
                front,
                key=lambda i: (-pop[i].crowding, pop[i].objectives.filter_pct, i),
            )
            elites.extend(pop[i] for i in ordered[: k - len(elites)])
        if len(elites) == k:
            break
    return elites


def repair(
    genes: np.ndarray, tau1: float, tau2: float, rng: np.random.Generator
) -> np.ndarray:
    """Clamp the retained count into the feasible range by flipping uniformly
    chosen bits; feasible genomes pass through unchanged."""
    n = genes.shape[0]
    lo, hi = count_bounds(n, tau1, tau2)
    genes = genes.copy()
    count = int(genes.sum())
    if count > hi:
        on = np.flatnonzero(genes)
        genes[rng.choice(on, size=count - hi, replace=False)] = False
    elif count < lo:
        off = np.flatnonzero(~genes)
        genes[rng.choice(off, size=lo - count, replace=False)] = True
    return genes


def make_children(
    elites: list[Individual], cfg: EvolutionConfig, generation: int
) -> list[Individual]:
    """N unevaluated children from two random distinct elite parents each:
    crossover, per-gene mutation, then repair."""
    if len(elites) < 2:
        raise EvolutionError("need at least 2 elites to breed")
    n = elites[0].genes.shape[0]
    children = []
    for i in range(cfg.population_size):
        rng = _rng(cfg.seed, generation, i)
        pa, pb = rng.choice(len(elites), size=2, replace=False)
        p1, p2 = elites[pa].genes, elites[pb].genes
        if rng.random() < cfg.crossover_prob:
            if cfg.crossover == "one-point":
                point = int(rng.integers(1, n))
                genes = np.concatenate([p1[:point], p2[point:]])
            else:
                pick = rng.random(n) < 0.5
                genes = np.where(pick, p1, p2)
        else:
            genes = p1.copy()
        flips = rng.random(n) < cfg.mutation_prob
        genes = genes ^ flips
        genes = repair(genes, cfg.tau1, cfg.tau2, rng)
        children.append(Individual(genes))
    return children


def pareto_front(elites: list[Individual]) -> list[Individual]:
    """Rank-1 members deduplicated by genome, sorted by ascending filter_pct."""
    fronts = fast_nondominated_sort(elites)
    seen = set()
    members = []
    for i in fronts[0]:
        key = elites[i].genes.tobytes()
        if key not in seen:
            seen.add(key)
            members.append(elites[i])
    members.sort(key=lambda ind: (ind.objectives.filter_pct, ind.objectives.error))
    return members


def evolve(
    evaluate: EvaluateFn, num_filters: int, cfg: EvolutionConfig
) -> EvolutionResult:
    """Initialize, sort, then T rounds of child generation and elite
    selection over the union of children and previous elites."""
    lo, hi = count_bounds(num_filters, cfg.tau1, cfg.tau2)
    pop = init_population(num_filters, cfg)
    for ind in pop:
        ind.objectives = evaluate(ind.genes)
    elites = select_elites(pop, cfg.elite_size)
    history: dict[str, list[float]] = {"best_error": [], "median_error": []}
    _record(history, elites)
    for t in range(1, cfg.generations + 1):
        children = make_children(elites, cfg, t)
        for ind in children:
            assert lo <= ind.retained <= hi  # repair keeps the pool feasible
            ind.objectives = evaluate(ind.genes)
        elites = select_elites(children + elites, cfg.elite_size)
        _record(history, elites)
    return EvolutionResult(elites, pareto_front(elites), history)


def _record(history: dict[str, list[float]], elites: list[Individual]) -> None:
    errors = [ind.objectives.error for ind in elites]
    history["best_error"].append(min(errors))
    history["median_error"].append(float(np.median(errors)))


def evolve_subnetwork(ctx: EvaluationContext, cfg: EvolutionConfig) -> EvolutionResult:
    """Run the evolution loop against a sub-network evaluation context."""
    if cfg.alpha_mode != ctx.alpha_mode:
        ctx = replace(ctx, alpha_mode=cfg.alpha_mode)

    def evaluate(genes: np.ndarray) -> ObjectiveVector:
        return evaluate_individual(ctx, FilterMask(genes.astype(np.uint8), 0))

    return evolve(evaluate, ctx.num_filters, cfg)


# ---------------------------------------------------------------------------
# knee point


def knee_point(front: list[Individual]) -> Individual:
    """Front member farthest (perpendicular distance, objectives normalized
    to [0,1]) from the line through the two extreme endpoints.

    Fronts of size 1 or 2 return the member with the smaller filter_pct;
    distance ties break by smaller filter_pct, then lower error.
    """
    if not front:
        raise EvolutionError("knee_point on an empty front")
    small_key = lambda ind: (ind.objectives.filter_pct, ind.objectives.error)
    if len(front) <= 2:
        return min(front, key=small_key)
    pts = np.array([[ind.objectives.filter_pct, ind.objectives.error] for ind in front])
    lo = pts.min(axis=0)
    span = pts.max(axis=0) - lo
    norm = np.zeros_like(pts)
    for d in range(2):
        if span[d] > 0:
            norm[:, d] = (pts[:, d] - lo[d]) / span[d]
    a = norm[int(np.argmin(norm[:, 0]))]  # minimal normalized filter_pct
    b = norm[int(np.argmin(norm[:, 1]))]  # minimal normalized error
    ab = b - a
    length = float(np.hypot(*ab))
    if length == 0.0:
        dist = np.zeros(len(front))
    else:
        dist = np.abs(ab[0] * (norm[:, 1] - a[1]) - ab[1] * (norm[:, 0] - a[0])) / length
    # everything within float noise of the maximum counts as a tie
    tied = np.flatnonzero(dist >= dist.max() - 1e-12)
    best = min(
        tied,
        key=lambda i: (front[i].objectives.filter_pct, front[i].objectives.error),
    )
    return front[int(best)]


# ---------------------------------------------------------------------------
# export


def mask_hex(genes: np.ndarray) -> str:
    """Genome packed little-endian bit order, hex encoded."""
    return np.packbits(genes.astype(np.uint8), bitorder="little").tobytes().hex()


def mask_from_hex(hex_str: str, num_filters: int) -> np.ndarray:
    raw = np.frombuffer(bytes.fromhex(hex_str), dtype=np.uint8)
    return np.unpackbits(raw, bitorder="little")[:num_filters].astype(bool)


def write_front_csv(front: list[Individual], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["filter_pct", "error", "retained_count", "mask_hex"])
        for ind in front:
            writer.writerow(
                [
                    repr(ind.objectives.filter_pct),
                    repr(ind.objectives.error),
                    ind.retained,
                    mask_hex(ind.genes),
                ]
            )


def read_front_csv(path: str | Path, num_filters: int) -> list[Individual]:
    rows = []
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            ind = Individual(mask_from_hex(row["mask_hex"], num_filters))
            ind.objectives = ObjectiveVector(
                float(row["filter_pct"]), float(row["error"])
            )
            rows.append(ind)
    return rows


def run_summary(
    cfg: EvolutionConfig, result: EvolutionResult
) -> dict:
    """JSON-ready document: config echo, error traces, final front and the
    knee-point index within it."""
    knee = knee_point(result.front)
    knee_idx = next(
        i for i, ind in enumerate(result.front) if ind.genes.tobytes() == knee.genes.tobytes()
    )
    return {
        "config": {
            "population_size": cfg.population_size,
            "elite_size": cfg.elite_size,
            "generations": cfg.generations,
            "crossover_prob": cfg.crossover_prob,
            "mutation_prob": cfg.mutation_prob,
            "tau1": cfg.tau1,
            "tau2": cfg.tau2,
            "seed": cfg.seed,
            "alpha_mode": cfg.alpha_mode,
            "crossover": cfg.crossover,
        },
        "best_error": result.history["best_error"],
        "median_error": result.history["median_error"],
        "front": [
            {
                "filter_pct": ind.objectives.filter_pct,
                "error": ind.objectives.error,
                "retained_count": ind.retained,
                "mask_hex": mask_hex(ind.genes),
            }
            for ind in result.front
        ],
        "knee_index": knee_idx,
    }


def write_run_json(cfg: EvolutionConfig, result: EvolutionResult, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(run_summary(cfg, result), indent=2))

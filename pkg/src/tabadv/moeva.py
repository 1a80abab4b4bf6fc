"""Grey-box three-objective genetic attack: minimize (probability of class 1,
perturbation distance, total constraint penalty) with non-dominated sorting,
reference-direction niching, two-point crossover over mutable genes, and
constraint-aware polynomial mutation.

Only ``predict_proba`` is required of the model; gradients are never used.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cpgd import AttackResult
from .dsl import ConstraintSet
from .penalty import EvalContext, PenaltyConfig, satisfies_all, total_penalty
from .schema import FeatureSchema, Scaler


@dataclass(frozen=True)
class GAConfig:
    pop_size: int = 200
    n_offspring: int = 100
    n_gen: int = 100
    eps: float = 0.5
    p: float = 2
    threshold: float = 0.5
    g3_tol: float = 1e-9
    eta_m: float = 20.0  # polynomial mutation distribution index
    p_mut: float | None = None  # per-gene probability; default 1 / n_mutable
    seed: int = 0
    ref_partitions: int | None = None  # default: smallest with >= pop_size dirs
    penalty_cfg: PenaltyConfig = field(default_factory=PenaltyConfig)

    def __post_init__(self):
        if self.pop_size < 2:
            raise ValueError("pop_size must be >= 2")
        if self.n_offspring < 1 or self.n_gen < 1:
            raise ValueError("n_offspring and n_gen must be >= 1")
        if self.eps <= 0:
            raise ValueError("eps must be positive")


@dataclass
class Individual:
    genome: np.ndarray
    objectives: tuple[float, float, float]
    feasible_success: bool


@dataclass
class HistoryRow:
    generation: int
    cumulative_success: bool
    best_g1: float
    best_g2: float
    best_g3: float


def initialize(x0: np.ndarray, pop_size: int) -> np.ndarray:
    """Initial population: identical copies of the original example."""
    if pop_size < 2:
        raise ValueError("pop_size must be >= 2")
    return np.tile(np.asarray(x0, dtype=float), (pop_size, 1))


def _distances(genomes: np.ndarray, x0: np.ndarray, p: float) -> np.ndarray:
    delta = genomes - x0
    if p == 1:
        return np.abs(delta).sum(axis=1)
    if p == 2:
        return np.sqrt((delta * delta).sum(axis=1))
    if p == math.inf:
        return np.abs(delta).max(axis=1) if delta.shape[1] else np.zeros(len(delta))
    raise ValueError(f"unsupported norm order {p}")


def evaluate(
    genomes: np.ndarray,
    model,
    x0: np.ndarray,
    omega: ConstraintSet,
    schema: FeatureSchema,
    cfg: GAConfig,
) -> np.ndarray:
    """Objective matrix (len(genomes), 3); constraints scored in original units."""
    g1 = np.asarray(model.predict_proba(genomes), dtype=float)
    g2 = _distances(genomes, np.asarray(x0, dtype=float), cfg.p)
    ctx = EvalContext.from_scaled(schema, genomes, np.asarray(x0, dtype=float))
    g3 = np.asarray(total_penalty(omega, ctx, cfg.penalty_cfg), dtype=float)
    return np.column_stack([g1, g2, g3])


def two_point_crossover(
    parent_a: np.ndarray,
    parent_b: np.ndarray,
    rng: np.random.Generator,
    mutable_mask: np.ndarray,
    cuts: tuple[int, int] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Swap the mutable-gene segment [i, j) between two parents.

    Cut boundaries are sampled over mutable positions only, so immutable
    coordinates always come through unchanged.
    """
    positions = np.flatnonzero(mutable_mask)
    child_a, child_b = parent_a.copy(), parent_b.copy()
    if len(positions) == 0:
        return child_a, child_b
    if cuts is None:
        i, j = sorted(rng.choice(len(positions) + 1, size=2, replace=False))
    else:
        i, j = cuts
    segment = positions[i:j]
    child_a[segment] = parent_b[segment]
    child_b[segment] = parent_a[segment]
    return child_a, child_b


def polynomial_mutation(
    child: np.ndarray,
    schema: FeatureSchema,
    cfg: GAConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """Perturb each mutable gene with probability p_mut using the polynomial
    mutation transform with index eta_m, clip to [0,1], and snap integer and
    binary genes back to their grids."""
    out = np.array(child, dtype=float)
    positions = np.flatnonzero(schema.mutable_mask)
    if len(positions) == 0:
        return out
    p_mut = cfg.p_mut if cfg.p_mut is not None else 1.0 / len(positions)
    select = rng.random(len(positions)) < p_mut
    u = rng.random(len(positions))
    if not select.any():
        return out
    idx = positions[select]
    x = out[idx]
    uu = u[select]
    exp = cfg.eta_m + 1.0
    mut_pow = 1.0 / exp
    # genes live in [0,1]: delta1 = x, delta2 = 1 - x
    low_branch = uu <= 0.5
    val_low = 2.0 * uu + (1.0 - 2.0 * uu) * (1.0 - x) ** exp
    val_high = 2.0 * (1.0 - uu) + 2.0 * (uu - 0.5) * x**exp
    deltaq = np.where(low_branch, val_low**mut_pow - 1.0, 1.0 - val_high**mut_pow)
    out[idx] = np.clip(x + deltaq, 0.0, 1.0)
    return schema.scaler.snap_to_grid(out)


def das_dennis(n_partitions: int, n_obj: int = 3) -> np.ndarray:
    """Uniform reference directions on the unit simplex: all points with
    coordinates k_i / p summing to 1."""
    if n_partitions < 1:
        raise ValueError("n_partitions must be >= 1")
    rows = []

    def build(prefix, remaining, slots):
        if slots == 1:
            rows.append(prefix + [remaining])
            return
        for k in range(remaining + 1):
            build(prefix + [k], remaining - k, slots - 1)

    build([], n_partitions, n_obj)
    return np.array(rows, dtype=float) / n_partitions


def _partitions_for(pop_size: int) -> int:
    p = 1
    while (p + 2) * (p + 1) // 2 < pop_size:
        p += 1
    return p


def fast_nondominated_sort(objectives: np.ndarray) -> list[list[int]]:
    """Pareto fronts by minimization domination (all <= and at least one <)."""
    F = np.asarray(objectives, dtype=float)
    n = len(F)
    if n == 0:
        return []
    le = (F[:, None, :] <= F[None, :, :]).all(axis=2)
    lt = (F[:, None, :] < F[None, :, :]).any(axis=2)
    dominates = le & lt  # dominates[i, j]: i dominates j
    n_dominators = dominates.sum(axis=0)
    fronts = []
    assigned = np.zeros(n, dtype=bool)
    current = np.flatnonzero(n_dominators == 0)
    while len(current):
        fronts.append(current.tolist())
        assigned[current] = True
        n_dominators = n_dominators - dominates[current].sum(axis=0)
        current = np.flatnonzero((n_dominators == 0) & ~assigned)
    return fronts


def _associate(Fn: np.ndarray, dirs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest reference direction per individual and its perpendicular distance."""
    unit = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    proj = Fn @ unit.T  # (n, n_dirs)
    sq = (Fn * Fn).sum(axis=1, keepdims=True)
    perp = np.sqrt(np.maximum(sq - proj * proj, 0.0))
    niche = perp.argmin(axis=1)
    return niche, perp[np.arange(len(Fn)), niche]


def survival(objectives: np.ndarray, pop_size: int, dirs: np.ndarray) -> list[int]:
    """Select pop_size survivors: whole Pareto fronts while they fit, then fill
    from the splitting front by reference-direction niching.

    Normalization uses the ideal/nadir box of the whole pool. Within the
    niching loop the least-crowded niche wins; ties go to the smaller
    perpendicular distance, then the stable pool index.
    """
    F = np.asarray(objectives, dtype=float)
    if len(F) <= pop_size:
        return list(range(len(F)))
    fronts = fast_nondominated_sort(F)
    selected: list[int] = []
    splitting: list[int] | None = None
    for front in fronts:
        if len(selected) + len(front) <= pop_size:
            selected.extend(front)
        else:
            splitting = front
            break
    if splitting is None or len(selected) == pop_size:
        return selected

    ideal = F.min(axis=0)
    spread = F.max(axis=0) - ideal
    spread[spread <= 0] = 1.0
    Fn = (F - ideal) / spread
    niche_of, perp = _associate(Fn, dirs)

    counts = np.bincount(niche_of[selected], minlength=len(dirs)) if selected else np.zeros(len(dirs), dtype=int)
    pending: dict[int, list[tuple[float, int]]] = {}
    for idx in splitting:
        pending.setdefault(int(niche_of[idx]), []).append((float(perp[idx]), idx))
    for cand in pending.values():
        cand.sort()

    while len(selected) < pop_size:
        open_niches = [n for n in pending if pending[n]]
        best_niche = min(open_niches, key=lambda n: (counts[n], n))
        _, idx = pending[best_niche].pop(0)
        selected.append(idx)
        counts[best_niche] += 1
    return selected


def moeva_attack(
    model,
    x0: np.ndarray,
    schema: FeatureSchema,
    omega: ConstraintSet,
    cfg: GAConfig,
) -> AttackResult:
    """Run the full generational loop against one original example.

    The result's history holds one row per generation (plus the initial
    population) with the cumulative success flag and the objectives of the
    best candidate so far. The best feasible individual is tracked outside
    the population, so it can never be lost to survival selection.
    """
    x0 = np.asarray(x0, dtype=float)
    rng = np.random.default_rng(cfg.seed)
    dirs = das_dennis(cfg.ref_partitions or _partitions_for(cfg.pop_size))
    exact_bound = max(cfg.g3_tol, len(omega) * cfg.penalty_cfg.tau)

    genomes = initialize(x0, cfg.pop_size)
    F = evaluate(genomes, model, x0, omega, schema, cfg)

    best_key: tuple | None = None
    best: tuple[np.ndarray, np.ndarray, bool] | None = None  # genome, objectives, confirmed
    any_mis = False
    any_con = False
    found_success = False
    history: list[HistoryRow] = []

    def absorb(genomes_new: np.ndarray, F_new: np.ndarray):
        nonlocal best_key, best, any_mis, any_con, found_success
        g1, g2, g3 = F_new[:, 0], F_new[:, 1], F_new[:, 2]
        within = g2 <= cfg.eps
        mis = g1 < cfg.threshold
        any_mis = any_mis or bool((mis & within).any())
        exact_ok = np.zeros(len(F_new), dtype=bool)
        maybe = g3 <= exact_bound
        if maybe.any():
            ctx = EvalContext.from_scaled(schema, genomes_new[maybe], x0)
            exact_ok[maybe] = np.asarray(satisfies_all(omega, ctx), dtype=bool)
        any_con = any_con or bool((exact_ok & within).any())
        feasible = mis & within & (g3 <= cfg.g3_tol)
        confirmed = feasible & exact_ok
        found_success = found_success or bool(confirmed.any())
        for i in range(len(F_new)):
            # feasible-and-confirmed first, then min g1 among those;
            # otherwise lowest penalty, then probability, then distance
            key = (
                0 if confirmed[i] else 1,
                (g1[i], g2[i]) if confirmed[i] else (g3[i], g1[i], g2[i]),
            )
            if best_key is None or key < best_key:
                best_key = key
                best = (genomes_new[i].copy(), F_new[i].copy(), bool(confirmed[i]))

    def best_triple() -> tuple[float, float, float]:
        return tuple(float(v) for v in best[1])

    absorb(genomes, F)
    history.append(HistoryRow(0, found_success, *best_triple()))

    for gen in range(1, cfg.n_gen + 1):
        children = []
        while len(children) < cfg.n_offspring:
            pa, pb = rng.choice(cfg.pop_size, size=2, replace=False)
            for child in two_point_crossover(
                genomes[pa], genomes[pb], rng, schema.mutable_mask
            ):
                if len(children) < cfg.n_offspring:
                    children.append(polynomial_mutation(child, schema, cfg, rng))
        offspring = np.array(children)
        F_off = evaluate(offspring, model, x0, omega, schema, cfg)
        absorb(offspring, F_off)

        pool = np.vstack([genomes, offspring])
        F_pool = np.vstack([F, F_off])
        keep = survival(F_pool, cfg.pop_size, dirs)
        genomes, F = pool[keep], F_pool[keep]
        history.append(HistoryRow(gen, found_success, *best_triple()))

    best_genome, best_F, confirmed = best
    g1, g2, g3 = (float(v) for v in best_F)
    mis = g1 < cfg.threshold
    within = g2 <= cfg.eps
    ctx = EvalContext.from_scaled(schema, best_genome, x0)
    ok = bool(satisfies_all(omega, ctx))
    return AttackResult(
        original=x0,
        best=best_genome,
        misclassified=mis,
        constraints_ok=ok,
        within_eps=within,
        success=mis and ok and within,
        iterations_used=cfg.n_gen,
        any_misclassified=any_mis,
        any_constrained=any_con,
        best_objectives=(g1, g2, g3),
        history=history,
    )


def population_snapshot(genomes: np.ndarray, F: np.ndarray, cfg: GAConfig) -> list[Individual]:
    """Materialize array-based population state as Individual records."""
    out = []
    for genome, row in zip(genomes, F):
        feasible = row[0] < cfg.threshold and row[1] <= cfg.eps and row[2] <= cfg.g3_tol
        out.append(Individual(genome.copy(), tuple(float(v) for v in row), bool(feasible)))
    return out

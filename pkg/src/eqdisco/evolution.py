"""Memetic evolutionary search over candidate equations.

A genetic algorithm proposes equation structures (random token-product
terms, crossover exchanging terms, token-level mutation) while the sparse
regression of :mod:`eqdisco.regression` supplies coefficients and the
quality objective. Selection is multi-objective over (quality, complexity)
via fast non-dominated sorting with crowding distance, plus per-complexity
elitism so the best equation at every term count survives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, EqDiscoError
from .regression import FitResult, fit_equation
from .tokens import Equation, Term, TermCache, const, deriv, inverse, raw


@dataclass(frozen=True)
class EvoConfig:
    """Search-space and loop parameters for one evolutionary run."""

    variables: tuple[str, ...]
    target_variable: str | None = None
    max_order: int = 1
    max_factors: int = 2
    max_power: int = 2
    use_inverse: bool = True
    use_constant: bool = True
    min_terms: int = 2
    max_terms: int = 6
    population: int = 64
    generations: int = 100
    crossover_rate: float = 0.8
    mutation_rate: float = 0.3
    mutation_weights: tuple[float, float, float] = (0.5, 0.25, 0.25)
    lam: object = "auto"
    epsilon: float = 1e-6
    seed: int = 0
    archive_size: int = 4

    def __post_init__(self):
        if not self.variables:
            raise ConfigError("at least one state variable is required")
        if self.min_terms < 2 or self.min_terms > self.max_terms:
            raise ConfigError("need 2 <= min_terms <= max_terms")
        if self.max_factors < 1 or self.max_power < 1 or self.max_order < 1:
            raise ConfigError("max_factors, max_power, max_order must be >= 1")


@dataclass
class Individual:
    equation: Equation
    fit: FitResult | None = None
    objectives: tuple[float, int] | None = None

    def clear(self):
        return Individual(self.equation)

    @property
    def evaluated(self):
        return self.objectives is not None


@dataclass(frozen=True)
class ParetoFront:
    """Non-dominated levels; level 0 holds the non-dominated individuals."""

    levels: tuple[tuple[Individual, ...], ...]

    @property
    def members(self):
        return tuple(ind for level in self.levels for ind in level)

    @property
    def level0(self):
        return self.levels[0] if self.levels else ()


def _token_pool(config, data):
    pool = []
    for v in sorted(config.variables):
        for order in range(config.max_order + 1):
            pool.append(deriv(v, order) if order else raw(v))
    if config.use_inverse and not np.any(data.grid == 0):
        pool.append(inverse(data.time_name))
    if config.use_constant:
        pool.append(const())
    return pool


def _term_ok(tokens, config):
    if len(tokens) > config.max_factors:
        return False
    # a constant factor in a product is redundant (it evaluates to ones),
    # so the constant token is only admitted as a singleton term
    if len(tokens) > 1 and any(t.key == "const" for t in tokens):
        return False
    term = Term(tuple(tokens))
    return term.power <= config.max_power


def _random_term(config, pool, rng):
    for _ in range(100):
        k = int(rng.integers(1, config.max_factors + 1))
        tokens = [pool[int(rng.integers(len(pool)))] for _ in range(k)]
        if _term_ok(tokens, config):
            return Term(tuple(tokens))
    raise ConfigError("could not draw a term satisfying power/factor bounds")


def _target_variable_ok(terms, config):
    return any(t.has_derivative(variable=config.target_variable) for t in terms)


def random_equation(config, data, rng):
    """Draw a random equation with a uniform term count in the configured
    range; resampled (up to 100 attempts) until all Equation invariants
    and the target-variable constraint hold."""
    pool = _token_pool(config, data)
    for _ in range(100):
        n = int(rng.integers(config.min_terms, config.max_terms + 1))
        terms = []
        keys = set()
        tries = 0
        while len(terms) < n and tries < 100:
            tries += 1
            t = _random_term(config, pool, rng)
            if t.key not in keys:
                keys.add(t.key)
                terms.append(t)
        if len(terms) != n or not _target_variable_ok(terms, config):
            continue
        eligible = [
            i
            for i, t in enumerate(terms)
            if t.has_derivative(variable=config.target_variable)
        ]
        target = int(eligible[rng.integers(len(eligible))])
        terms[target] = terms[target].with_coefficient(1.0)
        try:
            return Equation(tuple(terms), target)
        except EqDiscoError:
            continue
    raise ConfigError(
        "could not construct a valid random equation in 100 attempts; "
        "the search-space configuration is infeasible"
    )


def _rebuild(target, others):
    terms = (target.with_coefficient(1.0), *others)
    return Equation(terms, 0)


def crossover(a, b, rng):
    """Exchange a random subset of non-target terms between two parents.

    Terms are paired positionally after canonical sorting, so identical
    parents always produce identical children. A swap whose incoming term
    would duplicate an existing key in the child is canceled (the original
    term is kept).
    """
    ta = sorted(a.equation.rhs_terms, key=lambda t: t.key)
    tb = sorted(b.equation.rhs_terms, key=lambda t: t.key)
    ca, cb = list(ta), list(tb)
    for i in range(min(len(ta), len(tb))):
        if rng.random() >= 0.5:
            continue
        incoming_a, incoming_b = tb[i], ta[i]
        keys_a = {t.key for j, t in enumerate(ca) if j != i} | {a.equation.target.key}
        keys_b = {t.key for j, t in enumerate(cb) if j != i} | {b.equation.target.key}
        if incoming_a.key in keys_a or incoming_b.key in keys_b:
            continue
        ca[i], cb[i] = incoming_a, incoming_b
    child_a = Individual(_rebuild(a.equation.target, ca))
    child_b = Individual(_rebuild(b.equation.target, cb))
    return child_a, child_b


def mutate(ind, rng, config, data=None, pool=None):
    """Apply exactly one structural edit: token replacement, term addition,
    or removal of a non-target term, with configured probabilities
    (bounds-excluded moves are renormalized away)."""
    if pool is None:
        if data is None:
            raise ContractError("mutate needs the token pool or the data")
        pool = _token_pool(config, data)
    eq = ind.equation
    n = eq.complexity
    w_replace, w_add, w_remove = config.mutation_weights
    if n >= config.max_terms:
        w_add = 0.0
    if n <= config.min_terms:
        w_remove = 0.0
    weights = np.array([w_replace, w_add, w_remove])
    weights = weights / weights.sum()
    move = ["replace", "add", "remove"][int(rng.choice(3, p=weights))]
    for _ in range(100):
        if move == "add":
            t = _random_term(config, pool, rng)
            if t.key in {x.key for x in eq.terms}:
                continue
            return Individual(_rebuild(eq.target, (*eq.rhs_terms, t)))
        if move == "remove":
            rhs = list(eq.rhs_terms)
            rhs.pop(int(rng.integers(len(rhs))))
            if not _target_variable_ok((eq.target, *rhs), config):
                continue
            try:
                return Individual(_rebuild(eq.target, rhs))
            except EqDiscoError:
                continue
        # replace one token factor in one random term
        idx = int(rng.integers(n))
        term = eq.terms[idx]
        tokens = list(term.tokens)
        tokens[int(rng.integers(len(tokens)))] = pool[int(rng.integers(len(pool)))]
        if not _term_ok(tokens, config):
            continue
        new_term = Term(tuple(tokens), term.coefficient)
        terms = list(eq.terms)
        terms[idx] = new_term
        keys = [t.key for t in terms]
        if len(set(keys)) != len(keys):
            continue
        if not _target_variable_ok(terms, config):
            continue
        if idx == eq.target_index:
            if not new_term.has_derivative(variable=config.target_variable):
                continue
            terms[idx] = new_term.with_coefficient(1.0)
        try:
            return Individual(Equation(tuple(terms), eq.target_index))
        except EqDiscoError:
            continue
    return ind.clear()


def _dominates(p, q):
    (q1, c1), (q2, c2) = p.objectives, q.objectives
    return q1 <= q2 and c1 <= c2 and (q1 < q2 or c1 < c2)


def pareto_sort(population):
    """Fast non-dominated sorting into Pareto levels."""
    population = list(population)
    for ind in population:
        if not ind.evaluated:
            raise ContractError("pareto_sort requires evaluated individuals")
    n = len(population)
    dominated_by = [0] * n
    dominates_set = [[] for _ in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            if _dominates(population[i], population[j]):
                dominates_set[i].append(j)
                dominated_by[j] += 1
            elif _dominates(population[j], population[i]):
                dominates_set[j].append(i)
                dominated_by[i] += 1
    levels = []
    current = [i for i in range(n) if dominated_by[i] == 0]
    while current:
        levels.append(tuple(population[i] for i in current))
        nxt = []
        for i in current:
            for j in dominates_set[i]:
                dominated_by[j] -= 1
                if dominated_by[j] == 0:
                    nxt.append(j)
        current = sorted(nxt)
    return ParetoFront(tuple(levels))


def _crowding(level):
    """Crowding distance per individual within one level."""
    m = len(level)
    dist = [0.0] * m
    if m <= 2:
        return [math.inf] * m
    for axis in range(2):
        order = sorted(range(m), key=lambda i: level[i].objectives[axis])
        lo = level[order[0]].objectives[axis]
        hi = level[order[-1]].objectives[axis]
        dist[order[0]] = dist[order[-1]] = math.inf
        span = hi - lo
        if span == 0:
            continue
        for k in range(1, m - 1):
            gap = (
                level[order[k + 1]].objectives[axis]
                - level[order[k - 1]].objectives[axis]
            )
            dist[order[k]] += gap / span
    return dist


def _rank_population(population):
    """Return (rank, crowding) per individual, NSGA-II style."""
    front = pareto_sort(population)
    rank = {}
    crowd = {}
    for r, level in enumerate(front.levels):
        dists = _crowding(level)
        for ind, d in zip(level, dists):
            rank[id(ind)] = r
            crowd[id(ind)] = d
    return rank, crowd


_WORST = (math.inf, 10**6)


def _evaluate(ind, data, config, rng, cache, memo):
    if ind.evaluated:
        return ind
    key = tuple(t.key for t in ind.equation.terms)
    hit = memo.get(key)
    if hit is not None:
        ind.fit, ind.objectives = hit
        return ind
    try:
        fit = fit_equation(
            ind.equation,
            data,
            lam=config.lam,
            epsilon=config.epsilon,
            rng=rng,
            target_variable=config.target_variable,
            cache=cache,
        )
        ind.fit = fit
        ind.objectives = (fit.residual_norm, fit.n_terms)
    except EqDiscoError:
        ind.fit = None
        ind.objectives = _WORST
    memo[key] = (ind.fit, ind.objectives)
    return ind


def _tournament(population, rank, crowd, rng):
    i, j = rng.integers(len(population)), rng.integers(len(population))
    a, b = population[int(i)], population[int(j)]
    ra, rb = rank[id(a)], rank[id(b)]
    if ra != rb:
        return a if ra < rb else b
    return a if crowd[id(a)] >= crowd[id(b)] else b


def _update_archive(archive, individuals, size):
    """Keep the top ``size`` unique genotypes per complexity value, sorted
    by quality — the sorted-per-term-count selection that lets equations
    describing different process scales survive domination."""
    for ind in individuals:
        if ind.fit is None or not ind.evaluated:
            continue
        quality, complexity = ind.objectives
        if not math.isfinite(quality):
            continue
        key = tuple(sorted(t.key for t in ind.equation.terms))
        bucket = archive.setdefault(complexity, {})
        best = bucket.get(key)
        if best is None or quality < best.objectives[0]:
            bucket[key] = ind
        if len(bucket) > 4 * size:
            ranked = sorted(bucket.items(), key=lambda kv: kv[1].objectives[0])
            archive[complexity] = dict(ranked[:size])


def _archive_members(archive, size):
    members = []
    for complexity in sorted(archive):
        ranked = sorted(
            archive[complexity].values(), key=lambda ind: ind.objectives[0]
        )
        members.extend(ranked[:size])
    return members


def evolve(data, config, rng=None):
    """Run the generational loop and return the final Pareto front.

    Fitness errors demote the individual to worst quality instead of
    aborting the run. Per-complexity elites (best residual at each
    retained-term count) are carried over unconditionally, and a
    per-complexity archive of the top ``archive_size`` equations ever seen
    is merged into the returned front, so dominated-but-recurrent process
    scales stay reportable.
    """
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    cache = TermCache(data)
    memo = {}
    pool = _token_pool(config, data)
    archive = {}
    population = [
        Individual(random_equation(config, data, rng))
        for _ in range(config.population)
    ]
    for ind in population:
        _evaluate(ind, data, config, rng, cache, memo)
    _update_archive(archive, population, config.archive_size)
    for _ in range(config.generations):
        rank, crowd = _rank_population(population)
        offspring = []
        while len(offspring) < config.population:
            pa = _tournament(population, rank, crowd, rng)
            pb = _tournament(population, rank, crowd, rng)
            if rng.random() < config.crossover_rate:
                ca, cb = crossover(pa, pb, rng)
            else:
                ca, cb = pa.clear(), pb.clear()
            for child in (ca, cb):
                if rng.random() < config.mutation_rate:
                    child = mutate(child, rng, config, pool=pool)
                offspring.append(child)
        offspring = offspring[: config.population]
        for ind in offspring:
            _evaluate(ind, data, config, rng, cache, memo)
        _update_archive(archive, offspring, config.archive_size)
        population = _select(population + offspring, config.population)
    final = _dedupe(population + _archive_members(archive, config.archive_size))
    return pareto_sort(final)


def _select(combined, size):
    """NSGA-II survival with per-complexity elitism.

    Duplicate genotypes (same term-key multiset) are collapsed before
    survival so the population cannot silently fill with clones.
    """
    unique = {}
    for ind in combined:
        key = tuple(sorted(t.key for t in ind.equation.terms))
        best = unique.get(key)
        if best is None or ind.objectives[0] < best.objectives[0]:
            unique[key] = ind
    if len(unique) >= size // 2:
        combined = list(unique.values())
    elites = {}
    for ind in combined:
        c = ind.objectives[1]
        best = elites.get(c)
        if best is None or ind.objectives[0] < best.objectives[0]:
            elites[c] = ind
    chosen = list(elites.values())
    chosen_ids = {id(x) for x in chosen}
    front = pareto_sort(combined)
    for level in front.levels:
        if len(chosen) >= size:
            break
        rest = [ind for ind in level if id(ind) not in chosen_ids]
        if len(chosen) + len(rest) <= size:
            chosen.extend(rest)
            chosen_ids.update(id(x) for x in rest)
        else:
            dists = dict(zip(map(id, level), _crowding(level)))
            by_crowd = sorted(rest, key=lambda ind: -dists[id(ind)])
            take = size - len(chosen)
            chosen.extend(by_crowd[:take])
            break
    return chosen[:size]


def _signature(ind):
    if ind.fit is None:
        return tuple(t.key for t in ind.equation.terms)
    return tuple(
        (k, round(v, 12)) for k, v in sorted(ind.fit.coefficients.items())
    )


def _dedupe(population):
    seen = {}
    for ind in population:
        seen.setdefault(_signature(ind), ind)
    return list(seen.values())


def top_per_complexity(front, l):
    """The top ``l`` members by quality at every complexity value, pooled
    over all Pareto levels of the front."""
    buckets = {}
    for ind in front.members:
        if ind.fit is None or not math.isfinite(ind.objectives[0]):
            continue
        buckets.setdefault(ind.objectives[1], []).append(ind)
    out = []
    for complexity in sorted(buckets):
        ranked = sorted(buckets[complexity], key=lambda ind: ind.objectives[0])
        out.extend(ranked[:l])
    return out


def front_records(front, variable):
    """JSON-ready records for every level-0 member of a front."""
    records = []
    for ind in front.level0:
        if ind.fit is None:
            continue
        eq = ind.fit.equation
        records.append(
            {
                "variable": variable,
                "target": ind.fit.target_key,
                "terms": sorted(ind.fit.coefficients),
                "coefficients": {
                    k: ind.fit.coefficients[k] for k in sorted(ind.fit.coefficients)
                },
                "quality": ind.objectives[0],
                "complexity": ind.objectives[1],
                "pretty": eq.pretty(),
            }
        )
    records.sort(key=lambda r: (r["complexity"], r["quality"], r["pretty"]))
    return records

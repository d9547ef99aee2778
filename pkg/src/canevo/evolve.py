"""Grammatical evolution of response-time formulas, and test/scenario co-evolution.

Fitness is an error sum against reference response times (lower is better):
pessimism costs its size, optimism costs ``p_opt`` per tick plus ``k_opt``,
divergence costs ``p_div``. Every random decision draws from a stream keyed
by (seed, generation, slot), so results do not depend on worker count.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .analysis import rta_exact
from .errors import InvalidConfig, MappingIncomplete, OracleFailure
from .formula import CorpusEvaluator, Formula, builtin, eval_formula
from .gen import GenParams, generate_sets
from .grammar import DEFAULT_GRAMMAR, Genotype, Grammar, map_genotype
from .model import AnalysisConfig, MessageSet
from .sim import HorizonClamped, Scenario, critical_instant_scenario, default_horizon, simulate

CODON_MAX = 2**16


@dataclass(frozen=True)
class FitnessConfig:
    oracle: str = "exact"  # or "sim-watermark"
    p_opt: int = 1000
    k_opt: int = 10**6
    p_div: int = 10**7

    def __post_init__(self):
        if self.oracle not in ("exact", "sim-watermark"):
            raise InvalidConfig(f"unknown oracle {self.oracle!r}")
        if not self.p_div >= self.k_opt >= self.p_opt >= 1:
            raise InvalidConfig("need p_div >= k_opt >= p_opt >= 1")


@dataclass(frozen=True)
class EvoConfig:
    population: int = 200
    generations: int = 100
    tournament: int = 4
    crossover_rate: float = 0.9
    mutation_rate: float = 0.02
    elitism: int = 2
    codon_length: int = 64
    max_wraps: int = 3
    seed: int = 0
    workers: int = 1
    grammar: str | None = None  # BNF text replacing the default grammar

    def __post_init__(self):
        if self.population < 1 or self.generations < 1 or self.tournament < 1:
            raise InvalidConfig("population, generations and tournament must be >= 1")
        if not 0 <= self.elitism < self.population:
            raise InvalidConfig("elitism must be smaller than the population")
        if not (0 <= self.crossover_rate <= 1 and 0 <= self.mutation_rate <= 1):
            raise InvalidConfig("rates must lie in [0, 1]")
        if self.codon_length < 1 or self.max_wraps < 0 or self.workers < 1:
            raise InvalidConfig("codon_length and workers must be >= 1, max_wraps >= 0")

    def get_grammar(self) -> Grammar:
        return DEFAULT_GRAMMAR if self.grammar is None else Grammar.from_bnf(self.grammar)


def rng_for(*key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([k & (2**64 - 1) for k in key]))


# -- fitness -------------------------------------------------------------------


def oracle_horizon(ms: MessageSet) -> int:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", HorizonClamped)
        full = default_horizon(ms)
    return min(full, 4 * max(m.t for m in ms) + max(m.j for m in ms))


def oracle_values(sets: Sequence[MessageSet], fc: FitnessConfig, cfg: AnalysisConfig = AnalysisConfig()):
    """Reference response per corpus message, None where the oracle failed."""
    out = []
    for ms in sets:
        if fc.oracle == "exact":
            for m in ms:
                v = rta_exact(ms, m.id, cfg)
                out.append(v.r if v.converged else None)
        else:
            res = simulate(ms, critical_instant_scenario(ms, oracle_horizon(ms)))
            out.extend(res.watermarks[m.id] for m in ms)
    return out


def message_error(estimate: int | None, reference: int, fc: FitnessConfig) -> int:
    if estimate is None:
        return fc.p_div
    if estimate >= reference:
        return estimate - reference
    return fc.p_opt * (reference - estimate) + fc.k_opt


def fitness_from_values(estimates, references, fc: FitnessConfig) -> int:
    """Scalar fitness over paired estimates (None = divergent) and references."""
    return sum(message_error(e, r, fc) for e, r in zip(estimates, references) if r is not None)


class FitnessEvaluator:
    """Scores formulas on a fixed corpus against precomputed oracle values."""

    def __init__(self, sets: Sequence[MessageSet], fc: FitnessConfig = FitnessConfig(),
                 cfg: AnalysisConfig = AnalysisConfig()):
        self.sets = list(sets)
        self.fc = fc
        self.cfg = cfg
        self.batch = CorpusEvaluator(self.sets, cfg)
        ref = oracle_values(self.sets, fc, cfg)
        self.valid = np.array([r is not None for r in ref], dtype=bool)
        self.reference = np.array([0 if r is None else r for r in ref], dtype=np.int64)
        self.excluded = [key for key, ok in zip(self.batch.keys, self.valid) if not ok]
        if self.excluded:
            warnings.warn(f"oracle failed for {len(self.excluded)} messages; they are excluded", OracleWarning)
        if len(self.batch) and not self.valid.any():
            raise OracleFailure("oracle failed for every corpus message")

    @property
    def size(self) -> int:
        return int(self.valid.sum())

    def errors(self, f: Formula) -> np.ndarray:
        values, divergent = self.batch.evaluate(f)
        ref = self.reference
        err = np.where(values >= ref, values - ref, self.fc.p_opt * (ref - values) + self.fc.k_opt)
        err = np.where(divergent, self.fc.p_div, err)
        return err[self.valid]

    def fitness(self, f: Formula | None) -> int:
        if f is None:
            return self.fc.p_div * self.size
        return int(self.errors(f).sum(dtype=np.int64))

    def summary(self, f: Formula) -> dict:
        values, divergent = self.batch.evaluate(f)
        v, d, ref = values[self.valid], divergent[self.valid], self.reference[self.valid]
        return {
            "fitness": int(self.errors(f).sum(dtype=np.int64)),
            "optimistic": int(((v < ref) & ~d).sum()),
            "divergent": int(d.sum()),
            "messages": self.size,
        }


class OracleWarning(UserWarning):
    pass


def fitness_of_formula(f: Formula, corpus: Sequence[MessageSet], fc: FitnessConfig = FitnessConfig(),
                       cfg: AnalysisConfig = AnalysisConfig()) -> int:
    return FitnessEvaluator(corpus, fc, cfg).fitness(f)


def normalized_fitness(f: Formula, corpus, fc: FitnessConfig = FitnessConfig(),
                       cfg: AnalysisConfig = AnalysisConfig(), evaluator: FitnessEvaluator | None = None) -> Fraction:
    """F(f) / max(F(S1 recurrence), 1) on the same corpus."""
    ev = evaluator or FitnessEvaluator(corpus, fc, cfg)
    return Fraction(ev.fitness(f), max(ev.fitness(builtin(1)), 1))


# -- GE engine -------------------------------------------------------------------


@dataclass(frozen=True)
class GenerationRecord:
    generation: int
    best_fitness: int
    mean_fitness: float
    best_formula: str


@dataclass
class RunHistory:
    records: list = field(default_factory=list)
    best: Formula | None = None
    best_fitness: int | None = None
    population: list = field(default_factory=list)  # final genotypes
    fitnesses: list = field(default_factory=list)

    def best_sequence(self) -> list[int]:
        return [r.best_fitness for r in self.records]


_worker_evaluator: FitnessEvaluator | None = None


def _init_worker(sets, fc, cfg):
    global _worker_evaluator
    _worker_evaluator = FitnessEvaluator(sets, fc, cfg)


def _worker_fitness(text: str) -> int:
    from .formula import parse_formula

    return _worker_evaluator.fitness(parse_formula(text))


def random_genotype(rng: np.random.Generator, evo: EvoConfig) -> Genotype:
    return Genotype(tuple(int(c) for c in rng.integers(0, CODON_MAX, evo.codon_length)), evo.max_wraps)


def tournament_pick(rng: np.random.Generator, fitnesses: Sequence[int], size: int) -> int:
    idx = rng.integers(0, len(fitnesses), size)
    best = int(idx[0])
    for i in idx[1:]:
        if fitnesses[i] < fitnesses[best]:
            best = int(i)
    return best


def breed(rng: np.random.Generator, pop: Sequence[Genotype], fitnesses: Sequence[int], evo: EvoConfig) -> Genotype:
    """Tournament selection, one-point codon crossover, uniform codon redraw."""
    a = pop[tournament_pick(rng, fitnesses, evo.tournament)].codons
    b = pop[tournament_pick(rng, fitnesses, evo.tournament)].codons
    child = list(a)
    if rng.random() < evo.crossover_rate and min(len(a), len(b)) > 1:
        point = int(rng.integers(1, min(len(a), len(b))))
        child = list(a[:point]) + list(b[point:])
    mask = rng.random(len(child)) < evo.mutation_rate
    if mask.any():
        fresh = rng.integers(0, CODON_MAX, len(child))
        child = [int(fresh[n]) if mask[n] else c for n, c in enumerate(child)]
    return Genotype(tuple(child), evo.max_wraps)


class GrammaticalEvolution:
    """Generational GE with elitism over a scoring function.

    ``score`` receives a Formula (or None for an unmappable genotype) and
    returns an integer fitness. When an evaluator is given and ``workers > 1``
    the base fitness of new formulas is computed in worker processes.
    """

    def __init__(self, evo: EvoConfig, evaluator: FitnessEvaluator,
                 penalty: Callable[[Formula], int] | None = None, stream_prefix: tuple = ()):
        self.evo = evo
        self.grammar = evo.get_grammar()
        self.evaluator = evaluator
        self.penalty = penalty
        self.prefix = stream_prefix
        self.cache: dict[str, int] = {}
        self._pool = None

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def _map(self, g: Genotype) -> Formula | None:
        try:
            return map_genotype(g, self.grammar)
        except MappingIncomplete:
            return None

    def _base_fitness(self, formulas: list) -> list[int]:
        texts = sorted({f.render() for f in formulas if f is not None and f.render() not in self.cache})
        if texts:
            if self.evo.workers > 1:
                if self._pool is None:
                    ev = self.evaluator
                    self._pool = ProcessPoolExecutor(
                        self.evo.workers, initializer=_init_worker, initargs=(ev.sets, ev.fc, ev.cfg)
                    )
                scores = list(self._pool.map(_worker_fitness, texts, chunksize=8))
            else:
                from .formula import parse_formula

                scores = [self.evaluator.fitness(parse_formula(t)) for t in texts]
            self.cache.update(zip(texts, scores))
        none_score = self.evaluator.fitness(None)
        return [none_score if f is None else self.cache[f.render()] for f in formulas]

    def evaluate(self, pop: Sequence[Genotype]):
        formulas = [self._map(g) for g in pop]
        scores = self._base_fitness(formulas)
        if self.penalty is not None:
            scores = [s + (self.penalty(f) if f is not None else 0) for s, f in zip(scores, formulas)]
        return formulas, scores

    def initial(self) -> list[Genotype]:
        return [random_genotype(rng_for(self.evo.seed, *self.prefix, 0, s), self.evo)
                for s in range(self.evo.population)]

    def next_generation(self, gen: int, pop, scores) -> list[Genotype]:
        order = sorted(range(len(pop)), key=lambda n: (scores[n], n))
        nxt = [pop[n] for n in order[: self.evo.elitism]]
        for slot in range(self.evo.elitism, self.evo.population):
            nxt.append(breed(rng_for(self.evo.seed, *self.prefix, gen, slot), pop, scores, self.evo))
        return nxt

    def run(self, generations: int, pop: list[Genotype] | None = None, first_gen: int = 0,
            history: RunHistory | None = None) -> RunHistory:
        """Evaluate and breed for ``generations`` generations.

        The returned history holds the last evaluated population; breeding
        after the final evaluation is skipped.
        """
        history = history or RunHistory()
        pop = pop if pop is not None else self.initial()
        prev_best = None
        for g in range(first_gen, first_gen + generations):
            formulas, scores = self.evaluate(pop)
            best = min(range(len(pop)), key=lambda n: (scores[n], n))
            if prev_best is not None and self.evo.elitism >= 1 and scores[best] > prev_best:
                raise AssertionError(f"best fitness rose from {prev_best} to {scores[best]} at generation {g}")
            prev_best = scores[best]
            f = formulas[best]
            history.records.append(GenerationRecord(
                g, scores[best], sum(scores) / len(scores), f.render() if f is not None else "",
            ))
            history.best, history.best_fitness = f, scores[best]
            history.population, history.fitnesses = list(pop), list(scores)
            if g + 1 < first_gen + generations:
                pop = self.next_generation(g + 1, pop, scores)
        return history


def evolve_tests(corpus: Sequence[MessageSet], evo: EvoConfig = EvoConfig(), fc: FitnessConfig = FitnessConfig(),
                 cfg: AnalysisConfig = AnalysisConfig(), evaluator: FitnessEvaluator | None = None) -> RunHistory:
    if not corpus or not sum(len(ms) for ms in corpus):
        raise InvalidConfig("corpus is empty")
    ev = evaluator or FitnessEvaluator(corpus, fc, cfg)
    engine = GrammaticalEvolution(evo, ev)
    try:
        return engine.run(evo.generations)
    finally:
        engine.close()


# -- scenarios and co-evolution --------------------------------------------------


def deems_schedulable(f: Formula, ms: MessageSet, cfg: AnalysisConfig = AnalysisConfig()) -> bool:
    for m in ms:
        out = eval_formula(f, ms, m.id, cfg)
        if out.divergent or out.value > m.d:
            return False
    return True


def scenario_fitness(ms: MessageSet, scenario: Scenario, tests: Sequence[Formula],
                     fc: FitnessConfig = FitnessConfig(), cfg: AnalysisConfig = AnalysisConfig()) -> int:
    """Number of candidate tests that accept ``ms`` although ``scenario`` shows a miss."""
    if not simulate(ms, scenario).missed:
        return 0
    return sum(1 for f in tests if deems_schedulable(f, ms, cfg))


def scenario_horizon(ms: MessageSet) -> int:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", HorizonClamped)
        full = default_horizon(ms)
    return min(full, 3 * max(m.t for m in ms) + max(m.j for m in ms))


def random_scenario(rng: np.random.Generator, ms: MessageSet) -> Scenario:
    return Scenario(
        tuple(int(rng.integers(0, m.t)) for m in ms),
        tuple(int(rng.integers(0, m.j + 1)) for m in ms),
        tuple(int(rng.integers(0, m.j + 1)) for m in ms),
        scenario_horizon(ms),
    )


def lateness(ms: MessageSet, scenario: Scenario) -> int:
    """Largest observed (response - deadline); guides the scenario search."""
    res = simulate(ms, scenario)
    worst = [w - m.d for m in ms if (w := res.watermarks[m.id]) is not None]
    return max(worst, default=-(10**9))


@dataclass(frozen=True)
class PooledScenario:
    set_index: int
    scenario: Scenario


def _breed_scenario(rng, pool, keys, sets, evo: EvoConfig) -> PooledScenario:
    def pick():
        idx = rng.integers(0, len(pool), evo.tournament)
        best = int(idx[0])
        for i in idx[1:]:
            if keys[i] > keys[best]:
                best = int(i)
        return pool[best]

    a, b = pick(), pick()
    ms = sets[a.set_index]
    offs, fj, lj = list(a.scenario.offsets), list(a.scenario.first_jitter), list(a.scenario.later_jitter)
    n = len(offs)
    if b.set_index == a.set_index and n > 1 and rng.random() < evo.crossover_rate:
        point = int(rng.integers(1, n))
        offs[point:] = b.scenario.offsets[point:]
        fj[point:] = b.scenario.first_jitter[point:]
        lj[point:] = b.scenario.later_jitter[point:]
    rate = max(evo.mutation_rate, 1.0 / n)
    for i, m in enumerate(ms):
        if rng.random() < rate:
            offs[i] = int(rng.integers(0, m.t))
            fj[i] = int(rng.integers(0, m.j + 1))
            lj[i] = int(rng.integers(0, m.j + 1))
    return PooledScenario(a.set_index, Scenario(tuple(offs), tuple(fj), tuple(lj), a.scenario.horizon))


@dataclass
class CoevolveResult:
    tests: list  # best formulas, best first
    test_fitness: list
    scenarios: list  # PooledScenario, hardest first
    scenario_scores: list
    history: list = field(default_factory=list)  # (round, phase, generation, best, mean, best_text)
    sets: list = field(default_factory=list)


def _top_unique(formulas, scores, n_top):
    order = sorted(range(len(formulas)), key=lambda n: (scores[n], n))
    tests, fits = [], []
    for n in order:
        if formulas[n] is not None and formulas[n] not in tests:
            tests.append(formulas[n])
            fits.append(scores[n])
            if len(tests) == n_top:
                break
    return tests, fits


def coevolve(params: GenParams, evo: EvoConfig = EvoConfig(), fc: FitnessConfig = FitnessConfig(),
             epochs: tuple[int, int] = (5, 5), rounds: int = 1, cfg: AnalysisConfig = AnalysisConfig(),
             top_n: int = 5, scenario_population: int = 40) -> CoevolveResult:
    """Alternate test evolution and counterexample-scenario evolution.

    A test's fitness is its corpus fitness plus ``p_div`` for every pooled
    scenario that refutes it. Scenarios are ranked by how many of the current
    top tests they refute, ties broken by their worst deadline overshoot.
    """
    e_t, e_s = epochs
    if rounds < 0 or e_t < 0 or e_s < 0 or top_n < 1 or scenario_population < 2:
        raise InvalidConfig("rounds/epochs must be >= 0, top_n >= 1, scenario_population >= 2")
    if evo.elitism >= scenario_population:
        raise InvalidConfig("elitism must be smaller than the scenario population")
    sets = generate_sets(params)
    if not sets:
        raise InvalidConfig("corpus parameters produce no message sets")
    ev = FitnessEvaluator(sets, fc, cfg)
    sim_cache: dict = {}
    verdict_cache: dict = {}

    def missed(ps: PooledScenario) -> bool:
        key = (ps.set_index, ps.scenario)
        if key not in sim_cache:
            sim_cache[key] = simulate(sets[ps.set_index], ps.scenario).missed
        return sim_cache[key]

    def accepts(f: Formula, set_index: int) -> bool:
        key = (f.render(), set_index)
        if key not in verdict_cache:
            verdict_cache[key] = deems_schedulable(f, sets[set_index], cfg)
        return verdict_cache[key]

    pool = []
    for slot in range(scenario_population):
        rng = rng_for(evo.seed, 0, 1, 0, slot)
        s = int(rng.integers(0, len(sets)))
        pool.append(PooledScenario(s, random_scenario(rng, sets[s])))

    def penalty(f: Formula) -> int:
        return fc.p_div * sum(1 for ps in pool if missed(ps) and accepts(f, ps.set_index))

    engine = GrammaticalEvolution(evo, ev)

    def score_tests(pop):
        formulas, base = engine.evaluate(pop)
        return formulas, [b + (penalty(f) if f is not None else 0) for b, f in zip(base, formulas)]

    history = []
    test_pop = engine.initial()
    try:
        formulas, scores = score_tests(test_pop)
        for rnd in range(1, rounds + 1):
            if e_t:
                eng = GrammaticalEvolution(evo, ev, penalty=penalty, stream_prefix=(rnd, 0))
                eng.cache = engine.cache
                h = eng.run(e_t, pop=test_pop)
                test_pop = h.population
                history.extend((rnd, "tests", r.generation, r.best_fitness, r.mean_fitness, r.best_formula)
                               for r in h.records)
                formulas, scores = [eng._map(g) for g in test_pop], h.fitnesses
            top, _ = _top_unique(formulas, scores, top_n)
            for g in range(e_s):
                keys = [(sum(1 for f in top if accepts(f, ps.set_index)) if missed(ps) else 0,
                         lateness(sets[ps.set_index], ps.scenario)) for ps in pool]
                best = min(range(len(pool)), key=lambda n: (-keys[n][0], -keys[n][1], n))
                history.append((rnd, "scenarios", g, keys[best][0], sum(k[0] for k in keys) / len(keys),
                                f"set={pool[best].set_index}"))
                if g + 1 == e_s:
                    break
                order = sorted(range(len(pool)), key=lambda n: (-keys[n][0], -keys[n][1], n))
                nxt = [pool[n] for n in order[: evo.elitism]]
                for slot in range(evo.elitism, len(pool)):
                    nxt.append(_breed_scenario(rng_for(evo.seed, rnd, 1, g + 1, slot), pool, keys, sets, evo))
                pool = nxt
            formulas, scores = score_tests(test_pop)
    finally:
        engine.close()

    tests, tfit = _top_unique(formulas, scores, top_n)
    skeys = [(sum(1 for f in tests if accepts(f, ps.set_index)) if missed(ps) else 0) for ps in pool]
    sorder = sorted(range(len(pool)), key=lambda n: (-skeys[n], n))
    return CoevolveResult(tests, tfit, [pool[n] for n in sorder], [skeys[n] for n in sorder], history, sets)


def random_scenario_search(ms: MessageSet, tests: Sequence[Formula], tries: int, seed: int = 0,
                           cfg: AnalysisConfig = AnalysisConfig()):
    """First of ``tries`` random scenarios (critical instant first) refuting a test, or None."""
    candidates = [critical_instant_scenario(ms, scenario_horizon(ms))]
    for n in range(tries):
        if n:
            candidates = [random_scenario(rng_for(seed, 2, n), ms)]
        for sc in candidates:
            if scenario_fitness(ms, sc, tests, cfg=cfg) >= 1:
                return sc
    return None

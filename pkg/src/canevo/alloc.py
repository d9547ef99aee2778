"""Evolutionary task allocation with schedulability-based fitness.

A chromosome assigns each task to a node. Tasks are analysed per node with
preemptive fixed-priority response-time analysis; edges whose endpoints sit
on different nodes become CAN frames released with the sender's response
time as jitter and are analysed with the exact bus test.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

from .analysis import rta_exact
from .errors import InvalidChromosome, InvalidConfig
from .evolve import EvoConfig, rng_for
from .model import AnalysisConfig, Message, Platform, TaskGraph, validate_message_set

COUNT = "count"
BREAKDOWN = "breakdown"


@dataclass(frozen=True)
class AllocFitness:
    kind: str
    value: int | Fraction | float

    def key(self):
        """Sort key; smaller is better for both kinds."""
        return -self.value if self.kind == COUNT else self.value


@dataclass(frozen=True)
class AllocOutcome:
    task_response: dict  # task id -> response time, None if it misses its deadline
    task_ok: dict
    edge_ok: dict  # frame id -> bool

    @property
    def count(self) -> int:
        return sum(self.task_ok.values()) + sum(self.edge_ok.values())

    @property
    def fully_schedulable(self) -> bool:
        return all(self.task_ok.values()) and all(self.edge_ok.values())


def check_chromosome(tg: TaskGraph, platform: Platform, genes: Sequence[int]) -> tuple[int, ...]:
    genes = tuple(int(g) for g in genes)
    if len(genes) != len(tg.tasks):
        raise InvalidChromosome(f"chromosome has {len(genes)} genes for {len(tg.tasks)} tasks")
    bad = [g for g in genes if not 0 <= g < platform.node_count]
    if bad:
        raise InvalidChromosome(f"node indices {bad} outside [0, {platform.node_count})")
    return genes


def _scaled(c: int, speed: Fraction) -> int:
    # ceil(c / speed) with exact rationals
    return -((-c * speed.denominator) // speed.numerator)


def _node_rta(tasks, costs, cfg: AnalysisConfig):
    """Preemptive fixed-priority RTA of the tasks sharing one node."""
    out = {}
    ordered = sorted(tasks, key=lambda t: t.priority)
    for pos, task in enumerate(ordered):
        hp = ordered[:pos]
        c = costs[task.id]
        r = c
        result = None
        for _ in range(cfg.iter_limit):
            nr = c + sum(-(-r // k.t) * costs[k.id] for k in hp)
            if nr > task.d:
                break
            if nr == r:
                result = r
                break
            r = nr
        out[task.id] = result
    return out


def analyse_allocation(tg: TaskGraph, platform: Platform, genes: Sequence[int],
                       cfg: AnalysisConfig = AnalysisConfig(), speed: Fraction = Fraction(1)) -> AllocOutcome:
    genes = check_chromosome(tg, platform, genes)
    node_of = {t.id: g for t, g in zip(tg.tasks, genes)}
    costs = {t.id: _scaled(t.wcet, speed) for t in tg.tasks}
    response = {}
    for node in range(platform.node_count):
        on_node = [t for t in tg.tasks if node_of[t.id] == node]
        response.update(_node_rta(on_node, costs, cfg))
    task_ok = {t.id: response[t.id] is not None for t in tg.tasks}
    deadline = {t.id: t.d for t in tg.tasks}

    edge_ok = {}
    frames = []
    for e in tg.edges:
        if node_of[e.src] == node_of[e.dst]:
            edge_ok[e.frame.id] = True
            continue
        sender_r = response[e.src]
        # an unschedulable sender still loads the bus, with its deadline as jitter bound
        jitter = sender_r if sender_r is not None else deadline[e.src]
        frames.append((Message(e.frame.id, e.frame.priority, _scaled(e.frame.c, speed),
                               e.frame.t, e.frame.d, jitter), sender_r is not None))
    if frames:
        bus = validate_message_set(m for m, _ in frames)
        for m, sender_ok in frames:
            edge_ok[m.id] = sender_ok and rta_exact(bus, m.id, cfg, stop_at_deadline=True).meets(m.d)
    return AllocOutcome(response, task_ok, edge_ok)


def allocation_fitness(tg: TaskGraph, platform: Platform, genes: Sequence[int],
                       cfg: AnalysisConfig = AnalysisConfig()) -> AllocFitness:
    """Number of schedulable tasks plus schedulable edges."""
    return AllocFitness(COUNT, analyse_allocation(tg, platform, genes, cfg).count)


def schedulable_at(tg: TaskGraph, platform: Platform, genes: Sequence[int], speed: Fraction,
                   cfg: AnalysisConfig = AnalysisConfig()) -> bool:
    return analyse_allocation(tg, platform, genes, cfg, Fraction(speed)).fully_schedulable


def breakdown_frequency(tg: TaskGraph, platform: Platform, genes: Sequence[int],
                        cfg: AnalysisConfig = AnalysisConfig(), resolution: Fraction = Fraction(1, 1024),
                        f_max: Fraction = Fraction(16)) -> AllocFitness:
    """Least speed factor on the ``resolution`` grid making the system fully schedulable.

    Execution and transmission times scale as ``ceil(C / f)``. Returns
    ``math.inf`` when even ``f_max`` is not enough.
    """
    check_chromosome(tg, platform, genes)
    resolution, f_max = Fraction(resolution), Fraction(f_max)
    steps = math.floor(f_max / resolution)
    if steps < 1:
        raise InvalidConfig("f_max must be at least one resolution step")

    def ok(k):
        return schedulable_at(tg, platform, genes, k * resolution, cfg)

    if not ok(steps):
        return AllocFitness(BREAKDOWN, math.inf)
    lo, hi = 0, steps  # invariant: not ok(lo) (or lo == 0), ok(hi)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return AllocFitness(BREAKDOWN, hi * resolution)


@dataclass
class AllocHistory:
    records: list = field(default_factory=list)  # (generation, best value, mean value, genes)
    best: tuple = ()
    best_fitness: AllocFitness | None = None


def evolve_allocation(tg: TaskGraph, platform: Platform, evo: EvoConfig = EvoConfig(), fitness_kind: str = COUNT,
                      cfg: AnalysisConfig = AnalysisConfig()) -> AllocHistory:
    """Generational GA over task-to-node vectors with elitism.

    Offspring come from tournament selection and one-point crossover, then
    have one uniformly chosen gene redrawn.
    """
    if fitness_kind not in (COUNT, BREAKDOWN):
        raise InvalidConfig(f"unknown fitness kind {fitness_kind!r}")
    n_genes = len(tg.tasks)
    if n_genes == 0:
        raise InvalidConfig("task graph has no tasks")
    cache: dict = {}

    def fitness(genes) -> AllocFitness:
        if genes not in cache:
            if fitness_kind == COUNT:
                cache[genes] = allocation_fitness(tg, platform, genes, cfg)
            else:
                cache[genes] = breakdown_frequency(tg, platform, genes, cfg)
        return cache[genes]

    def random_genes(rng):
        return tuple(int(g) for g in rng.integers(0, platform.node_count, n_genes))

    pop = [random_genes(rng_for(evo.seed, 3, 0, s)) for s in range(evo.population)]
    history = AllocHistory()
    prev = None
    for gen in range(evo.generations):
        fits = [fitness(g) for g in pop]
        keys = [f.key() for f in fits]
        order = sorted(range(len(pop)), key=lambda n: (keys[n], n))
        best = order[0]
        if prev is not None and evo.elitism >= 1 and keys[best] > prev:
            raise AssertionError(f"best allocation fitness worsened at generation {gen}")
        prev = keys[best]
        finite = [float(f.value) for f in fits if f.value != math.inf]
        mean = sum(finite) / len(finite) if finite else math.inf
        history.records.append((gen, fits[best].value, mean, pop[best]))
        history.best, history.best_fitness = pop[best], fits[best]
        if gen + 1 == evo.generations:
            break
        nxt = [pop[n] for n in order[: evo.elitism]]
        for slot in range(evo.elitism, evo.population):
            rng = rng_for(evo.seed, 3, gen + 1, slot)

            def pick():
                idx = rng.integers(0, len(pop), evo.tournament)
                return pop[min((int(i) for i in idx), key=lambda i: (keys[i], i))]

            a, b = pick(), pick()
            child = list(a)
            if n_genes > 1 and rng.random() < evo.crossover_rate:
                point = int(rng.integers(1, n_genes))
                child[point:] = b[point:]
            child[int(rng.integers(0, n_genes))] = int(rng.integers(0, platform.node_count))
            nxt.append(tuple(child))
        pop = nxt
    return history


def exhaustive_best(tg: TaskGraph, platform: Platform, cfg: AnalysisConfig = AnalysisConfig()):
    """Brute-force maximum Count over every allocation (small instances only)."""
    from itertools import product

    best, best_genes = -1, None
    for genes in product(range(platform.node_count), repeat=len(tg.tasks)):
        c = allocation_fitness(tg, platform, genes, cfg).value
        if c > best:
            best, best_genes = c, genes
    return best, best_genes

"""Discrete-event simulation of non-preemptive fixed-priority bus arbitration."""

from __future__ import annotations

import csv
import heapq
import io
import math
import warnings
from dataclasses import dataclass, field

from .errors import HorizonTooLarge, MalformedInput
from .model import MessageSet

HORIZON_CAP = 10**7


class HorizonClamped(UserWarning):
    pass


@dataclass(frozen=True)
class Scenario:
    """Release pattern; tuples are aligned with the set's priority order."""

    offsets: tuple[int, ...]
    first_jitter: tuple[int, ...]
    later_jitter: tuple[int, ...]
    horizon: int

    def check(self, ms: MessageSet) -> None:
        n = len(ms)
        if not (len(self.offsets) == len(self.first_jitter) == len(self.later_jitter) == n):
            raise MalformedInput(f"scenario describes {len(self.offsets)} messages, set has {n}")
        if self.horizon < 1:
            raise MalformedInput("scenario horizon must be >= 1")
        for m, o, fj, lj in zip(ms, self.offsets, self.first_jitter, self.later_jitter):
            if not 0 <= o < m.t:
                raise MalformedInput(f"offset {o} of {m.id} outside [0, {m.t})")
            if not (0 <= fj <= m.j and 0 <= lj <= m.j):
                raise MalformedInput(f"jitter of {m.id} outside [0, {m.j}]")


@dataclass(frozen=True)
class Miss:
    msg_id: str
    instance: int
    release: int


@dataclass
class SimResult:
    watermarks: dict  # id -> worst observed response, None if no instance completed
    instances: dict  # id -> completed instances
    first_miss: Miss | None = None
    trace: list = field(default_factory=list)  # (id, instance, release, enqueue, start, finish)

    @property
    def missed(self) -> bool:
        return self.first_miss is not None


def critical_instant_scenario(ms: MessageSet, horizon: int) -> Scenario:
    n = len(ms)
    return Scenario((0,) * n, tuple(m.j for m in ms), (0,) * n, horizon)


def default_horizon(ms: MessageSet, scenario: Scenario | None = None) -> int:
    """Two hyperperiods plus the largest offset and jitter, clamped to 10^7."""
    if not len(ms):
        return 1
    hyper = math.lcm(*(m.t for m in ms))
    max_o = max(scenario.offsets) if scenario is not None else 0
    max_j = max(m.j for m in ms)
    h = 2 * hyper + max_o + max_j
    if h > HORIZON_CAP:
        warnings.warn(f"hyperperiod {hyper} too long, horizon clamped to {HORIZON_CAP}", HorizonClamped)
        return HORIZON_CAP
    return h


def simulate(ms: MessageSet, scenario: Scenario, horizon_cap: int = HORIZON_CAP,
             keep_trace: bool = False) -> SimResult:
    """Run the bus from time 0 to ``scenario.horizon``.

    Response times are measured from the nominal release, so jitter counts
    toward them. Frames still transmitting at the horizon are not counted.
    """
    if scenario.horizon > horizon_cap:
        raise HorizonTooLarge(f"horizon {scenario.horizon} exceeds cap {horizon_cap}")
    scenario.check(ms)
    horizon = scenario.horizon
    msgs = ms.messages
    watermarks = {m.id: None for m in msgs}
    counts = {m.id: 0 for m in msgs}
    misses = []
    trace = []

    def nominal(i, j):
        return scenario.offsets[i] + j * msgs[i].t

    def enqueue_time(i, j):
        return nominal(i, j) + (scenario.first_jitter[i] if j == 0 else scenario.later_jitter[i])

    arrivals = []  # (enqueue, priority, instance, index)
    for i, m in enumerate(msgs):
        # instance 0 may carry more jitter than instance 1, so both are seeded
        for j in (0, 1):
            e = enqueue_time(i, j)
            if e <= horizon:
                heapq.heappush(arrivals, (e, m.priority, j, i))
    ready = []  # (priority, enqueue, instance, index)
    now = 0
    while True:
        while arrivals and arrivals[0][0] <= now:
            e, p, j, i = heapq.heappop(arrivals)
            heapq.heappush(ready, (p, e, j, i))
            if j >= 1:
                e2 = enqueue_time(i, j + 1)
                if e2 <= horizon:
                    heapq.heappush(arrivals, (e2, p, j + 1, i))
        if not ready:
            if not arrivals:
                break
            now = arrivals[0][0]
            continue
        p, e, j, i = heapq.heappop(ready)
        m = msgs[i]
        finish = now + m.c
        if finish > horizon:
            heapq.heappush(ready, (p, e, j, i))
            break
        rel = nominal(i, j)
        resp = finish - rel
        counts[m.id] += 1
        wm = watermarks[m.id]
        watermarks[m.id] = resp if wm is None else max(wm, resp)
        if resp > m.d:
            misses.append((rel + m.d, p, m.id, j, rel))
        if keep_trace:
            trace.append((m.id, j, rel, e, now, finish))
        now = finish
    # frames left waiting whose deadline already passed are certain misses
    for p, e, j, i in ready:
        rel = nominal(i, j)
        if horizon > rel + msgs[i].d:
            misses.append((rel + msgs[i].d, p, msgs[i].id, j, rel))
    first = None
    if misses:
        _, _, mid, j, rel = min(misses)
        first = Miss(mid, j, rel)
    return SimResult(watermarks, counts, first, trace)


def format_scenario_csv(ms: MessageSet, sc: Scenario, header=()) -> str:
    buf = io.StringIO()
    for line in header:
        buf.write(f"# {line}\n")
    buf.write(f"# horizon={sc.horizon}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "offset", "first_jitter", "later_jitter"])
    for m, o, fj, lj in zip(ms, sc.offsets, sc.first_jitter, sc.later_jitter):
        w.writerow([m.id, o, fj, lj])
    return buf.getvalue()


def parse_scenario_csv(text: str, ms: MessageSet, horizon: int) -> Scenario:
    rows = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    reader = csv.DictReader(rows)
    if reader.fieldnames is None or [h.strip() for h in reader.fieldnames] != [
        "id", "offset", "first_jitter", "later_jitter"
    ]:
        raise MalformedInput("scenario header must be id,offset,first_jitter,later_jitter")
    by_id = {}
    try:
        for row in reader:
            by_id[row["id"].strip()] = (int(row["offset"]), int(row["first_jitter"]), int(row["later_jitter"]))
    except (TypeError, ValueError) as exc:
        raise MalformedInput(f"scenario row: {exc}") from None
    missing = [mid for mid in ms.ids if mid not in by_id]
    if missing:
        raise MalformedInput(f"scenario lacks messages {missing}")
    sc = Scenario(
        tuple(by_id[mid][0] for mid in ms.ids),
        tuple(by_id[mid][1] for mid in ms.ids),
        tuple(by_id[mid][2] for mid in ms.ids),
        horizon,
    )
    sc.check(ms)
    return sc

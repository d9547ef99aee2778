"""Response-time tests for CAN message sets.

Three sufficient tests (the fixed-point "S1" recurrence and two closed-form
relaxations of it) and the exact busy-period analysis used as the reference
response time.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

from .model import AnalysisConfig, Message, MessageSet, check_int64

CONVERGED = "converged"
EXCEEDED_CAP = "exceeded_cap"
EXCEEDED_DEADLINE = "exceeded_deadline"

TESTS = ("exact", "s1", "cf-d", "cf-s")


@dataclass(frozen=True)
class RtVerdict:
    kind: str
    r: int | None = None
    iterations: int = 0

    @property
    def converged(self) -> bool:
        return self.kind == CONVERGED

    def meets(self, deadline: int) -> bool:
        return self.kind == CONVERGED and self.r <= deadline


def _ceil_div(a: int, b: int) -> int:
    return -((-a) // b)


def blocking_term(ms: MessageSet, msg_id: str) -> int:
    """Longest lower-priority frame that may already hold the bus."""
    return max((m.c for m in ms.lp(msg_id)), default=0)


def rta_s1(ms: MessageSet, msg_id: str, cfg: AnalysisConfig = AnalysisConfig(),
           stop_at_deadline: bool = False) -> RtVerdict:
    """Fixed-point iteration of the S1 recurrence starting from J + C.

    Floor division is Python's (toward minus infinity), which the recurrence
    needs because the numerator is negative for early iterates when J_k is 0.
    """
    m = ms[msg_id]
    hp = ms.hp(msg_id)
    b = blocking_term(ms, msg_id)
    cap = cfg.cap(m)
    own = m.j + m.c + max(b, m.c)
    r = m.j + m.c
    for it in range(1, cfg.iter_limit + 1):
        nxt = own
        for k in hp:
            nxt += ((r - m.j - m.c + k.j) // k.t + 1) * k.c
        check_int64(nxt, f"S1 iterate for {msg_id}")
        if nxt == r:
            return RtVerdict(CONVERGED, r, it)
        if nxt > cap:
            return RtVerdict(EXCEEDED_CAP, None, it)
        if stop_at_deadline and nxt > m.d:
            return RtVerdict(EXCEEDED_DEADLINE, nxt, it)
        r = nxt
    return RtVerdict(EXCEEDED_CAP, None, cfg.iter_limit)


def rta_closed_d(ms: MessageSet, msg_id: str) -> RtVerdict:
    """S1 with the response time in the numerator replaced by the deadline."""
    m = ms[msg_id]
    b = blocking_term(ms, msg_id)
    r = m.j + m.c + max(b, m.c)
    for k in ms.hp(msg_id):
        r += ((m.d - m.j - m.c + k.j) // k.t + 1) * k.c
    return RtVerdict(CONVERGED, check_int64(r, f"closed-form bound for {msg_id}"), 1)


def rta_closed_simple(ms: MessageSet, msg_id: str) -> RtVerdict:
    """Like :func:`rta_closed_d` without subtracting J_i + C_i in the numerator."""
    m = ms[msg_id]
    b = blocking_term(ms, msg_id)
    r = m.j + m.c + max(b, m.c)
    for k in ms.hp(msg_id):
        r += ((m.d + k.j) // k.t + 1) * k.c
    return RtVerdict(CONVERGED, check_int64(r, f"closed-form bound for {msg_id}"), 1)


def busy_period(ms: MessageSet, msg_id: str, cfg: AnalysisConfig = AnalysisConfig()):
    """Length of the level-i busy period and the iterations spent, or None.

    None means the iteration did not settle within ``cfg.iter_limit`` steps
    or the level-i utilisation is at least 1 (unbounded busy period).
    """
    m = ms[msg_id]
    hep = ms.hp(msg_id) + [m]
    if sum(Fraction(k.c, k.t) for k in hep) >= 1:
        return None, 0
    b = blocking_term(ms, msg_id)
    t = m.c
    for it in range(1, cfg.iter_limit + 1):
        nt = b + sum(_ceil_div(t + k.j, k.t) * k.c for k in hep)
        check_int64(nt, f"busy period for {msg_id}")
        if nt == t:
            return t, it
        t = nt
    return None, cfg.iter_limit


def rta_exact(ms: MessageSet, msg_id: str, cfg: AnalysisConfig = AnalysisConfig(),
              stop_at_deadline: bool = False) -> RtVerdict:
    """Exact busy-period analysis for non-preemptive fixed-priority CAN.

    Every instance q of the message inside the level-i busy period is
    examined. The queuing delay w(q) counts higher-priority releases in
    ``[0, w + tau_bit)``: a frame released up to one bit time after another
    frame's arbitration point still wins the bus. With integer ticks and
    ``tau_bit = 1`` the interference term equals ``floor((w + J_k)/T_k) + 1``.
    """
    m = ms[msg_id]
    hp = ms.hp(msg_id)
    b = blocking_term(ms, msg_id)
    cap = cfg.cap(m)
    t, iters = busy_period(ms, msg_id, cfg)
    if t is None:
        return RtVerdict(EXCEEDED_CAP, None, iters)
    n_inst = _ceil_div(t + m.j, m.t)
    worst = None
    for q in range(n_inst):
        w = b + q * m.c
        for it in range(1, cfg.iter_limit + 1):
            nw = b + q * m.c
            for k in hp:
                nw += _ceil_div(w + k.j + cfg.tau_bit, k.t) * k.c
            check_int64(nw, f"queuing delay for {msg_id}")
            if nw == w:
                break
            w = nw
        else:
            return RtVerdict(EXCEEDED_CAP, None, iters + cfg.iter_limit)
        iters += it
        r = m.j + w - q * m.t + m.c
        if r > cap:
            return RtVerdict(EXCEEDED_CAP, None, iters)
        if stop_at_deadline and r > m.d:
            return RtVerdict(EXCEEDED_DEADLINE, r, iters)
        worst = r if worst is None else max(worst, r)
    return RtVerdict(CONVERGED, worst, iters)


def run_test(name: str, ms: MessageSet, msg_id: str, cfg: AnalysisConfig = AnalysisConfig()) -> RtVerdict:
    if name == "exact":
        return rta_exact(ms, msg_id, cfg)
    if name == "s1":
        return rta_s1(ms, msg_id, cfg)
    if name == "cf-d":
        return rta_closed_d(ms, msg_id)
    if name == "cf-s":
        return rta_closed_simple(ms, msg_id)
    raise ValueError(f"unknown test {name!r}")


@dataclass(frozen=True)
class SetReport:
    ids: tuple[str, ...]
    deadlines: tuple[int, ...]
    verdicts: dict = field(default_factory=dict)  # test name -> tuple of RtVerdict

    def response_times(self, test: str) -> tuple:
        return tuple(v.r for v in self.verdicts[test])

    def set_schedulable(self, test: str) -> bool:
        return all(v.meets(d) for v, d in zip(self.verdicts[test], self.deadlines))


def analyze_set(ms: MessageSet, cfg: AnalysisConfig = AnalysisConfig(), tests=TESTS) -> SetReport:
    verdicts = {name: tuple(run_test(name, ms, m.id, cfg) for m in ms) for name in tests}
    return SetReport(tuple(ms.ids), tuple(m.d for m in ms), verdicts)


def schedulable(ms: MessageSet, test: str = "exact", cfg: AnalysisConfig = AnalysisConfig()) -> bool:
    return analyze_set(ms, cfg, tests=(test,)).set_schedulable(test)


def message_schedulable(ms: MessageSet, m: Message, cfg: AnalysisConfig = AnalysisConfig()) -> bool:
    return rta_exact(ms, m.id, cfg, stop_at_deadline=True).meets(m.d)

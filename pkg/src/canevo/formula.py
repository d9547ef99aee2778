"""Response-time formula IR.

A formula has the fixed shape::

    R_i = base + SUM_{k in hp(i)} (floor(num / T_k) + k01) * C_k

``base`` combines J_i, C_i, B_i with ``+``/``max``; ``num`` combines the
per-message and per-interferer variables with ``+ - min max``. When ``num``
mentions R_i the formula is solved by fixed-point iteration.

Surface syntax is an S-expression, e.g. ``(rt (+ Ji Ci) (isum (+ Di Jk) 1))``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .analysis import blocking_term
from .errors import ArithmeticOverflow, FormulaSyntaxError, MissingIsum, UnknownAtom
from .model import INT64_MAX, AnalysisConfig, MessageSet, check_int64

BASE_ATOMS = ("Ji", "Ci", "Bi")
BASE_OPS = ("+", "max")
NUM_ATOMS = ("Ri", "Di", "Ji", "Ci", "Bi", "Ti", "Jk", "Ck", "Dk", "Tk")
NUM_OPS = ("+", "-", "min", "max")


@dataclass(frozen=True)
class Var:
    name: str

    def render(self) -> str:
        return self.name


@dataclass(frozen=True)
class Bin:
    op: str
    a: "Node"
    b: "Node"

    def render(self) -> str:
        return f"({self.op} {self.a.render()} {self.b.render()})"


Node = Var | Bin


def atoms(node: Node) -> set[str]:
    if isinstance(node, Var):
        return {node.name}
    return atoms(node.a) | atoms(node.b)


def leaf_count(node: Node) -> int:
    if isinstance(node, Var):
        return 1
    return leaf_count(node.a) + leaf_count(node.b)


@dataclass(frozen=True)
class Formula:
    base: Node
    num: Node
    k01: int = 1

    @property
    def self_referential(self) -> bool:
        return "Ri" in atoms(self.num)

    def render(self) -> str:
        return f"(rt {self.base.render()} (isum {self.num.render()} {self.k01}))"

    def __str__(self):
        return self.render()


def render_formula(f: Formula) -> str:
    return f.render()


# -- parsing -------------------------------------------------------------------

_TOKEN = re.compile(r"\(|\)|[^\s()]+")


def _tokenize(text: str):
    return [(m.group(0), m.start()) for m in _TOKEN.finditer(text)]


def _read(tokens, i):
    """Read one S-expression starting at tokens[i]; returns (tree, next index).

    Trees are ``(str, position)`` for atoms and ``(list, position)`` for lists.
    """
    if i >= len(tokens):
        raise FormulaSyntaxError("unexpected end of input", tokens[-1][1] if tokens else 0)
    tok, pos = tokens[i]
    if tok == ")":
        raise FormulaSyntaxError("unexpected ')'", pos)
    if tok != "(":
        return (tok, pos), i + 1
    items = []
    i += 1
    while True:
        if i >= len(tokens):
            raise FormulaSyntaxError("unclosed '('", pos)
        if tokens[i][0] == ")":
            return (items, pos), i + 1
        item, i = _read(tokens, i)
        items.append(item)


def _to_node(tree, allowed_atoms, allowed_ops, where) -> Node:
    val, pos = tree
    if isinstance(val, str):
        if val not in allowed_atoms:
            raise UnknownAtom(f"atom {val!r} not allowed in {where}", pos)
        return Var(val)
    if not val:
        raise FormulaSyntaxError("empty list", pos)
    head, hpos = val[0]
    if not isinstance(head, str) or head not in allowed_ops:
        raise FormulaSyntaxError(f"operator {head!r} not allowed in {where}", hpos)
    if len(val) != 3:
        raise FormulaSyntaxError(f"operator {head!r} takes two operands", hpos)
    return Bin(head, _to_node(val[1], allowed_atoms, allowed_ops, where),
               _to_node(val[2], allowed_atoms, allowed_ops, where))


def parse_formula(text: str) -> Formula:
    tokens = _tokenize(text)
    if not tokens:
        raise FormulaSyntaxError("empty formula", 0)
    tree, nxt = _read(tokens, 0)
    if nxt != len(tokens):
        raise FormulaSyntaxError("trailing tokens after formula", tokens[nxt][1])
    val, pos = tree
    if not isinstance(val, list) or not val or val[0][0] != "rt":
        raise FormulaSyntaxError("formula must start with '(rt'", pos)
    if len(val) != 3:
        raise FormulaSyntaxError("'rt' takes a base and an isum", pos)
    base = _to_node(val[1], BASE_ATOMS, BASE_OPS, "base")
    isum, ipos = val[2]
    if not isinstance(isum, list) or not isum or isum[0][0] != "isum":
        raise MissingIsum("second operand of 'rt' must be an (isum ...) node", ipos)
    if len(isum) != 3:
        raise FormulaSyntaxError("'isum' takes a numerator and a 0/1 constant", ipos)
    num = _to_node(isum[1], NUM_ATOMS, NUM_OPS, "isum numerator")
    k01, kpos = isum[2]
    if k01 not in ("0", "1"):
        raise UnknownAtom(f"isum constant must be 0 or 1, got {k01!r}", kpos)
    return Formula(base, num, int(k01))


# -- the four reference formulas ---------------------------------------------

_BUILTIN_TEXT = {
    1: "(rt (+ (+ (max Bi Ci) Ji) Ci) (isum (+ (- (- Ri Ji) Ci) Jk) 1))",
    2: "(rt (+ (+ (max Bi Ci) Ji) Ci) (isum (+ (- (- Di Ji) Ci) Jk) 1))",
    3: "(rt (+ (+ (max Bi Ci) Ji) Ci) (isum (+ Di Jk) 1))",
    # min(max(min(max(Ji,Ci),Jk), max(Jk, min(Ci,Ck) - Ci)) + Ri, Ti), no +1
    4: "(rt (+ (+ Ji Ci) Bi) (isum (min (+ (max (min (max Ji Ci) Jk) (max Jk (- (min Ci Ck) Ci))) Ri) Ti) 0))",
}


def builtin(eq: int) -> Formula:
    """Formula for the S1 recurrence (1), its closed forms (2, 3), or the evolved form (4)."""
    try:
        return parse_formula(_BUILTIN_TEXT[eq])
    except KeyError:
        raise ValueError(f"no built-in formula {eq}") from None


# -- scalar evaluation -------------------------------------------------------


@dataclass(frozen=True)
class EvalOutcome:
    value: int | None
    iterations: int = 1
    cause: str | None = None  # set when divergent: "cap", "iter_limit", "overflow"

    @property
    def divergent(self) -> bool:
        return self.value is None


def _eval_node(node: Node, env: dict) -> int:
    if isinstance(node, Var):
        return env[node.name]
    a = _eval_node(node.a, env)
    b = _eval_node(node.b, env)
    op = node.op
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "min":
        return a if a < b else b
    return a if a > b else b


def eval_formula(f: Formula, ms: MessageSet, msg_id: str, cfg: AnalysisConfig = AnalysisConfig()) -> EvalOutcome:
    """Evaluate ``f`` for one message, iterating to a fixed point if needed.

    Self-referential formulas start from J_i + C_i; the iteration reports
    Divergent once an iterate's magnitude passes ``cfg.cap`` or after
    ``cfg.iter_limit`` steps without repeating.
    """
    m = ms[msg_id]
    hp = ms.hp(msg_id)
    env = {"Ji": m.j, "Ci": m.c, "Bi": blocking_term(ms, msg_id), "Di": m.d, "Ti": m.t}
    base = _eval_node(f.base, env)
    k_envs = [dict(env, Jk=k.j, Ck=k.c, Dk=k.d, Tk=k.t) for k in hp]

    def step(r):
        total = base
        for ke, k in zip(k_envs, hp):
            ke["Ri"] = r
            num = check_int64(_eval_node(f.num, ke))
            total += (num // k.t + f.k01) * k.c
        return check_int64(total)

    try:
        if not f.self_referential:
            return EvalOutcome(step(0), 1)
        cap = cfg.cap(m)
        r = m.j + m.c
        for it in range(1, cfg.iter_limit + 1):
            nxt = step(r)
            if nxt == r:
                return EvalOutcome(r, it)
            if abs(nxt) > cap:
                return EvalOutcome(None, it, "cap")
            r = nxt
    except ArithmeticOverflow:
        return EvalOutcome(None, 0, "overflow")
    return EvalOutcome(None, cfg.iter_limit, "iter_limit")


# -- vectorised evaluation over a corpus ---------------------------------------


class CorpusEvaluator:
    """Evaluates formulas for every message of a corpus at once.

    Results match :func:`eval_formula` message for message; formulas whose
    intermediate values could leave int64 are routed through the scalar path.
    """

    def __init__(self, sets: Sequence[MessageSet], cfg: AnalysisConfig = AnalysisConfig()):
        self.sets = list(sets)
        self.cfg = cfg
        self.keys = [(s, m.id) for s, ms in enumerate(self.sets) for m in ms]
        per_msg = {n: [] for n in ("Ji", "Ci", "Bi", "Di", "Ti")}
        pair_owner, per_pair = [], {n: [] for n in ("Jk", "Ck", "Dk", "Tk")}
        idx = 0
        for ms in self.sets:
            for pos, m in enumerate(ms):
                per_msg["Ji"].append(m.j)
                per_msg["Ci"].append(m.c)
                per_msg["Bi"].append(blocking_term(ms, m.id))
                per_msg["Di"].append(m.d)
                per_msg["Ti"].append(m.t)
                for k in ms.messages[:pos]:
                    pair_owner.append(idx)
                    per_pair["Jk"].append(k.j)
                    per_pair["Ck"].append(k.c)
                    per_pair["Dk"].append(k.d)
                    per_pair["Tk"].append(k.t)
                idx += 1
        self.n = idx
        self.msg = {k: np.asarray(v, dtype=np.int64) for k, v in per_msg.items()}
        self.owner = np.asarray(pair_owner, dtype=np.int64)
        self.pair = {k: np.asarray(v, dtype=np.int64) for k, v in per_pair.items()}
        # owners are contiguous and increasing, so per-message sums are cumsum differences
        counts = np.bincount(self.owner, minlength=self.n) if len(self.owner) else np.zeros(self.n, np.int64)
        self.seg_end = np.cumsum(counts)
        self.seg_start = self.seg_end - counts
        self.cap = cfg.cap_factor * np.maximum(self.msg["Di"], self.msg["Ti"])
        self.r0 = self.msg["Ji"] + self.msg["Ci"]
        pair_env = {k: v[self.owner] for k, v in self.msg.items()}
        pair_env.update(self.pair)
        self.pair_env = pair_env
        mags = [int(np.abs(v).max()) for v in list(self.msg.values()) + list(self.pair.values()) if len(v)]
        if self.n:
            mags += [int(self.cap.max()), int(self.r0.max())]
        self.magnitude = max(mags + [1])
        self.max_hp = int((self.seg_end - self.seg_start).max()) if self.n else 0

    def __len__(self):
        return self.n

    def _safe(self, f: Formula) -> bool:
        bound_num = (leaf_count(f.num) + 1) * self.magnitude
        bound = leaf_count(f.base) * self.magnitude + self.max_hp * (bound_num + 1) * self.magnitude
        return bound < INT64_MAX // 4

    def _node(self, node: Node, env: dict):
        if isinstance(node, Var):
            return env[node.name]
        a = self._node(node.a, env)
        b = self._node(node.b, env)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "min":
            return np.minimum(a, b)
        return np.maximum(a, b)

    def _step(self, f: Formula, base, r):
        env = dict(self.pair_env)
        env["Ri"] = r[self.owner]
        contrib = (self._node(f.num, env) // self.pair["Tk"] + f.k01) * self.pair["Ck"]
        cs = np.concatenate(([0], np.cumsum(contrib)))
        return base + cs[self.seg_end] - cs[self.seg_start]

    def evaluate(self, f: Formula):
        """Return ``(values, divergent)`` arrays over all corpus messages.

        ``values`` is meaningful only where ``divergent`` is False.
        """
        if not self._safe(f):
            return self._evaluate_scalar(f)
        base = self._node(f.base, self.msg)
        base = np.broadcast_to(base, (self.n,)).astype(np.int64)
        if self.n == 0:
            return np.zeros(0, np.int64), np.zeros(0, bool)
        if not f.self_referential:
            return self._step(f, base, self.r0), np.zeros(self.n, bool)
        r = self.r0.copy()
        values = np.zeros(self.n, np.int64)
        divergent = np.zeros(self.n, bool)
        active = np.ones(self.n, bool)
        for _ in range(self.cfg.iter_limit):
            nxt = self._step(f, base, r)
            conv = active & (nxt == r)
            values[conv] = r[conv]
            active &= ~conv
            over = active & (np.abs(nxt) > self.cap)
            divergent |= over
            active &= ~over
            if not active.any():
                break
            r = np.where(active, nxt, r)
        divergent |= active
        return values, divergent

    def _evaluate_scalar(self, f: Formula):
        values = np.zeros(self.n, np.int64)
        divergent = np.zeros(self.n, bool)
        for n, (s, mid) in enumerate(self.keys):
            out = eval_formula(f, self.sets[s], mid, self.cfg)
            if out.divergent:
                divergent[n] = True
            else:
                values[n] = out.value
        return values, divergent


def read_formula_file(text: str) -> list[Formula]:
    """Parse a formula file: one S-expression per line, ``;`` starts a comment."""
    out = []
    for line in text.splitlines():
        line = line.split(";", 1)[0].strip()
        if line:
            out.append(parse_formula(line))
    return out

"""BNF grammar and grammatical-evolution genotype mapping.

Terminals of the grammar are S-expression tokens, so the word derived from a
genotype is directly readable by :func:`canevo.formula.parse_formula`.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import FormulaSyntaxError, InvalidConfig, MappingIncomplete
from .formula import Formula, parse_formula

DEFAULT_BNF = """
<rt>    ::= "(rt" <base> <isum> ")"
<base>  ::= <bterm> | "(+" <base> <bterm> ")" | "(max" <base> <bterm> ")"
<bterm> ::= "Ji" | "Ci" | "Bi"
<isum>  ::= "(isum" <num> <k01> ")"
<k01>   ::= "1" | "0"
<num>   ::= <var> | "(+" <num> <num> ")" | "(-" <num> <num> ")" | "(min" <num> <num> ")" | "(max" <num> <num> ")"
<var>   ::= "Ri" | "Di" | "Ji" | "Ci" | "Bi" | "Ti" | "Jk" | "Ck" | "Dk" | "Tk"
"""

_RULE = re.compile(r"^\s*(<[^>\s]+>)\s*::=\s*(.*)$")
_SYMBOL = re.compile(r'\s*(?:(<[^>\s]+>)|"([^"]*)"|(\|))')

# guards against single-production cycles that would never consume a codon
MAX_EXPANSIONS = 100_000


@dataclass(frozen=True)
class Grammar:
    start: str
    rules: dict  # nonterminal -> tuple of productions; production = tuple of (is_nt, text)

    @classmethod
    def from_bnf(cls, text: str) -> "Grammar":
        rules: dict[str, list] = {}
        start = None
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            m = _RULE.match(line)
            if m is None:
                raise InvalidConfig(f"grammar line {lineno}: expected '<nt> ::= ...'")
            lhs, rhs = m.groups()
            start = start or lhs
            prods, current, pos = [], [], 0
            while pos < len(rhs):
                if not rhs[pos:].strip():
                    break
                sm = _SYMBOL.match(rhs, pos)
                if sm is None:
                    raise InvalidConfig(f"grammar line {lineno}: cannot read {rhs[pos:]!r}")
                nt, term, bar = sm.groups()
                if bar:
                    prods.append(tuple(current))
                    current = []
                elif nt:
                    current.append((True, nt))
                else:
                    current.append((False, term))
                pos = sm.end()
            prods.append(tuple(current))
            rules.setdefault(lhs, []).extend(prods)
        if start is None:
            raise InvalidConfig("empty grammar")
        for lhs, prods in rules.items():
            for prod in prods:
                for is_nt, sym in prod:
                    if is_nt and sym not in rules:
                        raise InvalidConfig(f"undefined nonterminal {sym} in rule {lhs}")
        return cls(start, {k: tuple(v) for k, v in rules.items()})

    @classmethod
    def single_word(cls, formula: Formula) -> "Grammar":
        """Grammar whose only word is ``formula`` (every genotype maps to it)."""
        return cls("<rt>", {"<rt>": (((False, formula.render()),),)})


DEFAULT_GRAMMAR = Grammar.from_bnf(DEFAULT_BNF)


@dataclass(frozen=True)
class Genotype:
    codons: tuple[int, ...]
    max_wraps: int = 3

    def __post_init__(self):
        if not self.codons:
            raise ValueError("genotype needs at least one codon")


def derive(g: Genotype, grammar: Grammar = DEFAULT_GRAMMAR) -> tuple[str, int]:
    """Leftmost derivation; returns the derived word and the codons consumed."""
    n = len(g.codons)
    used = 0
    out: list[str] = []
    stack = [(True, grammar.start)]
    expansions = 0
    while stack:
        is_nt, sym = stack.pop()
        if not is_nt:
            out.append(sym)
            continue
        expansions += 1
        if expansions > MAX_EXPANSIONS:
            raise MappingIncomplete("derivation exceeded the expansion limit")
        prods = grammar.rules[sym]
        if len(prods) == 1:
            choice = prods[0]
        else:
            if used // n > g.max_wraps:
                raise MappingIncomplete(
                    f"ran out of codons after {g.max_wraps} wraps while expanding {sym}"
                )
            choice = prods[g.codons[used % n] % len(prods)]
            used += 1
        stack.extend(reversed(choice))
    return " ".join(out), used


def map_genotype(g: Genotype, grammar: Grammar = DEFAULT_GRAMMAR) -> Formula:
    word, _ = derive(g, grammar)
    try:
        return parse_formula(word)
    except FormulaSyntaxError as exc:
        raise InvalidConfig(f"grammar derives a word outside the formula language: {exc}") from None

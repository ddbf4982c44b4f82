"""Propositional assumption formulas and their compilation to confidence expressions.

Surface grammar (lowest to highest precedence)::

    impl  := or ('->' impl)?        right associative
    or    := and ('|' and)*
    and   := unary ('&' unary)*
    unary := '!' unary | atom
    atom  := 'A' <int >= 1> | '(' impl ')'

A formula is compiled by converting it to DNF and expanding the probability of
the disjunction with inclusion-exclusion. Negated literals inside a clause are
removed with P(X & !B) = P(X) - P(X & B), so the only leaves left are
constants, single monitors and conjunctions of positive literals.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np

from .errors import FormulaSyntaxError, MissingMonitorError, UnknownVariableError, VariableLimitError

DEFAULT_VARIABLE_LIMIT = 6


# --------------------------------------------------------------------------- AST


@dataclass(frozen=True)
class Var:
    index: int

    def __str__(self):
        return f"A{self.index + 1}"


@dataclass(frozen=True)
class Not:
    operand: "PropFormula"

    def __str__(self):
        return f"!{_wrap(self.operand, 4)}"


@dataclass(frozen=True)
class And:
    left: "PropFormula"
    right: "PropFormula"

    def __str__(self):
        return f"{_wrap(self.left, 3)} & {_wrap(self.right, 4)}"


@dataclass(frozen=True)
class Or:
    left: "PropFormula"
    right: "PropFormula"

    def __str__(self):
        return f"{_wrap(self.left, 2)} | {_wrap(self.right, 3)}"


@dataclass(frozen=True)
class Implies:
    left: "PropFormula"
    right: "PropFormula"

    def __str__(self):
        return f"{_wrap(self.left, 2)} -> {_wrap(self.right, 1)}"


PropFormula = Union[Var, Not, And, Or, Implies]

_PRECEDENCE = {Implies: 1, Or: 2, And: 3, Not: 4, Var: 5}


def _wrap(f, level):
    return str(f) if _PRECEDENCE[type(f)] >= level else f"({f})"


def variables(f: PropFormula) -> frozenset[int]:
    if isinstance(f, Var):
        return frozenset([f.index])
    if isinstance(f, Not):
        return variables(f.operand)
    return variables(f.left) | variables(f.right)


def truth(f: PropFormula, assignment: Sequence[bool]) -> bool:
    """Evaluate f under a truth assignment indexed by variable."""
    if isinstance(f, Var):
        return bool(assignment[f.index])
    if isinstance(f, Not):
        return not truth(f.operand, assignment)
    if isinstance(f, And):
        return truth(f.left, assignment) and truth(f.right, assignment)
    if isinstance(f, Or):
        return truth(f.left, assignment) or truth(f.right, assignment)
    return (not truth(f.left, assignment)) or truth(f.right, assignment)


def truth_array(f: PropFormula, flags: np.ndarray) -> np.ndarray:
    """Vectorised truth over rows of a boolean (N, k) flag matrix."""
    if isinstance(f, Var):
        return np.asarray(flags[..., f.index], dtype=bool)
    if isinstance(f, Not):
        return ~truth_array(f.operand, flags)
    left, right = truth_array(f.left, flags), truth_array(f.right, flags)
    if isinstance(f, And):
        return left & right
    if isinstance(f, Or):
        return left | right
    return ~left | right


# ------------------------------------------------------------------------ parser

_TOKEN = re.compile(r"\s*(?:(A\d+)|(->)|([!&|()])|(\S))")


def _tokenize(text: str):
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:  # only trailing whitespace left
            break
        start = m.start(m.lastindex) + 1
        if m.group(4) is not None:
            # Identifier-like garbage gets a friendlier message.
            word = re.match(r"[A-Za-z_]\w*", text[m.start(4):])
            if word:
                raise UnknownVariableError(f"unknown variable {word.group(0)!r} at position {start}")
            raise FormulaSyntaxError(f"unexpected character {m.group(4)!r}", start)
        tokens.append((m.group(m.lastindex), start))
        pos = m.end()
    tokens.append(("<end>", len(text) + 1))
    return tokens


class _Parser:
    def __init__(self, text, n_vars):
        self.tokens = _tokenize(text)
        self.i = 0
        self.n_vars = n_vars

    def peek(self):
        return self.tokens[self.i][0]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def fail(self, what):
        tok, pos = self.tokens[self.i]
        found = "end of input" if tok == "<end>" else repr(tok)
        raise FormulaSyntaxError(f"expected {what}, found {found}", pos)

    def parse(self):
        f = self.implication()
        if self.peek() != "<end>":
            self.fail("operator or end of input")
        return f

    def implication(self):
        left = self.disjunction()
        if self.peek() == "->":
            self.take()
            return Implies(left, self.implication())
        return left

    def disjunction(self):
        f = self.conjunction()
        while self.peek() == "|":
            self.take()
            f = Or(f, self.conjunction())
        return f

    def conjunction(self):
        f = self.unary()
        while self.peek() == "&":
            self.take()
            f = And(f, self.unary())
        return f

    def unary(self):
        if self.peek() == "!":
            self.take()
            return Not(self.unary())
        return self.atom()

    def atom(self):
        tok, pos = self.tokens[self.i]
        if tok == "(":
            self.take()
            f = self.implication()
            if self.peek() != ")":
                self.fail("')'")
            self.take()
            return f
        if tok.startswith("A") and tok[1:].isdigit():
            index = int(tok[1:]) - 1
            if index < 0 or (self.n_vars is not None and index >= self.n_vars):
                raise UnknownVariableError(f"unknown variable {tok!r} at position {pos}")
            self.take()
            return Var(index)
        self.fail("variable, '!' or '('")


def parse_formula(text: str, n_vars: int | None = None) -> PropFormula:
    """Parse a formula over variables ``A1..An``.

    ``n_vars`` bounds the admissible variable names; positions in errors are
    1-based character offsets (end of input is ``len(text) + 1``).
    """
    return _Parser(text, n_vars).parse()


# --------------------------------------------------------------------------- DNF

# A literal is (index, positive); a clause is a frozenset of literals.
Clause = frozenset


def _nnf(f: PropFormula, negate: bool = False) -> PropFormula:
    if isinstance(f, Var):
        return Not(f) if negate else f
    if isinstance(f, Not):
        return _nnf(f.operand, not negate)
    if isinstance(f, Implies):
        return _nnf(Or(Not(f.left), f.right), negate)
    left, right = _nnf(f.left, negate), _nnf(f.right, negate)
    if isinstance(f, And):
        return Or(left, right) if negate else And(left, right)
    return And(left, right) if negate else Or(left, right)


def _clauses(f: PropFormula) -> list[frozenset]:
    """DNF clauses of a formula already in negation normal form."""
    if isinstance(f, Var):
        return [frozenset([(f.index, True)])]
    if isinstance(f, Not):
        return [frozenset([(f.operand.index, False)])]
    left, right = _clauses(f.left), _clauses(f.right)
    if isinstance(f, Or):
        out = left + right
    else:
        out = [a | b for a in left for b in right]
    seen, unique = set(), []
    for c in out:
        if c not in seen:
            seen.add(c)
            unique.append(c)
    return unique


def _contradictory(clause) -> bool:
    return any((i, not s) in clause for i, s in clause)


def dnf_clauses(f: PropFormula) -> list[frozenset]:
    """Satisfiable DNF clauses of f, each a frozenset of (index, positive)."""
    return [c for c in _clauses(_nnf(f)) if not _contradictory(c)]


def _literal(index, positive):
    return Var(index) if positive else Not(Var(index))


def _clause_formula(clause) -> PropFormula:
    lits = [_literal(i, s) for i, s in sorted(clause, key=lambda l: (l[0], not l[1]))]
    f = lits[0]
    for lit in lits[1:]:
        f = And(f, lit)
    return f


def to_dnf(f: PropFormula) -> PropFormula:
    """Equivalent formula in DNF with implications removed and negations on literals.

    Clauses are folded left into binary Or/And nodes. Contradictory clauses are
    dropped unless the whole formula is unsatisfiable, in which case one is kept
    so the result remains a formula.
    """
    raw = _clauses(_nnf(f))
    clauses = [c for c in raw if not _contradictory(c)] or raw[:1]
    out = _clause_formula(clauses[0])
    for c in clauses[1:]:
        out = Or(out, _clause_formula(c))
    return out


# ----------------------------------------------------------- composition exprs


@dataclass(frozen=True)
class Constant:
    value: float


@dataclass(frozen=True)
class Monitor:
    index: int


@dataclass(frozen=True)
class Complement:
    """1 - operand."""

    operand: "CompositionExpr"


@dataclass(frozen=True)
class Conjunction:
    """Probability of a conjunction of positive literals, delegated to a composer."""

    indices: tuple[int, ...]


@dataclass(frozen=True)
class Sum:
    """Weighted sum of (coefficient, expression) terms."""

    terms: tuple[tuple[float, "CompositionExpr"], ...]


CompositionExpr = Union[Constant, Monitor, Complement, Conjunction, Sum]

# composer(indices, ms) -> P(A_i & ... for i in indices); ms has monitors on the last axis.
ConjunctionComposer = Callable[[tuple, np.ndarray], np.ndarray]


def _leaf(indices: frozenset) -> CompositionExpr:
    if not indices:
        return Constant(1.0)
    if len(indices) == 1:
        return Monitor(next(iter(indices)))
    return Conjunction(tuple(sorted(indices)))


def _clause_polynomial(clause) -> dict[frozenset, int]:
    pos = frozenset(i for i, s in clause if s)
    neg = sorted(i for i, s in clause if not s)
    poly: dict[frozenset, int] = {}
    for r in range(len(neg) + 1):
        for extra in itertools.combinations(neg, r):
            key = pos | frozenset(extra)
            poly[key] = poly.get(key, 0) + (-1) ** r
    return poly


def compile_formula(f: PropFormula, variable_limit: int = DEFAULT_VARIABLE_LIMIT) -> CompositionExpr:
    """Reduce P(f) to a signed sum over conjunctions of positive literals."""
    n_vars = len(variables(f))
    if n_vars > variable_limit:
        raise VariableLimitError(f"formula uses {n_vars} variables, limit is {variable_limit}")
    clauses = dnf_clauses(f)
    poly: dict[frozenset, int] = {}
    for r in range(1, len(clauses) + 1):
        sign = 1 if r % 2 else -1
        for group in itertools.combinations(clauses, r):
            merged = frozenset().union(*group)
            if _contradictory(merged):
                continue
            for key, coef in _clause_polynomial(merged).items():
                poly[key] = poly.get(key, 0) + sign * coef
    terms = [(coef, key) for key, coef in poly.items() if coef != 0]
    terms.sort(key=lambda t: (len(t[1]), sorted(t[1])))
    if not terms:
        return Constant(0.0)
    if len(terms) == 1 and terms[0][0] == 1:
        return _leaf(terms[0][1])
    if (len(terms) == 2 and terms[0] == (1, frozenset()) and terms[1][0] == -1):
        return Complement(_leaf(terms[1][1]))
    return Sum(tuple((float(coef), _leaf(key)) for coef, key in terms))


compile = compile_formula  # noqa: A001 - mirrors the operation name


def expr_variables(e: CompositionExpr) -> frozenset[int]:
    if isinstance(e, Monitor):
        return frozenset([e.index])
    if isinstance(e, Conjunction):
        return frozenset(e.indices)
    if isinstance(e, Complement):
        return expr_variables(e.operand)
    if isinstance(e, Sum):
        return frozenset().union(*(expr_variables(t) for _, t in e.terms))
    return frozenset()


def product_composer(indices, ms):
    return np.prod(np.asarray(ms)[..., list(indices)], axis=-1)


def _eval(e, ms, conj):
    if isinstance(e, Constant):
        return np.full(ms.shape[:-1], e.value)
    if isinstance(e, Monitor):
        return ms[..., e.index]
    if isinstance(e, Complement):
        return 1.0 - _eval(e.operand, ms, conj)
    if isinstance(e, Conjunction):
        return np.asarray(conj(e.indices, ms), dtype=float)
    total = np.zeros(ms.shape[:-1])
    for coef, term in e.terms:
        total = total + coef * _eval(term, ms, conj)
    return total


def evaluate_unclamped(e: CompositionExpr, ms, conj: ConjunctionComposer = product_composer):
    ms = np.asarray(ms, dtype=float)
    needed = expr_variables(e)
    if needed and (ms.ndim == 0 or ms.shape[-1] <= max(needed)):
        raise MissingMonitorError(f"expression needs monitor A{max(needed) + 1}, got {0 if ms.ndim == 0 else ms.shape[-1]} values")
    out = _eval(e, ms, conj)
    return float(out) if np.ndim(out) == 0 else out


def evaluate(e: CompositionExpr, ms, conj: ConjunctionComposer = product_composer):
    """Evaluate an expression on one monitor vector or an (N, k) matrix, clamped to [0, 1]."""
    out = np.clip(evaluate_unclamped(e, ms, conj), 0.0, 1.0)
    return float(out) if np.ndim(out) == 0 else out


def format_expr(e: CompositionExpr) -> str:
    if isinstance(e, Constant):
        return repr(e.value)
    if isinstance(e, Monitor):
        return f"m{e.index + 1}"
    if isinstance(e, Conjunction):
        return "C(" + ",".join(f"m{i + 1}" for i in e.indices) + ")"
    if isinstance(e, Complement):
        return f"1 - {format_expr(e.operand)}"
    parts = []
    for coef, term in e.terms:
        mag = abs(coef)
        body = format_expr(term) if mag == 1 or isinstance(term, Constant) else f"{mag:g}*{format_expr(term)}"
        if isinstance(term, Constant):
            body = f"{mag * term.value:g}"
        parts.append(("- " if coef < 0 else "+ ") + body)
    text = " ".join(parts)
    return text[2:] if text.startswith("+ ") else "-" + text[2:]

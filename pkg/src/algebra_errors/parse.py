"""Tokenizer and operator-precedence parser for student equations.

The grammar is deliberately small: rational constants, single-letter
variables, ``+ - * /``, parentheses, implicit multiplication and one ``=``.
Anything else is junk.  Parsing never raises; a failure is returned as a
:class:`ParseFailure` carrying the earliest defect position.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Iterable, Union


class TokenKind(str, Enum):
    NUMBER = "number"
    VARIABLE = "variable"
    OPERATOR = "operator"
    LPAREN = "lparen"
    RPAREN = "rparen"
    JUNK = "junk"


@dataclass(frozen=True)
class Token:
    kind: TokenKind
    text: str
    position: int

    @property
    def op(self) -> str:
        """Canonical operator symbol (the Unicode minus becomes ``-``)."""
        return "-" if self.text == "−" else self.text


OPERATORS = {"+", "-", "−", "*", "/", "="}
_NUMBER = re.compile(r"\d+(?:\.\d+)?|\.\d+")
_EXPONENT = re.compile(r"[eE][+-]?\d+")
_LETTERS = re.compile(r"[A-Za-z]+")


def _is_plain(c: str) -> bool:
    return c.isspace() or c in OPERATORS or c in "()" or c in "0123456789." or ("a" <= c.lower() <= "z")


def tokenize_equation(text: str) -> list[Token]:
    """Split ``text`` into tokens; unknown character runs become junk.

    Multi-letter words are junk (variables are single letters), and so is
    scientific notation such as ``1e5``.
    """
    tokens: list[Token] = []
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c.isspace():
            i += 1
            continue
        m = _NUMBER.match(text, i)
        if m:
            exp = _EXPONENT.match(text, m.end())
            if exp:
                tokens.append(Token(TokenKind.JUNK, text[i : exp.end()], i))
                i = exp.end()
            else:
                tokens.append(Token(TokenKind.NUMBER, m.group(), i))
                i = m.end()
            continue
        m = _LETTERS.match(text, i)
        if m:
            kind = TokenKind.VARIABLE if len(m.group()) == 1 else TokenKind.JUNK
            tokens.append(Token(kind, m.group(), i))
            i = m.end()
            continue
        if c in OPERATORS:
            tokens.append(Token(TokenKind.OPERATOR, c, i))
        elif c == "(":
            tokens.append(Token(TokenKind.LPAREN, c, i))
        elif c == ")":
            tokens.append(Token(TokenKind.RPAREN, c, i))
        else:
            j = i + 1
            # a lone "." not starting a number is junk too
            while j < n and not _is_plain(text[j]):
                j += 1
            tokens.append(Token(TokenKind.JUNK, text[i:j], i))
            i = j
            continue
        i += 1
    return tokens


# ---------------------------------------------------------------------------
# trees


@dataclass(frozen=True)
class Const:
    value: Fraction


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "ExprTree"
    right: "ExprTree"


ExprTree = Union[Const, Var, BinOp]


class FailureReason(str, Enum):
    JUNK_TOKEN = "junk_token"
    UNBALANCED_PARENS = "unbalanced_parens"
    DANGLING_OPERATOR = "dangling_operator"
    MULTIPLE_EQUALS = "multiple_equals"
    EMPTY_SIDE = "empty_side"


@dataclass(frozen=True)
class ParseFailure:
    reason: FailureReason
    position: int


@dataclass(frozen=True)
class ParseOutcome:
    tree: ExprTree | None = None
    failure: ParseFailure | None = None

    @property
    def ok(self) -> bool:
        return self.tree is not None


PRECEDENCE = {"=": 1, "+": 2, "-": 2, "*": 3, "/": 3}
_NEG = "neg"  # prefix negation on the operator stack


class _Fail(Exception):
    def __init__(self, reason: FailureReason, position: int):
        self.failure = ParseFailure(reason, position)


def _missing_operand(tokens: list[Token], i: int) -> _Fail:
    """Diagnose an operand slot at ``tokens[i]`` that cannot start an operand."""
    tok = tokens[i] if i < len(tokens) else None
    prev = tokens[i - 1] if i > 0 else None
    if prev is None:
        if tok is None or tok.op == "=":
            return _Fail(FailureReason.EMPTY_SIDE, tok.position if tok else 0)
        if tok.kind is TokenKind.RPAREN:
            return _Fail(FailureReason.UNBALANCED_PARENS, tok.position)
        return _Fail(FailureReason.DANGLING_OPERATOR, tok.position)
    if prev.kind is TokenKind.OPERATOR:
        if prev.op == "=":
            return _Fail(FailureReason.EMPTY_SIDE, prev.position)
        return _Fail(FailureReason.DANGLING_OPERATOR, prev.position)
    # prev is "(": an empty group, or a group opening on a binary operator
    if tok is not None and tok.kind is TokenKind.OPERATOR and tok.op != "=":
        return _Fail(FailureReason.DANGLING_OPERATOR, tok.position)
    return _Fail(FailureReason.EMPTY_SIDE, prev.position)


def parse_to_tree(tokens: list[Token], require_equation: bool = False) -> ParseOutcome:
    """Parse tokens into an expression or equation tree.

    Precedence, tightest first: unary minus, ``* /`` (and implicit
    multiplication), ``+ -``, ``=``.  Binary operators are left-associative.
    A minus with no left operand directly before a number yields a negative
    constant; before anything else it yields ``(-1) * operand``.  An empty
    pair of parentheses reports ``empty_side``.  With ``require_equation`` a
    missing ``=`` reports ``empty_side`` at the end of input.
    """
    first_junk = next((t.position for t in tokens if t.kind is TokenKind.JUNK), None)
    try:
        tree, saw_equals = _shunt(tokens)
        if require_equation and not saw_equals:
            end = tokens[-1].position + len(tokens[-1].text) if tokens else 0
            raise _Fail(FailureReason.EMPTY_SIDE, end)
    except _Fail as fail:
        failure = fail.failure
        if first_junk is not None and first_junk <= failure.position:
            failure = ParseFailure(FailureReason.JUNK_TOKEN, first_junk)
        return ParseOutcome(failure=failure)
    if first_junk is not None:
        return ParseOutcome(failure=ParseFailure(FailureReason.JUNK_TOKEN, first_junk))
    return ParseOutcome(tree=tree)


def _shunt(tokens: list[Token]) -> tuple[ExprTree, bool]:
    out: list[ExprTree] = []
    ops: list[tuple[str, int]] = []  # (operator | "(" | neg, position)
    expect_operand = True
    saw_equals = False

    def apply(op: str) -> None:
        if op == _NEG:
            out.append(BinOp("*", Const(Fraction(-1)), out.pop()))
        else:
            right, left = out.pop(), out.pop()
            out.append(BinOp(op, left, right))

    def push_binary(op: str, pos: int) -> None:
        while ops and ops[-1][0] != "(" and _prec(ops[-1][0]) >= PRECEDENCE[op]:
            apply(ops.pop()[0])
        ops.append((op, pos))

    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if expect_operand:
            if tok.kind is TokenKind.NUMBER:
                out.append(Const(Fraction(tok.text)))
                expect_operand = False
            elif tok.kind is TokenKind.VARIABLE:
                out.append(Var(tok.text))
                expect_operand = False
            elif tok.kind is TokenKind.JUNK:
                out.append(Var(tok.text))  # placeholder; reported by the caller
                expect_operand = False
            elif tok.kind is TokenKind.LPAREN:
                ops.append(("(", tok.position))
            elif tok.kind is TokenKind.OPERATOR and tok.op == "-":
                nxt = tokens[i + 1] if i + 1 < len(tokens) else None
                if nxt is not None and nxt.kind is TokenKind.NUMBER:
                    out.append(Const(-Fraction(nxt.text)))
                    expect_operand = False
                    i += 1
                else:
                    ops.append((_NEG, tok.position))
            else:
                raise _missing_operand(tokens, i)
            i += 1
            continue

        if tok.kind is TokenKind.OPERATOR:
            if tok.op == "=":
                if saw_equals:
                    raise _Fail(FailureReason.MULTIPLE_EQUALS, tok.position)
                open_parens = [p for o, p in ops if o == "("]
                if open_parens:
                    raise _Fail(FailureReason.UNBALANCED_PARENS, open_parens[0])
                saw_equals = True
            push_binary(tok.op, tok.position)
            expect_operand = True
            i += 1
        elif tok.kind is TokenKind.RPAREN:
            while ops and ops[-1][0] != "(":
                apply(ops.pop()[0])
            if not ops:
                raise _Fail(FailureReason.UNBALANCED_PARENS, tok.position)
            ops.pop()
            i += 1
        else:
            # juxtaposition: implicit multiplication, then read the operand
            push_binary("*", tok.position)
            expect_operand = True

    if expect_operand:
        raise _missing_operand(tokens, len(tokens))
    open_parens = [p for o, p in ops if o == "("]
    if open_parens:
        raise _Fail(FailureReason.UNBALANCED_PARENS, open_parens[0])
    while ops:
        apply(ops.pop()[0])
    return out[0], saw_equals


def _prec(op: str) -> int:
    return 4 if op == _NEG else PRECEDENCE[op]


def parse_text(text: str, require_equation: bool = False) -> ParseOutcome:
    return parse_to_tree(tokenize_equation(text), require_equation=require_equation)


def is_equation(tree: ExprTree | None) -> bool:
    """True iff ``=`` occurs exactly once, at the root."""

    def count(t) -> int:
        return (t.op == "=") + count(t.left) + count(t.right) if isinstance(t, BinOp) else 0

    return isinstance(tree, BinOp) and tree.op == "=" and count(tree) == 1


def is_tree_parseable(record) -> bool:
    """Both equations of a step record parse to equation trees."""
    return all(
        parse_text(step.equation, require_equation=True).ok for step in (record.prior_step, record.current_step)
    )


# ---------------------------------------------------------------------------
# serialization and evaluation


def format_constant(value: Fraction) -> str:
    if value < 0:
        return f"(-{format_constant(-value)})"
    if value.denominator == 1:
        return str(value.numerator)
    den, twos, fives = value.denominator, 0, 0
    while den % 2 == 0:
        den, twos = den // 2, twos + 1
    while den % 5 == 0:
        den, fives = den // 5, fives + 1
    if den != 1:
        return f"({value.numerator}/{value.denominator})"
    scale = max(twos, fives)
    digits = str(value.numerator * 10**scale // value.denominator).rjust(scale + 1, "0")
    return f"{digits[:-scale]}.{digits[-scale:]}"


def to_text(tree: ExprTree) -> str:
    """Render a tree with the fewest parentheses that reparse to it."""
    if isinstance(tree, Const):
        return format_constant(tree.value)
    if isinstance(tree, Var):
        return tree.name
    prec = PRECEDENCE[tree.op]
    left, right = to_text(tree.left), to_text(tree.right)
    if isinstance(tree.left, BinOp) and PRECEDENCE[tree.left.op] < prec:
        left = f"({left})"
    if isinstance(tree.right, BinOp) and PRECEDENCE[tree.right.op] <= prec:
        right = f"({right})"
    return f"{left} {tree.op} {right}"


def evaluate(tree: ExprTree, env: dict[str, Fraction] | None = None) -> Fraction:
    """Exact value of an expression tree (``=`` is not an expression)."""
    env = env or {}
    if isinstance(tree, Const):
        return tree.value
    if isinstance(tree, Var):
        return Fraction(env[tree.name])
    if tree.op == "=":
        raise ValueError("evaluate() takes expressions; use evaluate_sides() for equations")
    a, b = evaluate(tree.left, env), evaluate(tree.right, env)
    if tree.op == "+":
        return a + b
    if tree.op == "-":
        return a - b
    if tree.op == "*":
        return a * b
    return a / b


def evaluate_sides(tree: BinOp, env: dict[str, Fraction] | None = None) -> tuple[Fraction, Fraction]:
    if not is_equation(tree):
        raise ValueError("not an equation tree")
    return evaluate(tree.left, env), evaluate(tree.right, env)


# ---------------------------------------------------------------------------
# corpus statistics


def parse_stats(records: Iterable) -> dict:
    """Parseability counts and a histogram of first-failure reasons.

    For an unparseable record the reason comes from the prior equation if it
    fails, otherwise from the current one.
    """
    reasons: Counter[str] = Counter()
    sides: Counter[str] = Counter()
    total = parseable = 0
    for record in records:
        total += 1
        for side, step in (("prior", record.prior_step), ("current", record.current_step)):
            outcome = parse_text(step.equation, require_equation=True)
            if not outcome.ok:
                reasons[outcome.failure.reason.value] += 1
                sides[side] += 1
                break
        else:
            parseable += 1
    return {
        "total": total,
        "parseable": parseable,
        "unparseable": total - parseable,
        "reasons": dict(sorted(reasons.items())),
        "failing_side": dict(sorted(sides.items())),
    }

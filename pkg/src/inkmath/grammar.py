"""Random arithmetic expressions and their three ground-truth labels.

An expression is a binary tree of numerals and the four operators, rendered
three ways: infix glyph tokens (ASCII), a postfix token list with numeral
delimiters, and an exact rational value. The module also scores decoder
output for postfix well-formedness (count_violations / rar).
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence, Union

import numpy as np

from . import vocab

PRECEDENCE = {"+": 1, "-": 1, "*": 2, "/": 2}
BRACKET_PROB = 0.35


class ParseError(ValueError):
    """Malformed infix input; .position is the offending token index."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position


@dataclass(frozen=True)
class Numeral:
    """A digit string with at most one decimal mark, e.g. '7.4'."""

    text: str

    def __post_init__(self):
        if not any(c.isdigit() for c in self.text):
            raise ValueError(f"numeral needs at least one digit: {self.text!r}")
        if self.text.count(".") > 1:
            raise ValueError(f"numeral has multiple decimal marks: {self.text!r}")
        if any(c not in "0123456789." for c in self.text):
            raise ValueError(f"bad numeral character in {self.text!r}")


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "ExprTree"
    right: "ExprTree"
    bracketed: bool = False

    def __post_init__(self):
        if self.op not in PRECEDENCE:
            raise ValueError(f"unknown operator {self.op!r}")


ExprTree = Union[Numeral, BinOp]


@dataclass(frozen=True)
class GenConfig:
    """Knobs for the random expression generator.

    int_digits / dec_digits are inclusive (lo, hi) ranges for the number of
    digits on each side of the decimal mark; dec digits of 0 means an
    integer numeral. dec_digits=(0, 1) reproduces the one-decimal-digit
    constraint of the smaller postfix models.
    """

    max_ops: int = 2
    allow_brackets: bool = False
    int_digits: tuple[int, int] = (1, 2)
    dec_digits: tuple[int, int] = (0, 1)

    def __post_init__(self):
        if self.max_ops < 0:
            raise ValueError("max_ops must be >= 0")
        for lo, hi in (self.int_digits, self.dec_digits):
            if lo > hi or hi < 0:
                raise ValueError("digit ranges must be non-empty")
        if self.int_digits[0] < 1:
            raise ValueError("numerals need at least one integer digit")

    @staticmethod
    def from_dict(d: dict) -> "GenConfig":
        d = dict(d)
        for key in ("int_digits", "dec_digits"):
            if key in d:
                d[key] = tuple(d[key])
        return GenConfig(**d)


# -- generation ---------------------------------------------------------------


def _gen_numeral(config: GenConfig, rng: np.random.Generator) -> Numeral:
    n_int = int(rng.integers(config.int_digits[0], config.int_digits[1] + 1))
    n_dec = int(rng.integers(config.dec_digits[0], config.dec_digits[1] + 1))
    first = str(rng.integers(1, 10)) if n_int > 1 else str(rng.integers(0, 10))
    digits = first + "".join(str(rng.integers(0, 10)) for _ in range(n_int - 1))
    if n_dec > 0:
        digits += "." + "".join(str(rng.integers(0, 10)) for _ in range(n_dec))
    return Numeral(digits)


def _tree_prec(node: ExprTree) -> int:
    if isinstance(node, Numeral) or node.bracketed:
        return 3
    return PRECEDENCE[node.op]


def _gen_bracketed(n_ops: int, config: GenConfig,
                   rng: np.random.Generator) -> ExprTree:
    if n_ops == 0:
        return _gen_numeral(config, rng)
    n_left = int(rng.integers(0, n_ops))
    op = vocab.OPERATORS[int(rng.integers(0, 4))]
    left = _gen_bracketed(n_left, config, rng)
    right = _gen_bracketed(n_ops - 1 - n_left, config, rng)
    if op == "/":
        while evaluate(right) == 0:
            right = _gen_bracketed(n_ops - 1 - n_left, config, rng)
    # Brackets are forced wherever a flat rendering would re-parse
    # differently (lower-precedence child, or same precedence on the right
    # of a left-associative operator); otherwise they appear at random.
    def needs(child: ExprTree, is_right: bool) -> bool:
        p = _tree_prec(child)
        me = PRECEDENCE[op]
        return p < me or (is_right and p == me)

    def wrap(child: ExprTree, is_right: bool) -> ExprTree:
        if isinstance(child, Numeral) or child.bracketed:
            return child
        if needs(child, is_right) or rng.random() < BRACKET_PROB:
            return BinOp(child.op, child.left, child.right, bracketed=True)
        return child

    return BinOp(op, wrap(left, False), wrap(right, True))


def _gen_flat(n_ops: int, config: GenConfig,
              rng: np.random.Generator) -> ExprTree:
    # Bracket-free expressions are drawn as flat operator chains and parsed
    # with standard precedence, so labels can never disagree with rendering.
    tokens: list[str] = list(_gen_numeral(config, rng).text)
    for _ in range(n_ops):
        tokens.append(vocab.OPERATORS[int(rng.integers(0, 4))])
        tokens.extend(_gen_numeral(config, rng).text)
    tree = parse_infix(tokens + ["="])
    if _has_zero_division(tree):
        return _gen_flat(n_ops, config, rng)
    return tree


def _has_zero_division(node: ExprTree) -> bool:
    if isinstance(node, Numeral):
        return False
    if node.op == "/" and evaluate(node.right) == 0:
        return True
    return _has_zero_division(node.left) or _has_zero_division(node.right)


def generate(config: GenConfig, rng: np.random.Generator) -> ExprTree:
    """Random expression tree; deterministic for a given rng state.

    Division denominators are regenerated until nonzero, and bracket flags
    are set so that to_infix always round-trips through parse_infix.
    """
    if config.max_ops == 0:
        return _gen_numeral(config, rng)
    n_ops = int(rng.integers(1, config.max_ops + 1))
    if config.allow_brackets:
        return _gen_bracketed(n_ops, config, rng)
    return _gen_flat(n_ops, config, rng)


# -- rendering ----------------------------------------------------------------


def to_infix(tree: ExprTree) -> list[str]:
    """Glyph tokens of the written expression, terminal '=' included."""
    out: list[str] = []

    def emit(node: ExprTree):
        if isinstance(node, Numeral):
            out.extend(node.text)
            return
        if node.bracketed:
            out.append("(")
        emit(node.left)
        out.append(node.op)
        emit(node.right)
        if node.bracketed:
            out.append(")")

    emit(tree)
    out.append("=")
    return out


def to_rpn(tree: ExprTree) -> list[str]:
    """Postfix label: bos, post-order tokens with eon after each numeral,
    '=' and eos."""
    out = [vocab.BOS]

    def emit(node: ExprTree):
        if isinstance(node, Numeral):
            out.extend(node.text)
            out.append(vocab.EON)
            return
        emit(node.left)
        emit(node.right)
        out.append(node.op)

    emit(tree)
    out.append("=")
    out.append(vocab.EOS)
    return out


def evaluate(tree: ExprTree) -> Fraction:
    """Exact rational value of the tree."""
    if isinstance(tree, Numeral):
        return Fraction(tree.text)
    left, right = evaluate(tree.left), evaluate(tree.right)
    if tree.op == "+":
        return left + right
    if tree.op == "-":
        return left - right
    if tree.op == "*":
        return left * right
    if right == 0:
        raise ZeroDivisionError("division by zero in expression tree")
    return left / right


def to_decimal(value: Fraction, max_places: int = 12) -> str:
    """Decimal rendering; exact when the expansion terminates, rounded to
    max_places otherwise."""
    sign = "-" if value < 0 else ""
    value = abs(value)
    whole, rem = divmod(value.numerator, value.denominator)
    digits = []
    seen_exact = rem == 0
    for _ in range(max_places):
        if rem == 0:
            seen_exact = True
            break
        rem *= 10
        d, rem = divmod(rem, value.denominator)
        digits.append(str(d))
    if not seen_exact:
        # round the last kept digit
        rounded = (Fraction(value) * 10**max_places).__round__()
        text = str(rounded).rjust(max_places + 1, "0")
        whole_s, frac_s = text[:-max_places], text[-max_places:]
        return f"{sign}{whole_s}.{frac_s}"
    if digits:
        return f"{sign}{whole}." + "".join(digits)
    return f"{sign}{whole}"


# -- parsing ------------------------------------------------------------------


def parse_infix(tokens: Sequence[str]) -> ExprTree:
    """Parse glyph tokens (ending in '=') with ×/÷ over +/− and left
    associativity. Raises ParseError with the failing token position."""
    pos = 0

    def peek() -> Optional[str]:
        return tokens[pos] if pos < len(tokens) else None

    def fail(msg: str):
        raise ParseError(msg, pos)

    def parse_numeral() -> Numeral:
        nonlocal pos
        start = pos
        text = []
        while peek() is not None and (peek().isdigit() or peek() == "."):
            text.append(tokens[pos])
            pos += 1
        if not text or not any(c.isdigit() for c in text):
            fail("expected a numeral")
        if text.count(".") > 1:
            pos = start + text.index(".", text.index(".") + 1)
            fail("numeral has a second decimal mark")
        return Numeral("".join(text))

    def parse_factor() -> ExprTree:
        nonlocal pos
        tok = peek()
        if tok == "(":
            pos += 1
            node = parse_expr()
            if peek() != ")":
                fail("expected ')'")
            pos += 1
            if isinstance(node, BinOp):
                node = BinOp(node.op, node.left, node.right, bracketed=True)
            return node
        if tok is not None and (tok.isdigit() or tok == "."):
            return parse_numeral()
        fail("expected a numeral or '('")

    def parse_term() -> ExprTree:
        nonlocal pos
        node = parse_factor()
        while peek() in ("*", "/"):
            op = tokens[pos]
            pos += 1
            node = BinOp(op, node, parse_factor())
        return node

    def parse_expr() -> ExprTree:
        nonlocal pos
        node = parse_term()
        while peek() in ("+", "-"):
            op = tokens[pos]
            pos += 1
            node = BinOp(op, node, parse_term())
        return node

    tree = parse_expr()
    if peek() != "=":
        fail("expected '='")
    pos += 1
    if pos != len(tokens):
        fail("trailing tokens after '='")
    return tree


# -- postfix validity ----------------------------------------------------------


def count_violations(tokens: Sequence[str]) -> int:
    """Stack-consistency violations of a decoded token sequence.

    Linear scan with a counter: an operand increments it (push), an
    operator decrements it (pop two, push one). Violations are the number
    of scan positions where the counter goes negative plus the distance of
    the final counter from 1.

    Operand segmentation: a maximal run of digit/'.' tokens is one operand,
    whether or not an eon closes it; a bare eon delimits an empty numeral
    and also counts as one operand. '=' is transparent. Bracket glyphs are
    foreign to postfix output and add one violation apiece. Scores any
    garbage; never raises.
    """
    violations = 0
    counter = 0
    in_operand = False
    for tok in tokens:
        if tok in vocab.SPECIALS:
            in_operand = False
            continue
        if tok.isdigit() or tok == ".":
            if not in_operand:
                counter += 1
                in_operand = True
            continue
        if tok == vocab.EON:
            if not in_operand:
                counter += 1
            in_operand = False
            continue
        in_operand = False
        if tok == "=":
            continue
        if tok in ("(", ")"):
            violations += 1
            continue
        if tok in PRECEDENCE:
            counter -= 1
            if counter < 0:
                violations += 1
            continue
        # unknown garbage token: not an operand, not an operator
        violations += 1
    violations += abs(counter - 1)
    return violations


def evaluate_rpn(tokens: Sequence[str]) -> Fraction:
    """Stack evaluation of a postfix token sequence (bos/eos/pad/'='
    tolerated). Raises ValueError on malformed input."""
    stack: list[Fraction] = []
    operand: list[str] = []

    def close_operand():
        if operand:
            text = "".join(operand)
            if not any(c.isdigit() for c in text) or text.count(".") > 1:
                raise ValueError(f"malformed numeral {text!r}")
            stack.append(Fraction(text))
            operand.clear()

    for tok in tokens:
        if tok in vocab.SPECIALS or tok == "=":
            close_operand()
            continue
        if tok.isdigit() or tok == ".":
            operand.append(tok)
            continue
        if tok == vocab.EON:
            close_operand()
            continue
        close_operand()
        if tok not in PRECEDENCE:
            raise ValueError(f"unexpected token {tok!r} in postfix sequence")
        if len(stack) < 2:
            raise ValueError("operator underflow in postfix sequence")
        right, left = stack.pop(), stack.pop()
        if tok == "+":
            stack.append(left + right)
        elif tok == "-":
            stack.append(left - right)
        elif tok == "*":
            stack.append(left * right)
        else:
            if right == 0:
                raise ZeroDivisionError("division by zero in postfix sequence")
            stack.append(left / right)
    close_operand()
    if len(stack) != 1:
        raise ValueError(f"postfix sequence leaves {len(stack)} values on the stack")
    return stack[0]


def rar(predictions: Sequence[Sequence[str]]) -> tuple[float, float]:
    """Postfix accuracy range over a prediction set.

    Returns (1 - mean violation count, 1 - fraction of expressions with at
    least one violation); lower bound first.
    """
    if not predictions:
        raise ValueError("rar needs at least one prediction")
    counts = [count_violations(p) for p in predictions]
    v_min = sum(1 for c in counts if c > 0) / len(counts)
    v_max = sum(counts) / len(counts)
    return (1.0 - v_max, 1.0 - v_min)


def validate_rpn_label(tokens: Sequence[str]) -> None:
    """Assert the structural invariants of a generated postfix label."""
    if tokens[0] != vocab.BOS or tokens[-1] != vocab.EOS:
        raise ValueError("label must be bos ... eos")
    if tokens[-2] != "=":
        raise ValueError("'=' must be the last symbol before eos")
    body = tokens[1:-2]
    for i, tok in enumerate(body):
        if (tok.isdigit() or tok == ".") and (
                i + 1 == len(body) or
                not (body[i + 1].isdigit() or body[i + 1] == "." or
                     body[i + 1] == vocab.EON)):
            raise ValueError("numeral not closed by eon")
    if count_violations(tokens) != 0:
        raise ValueError("label has postfix violations")

"""Expression grammar: generation, labels, postfix validity.

Oracles implemented here, independent of the library code: a shunting-yard
infix-to-postfix converter, a literal stack simulator for violation
counting, and a postfix stack evaluator.
"""

import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from inkmath import grammar, vocab
from inkmath.grammar import BinOp, GenConfig, Numeral, ParseError


# -- oracles -------------------------------------------------------------------

def shunting_yard(tokens):
    """Classic infix-to-postfix conversion; numerals become (text, 'num')
    pairs so the output can be compared against to_rpn."""
    out = []
    stack = []
    i = 0
    prec = {"+": 1, "-": 1, "*": 2, "/": 2}
    while i < len(tokens):
        tok = tokens[i]
        if tok.isdigit() or tok == ".":
            text = []
            while i < len(tokens) and (tokens[i].isdigit() or tokens[i] == "."):
                text.append(tokens[i])
                i += 1
            out.append(("".join(text), "num"))
            continue
        if tok in prec:
            while stack and stack[-1] in prec and prec[stack[-1]] >= prec[tok]:
                out.append((stack.pop(), "op"))
            stack.append(tok)
        elif tok == "(":
            stack.append(tok)
        elif tok == ")":
            while stack and stack[-1] != "(":
                out.append((stack.pop(), "op"))
            assert stack, "unbalanced brackets"
            stack.pop()
        elif tok == "=":
            pass
        else:
            raise AssertionError(f"unexpected token {tok}")
        i += 1
    while stack:
        assert stack[-1] != "("
        out.append((stack.pop(), "op"))
    return out


def rpn_tokens_from_pairs(pairs):
    out = [vocab.BOS]
    for text, kind in pairs:
        if kind == "num":
            out.extend(text)
            out.append(vocab.EON)
        else:
            out.append(text)
    out.extend(["=", vocab.EOS])
    return out


def stack_simulate_violations(tokens):
    """Brute-force stack machine: push operands; an operator pops two and
    pushes one, with pops against an empty stack tracked as IOUs. A scan
    position whose effective depth (items minus IOUs) is negative is a
    violation, and the final depth's distance from one is added."""
    events = []
    in_run = False
    for tok in tokens:
        if tok in (vocab.PAD, vocab.BOS, vocab.EOS):
            in_run = False
            continue
        if tok.isdigit() or tok == ".":
            if not in_run:
                events.append("operand")
                in_run = True
            continue
        if tok == vocab.EON:
            if not in_run:
                events.append("operand")
            in_run = False
            continue
        in_run = False
        if tok == "=":
            continue
        if tok in ("(", ")"):
            events.append("bracket")
        elif tok in ("+", "-", "*", "/"):
            events.append("operator")
        else:
            events.append("garbage")

    violations = 0
    stack = []
    ious = 0
    for event in events:
        if event == "operand":
            stack.append(object())
        elif event in ("bracket", "garbage"):
            violations += 1
        else:
            for _ in range(2):
                if stack:
                    stack.pop()
                else:
                    ious += 1
            stack.append(object())
            if len(stack) - ious < 0:
                violations += 1
    return violations + abs(len(stack) - ious - 1)


def eval_postfix_oracle(pairs):
    stack = []
    for text, kind in pairs:
        if kind == "num":
            stack.append(Fraction(text))
        else:
            b, a = stack.pop(), stack.pop()
            stack.append({"+": a + b, "-": a - b, "*": a * b,
                          "/": a / b if b else None}[text])
    assert len(stack) == 1
    return stack[0]


# -- fixtures ------------------------------------------------------------------

CFG_PLAIN = GenConfig(max_ops=3, allow_brackets=False, int_digits=(1, 2),
                      dec_digits=(0, 1))
CFG_BRACKETS = GenConfig(max_ops=3, allow_brackets=True, int_digits=(1, 2),
                         dec_digits=(0, 1))


def table4_row4_tree():
    # 7.4*(3.8+9)=
    return BinOp("*", Numeral("7.4"), BinOp("+", Numeral("3.8"), Numeral("9"),
                                            bracketed=True))


def table4_row3_tree():
    # 9+(7/3-2)= ; its postfix form appears verbatim in the robustness table
    return BinOp("+", Numeral("9"),
                 BinOp("-", BinOp("/", Numeral("7"), Numeral("3")),
                       Numeral("2"), bracketed=True))


# -- generate -------------------------------------------------------------------

def test_generate_zero_ops_is_lone_numeral():
    tree = grammar.generate(GenConfig(max_ops=0), np.random.default_rng(0))
    assert isinstance(tree, Numeral)


def test_generate_deterministic_for_seed():
    a = [grammar.generate(CFG_BRACKETS, np.random.default_rng(42))
         for _ in range(20)]
    b = [grammar.generate(CFG_BRACKETS, np.random.default_rng(42))
         for _ in range(20)]
    assert a == b


def test_generate_respects_no_brackets():
    rng = np.random.default_rng(3)
    for _ in range(200):
        tree = grammar.generate(CFG_PLAIN, rng)
        stack = [tree]
        while stack:
            node = stack.pop()
            if isinstance(node, BinOp):
                assert not node.bracketed
                stack.extend([node.left, node.right])


def test_generate_round_trips_through_parse(rng_seed=11):
    rng = np.random.default_rng(rng_seed)
    for cfg in (CFG_PLAIN, CFG_BRACKETS):
        for _ in range(300):
            tree = grammar.generate(cfg, rng)
            parsed = grammar.parse_infix(grammar.to_infix(tree))
            assert _strip_brackets(parsed) == _strip_brackets(tree)


def _strip_brackets(node):
    if isinstance(node, Numeral):
        return node
    return BinOp(node.op, _strip_brackets(node.left),
                 _strip_brackets(node.right), bracketed=False)


def test_generate_values_finite():
    rng = np.random.default_rng(5)
    for _ in range(2000):
        tree = grammar.generate(CFG_BRACKETS, rng)
        value = grammar.evaluate(tree)
        assert value.denominator != 0


# -- to_infix -------------------------------------------------------------------

def test_to_infix_lone_numeral():
    assert grammar.to_infix(Numeral("5")) == ["5", "="]


def test_to_infix_table4_row4():
    assert grammar.to_infix(table4_row4_tree()) == [
        "7", ".", "4", "*", "(", "3", ".", "8", "+", "9", ")", "="]


# -- to_rpn ---------------------------------------------------------------------

def test_to_rpn_lone_numeral():
    assert grammar.to_rpn(Numeral("5")) == [
        vocab.BOS, "5", vocab.EON, "=", vocab.EOS]


def test_to_rpn_table4_row3():
    assert grammar.to_rpn(table4_row3_tree()) == [
        vocab.BOS, "9", vocab.EON, "7", vocab.EON, "3", vocab.EON, "/",
        "2", vocab.EON, "-", "+", "=", vocab.EOS]


def test_to_rpn_matches_shunting_yard_randomized():
    rng = np.random.default_rng(17)
    for cfg in (CFG_PLAIN, CFG_BRACKETS):
        for _ in range(500):
            tree = grammar.generate(cfg, rng)
            expected = rpn_tokens_from_pairs(shunting_yard(grammar.to_infix(tree)))
            assert grammar.to_rpn(tree) == expected


def test_to_rpn_matches_shunting_yard_exhaustive_small():
    # every tree shape with <= 3 operators over digits {1,2,3}; bracket
    # flags are enumerated up to 2 operators (the 3-op sweep covers shapes)
    digits = [Numeral(d) for d in "123"]

    def trees(k, with_flags):
        if k == 0:
            yield from digits
            return
        flags = (False, True) if with_flags else (False,)
        for kl in range(k):
            for op in vocab.OPERATORS:
                for left in trees(kl, with_flags):
                    for right in trees(k - 1 - kl, with_flags):
                        for flag in flags:
                            yield BinOp(op, left, right, bracketed=flag)

    checked = 0
    for k in range(0, 4):
        for tree in trees(k, with_flags=k <= 2):
            if _renders_ambiguously(tree):
                continue
            expected = rpn_tokens_from_pairs(shunting_yard(grammar.to_infix(tree)))
            assert grammar.to_rpn(tree) == expected
            checked += 1
    assert checked > 5000


def _renders_ambiguously(node, parent_prec=0, is_right=False):
    """True when the flat rendering of this subtree would re-parse into a
    different shape (only such trees are excluded from the oracle sweep,
    since the generator never builds them)."""
    if isinstance(node, Numeral):
        return False
    prec = grammar.PRECEDENCE[node.op]
    if not node.bracketed and (prec < parent_prec or
                               (is_right and prec == parent_prec)):
        return True
    # a node's own brackets shield it from its parent, not its children
    return (_renders_ambiguously(node.left, prec, False) or
            _renders_ambiguously(node.right, prec, True))


# -- parse_infix ------------------------------------------------------------------

def test_parse_lone_numeral():
    assert grammar.parse_infix(["5", "="]) == Numeral("5")


def test_parse_precedence():
    tree = grammar.parse_infix(list("2+3*4="))
    assert tree == BinOp("+", Numeral("2"), BinOp("*", Numeral("3"), Numeral("4")))


def test_parse_unclosed_bracket_position():
    with pytest.raises(ParseError) as err:
        grammar.parse_infix(["(", "2", "+", "3"])
    assert err.value.position == 4


def test_parse_rejects_trailing_garbage():
    with pytest.raises(ParseError):
        grammar.parse_infix(["5", "=", "5"])


def test_parse_rejects_double_decimal():
    with pytest.raises(ParseError):
        grammar.parse_infix(list("1.2.3="))


# -- evaluate ---------------------------------------------------------------------

def test_evaluate_integer_product():
    assert grammar.evaluate(BinOp("*", Numeral("4"), Numeral("6"))) == 24


def test_evaluate_table4_row4():
    assert grammar.evaluate(table4_row4_tree()) == Fraction("94.72")
    assert grammar.to_decimal(grammar.evaluate(table4_row4_tree())) == "94.72"


def test_evaluate_self_division_is_one():
    rng = np.random.default_rng(23)
    for _ in range(50):
        num = grammar._gen_numeral(GenConfig(), rng)
        if grammar.evaluate(num) == 0:
            continue
        assert grammar.evaluate(BinOp("/", num, num)) == 1


def test_evaluate_division_by_zero_raises():
    with pytest.raises(ZeroDivisionError):
        grammar.evaluate(BinOp("/", Numeral("1"), Numeral("0")))


def test_to_decimal_repeating():
    assert grammar.to_decimal(Fraction(1, 3), max_places=6) == "0.333333"
    assert grammar.to_decimal(Fraction(2, 3), max_places=6) == "0.666667"
    assert grammar.to_decimal(Fraction(-5, 2)) == "-2.5"
    assert grammar.to_decimal(Fraction(7)) == "7"


# -- count_violations ---------------------------------------------------------------

def test_violations_table4_row3_ground_truth():
    tokens = [vocab.BOS, "9", vocab.EON, "7", vocab.EON, "3", vocab.EON, "/",
              "2", vocab.EON, "-", "+", "=", vocab.EOS]
    assert grammar.count_violations(tokens) == 0


def test_violations_lone_operand():
    assert grammar.count_violations(["7"]) == 0
    assert grammar.count_violations(["7", ".", "4", vocab.EON]) == 0


def test_violations_leading_operator():
    # '+' underflows once, final counter 0: 1 + |0 - 1| = 2
    assert grammar.count_violations(["+", "3", vocab.EON]) == 2


def test_violations_brackets_count_one_each():
    assert grammar.count_violations(["(", "3", vocab.EON, ")"]) == 2


def test_violations_equals_transparent():
    assert grammar.count_violations(["3", vocab.EON, "=", "="]) == 0


def test_violations_exhaustive_vs_stack_simulation():
    alphabet = ["3", vocab.EON, "+"]
    total = 0
    for length in range(0, 8):
        for seq in itertools.product(alphabet, repeat=length):
            assert grammar.count_violations(seq) == stack_simulate_violations(seq), seq
            total += 1
    assert total == sum(3 ** k for k in range(8))


def test_violations_random_full_vocab_vs_stack_simulation():
    rng = np.random.default_rng(29)
    pool = list(vocab.TOKENS)
    for _ in range(20000):
        seq = [pool[i] for i in rng.integers(0, len(pool), rng.integers(0, 12))]
        assert grammar.count_violations(seq) == stack_simulate_violations(seq), seq


# -- evaluate_rpn --------------------------------------------------------------------

def test_evaluate_rpn_matches_tree_eval():
    rng = np.random.default_rng(31)
    for cfg in (CFG_PLAIN, CFG_BRACKETS):
        for _ in range(300):
            tree = grammar.generate(cfg, rng)
            assert grammar.evaluate_rpn(grammar.to_rpn(tree)) == grammar.evaluate(tree)


def test_evaluate_rpn_rejects_malformed():
    with pytest.raises(ValueError):
        grammar.evaluate_rpn(["+", "3"])


# -- rar ---------------------------------------------------------------------------

def test_rar_all_valid():
    preds = [[vocab.BOS, "5", vocab.EON, "=", vocab.EOS]] * 4
    assert grammar.rar(preds) == (1.0, 1.0)


def test_rar_half_bad():
    good = ["5", vocab.EON]
    bad = ["+", "3", vocab.EON]  # 2 violations
    lo, hi = grammar.rar([good, bad])
    assert (lo, hi) == (0.0, 0.5)


def test_rar_formula_at_realistic_rates():
    # 1000 outputs, 60 invalid carrying 67 violations in total gives the
    # range [93.3%, 94.0%]
    preds = [["5", vocab.EON]] * 940
    preds += [["+", "5", vocab.EON]] * 53     # 2 violations each
    preds += [["5", vocab.EON, "("]] * 7      # 1 violation each
    counts = [grammar.count_violations(p) for p in preds]
    assert sum(1 for c in counts if c > 0) == 60
    assert sum(counts) == 53 * 2 + 7
    lo, hi = grammar.rar(preds)
    assert abs(hi - 0.94) < 1e-12
    assert abs(lo - (1 - 0.113)) < 1e-12


def test_rar_empty_raises():
    with pytest.raises(ValueError):
        grammar.rar([])


# -- label invariants ----------------------------------------------------------------

@given(seed=st.integers(min_value=0, max_value=10**6))
@settings(max_examples=100, deadline=None)
def test_generated_labels_always_valid(seed):
    rng = np.random.default_rng(seed)
    cfg = CFG_BRACKETS if seed % 2 else CFG_PLAIN
    tree = grammar.generate(cfg, rng)
    label = grammar.to_rpn(tree)
    grammar.validate_rpn_label(label)
    assert grammar.count_violations(label) == 0
    assert grammar.evaluate_rpn(label) == grammar.evaluate(tree)

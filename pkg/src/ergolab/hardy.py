"""Logarithmico-exponential phase functions.

Parses the closed expression class built from real constants, the variable
x, +, *, exp and log (with ^, /, and unary minus as sugar), evaluates such
functions mod 1 at large arguments with a rigorous error bound, measures
their second-order difference behaviour, and computes normalized
exponential sums (1/N) sum e(p(n)).

Concrete syntax (EBNF):

    expr    = term { ("+" | "-") term } ;
    term    = unary { ("*" | "/") unary } ;
    unary   = ("+" | "-") unary | power ;
    power   = atom [ "^" unary ] ;              (right associative)
    atom    = NUMBER | "x" | "(" expr ")"
            | "exp" "(" expr ")" | "log" "(" expr ")" ;
    NUMBER  = decimal literal, optionally with fraction part and exponent ;

u^v desugars to exp(v*log(u)) (so x^(3/2) is exp(3/2 * log x)), u/v to
u * exp(-log v) unless v is constant, and subtraction to addition of a
(-1) multiple.  Numeric literals and folded constants are kept as exact
rationals so that evaluation at any working precision matches the written
expression, not a double-rounded shadow of it.

The key precision contract: evaluating p(x) mod 1 needs
precision_bits >= 64 + ceil(log2(1 + |p(x)|)), which leaves at least ~50
correct fractional bits after the integer part cancels.  At desk scale
(p(x) ~ 1e9..1e14) double precision would leave fewer than 10.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from decimal import Decimal
from fractions import Fraction
from typing import Optional, Union

import numpy as np
from mpmath import iv, mp

TWO_PI = 2.0 * math.pi

_VALIDATION_PREC = 128
_VALIDATION_POINTS = 25
_VALIDATION_TOP = 1e12


class ExpressionError(ValueError):
    """Rejected expression text; carries the source position when known."""

    def __init__(self, message: str, position: Optional[int] = None):
        if position is not None:
            message = f"{message} (at position {position})"
        super().__init__(message)
        self.position = position


class EvalDomainError(ValueError):
    """log of a nonpositive value during evaluation."""


class InsufficientPrecisionError(ValueError):
    """Working precision violates the precision rule for this argument."""


# ---------------------------------------------------------------------------
# AST: core node kinds are exactly {constant, x, +, *, exp, log}.

@dataclass(frozen=True)
class Const:
    value: Fraction


@dataclass(frozen=True)
class Var:
    pass


@dataclass(frozen=True)
class Add:
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Mul:
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Exp:
    arg: "Node"


@dataclass(frozen=True)
class Log:
    arg: "Node"


Node = Union[Const, Var, Add, Mul, Exp, Log]


def node_key(node: Node) -> str:
    """Canonical serialization; used for fingerprints and cache keys."""
    if isinstance(node, Const):
        return f"c({node.value})"
    if isinstance(node, Var):
        return "x"
    if isinstance(node, Add):
        return f"add({node_key(node.left)},{node_key(node.right)})"
    if isinstance(node, Mul):
        return f"mul({node_key(node.left)},{node_key(node.right)})"
    if isinstance(node, Exp):
        return f"exp({node_key(node.arg)})"
    return f"log({node_key(node.arg)})"


@dataclass(frozen=True)
class HardyExpr:
    """A parsed phase function with its declared growth exponent.

    epsilon_hint is the user-declared epsilon of the growth class (the
    second-difference scale x^(epsilon-1) y z); it is not inferred from the
    tree.  integer_polynomial marks expressions that are polynomials with
    integer coefficients, for which fractional parts at integer arguments
    are exactly zero.
    """

    root: Node
    source: str
    epsilon_hint: Optional[float]
    integer_polynomial: bool

    @property
    def key(self) -> str:
        return node_key(self.root)

    def with_epsilon(self, epsilon: float) -> "HardyExpr":
        return HardyExpr(self.root, self.source, epsilon, self.integer_polynomial)


@dataclass(frozen=True)
class PhaseValue:
    """p(x) mod 1 with the precision actually used and a rigorous bound.

    error_bound measures distance on the circle: for values within
    error_bound of an integer, frac may legitimately sit near 1 instead
    of 0.
    """

    frac: float
    precision_bits: int
    error_bound: float


# ---------------------------------------------------------------------------
# Raw parse tree (keeps sugar so integer-polynomial structure is visible).

@dataclass(frozen=True)
class _RNum:
    value: Fraction


@dataclass(frozen=True)
class _RVar:
    pass


@dataclass(frozen=True)
class _RBin:
    op: str  # + - * / ^
    left: "_Raw"
    right: "_Raw"


@dataclass(frozen=True)
class _RNeg:
    arg: "_Raw"


@dataclass(frozen=True)
class _RCall:
    fn: str  # exp | log
    arg: "_Raw"


_Raw = Union[_RNum, _RVar, _RBin, _RNeg, _RCall]


class _Tokenizer:
    def __init__(self, src: str):
        self.src = src
        self.pos = 0

    def tokens(self):
        src, i, n = self.src, 0, len(self.src)
        out = []
        while i < n:
            ch = src[i]
            if ch.isspace():
                i += 1
                continue
            if ch in "+-*/^()":
                out.append((ch, ch, i))
                i += 1
                continue
            if ch.isdigit() or ch == ".":
                j = i
                while j < n and (src[j].isdigit() or src[j] == "."):
                    j += 1
                if j < n and src[j] in "eE":
                    k = j + 1
                    if k < n and src[k] in "+-":
                        k += 1
                    if k < n and src[k].isdigit():
                        j = k
                        while j < n and src[j].isdigit():
                            j += 1
                text = src[i:j]
                try:
                    value = Fraction(Decimal(text))
                except ArithmeticError:
                    raise ExpressionError(f"malformed number {text!r}", i)
                out.append(("num", value, i))
                i = j
                continue
            if ch.isalpha() or ch == "_":
                j = i
                while j < n and (src[j].isalnum() or src[j] == "_"):
                    j += 1
                name = src[i:j]
                if name in ("x", "exp", "log"):
                    out.append((name, name, i))
                else:
                    raise ExpressionError(f"unsupported primitive {name!r}", i)
                i = j
                continue
            raise ExpressionError(f"unexpected character {ch!r}", i)
        out.append(("end", None, n))
        return out


class _Parser:
    def __init__(self, src: str):
        self.toks = _Tokenizer(src).tokens()
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def advance(self):
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def expect(self, kind: str):
        tok = self.advance()
        if tok[0] != kind:
            raise ExpressionError(f"expected {kind!r}, found {tok[0]!r}", tok[2])
        return tok

    def parse(self) -> _Raw:
        node = self.expr()
        tok = self.peek()
        if tok[0] != "end":
            raise ExpressionError(f"unexpected trailing {tok[0]!r}", tok[2])
        return node

    def expr(self) -> _Raw:
        node = self.term()
        while self.peek()[0] in ("+", "-"):
            op = self.advance()[0]
            node = _RBin(op, node, self.term())
        return node

    def term(self) -> _Raw:
        node = self.unary()
        while self.peek()[0] in ("*", "/"):
            op = self.advance()[0]
            node = _RBin(op, node, self.unary())
        return node

    def unary(self) -> _Raw:
        tok = self.peek()
        if tok[0] == "-":
            self.advance()
            return _RNeg(self.unary())
        if tok[0] == "+":
            self.advance()
            return self.unary()
        return self.power()

    def power(self) -> _Raw:
        base = self.atom()
        if self.peek()[0] == "^":
            self.advance()
            return _RBin("^", base, self.unary())
        return base

    def atom(self) -> _Raw:
        tok = self.advance()
        kind = tok[0]
        if kind == "num":
            return _RNum(tok[1])
        if kind == "x":
            return _RVar()
        if kind == "(":
            node = self.expr()
            self.expect(")")
            return node
        if kind in ("exp", "log"):
            self.expect("(")
            arg = self.expr()
            self.expect(")")
            return _RCall(kind, arg)
        raise ExpressionError(f"unexpected {kind!r}", tok[2])


def _is_integer_polynomial(raw: _Raw) -> bool:
    if isinstance(raw, _RNum):
        return raw.value.denominator == 1
    if isinstance(raw, _RVar):
        return True
    if isinstance(raw, _RNeg):
        return _is_integer_polynomial(raw.arg)
    if isinstance(raw, _RBin):
        if raw.op in ("+", "-", "*"):
            return _is_integer_polynomial(raw.left) and _is_integer_polynomial(raw.right)
        if raw.op == "^":
            return (
                _is_integer_polynomial(raw.left)
                and isinstance(raw.right, _RNum)
                and raw.right.value.denominator == 1
                and raw.right.value >= 0
            )
        return False
    return False


def _const_of(node: Node) -> Optional[Fraction]:
    return node.value if isinstance(node, Const) else None


def _fold_add(left: Node, right: Node) -> Node:
    lc, rc = _const_of(left), _const_of(right)
    if lc is not None and rc is not None:
        return Const(lc + rc)
    return Add(left, right)


def _fold_mul(left: Node, right: Node) -> Node:
    lc, rc = _const_of(left), _const_of(right)
    if lc is not None and rc is not None:
        return Const(lc * rc)
    return Mul(left, right)


def _desugar(raw: _Raw) -> Node:
    if isinstance(raw, _RNum):
        return Const(raw.value)
    if isinstance(raw, _RVar):
        return Var()
    if isinstance(raw, _RNeg):
        return _fold_mul(Const(Fraction(-1)), _desugar(raw.arg))
    if isinstance(raw, _RCall):
        return Exp(_desugar(raw.arg)) if raw.fn == "exp" else Log(_desugar(raw.arg))
    left = _desugar(raw.left)
    right = _desugar(raw.right)
    if raw.op == "+":
        return _fold_add(left, right)
    if raw.op == "-":
        return _fold_add(left, _fold_mul(Const(Fraction(-1)), right))
    if raw.op == "*":
        return _fold_mul(left, right)
    if raw.op == "/":
        rc = _const_of(right)
        if rc is not None:
            if rc == 0:
                raise ExpressionError("division by zero constant")
            return _fold_mul(left, Const(1 / rc))
        return _fold_mul(left, Exp(_fold_mul(Const(Fraction(-1)), Log(right))))
    # ^ : u^v = exp(v * log u); exact fold for constant integer powers
    rc = _const_of(right)
    lc = _const_of(left)
    if rc is not None and lc is not None and rc.denominator == 1:
        return Const(lc ** int(rc))
    return Exp(_fold_mul(right, Log(left)))


# ---------------------------------------------------------------------------
# Evaluation.

def _power_form(root: Node) -> Optional[Fraction]:
    """Exponent q when the tree is exactly x^q (exp(q log x) in any operand
    order, or plain x); lets the hot loop use one mp.power call."""
    if isinstance(root, Var):
        return Fraction(1)
    if isinstance(root, Exp) and isinstance(root.arg, Mul):
        left, right = root.arg.left, root.arg.right
        if isinstance(left, Const) and isinstance(right, Log) and isinstance(right.arg, Var):
            return left.value
        if isinstance(right, Const) and isinstance(left, Log) and isinstance(left.arg, Var):
            return right.value
    return None


def _compile_mpf(node: Node):
    """Closure tree for repeated mpf evaluation (cuts dispatch overhead)."""
    if isinstance(node, Const):
        num, den = node.value.numerator, node.value.denominator
        if den == 1:
            return lambda x: mp.mpf(num)
        return lambda x: mp.mpf(num) / den
    if isinstance(node, Var):
        return lambda x: x
    if isinstance(node, Add):
        f, g = _compile_mpf(node.left), _compile_mpf(node.right)
        return lambda x: f(x) + g(x)
    if isinstance(node, Mul):
        f, g = _compile_mpf(node.left), _compile_mpf(node.right)
        return lambda x: f(x) * g(x)
    if isinstance(node, Exp):
        f = _compile_mpf(node.arg)
        return lambda x: mp.exp(f(x))
    f = _compile_mpf(node.arg)

    def ev_log(x):
        arg = f(x)
        if arg <= 0:
            raise EvalDomainError(f"log of nonpositive value {arg}")
        return mp.log(arg)

    return ev_log


def _eval_mpf(node: Node, x):
    """Evaluate at an mpf argument under the caller's mp.prec."""
    if isinstance(node, Const):
        return mp.mpf(node.value.numerator) / node.value.denominator
    if isinstance(node, Var):
        return x
    if isinstance(node, Add):
        return _eval_mpf(node.left, x) + _eval_mpf(node.right, x)
    if isinstance(node, Mul):
        return _eval_mpf(node.left, x) * _eval_mpf(node.right, x)
    if isinstance(node, Exp):
        return mp.exp(_eval_mpf(node.arg, x))
    arg = _eval_mpf(node.arg, x)
    if arg <= 0:
        raise EvalDomainError(f"log of nonpositive value {arg}")
    return mp.log(arg)


def _eval_interval(node: Node, x):
    """Evaluate to an outward-rounded interval under the caller's iv.prec."""
    if isinstance(node, Const):
        return iv.mpf(node.value.numerator) / node.value.denominator
    if isinstance(node, Var):
        return x
    if isinstance(node, Add):
        return _eval_interval(node.left, x) + _eval_interval(node.right, x)
    if isinstance(node, Mul):
        return _eval_interval(node.left, x) * _eval_interval(node.right, x)
    if isinstance(node, Exp):
        return iv.exp(_eval_interval(node.arg, x))
    arg = _eval_interval(node.arg, x)
    if arg.a <= 0:
        raise EvalDomainError(f"log of possibly nonpositive value {arg}")
    return iv.log(arg)


def _validate_domain(root: Node, source: str, domain_start: float) -> None:
    xs = np.geomspace(max(domain_start, 1e-9), _VALIDATION_TOP, _VALIDATION_POINTS)
    old = mp.prec
    mp.prec = _VALIDATION_PREC
    try:
        for xv in [domain_start, *xs.tolist()]:
            try:
                _eval_mpf(root, mp.mpf(xv))
            except EvalDomainError as exc:
                raise ExpressionError(
                    f"expression {source!r} undefined at x={xv:g}: {exc}"
                ) from exc
    finally:
        mp.prec = old


def parse_expression(
    src: str,
    epsilon_hint: Optional[float] = None,
    domain_start: float = 1.0,
) -> HardyExpr:
    """Parse source text into a validated HardyExpr.

    Rejects empty input, syntax errors (with position), and primitives
    outside the exp/log algebra.  A sweep over [domain_start, 1e12]
    confirms evaluation is defined (all log arguments positive) there.
    """
    if not src or not src.strip():
        raise ExpressionError("empty expression")
    if epsilon_hint is not None and not 0.0 < epsilon_hint < 1.0:
        raise ValueError(f"epsilon_hint must lie in (0, 1), got {epsilon_hint}")
    raw = _Parser(src).parse()
    root = _desugar(raw)
    _validate_domain(root, src, domain_start)
    return HardyExpr(root, src, epsilon_hint, _is_integer_polynomial(raw))


def power_phase(exponent: Union[str, float, Fraction], epsilon_hint: Optional[float] = None) -> HardyExpr:
    """Preset p(x) = x^q; for q = 1 + eps in (1, 2) the epsilon hint is q - 1.

    These presets satisfy both standing hypotheses on p (bounded second
    difference at scale x^(eps-1) y z, and superlogarithmic distance from
    rational polynomials).
    """
    q = Fraction(exponent) if not isinstance(exponent, Fraction) else exponent
    if epsilon_hint is None and 1 < q < 2:
        epsilon_hint = float(q - 1)
    return parse_expression(f"x^({q})", epsilon_hint=epsilon_hint)


def magnitude_bits(p: HardyExpr, x: Union[int, float]) -> int:
    """ceil(log2(1 + |p(x)|)) - the integer-part size the rule must cover."""
    old = mp.prec
    mp.prec = 96
    try:
        val = abs(_eval_mpf(p.root, mp.mpf(x)))
        return int(mp.ceil(mp.log(1 + val, 2)))
    finally:
        mp.prec = old


def minimum_precision(p: HardyExpr, x: Union[int, float]) -> int:
    """Smallest precision_bits satisfying the rule at argument x."""
    return 64 + magnitude_bits(p, x)


def eval_mod1(p: HardyExpr, x: int, precision_bits: int) -> PhaseValue:
    """Fractional part of p(x) with a rigorous (interval) error bound.

    Uses outward-rounded interval arithmetic at precision_bits, so
    error_bound genuinely encloses |computed - true| in the circle metric.
    Raises InsufficientPrecisionError when precision_bits fails the rule
    for the value actually encountered; integer polynomials at integer
    arguments short-circuit to an exact zero.
    """
    if x < 1 or int(x) != x:
        raise ValueError(f"argument must be a positive integer, got {x!r}")
    if precision_bits < 1:
        raise ValueError("precision_bits must be positive")
    if p.integer_polynomial:
        return PhaseValue(0.0, precision_bits, 0.0)

    old = iv.prec
    iv.prec = precision_bits
    try:
        enclosure = _eval_interval(p.root, iv.mpf(int(x)))
        lo, hi = mp.mpf(enclosure.a), mp.mpf(enclosure.b)
    finally:
        iv.prec = old

    magnitude = max(abs(lo), abs(hi))
    required = 64 + int(mp.ceil(mp.log(1 + magnitude, 2)))
    if precision_bits < required:
        raise InsufficientPrecisionError(
            f"precision rule needs >= {required} bits at x={x}, got {precision_bits}"
        )
    width = hi - lo
    if width >= 0.5:
        raise InsufficientPrecisionError(
            f"enclosure width {width} too wide to resolve a fractional part"
        )
    old = mp.prec
    mp.prec = precision_bits + 8
    try:
        mid = (mp.mpf(lo) + mp.mpf(hi)) / 2
        frac = mid - mp.floor(mid)
    finally:
        mp.prec = old
    fr = float(frac)
    if fr >= 1.0:
        fr = 0.0
    error_bound = float(width) / 2.0 + 2.0 ** -53
    return PhaseValue(fr, precision_bits, error_bound)


def phase_fractions(
    p: HardyExpr,
    N: int,
    precision_bits: Optional[int] = None,
    start: int = 1,
) -> np.ndarray:
    """frac(p(n)) for n = start..N as float64, one mpf pass.

    The workhorse behind exponential sums and weight tables; the rule is
    enforced against the largest magnitude actually seen.  precision_bits
    None picks the rule minimum at x=N plus a 16-bit margin.
    """
    if N < start:
        raise ValueError("empty argument range")
    count = N - start + 1
    if p.integer_polynomial:
        return np.zeros(count, dtype=np.float64)
    if precision_bits is None:
        precision_bits = minimum_precision(p, N) + 16

    out = np.empty(count, dtype=np.float64)
    max_mag = 0.0
    old = mp.prec
    mp.prec = precision_bits
    try:
        floor = mp.floor
        q = _power_form(p.root)
        if q is not None:
            qm = mp.mpf(q.numerator) / q.denominator
            power = mp.power
            for i in range(count):
                v = power(start + i, qm)
                av = abs(v)
                if av > max_mag:
                    max_mag = float(av)
                out[i] = float(v - floor(v))
        else:
            fn = _compile_mpf(p.root)
            mpf = mp.mpf
            for i in range(count):
                v = fn(mpf(start + i))
                av = abs(v)
                if av > max_mag:
                    max_mag = float(av)
                out[i] = float(v - floor(v))
    finally:
        mp.prec = old
    required = 64 + int(math.ceil(math.log2(1.0 + max_mag)))
    if precision_bits < required:
        raise InsufficientPrecisionError(
            f"precision rule needs >= {required} bits on 1..{N}, got {precision_bits}"
        )
    np.clip(out, 0.0, np.nextafter(1.0, 0.0), out=out)
    return out


def unit_phases(fractions: np.ndarray) -> np.ndarray:
    """e(t) = exp(2 pi i t) applied elementwise."""
    return np.exp(2j * np.pi * np.asarray(fractions, dtype=np.float64))


def prefix_means(terms: np.ndarray, schedule) -> np.ndarray:
    """(1/N) sum_{n<=N} terms[n-1] for each N in schedule.

    Each mean is an independent fixed-shape pairwise sum over terms[:N];
    every averaging routine in the package goes through this so that equal
    term arrays give bit-equal results.
    """
    return np.array([np.sum(terms[:N]) / N for N in schedule], dtype=np.complex128)


def exp_sum(p: HardyExpr, N: int, precision_bits: Optional[int] = None) -> complex:
    """(1/N) sum_{n<=N} e(p(n)); magnitude <= 1."""
    fr = phase_fractions(p, N, precision_bits)
    return complex(prefix_means(unit_phases(fr), [N])[0])


def second_difference_ratio(
    p: HardyExpr,
    x: float,
    y: float,
    z: float,
    epsilon: Optional[float] = None,
) -> float:
    """|p(x+y+z) - p(x+y) - p(x+z) + p(x)| / (x^(eps-1) y z).

    The numerator cancels to a quantity many orders below p itself, so the
    working precision is raised until two evaluations 64 bits apart agree;
    the returned ratio is then accurate to ~1e-12 of the normalizer.
    """
    if epsilon is None:
        epsilon = p.epsilon_hint
    if epsilon is None:
        raise ValueError("expression has no epsilon_hint and no epsilon was given")
    if not (x > 0 and y > 0 and z > 0):
        raise ValueError("x, y, z must all be positive")

    def second_difference(bits: int):
        old = mp.prec
        mp.prec = bits
        try:
            root = p.root
            return (
                _eval_mpf(root, mp.mpf(x) + y + z)
                - _eval_mpf(root, mp.mpf(x) + y)
                - _eval_mpf(root, mp.mpf(x) + z)
                + _eval_mpf(root, mp.mpf(x))
            )
        finally:
            mp.prec = old

    bits = minimum_precision(p, x + y + z) + 32
    old = mp.prec
    mp.prec = 96
    try:
        denom = mp.power(mp.mpf(x), mp.mpf(epsilon) - 1) * y * z
    finally:
        mp.prec = old

    prev = second_difference(bits)
    for _ in range(16):
        bits += 64
        cur = second_difference(bits)
        if abs(cur - prev) <= denom * mp.mpf(2) ** -40:
            return float(abs(cur) / denom)
        prev = cur
    raise InsufficientPrecisionError(
        f"second difference did not stabilize below {bits} bits"
    )

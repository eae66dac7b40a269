"""Sensor conditions and capability conditions.

Both are small immutable expression trees with a textual surface syntax::

    LIT101 >= 250 and LIT101 <= 1100
    [MV101,open] in _ and X == _
    _ - {[p1,on],[p2,on]} != {}

Shorthands (``in``, ``not in``, ``!=``, ``not <=``, a bare set) are
normalised into the core forms ``true``, ``<=`` (subset), ``==``, ``and``,
``or``, ``not`` while parsing.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .capabilities import Capability, format_set
from .errors import ConditionSyntaxError, UnboundVariableError, UnknownSensorError

# ---------------------------------------------------------------------------
# sensor conditions

CMP_OPS = ("<", "<=", "=", ">=", ">")
_CMP_FUNCS = {
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    "=": lambda a, b: a == b,
    ">=": lambda a, b: a >= b,
    ">": lambda a, b: a > b,
}

# bytecode opcodes understood by the plant kernels
OP_TRUE, OP_FALSE, OP_CMP, OP_AND, OP_OR, OP_NOT = range(6)


class SensorCondition:
    """Base class for sensor-condition nodes."""

    def sensors(self) -> set:
        out: set = set()
        self._collect(out)
        return out

    def _collect(self, out):
        pass

    def __and__(self, other):
        return SAnd((self, other))

    def __str__(self):
        return format_sensor_condition(self)


@dataclass(frozen=True)
class STrue(SensorCondition):
    def evaluate(self, readings):
        return True


@dataclass(frozen=True)
class SFalse(SensorCondition):
    def evaluate(self, readings):
        return False


@dataclass(frozen=True)
class Cmp(SensorCondition):
    sensor: str
    op: str
    value: float

    def __post_init__(self):
        if self.op not in _CMP_FUNCS:
            raise ValueError(f"unknown comparison {self.op!r}")
        object.__setattr__(self, "value", float(self.value))

    def evaluate(self, readings):
        try:
            v = readings[self.sensor]
        except KeyError:
            raise UnknownSensorError(f"unknown sensor {self.sensor!r}") from None
        return _CMP_FUNCS[self.op](v, self.value)

    def _collect(self, out):
        out.add(self.sensor)


@dataclass(frozen=True)
class SAnd(SensorCondition):
    items: tuple

    def evaluate(self, readings):
        return all(c.evaluate(readings) for c in self.items)

    def _collect(self, out):
        for c in self.items:
            c._collect(out)


@dataclass(frozen=True)
class SOr(SensorCondition):
    items: tuple

    def evaluate(self, readings):
        return any(c.evaluate(readings) for c in self.items)

    def _collect(self, out):
        for c in self.items:
            c._collect(out)


@dataclass(frozen=True)
class SNot(SensorCondition):
    item: SensorCondition

    def evaluate(self, readings):
        return not self.item.evaluate(readings)

    def _collect(self, out):
        self.item._collect(out)


TRUE = STrue()


def eval_sensor_condition(gamma: SensorCondition, readings: Mapping[str, float]) -> bool:
    return gamma.evaluate(readings)


def compile_sensor_condition(gamma: SensorCondition, sensor_index: Mapping[str, int]):
    """Flatten ``gamma`` into postfix bytecode ``(ops, sensors, cmps, consts)``."""
    ops, sens, cmps, consts = [], [], [], []

    def emit(op, s=-1, c=-1, k=0.0):
        ops.append(op)
        sens.append(s)
        cmps.append(c)
        consts.append(k)

    def walk(node):
        if isinstance(node, STrue):
            emit(OP_TRUE)
        elif isinstance(node, SFalse):
            emit(OP_FALSE)
        elif isinstance(node, Cmp):
            if node.sensor not in sensor_index:
                raise UnknownSensorError(f"unknown sensor {node.sensor!r}")
            emit(OP_CMP, sensor_index[node.sensor], CMP_OPS.index(node.op), node.value)
        elif isinstance(node, (SAnd, SOr)):
            if not node.items:
                emit(OP_TRUE if isinstance(node, SAnd) else OP_FALSE)
                return
            walk(node.items[0])
            for item in node.items[1:]:
                walk(item)
                emit(OP_AND if isinstance(node, SAnd) else OP_OR)
        elif isinstance(node, SNot):
            walk(node.item)
            emit(OP_NOT)
        else:
            raise TypeError(f"not a sensor condition: {node!r}")

    walk(gamma)
    return (np.asarray(ops, dtype=np.int64), np.asarray(sens, dtype=np.int64),
            np.asarray(cmps, dtype=np.int64), np.asarray(consts, dtype=np.float64))


# ---------------------------------------------------------------------------
# capability conditions


class Exp:
    pass


@dataclass(frozen=True)
class Hole(Exp):
    def value(self, Y, alpha):
        return Y


@dataclass(frozen=True)
class Var(Exp):
    name: str

    def value(self, Y, alpha):
        try:
            return alpha[self.name]
        except KeyError:
            raise UnboundVariableError(f"variable {self.name!r} is unbound") from None


@dataclass(frozen=True)
class Lit(Exp):
    caps: frozenset

    def value(self, Y, alpha):
        return self.caps


@dataclass(frozen=True)
class Diff(Exp):
    left: Exp
    right: Exp

    def value(self, Y, alpha):
        return self.left.value(Y, alpha) - self.right.value(Y, alpha)


@dataclass(frozen=True)
class Union(Exp):
    left: Exp
    right: Exp

    def value(self, Y, alpha):
        return self.left.value(Y, alpha) | self.right.value(Y, alpha)


class CapabilityCondition:
    def variables(self) -> set:
        out: set = set()
        self._vars(out)
        return out

    def _vars(self, out):
        pass

    def __str__(self):
        return format_capability_condition(self)


def _exp_vars(e, out):
    if isinstance(e, Var):
        out.add(e.name)
    elif isinstance(e, (Diff, Union)):
        _exp_vars(e.left, out)
        _exp_vars(e.right, out)


@dataclass(frozen=True)
class CTrue(CapabilityCondition):
    def evaluate(self, Y, alpha):
        return True


@dataclass(frozen=True)
class CFalse(CapabilityCondition):
    def evaluate(self, Y, alpha):
        return False


@dataclass(frozen=True)
class Subset(CapabilityCondition):
    left: Exp
    right: Exp

    def evaluate(self, Y, alpha):
        return self.left.value(Y, alpha) <= self.right.value(Y, alpha)

    def _vars(self, out):
        _exp_vars(self.left, out)
        _exp_vars(self.right, out)


@dataclass(frozen=True)
class Eq(CapabilityCondition):
    left: Exp
    right: Exp

    def evaluate(self, Y, alpha):
        return self.left.value(Y, alpha) == self.right.value(Y, alpha)

    def _vars(self, out):
        _exp_vars(self.left, out)
        _exp_vars(self.right, out)


@dataclass(frozen=True)
class CAnd(CapabilityCondition):
    items: tuple

    def evaluate(self, Y, alpha):
        for c in self.items:
            if not c.evaluate(Y, alpha):
                return False
        return True

    def _vars(self, out):
        for c in self.items:
            c._vars(out)


@dataclass(frozen=True)
class COr(CapabilityCondition):
    items: tuple

    def evaluate(self, Y, alpha):
        for c in self.items:
            if c.evaluate(Y, alpha):
                return True
        return False

    def _vars(self, out):
        for c in self.items:
            c._vars(out)


@dataclass(frozen=True)
class CNot(CapabilityCondition):
    item: CapabilityCondition

    def evaluate(self, Y, alpha):
        return not self.item.evaluate(Y, alpha)

    def _vars(self, out):
        self.item._vars(out)


CTRUE = CTrue()
HOLE = Hole()


def eval_capability_condition(phi: CapabilityCondition, Y: frozenset, alpha: Mapping | None = None) -> bool:
    return phi.evaluate(frozenset(Y), alpha or {})


# constructors for the shorthand forms


def member(y: Capability, e: Exp = HOLE) -> CapabilityCondition:
    return Subset(Lit(frozenset([y])), e)


def not_member(y: Capability, e: Exp = HOLE) -> CapabilityCondition:
    return CNot(member(y, e))


def exactly(caps) -> CapabilityCondition:
    return Eq(HOLE, Lit(frozenset(caps)))


def not_equal(a: Exp, b: Exp) -> CapabilityCondition:
    return CNot(Eq(a, b))


def conj(*items) -> CapabilityCondition:
    flat = []
    for c in items:
        if isinstance(c, CTrue):
            continue
        if isinstance(c, CAnd):
            flat.extend(c.items)
        else:
            flat.append(c)
    if not flat:
        return CTRUE
    if len(flat) == 1:
        return flat[0]
    return CAnd(tuple(flat))


def sconj(*items) -> SensorCondition:
    flat = []
    for c in items:
        if isinstance(c, STrue):
            continue
        if isinstance(c, SAnd):
            flat.extend(c.items)
        else:
            flat.append(c)
    if not flat:
        return TRUE
    if len(flat) == 1:
        return flat[0]
    return SAnd(tuple(flat))


# ---------------------------------------------------------------------------
# formatting


def _fmt_num(v: float) -> str:
    return f"{v:g}" if float(v) == float(f"{v:g}") else repr(float(v))


def format_sensor_condition(g: SensorCondition) -> str:
    if isinstance(g, STrue):
        return "true"
    if isinstance(g, SFalse):
        return "false"
    if isinstance(g, Cmp):
        return f"{g.sensor} {g.op} {_fmt_num(g.value)}"
    if isinstance(g, SNot):
        return f"not {_wrap_s(g.item)}"
    if isinstance(g, (SAnd, SOr)):
        sep = " and " if isinstance(g, SAnd) else " or "
        return sep.join(_wrap_s(c) for c in g.items)
    raise TypeError(g)


def _wrap_s(g):
    s = format_sensor_condition(g)
    return f"({s})" if isinstance(g, (SAnd, SOr)) else s


def format_exp(e: Exp) -> str:
    if isinstance(e, Hole):
        return "_"
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Lit):
        return format_set(e.caps)
    if isinstance(e, Diff):
        return f"({format_exp(e.left)} - {format_exp(e.right)})"
    if isinstance(e, Union):
        return f"({format_exp(e.left)} | {format_exp(e.right)})"
    raise TypeError(e)


def format_capability_condition(c: CapabilityCondition) -> str:
    if isinstance(c, CTrue):
        return "true"
    if isinstance(c, CFalse):
        return "false"
    if isinstance(c, Subset):
        if isinstance(c.left, Lit) and len(c.left.caps) == 1:
            (y,) = c.left.caps
            return f"{y} in {format_exp(c.right)}"
        return f"{format_exp(c.left)} <= {format_exp(c.right)}"
    if isinstance(c, Eq):
        return f"{format_exp(c.left)} == {format_exp(c.right)}"
    if isinstance(c, CNot):
        inner = c.item
        if isinstance(inner, Subset) and isinstance(inner.left, Lit) and len(inner.left.caps) == 1:
            (y,) = inner.left.caps
            return f"{y} not in {format_exp(inner.right)}"
        if isinstance(inner, Eq):
            return f"{format_exp(inner.left)} != {format_exp(inner.right)}"
        if isinstance(inner, Subset):
            return f"{format_exp(inner.left)} not <= {format_exp(inner.right)}"
        return f"not {_wrap_c(inner)}"
    if isinstance(c, (CAnd, COr)):
        sep = " and " if isinstance(c, CAnd) else " or "
        return sep.join(_wrap_c(x) for x in c.items)
    raise TypeError(c)


def _wrap_c(c):
    s = format_capability_condition(c)
    return f"({s})" if isinstance(c, (CAnd, COr)) else s


# ---------------------------------------------------------------------------
# parsing

_TOKEN_RE = re.compile(r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][-+]?\d+)?)
  | (?P<op><=|>=|==|!=|&&|\|\||[<>=!(){}\[\],_|\-&]|[∧∨¬≤≥≠⊆⊄∈∉∅∖∪])
  | (?P<name>[A-Za-z][A-Za-z0-9_.]*)
""", re.VERBOSE)

_ALIASES = {
    "&&": "and", "&": "and", "∧": "and",
    "||": "or", "∨": "or",
    "!": "not", "¬": "not",
    "≤": "<=", "≥": ">=", "≠": "!=", "⊆": "<=",
    "∖": "-", "∪": "|",
}
_KEYWORDS = {"and", "or", "not", "in", "true", "false"}


class _Tok:
    __slots__ = ("kind", "text", "pos")

    def __init__(self, kind, text, pos):
        self.kind, self.text, self.pos = kind, text, pos

    def __repr__(self):
        return f"{self.kind}:{self.text}@{self.pos}"


def _tokenize(text: str):
    toks = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise ConditionSyntaxError(f"unexpected character {text[pos]!r}", text, pos)
        kind = m.lastgroup
        tok = m.group(kind)
        if kind == "op":
            tok = _ALIASES.get(tok, tok)
            if tok in ("and", "or", "not"):
                kind = "kw"
        elif kind == "name" and tok.lower() in _KEYWORDS:
            kind, tok = "kw", tok.lower()
        if kind != "ws":
            toks.append(_Tok(kind, tok, pos))
        pos = m.end()
    toks.append(_Tok("eof", "", len(text)))
    return toks


class _Parser:
    def __init__(self, text, variables=None):
        self.text = text
        self.toks = _tokenize(text)
        self.i = 0
        self.variables = set(variables) if variables is not None else None

    @property
    def tok(self):
        return self.toks[self.i]

    def error(self, msg, tok=None):
        tok = tok or self.tok
        raise ConditionSyntaxError(msg, self.text, tok.pos)

    def accept(self, text, kind=None):
        t = self.tok
        if t.text == text and (kind is None or t.kind == kind):
            self.i += 1
            return t
        return None

    def expect(self, text):
        t = self.accept(text)
        if t is None:
            self.error(f"expected {text!r}, found {self.tok.text or 'end of input'!r}")
        return t

    def done(self):
        if self.tok.kind != "eof":
            self.error(f"unexpected {self.tok.text!r}")

    # -- sensor conditions
    def s_or(self):
        items = [self.s_and()]
        while self.accept("or", "kw"):
            items.append(self.s_and())
        return items[0] if len(items) == 1 else SOr(tuple(items))

    def s_and(self):
        items = [self.s_unary()]
        while self.accept("and", "kw"):
            items.append(self.s_unary())
        return items[0] if len(items) == 1 else SAnd(tuple(items))

    def s_unary(self):
        if self.accept("not", "kw"):
            return SNot(self.s_unary())
        if self.accept("true", "kw"):
            return TRUE
        if self.accept("false", "kw"):
            return SFalse()
        if self.accept("("):
            g = self.s_or()
            self.expect(")")
            return g
        t = self.tok
        if t.kind != "name":
            self.error(f"expected a sensor name, found {t.text or 'end of input'!r}")
        self.i += 1
        op = self.tok
        if op.text not in ("<", "<=", "=", "==", ">=", ">"):
            self.error(f"expected a comparison after {t.text!r}")
        self.i += 1
        sign = -1.0 if self.accept("-") else 1.0
        num = self.tok
        if num.kind != "num":
            self.error("expected a numeric constant")
        self.i += 1
        return Cmp(t.text, "=" if op.text == "==" else op.text, sign * float(num.text))

    # -- capability conditions
    def c_or(self):
        items = [self.c_and()]
        while self.accept("or", "kw"):
            items.append(self.c_and())
        return items[0] if len(items) == 1 else COr(tuple(items))

    def c_and(self):
        items = [self.c_unary()]
        while self.accept("and", "kw"):
            items.append(self.c_unary())
        return items[0] if len(items) == 1 else CAnd(tuple(items))

    def c_unary(self):
        t = self.tok
        if t.text == "not" and t.kind == "kw":
            self.i += 1
            return CNot(self.c_unary())
        if self.accept("true", "kw"):
            return CTRUE
        if self.accept("false", "kw"):
            return CFalse()
        if t.text == "[":
            y = self.capability()
            return self.membership(y)
        if t.text == "(":
            save = self.i
            self.i += 1
            try:
                inner = self.c_or()
                self.expect(")")
                if self.tok.text not in ("<=", "==", "!=", "-", "|", "⊄", "∈", "∉") and not (
                        self.tok.text == "not" and self.toks[self.i + 1].text == "<="):
                    return inner
            except ConditionSyntaxError:
                pass
            self.i = save
        left = self.exp()
        return self.relation(left)

    def membership(self, y):
        t = self.tok
        if t.text in ("in", "∈"):
            self.i += 1
            return member(y, self.exp())
        if t.text == "∉":
            self.i += 1
            return not_member(y, self.exp())
        if t.text == "not" and self.toks[self.i + 1].text == "in":
            self.i += 2
            return not_member(y, self.exp())
        self.error("expected 'in' or 'not in' after a capability")

    def relation(self, left):
        t = self.tok
        if t.text == "<=":
            self.i += 1
            return Subset(left, self.exp())
        if t.text == "⊄":
            self.i += 1
            return CNot(Subset(left, self.exp()))
        if t.text == "not" and self.toks[self.i + 1].text == "<=":
            self.i += 2
            return CNot(Subset(left, self.exp()))
        if t.text == "==":
            self.i += 1
            return Eq(left, self.exp())
        if t.text == "!=":
            self.i += 1
            return CNot(Eq(left, self.exp()))
        if isinstance(left, Lit):
            return Eq(HOLE, left)
        self.error("expected '<=', '==' or '!='")

    def exp(self):
        e = self.term()
        while self.tok.text in ("-", "|"):
            op = self.tok.text
            self.i += 1
            r = self.term()
            e = Diff(e, r) if op == "-" else Union(e, r)
        return e

    def term(self):
        t = self.tok
        if t.text == "_":
            self.i += 1
            return HOLE
        if t.text == "∅":
            self.i += 1
            return Lit(frozenset())
        if t.text == "{":
            return Lit(self.set_literal())
        if t.text == "(":
            self.i += 1
            e = self.exp()
            self.expect(")")
            return e
        if t.kind == "name":
            if self.variables is not None and t.text not in self.variables:
                self.error(f"undeclared variable {t.text!r}")
            self.i += 1
            return Var(t.text)
        self.error(f"expected an expression, found {t.text or 'end of input'!r}")

    def set_literal(self):
        start = self.expect("{")
        caps = []
        if not self.accept("}"):
            caps.append(self.capability())
            while self.accept(","):
                caps.append(self.capability())
            self.expect("}")
        comps = [c.component for c in caps]
        if len(set(comps)) != len(comps):
            raise ConditionSyntaxError("set literal has two capabilities for one component",
                                       self.text, start.pos)
        return frozenset(caps)

    def capability(self):
        self.expect("[")
        c = self.tok
        if c.kind != "name":
            self.error("expected a component name")
        self.i += 1
        self.expect(",")
        sign = -1.0 if self.accept("-") else 1.0
        v = self.tok
        if v.kind == "num":
            value = sign * float(v.text)
        elif v.kind in ("name", "kw"):
            value = v.text
        else:
            self.error("expected a capability value")
        self.i += 1
        self.expect("]")
        return Capability(c.text, value)


def parse_sensor_condition(text: str) -> SensorCondition:
    p = _Parser(str(text))
    g = p.s_or()
    p.done()
    return g


def parse_capability_condition(text: str, variables=None) -> CapabilityCondition:
    """Parse ``text``; when ``variables`` is given, other identifiers are rejected."""
    p = _Parser(str(text), variables)
    c = p.c_or()
    p.done()
    return c


def parse_capability_set(text: str) -> frozenset:
    p = _Parser(str(text))
    if p.accept("∅"):
        s = frozenset()
    else:
        s = p.set_literal()
    p.done()
    return s


def parse_history(text: str, names: Mapping[str, frozenset] | None = None) -> tuple:
    """Parse a space-separated history such as ``"{} {} P P {[p1,on]}"``.

    ``names`` maps identifiers to capability sets; ``ε`` or an empty string
    is the empty history.
    """
    names = dict(names or {})
    p = _Parser(str(text).replace("ε", " "))
    out = []
    while p.tok.kind != "eof":
        t = p.tok
        if t.text == "{":
            out.append(p.set_literal())
        elif t.text == "∅":
            p.i += 1
            out.append(frozenset())
        elif t.kind == "name":
            p.i += 1
            if t.text in names:
                out.append(names[t.text])
            elif all(ch in names for ch in t.text):
                out.extend(names[ch] for ch in t.text)
            else:
                p.error(f"unknown set name {t.text!r}", t)
        elif t.text in (",", ";"):
            p.i += 1
        else:
            p.error(f"unexpected {t.text!r} in history", t)
    return tuple(out)

"""Capabilities, capability sets and capability histories.

A capability set is a ``frozenset`` of :class:`Capability`; a history is a
tuple of capability sets.  Both are plain immutable values.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence, Union

Value = Union[str, float]

VALUE_ALIASES = {"closed": "close"}


@dataclass(frozen=True)
class Capability:
    """A forced reading or actuator state ``[component, value]``."""

    component: str
    value: Value

    def __post_init__(self):
        if isinstance(self.value, str):
            object.__setattr__(self, "value", VALUE_ALIASES.get(self.value, self.value))
        elif isinstance(self.value, (int, float)) and not isinstance(self.value, bool):
            object.__setattr__(self, "value", float(self.value))
        else:
            raise TypeError(f"capability value must be str or number, got {self.value!r}")

    @property
    def sort_key(self):
        if isinstance(self.value, float):
            return (self.component, 1, self.value, "")
        return (self.component, 0, 0.0, self.value)

    def __lt__(self, other):
        return self.sort_key < other.sort_key

    def __str__(self):
        return f"[{self.component},{format_value(self.value)}]"

    __repr__ = __str__


CapabilitySet = frozenset
History = tuple

EMPTY: frozenset = frozenset()


def format_value(v: Value) -> str:
    if isinstance(v, float):
        return f"{v:g}"
    return v


def cap(component: str, value: Value) -> Capability:
    return Capability(component, value)


def capset(*caps) -> frozenset:
    """Build a capability set from ``Capability`` objects or ``(c, v)`` pairs."""
    out = []
    for c in caps:
        out.append(c if isinstance(c, Capability) else Capability(*c))
    return frozenset(out)


def format_set(ys: Iterable[Capability]) -> str:
    return "{" + ",".join(str(c) for c in sorted(ys)) + "}"


def format_history(pi: Sequence[frozenset]) -> str:
    if not pi:
        return "ε"
    return " ".join(format_set(y) for y in pi)


def one_per_component(ys: Iterable[Capability]) -> bool:
    seen = set()
    for c in ys:
        if c.component in seen:
            return False
        seen.add(c.component)
    return True


def cset(pi: Sequence[frozenset]) -> frozenset:
    """Cumulative set of all capabilities used in a history."""
    out: set = set()
    for y in pi:
        out |= y
    return frozenset(out)


def history_slice(pi: Sequence[frozenset], k: int, l: int) -> tuple:
    """``Y_k ... Y_l`` (1-based, inclusive)."""
    if not (1 <= k <= l <= len(pi)):
        raise IndexError(f"slice [{k}..{l}] out of range for history of length {len(pi)}")
    return tuple(pi[k - 1:l])


def to_jsonable_set(ys: Iterable[Capability]) -> list:
    return [[c.component, c.value] for c in sorted(ys)]


def from_jsonable_set(items) -> frozenset:
    return frozenset(Capability(c, v) for c, v in items)


def to_jsonable_history(pi) -> list:
    return [to_jsonable_set(y) for y in pi]


def from_jsonable_history(items) -> tuple:
    return tuple(from_jsonable_set(y) for y in items)

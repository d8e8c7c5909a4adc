"""Rank-1 constraint systems and a dual-mode builder.

Gadget code is written once against :class:`Signal`.  In *build* mode a
signal carries a sparse linear combination over wires and ``enforce`` records
constraints; in *witness* mode it carries a concrete field value and
``enforce`` is a no-op.  Running the same gadget code in both modes keeps the
wire order of a witness identical to the one fixed at setup.
"""

from __future__ import annotations

from typing import Iterable, Sequence

from .poseidon import FIELD_MODULUS

P = FIELD_MODULUS

LC = dict  # wire index -> coefficient, wire 0 is the constant one


class Signal:
    __slots__ = ("lc", "val")

    def __init__(self, lc: LC | None, val: int | None):
        self.lc = lc
        self.val = val

    def _coerce(self, other) -> "Signal":
        if isinstance(other, Signal):
            return other
        c = other % P
        return Signal(
            None if self.lc is None else ({0: c} if c else {}),
            None if self.val is None else c,
        )

    def __add__(self, other) -> "Signal":
        o = self._coerce(other)
        lc = None
        if self.lc is not None:
            lc = dict(self.lc)
            for w, c in o.lc.items():
                v = (lc.get(w, 0) + c) % P
                if v:
                    lc[w] = v
                else:
                    lc.pop(w, None)
        val = None if self.val is None else (self.val + o.val) % P
        return Signal(lc, val)

    __radd__ = __add__

    def __neg__(self) -> "Signal":
        return self * -1

    def __sub__(self, other) -> "Signal":
        return self + (-self._coerce(other))

    def __rsub__(self, other) -> "Signal":
        return (-self) + other

    def __mul__(self, k: int) -> "Signal":
        if isinstance(k, Signal):
            raise TypeError("signal * signal needs Builder.mul (it allocates a wire)")
        k %= P
        lc = None
        if self.lc is not None:
            lc = {w: c * k % P for w, c in self.lc.items()} if k else {}
        val = None if self.val is None else self.val * k % P
        return Signal(lc, val)

    __rmul__ = __mul__


def linear_sum(signals: Iterable[Signal], coeffs: Iterable[int] | None = None, *, like: Signal) -> Signal:
    """Sum ``coeffs[i] * signals[i]`` without building intermediate dicts per term."""
    signals = list(signals)
    coeffs = [1] * len(signals) if coeffs is None else list(coeffs)
    lc = None
    if like.lc is not None:
        lc = {}
        for s, k in zip(signals, coeffs):
            k %= P
            if not k:
                continue
            for w, c in s.lc.items():
                lc[w] = (lc.get(w, 0) + c * k) % P
        lc = {w: c for w, c in lc.items() if c}
    val = None
    if like.val is not None:
        val = sum(s.val * k for s, k in zip(signals, coeffs)) % P
    return Signal(lc, val)


class Builder:
    """Allocates wires and records constraints (build) or values (witness)."""

    def __init__(self, build: bool):
        self.build = build
        self.n_wires = 1
        self.values: list[int | None] | None = None if build else [1]
        self.constraints: list[tuple[LC, LC, LC]] = []
        self.one = Signal({0: 1} if build else None, None if build else 1)
        self.zero = Signal({} if build else None, None if build else 0)

    def const(self, c: int) -> Signal:
        return self.one * c

    def alloc(self, value: int | None = None) -> Signal:
        idx = self.n_wires
        self.n_wires += 1
        if self.build:
            return Signal({idx: 1}, None)
        v = None if value is None else value % P
        self.values.append(v)
        return Signal(None, v)

    def wire_of(self, s: Signal) -> int:
        """Index of a freshly allocated signal (build mode only)."""
        (idx,) = s.lc
        return idx

    def assign(self, index: int, value: int) -> Signal:
        if not self.build:
            self.values[index] = value % P
        return Signal({index: 1} if self.build else None, None if self.build else value % P)

    def enforce(self, a: Signal, b: Signal, c: Signal) -> None:
        if self.build:
            self.constraints.append((a.lc, b.lc, c.lc))

    def mul(self, a: Signal, b: Signal) -> Signal:
        out = self.alloc(None if self.build else a.val * b.val)
        self.enforce(a, b, out)
        return out

    def assert_zero(self, a: Signal) -> None:
        self.enforce(a, self.one, self.zero)

    def assert_equal(self, a: Signal, b: Signal) -> None:
        self.assert_zero(a - b)

    def assert_bool(self, a: Signal) -> None:
        self.enforce(a, a - 1, self.zero)


def dot(lc: LC, z: Sequence[int]) -> int:
    return sum(c * z[w] for w, c in lc.items()) % P


def evaluate(constraints: Sequence[tuple[LC, LC, LC]], z: Sequence[int]):
    """Return the A·z, B·z and C·z vectors."""
    az, bz, cz = [], [], []
    for a, b, c in constraints:
        az.append(dot(a, z))
        bz.append(dot(b, z))
        cz.append(dot(c, z))
    return az, bz, cz


def unsatisfied(constraints: Sequence[tuple[LC, LC, LC]], z: Sequence[int]) -> list[int]:
    bad = []
    for k, (a, b, c) in enumerate(constraints):
        if dot(a, z) * dot(b, z) % P != dot(c, z):
            bad.append(k)
    return bad

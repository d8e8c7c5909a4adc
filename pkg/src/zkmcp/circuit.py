"""The audit circuit: format validation, type matching, counting, hashing.

Per message ``i`` the circuit enforces

* every byte is the linear recomposition of eight boolean wires;
* the 10-byte envelope prefix at positions 0..9 and the ``"}`` suffix at
  positions ``type_len + 10`` and ``type_len + 11``, selected by a one-hot
  encoding of ``type_len`` over ``1..max_type``;
* the extracted type (bytes ``10..10+type_len``, zero beyond) equals exactly
  one table entry, with ``match[i][j]`` boolean and summing to one;
* running sums ``sum[j][i+1] = sum[j][i] + match[i][j]`` ending in the public
  ``counts[j]``;
* ``hashes[i] = Poseidon(limb0, limb1, limb2, type_len + 12)``;
* ``json[i][m] * ge[i][m] = 0`` where ``ge[i][m]`` is the prefix sum of the
  one-hot selector (1 iff ``m >= total_len``).

Public inputs are ``counts[0..K)`` followed by ``hashes[0..n)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

from .errors import InvalidParams, MalformedMessage, ShapeMismatch, WrongMessageCount
from .hashing import limb_spans
from .messages import OVERHEAD, PREFIX, SUFFIX, AuditMessage, CircuitParams, TypeTable, canonicalize
from .poseidon import FULL_ROUNDS, PARAMS_ID, PARTIAL_ROUNDS, parameters
from .r1cs import LC, P, Builder, Signal, linear_sum

QUOTE, BRACE = SUFFIX[0], SUFFIX[1]


def _sbox(b: Builder, x: Signal) -> Signal:
    x2 = b.mul(x, x)
    x4 = b.mul(x2, x2)
    return b.mul(x4, x)


def poseidon_gadget(b: Builder, inputs: Sequence[Signal]) -> Signal:
    t = len(inputs) + 1
    constants, mds = parameters(t)
    rounds_p = PARTIAL_ROUNDS[t]
    half_f = FULL_ROUNDS // 2
    state = [b.zero, *inputs]
    for r in range(FULL_ROUNDS + rounds_p):
        state = [s + constants[r * t + i] for i, s in enumerate(state)]
        if r < half_f or r >= half_f + rounds_p:
            state = [_sbox(b, s) for s in state]
        else:
            state[0] = _sbox(b, state[0])
        state = [linear_sum(state, row, like=b.one) for row in mds]
    return state[0]


@dataclass
class _MessageWires:
    json: list[list[int]] = field(default_factory=list)  # bit wires, LSB first
    type_len: int = 0
    selectors: list[int] = field(default_factory=list)
    type: list[int] = field(default_factory=list)
    match: list[int] = field(default_factory=list)
    sums: list[int] = field(default_factory=list)


def _message_gadget(
    b: Builder,
    params: CircuitParams,
    table: TypeTable,
    padded: bytes | None,
    type_len: int | None,
) -> tuple[list[Signal], Signal, _MessageWires]:
    L, T = params.max_json, params.max_type
    wit = not b.build
    wires = _MessageWires()

    json: list[Signal] = []
    for m in range(L):
        v = padded[m] if wit else None
        bits = []
        for k in range(8):
            bits.append(b.alloc((v >> k) & 1 if wit else None))
            b.assert_bool(bits[-1])
        wires.json.append(list(range(b.n_wires - 8, b.n_wires)))
        json.append(linear_sum(bits, [1 << k for k in range(8)], like=b.one))

    tl = b.alloc(type_len)
    wires.type_len = b.n_wires - 1
    sel = [b.zero]  # sel[l] for l = 1..T; index 0 unused
    for l in range(1, T + 1):
        sel.append(b.alloc((1 if type_len == l else 0) if wit else None))
        wires.selectors.append(b.n_wires - 1)
        b.assert_bool(sel[l])
    b.assert_equal(linear_sum(sel[1:], like=b.one), b.one)
    b.assert_equal(tl, linear_sum(sel[1:], range(1, T + 1), like=b.one))

    # format validation
    for k, c in enumerate(PREFIX):
        b.assert_equal(json[k], b.const(c))
    for l in range(1, T + 1):
        b.enforce(sel[l], json[l + len(PREFIX)] - QUOTE, b.zero)
        b.enforce(sel[l], json[l + len(PREFIX) + 1] - BRACE, b.zero)

    # padding: ge[m] = sum of sel[l] with l + OVERHEAD <= m
    for m in range(OVERHEAD + 1, L):
        ls = [l for l in range(1, T + 1) if l + OVERHEAD <= m]
        ge = linear_sum([sel[l] for l in ls], like=b.one)
        b.enforce(json[m], ge, b.zero)

    # type extraction: type[k] = json[10 + k] * [k < type_len]
    typ: list[Signal] = []
    for k in range(T):
        lt = linear_sum(sel[k + 1 :], like=b.one)
        typ.append(b.mul(json[len(PREFIX) + k], lt))
        wires.type.append(b.n_wires - 1)

    # type matching against the constant table
    entries = [e.ljust(T, b"\x00") for e in table.encoded()]
    lengths = [len(e) for e in table.encoded()]
    extracted = None
    if wit:
        extracted = bytes(s.val if s.val < 256 else 0 for s in typ)
    match = []
    for j, e in enumerate(entries):
        hit = wit and extracted == e and type_len == lengths[j]
        match.append(b.alloc((1 if hit else 0) if wit else None))
        wires.match.append(b.n_wires - 1)
        b.assert_bool(match[j])
    b.assert_equal(linear_sum(match, like=b.one), b.one)
    for k in range(T):
        b.assert_equal(typ[k], linear_sum(match, [e[k] for e in entries], like=b.one))
    b.assert_equal(tl, linear_sum(match, lengths, like=b.one))

    limbs = [
        linear_sum(json[a:z], [256 ** (z - 1 - m) for m in range(a, z)], like=b.one)
        for a, z in limb_spans(L)
    ]
    digest = poseidon_gadget(b, [*limbs, tl + OVERHEAD])
    return match, digest, wires


@dataclass
class ConstraintSystem:
    params: CircuitParams
    table: TypeTable
    constraints: list[tuple[LC, LC, LC]]
    wire_count: int
    messages: list[_MessageWires]

    @property
    def constraint_count(self) -> int:
        return len(self.constraints)

    @property
    def num_public(self) -> int:
        return len(self.table) + self.params.n

    @property
    def public_layout(self) -> list[str]:
        K, n = len(self.table), self.params.n
        return [f"counts[{j}]" for j in range(K)] + [f"hashes[{i}]" for i in range(n)]

    @property
    def circuit_id(self) -> str:
        p = self.params
        return f"zkmcp-n{p.n}-L{p.max_json}-T{p.max_type}-K{p.num_types}-{self.table.digest()[:12]}"

    def meta(self) -> dict:
        return {
            **self.params.to_dict(),
            "type_table": list(self.table.entries),
            "type_table_digest": self.table.digest(),
            "constraint_count": self.constraint_count,
            "wire_count": self.wire_count,
            "public_layout": self.public_layout,
            "hash_params_id": PARAMS_ID,
        }


@dataclass(frozen=True)
class PublicStatement:
    counts: tuple[int, ...]
    hashes: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))
        object.__setattr__(self, "hashes", tuple(int(h) for h in self.hashes))

    def inputs(self) -> list[int]:
        return [*self.counts, *self.hashes]

    def to_dict(self) -> dict:
        return {"counts": [str(c) for c in self.counts], "hashes": [str(h) for h in self.hashes]}

    @classmethod
    def from_dict(cls, d: dict) -> "PublicStatement":
        try:
            counts = [_field_element(v) for v in d["counts"]]
            hashes = [_field_element(v) for v in d["hashes"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise ShapeMismatch(f"malformed statement: {exc}") from exc
        return cls(tuple(counts), tuple(hashes))


def _field_element(v) -> int:
    if isinstance(v, bool):
        raise ValueError("boolean is not a field element")
    x = int(v)
    if not 0 <= x < P:
        raise ValueError(f"{v!r} is not a reduced field element")
    return x


@dataclass
class Witness:
    """Full wire assignment; the accessors expose the named wire groups."""

    values: list[int]
    cs: ConstraintSystem = field(repr=False)

    def json(self, i: int) -> list[int]:
        """Byte values of message ``i`` as recomposed from its bit wires."""
        return [
            sum(self.values[w] << k for k, w in enumerate(bits)) % P
            for bits in self.cs.messages[i].json
        ]

    def type_len(self, i: int) -> int:
        return self.values[self.cs.messages[i].type_len]

    def match(self, i: int) -> list[int]:
        return [self.values[w] for w in self.cs.messages[i].match]

    def type(self, i: int) -> list[int]:
        return [self.values[w] for w in self.cs.messages[i].type]

    def sums(self, j: int) -> list[int]:
        """Running sum ``sum[j][0..n]`` for type slot ``j``."""
        acc = [0]
        for i in range(self.cs.params.n):
            acc.append((acc[-1] + self.match(i)[j]) % P)
        return acc

    def ge(self, i: int) -> list[int]:
        sel = [self.values[w] for w in self.cs.messages[i].selectors]
        out = []
        for m in range(self.cs.params.max_json):
            out.append(sum(sel[l - 1] for l in range(1, len(sel) + 1) if l + OVERHEAD <= m) % P)
        return out

    def public(self) -> PublicStatement:
        K = len(self.cs.table)
        return PublicStatement(tuple(self.values[1 : 1 + K]), tuple(self.values[1 + K : 1 + K + self.cs.params.n]))


def _circuit(b: Builder, params: CircuitParams, table: TypeTable, rows=None, type_lens=None):
    K, n = len(table), params.n
    counts = [b.alloc(None) for _ in range(K)]
    hashes = [b.alloc(None) for _ in range(n)]
    prev = [b.zero] * K
    message_wires = []
    for i in range(n):
        match, digest, wires = _message_gadget(
            b, params, table,
            None if rows is None else rows[i],
            None if type_lens is None else type_lens[i],
        )
        for j in range(K):
            if i < n - 1:
                s = b.alloc(None if b.build else prev[j].val + match[j].val)
                wires.sums.append(b.n_wires - 1)
                b.assert_equal(s, prev[j] + match[j])
                prev[j] = s
            else:
                if not b.build:
                    counts[j] = b.assign(1 + j, prev[j].val + match[j].val)
                b.assert_equal(counts[j], prev[j] + match[j])
        if not b.build:
            hashes[i] = b.assign(1 + K + i, digest.val)
        b.assert_equal(hashes[i], digest)
        message_wires.append(wires)
    return message_wires


@lru_cache(maxsize=16)
def build_circuit(params: CircuitParams, table: TypeTable) -> ConstraintSystem:
    if len(table) != params.num_types:
        raise InvalidParams(f"type table has {len(table)} entries, circuit expects {params.num_types}")
    if table.max_type > params.max_type or any(len(e) > params.max_type for e in table.entries):
        raise InvalidParams("type table entry longer than max_type")
    b = Builder(build=True)
    message_wires = _circuit(b, params, table)
    return ConstraintSystem(params, table, b.constraints, b.n_wires, message_wires)


def assign_witness(cs: ConstraintSystem, rows: Sequence[bytes], type_lens: Sequence[int]) -> Witness:
    """Run the witness calculator on raw private inputs without validating them.

    The result satisfies the constraints only when the inputs are honest; use
    it to build adversarial witnesses for :func:`check_relation`.
    """
    params = cs.params
    if len(rows) != params.n or len(type_lens) != params.n:
        raise WrongMessageCount(f"expected {params.n} messages, got {len(rows)}")
    for r in rows:
        if len(r) != params.max_json:
            raise ShapeMismatch(f"row of {len(r)} bytes, expected {params.max_json}")
    b = Builder(build=False)
    _circuit(b, params, cs.table, rows, type_lens)
    if b.n_wires != cs.wire_count:
        raise ShapeMismatch("witness layout diverged from the constraint system")
    return Witness(b.values, cs)


def synthesize_witness(cs: ConstraintSystem, messages: Sequence[AuditMessage]) -> tuple[Witness, PublicStatement]:
    params = cs.params
    if len(messages) != params.n:
        raise WrongMessageCount(f"circuit takes {params.n} messages, got {len(messages)}")
    rows, lens = [], []
    for k, m in enumerate(messages):
        try:
            canonical = canonicalize(m.type_string, params.max_type)
        except Exception as exc:
            raise MalformedMessage(f"message {k}: {exc}") from exc
        if bytes(m.raw) != canonical:
            raise MalformedMessage(f"message {k} is not the canonical envelope of its type")
        if len(canonical) > params.max_json:
            raise MalformedMessage(f"message {k} longer than {params.max_json} bytes")
        cs.table.index(m.type_string)
        rows.append(canonical.ljust(params.max_json, b"\x00"))
        lens.append(m.type_len)
    w = assign_witness(cs, rows, lens)
    return w, w.public()


def check_relation(cs: ConstraintSystem, x: PublicStatement, w: Witness) -> bool:
    """Native evaluation of the relation: true iff (x, w) satisfies every constraint."""
    K, n = len(cs.table), cs.params.n
    if len(x.counts) != K or len(x.hashes) != n:
        raise ShapeMismatch(f"statement shape ({len(x.counts)}, {len(x.hashes)}) != ({K}, {n})")
    if len(w.values) != cs.wire_count:
        raise ShapeMismatch(f"witness has {len(w.values)} wires, circuit has {cs.wire_count}")
    z = [1, *x.inputs(), *w.values[1 + K + n :]]
    if any(v is None or not 0 <= v < P for v in z):
        return False
    for a, bb, c in cs.constraints:
        av = sum(k * z[i] for i, k in a.items())
        bv = sum(k * z[i] for i, k in bb.items())
        cv = sum(k * z[i] for i, k in c.items())
        if (av * bv - cv) % P:
            return False
    return True


def full_assignment(cs: ConstraintSystem, x: PublicStatement, w: Witness) -> list[int]:
    K, n = len(cs.table), cs.params.n
    return [1, *x.inputs(), *w.values[1 + K + n :]]

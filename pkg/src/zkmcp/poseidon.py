"""Poseidon permutation over the BN254 scalar field.

Round constants and the MDS matrix are derived with the Grain LFSR used by
the Poseidon reference scripts, which is also where circomlib's constants
come from, so digests are interchangeable with circomlib's ``Poseidon(k)``.
"""

from __future__ import annotations

from functools import lru_cache
from typing import Iterator, Sequence

# BN254 (alt_bn128) scalar field.
FIELD_MODULUS = 21888242871839275222246405745257275088548364400416034343698204186575808495617
FIELD_BITS = 254

FULL_ROUNDS = 8
# Partial rounds per state width t = arity + 1 (t = 2..5), as in circomlib.
PARTIAL_ROUNDS = {2: 56, 3: 57, 4: 56, 5: 60}
ALPHA = 5
MAX_ARITY = 4

PARAMS_ID = "poseidon-bn254-x5-rf8-grain"


class UnsupportedArity(ValueError):
    pass


def _grain_bits(t: int, rounds_f: int, rounds_p: int) -> Iterator[int]:
    # 80-bit init: field=1 (prime), sbox=0 (x^alpha), field size, t, R_F, R_P, 30 ones.
    init = "".join(
        [
            format(1, "02b"),
            format(0, "04b"),
            format(FIELD_BITS, "012b"),
            format(t, "012b"),
            format(rounds_f, "010b"),
            format(rounds_p, "010b"),
            "1" * 30,
        ]
    )
    state = [int(c) for c in init]

    def step() -> int:
        bit = state[62] ^ state[51] ^ state[38] ^ state[23] ^ state[13] ^ state[0]
        state.pop(0)
        state.append(bit)
        return bit

    for _ in range(160):
        step()
    while True:
        # Self-shrinking: emit the second bit of each pair whose first bit is 1.
        first = step()
        second = step()
        if first:
            yield second


def _sample(bits: Iterator[int], n: int) -> int:
    value = 0
    for _ in range(n):
        value = (value << 1) | next(bits)
    return value


@lru_cache(maxsize=None)
def parameters(t: int) -> tuple[tuple[int, ...], tuple[tuple[int, ...], ...]]:
    """Return ``(round_constants, mds)`` for state width ``t``."""
    if t - 1 < 1 or t - 1 > MAX_ARITY:
        raise UnsupportedArity(f"arity {t - 1} not in 1..{MAX_ARITY}")
    p = FIELD_MODULUS
    rounds_p = PARTIAL_ROUNDS[t]
    bits = _grain_bits(t, FULL_ROUNDS, rounds_p)

    constants = []
    for _ in range((FULL_ROUNDS + rounds_p) * t):
        c = _sample(bits, FIELD_BITS)
        while c >= p:
            c = _sample(bits, FIELD_BITS)
        constants.append(c)

    while True:
        xs_ys = [_sample(bits, FIELD_BITS) % p for _ in range(2 * t)]
        while len(set(xs_ys)) != len(xs_ys):
            xs_ys = [_sample(bits, FIELD_BITS) % p for _ in range(2 * t)]
        xs, ys = xs_ys[:t], xs_ys[t:]
        if all((x + y) % p for x in xs for y in ys):
            break
    mds = tuple(tuple(pow(x + y, -1, p) for y in ys) for x in xs)
    return tuple(constants), mds


def permute(state: Sequence[int]) -> list[int]:
    p = FIELD_MODULUS
    t = len(state)
    constants, mds = parameters(t)
    rounds_p = PARTIAL_ROUNDS[t]
    half_f = FULL_ROUNDS // 2
    s = [v % p for v in state]
    for r in range(FULL_ROUNDS + rounds_p):
        s = [(v + constants[r * t + i]) % p for i, v in enumerate(s)]
        if r < half_f or r >= half_f + rounds_p:
            s = [pow(v, ALPHA, p) for v in s]
        else:
            s[0] = pow(s[0], ALPHA, p)
        s = [sum(m * v for m, v in zip(row, s)) % p for row in mds]
    return s


def poseidon(inputs: Sequence[int]) -> int:
    """Hash 1..4 field elements; capacity element is zero, output is ``state[0]``."""
    if not 1 <= len(inputs) <= MAX_ARITY:
        raise UnsupportedArity(f"arity {len(inputs)} not in 1..{MAX_ARITY}")
    for v in inputs:
        if not 0 <= v < FIELD_MODULUS:
            raise ValueError("input is not a reduced field element")
    return permute([0, *inputs])[0]

"""Groth16 over BN254 on top of native curve, pairing and FFT primitives.

Only the group/FFT arithmetic comes from ``zksnake._algebra``; the QAP
reduction, key generation, prover and verifier live here.  Each public input
also gets an ``x_i * 0 = 0`` row so the public-input polynomials are linearly
independent (the usual guard against malleable statements).
"""

from __future__ import annotations

import random
import struct
from dataclasses import dataclass
from typing import Sequence

from zksnake._algebra import ec_bn254 as _ec  # pylint: disable=no-name-in-module
from zksnake._algebra import polynomial_bn254 as _poly  # pylint: disable=no-name-in-module

from .r1cs import LC, P

G1_BYTES = 32
G2_BYTES = 64
PROOF_BYTES = G1_BYTES + G2_BYTES + G1_BYTES

G1 = _ec.PointG1
G2 = _ec.PointG2


def _g1_zero():
    return _ec.g1() * 0


def _g2_zero():
    return _ec.g2() * 0


def _batch(gen, scalars: Sequence[int], zero, batch_fn):
    """``[s * gen for s in scalars]``, skipping the native call for zero scalars."""
    idx = [i for i, s in enumerate(scalars) if s]
    out = [zero] * len(scalars)
    if idx:
        pts = batch_fn([gen] * len(idx), [scalars[i] for i in idx])
        for i, pt in zip(idx, pts):
            out[i] = pt
    return out


def _msm(points: Sequence, scalars: Sequence[int], zero, msm_fn):
    pairs = [(pt, s) for pt, s in zip(points, scalars) if s]
    if not pairs:
        return zero
    pts, ss = zip(*pairs)
    return msm_fn(list(pts), list(ss))


def _next_pow2(x: int) -> int:
    return 1 << max(0, (x - 1).bit_length())


def qap_rows(constraints: Sequence[tuple[LC, LC, LC]], num_inputs: int):
    """Constraint rows followed by one ``x_i * 0 = 0`` row per input (wire 0 included)."""
    rows = list(constraints)
    rows.extend(({i: 1}, {}, {}) for i in range(num_inputs + 1))
    return rows, _next_pow2(len(rows))


@dataclass
class VerifyingKey:
    alpha_g1: object
    beta_g2: object
    gamma_g2: object
    delta_g2: object
    ic: list  # G1, one per input incl. the constant wire

    def to_bytes(self) -> bytes:
        out = [
            bytes(self.alpha_g1.to_bytes()),
            bytes(self.beta_g2.to_bytes()),
            bytes(self.gamma_g2.to_bytes()),
            bytes(self.delta_g2.to_bytes()),
            struct.pack(">I", len(self.ic)),
        ]
        out.extend(bytes(p.to_bytes()) for p in self.ic)
        return b"".join(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "VerifyingKey":
        r = _Reader(data)
        alpha, beta, gamma, delta = r.g1(), r.g2(), r.g2(), r.g2()
        ic = [r.g1() for _ in range(r.u32())]
        r.done()
        return cls(alpha, beta, gamma, delta, ic)


@dataclass
class ProvingKey:
    alpha_g1: object
    beta_g1: object
    beta_g2: object
    delta_g1: object
    delta_g2: object
    a_query: list
    b_g1_query: list
    b_g2_query: list
    h_query: list
    l_query: list
    num_inputs: int
    domain_size: int

    def to_bytes(self) -> bytes:
        out = [
            struct.pack(">III", self.num_inputs, self.domain_size, len(self.a_query)),
            bytes(self.alpha_g1.to_bytes()),
            bytes(self.beta_g1.to_bytes()),
            bytes(self.beta_g2.to_bytes()),
            bytes(self.delta_g1.to_bytes()),
            bytes(self.delta_g2.to_bytes()),
        ]
        for q in (self.a_query, self.b_g1_query, self.b_g2_query):
            out.extend(bytes(p.to_bytes()) for p in q)
        for q in (self.h_query, self.l_query):
            out.append(struct.pack(">I", len(q)))
            out.extend(bytes(p.to_bytes()) for p in q)
        return b"".join(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "ProvingKey":
        r = _Reader(data)
        num_inputs, domain, wires = r.u32(), r.u32(), r.u32()
        alpha1, beta1, beta2, delta1, delta2 = r.g1(), r.g1(), r.g2(), r.g1(), r.g2()
        a = [r.g1() for _ in range(wires)]
        b1 = [r.g1() for _ in range(wires)]
        b2 = [r.g2() for _ in range(wires)]
        h = [r.g1() for _ in range(r.u32())]
        lq = [r.g1() for _ in range(r.u32())]
        r.done()
        return cls(alpha1, beta1, beta2, delta1, delta2, a, b1, b2, h, lq, num_inputs, domain)


@dataclass
class Proof:
    a: object
    b: object
    c: object

    def to_bytes(self) -> bytes:
        return bytes(self.a.to_bytes()) + bytes(self.b.to_bytes()) + bytes(self.c.to_bytes())

    @classmethod
    def from_bytes(cls, data: bytes) -> "Proof":
        if len(data) != PROOF_BYTES:
            raise ValueError(f"proof must be {PROOF_BYTES} bytes, got {len(data)}")
        r = _Reader(data)
        proof = cls(r.g1(), r.g2(), r.g1())
        r.done()
        return proof


class _Reader:
    def __init__(self, data: bytes):
        self.data = memoryview(bytes(data))
        self.pos = 0

    def take(self, k: int) -> bytes:
        if self.pos + k > len(self.data):
            raise ValueError("truncated key material")
        chunk = bytes(self.data[self.pos : self.pos + k])
        self.pos += k
        return chunk

    def u32(self) -> int:
        return struct.unpack(">I", self.take(4))[0]

    def g1(self):
        return G1.from_bytes(self.take(G1_BYTES))

    def g2(self):
        return G2.from_bytes(self.take(G2_BYTES))

    def done(self) -> None:
        if self.pos != len(self.data):
            raise ValueError(f"{len(self.data) - self.pos} trailing bytes")


def _rand(rng: random.Random) -> int:
    return rng.randrange(1, P)


def setup(constraints, num_inputs: int, num_wires: int, rng: random.Random | None = None):
    """Circuit-specific key generation; returns ``(ProvingKey, VerifyingKey)``."""
    rng = rng or random.SystemRandom()
    rows, m = qap_rows(constraints, num_inputs)
    tau, alpha, beta, gamma, delta = (_rand(rng) for _ in range(5))
    gamma_inv = pow(gamma, -1, P)
    delta_inv = pow(delta, -1, P)

    lag = _poly.evaluate_lagrange_coefficients(m, tau)
    u = [0] * num_wires
    v = [0] * num_wires
    w = [0] * num_wires
    for k, (a, b, c) in enumerate(rows):
        lk = lag[k]
        for i, coef in a.items():
            u[i] += coef * lk
        for i, coef in b.items():
            v[i] += coef * lk
        for i, coef in c.items():
            w[i] += coef * lk
    u = [x % P for x in u]
    v = [x % P for x in v]
    w = [x % P for x in w]

    g1, g2 = _ec.g1(), _ec.g2()
    z1, z2 = _g1_zero(), _g2_zero()
    bg1, bg2 = _ec.batch_multi_scalar_g1, _ec.batch_multi_scalar_g2

    k_vals = [(beta * u[i] + alpha * v[i] + w[i]) % P for i in range(num_wires)]
    ic = _batch(g1, [k * gamma_inv % P for k in k_vals[: num_inputs + 1]], z1, bg1)
    l_query = _batch(g1, [k * delta_inv % P for k in k_vals[num_inputs + 1 :]], z1, bg1)

    t_tau = (pow(tau, m, P) - 1) % P
    h_scalars = []
    acc = t_tau * delta_inv % P
    for _ in range(m - 1):
        h_scalars.append(acc)
        acc = acc * tau % P

    pk = ProvingKey(
        alpha_g1=g1 * alpha,
        beta_g1=g1 * beta,
        beta_g2=g2 * beta,
        delta_g1=g1 * delta,
        delta_g2=g2 * delta,
        a_query=_batch(g1, u, z1, bg1),
        b_g1_query=_batch(g1, v, z1, bg1),
        b_g2_query=_batch(g2, v, z2, bg2),
        h_query=_batch(g1, h_scalars, z1, bg1),
        l_query=l_query,
        num_inputs=num_inputs,
        domain_size=m,
    )
    vk = VerifyingKey(pk.alpha_g1, pk.beta_g2, g2 * gamma, pk.delta_g2, ic)
    return pk, vk


# Multiplicative generator of the scalar field; not a 2-adic root of unity,
# so ``COSET * H`` is disjoint from every evaluation domain ``H``.
COSET = 5


def _scale(coeffs: Sequence[int], g: int) -> list[int]:
    out = []
    acc = 1
    for c in coeffs:
        out.append(c * acc % P)
        acc = acc * g % P
    return out


def _coset_fft(coeffs: Sequence[int], m: int) -> list[int]:
    return _poly.fft(_scale(coeffs, COSET), m)


def _coset_ifft(evals: Sequence[int], m: int) -> list[int]:
    return _scale(_poly.ifft(list(evals), m), pow(COSET, -1, P))


def quotient(constraints, z: Sequence[int], num_inputs: int, m: int) -> list[int]:
    """Coefficients of ``h = (A·B - C) / Z`` for the full assignment ``z``."""
    rows, m_rows = qap_rows(constraints, num_inputs)
    if m_rows != m:
        raise ValueError("domain size does not match the proving key")
    az = [0] * m
    bz = [0] * m
    cz = [0] * m
    for k, (a, b, c) in enumerate(rows):
        if a:
            az[k] = sum(coef * z[i] for i, coef in a.items()) % P
        if b:
            bz[k] = sum(coef * z[i] for i, coef in b.items()) % P
        if c:
            cz[k] = sum(coef * z[i] for i, coef in c.items()) % P
    a_cos = _coset_fft(_poly.ifft(az, m), m)
    b_cos = _coset_fft(_poly.ifft(bz, m), m)
    c_cos = _coset_fft(_poly.ifft(cz, m), m)
    # Z(x) = x^m - 1 is the constant COSET^m - 1 on the coset
    z_inv = pow((pow(COSET, m, P) - 1) % P, -1, P)
    h_cos = [(x * y - c) * z_inv % P for x, y, c in zip(a_cos, b_cos, c_cos)]
    return _coset_ifft(h_cos, m)


def prove(pk: ProvingKey, constraints, z: Sequence[int], rng: random.Random | None = None) -> Proof:
    rng = rng or random.SystemRandom()
    r, s = _rand(rng), _rand(rng)
    h = quotient(constraints, z, pk.num_inputs, pk.domain_size)
    z1, z2 = _g1_zero(), _g2_zero()
    msm1, msm2 = _ec.multiscalar_mul_g1, _ec.multiscalar_mul_g2

    a = pk.alpha_g1 + _msm(pk.a_query, z, z1, msm1) + pk.delta_g1 * r
    b2 = pk.beta_g2 + _msm(pk.b_g2_query, z, z2, msm2) + pk.delta_g2 * s
    b1 = pk.beta_g1 + _msm(pk.b_g1_query, z, z1, msm1) + pk.delta_g1 * s
    c = (
        _msm(pk.l_query, z[pk.num_inputs + 1 :], z1, msm1)
        + _msm(pk.h_query, h[: len(pk.h_query)], z1, msm1)
        + a * s
        + b1 * r
        - pk.delta_g1 * (r * s % P)
    )
    return Proof(a, b2, c)


def verify(vk: VerifyingKey, inputs: Sequence[int], proof: Proof) -> bool:
    if len(inputs) + 1 != len(vk.ic):
        raise ValueError(f"expected {len(vk.ic) - 1} public inputs, got {len(inputs)}")
    if any(not 0 <= x < P for x in inputs):
        return False
    acc = vk.ic[0] + _msm(vk.ic[1:], list(inputs), _g1_zero(), _ec.multiscalar_mul_g1)
    lhs = _ec.pairing(proof.a, proof.b)
    rhs = _ec.multi_pairing([vk.alpha_g1, acc, proof.c], [vk.beta_g2, vk.gamma_g2, vk.delta_g2])
    return lhs == rhs

"""Additively homomorphic encryption over Z_q with two interchangeable backends.

The protocol only relies on three features: encryption/decryption of residues
in Z_q = {0, ..., q-1}, ciphertext addition (decrypting to the modular sum),
and plaintext-ciphertext multiplication (decrypting to the modular product).

Backends:
  * "paillier": a textbook Paillier scheme with g = N + 1; its message-space
    modulus is the key modulus N (product of two primes), and encryption is
    randomized.
  * "mock": a deterministic stand-in with an exactly configurable modulus
    (e.g. q = 2**2048). It offers no secrecy whatsoever and exists so that
    protocol arithmetic can be pinned to an exact q and compared across
    backends.

Decryption calls are tagged and logged on the context, which lets the
protocol simulator assert that nobody but the leader ever decrypts.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass, field

_MILLER_RABIN_ROUNDS = 64


class MessageOutOfRange(ValueError):
    """Plaintext or multiplier outside Z_q."""


class MissingSecretKey(RuntimeError):
    """Decryption attempted on a public-only context."""


class ContextMismatch(ValueError):
    """Operation combined ciphertexts or contexts with different ids."""


class PrimeGenerationFailure(RuntimeError):
    """No suitable prime found within the retry budget."""


def _is_probable_prime(n: int, rng: random.Random, rounds: int = _MILLER_RABIN_ROUNDS) -> bool:
    if n < 2:
        return False
    for p in (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37):
        if n % p == 0:
            return n == p
    d, r = n - 1, 0
    while d % 2 == 0:
        d //= 2
        r += 1
    for _ in range(rounds):
        a = rng.randrange(2, n - 1)
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(r - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


def _gen_prime(bits: int, rng: random.Random, budget: int = 100_000) -> int:
    for _ in range(budget):
        cand = rng.getrandbits(bits) | (1 << (bits - 1)) | 1
        if _is_probable_prime(cand, rng):
            return cand
    raise PrimeGenerationFailure(f"no {bits}-bit prime in {budget} candidates")


@dataclass(eq=False)
class Ciphertext:
    """Opaque encrypted value bound to its context by id."""

    payload: int
    context_id: str
    serial: int = 0

    def to_text(self) -> str:
        return f"{self.context_id}:{self.payload}"


@dataclass(eq=False)
class HEContext:
    """Key material plus the homomorphic operations for one message space.

    Only the leader's copy carries the secret key; public_view() strips it.
    dec_log records a caller tag per decryption for transcript-level privacy
    assertions.
    """

    backend: str
    q: int
    context_id: str
    public: dict = field(default_factory=dict)
    secret: dict | None = None
    rng: random.Random | None = None
    dec_log: list = field(default_factory=list)
    _serial: int = 0

    # -- helpers -----------------------------------------------------------

    def _next_serial(self) -> int:
        self._serial += 1
        return self._serial

    def _check_message(self, m: int) -> int:
        m = int(m)
        if not (0 <= m < self.q):
            raise MessageOutOfRange(f"message {m} outside [0, {self.q})")
        return m

    def _check_ct(self, c: Ciphertext) -> None:
        if c.context_id != self.context_id:
            raise ContextMismatch(f"ciphertext from {c.context_id}, context is {self.context_id}")

    @property
    def has_secret(self) -> bool:
        return self.secret is not None

    def public_view(self) -> "HEContext":
        """Copy without the secret key (what followers hold)."""
        return HEContext(
            backend=self.backend,
            q=self.q,
            context_id=self.context_id,
            public=self.public,
            secret=None,
            rng=self.rng,
            dec_log=self.dec_log,
        )

    # -- the three HE features ---------------------------------------------

    def enc(self, m: int, rng: random.Random | None = None) -> Ciphertext:
        m = self._check_message(m)
        if self.backend == "mock":
            payload = m
        else:
            n, nsq = self.public["n"], self.public["nsquare"]
            r = (rng or self.rng).randrange(1, n)
            while math.gcd(r, n) != 1:
                r = (rng or self.rng).randrange(1, n)
            # g = n + 1 gives g^m = 1 + m n (mod n^2)
            payload = (1 + m * n) % nsq * pow(r, n, nsq) % nsq
        return Ciphertext(payload=payload, context_id=self.context_id, serial=self._next_serial())

    def dec(self, c: Ciphertext, caller: str = "leader") -> int:
        self._check_ct(c)
        if self.secret is None:
            raise MissingSecretKey("this context holds no decryption key")
        self.dec_log.append(caller)
        if self.backend == "mock":
            return c.payload
        n, nsq = self.public["n"], self.public["nsquare"]
        u = pow(c.payload, self.secret["lambda"], nsq)
        return (u - 1) // n * self.secret["mu"] % n

    def add(self, c1: Ciphertext, c2: Ciphertext) -> Ciphertext:
        self._check_ct(c1)
        self._check_ct(c2)
        if self.backend == "mock":
            payload = (c1.payload + c2.payload) % self.q
        else:
            payload = c1.payload * c2.payload % self.public["nsquare"]
        return Ciphertext(payload=payload, context_id=self.context_id, serial=self._next_serial())

    def mul_plain(self, k: int, c: Ciphertext) -> Ciphertext:
        k = self._check_message(k)
        self._check_ct(c)
        if self.backend == "mock":
            payload = k * c.payload % self.q
        else:
            payload = pow(c.payload, k, self.public["nsquare"])
        return Ciphertext(payload=payload, context_id=self.context_id, serial=self._next_serial())

    # -- serialization -------------------------------------------------------

    def public_key_text(self) -> str:
        if self.backend == "mock":
            return f"mock q={self.q}"
        return f"paillier n={self.public['n']} g={self.public['g']}"

    def secret_key_text(self) -> str:
        if self.secret is None:
            raise MissingSecretKey("no secret key to serialize")
        if self.backend == "mock":
            return f"mock q={self.q}"
        return f"paillier p={self.secret['p']} q={self.secret['q']}"


def keygen(bits: int, rng_seed: int, backend: str = "paillier") -> HEContext:
    """Create a fresh context.

    paillier: q = N, the product of two bits/2 primes (regenerated until N has
    exactly `bits` bits). mock: q = 2**bits, deterministic.
    """
    if backend == "mock":
        return mock_context(1 << bits, label=f"mock-{bits}b-{rng_seed}")
    if backend != "paillier":
        raise ValueError(f"unknown backend {backend!r}")
    if bits < 16:
        raise ValueError("paillier needs bits >= 16")
    rng = random.Random(rng_seed)
    for _ in range(1000):
        p = _gen_prime(bits // 2, rng)
        q_prime = _gen_prime(bits // 2, rng)
        n = p * q_prime
        if p != q_prime and n.bit_length() == bits:
            break
    else:
        raise PrimeGenerationFailure(f"no {bits}-bit modulus found")
    lam = (p - 1) * (q_prime - 1)
    return HEContext(
        backend="paillier",
        q=n,
        context_id=f"paillier-{bits}b-{rng_seed}",
        public={"n": n, "g": n + 1, "nsquare": n * n},
        secret={"p": p, "q": q_prime, "lambda": lam, "mu": pow(lam, -1, n)},
        rng=rng,
    )


def mock_context(q: int, label: str | None = None) -> HEContext:
    """Mock context with an exactly specified modulus (any q >= 2)."""
    if q < 2:
        raise ValueError("q must be >= 2")
    return HEContext(
        backend="mock",
        q=q,
        context_id=label or f"mock-q{q % 997}-{q.bit_length()}b",
        secret={},
        rng=random.Random(0),
    )


def enc(ctx: HEContext, m: int, rng: random.Random | None = None) -> Ciphertext:
    return ctx.enc(m, rng=rng)


def dec(ctx: HEContext, c: Ciphertext, caller: str = "leader") -> int:
    return ctx.dec(c, caller=caller)


def add_ct(ctx: HEContext, c1: Ciphertext, c2: Ciphertext) -> Ciphertext:
    return ctx.add(c1, c2)


def mul_plain(ctx: HEContext, k: int, c: Ciphertext) -> Ciphertext:
    return ctx.mul_plain(k, c)


def encode_signed(z: int, q: int) -> int:
    """Map a signed integer into Z_q (mathematical modulo; pairs with mod_reconstruct).

    The round trip through mod_reconstruct is lossless exactly for |z| < q/2.
    """
    return int(z) % q

"""Hashing, deterministic keypairs, signatures, and signer-set thresholds.

Hashing is SHA-256 (32-byte digests) and signatures are Ed25519 over a
canonical 32-byte message digest.  Keys are derived deterministically from a
scenario seed and the participant id so that whole runs are reproducible while
signatures remain genuinely unforgeable.

Threshold approval is modeled as an explicit set of individual signatures
counted against the strict two-thirds bound, not as an aggregate signature.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

from .codec import enc_u32

DIGEST_SIZE = 32
ZERO_DIGEST = b"\x00" * DIGEST_SIZE

# Verification is by far the hottest cryptographic operation: every broadcast
# signature is checked by many observers.  Ed25519 verification of identical
# (key, message, signature) triples is a pure function, so results are memoized
# process-wide.
_verify_cache: dict[tuple[bytes, bytes, bytes], bool] = {}


class DuplicateSignerError(ValueError):
    """A signer id appeared twice in one signer set."""


def hash_bytes(payload: bytes) -> bytes:
    """SHA-256 digest of a byte payload. Deterministic and seedless."""
    return hashlib.sha256(payload).digest()


@dataclass(frozen=True)
class Signature:
    signer: int
    bytes: bytes


@dataclass(frozen=True)
class KeyPair:
    """One participant's signing identity.

    Derived from ``sha256(seed_le8 || "key" || id)`` so a scenario seed pins
    every key in the run.
    """

    participant_id: int
    secret: Ed25519PrivateKey
    public: bytes  # raw 32-byte Ed25519 public key

    @classmethod
    def derive(cls, seed: int, participant_id: int) -> "KeyPair":
        material = hashlib.sha256(
            seed.to_bytes(8, "big") + b"key" + enc_u32(participant_id)
        ).digest()
        secret = Ed25519PrivateKey.from_private_bytes(material)
        public = secret.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
        return cls(participant_id, secret, public)

    def sign(self, msg: bytes) -> Signature:
        if len(msg) != DIGEST_SIZE:
            raise ValueError("signing input must be a 32-byte digest")
        return Signature(self.participant_id, self.secret.sign(msg))


def sign(key: KeyPair, msg: bytes) -> Signature:
    return key.sign(msg)


def verify(public: bytes, msg: bytes, sig: Signature) -> bool:
    """True iff ``sig.bytes`` is a valid Ed25519 signature over ``msg``."""
    cache_key = (public, msg, sig.bytes)
    cached = _verify_cache.get(cache_key)
    if cached is not None:
        return cached
    try:
        Ed25519PublicKey.from_public_bytes(public).verify(sig.bytes, msg)
        ok = True
    except (InvalidSignature, ValueError):
        ok = False
    _verify_cache[cache_key] = ok
    return ok


def verify_member(pubkeys: dict[int, bytes], msg: bytes, sig: Signature) -> bool:
    """Verify a signature against the key registered for its claimed signer.

    Binding the lookup to ``sig.signer`` means a signature can never be
    accepted under a different participant's identity.
    """
    public = pubkeys.get(sig.signer)
    if public is None:
        return False
    return verify(public, msg, sig)


@dataclass
class SignerSet:
    """Collected root signatures keyed by participant id."""

    n: int
    signatures: dict[int, Signature] = field(default_factory=dict)

    def add(self, sig: Signature) -> None:
        if sig.signer in self.signatures:
            raise DuplicateSignerError(f"duplicate signer {sig.signer}")
        self.signatures[sig.signer] = sig

    def __len__(self) -> int:
        return len(self.signatures)


def threshold_met(signer_set: SignerSet) -> bool:
    """Strict supermajority rule: distinct signers must exceed 2n/3.

    Exact integer comparison (3k > 2n), no floating point.
    """
    if signer_set.n < 3:
        raise ValueError("hyperedges require at least 3 participants")
    ids = list(signer_set.signatures)
    if len(set(ids)) != len(ids):
        raise DuplicateSignerError("duplicate signer id in set")
    return 3 * len(ids) > 2 * signer_set.n


def count_valid(signer_set: SignerSet, msg: bytes, pubkeys: dict[int, bytes]) -> int:
    """Number of signatures in the set that verify over ``msg``."""
    return sum(
        1 for sig in signer_set.signatures.values() if verify_member(pubkeys, msg, sig)
    )


def validated_threshold_met(
    signer_set: SignerSet, msg: bytes, pubkeys: dict[int, bytes]
) -> bool:
    """Threshold check that first discards signatures failing verification."""
    if signer_set.n < 3:
        raise ValueError("hyperedges require at least 3 participants")
    return 3 * count_valid(signer_set, msg, pubkeys) > 2 * signer_set.n

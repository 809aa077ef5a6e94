"""Hyperedge membership, balance vectors, Merkle commitments, and skewness.

Balances are integers in the smallest currency unit.  A commitment is the
root of a binary Merkle tree whose leaves hash (participant, balance) pairs
in participant order; an odd node at any level is paired with itself.
"""

from __future__ import annotations

from dataclasses import dataclass

from .codec import enc_u32, enc_u64
from .crypto import hash_bytes


class StateError(ValueError):
    pass


class NegativeBalanceError(StateError):
    """A delta application would push some participant below zero."""

    def __init__(self, participant: int, balance: int):
        self.participant = participant
        self.balance = balance
        super().__init__(f"participant {participant} balance would become {balance}")


@dataclass(frozen=True)
class Hyperedge:
    """A funded multi-party channel: ordered participant ids, fixed at funding."""

    id: str
    participants: tuple[int, ...]

    def __post_init__(self):
        if len(self.participants) < 3:
            raise StateError("hyperedge needs at least 3 participants")
        if len(set(self.participants)) != len(self.participants):
            raise StateError("duplicate participant in hyperedge")

    @property
    def n(self) -> int:
        return len(self.participants)

    def index_of(self, participant: int) -> int:
        return self.participants.index(participant)


@dataclass(frozen=True)
class StateCommitment:
    root: bytes
    height: int


def merkle_leaf(participant: int, balance: int) -> bytes:
    """Leaf digest over the canonical (participant, balance) encoding."""
    if balance < 0:
        raise StateError("negative balance")
    return hash_bytes(enc_u32(participant) + enc_u64(balance))


def merkle_root(participants: tuple[int, ...] | list[int], balances: list[int]) -> bytes:
    if len(participants) != len(balances):
        raise StateError("balance vector length mismatch")
    level = [merkle_leaf(p, b) for p, b in zip(participants, balances)]
    if not level:
        raise StateError("empty balance vector")
    while len(level) > 1:
        if len(level) % 2 == 1:
            level.append(level[-1])
        level = [
            hash_bytes(level[i] + level[i + 1]) for i in range(0, len(level), 2)
        ]
    return level[0]


def commit(
    participants: tuple[int, ...] | list[int], balances: list[int], height: int = 0
) -> StateCommitment:
    return StateCommitment(merkle_root(participants, balances), height)


def merkle_prove(
    participants: tuple[int, ...] | list[int], balances: list[int], index: int
) -> list[tuple[bytes, bool]]:
    """Inclusion proof for leaf ``index``: (sibling digest, sibling_is_right) pairs."""
    if index < 0 or index >= len(balances):
        raise StateError(f"index {index} out of range")
    level = [merkle_leaf(p, b) for p, b in zip(participants, balances)]
    proof = []
    pos = index
    while len(level) > 1:
        if len(level) % 2 == 1:
            level.append(level[-1])
        sibling = pos ^ 1
        proof.append((level[sibling], sibling > pos))
        level = [hash_bytes(level[i] + level[i + 1]) for i in range(0, len(level), 2)]
        pos //= 2
    return proof


def merkle_verify(root: bytes, leaf: bytes, proof: list[tuple[bytes, bool]]) -> bool:
    node = leaf
    for sibling, sibling_is_right in proof:
        if sibling_is_right:
            node = hash_bytes(node + sibling)
        else:
            node = hash_bytes(sibling + node)
    return node == root


def payment_delta(
    n: int, sender_idx: int, receiver_idx: int, value: int, fee: int
) -> list[int]:
    """Dense balance delta for one payment.

    Sender is debited value+fee, receiver credited value, and each of the
    n-2 uninvolved participants receives fee/(n-2).  The fee must divide
    evenly so no value is created or destroyed.
    """
    if n < 3:
        raise StateError("payment delta needs n >= 3")
    if sender_idx == receiver_idx:
        raise StateError("sender and receiver must differ")
    if value <= 0:
        raise StateError("value must be positive")
    if fee < 0:
        raise StateError("fee must be non-negative")
    if fee % (n - 2) != 0:
        raise StateError(f"fee {fee} not divisible by n-2 = {n - 2}")
    share = fee // (n - 2)
    delta = [share] * n
    delta[sender_idx] = -(value + fee)
    delta[receiver_idx] = value
    return delta


def apply_delta(balances: list[int], deltas: list[list[int]]) -> list[int]:
    """Element-wise application of deltas; total is conserved exactly."""
    out = list(balances)
    for delta in deltas:
        if len(delta) != len(out):
            raise StateError("delta length mismatch")
        for i, d in enumerate(delta):
            out[i] += d
    for i, b in enumerate(out):
        if b < 0:
            raise NegativeBalanceError(i, b)
    return out


def sum_payment_deltas(
    n: int, payments: list[tuple[int, int, int, int]]
) -> list[int]:
    """Summed delta vector for (sender_idx, receiver_idx, value, fee) tuples.

    O(n + k) instead of O(n * k): direct debits/credits are accumulated per
    participant and the uninvolved fee shares are reconstructed from fee
    totals at the end.
    """
    if n < 3:
        raise StateError("needs n >= 3")
    direct = [0] * n
    fees_involved = [0] * n
    total_fees = 0
    for s, r, v, f in payments:
        if f % (n - 2) != 0:
            raise StateError(f"fee {f} not divisible by n-2 = {n - 2}")
        direct[s] -= v + f
        direct[r] += v
        fees_involved[s] += f
        fees_involved[r] += f
        total_fees += f
    share_div = n - 2
    return [
        direct[i] + (total_fees - fees_involved[i]) // share_div for i in range(n)
    ]


def skewness(balances: list[int]) -> float:
    """Mean relative deviation of balances from the equal-share mean.

    Zero for a uniform vector; at most 2(n-1)/n, attained when one
    participant holds everything.
    """
    n = len(balances)
    total = sum(balances)
    if total <= 0:
        raise StateError("skewness undefined for a zero-total balance vector")
    mean = total / n
    return sum(abs(b - mean) for b in balances) / (n * mean)


def skewness_max(n: int) -> float:
    if n < 1:
        raise StateError("n must be >= 1")
    return 2.0 * (n - 1) / n

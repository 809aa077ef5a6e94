"""Payment leaves, revocation chains, and the per-participant local DAG.

Every participant maintains one ``LocalDag`` per hyperedge.  The DAG is a set
of per-proposer chains: a participant's chain is extended only by leaves that
participant authored and signed, linked forward through revocation hashes.
Revealing the secret behind a chain tip revokes it irreversibly, so each tip
admits exactly one successor and equivocation is detectable from two leaves
that reference the same tip.

Admission rules are total and deterministic: checks run in a fixed order and
the first violation is reported, so every honest node returns the same verdict
for the same (dag, leaf) pair.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from typing import Optional

from .codec import enc_bytes, enc_str, enc_u32, enc_u64
from .crypto import KeyPair, Signature, hash_bytes, verify_member
from .state import Hyperedge


class DagError(ValueError):
    pass


class InsufficientBalanceError(DagError):
    pass


class LockedPayerError(DagError):
    """The payer has an unresolved conditional leaf and cannot transact."""


@dataclass(frozen=True)
class RevocationTriple:
    """Forward-only chain link: hash of the parent tip's secret, the secret
    itself once revealed, and the hash of this leaf's own fresh secret."""

    prev_hash: bytes
    prev_secret: Optional[bytes]
    next_hash: bytes


@dataclass(frozen=True)
class ConditionSpec:
    """Predicate a conditional leaf waits on: a finalized payment of
    ``required_value`` from ``required_payer`` to ``required_payee`` inside
    ``source_hyperedge``, proven before ``timeout``."""

    source_hyperedge: str
    required_payer: int
    required_payee: int
    required_value: int
    timeout: int


@dataclass(frozen=True)
class DagLeaf:
    """One proposed payment.

    The leaf identity (``nonce``) is the digest of the canonical payload
    encoding, excluding signatures and the revealed secret, so it is stable
    across the unsigned, co-signed, and revealed stages.
    """

    hyperedge_id: str
    sender: int
    receiver: int
    value: int
    fee: int
    revocation: RevocationTriple
    condition: Optional[ConditionSpec]
    nonce: bytes
    sender_sig: Optional[Signature] = None
    receiver_sig: Optional[Signature] = None


def leaf_payload_digest(
    hyperedge_id: str,
    sender: int,
    receiver: int,
    value: int,
    fee: int,
    prev_hash: bytes,
    next_hash: bytes,
    condition: Optional[ConditionSpec],
) -> bytes:
    parts = [
        enc_str(hyperedge_id),
        enc_u32(sender),
        enc_u32(receiver),
        enc_u64(value),
        enc_u64(fee),
        enc_bytes(prev_hash),
        enc_bytes(next_hash),
    ]
    if condition is None:
        parts.append(b"\x00")
    else:
        parts.append(b"\x01")
        parts.append(enc_str(condition.source_hyperedge))
        parts.append(enc_u32(condition.required_payer))
        parts.append(enc_u32(condition.required_payee))
        parts.append(enc_u64(condition.required_value))
        parts.append(enc_u64(condition.timeout))
    return hash_bytes(b"".join(parts))


def make_leaf(
    hyperedge_id: str,
    sender: int,
    receiver: int,
    value: int,
    fee: int,
    prev_hash: bytes,
    next_hash: bytes,
    condition: Optional[ConditionSpec] = None,
) -> DagLeaf:
    nonce = leaf_payload_digest(
        hyperedge_id, sender, receiver, value, fee, prev_hash, next_hash, condition
    )
    return DagLeaf(
        hyperedge_id,
        sender,
        receiver,
        value,
        fee,
        RevocationTriple(prev_hash, None, next_hash),
        condition,
        nonce,
    )


class RevocationSecrets:
    """A participant's private secret chain for one hyperedge.

    Secrets are derived from ``sha256(seed || "rev" || edge || id || counter)``
    so runs are reproducible.  ``prepare_next`` samples the fresh secret for a
    new leaf; ``advance`` moves the tip once that leaf is accepted on-chain
    (for conditionals, once released).
    """

    def __init__(self, seed: int, hyperedge_id: str, participant_id: int):
        self._base = hashlib.sha256(
            seed.to_bytes(8, "big")
            + b"rev"
            + enc_str(hyperedge_id)
            + enc_u32(participant_id)
        ).digest()
        self._counter = 0
        self.tip_secret = self._derive(0)
        self._prepared: dict[bytes, bytes] = {}

    def _derive(self, counter: int) -> bytes:
        return hash_bytes(self._base + enc_u64(counter))

    def genesis_hash(self) -> bytes:
        return hash_bytes(self._derive(0))

    @property
    def tip_hash(self) -> bytes:
        return hash_bytes(self.tip_secret)

    def prepare_next(self) -> tuple[bytes, bytes]:
        """Sample a fresh secret; returns (secret, its hash)."""
        self._counter += 1
        secret = self._derive(self._counter)
        digest = hash_bytes(secret)
        self._prepared[digest] = secret
        return secret, digest

    def advance(self, next_hash: bytes) -> None:
        self.tip_secret = self._prepared.pop(next_hash)


@dataclass
class ProposerChain:
    """Strictly ordered sequence of one participant's accepted leaves."""

    owner: int
    tip_hash: bytes  # hash of the tip's unrevealed secret
    tip_nonce: Optional[bytes] = None  # nonce of the tip leaf; None at genesis
    leaves: list[DagLeaf] = field(default_factory=list)
    revoked_tips: set[bytes] = field(default_factory=set)
    window_start: int = 0  # index of the first leaf not yet in a finalized root


@dataclass(frozen=True)
class FraudEvidence:
    """Self-contained proof of proposer misbehavior.

    ``equivocation``: two validly signed leaves from one sender extending the
    same tip.  ``revoked_reuse``: a leaf whose parent tip's secret is known to
    have been revealed by a different accepted successor.
    """

    kind: str
    hyperedge_id: str
    cheater: int
    leaf_a: DagLeaf
    leaf_b: Optional[DagLeaf]
    revealed_secret: Optional[bytes]


class Verdict:
    __slots__ = ("ok", "reason")

    def __init__(self, ok: bool, reason: Optional[str] = None):
        self.ok = ok
        self.reason = reason

    def __bool__(self) -> bool:
        return self.ok

    def __repr__(self) -> str:
        return "accept" if self.ok else f"reject({self.reason})"


ACCEPT = Verdict(True)


class LocalDag:
    """One participant's replica of a hyperedge's off-chain state.

    Holds the per-proposer chains, pending conditional leaves, the last
    finalized checkpoint balances, and O(1) accumulators from which any
    member's current spendable balance is reconstructed without replay.
    """

    def __init__(
        self,
        hyperedge: Hyperedge,
        pubkeys: dict[int, bytes],
        genesis_revocation: dict[int, bytes],
        genesis_balances: list[int],
    ):
        self.hyperedge = hyperedge
        self.pubkeys = pubkeys
        self.index_of = {p: i for i, p in enumerate(hyperedge.participants)}
        self.chains = {
            p: ProposerChain(owner=p, tip_hash=genesis_revocation[p])
            for p in hyperedge.participants
        }
        self.root_balances = list(genesis_balances)
        self.last_root = None  # set by consensus once the genesis root exists
        self.pending: dict[bytes, DagLeaf] = {}
        self.locked_payers: dict[int, bytes] = {}
        self.leaf_index: dict[bytes, DagLeaf] = {}
        # accumulators over accepted-but-unfinalized leaves
        n = hyperedge.n
        self._direct = [0] * n
        self._fees_involved = [0] * n
        self._total_fees = 0

    # -- balance reconstruction -------------------------------------------

    def reconstruct_balance(self, participant: int) -> int:
        """Balance at the last finalized root plus all accepted deltas since.

        Fee shares land only on uninvolved participants, so participant i's
        fee income is (total fees - fees of leaves i took part in) / (n-2).
        """
        i = self.index_of[participant]
        n = self.hyperedge.n
        return (
            self.root_balances[i]
            + self._direct[i]
            + (self._total_fees - self._fees_involved[i]) // (n - 2)
        )

    def _apply_accepted(self, leaf: DagLeaf) -> None:
        s = self.index_of[leaf.sender]
        r = self.index_of[leaf.receiver]
        self._direct[s] -= leaf.value + leaf.fee
        self._direct[r] += leaf.value
        self._fees_involved[s] += leaf.fee
        self._fees_involved[r] += leaf.fee
        self._total_fees += leaf.fee

    # -- admission ---------------------------------------------------------

    def admit(self, leaf: DagLeaf, now: Optional[int] = None) -> Verdict:
        """Deterministic admission of a broadcast leaf.

        Check order: membership, payload form, signatures, payer lockout,
        parent tip, revealed secret, spendable balance, condition freshness.
        Conditional leaves park in ``pending`` without touching the chain;
        normal leaves extend the sender's chain and revoke the parent tip.
        """
        chain = self.chains.get(leaf.sender)
        if chain is None or leaf.receiver not in self.chains:
            return Verdict(False, "unknown_member")
        if leaf.sender == leaf.receiver:
            return Verdict(False, "self_payment")
        if leaf.value <= 0:
            return Verdict(False, "non_positive_value")
        if leaf.fee < 0 or leaf.fee % (self.hyperedge.n - 2) != 0:
            return Verdict(False, "non_canonical_delta")
        if leaf.nonce in self.leaf_index or leaf.nonce in self.pending:
            return Verdict(False, "duplicate_leaf")
        if leaf.sender_sig is None or leaf.receiver_sig is None:
            return Verdict(False, "missing_signature")
        if not verify_member(self.pubkeys, leaf.nonce, leaf.sender_sig) or (
            leaf.sender_sig.signer != leaf.sender
        ):
            return Verdict(False, "bad_sender_signature")
        if not verify_member(self.pubkeys, leaf.nonce, leaf.receiver_sig) or (
            leaf.receiver_sig.signer != leaf.receiver
        ):
            return Verdict(False, "bad_receiver_signature")
        if leaf.sender in self.locked_payers:
            return Verdict(False, "payer_locked")
        rev = leaf.revocation
        if rev.prev_hash != chain.tip_hash:
            if rev.prev_hash in chain.revoked_tips:
                return Verdict(False, "revoked_tip")
            return Verdict(False, "unknown_parent")
        if rev.prev_secret is None:
            return Verdict(False, "missing_secret")
        if hash_bytes(rev.prev_secret) != rev.prev_hash:
            return Verdict(False, "bad_secret")
        if self.reconstruct_balance(leaf.sender) < leaf.value + leaf.fee:
            return Verdict(False, "insufficient_balance")
        if leaf.condition is not None:
            if now is not None and leaf.condition.timeout <= now:
                return Verdict(False, "expired_condition")
            self.pending[leaf.nonce] = leaf
            self.locked_payers[leaf.sender] = leaf.nonce
            return ACCEPT
        self._extend(chain, leaf)
        return ACCEPT

    def _extend(self, chain: ProposerChain, leaf: DagLeaf) -> None:
        chain.revoked_tips.add(leaf.revocation.prev_hash)
        chain.tip_hash = leaf.revocation.next_hash
        chain.tip_nonce = leaf.nonce
        chain.leaves.append(leaf)
        self.leaf_index[leaf.nonce] = leaf
        self._apply_accepted(leaf)

    # -- conditional lifecycle ----------------------------------------------

    def release_conditional(self, nonce: bytes) -> Verdict:
        """Upgrade a pending conditional to a normal accepted leaf.

        The caller is responsible for having verified the proof that satisfies
        the leaf's condition.  The leaf extends the payer's chain using the
        secret revealed at creation time.
        """
        leaf = self.pending.get(nonce)
        if leaf is None:
            return Verdict(False, "not_pending")
        chain = self.chains[leaf.sender]
        if leaf.revocation.prev_hash != chain.tip_hash:
            return Verdict(False, "stale_parent")
        if self.reconstruct_balance(leaf.sender) < leaf.value + leaf.fee:
            return Verdict(False, "insufficient_balance")
        del self.pending[nonce]
        self.locked_payers.pop(leaf.sender, None)
        self._extend(chain, leaf)
        return ACCEPT

    def expire_conditional(self, nonce: bytes) -> bool:
        """Discard a pending conditional and lift the payer lockout.

        Prior accepted leaves are unaffected; the payer's chain tip stays
        usable because a pending conditional never consumed it.
        """
        leaf = self.pending.pop(nonce, None)
        if leaf is None:
            return False
        if self.locked_payers.get(leaf.sender) == nonce:
            del self.locked_payers[leaf.sender]
        return True

    # -- window bookkeeping --------------------------------------------------

    def window_leaves(self) -> list[DagLeaf]:
        """Accepted leaves not yet consolidated, in canonical order
        (participant order, then chain order)."""
        out = []
        for p in self.hyperedge.participants:
            chain = self.chains[p]
            out.extend(chain.leaves[chain.window_start :])
        return out

    def apply_root(self, root, new_balances: list[int], included_by_sender: dict[int, int]) -> None:
        """Move the finalized frontier forward after a root is accepted."""
        self.root_balances = list(new_balances)
        self.last_root = root
        for p, count in included_by_sender.items():
            self.chains[p].window_start += count
        # Rebuild accumulators from any straggler leaves accepted after the
        # proposal was built.
        n = self.hyperedge.n
        self._direct = [0] * n
        self._fees_involved = [0] * n
        self._total_fees = 0
        for leaf in self.window_leaves():
            self._apply_accepted(leaf)


def build_leaf(
    dag: LocalDag,
    keys: KeyPair,
    secrets: RevocationSecrets,
    receiver: int,
    value: int,
    fee: int,
    condition: Optional[ConditionSpec] = None,
    now: Optional[int] = None,
) -> DagLeaf:
    """Construct and sign a new leaf on the sender's own chain.

    The fresh secret's hash rides in the leaf; the parent secret is withheld
    until the receiver has co-signed.
    """
    sender = keys.participant_id
    if sender in dag.locked_payers:
        raise LockedPayerError(f"participant {sender} has an unresolved conditional")
    spendable = dag.reconstruct_balance(sender)
    if spendable < value + fee:
        raise InsufficientBalanceError(
            f"participant {sender} has {spendable}, needs {value + fee}"
        )
    if condition is not None and now is not None and condition.timeout <= now:
        raise DagError("condition timeout is not in the future")
    _, next_hash = secrets.prepare_next()
    leaf = make_leaf(
        dag.hyperedge.id,
        sender,
        receiver,
        value,
        fee,
        prev_hash=secrets.tip_hash,
        next_hash=next_hash,
        condition=condition,
    )
    return replace(leaf, sender_sig=keys.sign(leaf.nonce))


def receiver_verify(leaf: DagLeaf, dag: LocalDag, keys: KeyPair) -> tuple[Optional[DagLeaf], Optional[str]]:
    """The receiver's three deterministic checks before co-signing.

    1. the sender's reconstructed balance stays non-negative after the debit;
    2. the implied delta is exactly the canonical payment form;
    3. the leaf extends the latest accepted tip of the sender's chain.

    Returns (co-signed leaf, None) on acceptance, (None, reason) otherwise.
    """
    if leaf.sender_sig is None or not verify_member(
        dag.pubkeys, leaf.nonce, leaf.sender_sig
    ) or leaf.sender_sig.signer != leaf.sender:
        return None, "bad_signature"
    if leaf.sender in dag.locked_payers:
        return None, "payer_locked"
    if dag.reconstruct_balance(leaf.sender) < leaf.value + leaf.fee:
        return None, "insufficient_balance"
    n = dag.hyperedge.n
    if leaf.value <= 0 or leaf.fee < 0 or leaf.fee % (n - 2) != 0:
        return None, "non_canonical_delta"
    chain = dag.chains[leaf.sender]
    if leaf.revocation.prev_hash != chain.tip_hash:
        return None, "stale_parent"
    return replace(leaf, receiver_sig=keys.sign(leaf.nonce)), None


def reveal(secrets: RevocationSecrets, cosigned: DagLeaf) -> DagLeaf:
    """Attach the parent secret to a fully co-signed leaf for broadcast.

    Revealing irreversibly revokes the parent tip: after this, no other leaf
    extending that tip can ever be admitted by an honest node.
    """
    if cosigned.receiver_sig is None:
        raise DagError("cannot reveal before the receiver has co-signed")
    return replace(
        cosigned,
        revocation=replace(cosigned.revocation, prev_secret=secrets.tip_secret),
    )


def detect_equivocation(
    dag: LocalDag, leaf_a: DagLeaf, leaf_b: DagLeaf
) -> Optional[FraudEvidence]:
    """Evidence iff two distinct validly-signed leaves extend the same tip.

    An expired, never-finalized conditional does not conflict with its
    post-expiry successor: the conditional was discarded deterministically,
    so reuse of its parent tip is legitimate.
    """
    if leaf_a.sender != leaf_b.sender:
        return None
    if leaf_a.nonce == leaf_b.nonce:
        return None
    if leaf_a.revocation.prev_hash != leaf_b.revocation.prev_hash:
        return None
    for leaf in (leaf_a, leaf_b):
        if leaf.sender_sig is None or not verify_member(
            dag.pubkeys, leaf.nonce, leaf.sender_sig
        ):
            return None
    secret = leaf_a.revocation.prev_secret or leaf_b.revocation.prev_secret
    return FraudEvidence(
        kind="equivocation",
        hyperedge_id=dag.hyperedge.id,
        cheater=leaf_a.sender,
        leaf_a=leaf_a,
        leaf_b=leaf_b,
        revealed_secret=secret,
    )

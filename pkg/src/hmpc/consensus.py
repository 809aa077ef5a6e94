"""Checkpoint proposal, endorsement, verification, and threshold finalization.

At the end of each settlement window any participant may propose a new root
consolidating the window's accepted leaves.  A root finalizes once it carries
(a) an endorsement from the proposer of every parent tip it references and
(b) signatures from strictly more than two thirds of the hyperedge.  Honest
nodes recompute the balance transition independently, so an invalid root can
never reach threshold while fewer than n/3 members are Byzantine.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .codec import enc_bytes, enc_str, enc_u32, enc_u64
from .crypto import (
    KeyPair,
    Signature,
    SignerSet,
    ZERO_DIGEST,
    hash_bytes,
    threshold_met,
    verify_member,
)
from .dag import DagLeaf, LocalDag, Verdict, ACCEPT
from .state import (
    Hyperedge,
    StateCommitment,
    merkle_root,
    sum_payment_deltas,
)


class ConsensusError(ValueError):
    pass


@dataclass(frozen=True)
class SettlementWindow:
    duration: int
    current_window_start: int = 0

    def __post_init__(self):
        if self.duration <= 0:
            raise ConsensusError("window duration must be positive")

    def expiry(self) -> int:
        return self.current_window_start + self.duration


@dataclass(frozen=True)
class ParentTip:
    proposer: int
    leaf_nonce: bytes


@dataclass
class DagRoot:
    """A checkpoint: previous root, parent tips, included leaves, and the
    Merkle commitment to the resulting balance vector.

    ``digest`` covers every core field; endorsements and the signer set are
    collected over that digest, so they cannot be part of it.
    """

    hyperedge_id: str
    sequence: int
    prev_root: bytes
    parent_tips: list[ParentTip]
    included: list[tuple[bytes, bytes]]  # (leaf nonce, fresh revocation hash)
    commitment: StateCommitment
    digest: bytes
    endorsements: dict[int, Signature] = field(default_factory=dict)
    signer_set: SignerSet = None  # set in make_root

    def tip_for(self, proposer: int) -> Optional[ParentTip]:
        for tip in self.parent_tips:
            if tip.proposer == proposer:
                return tip
        return None


# Roots that have finalized are plain DagRoot values whose endorsement and
# signer-set requirements have been checked; the alias marks intent at call
# sites that require finality.
FinalizedRoot = DagRoot


def root_digest(
    hyperedge_id: str,
    sequence: int,
    prev_root: bytes,
    parent_tips: list[ParentTip],
    included: list[tuple[bytes, bytes]],
    commitment: StateCommitment,
) -> bytes:
    parts = [
        enc_str(hyperedge_id),
        enc_u64(sequence),
        enc_bytes(prev_root),
        enc_u32(len(parent_tips)),
    ]
    for tip in parent_tips:
        parts.append(enc_u32(tip.proposer))
        parts.append(enc_bytes(tip.leaf_nonce))
    parts.append(enc_u32(len(included)))
    for nonce, rev_hash in included:
        parts.append(enc_bytes(nonce))
        parts.append(enc_bytes(rev_hash))
    parts.append(enc_bytes(commitment.root))
    parts.append(enc_u64(commitment.height))
    return hash_bytes(b"".join(parts))


def make_root(
    hyperedge: Hyperedge,
    sequence: int,
    prev_root: bytes,
    parent_tips: list[ParentTip],
    included: list[tuple[bytes, bytes]],
    commitment: StateCommitment,
) -> DagRoot:
    digest = root_digest(
        hyperedge.id, sequence, prev_root, parent_tips, included, commitment
    )
    root = DagRoot(
        hyperedge.id, sequence, prev_root, parent_tips, included, commitment, digest
    )
    root.signer_set = SignerSet(n=hyperedge.n)
    return root


def genesis_root(hyperedge: Hyperedge, deposits: list[int]) -> DagRoot:
    """Sequence-0 root committing to the funding deposits.

    The genesis commitment is fixed by the funding transaction itself, so it
    carries no tips, endorsements, or signer set.
    """
    commitment = StateCommitment(merkle_root(hyperedge.participants, deposits), 0)
    return make_root(hyperedge, 0, ZERO_DIGEST, [], [], commitment)


def compute_transition(dag: LocalDag, leaves: list[DagLeaf]) -> list[int]:
    """Balance vector after applying the given accepted leaves to the last
    finalized balances."""
    n = dag.hyperedge.n
    payments = [
        (dag.index_of[lf.sender], dag.index_of[lf.receiver], lf.value, lf.fee)
        for lf in leaves
    ]
    delta = sum_payment_deltas(n, payments)
    out = [b + d for b, d in zip(dag.root_balances, delta)]
    for i, b in enumerate(out):
        if b < 0:
            raise ConsensusError(
                f"transition drives participant index {i} negative ({b})"
            )
    return out


def propose_root(dag: LocalDag) -> Optional[DagRoot]:
    """Build an unsigned, unendorsed proposal over the window's leaves.

    Deterministic: two honest nodes with identical replicas produce
    byte-identical proposals.  Returns None when the window is empty.
    Pending conditionals are never included.
    """
    leaves = dag.window_leaves()
    if not leaves:
        return None
    if dag.last_root is None:
        raise ConsensusError("no finalized root to extend")
    tips = []
    for p in dag.hyperedge.participants:
        chain = dag.chains[p]
        if chain.window_start < len(chain.leaves):
            tips.append(ParentTip(p, chain.tip_nonce))
    included = [(lf.nonce, lf.revocation.next_hash) for lf in leaves]
    sequence = dag.last_root.sequence + 1
    balances = compute_transition(dag, leaves)
    commitment = StateCommitment(
        merkle_root(dag.hyperedge.participants, balances), sequence
    )
    return make_root(
        dag.hyperedge, sequence, dag.last_root.digest, tips, included, commitment
    )


def endorse_tip(dag: LocalDag, root: DagRoot, keys: KeyPair) -> Optional[Signature]:
    """Endorse the root iff its recorded tip matches this proposer's own
    latest accepted leaf; refusal (None) otherwise.

    Refusing is what stops an adversary from manufacturing an alternative
    history for this proposer's chain.
    """
    tip = root.tip_for(keys.participant_id)
    if tip is None:
        return None
    own = dag.chains[keys.participant_id].tip_nonce
    if own is None or tip.leaf_nonce != own:
        return None
    return keys.sign(root.digest)


def verify_root(
    dag: LocalDag, root: DagRoot, check_endorsements: bool = True
) -> tuple[Verdict, Optional[list[int]]]:
    """Full deterministic verification of a proposal against the local replica.

    On acceptance also returns the recomputed balance vector so the caller can
    apply it at finalization without a second pass.
    """
    if root.hyperedge_id != dag.hyperedge.id:
        return Verdict(False, "wrong_hyperedge"), None
    if dag.last_root is None or root.prev_root != dag.last_root.digest:
        return Verdict(False, "wrong_prev_root"), None
    if root.sequence != dag.last_root.sequence + 1:
        return Verdict(False, "bad_sequence"), None
    if not root.included:
        return Verdict(False, "empty_root"), None

    leaves = []
    per_sender: dict[int, list[DagLeaf]] = {}
    for nonce, rev_hash in root.included:
        leaf = dag.leaf_index.get(nonce)
        if leaf is None:
            if nonce in dag.pending:
                return Verdict(False, "pending_conditional"), None
            return Verdict(False, "unknown_leaf"), None
        if leaf.revocation.next_hash != rev_hash:
            return Verdict(False, "bad_leaf_revocation_hash"), None
        leaves.append(leaf)
        per_sender.setdefault(leaf.sender, []).append(leaf)

    # Each sender's included leaves must be a contiguous prefix of that
    # sender's unconsolidated chain segment: no reordering, no gaps.
    tip_owners = {tip.proposer for tip in root.parent_tips}
    for sender, included_leaves in per_sender.items():
        chain = dag.chains[sender]
        segment = chain.leaves[chain.window_start : chain.window_start + len(included_leaves)]
        if [lf.nonce for lf in segment] != [lf.nonce for lf in included_leaves]:
            return Verdict(False, "non_contiguous_chain_segment"), None
        if sender not in tip_owners:
            return Verdict(False, "missing_parent_tip"), None

    for tip in root.parent_tips:
        included_for = per_sender.get(tip.proposer)
        if not included_for:
            return Verdict(False, "tip_without_leaves"), None
        if tip.leaf_nonce != included_for[-1].nonce:
            return Verdict(False, "tip_mismatch"), None

    if check_endorsements:
        for tip in root.parent_tips:
            endorsement = root.endorsements.get(tip.proposer)
            if endorsement is None:
                return Verdict(False, "missing_endorsement"), None
            if endorsement.signer != tip.proposer or not verify_member(
                dag.pubkeys, root.digest, endorsement
            ):
                return Verdict(False, "bad_endorsement"), None

    try:
        balances = compute_transition(dag, leaves)
    except ConsensusError:
        return Verdict(False, "negative_balance"), None
    expected = merkle_root(dag.hyperedge.participants, balances)
    if root.commitment.root != expected or root.commitment.height != root.sequence:
        return Verdict(False, "wrong_commitment"), None
    return ACCEPT, balances


def sign_root(keys: KeyPair, root: DagRoot) -> Signature:
    return keys.sign(root.digest)


def endorsements_complete(root: DagRoot, pubkeys: dict[int, bytes]) -> bool:
    for tip in root.parent_tips:
        sig = root.endorsements.get(tip.proposer)
        if sig is None or sig.signer != tip.proposer:
            return False
        if not verify_member(pubkeys, root.digest, sig):
            return False
    return True


def collect_and_finalize(
    root: DagRoot, signatures: list[Signature], pubkeys: dict[int, bytes]
) -> bool:
    """Fold verified signatures into the root's signer set.

    True exactly when the signer set strictly exceeds 2n/3 and every parent
    tip's endorsement is present and valid; False leaves the root pending.
    """
    for sig in signatures:
        if sig.signer in root.signer_set.signatures:
            continue
        if verify_member(pubkeys, root.digest, sig):
            root.signer_set.add(sig)
    return threshold_met(root.signer_set) and endorsements_complete(root, pubkeys)


def is_finalized(root: DagRoot, pubkeys: dict[int, bytes]) -> bool:
    """Structural finality: valid threshold signer set plus all endorsements.

    Genesis roots (sequence 0) are finalized by the funding transaction.
    """
    if root.sequence == 0:
        return not root.parent_tips and not root.included
    valid = SignerSet(n=root.signer_set.n)
    for sig in root.signer_set.signatures.values():
        if verify_member(pubkeys, root.digest, sig):
            valid.add(sig)
    return threshold_met(valid) and endorsements_complete(root, pubkeys)


def tiebreak_root(proposals: list[DagRoot]) -> DagRoot:
    """Deterministic selection among competing acceptable proposals: the
    lexicographically smallest digest wins at every honest node."""
    if not proposals:
        raise ConsensusError("no proposals to choose from")
    return min(proposals, key=lambda r: r.digest)


def apply_finalized(dag: LocalDag, root: DagRoot, balances: list[int]) -> None:
    """Advance the replica's finalized frontier to this root."""
    included_by_sender: dict[int, int] = {}
    for nonce, _ in root.included:
        sender = dag.leaf_index[nonce].sender
        included_by_sender[sender] = included_by_sender.get(sender, 0) + 1
    dag.apply_root(root, balances, included_by_sender)

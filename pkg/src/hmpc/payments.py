"""Cross-hyperedge transfer primitives: conditional leaves, proof-of-transfer,
release, expiry, and multi-hop routes.

A transfer between two hyperedges sharing a connector works in four steps:
the sender parks a conditional leaf in its own edge promising the connector
value plus a relay fee; the connector pays the receiver inside the other edge;
once that payment is consolidated under a threshold-signed root the connector
assembles a compact proof from the leaf and the two adjacent roots; every
member of the sender's edge verifies the proof independently and upgrades the
conditional leaf to a normal payment.  If the proof does not arrive before the
leaf's timeout, the leaf is discarded and nothing moved anywhere.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .consensus import DagRoot, is_finalized
from .crypto import verify_member
from .dag import ConditionSpec, DagLeaf, LocalDag, Verdict, ACCEPT


class PaymentError(ValueError):
    pass


@dataclass(frozen=True)
class ProofOfTransfer:
    """A finalized leaf plus the two adjacent threshold-signed roots.

    The signer sets ride on the roots themselves; the bundled (payer, payee,
    value) triple binds the proof to exactly one transfer.
    """

    leaf: DagLeaf
    root_before: DagRoot
    root_after: DagRoot


@dataclass(frozen=True)
class RouteHop:
    hyperedge_id: str
    connector: int  # pays forward out of this edge (receiver edge: pays the receiver)


@dataclass(frozen=True)
class Route:
    """A multi-hop payment path over overlapping hyperedges.

    ``hops[0]`` is the sender's edge; each adjacent pair of edges shares the
    listed connector.  Timeouts strictly decrease from the sender's edge
    toward the receiver's so that a downstream conditional always expires
    before the conditional that funds it.
    """

    hops: tuple[RouteHop, ...]
    sender: int
    receiver: int
    value: int
    relay_fee: int
    timeouts: tuple[int, ...]

    def __post_init__(self):
        if len(self.hops) < 1:
            raise PaymentError("route needs at least one edge")
        if len(self.timeouts) != max(len(self.hops) - 1, 0):
            raise PaymentError("one timeout per conditional hop required")
        if any(a <= b for a, b in zip(self.timeouts, self.timeouts[1:])):
            raise PaymentError("timeouts must strictly decrease toward the receiver")

    @property
    def num_conditionals(self) -> int:
        return len(self.hops) - 1

    def amount_at_hop(self, i: int) -> int:
        """Amount promised by the conditional in edge i: value plus the relay
        fees of every connector from hop i onward."""
        return self.value + self.relay_fee * (self.num_conditionals - i)


def build_proof(
    leaf: DagLeaf, root_before: DagRoot, root_after: DagRoot
) -> ProofOfTransfer:
    """Assemble a proof-of-transfer for a leaf consolidated in ``root_after``."""
    if root_after.prev_root != root_before.digest:
        raise PaymentError("roots are not adjacent")
    if root_after.sequence != root_before.sequence + 1:
        raise PaymentError("root sequence gap")
    if all(nonce != leaf.nonce for nonce, _ in root_after.included):
        raise PaymentError("leaf is not included in the later root")
    return ProofOfTransfer(leaf, root_before, root_after)


def verify_proof(
    proof: ProofOfTransfer,
    source_pubkeys: dict[int, bytes],
    expected: Optional[ConditionSpec] = None,
) -> Verdict:
    """Check a proof-of-transfer without reconstructing any DAG state.

    Verifies both leaf signatures, root adjacency, the inclusion of the leaf's
    nonce in the later root, the threshold signer sets (and endorsements) on
    both roots, and, when a condition is supplied, the exact (edge, payer,
    payee, value) binding.
    """
    leaf = proof.leaf
    if leaf.sender_sig is None or leaf.receiver_sig is None:
        return Verdict(False, "missing_leaf_signature")
    if leaf.sender_sig.signer != leaf.sender or not verify_member(
        source_pubkeys, leaf.nonce, leaf.sender_sig
    ):
        return Verdict(False, "bad_leaf_signature")
    if leaf.receiver_sig.signer != leaf.receiver or not verify_member(
        source_pubkeys, leaf.nonce, leaf.receiver_sig
    ):
        return Verdict(False, "bad_leaf_signature")
    if (
        proof.root_after.prev_root != proof.root_before.digest
        or proof.root_after.sequence != proof.root_before.sequence + 1
        or proof.root_before.hyperedge_id != leaf.hyperedge_id
        or proof.root_after.hyperedge_id != leaf.hyperedge_id
    ):
        return Verdict(False, "roots_not_adjacent")
    if all(nonce != leaf.nonce for nonce, _ in proof.root_after.included):
        return Verdict(False, "leaf_not_included")
    if not is_finalized(proof.root_before, source_pubkeys):
        return Verdict(False, "threshold_before")
    if not is_finalized(proof.root_after, source_pubkeys):
        return Verdict(False, "threshold_after")
    if expected is not None:
        if (
            leaf.hyperedge_id != expected.source_hyperedge
            or leaf.sender != expected.required_payer
            or leaf.receiver != expected.required_payee
            or leaf.value != expected.required_value
        ):
            return Verdict(False, "condition_mismatch")
    return ACCEPT


def release_conditional(
    dag: LocalDag,
    nonce: bytes,
    proof: ProofOfTransfer,
    source_pubkeys: dict[int, bytes],
    now: int,
) -> Verdict:
    """Upgrade a pending conditional leaf once its proof checks out.

    Every member runs this independently; there is no designated relayer of
    verdicts.  A proof that released one conditional can never release
    another (consumed-proof tracking), and a proof arriving at or after the
    timeout is refused because the leaf has already expired.
    """
    leaf = dag.pending.get(nonce)
    if leaf is None:
        return Verdict(False, "not_pending")
    if leaf.condition is None:
        return Verdict(False, "not_conditional")
    if now >= leaf.condition.timeout:
        return Verdict(False, "expired")
    consumed = getattr(dag, "consumed_proofs", None)
    if consumed is None:
        consumed = set()
        dag.consumed_proofs = consumed
    if proof.leaf.nonce in consumed:
        return Verdict(False, "proof_replayed")
    verdict = verify_proof(proof, source_pubkeys, leaf.condition)
    if not verdict:
        return verdict
    result = dag.release_conditional(nonce)
    if result:
        consumed.add(proof.leaf.nonce)
    return result


def expire_conditional(dag: LocalDag, nonce: bytes, now: int) -> bool:
    """Discard a pending conditional at or after its timeout (inclusive).

    Returns False when the leaf is unknown, already released, or not yet due.
    """
    leaf = dag.pending.get(nonce)
    if leaf is None or leaf.condition is None:
        return False
    if now < leaf.condition.timeout:
        return False
    return dag.expire_conditional(nonce)

"""Mock on-chain layer: funding, dispute arbitration, closure, escape/reseal.

The arbiter is a single in-process event consumer with an integer clock.  It
enforces covenant semantics logically (an exit transaction commits to the
digest of its reseal transaction) rather than through script emulation, and
it validates submitted roots by signature and consistency checks alone: a
root is acceptable when it carries a valid threshold signer set, all parent
tip endorsements, and a commitment matching the balances claimed for it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

from .codec import enc_bytes, enc_str, enc_u32, enc_u64
from .consensus import DagRoot, genesis_root, is_finalized
from .crypto import Signature, hash_bytes, verify_member
from .dag import DagLeaf, FraudEvidence
from .state import Hyperedge, merkle_leaf, merkle_root, merkle_verify


class ChainError(ValueError):
    pass


@dataclass(frozen=True)
class FundingTx:
    inputs: tuple[tuple[int, int], ...]  # (participant, deposit)
    hyperedge_id: str
    total: int
    policy: str


@dataclass(frozen=True)
class CloseTx:
    hyperedge_id: str
    root_digest: bytes
    outputs: tuple[tuple[int, int], ...]
    kind: str  # cooperative | dispute | penalty | escape_exit


def close_digest(hyperedge_id: str, root_digest: bytes, outputs) -> bytes:
    parts = [enc_str(hyperedge_id), enc_bytes(root_digest), enc_u32(len(outputs))]
    for pid, amount in outputs:
        parts.append(enc_u32(pid))
        parts.append(enc_u64(amount))
    return hash_bytes(b"".join(parts))


@dataclass
class DisputeCase:
    hyperedge_id: str
    submitter: int
    posted_root: DagRoot
    posted_balances: list[int]
    window_deadline: int
    best_root: DagRoot
    best_balances: list[int]
    challenges: list = field(default_factory=list)
    fraud: Optional[FraudEvidence] = None
    verdict: str = "open"  # open | settled | penalized


@dataclass(frozen=True)
class ExitTx:
    hyperedge_id: str
    participant: int
    balance: int
    root: DagRoot
    merkle_proof: tuple
    reseal_commitment: bytes  # digest of the paired reseal transaction


@dataclass(frozen=True)
class ResealTx:
    new_hyperedge_id: str
    outputs: tuple[tuple[int, int], ...]
    genesis_commitment: bytes


@dataclass(frozen=True)
class EscapePair:
    tx1: ExitTx
    tx2: ResealTx


def reseal_digest(tx2: ResealTx) -> bytes:
    parts = [enc_str(tx2.new_hyperedge_id), enc_u32(len(tx2.outputs))]
    for pid, amount in tx2.outputs:
        parts.append(enc_u32(pid))
        parts.append(enc_u64(amount))
    parts.append(enc_bytes(tx2.genesis_commitment))
    return hash_bytes(b"".join(parts))


def build_escape_pair(
    hyperedge: Hyperedge,
    root: DagRoot,
    balances: list[int],
    participant: int,
) -> EscapePair:
    """Construct the covenant-linked exit/reseal pair for one participant.

    The exit withdraws exactly the participant's balance under ``root``; the
    reseal re-locks everything else for the remaining members and commits to
    their balance vector as the new edge's genesis state.
    """
    from .state import merkle_prove

    if hyperedge.n - 1 < 3:
        raise ChainError("escape would leave fewer than 3 members; close instead")
    idx = hyperedge.index_of(participant)
    proof = merkle_prove(hyperedge.participants, balances, idx)
    remaining = [
        (p, b) for p, b in zip(hyperedge.participants, balances) if p != participant
    ]
    new_id = f"{hyperedge.id}/r{root.sequence}-{participant}"
    commitment = merkle_root([p for p, _ in remaining], [b for _, b in remaining])
    tx2 = ResealTx(new_id, tuple(remaining), commitment)
    tx1 = ExitTx(
        hyperedge.id,
        participant,
        balances[idx],
        root,
        tuple(proof),
        reseal_digest(tx2),
    )
    return EscapePair(tx1, tx2)


@dataclass
class ChainRecord:
    hyperedge: Hyperedge
    pubkeys: dict[int, bytes]
    funding: FundingTx
    genesis: DagRoot
    genesis_revocation: dict[int, bytes]
    status: str = "open"  # open | disputed | closed
    payouts: list[tuple[int, int]] = field(default_factory=list)


class Arbiter:
    """Serialized consumer of all on-chain submissions.

    Emits one structured record per event through ``log`` (a callable taking
    a dict), forming the chain section of the run's event log.
    """

    def __init__(self, dispute_window: int, log: Optional[Callable] = None):
        if dispute_window <= 0:
            raise ChainError("dispute window must be positive")
        self.dispute_window = dispute_window
        self.records: dict[str, ChainRecord] = {}
        self.disputes: dict[str, DisputeCase] = {}
        self._log = log or (lambda record: None)

    # -- funding -----------------------------------------------------------

    def fund(
        self,
        hyperedge_id: str,
        deposits: list[tuple[int, int]],
        pubkeys: dict[int, bytes],
        genesis_revocation: dict[int, bytes],
    ) -> tuple[Hyperedge, FundingTx, DagRoot]:
        """Lock all deposits into one shared output and fix the genesis state."""
        if hyperedge_id in self.records:
            raise ChainError(f"hyperedge {hyperedge_id} already funded")
        participants = tuple(p for p, _ in deposits)
        if len(set(participants)) != len(participants):
            raise ChainError("duplicate participant in funding")
        for p, amount in deposits:
            if amount <= 0:
                raise ChainError(f"participant {p} deposit must be positive")
        hyperedge = Hyperedge(hyperedge_id, participants)  # enforces n >= 3
        for p in participants:
            if p not in pubkeys or p not in genesis_revocation:
                raise ChainError(f"participant {p} missing key or revocation hash")
        total = sum(a for _, a in deposits)
        funding = FundingTx(tuple(deposits), hyperedge_id, total, f"{hyperedge.n}-party")
        genesis = genesis_root(hyperedge, [a for _, a in deposits])
        self.records[hyperedge_id] = ChainRecord(
            hyperedge, dict(pubkeys), funding, genesis, dict(genesis_revocation)
        )
        self._log(
            {
                "type": "chain_fund",
                "hyperedge": hyperedge_id,
                "total": total,
                "n": hyperedge.n,
            }
        )
        return hyperedge, funding, genesis

    def _open_record(self, hyperedge_id: str) -> ChainRecord:
        record = self.records.get(hyperedge_id)
        if record is None:
            raise ChainError(f"unknown hyperedge {hyperedge_id}")
        if record.status == "closed":
            raise ChainError(f"hyperedge {hyperedge_id} already closed")
        return record

    def _check_root(
        self, record: ChainRecord, root: DagRoot, balances: list[int]
    ) -> None:
        if root.hyperedge_id != record.hyperedge.id:
            raise ChainError("root belongs to a different hyperedge")
        if root.sequence == 0:
            if root.digest != record.genesis.digest:
                raise ChainError("forged genesis root")
        elif not is_finalized(root, record.pubkeys):
            raise ChainError("root is not threshold-finalized")
        if len(balances) != record.hyperedge.n:
            raise ChainError("balance vector length mismatch")
        if merkle_root(record.hyperedge.participants, balances) != root.commitment.root:
            raise ChainError("balances do not match the root commitment")
        if sum(balances) != record.funding.total:
            raise ChainError("balances do not conserve the funding total")

    # -- cooperative closure -------------------------------------------------

    def cooperative_close(
        self,
        hyperedge_id: str,
        final_root: DagRoot,
        balances: list[int],
        authorizations: list[Signature],
    ) -> CloseTx:
        """Single settlement transaction authorized by every member."""
        record = self._open_record(hyperedge_id)
        self._check_root(record, final_root, balances)
        outputs = tuple(zip(record.hyperedge.participants, balances))
        digest = close_digest(hyperedge_id, final_root.digest, outputs)
        signers = set()
        for sig in authorizations:
            if verify_member(record.pubkeys, digest, sig):
                signers.add(sig.signer)
        missing = [p for p in record.hyperedge.participants if p not in signers]
        if missing:
            raise ChainError(f"missing close authorization from {missing}")
        return self._settle(record, final_root, outputs, "cooperative")

    def _settle(self, record, root, outputs, kind) -> CloseTx:
        tx = CloseTx(record.hyperedge.id, root.digest, tuple(outputs), kind)
        record.status = "closed"
        record.payouts.extend(outputs)
        self._log(
            {
                "type": "chain_close",
                "hyperedge": record.hyperedge.id,
                "kind": kind,
                "root_sequence": root.sequence,
                "outputs": [[p, a] for p, a in outputs],
            }
        )
        return tx

    # -- unilateral closure and disputes --------------------------------------

    def unilateral_close(
        self,
        hyperedge_id: str,
        submitter: int,
        root: DagRoot,
        balances: list[int],
        now: int,
    ) -> DisputeCase:
        """Post a root on-chain and open the dispute window."""
        record = self._open_record(hyperedge_id)
        if hyperedge_id in self.disputes and self.disputes[hyperedge_id].verdict == "open":
            raise ChainError("dispute already open")
        self._check_root(record, root, balances)
        case = DisputeCase(
            hyperedge_id=hyperedge_id,
            submitter=submitter,
            posted_root=root,
            posted_balances=list(balances),
            window_deadline=now + self.dispute_window,
            best_root=root,
            best_balances=list(balances),
        )
        record.status = "disputed"
        self.disputes[hyperedge_id] = case
        self._log(
            {
                "type": "chain_root_posted",
                "hyperedge": hyperedge_id,
                "submitter": submitter,
                "sequence": root.sequence,
                "deadline": case.window_deadline,
            }
        )
        return case

    def challenge(
        self,
        case: DisputeCase,
        challenger: int,
        now: int,
        newer_root: Optional[DagRoot] = None,
        newer_balances: Optional[list[int]] = None,
        evidence: Optional[FraudEvidence] = None,
    ) -> DisputeCase:
        """Submit a strictly newer finalized root and/or fraud evidence."""
        if case.verdict != "open":
            raise ChainError("dispute already settled")
        if now >= case.window_deadline:
            raise ChainError("dispute window has closed")
        record = self.records[case.hyperedge_id]
        outcome = []
        if newer_root is not None:
            self._check_root(record, newer_root, newer_balances or [])
            if newer_root.sequence <= case.best_root.sequence:
                raise ChainError("challenge root is not strictly newer")
            case.best_root = newer_root
            case.best_balances = list(newer_balances)
            outcome.append("newer_root")
        if evidence is not None:
            if not self._validate_evidence(record, case, evidence):
                raise ChainError("malformed fraud evidence")
            case.fraud = evidence
            outcome.append("fraud_proven")
        if not outcome:
            raise ChainError("empty challenge")
        case.challenges.append((challenger, tuple(outcome)))
        self._log(
            {
                "type": "chain_challenge",
                "hyperedge": case.hyperedge_id,
                "challenger": challenger,
                "outcome": list(outcome),
                "best_sequence": case.best_root.sequence,
            }
        )
        return case

    def _validate_evidence(
        self, record: ChainRecord, case: DisputeCase, evidence: FraudEvidence
    ) -> bool:
        """Cryptographic validation of fraud evidence against the submitter.

        ``equivocation``: two distinct non-conditional leaves signed by the
        submitter extending the same tip.  (A conditional leaf and its
        post-expiry successor legitimately share a tip, so conditional leaves
        are not accepted as equivocation evidence.)

        ``revoked_tip_reuse``: the submitter posted a root whose recorded tip
        for their own chain was later consumed: a validly signed newer leaf
        extends that tip and carries the revealed secret.
        """
        if evidence.hyperedge_id != record.hyperedge.id:
            return False
        if evidence.cheater != case.submitter:
            return False
        if evidence.kind == "equivocation":
            a, b = evidence.leaf_a, evidence.leaf_b
            if b is None or a.nonce == b.nonce:
                return False
            if a.sender != evidence.cheater or b.sender != evidence.cheater:
                return False
            if a.condition is not None or b.condition is not None:
                return False
            if a.revocation.prev_hash != b.revocation.prev_hash:
                return False
            for leaf in (a, b):
                if leaf.sender_sig is None or not verify_member(
                    record.pubkeys, leaf.nonce, leaf.sender_sig
                ):
                    return False
            return True
        if evidence.kind == "revoked_tip_reuse":
            leaf = evidence.leaf_a
            secret = evidence.revealed_secret
            if secret is None or leaf.sender != evidence.cheater:
                return False
            if leaf.sender_sig is None or not verify_member(
                record.pubkeys, leaf.nonce, leaf.sender_sig
            ):
                return False
            if hash_bytes(secret) != leaf.revocation.prev_hash:
                return False
            # the consumed tip must be the cheater's recorded tip in the
            # posted root
            posted = case.posted_root
            tip = posted.tip_for(evidence.cheater)
            if tip is None:
                return False
            recorded = dict(posted.included).get(tip.leaf_nonce)
            return recorded == leaf.revocation.prev_hash
        return False

    def settle_dispute(self, case: DisputeCase, now: int) -> CloseTx:
        """Resolve the case at its deadline.

        A proven fraud settles from the newest uncontested root with the
        cheater's balance redistributed pro-rata to the other members;
        otherwise the newest valid submitted root settles as-is.
        """
        if case.verdict != "open":
            raise ChainError("dispute already settled")
        if now < case.window_deadline:
            raise ChainError("dispute window still open")
        record = self.records[case.hyperedge_id]
        participants = record.hyperedge.participants
        if case.fraud is not None:
            case.verdict = "penalized"
            balances = redistribute_penalty(
                list(case.best_balances),
                participants.index(case.submitter),
            )
            outputs = tuple(zip(participants, balances))
            self._log(
                {
                    "type": "chain_verdict",
                    "hyperedge": case.hyperedge_id,
                    "verdict": "penalized",
                    "cheater": case.submitter,
                }
            )
            return self._settle(record, case.best_root, outputs, "penalty")
        case.verdict = "settled"
        outputs = tuple(zip(participants, case.best_balances))
        self._log(
            {
                "type": "chain_verdict",
                "hyperedge": case.hyperedge_id,
                "verdict": "settled",
                "sequence": case.best_root.sequence,
            }
        )
        return self._settle(record, case.best_root, outputs, "dispute")

    # -- escape / reseal -------------------------------------------------------

    def submit_reseal_alone(self, tx2: ResealTx) -> None:
        """A reseal without its confirmed exit is always rejected."""
        raise ChainError("reseal transaction is covenant-bound to an exit")

    def apply_escape(
        self,
        pair: EscapePair,
        new_genesis_revocation: dict[int, bytes],
    ) -> tuple[CloseTx, Hyperedge, DagRoot]:
        """Atomically apply the exit/reseal pair.

        Either both transactions validate and execute, or neither does: the
        exit commits to the reseal's digest, and the reseal is only valid in
        the same submission as its confirmed exit.
        """
        tx1, tx2 = pair.tx1, pair.tx2
        record = self._open_record(tx1.hyperedge_id)
        hyperedge = record.hyperedge
        if hyperedge.n - 1 < 3:
            raise ChainError("escape would leave fewer than 3 members; close instead")
        if tx1.participant not in hyperedge.participants:
            raise ChainError("exit participant is not a member")
        root = tx1.root
        if root.sequence == 0:
            if root.digest != record.genesis.digest:
                raise ChainError("forged genesis root")
        elif not is_finalized(root, record.pubkeys):
            raise ChainError("exit root is not threshold-finalized")
        if reseal_digest(tx2) != tx1.reseal_commitment:
            raise ChainError("reseal does not match the exit's covenant commitment")
        leaf = merkle_leaf(tx1.participant, tx1.balance)
        if not merkle_verify(root.commitment.root, leaf, list(tx1.merkle_proof)):
            raise ChainError("invalid balance inclusion proof")
        expected_members = tuple(
            p for p in hyperedge.participants if p != tx1.participant
        )
        if tuple(p for p, _ in tx2.outputs) != expected_members:
            raise ChainError("reseal membership mismatch")
        reseal_total = sum(a for _, a in tx2.outputs)
        if reseal_total + tx1.balance != record.funding.total:
            raise ChainError("escape does not conserve the funding total")
        if (
            merkle_root([p for p, _ in tx2.outputs], [a for _, a in tx2.outputs])
            != tx2.genesis_commitment
        ):
            raise ChainError("reseal genesis commitment mismatch")

        # both transactions are valid: execute atomically
        record.status = "closed"
        record.payouts.append((tx1.participant, tx1.balance))
        exit_tx = CloseTx(
            hyperedge.id, root.digest, ((tx1.participant, tx1.balance),), "escape_exit"
        )
        new_edge, _, new_genesis = self.fund(
            tx2.new_hyperedge_id,
            list(tx2.outputs),
            {p: record.pubkeys[p] for p, _ in tx2.outputs},
            new_genesis_revocation,
        )
        # the reseal's locked value is the old funding output, not a payout
        record.payouts.extend(tx2.outputs)
        self._log(
            {
                "type": "chain_escape",
                "hyperedge": hyperedge.id,
                "participant": tx1.participant,
                "payout": tx1.balance,
                "reseal": tx2.new_hyperedge_id,
                "reseal_total": reseal_total,
            }
        )
        return exit_tx, new_edge, new_genesis

    # -- audits -----------------------------------------------------------------

    def conservation_ok(self, hyperedge_id: str) -> bool:
        """Exact conservation: payouts of a terminated hyperedge equal funding."""
        record = self.records[hyperedge_id]
        if record.status != "closed":
            return True
        return sum(a for _, a in record.payouts) == record.funding.total


def redistribute_penalty(balances: list[int], cheater_idx: int) -> list[int]:
    """Strip the cheater's balance and share it pro-rata among the others.

    Integer-exact: floor shares first, then the remainder one unit at a time
    in participant-index order (by largest fractional remainder, ties by
    index), so the total is conserved to the unit.
    """
    forfeited = balances[cheater_idx]
    out = list(balances)
    out[cheater_idx] = 0
    if forfeited == 0:
        return out
    others = [i for i in range(len(balances)) if i != cheater_idx]
    weight_total = sum(balances[i] for i in others)
    if weight_total == 0:
        base, rem = divmod(forfeited, len(others))
        for rank, i in enumerate(others):
            out[i] += base + (1 if rank < rem else 0)
        return out
    shares = []
    floor_total = 0
    for i in others:
        exact = forfeited * balances[i]
        floor_share, frac = divmod(exact, weight_total)
        shares.append((i, floor_share, frac))
        floor_total += floor_share
    remainder = forfeited - floor_total
    by_frac = sorted(shares, key=lambda t: (-t[2], t[0]))
    bonus = {i for i, _, _ in by_frac[:remainder]}
    for i, floor_share, _ in shares:
        out[i] += floor_share + (1 if i in bonus else 0)
    return out

"""Wire-level message payloads, commit certificates, and network envelopes.

Sender identity on an envelope is authoritative: the harness only ever
stamps the true producer, which is the stand-in for authenticated channels.
Faulty nodes may say arbitrary things but never as somebody else.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Mapping

from .core import Command, InstanceId, OrderingTuple, OwnerNumber


@dataclass(frozen=True)
class ClientRequest:
    kind = "request"
    client: str
    command: Command


@dataclass(frozen=True)
class SpecOrder:
    """Speculative ordering proposal, broadcast by an instance's owner."""

    kind = "spec_order"
    instance: InstanceId
    tuple: OrderingTuple
    owner_number: OwnerNumber
    client: str


@dataclass(frozen=True)
class SpecReply:
    """A replica's speculative reply; also the record certificates are built from."""

    kind = "spec_reply"
    sender: str
    client: str
    instance: InstanceId
    tuple: OrderingTuple
    owner_number: OwnerNumber
    result: str = ""


@dataclass(frozen=True)
class CommitCertificate:
    """A set of spec replies packaged by a client to vouch for a tuple.

    cert_kind "fast" needs 3f+1 identical replies; "slow" needs 2f+1 replies
    and vouches for their dep union and seq max.
    """

    cert_kind: str
    replies: tuple[SpecReply, ...]

    @property
    def instance(self) -> InstanceId:
        return self.replies[0].instance

    @property
    def owner_number(self) -> OwnerNumber:
        return self.replies[0].owner_number

    def vouched_tuple(self) -> OrderingTuple:
        if self.cert_kind == "fast":
            return self.replies[0].tuple
        deps: set[InstanceId] = set()
        seq = 0
        for r in self.replies:
            deps |= r.tuple.deps
            seq = max(seq, r.tuple.seq)
        return OrderingTuple(self.replies[0].tuple.command, frozenset(deps), seq)

    def validate(self, n: int, f: int) -> str | None:
        """Return a rejection reason, or None when the certificate is acceptable.

        Slow-path validation deliberately checks only what the replies
        themselves support (distinct senders, one owner number, union/max
        consistency); it cannot see which replies a client chose to omit.
        """
        from .core import tuples_equal

        if not self.replies:
            return "empty certificate"
        senders = {r.sender for r in self.replies}
        if len(senders) != len(self.replies):
            return "duplicate senders in certificate"
        if len({r.instance for r in self.replies}) != 1:
            return "certificate mixes instances"
        if len({r.owner_number for r in self.replies}) != 1:
            return "certificate mixes owner numbers"
        if len({r.tuple.command.id for r in self.replies}) != 1:
            return "certificate mixes commands"
        if self.cert_kind == "fast":
            if len(self.replies) != n:
                return f"fast certificate needs {n} replies"
            first = self.replies[0].tuple
            if not all(tuples_equal(r.tuple, first) for r in self.replies):
                return "fast certificate replies are not identical"
        elif self.cert_kind == "slow":
            if len(self.replies) < 2 * f + 1:
                return f"slow certificate needs at least {2 * f + 1} replies"
        else:
            return f"unknown certificate kind {self.cert_kind!r}"
        return None


@dataclass(frozen=True)
class CommitFast:
    kind = "commit_fast"
    instance: InstanceId
    certificate: CommitCertificate


@dataclass(frozen=True)
class Commit:
    kind = "commit"
    instance: InstanceId
    tuple: OrderingTuple
    certificate: CommitCertificate


@dataclass(frozen=True)
class CommitReply:
    kind = "commit_reply"
    sender: str
    client: str
    instance: InstanceId
    tuple: OrderingTuple
    result: str


@dataclass(frozen=True)
class OwnerChangeVote:
    """One replica's vote to move an instance into a new owner number.

    Carries the sender's currently accepted tuple, the spec reply it sent
    under the previous owner number, and any commit certificate it holds.
    """

    kind = "owner_change"
    sender: str
    instance: InstanceId
    owner_number: OwnerNumber
    accepted_tuple: OrderingTuple | None = None
    spec_reply: SpecReply | None = None
    certificate: CommitCertificate | None = None


@dataclass(frozen=True)
class NewOwner:
    """The new owner's decision, carrying the votes that justify it."""

    kind = "new_owner"
    instance: InstanceId
    tuple: OrderingTuple
    owner_number: OwnerNumber
    proof: tuple[OwnerChangeVote, ...]


Payload = (
    ClientRequest
    | SpecOrder
    | SpecReply
    | CommitFast
    | Commit
    | CommitReply
    | OwnerChangeVote
    | NewOwner
)


@dataclass(frozen=True)
class Envelope:
    """One point-to-point message in flight. Broadcasts are one envelope per
    recipient; ids are ``sender#counter`` and double as trace references."""

    id: str
    sender: str
    recipient: str
    payload: Payload
    hop: int

    @property
    def kind(self) -> str:
        return self.payload.kind


def payload_to_json(p: Payload) -> dict[str, Any]:
    if isinstance(p, ClientRequest):
        return {"kind": p.kind, "client": p.client, "command": p.command.to_json()}
    if isinstance(p, SpecOrder):
        return {
            "kind": p.kind,
            "instance": str(p.instance),
            "tuple": p.tuple.to_json(),
            "owner_number": p.owner_number,
            "client": p.client,
        }
    if isinstance(p, SpecReply):
        return {
            "kind": p.kind,
            "sender": p.sender,
            "client": p.client,
            "instance": str(p.instance),
            "tuple": p.tuple.to_json(),
            "owner_number": p.owner_number,
            "result": p.result,
        }
    if isinstance(p, CommitFast):
        return {
            "kind": p.kind,
            "instance": str(p.instance),
            "certificate": certificate_to_json(p.certificate),
        }
    if isinstance(p, Commit):
        return {
            "kind": p.kind,
            "instance": str(p.instance),
            "tuple": p.tuple.to_json(),
            "certificate": certificate_to_json(p.certificate),
        }
    if isinstance(p, CommitReply):
        return {
            "kind": p.kind,
            "sender": p.sender,
            "client": p.client,
            "instance": str(p.instance),
            "tuple": p.tuple.to_json(),
            "result": p.result,
        }
    if isinstance(p, OwnerChangeVote):
        return {
            "kind": p.kind,
            "sender": p.sender,
            "instance": str(p.instance),
            "owner_number": p.owner_number,
            "accepted_tuple": p.accepted_tuple.to_json() if p.accepted_tuple else None,
            "spec_reply": payload_to_json(p.spec_reply) if p.spec_reply else None,
            "certificate": certificate_to_json(p.certificate) if p.certificate else None,
        }
    if isinstance(p, NewOwner):
        return {
            "kind": p.kind,
            "instance": str(p.instance),
            "tuple": p.tuple.to_json(),
            "owner_number": p.owner_number,
            "proof": [payload_to_json(v) for v in p.proof],
        }
    raise TypeError(f"unknown payload {p!r}")


def certificate_to_json(c: CommitCertificate) -> dict[str, Any]:
    return {"cert_kind": c.cert_kind, "replies": [payload_to_json(r) for r in c.replies]}


def certificate_from_json(data: Mapping[str, Any]) -> CommitCertificate:
    return CommitCertificate(
        data["cert_kind"], tuple(payload_from_json(r) for r in data["replies"])
    )


def payload_from_json(data: Mapping[str, Any]) -> Payload:
    kind = data["kind"]
    if kind == "request":
        return ClientRequest(data["client"], Command.from_json(data["command"]))
    if kind == "spec_order":
        return SpecOrder(
            InstanceId.parse(data["instance"]),
            OrderingTuple.from_json(data["tuple"]),
            data["owner_number"],
            data["client"],
        )
    if kind == "spec_reply":
        return SpecReply(
            data["sender"],
            data["client"],
            InstanceId.parse(data["instance"]),
            OrderingTuple.from_json(data["tuple"]),
            data["owner_number"],
            data.get("result", ""),
        )
    if kind == "commit_fast":
        return CommitFast(
            InstanceId.parse(data["instance"]), certificate_from_json(data["certificate"])
        )
    if kind == "commit":
        return Commit(
            InstanceId.parse(data["instance"]),
            OrderingTuple.from_json(data["tuple"]),
            certificate_from_json(data["certificate"]),
        )
    if kind == "commit_reply":
        return CommitReply(
            data["sender"],
            data["client"],
            InstanceId.parse(data["instance"]),
            OrderingTuple.from_json(data["tuple"]),
            data["result"],
        )
    if kind == "owner_change":
        return OwnerChangeVote(
            data["sender"],
            InstanceId.parse(data["instance"]),
            data["owner_number"],
            OrderingTuple.from_json(data["accepted_tuple"]) if data.get("accepted_tuple") else None,
            payload_from_json(data["spec_reply"]) if data.get("spec_reply") else None,
            certificate_from_json(data["certificate"]) if data.get("certificate") else None,
        )
    if kind == "new_owner":
        return NewOwner(
            InstanceId.parse(data["instance"]),
            OrderingTuple.from_json(data["tuple"]),
            data["owner_number"],
            tuple(payload_from_json(v) for v in data["proof"]),
        )
    raise ValueError(f"unknown payload kind {kind!r}")


def envelope_to_json(e: Envelope) -> dict[str, Any]:
    return {
        "id": e.id,
        "sender": e.sender,
        "recipient": e.recipient,
        "hop": e.hop,
        "payload": payload_to_json(e.payload),
    }


def envelope_from_json(data: Mapping[str, Any]) -> Envelope:
    return Envelope(
        data["id"], data["sender"], data["recipient"], payload_from_json(data["payload"]), data["hop"]
    )

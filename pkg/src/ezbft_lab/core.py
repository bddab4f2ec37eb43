"""Core value types for the EZBFT lab: configurations, commands, instances,
and the ordering-attribute arithmetic everything else is built on."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping


class MissingDependency(Exception):
    """A dependency cites an instance that is absent from the known map."""


@dataclass(frozen=True, order=True)
class InstanceId:
    """A slot in one replica's instance space, written ``owner.slot``."""

    owner: str
    slot: int

    def __str__(self) -> str:
        return f"{self.owner}.{self.slot}"

    @classmethod
    def parse(cls, text: str) -> "InstanceId":
        owner, _, slot = text.rpartition(".")
        if not owner:
            raise ValueError(f"malformed instance id: {text!r}")
        return cls(owner, int(slot))


@dataclass(frozen=True)
class Command:
    """A client command. Interference is decided purely by ``key``."""

    id: str
    client: str
    key: str
    payload: str

    def to_json(self) -> dict[str, Any]:
        return {"id": self.id, "client": self.client, "key": self.key, "payload": self.payload}

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> "Command":
        return cls(data["id"], data["client"], data["key"], data["payload"])


@dataclass(frozen=True)
class OrderingTuple:
    """``(command, deps, seq)`` as assigned by a replica.

    deps cite instances, not tuples; a dep may reference an instance no
    correct replica ever heard of (a byzantine owner's private slot), so
    nothing here requires deps to resolve.
    """

    command: Command
    deps: frozenset[InstanceId]
    seq: int

    def to_json(self) -> dict[str, Any]:
        return {
            "command": self.command.to_json(),
            "deps": [str(d) for d in sorted(self.deps)],
            "seq": self.seq,
        }

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> "OrderingTuple":
        return cls(
            Command.from_json(data["command"]),
            frozenset(InstanceId.parse(d) for d in data["deps"]),
            data["seq"],
        )


# Owner numbers are plain ints; the mapping to a leader lives on Config.
OwnerNumber = int


@dataclass(frozen=True)
class Config:
    """A run's fixed membership: n = 3f + 1 replicas in a fixed order.

    The position of a replica in ``replica_ids`` is what breaks execution
    ties and what owner numbers rotate over.
    """

    n: int
    f: int
    replica_ids: tuple[str, ...]
    byzantine_ids: frozenset[str] = frozenset()
    faulty_client_ids: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        if self.n != 3 * self.f + 1:
            raise ValueError(f"n must equal 3f+1, got n={self.n} f={self.f}")
        if len(self.replica_ids) != self.n or len(set(self.replica_ids)) != self.n:
            raise ValueError("replica_ids must be n distinct ids")
        if not self.byzantine_ids <= set(self.replica_ids):
            raise ValueError("byzantine_ids must be a subset of replica_ids")
        if len(self.byzantine_ids) > self.f:
            raise ValueError("at most f replicas may be byzantine")
        for rid in self.replica_ids:
            if "." in rid or "#" in rid:
                raise ValueError(f"replica id {rid!r} may not contain '.' or '#'")

    @property
    def quorum_slow(self) -> int:
        return 2 * self.f + 1

    @property
    def quorum_owner_change(self) -> int:
        return self.n - self.f

    def position(self, replica: str) -> int:
        return self.replica_ids.index(replica)

    def leader_at(self, owner_number: OwnerNumber) -> str:
        return self.replica_ids[owner_number % self.n]

    def default_owner_number(self, instance: InstanceId) -> OwnerNumber:
        """The owner number an instance starts at: its owner leads it."""
        return self.position(instance.owner)

    def correct_replicas(self) -> tuple[str, ...]:
        return tuple(r for r in self.replica_ids if r not in self.byzantine_ids)

    def to_json(self) -> dict[str, Any]:
        return {
            "n": self.n,
            "f": self.f,
            "replica_ids": list(self.replica_ids),
            "byzantine_ids": sorted(self.byzantine_ids),
            "faulty_client_ids": sorted(self.faulty_client_ids),
        }

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> "Config":
        return cls(
            data["n"],
            data["f"],
            tuple(data["replica_ids"]),
            frozenset(data["byzantine_ids"]),
            frozenset(data["faulty_client_ids"]),
        )


def interferes(a: Command, b: Command) -> bool:
    """Two distinct commands interfere iff they touch the same key."""
    return a.id != b.id and a.key == b.key


def compute_seq(deps: Iterable[InstanceId], known: Mapping[InstanceId, OrderingTuple]) -> int:
    """Sequence number implied by a dependency set: one past the max dep seq.

    Every dep must resolve in ``known``; callers that tolerate dangling
    references filter first.
    """
    best = 0
    for dep in deps:
        if dep not in known:
            raise MissingDependency(str(dep))
        best = max(best, known[dep].seq)
    return best + 1


def tuples_equal(p: OrderingTuple, q: OrderingTuple) -> bool:
    """Equality for protocol purposes: command identity, dep set, seq."""
    return p.command.id == q.command.id and p.deps == q.deps and p.seq == q.seq


def tuple_sort_key(t: OrderingTuple) -> tuple:
    """Canonical order used wherever one tuple must be picked deterministically."""
    return (t.seq, t.command.id, tuple(sorted(str(d) for d in t.deps)))


def canonical_json(value: Any) -> str:
    """Stable, compact JSON used for digests and golden files."""
    return json.dumps(value, sort_keys=True, separators=(",", ":"))


def digest(value: Any) -> str:
    """Short stable digest of a JSON-serializable structure."""
    return hashlib.sha256(canonical_json(value).encode()).hexdigest()[:16]

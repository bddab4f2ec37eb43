"""Deterministic discrete-event harness.

A Schedule is the complete description of a run: configuration, workload,
and an ordered event list. Running it is pure replay — virtual time is the
event index, message ids are assigned deterministically at emission, and
every handler is a deterministic step function — so the same schedule
always produces the byte-identical trace. Messages are never lost: an
undelivered envelope stays pending until some event delivers it.

Delivery semantics by recipient:
  - correct replica / correct client: the payload goes straight into the
    matching protocol handler;
  - byzantine replica: the payload lands in an inbox and nothing happens
    until an adversary event consumes it;
  - faulty client: the payload is recorded (clients can always read their
    channel) but protocol reactions come only from adversary events.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Mapping

from . import adversary as adversary_mod
from . import client as client_mod
from . import owner_change
from .client import ClientState
from .core import Command, Config, InstanceId, canonical_json, digest
from .messages import (
    ClientRequest,
    CommitReply,
    Envelope,
    SpecReply,
    certificate_to_json,
    envelope_to_json,
    payload_to_json,
)
from .replica import ReplicaState
from .adversary import ByzantineChoice, FaultyClientChoice

DELIVER = "deliver"
TIMEOUT = "timeout"
TRIGGER_OWNER_CHANGE = "trigger_owner_change"
ADVERSARY = "adversary"

DRAIN_CAP = 10_000


class ScheduleError(Exception):
    """The schedule asked for something the run cannot do."""


@dataclass(frozen=True)
class WorkItem:
    """One client command submission: who sends what to which replica."""

    client: str
    command: Command
    target: str

    def to_json(self) -> dict[str, Any]:
        return {"client": self.client, "command": self.command.to_json(), "target": self.target}

    @staticmethod
    def from_json(data: Mapping[str, Any]) -> "WorkItem":
        return WorkItem(data["client"], Command.from_json(data["command"]), data["target"])


@dataclass(frozen=True)
class Event:
    """One scheduled step. Exactly the fields for its kind are set:

    deliver:              message (an envelope id)
    timeout:              client, command (a command id)
    trigger_owner_change: replica, instance
    adversary:            node, choice
    """

    kind: str
    message: str | None = None
    client: str | None = None
    command: str | None = None
    replica: str | None = None
    instance: InstanceId | None = None
    node: str | None = None
    choice: ByzantineChoice | FaultyClientChoice | None = None
    note: str = ""

    def to_json(self) -> dict[str, Any]:
        data: dict[str, Any] = {"kind": self.kind}
        if self.message is not None:
            data["message"] = self.message
        if self.client is not None:
            data["client"] = self.client
        if self.command is not None:
            data["command"] = self.command
        if self.replica is not None:
            data["replica"] = self.replica
        if self.instance is not None:
            data["instance"] = str(self.instance)
        if self.node is not None:
            data["node"] = self.node
        if self.choice is not None:
            data["choice"] = adversary_mod.choice_to_json(self.choice)
        if self.note:
            data["note"] = self.note
        return data

    @staticmethod
    def from_json(data: Mapping[str, Any]) -> "Event":
        return Event(
            kind=data["kind"],
            message=data.get("message"),
            client=data.get("client"),
            command=data.get("command"),
            replica=data.get("replica"),
            instance=InstanceId.parse(data["instance"]) if data.get("instance") else None,
            node=data.get("node"),
            choice=adversary_mod.choice_from_json(data["choice"]) if data.get("choice") else None,
            note=data.get("note", ""),
        )


@dataclass(frozen=True)
class Schedule:
    """A complete, replayable run description."""

    config: Config
    workload: tuple[WorkItem, ...]
    events: tuple[Event, ...]
    tail_start: int | None = None
    seq_mode: str = client_mod.SEQ_MODE_MAX

    def to_json(self) -> dict[str, Any]:
        return {
            "config": self.config.to_json(),
            "workload": [w.to_json() for w in self.workload],
            "events": [e.to_json() for e in self.events],
            "tail_start": self.tail_start,
            "seq_mode": self.seq_mode,
        }

    @staticmethod
    def from_json(data: Mapping[str, Any]) -> "Schedule":
        return Schedule(
            config=Config.from_json(data["config"]),
            workload=tuple(WorkItem.from_json(w) for w in data["workload"]),
            events=tuple(Event.from_json(e) for e in data["events"]),
            tail_start=data.get("tail_start"),
            seq_mode=data.get("seq_mode", client_mod.SEQ_MODE_MAX),
        )

    def write(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(canonical_json(self.to_json()) + "\n")

    @staticmethod
    def read(path: str) -> "Schedule":
        import json

        with open(path, "r", encoding="utf-8") as fh:
            return Schedule.from_json(json.load(fh))


@dataclass
class Trace:
    """Header (the schedule) plus one record per executed event."""

    schedule: Schedule
    records: list[dict[str, Any]]

    def lines(self) -> list[str]:
        head = canonical_json({"schedule": self.schedule.to_json()})
        return [head] + [canonical_json(r) for r in self.records]

    def serialize(self) -> str:
        return "\n".join(self.lines()) + "\n"

    def write(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.serialize())

    @staticmethod
    def read(path: str) -> "Trace":
        import json

        with open(path, "r", encoding="utf-8") as fh:
            lines = [ln for ln in fh.read().splitlines() if ln.strip()]
        if not lines:
            raise ScheduleError("empty trace file")
        head = json.loads(lines[0])
        schedule = Schedule.from_json(head["schedule"])
        return Trace(schedule, [json.loads(ln) for ln in lines[1:]])


class Sim:
    """Live simulation state: every node plus the message pool.

    The constructor seeds one pending request envelope per workload item
    (hop 0); nothing else happens until events are applied.
    """

    def __init__(
        self,
        cfg: Config,
        workload: tuple[WorkItem, ...],
        record_trace: bool = False,
        seq_mode: str = client_mod.SEQ_MODE_MAX,
    ):
        self.cfg = cfg
        self.workload = workload
        self.record_trace = record_trace
        self.seq_mode = seq_mode
        self.replicas: dict[str, ReplicaState] = {r: ReplicaState(r) for r in cfg.replica_ids}
        self.clients: dict[str, ClientState] = {}
        self.envelopes: dict[str, Envelope] = {}
        self.delivered: set[str] = set()
        self.counters: dict[str, int] = {}
        self.inboxes: dict[str, list[tuple[str, Any]]] = {b: [] for b in sorted(cfg.byzantine_ids)}
        self.consumed: dict[str, set[int]] = {b: set() for b in sorted(cfg.byzantine_ids)}
        self.seq_no = 0
        self.tail_start: int | None = None
        self.records: list[dict[str, Any]] = []
        # Cheap observation logs kept even with tracing off.
        self.commit_log: list[dict[str, Any]] = []
        self.selection_log: list[dict[str, Any]] = []

        for item in workload:
            state = self.clients.setdefault(item.client, ClientState(item.client))
            client_mod.new_request(state, item.command, item.target)
            self._emit(item.client, item.target, ClientRequest(item.client, item.command), hop=0)

    def clone(self) -> "Sim":
        twin = Sim.__new__(Sim)
        twin.cfg = self.cfg
        twin.workload = self.workload
        twin.record_trace = self.record_trace
        twin.seq_mode = self.seq_mode
        twin.replicas = {k: v.clone() for k, v in self.replicas.items()}
        twin.clients = {k: v.clone() for k, v in self.clients.items()}
        twin.envelopes = dict(self.envelopes)
        twin.delivered = set(self.delivered)
        twin.counters = dict(self.counters)
        twin.inboxes = {k: list(v) for k, v in self.inboxes.items()}
        twin.consumed = {k: set(v) for k, v in self.consumed.items()}
        twin.seq_no = self.seq_no
        twin.tail_start = self.tail_start
        twin.records = list(self.records)
        twin.commit_log = list(self.commit_log)
        twin.selection_log = list(self.selection_log)
        return twin

    # -- emission and delivery ------------------------------------------

    def _emit(self, sender: str, recipient: str, payload: Any, hop: int) -> Envelope:
        count = self.counters.get(sender, 0)
        self.counters[sender] = count + 1
        env = Envelope(f"{sender}#{count}", sender, recipient, payload, hop)
        self.envelopes[env.id] = env
        return env

    def pending(self) -> list[Envelope]:
        return [e for e in self.envelopes.values() if e.id not in self.delivered]

    def _wrap(self, sender: str, outputs: list[tuple[str, Any]], hop: int) -> list[Envelope]:
        return [self._emit(sender, recipient, payload, hop) for recipient, payload in outputs]

    def _deliver(self, env_id: str) -> tuple[list[Envelope], list[dict[str, Any]]]:
        env = self.envelopes.get(env_id)
        if env is None:
            raise ScheduleError(f"deliver references unknown message {env_id!r}")
        if env.id in self.delivered:
            raise ScheduleError(f"message {env_id!r} was already delivered")
        self.delivered.add(env.id)
        node = env.recipient

        if node in self.cfg.byzantine_ids:
            self.inboxes[node].append((env.sender, env.payload))
            return [], [{"type": "inbox", "node": node, "from": env.sender, "kind": env.kind}]

        if node in self.cfg.replica_ids:
            outputs, effects = adversary_mod.honest_step(
                self.replicas[node], self.cfg, env.sender, env.payload
            )
            return self._wrap(node, outputs, env.hop + 1), effects

        if node in self.clients:
            state = self.clients[node]
            if node in self.cfg.faulty_client_ids:
                if isinstance(env.payload, SpecReply):
                    client_mod.record_reply(state, env.payload)
                elif isinstance(env.payload, CommitReply):
                    client_mod.record_commit_reply(state, env.payload)
                return [], [{"type": "recorded", "node": node, "kind": env.kind}]
            if isinstance(env.payload, SpecReply):
                outputs, effects = client_mod.on_spec_reply(state, self.cfg, env.payload)
            elif isinstance(env.payload, CommitReply):
                outputs, effects = client_mod.on_commit_reply(state, self.cfg, env.payload)
            else:
                return [], [{"type": "drop", "node": node, "reason": "unexpected_payload"}]
            return self._wrap(node, outputs, env.hop + 1), effects

        raise ScheduleError(f"message {env_id!r} addressed to unknown node {node!r}")

    # -- event application ----------------------------------------------

    def apply(self, event: Event) -> dict[str, Any]:
        """Execute one event; returns (and, if tracing, retains) its record."""
        if event.kind == DELIVER:
            emitted, effects = self._deliver(event.message)
        elif event.kind == TIMEOUT:
            emitted, effects = self._apply_timeout(event)
        elif event.kind == TRIGGER_OWNER_CHANGE:
            emitted, effects = self._apply_trigger(event)
        elif event.kind == ADVERSARY:
            emitted, effects = self._apply_adversary(event)
        else:
            raise ScheduleError(f"unknown event kind {event.kind!r}")

        for eff in effects:
            if eff.get("type") == "commit":
                self.commit_log.append({**eff, "seq_no": self.seq_no})
            elif eff.get("type") == "selection":
                self.selection_log.append({**eff, "seq_no": self.seq_no})

        record = {
            "seq_no": self.seq_no,
            "kind": event.kind,
            "event": event.to_json(),
            "emitted": [envelope_to_json(e) for e in emitted],
            "effects": effects,
            "digests": self.node_digests() if self.record_trace else {},
        }
        self.seq_no += 1
        if self.record_trace:
            self.records.append(record)
        return record

    def _apply_timeout(self, event: Event) -> tuple[list[Envelope], list[dict[str, Any]]]:
        if event.client not in self.clients:
            raise ScheduleError(f"timeout for unknown client {event.client!r}")
        if event.client in self.cfg.faulty_client_ids:
            raise ScheduleError("timeouts fire only for correct clients")
        outputs, effects = client_mod.on_timeout(
            self.clients[event.client], self.cfg, event.command, self.seq_mode
        )
        return self._wrap(event.client, outputs, 0), effects

    def _apply_trigger(self, event: Event) -> tuple[list[Envelope], list[dict[str, Any]]]:
        if event.replica not in self.cfg.replica_ids:
            raise ScheduleError(f"owner-change trigger for unknown replica {event.replica!r}")
        if event.replica in self.cfg.byzantine_ids:
            raise ScheduleError("owner-change triggers apply to correct replicas only")
        outputs, effects = owner_change.make_vote(
            self.replicas[event.replica], self.cfg, event.instance
        )
        return self._wrap(event.replica, outputs, 0), effects

    def _apply_adversary(self, event: Event) -> tuple[list[Envelope], list[dict[str, Any]]]:
        node = event.node
        try:
            if node in self.cfg.byzantine_ids:
                if not isinstance(event.choice, ByzantineChoice):
                    raise ScheduleError(f"{node} takes byzantine choices")
                outputs, effects = adversary_mod.apply_byzantine(
                    self.replicas[node], self.cfg, self.inboxes[node], self.consumed[node], event.choice
                )
            elif node in self.cfg.faulty_client_ids:
                if not isinstance(event.choice, FaultyClientChoice):
                    raise ScheduleError(f"{node} takes faulty-client choices")
                state = self.clients.get(node)
                if state is None:
                    raise ScheduleError(f"faulty client {node!r} has no workload")
                outputs, effects = adversary_mod.apply_faulty_client(state, self.cfg, event.choice)
            else:
                raise ScheduleError(f"adversary event for non-faulty node {node!r}")
        except (adversary_mod.BadChoice, adversary_mod.ForgedReply) as exc:
            raise ScheduleError(f"adversary event failed: {exc}") from exc
        return self._wrap(node, outputs, 0), effects

    # -- snapshots --------------------------------------------------------

    def node_digests(self) -> dict[str, str]:
        out = {r: digest(self._replica_json(state)) for r, state in self.replicas.items()}
        out.update({c: digest(self._client_json(state)) for c, state in self.clients.items()})
        return out

    def _replica_json(self, state: ReplicaState) -> dict[str, Any]:
        return {
            "id": state.id,
            "next_slot": state.next_slot,
            "log": {
                str(i): {
                    "tuple": rec.tuple.to_json(),
                    "owner_number": rec.owner_number,
                    "status": rec.status,
                    "certificate": certificate_to_json(rec.certificate) if rec.certificate else None,
                }
                for i, rec in state.log.items()
            },
            "sent_replies": {str(i): payload_to_json(r) for i, r in state.sent_replies.items()},
            "owner_numbers": {str(i): n for i, n in state.owner_numbers.items()},
            "votes": {
                f"{i}@{n}": {s: payload_to_json(v) for s, v in votes.items()}
                for (i, n), votes in state.votes.items()
            },
            "decisions": {f"{i}@{n}": d.to_json() for (i, n), d in state.decisions.items()},
            "voted": sorted(f"{i}@{n}" for i, n in state.voted),
            "executed": [list(e) for e in state.executed],
            "kv": {k: list(v) for k, v in state.kv.items()},
        }

    def _client_json(self, state: ClientState) -> dict[str, Any]:
        return {
            "id": state.id,
            "requests": {
                cid: {
                    "target": req.target,
                    "phase": req.phase,
                    "timer_armed": req.timer_armed,
                    "replies": {s: payload_to_json(r) for s, r in req.replies.items()},
                    "commit_replies": {s: payload_to_json(r) for s, r in req.commit_replies.items()},
                }
                for cid, req in state.requests.items()
            },
            "received": [payload_to_json(r) for r in state.received],
        }

    def dedup_json(self) -> dict[str, Any]:
        """Identity of this state for search deduplication: node states plus
        the pending multiset and byzantine inboxes, no envelope ids.

        Arrival orders that cannot influence future behavior (a client's
        received-reply history, inbox item order) are sorted away so that
        commuting delivery interleavings collapse to one search state.
        """
        clients = {}
        for c, s in self.clients.items():
            data = self._client_json(s)
            data["received"] = sorted(canonical_json(r) for r in data["received"])
            clients[c] = data
        return {
            "replicas": {r: self._replica_json(s) for r, s in self.replicas.items()},
            "clients": clients,
            "pending": sorted(
                canonical_json(
                    {"from": e.sender, "to": e.recipient, "payload": payload_to_json(e.payload)}
                )
                for e in self.pending()
            ),
            "inboxes": {
                b: sorted(
                    canonical_json(
                        {"from": s, "payload": payload_to_json(p), "consumed": i in self.consumed[b]}
                    )
                    for i, (s, p) in enumerate(items)
                )
                for b, items in self.inboxes.items()
            },
        }


def run(schedule: Schedule, record_trace: bool = True) -> tuple[Sim, Trace]:
    """Replay a schedule from scratch. Deterministic: equal schedules give
    byte-identical traces."""
    sim = Sim(schedule.config, schedule.workload, record_trace, schedule.seq_mode)
    sim.tail_start = schedule.tail_start
    for event in schedule.events:
        sim.apply(event)
    return sim, Trace(schedule, sim.records)


def pending_messages(sim: Sim) -> list[str]:
    """Ids of produced-but-undelivered messages, in emission order."""
    return [e.id for e in sim.pending()]

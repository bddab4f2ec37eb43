"""Deterministic simulation laboratory for a leaderless speculative BFT
protocol: protocol state machines, a replayable discrete-event harness,
property checkers, scripted failure scenarios, and a bounded-model
explorer that rediscovers the failures from scratch."""

__version__ = "0.1.0"

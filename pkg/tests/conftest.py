"""Shared fixtures: a four-replica membership and a tiny command set."""

import pytest

from ezbft_lab.core import Command, Config, InstanceId, OrderingTuple

REPLICAS = ("R", "L", "Q", "T")


@pytest.fixture
def cfg():
    return Config(4, 1, REPLICAS)


@pytest.fixture
def byz_cfg():
    return Config(
        4, 1, REPLICAS,
        byzantine_ids=frozenset({"T"}),
        faulty_client_ids=frozenset({"c1"}),
    )


@pytest.fixture
def cmd_a():
    return Command("a", "c1", "k", "va")


@pytest.fixture
def cmd_b():
    return Command("b", "c2", "k", "vb")


@pytest.fixture
def bare(cmd_a):
    """The tuple a sole proposer assigns: no deps, seq 1."""
    return OrderingTuple(cmd_a, frozenset(), 1)


@pytest.fixture
def ext(cmd_a):
    """The same command ordered after T.0."""
    return OrderingTuple(cmd_a, frozenset({InstanceId("T", 0)}), 2)

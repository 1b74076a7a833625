from __future__ import annotations

import logging

import pytest

from bftdsn.core.ledger import LedgerConfig, genesis_hash_of, genesis_state
from bftdsn.core.merkle_pos import build_tree, random_sector_data
from bftdsn.core.wts import wts_setup
from bftdsn.harness.config import (
    ConsensusSpec,
    NetworkSpec,
    ScenarioConfig,
    WorkloadSpec,
)
from bftdsn.sim.adversary import AdversaryConfig

SEED = 11
SECTOR_SIZE = 1024
FRAGMENT_SIZE = 32


@pytest.fixture(scope="session")
def pp():
    return wts_setup(128, SEED)


@pytest.fixture(scope="session")
def sector_trees():
    """Five sectors: miner 1 owns 1 and 2, miners 2..4 own one each."""
    return {
        sid: build_tree(random_sector_data(SEED, sid, SECTOR_SIZE), FRAGMENT_SIZE)
        for sid in range(1, 6)
    }


@pytest.fixture(scope="session")
def pledges(sector_trees):
    owners = {1: 1, 2: 1, 3: 2, 4: 3, 5: 4}
    return tuple((owners[sid], sid, tree.root) for sid, tree in sector_trees.items())


@pytest.fixture(scope="session")
def ledger_config(pp, pledges):
    return LedgerConfig(
        pp=pp,
        genesis_hash=genesis_hash_of(SEED, pledges),
        sector_size=SECTOR_SIZE,
        fragment_size=FRAGMENT_SIZE,
        pos_grace=0,
        key_epoch=1,
    )


@pytest.fixture
def genesis(ledger_config, pledges):
    return genesis_state(ledger_config, pledges)


@pytest.fixture
def sim_log(caplog, monkeypatch):
    """``caplog`` that still sees ``bftdsn.sim`` after its log file is attached."""
    monkeypatch.setattr(logging.getLogger("bftdsn.sim"), "propagate", True)
    caplog.set_level(logging.WARNING, logger="bftdsn.sim")
    return caplog


def small_scenario(**overrides) -> ScenarioConfig:
    """A few-node deployment that runs in well under a second of wall time."""
    scenario = ScenarioConfig(
        name="test",
        seed=SEED,
        trials=1,
        network=NetworkSpec(
            n=7,
            sectors_per_node=1.0,
            delta_ms=10.0,
            sector_size=4096,
            fragment_size=FRAGMENT_SIZE,
        ),
        adversary=AdversaryConfig(),
        workload=WorkloadSpec(files=2, file_size=600),
        consensus=ConsensusSpec(block_interval_ms=20.0, op_timeout_ms=60_000.0),
    )
    return scenario.with_overrides(**overrides)


@pytest.fixture
def scenario():
    return small_scenario()

"""Builds a simulated deployment from a scenario.

Nodes arrive one after another and pledge a Poisson-distributed number of
sectors each until ``n`` sectors are pledged; nodes that drew zero are
dropped. Sector contents are seeded pseudorandom fill, so the genesis
roots (and through them the genesis hash) depend on the seed alone.
"""

from __future__ import annotations

import logging
import math
import shutil
from dataclasses import dataclass, replace

from bftdsn.core.fingerprint import BLOCK_SIZE
from bftdsn.core.ledger import (
    LedgerConfig,
    LedgerState,
    compute_f,
    genesis_hash_of,
    genesis_state,
)
from bftdsn.core.merkle_pos import SectorTree, build_tree, random_sector_data
from bftdsn.core.utils import make_rng, next_power_of_two
from bftdsn.core.wts import wts_setup
from bftdsn.harness.config import ScenarioConfig
from bftdsn.infra.database import ChainStore
from bftdsn.infra.settings import SettingsLoader
from bftdsn.protocol.client import Client, ClientConfig
from bftdsn.protocol.miner import MinerNode, NodeConfig
from bftdsn.sim.adversary import Coalition, apply_strategy, select_byzantine
from bftdsn.sim.netsim import LinkPolicy, Network

logger = logging.getLogger("bftdsn.sim.harness")

CLIENT_BASE = 10_000


def pledge_counts(n: int, mean: float, seed: int) -> list[int]:
    """Sectors per arriving node, zero-sector nodes removed, summing to ``n``."""
    rng = make_rng(seed, "pledges")
    counts: list[int] = []
    total = 0
    while total < n:
        drawn = int(rng.poisson(mean))
        if drawn == 0:
            continue
        drawn = min(drawn, n - total)
        counts.append(drawn)
        total += drawn
    return counts


def fit_sector_size(scenario: ScenarioConfig) -> int:
    """Configured sector size, grown to a power of two that holds the workload."""
    network, workload = scenario.network, scenario.workload
    # chunks grow when Byzantine sectors drop out, so size for the smallest n
    smallest = max(4, network.n - scenario.adversary.budget(network.n))
    k = smallest - compute_f(smallest)
    unit = k * BLOCK_SIZE
    chunk = math.ceil(workload.file_size / unit) * BLOCK_SIZE
    needed = workload.files * chunk + network.fragment_size
    return max(network.sector_size, next_power_of_two(needed))


@dataclass
class SimNetwork:
    scenario: ScenarioConfig
    network: Network
    config: LedgerConfig
    pledges: tuple[tuple[int, int, bytes], ...]
    miners: dict[int, MinerNode]
    clients: list[Client]
    coalition: Coalition
    byzantine: list[int]

    @property
    def honest(self) -> list[MinerNode]:
        return [node for node in self.miners.values() if not node.byzantine]

    @property
    def gateway(self) -> MinerNode:
        return self.honest[0]

    def genesis(self) -> LedgerState:
        return genesis_state(self.config, self.pledges)

    def start(self) -> None:
        for node in self.miners.values():
            node.start()

    def min_height(self) -> int:
        return min(node.state.height for node in self.honest)

    def byzantine_weight(self) -> int:
        weights = self.gateway.state.live_weights()
        return sum(weights.get(node_id, 0) for node_id in self.byzantine)


def build_network(scenario: ScenarioConfig) -> SimNetwork:
    spec = scenario.network
    seed = scenario.seed
    sector_size = fit_sector_size(scenario)

    counts = pledge_counts(spec.n, spec.sectors_per_node, seed)
    holdings: dict[int, dict[int, SectorTree]] = {}
    pledges: list[tuple[int, int, bytes]] = []
    sector_id = 0
    for node_id, count in enumerate(counts, start=1):
        holdings[node_id] = {}
        for _ in range(count):
            sector_id += 1
            data = random_sector_data(seed, sector_id, sector_size)
            tree = build_tree(data, spec.fragment_size)
            holdings[node_id][sector_id] = tree
            pledges.append((node_id, sector_id, tree.root))

    consensus = scenario.consensus
    config = LedgerConfig(
        pp=wts_setup(spec.security_bits, seed),
        genesis_hash=genesis_hash_of(seed, pledges),
        sector_size=sector_size,
        fragment_size=spec.fragment_size,
        pos_grace=consensus.pos_grace,
        file_ttl=consensus.file_ttl,
        key_epoch=consensus.key_epoch,
        max_block_txs=consensus.max_block_txs,
    )
    network = Network(
        LinkPolicy(
            delta_ms=spec.delta_ms,
            gst_ms=spec.gst_ms,
            bandwidth_bytes_per_ms=spec.bandwidth_bytes_per_ms,
            drop_probability=spec.drop_probability,
        ),
        seed,
    )
    node_config = NodeConfig(
        delta_ms=spec.delta_ms,
        block_interval_ms=consensus.block_interval_ms,
        pos_interval=consensus.pos_interval,
        mempool_ttl=consensus.mempool_ttl,
    )

    adversary = replace(scenario.adversary, seed=seed)
    byzantine = select_byzantine(dict(enumerate(counts, start=1)), adversary)
    chain_dir = SettingsLoader().resolve_path("CHAIN_DIR") / f"{scenario.name}-{seed}"
    if consensus.persist_chain:
        shutil.rmtree(chain_dir, ignore_errors=True)

    miners: dict[int, MinerNode] = {}
    for node_id in holdings:
        store = None
        if consensus.persist_chain and node_id not in byzantine:
            store = ChainStore(node_id, directory=chain_dir)
        miners[node_id] = MinerNode(
            node_id,
            network,
            genesis_state(config, pledges),
            node_config,
            holdings[node_id],
            store=store,
        )
    peers = sorted(miners)
    for node in miners.values():
        node.peers = peers

    coalition = Coalition()
    for position, node_id in enumerate(byzantine):
        apply_strategy(miners[node_id], adversary, coalition, position)

    sim = SimNetwork(
        scenario=scenario,
        network=network,
        config=config,
        pledges=tuple(pledges),
        miners=miners,
        clients=[],
        coalition=coalition,
        byzantine=byzantine,
    )
    client_config = ClientConfig.from_settings(
        put_timeout_ms=12 * (consensus.block_interval_ms + 4 * spec.delta_ms)
    )
    for offset in range(scenario.workload.clients):
        sim.clients.append(
            Client(CLIENT_BASE + offset, network, sim.gateway, client_config, seed)
        )

    logger.info(
        "built scenario=%s seed=%s nodes=%s n=%s byzantine=%s sector_size=%s",
        scenario.name,
        seed,
        len(miners),
        spec.n,
        byzantine,
        sector_size,
    )
    return sim

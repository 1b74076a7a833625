from dataclasses import replace
from pathlib import Path

import pytest

from bftdsn.core.ledger import apply_block
from bftdsn.core.models import Block, VoteStep, vote_message
from bftdsn.core.wts import signing_key, wts_aggregate, wts_psign
from bftdsn.harness.config import ScenarioConfig
from bftdsn.harness.experiments import latency_fit, relative_spread
from bftdsn.harness.network import build_network, pledge_counts
from bftdsn.harness.runner import ScenarioResult, run_trial
from bftdsn.harness.storage import ResultStorage
from bftdsn.protocol.client import PutSession, file_matches, prepare_store
from tests.conftest import small_scenario

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"


def _commit(state, txs):
    block = Block(state.height + 1, state.block_hash, 1, tuple(txs))
    message = vote_message(block.height, 0, VoteStep.PRECOMMIT, block.block_hash)
    parts = [wts_psign(message, signing_key(state.config.pp, i)) for i in (1, 2, 3)]
    return block.with_certificate(0, wts_aggregate(parts, state.keyring()))


def test_file_matches_its_manifest(genesis):
    data = b"the quick brown fox " * 9
    tx, chunks = prepare_store(data, genesis, signing_key(genesis.config.pp, 10_000))
    state = apply_block(genesis, _commit(genesis, [tx]))
    manifest = state.manifest(tx.payload.file_id)
    params = state.config.fingerprint_params
    assert len(chunks) == manifest.k
    assert file_matches(data, manifest, params)
    assert not file_matches(data[:-1] + b"?", manifest, params)
    assert not file_matches(data + b"!", manifest, params)


def test_pledge_counts_sum_to_n():
    for seed in range(5):
        counts = pledge_counts(40, 2.0, seed)
        assert sum(counts) == 40
        assert all(count > 0 for count in counts)


def test_network_starts_from_one_genesis():
    sim = build_network(small_scenario())
    digests = {node.state.digest() for node in sim.miners.values()}
    assert len(digests) == 1
    assert sim.genesis().n == 7
    assert sim.byzantine == []


def test_honest_put_and_get():
    result = run_trial(small_scenario())
    assert result.liveness_failure == 0
    assert result.file_count == 2
    assert result.successes == 2
    assert result.safety_violations == 0
    assert result.stored_bytes * 5 == result.padded_bytes * 7


def test_trial_replays_bit_for_bit():
    first = run_trial(small_scenario(files=1))
    second = run_trial(small_scenario(files=1))
    assert first.trace_digest == second.trace_digest
    assert first.row() == second.row()


def test_trial_seed_offsets():
    trial = run_trial(small_scenario(files=1), trial=2)
    assert trial.seed == small_scenario().seed + 2


@pytest.mark.parametrize(
    "strategy",
    ["tamper-chunk", "drop-chunk", "bad-encoder", "bad-retrieval", "generation-attack"],
)
def test_faults_within_budget_do_not_break_safety(strategy):
    scenario = small_scenario(n=10, byz_fraction=0.3, strategy=strategy)
    result = run_trial(scenario)
    assert result.within_budget == 1
    assert result.safety_violations == 0
    assert result.wrong_files == 0
    assert result.liveness_failure == 0


def test_tampered_chunks_never_reach_the_client():
    scenario = small_scenario(n=10, byz_fraction=0.3, strategy="tamper-chunk")
    result = run_trial(scenario)
    assert result.successes == result.file_count
    assert result.gets_ok == result.file_count


def test_persisted_chain_replays_to_the_same_state():
    scenario = small_scenario(name="persisted", files=1, min_heights=4, persist_chain=True)
    result = run_trial(scenario)
    assert result.heights >= 4
    assert result.replay_mismatches == 0


@pytest.mark.slow
@pytest.mark.parametrize("strategy", ["combined", "equivocate", "fuzz"])
def test_larger_network_under_attack(strategy):
    scenario = small_scenario(n=22, byz_fraction=0.3, strategy=strategy, files=3)
    result = run_trial(scenario)
    assert result.safety_violations == 0
    assert result.liveness_failure == 0


def test_same_seed_writes_identical_csv(tmp_path):
    outputs = []
    for attempt in ("first", "second"):
        trial = run_trial(small_scenario(files=1))
        storage = ResultStorage(tmp_path / attempt)
        storage.emit([ScenarioResult("csv", trial.seed, 7, 0.0, "none", [trial])], ("csv",))
        outputs.append(storage.trials_path.read_bytes() + storage.files_path.read_bytes())
    assert outputs[0] == outputs[1]


def _settle(sim, predicate, within_ms=60_000.0):
    network = sim.network
    network.run_until(predicate, network.now + within_ms, "test")


def test_lagging_node_catches_up_through_sync():
    sim = build_network(small_scenario())
    network = sim.network
    lagging = sim.miners[7]
    leader = sim.miners[1]
    muted = True

    def deliver(sender, payload):
        if not muted:
            lagging.receive(sender, payload)

    network.register(lagging.node_id, deliver)
    sim.start()
    _settle(sim, lambda: leader.state.height >= 6)
    assert lagging.state.height == 0

    muted = False
    target = leader.state.height + 2
    _settle(sim, lambda: lagging.state.height >= target)
    height = lagging.state.height
    assert [block.block_hash for block in lagging.chain] == [
        block.block_hash for block in leader.chain[:height]
    ]
    assert lagging.state.digest() == leader.digests[height]


def test_retrieval_moves_on_from_a_byzantine_miner():
    scenario = small_scenario(n=10, byz_fraction=0.3, strategy="bad-retrieval")
    sim = build_network(scenario)
    sim.start()
    _settle(sim, lambda: sim.min_height() >= 1)
    client = sim.clients[0]
    data = bytes(range(256)) * 3
    put = client.client_put(data)
    _settle(sim, lambda: put.settled)
    assert put.done
    _settle(sim, lambda: client.state.manifest(put.file_id) is not None)

    cheat = sim.byzantine[0]
    honest = sim.gateway.node_id
    script = iter([cheat, honest])
    client._pick = lambda tried: next(script)
    get = client.client_get(put.file_id)
    _settle(sim, lambda: get.settled)
    assert get.done
    assert get.data == data
    assert get.tried == [cheat, honest]
    assert client.reports_submitted == 1
    _settle(sim, lambda: sim.gateway.state.report_counts.get(cheat, 0) == 1)
    assert honest not in sim.gateway.state.report_counts


def test_sybil_sectors_never_carry_weight():
    sim = build_network(small_scenario(n=10, byz_fraction=0.3, strategy="sybil-pledge"))
    genesis = sim.genesis()
    sim.start()
    _settle(sim, lambda: sim.min_height() >= 8)
    state = sim.gateway.state
    assert sim.coalition.sybil_sectors
    assert not any(sid in state.sectors for sid in sim.coalition.sybil_sectors)
    assert state.live_weights() == genesis.live_weights()
    for height in range(state.height + 1):
        assert state.keyring(height).total_weight == genesis.n


def test_sybil_pledge_run_stays_safe():
    result = run_trial(small_scenario(n=10, byz_fraction=0.3, strategy="sybil-pledge"))
    assert result.sybil_sectors_committed == 0
    assert result.within_budget == 1
    assert result.safety_violations == 0
    assert result.successes == result.file_count


def test_early_buffer_drops_the_oldest_file(sim_log):
    sim = build_network(small_scenario())
    node = sim.miners[1]
    node.config = replace(node.config, early_files=2)
    for tag in range(3):
        node._buffer_early(bytes([tag]) * 32, 2, object())
    assert list(node._early) == [b"\x01" * 32, b"\x02" * 32]
    assert "early buffer full" in sim_log.text
    node._buffer_early(b"\x02" * 32, 3, object())
    assert len(node._early[b"\x02" * 32][1]) == 2


def _put_session(n, f, acks):
    acks = dict.fromkeys(range(acks), 1)
    return PutSession(session=1, data=b"x", started_ms=0.0, n=n, f=f, acks=acks)


@pytest.mark.parametrize(
    ("n", "f", "acks", "done", "degraded"),
    [
        (7, 2, 7, True, False),
        (7, 2, 5, True, True),
        (7, 2, 4, False, False),
        (0, 0, 0, False, False),
    ],
)
def test_put_settles_on_n_minus_f_acks(n, f, acks, done, degraded):
    sim = build_network(small_scenario())
    client = sim.clients[0]
    session = _put_session(n, f, acks)
    assert session.min_acks == n - f
    client._settle_put(session)
    assert session.settled
    assert session.done is done
    assert session.failed is not done
    assert session.degraded is degraded


# bytes per ms; at these file sizes transfer time outweighs propagation delay
SLOW_LINK = 10_000.0


@pytest.mark.slow
def test_get_latency_grows_linearly_with_file_size():
    rows = []
    for step in range(1, 6):
        scenario = small_scenario(
            n=10, files=1, file_size=400_000 * step, bandwidth_bytes_per_ms=SLOW_LINK
        )
        result = run_trial(scenario)
        assert result.gets_ok == 1
        rows.extend(result.rows)
    fit = latency_fit(rows)
    assert fit.slope > 0
    assert fit.r_squared > 0.99


@pytest.mark.slow
def test_get_latency_does_not_depend_on_n():
    means = []
    for n in (10, 16, 22):
        scenario = small_scenario(
            n=n, files=2, file_size=2_000_000, bandwidth_bytes_per_ms=SLOW_LINK
        )
        result = run_trial(scenario)
        assert result.gets_ok == 2
        means.append(sum(row.get_latency_ms for row in result.rows) / 2)
    assert relative_spread(means) <= 0.1


@pytest.mark.slow
def test_equivocators_before_gst_never_break_safety():
    scenario = ScenarioConfig.from_file(SCENARIOS / "pre_gst_equivocation.toml")
    result = run_trial(scenario)
    assert result.within_budget == 1
    assert result.conflicting_commits == 0
    assert result.safety_violations == 0
    assert result.liveness_failure == 0
    assert result.heights >= scenario.consensus.min_heights

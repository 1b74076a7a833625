import pytest

from bftdsn.core.exceptions import LivenessViolationError, UnknownNodeError
from bftdsn.sim.netsim import LinkPolicy, Network, SimClock


def _echo_network(policy, seed=1):
    network = Network(policy, seed)
    inbox = {1: [], 2: [], 3: []}
    for node in inbox:
        network.register(node, lambda sender, payload, node=node: inbox[node].append(
            (network.now, sender, payload)
        ))
    return network, inbox


def test_clock_fires_in_time_then_sequence_order():
    clock = SimClock()
    out = []
    clock.schedule(2.0, lambda: out.append("b"))
    clock.schedule(1.0, lambda: out.append("a"))
    clock.schedule(2.0, lambda: out.append("c"))
    cancelled = clock.schedule(1.5, lambda: out.append("x"))
    clock.cancel(cancelled)
    while clock.peek() is not None:
        clock.pop().action()
    assert out == ["a", "b", "c"]
    assert clock.now == 2.0


def test_post_gst_delay_is_bounded_by_delta():
    policy = LinkPolicy(delta_ms=10.0, bandwidth_bytes_per_ms=0)
    network, inbox = _echo_network(policy)
    for _ in range(200):
        network.send(1, 2, b"ping")
    network.run_until(lambda: False, cap_ms=1_000.0)
    assert len(inbox[2]) == 200
    assert all(0 < time <= 10.0 for time, _, _ in inbox[2])
    assert network.delay_violations == 0
    assert network.max_post_gst_delay <= 10.0


def test_pre_gst_messages_can_be_late_or_lost():
    policy = LinkPolicy(delta_ms=1.0, gst_ms=1_000.0, drop_probability=0.5)
    network, inbox = _echo_network(policy, seed=3)
    for _ in range(100):
        network.send(1, 2, b"x")
    network.run_until(lambda: False, cap_ms=10_000.0)
    assert 0 < len(inbox[2]) < 100
    assert all(time >= 1.0 for time, _, _ in inbox[2])
    assert any(kind == "drop" for _, kind, *_ in network.trace)


def test_bandwidth_serialises_large_transfers():
    policy = LinkPolicy(delta_ms=1.0, bandwidth_bytes_per_ms=100.0)
    network, inbox = _echo_network(policy)
    network.send(1, 2, b"\x00" * 1_000)
    network.send(1, 3, b"\x00" * 1_000)
    network.run_until(lambda: False, cap_ms=1_000.0)
    # the second frame waits for the first to leave node 1's interface
    assert inbox[2][0][0] >= 10.0
    assert inbox[3][0][0] >= 20.0


def test_same_seed_replays_the_same_trace():
    policy = LinkPolicy(delta_ms=5.0, gst_ms=50.0, drop_probability=0.2)
    digests = []
    for _ in range(2):
        network, _ = _echo_network(policy, seed=42)
        for i in range(50):
            network.send(1 + i % 3, 1 + (i + 1) % 3, bytes([i]))
        network.run_until(lambda: False, cap_ms=5_000.0)
        digests.append(network.trace_digest())
    assert digests[0] == digests[1]
    other, _ = _echo_network(policy, seed=43)
    for i in range(50):
        other.send(1 + i % 3, 1 + (i + 1) % 3, bytes([i]))
    other.run_until(lambda: False, cap_ms=5_000.0)
    assert other.trace_digest() != digests[0]


def test_run_until_returns_when_predicate_already_holds():
    network, _ = _echo_network(LinkPolicy(delta_ms=1.0))
    network.send(1, 2, b"later")
    assert network.run_until(lambda: True, cap_ms=100.0) == 0.0
    assert network.events_processed == 0


def test_run_until_returns_on_empty_queue():
    network, _ = _echo_network(LinkPolicy(delta_ms=1.0))
    assert network.run_until(lambda: False, cap_ms=100.0) == 0.0


def test_cap_raises_liveness_violation():
    network, _ = _echo_network(LinkPolicy(delta_ms=1.0))
    network.set_timer(1, 500.0, lambda: None)
    with pytest.raises(LivenessViolationError):
        network.run_until(lambda: False, cap_ms=100.0, reason="test")


def test_unknown_node():
    network, _ = _echo_network(LinkPolicy(delta_ms=1.0))
    with pytest.raises(UnknownNodeError):
        network.send(1, 9, b"x")


def test_self_delivery_is_immediate():
    network, inbox = _echo_network(LinkPolicy(delta_ms=5.0))
    network.send(2, 2, b"me")
    network.run_until(lambda: bool(inbox[2]), cap_ms=1.0)
    assert inbox[2] == [(0.0, 2, b"me")]

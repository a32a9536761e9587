import json

from hypothesis import given, settings
from hypothesis import strategies as st

from flowfaas.controller import (COMM_TO_COMPUTE, COMPUTE_TO_COMM, NONE, ControllerConfig,
                                 ControllerLoop, Phase, PIController, SimWorkload, simulate)
from flowfaas.queues import QueueClass


def drive(ctl, lengths):
    """Feed queue lengths, applying each decision; returns the splits."""
    splits = []
    for i, (qc, qm) in enumerate(lengths):
        d = ctl.tick(i * 0.03, qc, qm)
        ctl.apply(d)
        splits.append((ctl.n_compute, ctl.n_comm))
    return splits


def test_quiet_queues_do_nothing():
    ctl = PIController(2, 2)
    assert set(drive(ctl, [(3, 3)] * 20)) == {(2, 2)}
    assert PIController(2, 2).tick(0, 0, 0).action == NONE


def test_floor_blocks_move():
    ctl = PIController(1, 1)
    d = ctl.tick(0, 50, 0)
    assert d.action == NONE and d.reason == "floor" and d.u > 1
    d = PIController(1, 1).tick(0, 0, 50)
    assert d.action == NONE and d.reason == "floor" and d.u < -1


def test_compute_backlog_converges():
    ctl = PIController(4, 4)
    splits = drive(ctl, [(5 * i, 0) for i in range(1, 51)])
    assert (7, 1) in splits
    assert splits[-1] == (7, 1)


def test_comm_backlog_converges():
    ctl = PIController(4, 4)
    splits = drive(ctl, [(0, 5 * i) for i in range(1, 51)])
    assert splits[-1] == (1, 7)


def test_integral_clamped_and_reset():
    ctl = PIController(1, 1, ControllerConfig(integral_clamp=10))
    for i in range(100):
        ctl.tick(i, 10 * i, 0)
    assert ctl.integral == 10
    ctl.n_comm = 2
    d = ctl.tick(100, 1000, 0)
    assert d.action == COMM_TO_COMPUTE
    ctl.apply(d)
    assert ctl.integral == 0 and (ctl.n_compute, ctl.n_comm) == (2, 1)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 12), st.lists(st.tuples(st.integers(0, 500), st.integers(0, 500)),
                                     max_size=80))
def test_conservation(total, lengths):
    ctl = PIController(1, total - 1)
    for n_c, n_m in drive(ctl, lengths):
        assert n_c + n_m == total and n_c >= 1 and n_m >= 1


class FakePool:
    def __init__(self, n_c, n_m):
        self.n = [n_c, n_m]
        self.calls = []

    def assignment(self):
        return tuple(self.n)

    def reassign(self, to):
        self.calls.append(to)
        src = 1 if to is QueueClass.COMPUTE else 0
        if self.n[src] <= 1:
            return None
        self.n[src] -= 1
        self.n[1 - src] += 1
        return object()


class FakeQueue(list):
    pass


def test_loop_writes_metrics(tmp_path):
    pool = FakePool(2, 2)
    queues = {QueueClass.COMPUTE: FakeQueue(), QueueClass.COMMUNICATION: FakeQueue()}
    path = tmp_path / "ctl.jsonl"
    loop = ControllerLoop(pool, queues, metrics_path=str(path))
    for i in range(10):
        queues[QueueClass.COMPUTE].extend([0] * 5)
        loop.step(now=i * 0.03)
    loop.stop()
    rows = [json.loads(line) for line in path.read_text().splitlines()]
    assert len(rows) == 10
    assert {"e", "u", "n_compute", "n_comm", "q_compute", "q_comm", "decision"} <= rows[0].keys()
    assert pool.n == [3, 1] and rows[-1]["n_compute"] == 3
    assert rows[-1]["reason"] == "floor"


def test_loop_disagreeing_pool_reports_floor():
    pool = FakePool(2, 2)
    pool.reassign = lambda to: None
    queues = {QueueClass.COMPUTE: FakeQueue([0] * 40), QueueClass.COMMUNICATION: FakeQueue()}
    loop = ControllerLoop(pool, queues)
    d = loop.step(now=0)
    assert d.action == NONE and d.reason == "floor"
    assert loop.controller.n_compute == 2


def test_simulator_moves_toward_compute():
    w = SimWorkload([Phase(1.0, compute_rate=1500, comm_rate=50)])
    ctl = simulate(8, w)
    static = simulate(8, w, static_compute=4)
    assert ctl.moves > 0
    assert max(n for _, n, _ in ctl.splits) >= 6
    assert all(c + m == 8 and c >= 1 and m >= 1 for _, c, m in ctl.splits)
    assert ctl.throughput >= static.throughput


def test_simulator_deterministic():
    w = SimWorkload([Phase(0.5, 800, 3000)], seed=3)
    a, b = simulate(4, w), simulate(4, w)
    assert (a.completed_compute, a.completed_comm, a.moves) == \
        (b.completed_compute, b.completed_comm, b.moves)


def test_decision_directions():
    assert PIController(2, 2).tick(0, 10, 0).action == COMM_TO_COMPUTE
    assert PIController(2, 2).tick(0, 0, 10).action == COMPUTE_TO_COMM

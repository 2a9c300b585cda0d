import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pqclab.clone import (EXP_DTYPE, TRANSITION_DTYPE, Behavior, Dataset, Experience, Kind, Method,
                          MethodConfig, RolloutSchedule, batch_loss_inputs, dataset_from_bytes,
                          dataset_loss, dataset_to_bytes, expert_episode, finetune_dqn,
                          generate_batch_dataset, make_targets, masked_argmax, rollout_online,
                          td_target, td_targets, train_batch_pqc, train_online)
from pqclab.env import Cell, GridSpec
from pqclab.errors import FormatError, InfeasibleState, PenaltyInvalid
from pqclab.nnet import LossKind, NetSpec, QNetwork, loss_terms

from conftest import make_bundle, make_scene

LINEAR = NetSpec((2, 32, 32), ("flatten",), 6)


@pytest.fixture(scope="module")
def corridor():
    """Empty 25x11x7 scene: the expert path from (7, 5, 2) is twelve +x moves."""
    return make_bundle(make_scene(GridSpec(25, 11, 7), goal=(20, 5, 1), sid=77))


def test_expert_episode_length(corridor):
    ep = expert_episode(corridor, Cell(7, 5, 2))
    assert len(ep) == 12
    assert (ep["action"] == 0).all() and ep["terminal"][-1] == 1 and ep["terminal"][:-1].sum() == 0


def test_fixed_penalty_records(corridor):
    ep = expert_episode(corridor, Cell(7, 5, 2))
    recs = make_targets(Method.BATCH_PQC, MethodConfig(), corridor, ep)
    assert len(recs) == 72
    is_exp = recs["action"] == recs["expert"]
    assert is_exp.sum() == 12
    assert (recs["q"][~is_exp] == -0.5).sum() == 60
    # the expert target is the negated edge cost plus cost-to-go of the destination
    sol = corridor.expert
    for r in recs[is_exp]:
        nxt = sol.graph.nbr[r["cell"], r["action"]]
        assert r["q"] == pytest.approx(-(sol.graph.cost[r["cell"], r["action"]] + sol.cost_to_go[nxt]),
                                       abs=1e-12)


def test_expert_targets_increase_along_rollout(corridor):
    ep = expert_episode(corridor, Cell(7, 5, 2))
    recs = make_targets(Method.BATCH_PQC, MethodConfig(), corridor, ep)
    q = recs["q"][recs["action"] == recs["expert"]]
    assert np.all(np.diff(q) > 0) and q[-1] < 0


def test_no_penalty_mode_uses_true_values(corridor):
    ep = expert_episode(corridor, Cell(7, 5, 2))
    recs = make_targets(Method.ONLINE_PQC_NO_PENALTY, MethodConfig(), corridor, ep)
    assert len(recs) == 72 and not (recs["q"] == -0.5).any()
    assert np.array_equal(recs["q"], corridor.expert.q_table[recs["cell"], recs["action"]])


def test_one_action_and_relative_modes(corridor):
    ep = expert_episode(corridor, Cell(7, 5, 2))
    one = make_targets(Method.ONLINE_PQC_ONE_ACTION, MethodConfig(), corridor, ep)
    assert len(one) == len(ep) and np.array_equal(one["action"], ep["action"])
    rel = make_targets(Method.ONLINE_PQC_RELATIVE, MethodConfig(), corridor, ep)
    q_e = corridor.expert.q_table[rel["cell"], rel["action"]]
    non = rel["action"] != rel["expert"]
    assert np.allclose(rel["q"][non], q_e[non] - 0.2, rtol=0, atol=1e-15)
    assert np.array_equal(rel["q"][~non], q_e[~non])


def test_online_pqc_state_with_six_actions(corridor):
    tr = np.array([(corridor.scene.grid.index((7, 5, 2)), 3, Behavior.RANDOM, -0.01,
                    corridor.scene.grid.index((7, 4, 2)), 0, 0)], dtype=TRANSITION_DTYPE)
    recs = make_targets(Method.ONLINE_PQC, MethodConfig(), corridor, tr)
    assert len(recs) == 6 and (recs["q"] == -0.5).sum() == 5
    assert (recs["expert"] == 0).all()


def test_baseline_record_kinds(corridor):
    ep = expert_episode(corridor, Cell(7, 5, 2))
    dag = make_targets(Method.DAGGER, MethodConfig(), corridor, ep)
    assert (dag["kind"] == Kind.EXPERT_LABEL).all() and len(dag) == 12
    for m in (Method.DQFD_DAGGER, Method.ADET, Method.DQN_DAGGER):
        td = make_targets(m, MethodConfig(), corridor, ep)
        assert (td["kind"] == Kind.TD).all() and np.array_equal(td["next_cell"], ep["next_cell"])
        assert (td["expert"] >= 0).all()


def test_infeasible_state(corridor):
    g = corridor.scene.grid
    tr = np.array([(g.index((20, 5, 1)), 0, 0, 0.0, g.index((21, 5, 1)), 1, 1)], dtype=TRANSITION_DTYPE)
    with pytest.raises(InfeasibleState):
        make_targets(Method.BATCH_PQC, MethodConfig(), corridor, tr)


def test_penalty_validation(corridor):
    with pytest.raises(PenaltyInvalid):
        generate_batch_dataset([corridor], 1, MethodConfig(penalty=-0.01), np.random.default_rng(0))


def test_dataset_invariants_and_roundtrip(desk_bundles):
    ds = generate_batch_dataset(desk_bundles, 4, MethodConfig(), np.random.default_rng(1))
    recs = ds.records
    assert ((recs["q"] <= 0) | (recs["q"] == -0.5)).all()
    # each visited state forms one contiguous group with a single non-penalty target
    keys = recs["scene"] * 10_000 + recs["cell"]
    starts = np.flatnonzero(np.r_[True, keys[1:] != keys[:-1]])
    for lo, hi in zip(starts, np.r_[starts[1:], len(recs)]):
        g = recs[lo:hi]
        b = next(x for x in desk_bundles if x.id == g["scene"][0])
        assert hi - lo == (b.scene.transitions[g["cell"][0]] >= 0).sum()
        assert (g["q"] != -0.5).sum() == 1
    back = dataset_from_bytes(dataset_to_bytes(ds))
    assert np.array_equal(back.records, recs) and back.provenance == ds.provenance
    with pytest.raises(FormatError):
        dataset_from_bytes(dataset_to_bytes(ds)[:-3])
    e = Experience.from_row(recs[0])
    assert e.to_row() == recs[0]


def test_dataset_generation_reproducible(desk_bundles):
    a = generate_batch_dataset(desk_bundles, 3, MethodConfig(), np.random.default_rng(5))
    b = generate_batch_dataset(desk_bundles, 3, MethodConfig(), np.random.default_rng(5))
    assert dataset_to_bytes(a) == dataset_to_bytes(b)


# ------------------------------------------------------------------ schedule

def test_schedule_endpoints():
    s = RolloutSchedule(cutoff=100)
    assert s.fractions(0) == (0.8, 0.2, pytest.approx(0.0))
    assert s.fractions(100) == (0.0, 0.0, 1.0)
    assert s.fractions(99)[0] < 0.01
    assert RolloutSchedule(cutoff=0).fractions(0) == (0.0, 0.0, 1.0)


@given(st.integers(1, 50_000), st.integers(0, 60_000))
def test_schedule_conservation(cutoff, ep):
    fe, fr, fo = RolloutSchedule(cutoff=cutoff).fractions(ep)
    assert fe + fr + fo == pytest.approx(1.0, abs=1e-12)
    assert min(fe, fr, fo) >= 0
    if fe > 0:
        assert fe / fr == pytest.approx(4.0)


def test_rollout_behavior_mix(desk_bundles):
    b = desk_bundles[0]
    rng = np.random.default_rng(0)
    net = QNetwork(NetSpec(), seed=0)
    sched = RolloutSchedule(cutoff=10)
    beh = []
    while len(beh) < 10_000:
        beh.extend(rollout_online(sched, 0, None, b, rng)["behavior"].tolist())
    frac = np.mean(np.array(beh[:10_000]) == Behavior.EXPERT)
    assert abs(frac - 0.8) <= 0.02
    late = rollout_online(sched, 10, net, b, rng)
    assert (late["behavior"] == Behavior.GREEDY).all()


def test_rollout_outcomes_consistent(desk_bundles):
    b = desk_bundles[1]
    ep = rollout_online(RolloutSchedule(cutoff=5), 0, None, b, np.random.default_rng(2))
    assert np.array_equal(ep["next_cell"][:-1], ep["cell"][1:])
    assert (b.scene.transitions[ep["cell"], ep["action"]] == ep["next_cell"]).all()
    assert len(ep) <= b.scene.grid.horizon


# ------------------------------------------------------------------ TD targets

def test_td_target_cases(corridor):
    net = QNetwork(NetSpec(), seed=0)
    g = corridor.scene.grid
    v, w = g.index((7, 5, 2)), g.index((8, 5, 2))
    term = Experience(77, v, 0, Kind.TD, reward=-0.01, next_cell=w, terminal=True)
    assert td_target(net, term, corridor, 0.99) == -0.01
    live = Experience(77, v, 0, Kind.TD, reward=-0.01, next_cell=w, terminal=False)
    assert td_target(net, live, corridor, 0.0) == -0.01
    zero = QNetwork(NetSpec(), params=np.zeros(net.n_params))
    assert td_target(zero, live, corridor, 0.99) == -0.01
    q = net.forward(corridor.cache.obs[w][None])[0]
    feas = corridor.scene.transitions[w] >= 0
    assert td_target(net, live, corridor, 0.9) == pytest.approx(-0.01 + 0.9 * q[feas].max())


def test_td_targets_mask_infeasible():
    net = QNetwork(NetSpec((1, 1, 1), (), 3), params=np.array([0, 0, 0, 5.0, -1.0, 2.0]))
    obs = np.zeros((1, 1, 1, 1))
    y = td_targets(net, obs, [0.0], [False], np.array([[False, True, True]]), 1.0)
    assert y[0] == 2.0


def test_dqfd_with_zero_margin_weight_matches_dqn(desk_bundles):
    cfg = MethodConfig(method=Method.DQFD_DAGGER)
    b = desk_bundles[0]
    by_id = {b.id: b}
    ep = rollout_online(RolloutSchedule(cutoff=3), 0, None, b, np.random.default_rng(3))
    recs = make_targets(Method.DQFD_DAGGER, cfg, b, ep)
    net = QNetwork(NetSpec(), seed=1)
    obs, t = batch_loss_inputs(Method.DQFD_DAGGER, cfg, recs, by_id, net, 6)
    obs2, t2 = batch_loss_inputs(Method.DQN_DAGGER, cfg, recs, by_id, net, 6)
    q = net.forward(obs)
    a = loss_terms(q, t, LossKind.COMPOSITE, terms={"huber": 1.0, "margin": 0.0})
    bb = loss_terms(net.forward(obs2), t2, LossKind.HUBER)
    assert np.array_equal(a[0], bb[0]) and np.array_equal(a[1], bb[1])


# ------------------------------------------------------------------ training

def test_masked_argmax():
    q = np.array([[5.0, 1.0, 2.0], [0.0, -1.0, -2.0]])
    m = np.array([[False, True, True], [False, False, True]])
    assert masked_argmax(q, m).tolist() == [2, 2]


def test_batch_training_reduces_loss(desk_bundles):
    cfg = MethodConfig(epochs=8)
    ds = generate_batch_dataset(desk_bundles[:2], 5, cfg, np.random.default_rng(0))
    net = QNetwork(NetSpec(), seed=0)
    res = train_batch_pqc(net, ds, desk_bundles[:2], cfg, np.random.default_rng(0))
    assert len(res.loss_curve) == 8
    assert res.loss_curve[-1] < res.loss_curve[0]
    assert dataset_loss(net, ds, desk_bundles[:2]) < res.loss_curve[0]


def test_repeated_record_is_memorized(corridor):
    ep = expert_episode(corridor, Cell(7, 5, 2))[:1]
    recs = make_targets(Method.BATCH_PQC, MethodConfig(), corridor, ep)[:1]
    ds = Dataset(np.repeat(recs, 64))
    net = QNetwork(LINEAR, seed=0)
    cfg = MethodConfig(epochs=300, per=False, lr=1e-3)
    train_batch_pqc(net, ds, [corridor], cfg, np.random.default_rng(0))
    assert dataset_loss(net, ds, [corridor]) < 1e-8


def test_batch_training_deterministic(desk_bundles):
    cfg = MethodConfig(epochs=1)
    ds = generate_batch_dataset(desk_bundles[:1], 3, cfg, np.random.default_rng(0))
    runs = []
    for _ in range(2):
        net = QNetwork(NetSpec(), seed=0)
        res = train_batch_pqc(net, ds, desk_bundles[:1], cfg, np.random.default_rng(0))
        runs.append((net.params.copy(), res.loss_curve))
    assert np.array_equal(runs[0][0], runs[1][0]) and runs[0][1] == runs[1][1]


@pytest.mark.parametrize("method", [m for m in Method if m is not Method.BATCH_PQC])
def test_online_methods_run(method, desk_bundles):
    cfg = MethodConfig(method=method, target_refresh=5)
    net = QNetwork(NetSpec(), seed=0)
    snaps = []
    res = train_online(cfg, RolloutSchedule(cutoff=3), desk_bundles[:2], 6,
                       np.random.default_rng(0), net,
                       on_snapshot=lambda e, s, l: snaps.append((e, s)) or (e, s), snapshot_every=3)
    assert res.steps > 0 and len(snaps) == 2
    assert np.isfinite(net.params).all()


def test_on_policy_dqn_never_uses_expert(desk_bundles):
    rng = np.random.default_rng(0)
    net = QNetwork(NetSpec(), seed=0)
    ep = rollout_online(RolloutSchedule(cutoff=0), 0, net, desk_bundles[0], rng, explore_eps=0.1)
    assert (ep["behavior"] == Behavior.GREEDY).all()


def test_finetune_zero_episodes_is_identity(desk_bundles):
    net = QNetwork(NetSpec(), seed=0)
    before = net.params.copy()
    finetune_dqn(net, desk_bundles, RolloutSchedule(cutoff=1), 0, MethodConfig(lr=1e-4),
                 np.random.default_rng(0))
    assert np.array_equal(net.params, before)


def test_experience_dtype_fields():
    assert set(EXP_DTYPE.names) >= {"scene", "cell", "action", "kind", "q", "expert", "priority"}
    assert math.isclose(Experience(0, 0, 0, Kind.TD).priority, 1.0)

import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from crowdnav.dataset import GridSpec, SceneSpec, TrajectoryStore
from crowdnav.policy import (
    N_ACTIONS,
    STATE_SIZE,
    AgentObservation,
    Checkpoint,
    PolicyController,
    PolicyNetwork,
    RewardSpec,
    TrainConfig,
    action_mask,
    discounted_returns,
    encode_joint_state,
    masked_softmax,
    policy_gradients,
    rasterize_continuous_path,
    reward,
    select_action,
    train_policy,
)
from crowdnav.policy.network import PARAM_ORDER
from crowdnav.simulator import CrowdSimulator, Episode

SCENE = SceneSpec()
GRID = GridSpec(SCENE)


def small_net(seed, hidden=5, dense=(4, 3), inputs=6):
    return PolicyNetwork.initialize(seed, input_size=inputs, hidden=hidden, dense=dense)


def rollout(net, seed, T=6):
    rng = np.random.default_rng(seed)
    xs = rng.normal(size=(T, net.input_size))
    masks = rng.random((T, N_ACTIONS)) < 0.8
    masks[:, 0] = True
    acts = np.array([rng.choice(np.flatnonzero(m)) for m in masks])
    adv = rng.normal(size=T)
    return xs, acts, adv, masks


def loss_of(net, batch, entropy=0.0):
    return policy_gradients(net, batch, entropy)[0]


def fd_check(net, batch, entropy=0.0, eps=1e-5):
    """Largest per-group relative error between analytic and central-difference gradients."""
    _, grads = policy_gradients(net, batch, entropy)
    worst = 0.0
    for name in PARAM_ORDER:
        p = net.params[name]
        num = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + eps
            up = loss_of(net, batch, entropy)
            p[idx] = old - eps
            down = loss_of(net, batch, entropy)
            p[idx] = old
            num[idx] = (up - down) / (2 * eps)
        a = grads[name]
        denom = np.linalg.norm(a) + np.linalg.norm(num)
        worst = max(worst, np.linalg.norm(a - num) / denom if denom else 0.0)
    return worst


# -- encoding -------------------------------------------------------------------

def test_encoding_without_pedestrians():
    enc = encode_joint_state(AgentObservation((100, 100)), (400, 100), [], SCENE)
    assert enc.shape == (STATE_SIZE,)
    assert not enc[6:].any()
    assert enc[0] == pytest.approx(300 / 1920)


def test_encoding_robot_at_goal():
    enc = encode_joint_state(AgentObservation((100, 100)), (100, 100), [], SCENE)
    assert enc[0] == 0 and enc[1] == 0 and enc[5] == 0


def test_encoding_sorts_nearest_three():
    robot = AgentObservation((500, 500))
    dists = [10, 400, 20, 30, 500]
    peds = [AgentObservation((500 + d, 500)) for d in dists]
    enc = encode_joint_state(robot, (600, 500), peds, SCENE)
    rel_x = [enc[6 + 7 * k] * 1920 for k in range(3)]
    assert rel_x == pytest.approx([10, 20, 30])
    assert [enc[6 + 7 * k + 6] for k in range(3)] == [1, 1, 1]


def test_radius_must_be_positive():
    with pytest.raises(ValueError):
        AgentObservation((0, 0), radius=0)


# -- network --------------------------------------------------------------------

@given(arrays(np.float64, STATE_SIZE, elements=st.floats(-1e6, 1e6)))
@settings(max_examples=30, deadline=None)
def test_forward_is_distribution(x):
    net = PolicyNetwork.initialize(0)
    p, _ = net.forward(x)
    assert np.all(p >= 0) and abs(p.sum() - 1) <= 1e-9


def test_forward_deterministic_and_shape_checked():
    net = PolicyNetwork.initialize(3)
    x = np.linspace(-1, 1, STATE_SIZE)
    a, _ = net.forward(x)
    b, _ = net.forward(x)
    assert np.array_equal(a, b)
    with pytest.raises(ValueError):
        net.forward(np.zeros(STATE_SIZE + 1))


def test_corner_mask_zeroes_out_of_bounds_moves():
    mask = action_mask((0, 0), GRID)
    assert mask.sum() == 4 and mask[[0, 3, 4, 5]].all()
    net = PolicyNetwork.initialize(1)
    p, _ = net.forward(np.zeros(STATE_SIZE), None, action_mask((63, 35), GRID))
    assert np.count_nonzero(p == 0) >= 3
    assert p[[1, 7, 8, 0]].sum() == pytest.approx(1.0)


@given(arrays(np.float64, N_ACTIONS, elements=st.floats(-50, 50)), st.lists(st.booleans(), min_size=9, max_size=9))
def test_masking_only_renormalises(logits, keep):
    mask = np.array(keep)
    if not mask.any():
        mask[0] = True
    full = masked_softmax(logits)
    part = masked_softmax(logits, mask)
    np.testing.assert_allclose(part[mask], full[mask] / full[mask].sum(), rtol=1e-9)
    assert not part[~mask].any()


def test_all_masked_raises():
    with pytest.raises(ValueError):
        masked_softmax(np.zeros(9), np.zeros(9, dtype=bool))


def test_initialization_range_and_forget_bias():
    net = PolicyNetwork.initialize(5)
    H = net.hidden
    assert np.all(net.params["lstm.b"][H : 2 * H] == 1.0)
    for k in PARAM_ORDER:
        v = net.params[k] if k != "lstm.b" else np.delete(net.params[k], np.s_[H : 2 * H])
        assert np.all(np.abs(v) <= 0.08)


# -- action selection -----------------------------------------------------------

def test_select_action():
    d = np.full(9, 0.1)
    d[4] = 0.2
    assert select_action(d / d.sum()) == 4
    assert select_action(np.full(9, 1 / 9)) == 0
    seqs = [[select_action(np.full(9, 1 / 9), "sample", rng) for _ in range(20)]
            for rng in (np.random.default_rng(7), np.random.default_rng(7))]
    assert seqs[0] == seqs[1]
    with pytest.raises(ValueError):
        select_action(d, "sample")


@given(st.lists(st.integers(-80, 80), min_size=N_ACTIONS, max_size=N_ACTIONS))
def test_greedy_invariant_under_monotone_maps(ints):
    # a 0.25 lattice keeps distinct scores distinguishable after the softmax
    logits = np.array(ints) * 0.25
    base = select_action(masked_softmax(logits))
    assert select_action(masked_softmax(3 * logits + 1)) == base
    assert select_action(masked_softmax(np.tanh(logits / 40) * 5)) == base


# -- rewards --------------------------------------------------------------------

def test_reward_examples():
    assert reward(True, False) == 1.0
    assert reward(False, False) == -0.01
    assert reward(False, True) == pytest.approx(-0.26)
    with pytest.raises(ValueError):
        RewardSpec(gamma=0)
    with pytest.raises(ValueError):
        RewardSpec(goal=-1)


def test_discounted_returns():
    np.testing.assert_allclose(discounted_returns([1, 1, 1], 0.5), [1.75, 1.5, 1.0])


# -- gradients ------------------------------------------------------------------

def test_zero_advantage_zero_gradient():
    net = small_net(0)
    xs, acts, adv, masks = rollout(net, 0)
    _, g = policy_gradients(net, [(xs, acts, np.zeros_like(adv), masks)])
    assert all(not v.any() for v in g.values())


def test_single_step_gradient_is_grad_of_neg_log_prob():
    net = small_net(1)
    x = np.random.default_rng(1).normal(size=6)
    a = 3
    _, g = policy_gradients(net, [(x[None], np.array([a]), np.array([1.0]))])
    p, _ = net.forward(x)
    # d(-log p_a)/d logits = p - onehot(a), so the output bias gradient is exactly that
    expected = p.copy()
    expected[a] -= 1
    np.testing.assert_allclose(g["fc3.b"], expected, rtol=1e-12, atol=1e-15)


@pytest.mark.parametrize("seed", range(3))
def test_gradients_match_finite_differences(seed):
    net = small_net(seed)
    batch = [rollout(net, seed), rollout(net, seed + 100, T=4)]
    assert fd_check(net, batch) < 1e-4
    assert fd_check(net, batch, entropy=0.05) < 1e-4


# -- rasterization ---------------------------------------------------------------

def test_rasterize():
    out = rasterize_continuous_path([(5, 5), (20, 25)], GRID)
    assert out == [((0, 0), False), ((0, 0), False)]
    out = rasterize_continuous_path([GRID.center((3, 3)), GRID.center((4, 3))], GRID)
    assert out[1] == ((4, 3), True)
    cx, cy = GRID.center((3, 3))
    out = rasterize_continuous_path([(cx, cy), (cx + 30, cy + 30)], GRID)
    assert out[1] == ((4, 4), True)


# -- checkpoint -------------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    net = PolicyNetwork.initialize(4)
    ck = Checkpoint(net, RewardSpec(collision=-0.5), {"episodes": 3, "seed": 4})
    path = tmp_path / "p.ckpt"
    ck.save(path)
    again = Checkpoint.load(path)
    assert again.to_bytes() == path.read_bytes()
    assert again.reward == ck.reward and again.metadata == ck.metadata
    probe = np.random.default_rng(0).normal(size=(5, STATE_SIZE))
    for x in probe:
        assert np.array_equal(net.forward(x)[0], again.network.forward(x)[0])
    bad = tmp_path / "bad"
    bad.write_bytes(b"junk")
    with pytest.raises(ValueError):
        Checkpoint.load(bad)
    bad.write_bytes(path.read_bytes() + b"x")
    with pytest.raises(ValueError):
        Checkpoint.load(bad)


# -- training ---------------------------------------------------------------------

def toy_sim():
    scene = SceneSpec(150.0, 150.0)
    return CrowdSimulator(TrajectoryStore({}, scene), GridSpec(scene, 5, 5), frame_range=(0, 100))


def toy_episodes(n):
    return [Episode((1, 1), (2, 1), k % 70, k) for k in range(n)]


def test_zero_episodes_returns_initialization():
    ck = train_policy(toy_sim(), TrainConfig(episodes=0), 3)
    assert np.array_equal(ck.network.flat(), PolicyNetwork.initialize(3).flat())
    assert ck.metadata["episodes"] == 0


def test_training_deterministic_and_logged(tmp_path):
    sim = toy_sim()
    cfg = TrainConfig(episodes=12, checkpoint_every=5)
    seen = []
    a = train_policy(sim, cfg, 1, toy_episodes(12), tmp_path / "log.csv",
                     on_checkpoint=lambda n, ck: seen.append(n))
    b = train_policy(sim, cfg, 1, toy_episodes(12))
    assert a.to_bytes() == b.to_bytes()
    assert seen == [5, 10, 12]
    rows = list(csv.DictReader(open(tmp_path / "log.csv")))
    assert list(rows[0]) == ["episode", "return", "steps", "reached_goal", "SR", "SP", "MRP"]
    assert len(rows) == 12
    assert all(int(r["steps"]) <= 24 for r in rows)  # the step cap bounds every episode


@pytest.mark.parametrize("seed", range(5))
def test_toy_adjacent_goal_is_learned(seed):
    sim = toy_sim()
    ck = train_policy(sim, TrainConfig(episodes=200, batch_episodes=1), seed, toy_episodes(200))
    results = sim.run(PolicyController(ck.network), toy_episodes(20))
    assert all(r.reached_goal for r in results)

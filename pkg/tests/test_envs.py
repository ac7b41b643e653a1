import numpy as np
import pytest

from implicit_attacks.envs import LEFT, NAV_RIGHT, RIGHT, build_env, build_inventory, build_navigation, naive_baseline
from implicit_attacks.bounds import always_visited


def test_navigation_structure():
    env = build_navigation()
    P, R = env.mdp.transition, env.mdp.reward_vic
    assert P.shape == (9, 2, 2, 9)
    # s2 moves to s3 whatever the agents do
    assert np.all(P[2, :, :, 3] == pytest.approx(0.9 + 0.1 / 9))
    # in s1 the adversary steers, in s3 the victim does
    assert P[1, RIGHT, LEFT, 2] == pytest.approx(0.9 + 0.1 / 9)
    assert P[3, LEFT, RIGHT, NAV_RIGHT[3]] == pytest.approx(0.9 + 0.1 / 9)
    # a mismatch elsewhere is a uniform jump
    np.testing.assert_allclose(P[0, LEFT, RIGHT], np.full(9, 1 / 9))
    assert R[2, 1, 1] == 55 and R[0, 0, 1] == 0 and R[5, 1, 1] == 5
    assert env.pi_default.actions().tolist() == [LEFT] * 9
    assert env.pi_target.actions().tolist() == [RIGHT] * 9
    assert all(always_visited(env.mdp, env.pi_target, s) for s in range(9))


def test_inventory_structure():
    env = build_inventory()
    mdp = env.mdp
    assert mdp.transition.shape == (10, 10, 10, 10)
    # stock 2, buy 3 (cost 4 + 6), demand 4 is served: 40 - 5 - 10
    assert mdp.reward_vic[2, 4, 3] == 25
    assert mdp.transition[2, 4, 3, 1] == 1
    # demand above stock goes unserved and the stock stays
    assert mdp.reward_vic[2, 9, 0] == -2 and mdp.transition[2, 9, 0, 2] == 1
    # buying past capacity is clipped
    assert mdp.transition[8, 0, 5, 9] == 1
    assert env.pi_target.actions().tolist() == [7, 6, 5, 4, 3, 2, 1, 0, 0, 0]
    assert np.allclose(env.pi_default.probs, 0.1)
    assert not env.ergodic


def test_inventory_penalty_mode():
    clip = build_inventory().mdp.reward_vic
    pen = build_inventory({"invalid_buy": "penalty"}).mdp.reward_vic
    assert pen[8, 0, 5] == clip[8, 0, 5] - 100
    assert pen[2, 0, 3] == clip[2, 0, 3]
    with pytest.raises(ValueError):
        build_inventory({"invalid_buy": "drop"})


def test_builders_and_naive():
    assert build_env("navigation", {"p_bar": 0.5}).mdp.transition[2, 0, 0, 3] == pytest.approx(0.5 + 0.5 / 9)
    assert naive_baseline(build_env("navigation")).actions().tolist() == [RIGHT] * 9
    assert naive_baseline(build_env("inventory")).actions().tolist() == [7] * 10
    with pytest.raises(ValueError):
        build_env("gridworld")

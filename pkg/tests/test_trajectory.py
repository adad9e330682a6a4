import itertools

import numpy as np
import pytest

from qtraj.instrument import KrausInstrument, apply, random_instrument
from qtraj.linalg import pure_state, random_density, random_unitary
from qtraj.rng import CounterRNG
from qtraj.trajectory import (
    TrajectoryConfig,
    conditional_state,
    cylinder_probability,
    enumerate_words,
    maximally_mixed,
    run_ensemble,
    simulate,
    step,
)

from conftest import unitary_instrument


def test_step_binomial_frequency(von_neumann2):
    rng = CounterRNG(2024)
    theta = np.diag([0.3, 0.7])
    hits = sum(step(von_neumann2, theta, rng)[0] == 0 for _ in range(10_000))
    sigma = np.sqrt(0.3 * 0.7 / 10_000)
    assert abs(hits / 10_000 - 0.3) <= 3 * sigma


def test_step_unitary_outcome(rng):
    u = random_unitary(2, rng)
    ins = KrausInstrument([u])
    theta = random_density(2, rng)
    i, post, prob = step(ins, theta, CounterRNG(0))
    assert i == 0 and prob == pytest.approx(1.0)
    assert np.allclose(post, u @ theta @ u.conj().T)


def test_step_deterministic():
    ins = random_instrument(3, 3, 2)
    theta = maximally_mixed(3)
    a, b = CounterRNG(5, counter=17), CounterRNG(5, counter=17)
    ia, sa, _ = step(ins, theta, a)
    ib, sb, _ = step(ins, theta, b)
    assert ia == ib and np.array_equal(sa, sb)
    assert a.counter == 18


def test_simulate_zero_steps():
    ins = random_instrument(2, 2, 0)
    theta = np.diag([0.4, 0.6])
    path = simulate(ins, TrajectoryConfig(0, 1, theta))
    assert path.n_steps == 0 and len(path.states) == 1
    assert np.allclose(path.states[0], theta)


def test_unitary_family_keeps_spectrum():
    ins = unitary_instrument(3, 3, 1)
    theta0 = np.diag([0.5, 0.3, 0.2])
    path = simulate(ins, TrajectoryConfig(300, 2, theta0))
    sorted_spectra = np.sort(path.spectra, axis=1)
    assert np.max(np.abs(sorted_spectra - [0.2, 0.3, 0.5])) <= 1e-9


def test_path_record_consistency(corpus):
    for ins in corpus:
        path = simulate(ins, TrajectoryConfig(25, 3, maximally_mixed(ins.d)))
        assert np.all(path.step_probs > 1e-14)
        for n, i in enumerate(path.word):
            prob, post = apply(ins, i, path.states[n])
            assert prob == pytest.approx(path.step_probs[n], abs=1e-12)
            assert np.max(np.abs(post - path.states[n + 1])) <= 1e-9


def test_pure_state_closure(corpus, rng):
    for ins in corpus:
        psi = rng.standard_normal(ins.d) + 1j * rng.standard_normal(ins.d)
        path = simulate(ins, TrajectoryConfig(100, 4, pure_state(psi)))
        assert np.all(np.abs(path.purities - 1) <= 1e-9)


def test_seed_determinism():
    ins = random_instrument(3, 2, 8)
    cfg = TrajectoryConfig(50, 77, maximally_mixed(3))
    a, b = simulate(ins, cfg), simulate(ins, cfg)
    assert a.word == b.word
    assert np.array_equal(a.states, b.states)
    assert np.array_equal(a.step_probs, b.step_probs)


def test_cylinder_empty_and_repeatable(von_neumann2, rng):
    theta = random_density(2, rng)
    assert cylinder_probability(von_neumann2, theta, ()) == pytest.approx(1.0)
    assert cylinder_probability(von_neumann2, theta, (0, 1)) == 0.0
    assert cylinder_probability(von_neumann2, theta, (1, 0)) == 0.0


@pytest.mark.parametrize("d,k", [(2, 2), (3, 3), (4, 2)])
def test_cylinder_chain_rule_and_consistency(d, k, rng):
    ins = random_instrument(d, k, 31 * d + k)
    theta = random_density(d, rng)
    for m in range(0, 5):
        for word in enumerate_words(k, m):
            # chain rule through conditional states, computed with apply
            state, product = theta, 1.0
            for i in word:
                prob, state = apply(ins, i, state)
                product *= prob
            assert cylinder_probability(ins, theta, word) == pytest.approx(product, abs=1e-10)
            children = sum(cylinder_probability(ins, theta, word + (i,)) for i in range(k))
            assert children == pytest.approx(cylinder_probability(ins, theta, word), abs=1e-10)


def test_conditional_state(rng):
    ins = random_instrument(3, 2, 4)
    theta = random_density(3, rng)
    assert np.allclose(conditional_state(ins, theta, ()), theta)
    _, post = apply(ins, 1, theta)
    assert np.allclose(conditional_state(ins, theta, (1,)), post)
    # oracle: product of operators applied directly
    a = ins[0] @ ins[1]
    direct = a @ theta @ a.conj().T
    direct = direct / np.trace(direct)
    assert np.allclose(conditional_state(ins, theta, (1, 0)), direct, atol=1e-12)


def test_conditional_state_impossible(von_neumann2):
    assert conditional_state(von_neumann2, np.diag([1.0, 0.0]), (1,)) is None


def test_enumerate_words():
    assert list(enumerate_words(2, 1)) == [(0,), (1,)]
    assert list(enumerate_words(2, 2)) == [(0, 0), (0, 1), (1, 0), (1, 1)]
    words = list(enumerate_words(3, 4))
    assert len(words) == 81 and len(set(words)) == 81
    assert words == sorted(words)
    with pytest.raises(ValueError):
        enumerate_words(10, 8)


def test_ensemble_single_matches_simulate():
    ins = random_instrument(2, 3, 6)
    theta = maximally_mixed(2)
    (summary,) = run_ensemble(ins, theta, 40, 1, 9)
    path = simulate(ins, TrajectoryConfig(40, 9, theta))
    assert np.array_equal(summary.final_state, path.states[-1])
    assert np.array_equal(summary.purity, path.purities)


def test_ensemble_independent_of_workers():
    ins = random_instrument(3, 2, 1)
    theta = maximally_mixed(3)
    serial = run_ensemble(ins, theta, 30, 1100, 0, workers=1)
    threaded = run_ensemble(ins, theta, 30, 1100, 0, workers=4)
    assert [s.seed for s in serial] == list(range(1100))
    for a, b in zip(serial, threaded):
        assert a.seed == b.seed
        assert np.array_equal(a.final_state, b.final_state)
        assert np.array_equal(a.purity, b.purity)


def test_ensemble_mean_purity_nondecreasing():
    ins = random_instrument(3, 2, 21)
    ens = run_ensemble(ins, maximally_mixed(3), 60, 1000, 0)
    purity = np.array([s.purity for s in ens])
    mean = purity.mean(axis=0)
    # increments are compared against 3 sigma of the sample mean of the increment
    inc = np.diff(purity, axis=1)
    sigma = inc.std(axis=0, ddof=1) / np.sqrt(len(ens))
    assert np.all(np.diff(mean) >= -3 * sigma - 1e-12)


def test_config_validation():
    with pytest.raises(ValueError):
        TrajectoryConfig(-1, 0, maximally_mixed(2))
    with pytest.raises(ValueError):
        TrajectoryConfig(1, 0, np.eye(2))


def test_word_order_matches_apply(rng):
    ins = random_instrument(2, 3, 3)
    theta = random_density(2, rng)
    for word in itertools.product(range(3), repeat=3):
        state = theta
        for i in word:
            _, state = apply(ins, i, state)
        assert np.allclose(conditional_state(ins, theta, word), state, atol=1e-10)

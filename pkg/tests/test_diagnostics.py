import numpy as np
import pytest

from qtraj.diagnostics import (
    NON_PURIFYING,
    PURIFIES,
    UNDECIDED,
    MomentSeries,
    classify_purification,
    classify_series,
    delta_m,
    delta_sum,
    dichotomy_report,
    moment_series,
    moments,
    nielsen_gap,
    spectrum_drift,
)
from qtraj.instrument import apply, block_permutation_instrument, random_instrument
from qtraj.linalg import pure_state, random_density
from qtraj.trajectory import TrajectoryConfig, maximally_mixed, run_ensemble, simulate

from conftest import PI_GENERIC, unitary_instrument


def _trace_power(x, m):
    return float(np.trace(np.linalg.matrix_power(x, m)).real)


def _delta_oracle(ins, theta, m):
    prior = _trace_power(theta, m)
    total = 0.0
    for i in range(ins.k):
        prob, post = apply(ins, i, theta)
        if post is not None:
            total += prob * (_trace_power(post, m) - prior) ** 2
    return total


def test_moments_examples(rng):
    assert np.allclose(moments(np.eye(4) / 4, 4), [1, 0.25, 1 / 16, 1 / 64])
    psi = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    assert np.allclose(moments(pure_state(psi), 3), 1.0)
    assert np.allclose(moments(np.diag([0.5, 0.5]), 2), [1, 0.5])
    with pytest.raises(ValueError):
        moments(np.eye(2) / 2, 0)


def test_nielsen_gap_von_neumann(von_neumann2):
    # measuring a diagonal state in its own basis purifies it in one step
    theta = np.diag([0.3, 0.7])
    assert nielsen_gap(von_neumann2, theta, 2) == pytest.approx(1 - 0.58)
    assert nielsen_gap(von_neumann2, theta, 1) == pytest.approx(0.0, abs=1e-15)


def test_nielsen_gap_unitary_is_zero(rng):
    ins = unitary_instrument(3, 2, 0)
    theta = random_density(3, rng)
    for m in (1, 2, 3):
        assert abs(nielsen_gap(ins, theta, m)) <= 1e-12


def test_nielsen_gap_sweep(corpus, rng):
    for ins in corpus:
        for _ in range(30):
            theta = random_density(ins.d, rng)
            for m in range(1, ins.d + 1):
                assert nielsen_gap(ins, theta, m) >= -1e-10


@pytest.mark.parametrize("m", [1, 2, 3])
def test_delta_m_matches_enumeration(m, corpus, rng):
    for ins in corpus:
        theta = random_density(ins.d, rng)
        assert delta_m(ins, theta, m) == pytest.approx(_delta_oracle(ins, theta, m), abs=1e-12)


def test_delta_m_examples(von_neumann2):
    theta = np.diag([0.3, 0.7])
    expected = 0.3 * (1 - 0.58) ** 2 + 0.7 * (1 - 0.58) ** 2
    assert delta_m(von_neumann2, theta, 2) == pytest.approx(expected)
    assert delta_m(von_neumann2, np.diag([1.0, 0.0]), 2) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(ValueError):
        delta_m(von_neumann2, theta, 0)


def test_delta_sum_is_sum(corpus, rng):
    ins = corpus[3]
    theta = random_density(ins.d, rng)
    assert delta_sum(ins, theta) == pytest.approx(
        sum(delta_m(ins, theta, m) for m in range(1, ins.d + 1)), abs=1e-14
    )


def test_delta_two_square_summable():
    # the purity is a bounded submartingale, so the expected sum of its
    # conditional squared increments is at most 1
    ins = random_instrument(3, 2, 44)
    n_traj, n_steps = 500, 1000
    ens = run_ensemble(ins, maximally_mixed(3), n_steps, n_traj, 0)
    purity = np.array([s.purity for s in ens])
    sq = np.sum(np.diff(purity, axis=1) ** 2, axis=1)
    assert sq.mean() <= 1 + 1e-6
    assert np.all(sq <= 1 + 1e-6)


def test_delta_sum_along_path_bounded():
    ins = random_instrument(2, 3, 8)
    for seed in range(5):
        path = simulate(ins, TrajectoryConfig(300, seed, maximally_mixed(2)))
        total = sum(delta_m(ins, theta, 2) for theta in path.states[:-1])
        assert total <= 1 + 1e-6


def test_classify_series_examples():
    assert classify_series(np.ones(10)) == (PURIFIES, 0)
    series = np.concatenate([np.linspace(0.5, 0.9, 20), np.ones(60)])
    assert classify_series(series) == (PURIFIES, 20)
    assert classify_series(np.full(100, 0.5))[0] == NON_PURIFYING
    # too short to call a plateau
    assert classify_series(np.full(10, 0.5))[0] == UNDECIDED
    assert classify_series(np.linspace(0.5, 0.9, 100))[0] == UNDECIDED
    # flat but within the margin of one
    assert classify_series(np.full(100, 1 - 1e-5))[0] == UNDECIDED


def test_classify_purification_paths(von_neumann2, block_example):
    path = simulate(von_neumann2, TrajectoryConfig(60, 0, maximally_mixed(2)))
    report = classify_purification(path, ins=von_neumann2)
    assert report.classification == PURIFIES and report.n_reached == 1
    assert report.delta2_tail == pytest.approx(0.0, abs=1e-15)
    path = simulate(block_example, TrajectoryConfig(200, 0, maximally_mixed(4)))
    report = classify_purification(path)
    assert report.classification == NON_PURIFYING
    assert np.allclose(report.final_moments, [1, 0.5, 0.25, 0.125], atol=1e-9)
    assert report.to_dict()["classification"] == NON_PURIFYING


def test_moment_series_dataclass():
    ins = random_instrument(2, 2, 3)
    path = simulate(ins, TrajectoryConfig(20, 1, maximally_mixed(2)))
    ms = moment_series(path, 2)
    assert ms.m == 2 and len(ms.values) == 21
    assert np.allclose(ms.values, path.purities)
    with pytest.raises(ValueError):
        MomentSeries(2, [0.5, 1.5])


def test_spectrum_drift():
    ins = unitary_instrument(2, 2, 5)
    path = simulate(ins, TrajectoryConfig(200, 0, np.diag([0.2, 0.8])))
    assert spectrum_drift(path) <= 1e-9
    other = simulate(random_instrument(2, 2, 1), TrajectoryConfig(50, 0, maximally_mixed(2)))
    assert spectrum_drift(other) > 1e-3
    assert spectrum_drift(simulate(ins, TrajectoryConfig(0, 0, maximally_mixed(2)))) == 0.0


def test_dichotomy_purifying():
    report = dichotomy_report(random_instrument(2, 2, 0), n_steps=300, n_traj=50)
    assert report.alternative == "i"
    assert report.counts[PURIFIES] >= 48
    assert report.to_dict()["dark_projection"] is None


def test_dichotomy_dark():
    ins = block_permutation_instrument(2, 2, PI_GENERIC, 3)
    report = dichotomy_report(ins, n_steps=200, n_traj=20)
    assert report.alternative == "ii"
    assert report.dark.rank == 2
    assert report.counts[NON_PURIFYING] == 20


def test_dichotomy_unitary_family_is_dark():
    # every a_i* a_i is a multiple of 1, so the identity itself is dark
    ins = unitary_instrument(2, 2, 0)
    report = dichotomy_report(ins, np.diag([0.3, 0.7]), n_steps=100, n_traj=10)
    assert report.alternative == "ii"
    assert report.dark.rank == 2
    with pytest.raises(ValueError):
        dichotomy_report(ins, n_steps=0)

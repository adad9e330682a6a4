"""Quantum trajectories of a repeated perfect measurement.

The chain moves ``theta -> a_i theta a_i* / pi_i`` with probability
``pi_i = tr(a_i theta a_i*)``. Outcomes are drawn by inverse CDF over the
outcome indices in order, using draw ``n`` of the counter-based stream of
the trajectory's seed (see :mod:`qtraj.rng`).

All sampling goes through one batched kernel, so a single trajectory, a
chunk of an ensemble and a serial or threaded ensemble run produce
bit-identical numbers for the same seed.
"""
from __future__ import annotations

import itertools
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .instrument import PROB_FLOOR, KrausInstrument
from .linalg import DENSITY_TOL, InvariantError, NotPSDError, as_density, project_to_density
from .rng import CounterRNG, stream_keys, uniforms

log = logging.getLogger(__name__)

RENORMALIZE_TOL = 1e-9
ENSEMBLE_CHUNK = 512
WORD_BUDGET = 10**7


class SamplingError(RuntimeError):
    """The outcome distribution of a state is unusable (signals a corrupted state)."""


@dataclass(frozen=True)
class TrajectoryConfig:
    n_steps: int
    seed: int
    initial_state: np.ndarray

    def __post_init__(self):
        if self.n_steps < 0:
            raise ValueError(f"n_steps must be >= 0, got {self.n_steps}")
        object.__setattr__(self, "initial_state", as_density(self.initial_state))


@dataclass(frozen=True)
class PathRecord:
    """One realized trajectory: states ``Theta_0..Theta_n`` and the outcome word."""

    instrument_id: str
    seed: int
    initial_state: np.ndarray
    word: tuple[int, ...]
    states: np.ndarray
    step_probs: np.ndarray
    spectra: np.ndarray
    drift: float = 0.0

    @property
    def n_steps(self) -> int:
        return len(self.word)

    @property
    def purities(self) -> np.ndarray:
        return np.sum(self.spectra**2, axis=-1)

    def moment_series(self, m_max: int | None = None) -> np.ndarray:
        """``tr(Theta_n^m)`` for n = 0..N (rows) and m = 1..m_max (columns)."""
        m_max = self.spectra.shape[-1] if m_max is None else m_max
        return _moments_from_spectra(self.spectra, m_max)


@dataclass(frozen=True)
class TrajectorySummary:
    seed: int
    n_steps: int
    final_state: np.ndarray
    final_moments: tuple[float, ...]
    purity: np.ndarray = field(repr=False)
    drift: float = 0.0

    @property
    def final_purity(self) -> float:
        return float(self.purity[-1])


def _moments_from_spectra(spectra: np.ndarray, m_max: int) -> np.ndarray:
    w = np.clip(spectra, 0.0, None)
    return np.stack([np.sum(w**m, axis=-1) for m in range(1, m_max + 1)], axis=-1)


# -- batched kernel ---------------------------------------------------------

def _outcome_probs(ins: KrausInstrument, states: np.ndarray) -> np.ndarray:
    n, d = states.shape[0], ins.d
    # tr(E_i theta) = sum_ab E_i[b, a] theta[a, b]; reduce over one contiguous axis only
    eff = ins.effects.transpose(0, 2, 1).reshape(1, ins.k, d * d)
    return (states.reshape(n, 1, d * d) * eff).sum(axis=-1).real


def _choose(probs: np.ndarray, u: np.ndarray, prob_floor: float = PROB_FLOOR) -> np.ndarray:
    p = np.where(probs > prob_floor, probs, 0.0)
    total = p.sum(axis=1)
    bad = np.abs(total - 1.0) > RENORMALIZE_TOL
    if np.any(bad):
        raise SamplingError(f"outcome probabilities sum to {total[bad][0]!r}")
    cdf = np.cumsum(p / total[:, None], axis=1)
    idx = np.sum(cdf <= u[:, None], axis=1)
    last = p.shape[1] - 1 - np.argmax(p[:, ::-1] > 0, axis=1)
    return np.minimum(idx, last)


def _normalize_batch(x: np.ndarray, neg_tol: float = DENSITY_TOL):
    """Batched :func:`project_to_density`; returns states, their spectra and the max drift."""
    h = (x + x.conj().transpose(0, 2, 1)) / 2
    tr = np.trace(h, axis1=1, axis2=2).real
    w = np.linalg.eigvalsh(h)
    if np.any(w[:, 0] < -neg_tol * tr):
        j = int(np.argmin(w[:, 0] / tr))
        raise NotPSDError(f"posterior has eigenvalue {w[j, 0] / tr[j]:.3e}")
    neg = np.nonzero(w[:, 0] < 0)[0]
    if neg.size:
        wn, vn = np.linalg.eigh(h[neg])
        wn = np.clip(wn, 0.0, None)
        hn = (vn * wn[:, None, :]) @ vn.conj().transpose(0, 2, 1)
        h[neg] = (hn + hn.conj().transpose(0, 2, 1)) / 2
        w[neg] = wn
        tr[neg] = wn.sum(axis=1)
    out = h / tr[:, None, None]
    drift = float(np.max(np.abs(out - x))) if x.size else 0.0
    return out, w / tr[:, None], drift


def _advance(ins: KrausInstrument, states: np.ndarray, u: np.ndarray):
    probs = _outcome_probs(ins, states)
    idx = _choose(probs, u)
    rows = np.arange(states.shape[0])
    pi = probs[rows, idx]
    a = ins.operators[idx]
    unnorm = a @ states @ a.conj().transpose(0, 2, 1)
    new, w, drift = _normalize_batch(unnorm / pi[:, None, None])
    return idx, pi, new, w, drift


def _evolve(ins: KrausInstrument, theta0: np.ndarray, seeds, n_steps: int, keep_states: bool):
    seeds = list(seeds)
    n = len(seeds)
    keys = stream_keys(seeds)
    states = np.repeat(theta0[None], n, axis=0)
    spectra = np.empty((n, n_steps + 1, ins.d))
    spectra[:, 0] = np.linalg.eigvalsh(states)
    outcomes = np.empty((n, n_steps), dtype=np.int64)
    probs = np.empty((n, n_steps))
    history = [states] if keep_states else None
    drift = 0.0
    for step in range(n_steps):
        idx, pi, states, w, dr = _advance(ins, states, uniforms(keys, step))
        outcomes[:, step] = idx
        probs[:, step] = pi
        spectra[:, step + 1] = w
        drift = max(drift, dr)
        if keep_states:
            history.append(states)
    if drift > 1e-12:
        log.debug("max re-projection drift %.3e over %d steps", drift, n_steps)
    all_states = np.stack(history, axis=1) if keep_states else None
    return outcomes, probs, spectra, states, all_states, drift


# -- public API -------------------------------------------------------------

def step(ins: KrausInstrument, theta, rng: CounterRNG):
    """One transition: ``(outcome, posterior, probability)``; advances ``rng`` by one draw."""
    theta = np.asarray(theta, dtype=complex)
    u = np.array([rng.uniform()])
    idx, pi, new, _, _ = _advance(ins, theta[None], u)
    return int(idx[0]), new[0], float(pi[0])


def simulate(ins: KrausInstrument, cfg: TrajectoryConfig) -> PathRecord:
    outcomes, probs, spectra, _, states, drift = _evolve(
        ins, cfg.initial_state, [cfg.seed], cfg.n_steps, keep_states=True
    )
    return PathRecord(
        instrument_id=ins.name,
        seed=cfg.seed,
        initial_state=cfg.initial_state,
        word=tuple(int(i) for i in outcomes[0]),
        states=states[0],
        step_probs=probs[0],
        spectra=spectra[0],
        drift=drift,
    )


def _summaries(ins, theta0, seeds, n_steps):
    _, _, spectra, final, _, drift = _evolve(ins, theta0, seeds, n_steps, keep_states=False)
    moments = _moments_from_spectra(spectra[:, -1], ins.d)
    purity = np.sum(spectra**2, axis=-1)
    return [
        TrajectorySummary(
            seed=s,
            n_steps=n_steps,
            final_state=final[j],
            final_moments=tuple(float(x) for x in moments[j]),
            purity=purity[j],
            drift=drift,
        )
        for j, s in enumerate(seeds)
    ]


def run_ensemble(
    ins: KrausInstrument,
    theta0,
    n_steps: int,
    n_traj: int,
    base_seed: int,
    workers: int | None = None,
) -> list[TrajectorySummary]:
    """Trajectory ``t`` uses seed ``base_seed + t``.

    Trajectories are evolved in fixed chunks of ``ENSEMBLE_CHUNK`` consecutive
    seeds; ``workers`` only decides how many chunks run at once, so the output
    does not depend on it.
    """
    if n_steps < 0 or n_traj < 1:
        raise ValueError("n_steps must be >= 0 and n_traj >= 1")
    theta0 = as_density(theta0)
    seeds = [base_seed + t for t in range(n_traj)]
    chunks = [seeds[i:i + ENSEMBLE_CHUNK] for i in range(0, n_traj, ENSEMBLE_CHUNK)]
    workers = workers or os.cpu_count() or 1
    if workers == 1 or len(chunks) == 1:
        parts = [_summaries(ins, theta0, c, n_steps) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda c: _summaries(ins, theta0, c, n_steps), chunks))
    return [s for part in parts for s in part]


def _compose(ins: KrausInstrument, theta0, word) -> np.ndarray:
    x = np.asarray(theta0, dtype=complex)
    for i in word:
        if not 0 <= i < ins.k:
            raise IndexError(f"outcome {i} out of range for k={ins.k}")
        a = ins.operators[i]
        x = a @ x @ a.conj().T
    return x


def cylinder_probability(ins: KrausInstrument, theta0, word) -> float:
    """Probability that a trajectory from ``theta0`` starts with ``word``."""
    return float(np.trace(_compose(ins, theta0, word)).real)


def conditional_state(ins: KrausInstrument, theta0, word, prob_floor: float = PROB_FLOOR):
    x = _compose(ins, theta0, word)
    prob = np.trace(x).real
    if prob <= prob_floor:
        return None
    state, _ = project_to_density(x / prob)
    return state


def enumerate_words(k: int, m: int, budget: int = WORD_BUDGET):
    """All ``k**m`` words of length ``m`` in lexicographic order."""
    if k < 1 or m < 0:
        raise ValueError("need k >= 1 and m >= 0")
    if k**m > budget:
        raise ValueError(f"{k}**{m} words exceed the enumeration budget {budget}")
    return itertools.product(range(k), repeat=m)


def maximally_mixed(d: int) -> np.ndarray:
    return np.eye(d, dtype=complex) / d


__all__ = [
    "InvariantError",
    "PathRecord",
    "SamplingError",
    "TrajectoryConfig",
    "TrajectorySummary",
    "conditional_state",
    "cylinder_probability",
    "enumerate_words",
    "maximally_mixed",
    "run_ensemble",
    "simulate",
    "step",
]

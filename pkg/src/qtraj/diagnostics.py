"""Moment submartingales, Nielsen's inequality and purification classification."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .instrument import PROB_FLOOR, KrausInstrument, branches
from .linalg import as_density, spectrum
from .trajectory import PathRecord, TrajectorySummary, maximally_mixed, run_ensemble

PURITY_THRESHOLD = 1 - 1e-8
WINDOW = 50
PLATEAU_TOL = 1e-9
PLATEAU_MARGIN = 1e-3
AUDIT_FLOOR = -1e-10

PURIFIES = "purifies"
NON_PURIFYING = "non-purifying"
UNDECIDED = "undecided"


def moments(theta, m_max: int) -> np.ndarray:
    """``[tr(theta), tr(theta^2), ..., tr(theta^m_max)]`` from one eigendecomposition."""
    if m_max < 1:
        raise ValueError(f"m_max must be >= 1, got {m_max}")
    w = np.clip(spectrum(theta), 0.0, None)
    return np.array([np.sum(w**m) for m in range(1, m_max + 1)])


def _posterior_moments(ins: KrausInstrument, theta, m_max: int, prob_floor: float):
    """Outcome probabilities and the posterior moments (rows: outcomes, cols: m)."""
    unnorm = branches(ins, theta)
    probs = np.trace(unnorm, axis1=1, axis2=2).real
    post = np.zeros((ins.k, m_max))
    live = probs > prob_floor
    if np.any(live):
        x = unnorm[live] / probs[live, None, None]
        w = np.clip(np.linalg.eigvalsh((x + x.conj().transpose(0, 2, 1)) / 2), 0.0, None)
        w = w / w.sum(axis=1, keepdims=True)
        post[live] = np.stack([np.sum(w**m, axis=1) for m in range(1, m_max + 1)], axis=1)
    return np.where(live, probs, 0.0), post


def nielsen_gap(ins: KrausInstrument, theta, m: int, prob_floor: float = PROB_FLOOR) -> float:
    """Expected posterior m-th moment minus the prior one (nonnegative up to round-off)."""
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    probs, post = _posterior_moments(ins, theta, m, prob_floor)
    return float(probs @ post[:, m - 1] - moments(theta, m)[m - 1])


def delta_m(ins: KrausInstrument, theta, m: int, prob_floor: float = PROB_FLOOR) -> float:
    """Conditional mean square of the one-step increment of ``tr(Theta_n^m)``."""
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    probs, post = _posterior_moments(ins, theta, m, prob_floor)
    prior = moments(theta, m)[m - 1]
    return float(np.sum(probs * (post[:, m - 1] - prior) ** 2))


def delta_sum(ins: KrausInstrument, theta, m_max: int | None = None,
              prob_floor: float = PROB_FLOOR) -> float:
    """``sum_{m=1..m_max} delta_m(theta)`` with ``m_max`` defaulting to ``d``."""
    m_max = ins.d if m_max is None else m_max
    probs, post = _posterior_moments(ins, theta, m_max, prob_floor)
    prior = moments(theta, m_max)
    return float(np.sum(probs[:, None] * (post - prior[None]) ** 2))


@dataclass(frozen=True)
class MomentSeries:
    m: int
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if np.any(v <= 0) or np.any(v > 1 + 1e-9):
            raise ValueError("moments must lie in (0, 1]")
        object.__setattr__(self, "values", v)


def moment_series(path: PathRecord, m: int) -> MomentSeries:
    return MomentSeries(m, path.moment_series(m)[:, m - 1])


@dataclass(frozen=True)
class PurificationReport:
    classification: str
    n_reached: int | None
    final_moments: tuple[float, ...]
    delta2_tail: float | None = None

    def to_dict(self) -> dict:
        return {
            "classification": self.classification,
            "n_reached": self.n_reached,
            "final_moments": list(self.final_moments),
            "delta2_tail": self.delta2_tail,
        }


def classify_series(
    purity,
    purity_threshold: float = PURITY_THRESHOLD,
    window: int = WINDOW,
    plateau_tol: float = PLATEAU_TOL,
    plateau_margin: float = PLATEAU_MARGIN,
) -> tuple[str, int | None]:
    """Classify a purity series ``tr(Theta_n^2)``, n = 0..N.

    ``purifies`` needs the threshold held over the last ``window`` steps (the
    whole series if shorter); ``non-purifying`` needs the series to move less
    than ``plateau_tol`` over that window while staying at or below
    ``1 - plateau_margin``. Returns the label and the first step from which
    the threshold is held to the end (``None`` unless purifying).
    """
    purity = np.asarray(purity, dtype=float)
    tail = purity[-(window + 1):]
    if np.all(tail >= purity_threshold):
        below = np.nonzero(purity < purity_threshold)[0]
        return PURIFIES, int(below[-1] + 1) if below.size else 0
    if len(tail) > window and np.ptp(tail) < plateau_tol and tail[-1] <= 1 - plateau_margin:
        return NON_PURIFYING, None
    return UNDECIDED, None


def classify_purification(
    path: PathRecord,
    purity_threshold: float = PURITY_THRESHOLD,
    window: int = WINDOW,
    plateau_tol: float = PLATEAU_TOL,
    plateau_margin: float = PLATEAU_MARGIN,
    ins: KrausInstrument | None = None,
) -> PurificationReport:
    """Finite-run verdict on whether the trajectory purifies.

    If the instrument is given, ``delta2_tail`` carries ``delta_2`` of the
    final state.
    """
    label, n_reached = classify_series(
        path.purities, purity_threshold, window, plateau_tol, plateau_margin
    )
    final = tuple(float(x) for x in path.moment_series()[-1])
    d2 = delta_m(ins, path.states[-1], 2) if ins is not None else None
    return PurificationReport(label, n_reached, final, d2)


def spectrum_drift(path: PathRecord) -> float:
    """Largest max-norm jump between sorted spectra of consecutive states."""
    if len(path.spectra) < 2:
        return 0.0
    return float(np.max(np.abs(np.diff(np.sort(path.spectra, axis=1), axis=0))))


@dataclass
class DichotomyReport:
    """Which alternative of the purification dichotomy the evidence supports.

    ``alternative`` is ``"i"`` (trajectories purify), ``"ii"`` (a verified dark
    projection of rank >= 2 exists) or ``"undecided"``.
    """

    alternative: str
    counts: dict
    n_traj: int
    n_steps: int
    seed: int
    dark: object = None
    detection: object = field(default=None, repr=False)

    def to_dict(self) -> dict:
        out = {
            "alternative": self.alternative,
            "counts": dict(self.counts),
            "n_traj": self.n_traj,
            "n_steps": self.n_steps,
            "seed": self.seed,
            "dark_projection": None,
        }
        if self.dark is not None:
            out["dark_projection"] = self.dark.to_dict()
        if self.detection is not None:
            out["detection"] = self.detection.summary_dict()
        return out


def dichotomy_report(
    ins: KrausInstrument,
    theta0=None,
    n_steps: int = 2000,
    n_traj: int = 100,
    seed: int = 0,
    purify_fraction: float = 0.95,
    workers: int | None = None,
    **detect_kwargs,
) -> DichotomyReport:
    """Run an ensemble, classify every trajectory and look for dark structure."""
    from .darkspace import detect_dark_from_ensemble

    if n_steps < 1 or n_traj < 1:
        raise ValueError("budgets must be positive")
    theta0 = maximally_mixed(ins.d) if theta0 is None else as_density(theta0)
    ensemble = run_ensemble(ins, theta0, n_steps, n_traj, seed, workers=workers)
    labels = [classify_series(s.purity)[0] for s in ensemble]
    counts = {name: labels.count(name) for name in (PURIFIES, NON_PURIFYING, UNDECIDED)}
    detection = None
    dark = None
    if counts[NON_PURIFYING]:
        detection = detect_dark_from_ensemble(ins, ensemble, **detect_kwargs)
        dark = detection.projection
    if dark is not None and dark.rank >= 2:
        alternative = "ii"
    elif counts[NON_PURIFYING] == 0 and counts[PURIFIES] >= purify_fraction * n_traj:
        alternative = "i"
    else:
        alternative = "undecided"
    return DichotomyReport(alternative, counts, n_traj, n_steps, seed, dark, detection)


def ensemble_mean_purity(ensemble: list[TrajectorySummary]) -> np.ndarray:
    """Mean of ``tr(Theta_n^2)`` per step across an ensemble."""
    return np.mean([s.purity for s in ensemble], axis=0)

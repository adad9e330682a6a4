"""Dark projections: subspaces on which every outcome acts as a scaled isometry.

A projection ``p`` is dark when ``p a_w* a_w p = lambda_w p`` for every
outcome word ``w``. Words act in order, ``a_w = a_{w[-1]} ... a_{w[0]}``.
Once a trajectory lives on a dark subspace it no longer purifies; it hops
between dark subspaces ``p -> v_i p v_i*`` with probabilities ``lambda_i``.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .diagnostics import NON_PURIFYING, PLATEAU_MARGIN, classify_series, delta_sum
from .instrument import PROB_FLOOR, KrausInstrument
from .linalg import (
    InvariantError,
    as_density,
    as_hermitian,
    as_projection,
    det_pos,
    polar_decompose,
    spectra_unitarily_equivalent,
    support_projection,
)
from .rng import CounterRNG
from .trajectory import TrajectorySummary, _choose, maximally_mixed, run_ensemble

DARK_TOL = 1e-8
SCALAR_SUM_TOL = 1e-9
DELTA_TOL = 1e-8
SPAN_TOL = 1e-9


class DarkViolation(InvariantError):
    """A projection treated as dark fails the scalar-compression condition."""


@dataclass(frozen=True)
class DarkProjection:
    """A verified dark projection with its one-step scalars ``lambda_i``.

    ``method`` records how the all-words condition was certified:
    ``"rank-one"`` (automatic), ``"closure"`` (the dark walk from ``p`` visits
    finitely many projections, all passing the one-step check) or
    ``"word-span"`` (every element of span{a_w* a_w} compresses to a scalar).
    """

    p: np.ndarray
    one_step_scalars: tuple[float, ...]
    verified_depth: int
    closure: tuple[np.ndarray, ...] = field(default=(), repr=False)
    method: str = "closure"

    def __post_init__(self):
        if abs(sum(self.one_step_scalars) - 1.0) > SCALAR_SUM_TOL:
            raise DarkViolation(f"one-step scalars sum to {sum(self.one_step_scalars)!r}")

    @property
    def rank(self) -> int:
        return int(round(np.trace(self.p).real))

    def to_dict(self) -> dict:
        from .io import matrix_to_json

        return {
            "p": matrix_to_json(self.p),
            "rank": self.rank,
            "scalars": list(self.one_step_scalars),
            "verified_depth": self.verified_depth,
            "method": self.method,
            "closure": [matrix_to_json(q) for q in self.closure],
        }


@dataclass(frozen=True)
class Counterexample:
    """Word ``w`` with ``p a_w* a_w p`` not a multiple of ``p``."""

    word: tuple[int, ...]
    residual: float

    def to_dict(self) -> dict:
        return {"word": list(self.word), "residual": self.residual}


@dataclass(frozen=True)
class VerificationUndecided:
    explored: int
    reason: str

    def to_dict(self) -> dict:
        return {"explored": self.explored, "reason": self.reason}


def _rank(p) -> int:
    return int(round(np.trace(p).real))


def _compression(x, p) -> tuple[float, float]:
    """``lambda = tr(pXp)/tr(p)`` and the residual ``max|pXp - lambda p|``."""
    pxp = p @ x @ p
    lam = float((np.trace(pxp) / np.trace(p)).real)
    return lam, float(np.max(np.abs(pxp - lam * p)))


def scalar_compression_check(x, p, tol: float = DARK_TOL) -> float | None:
    """Return ``lambda`` if ``pXp = lambda p`` within ``tol``, else ``None``."""
    x = as_hermitian(x)
    p = np.asarray(p, dtype=complex)
    if _rank(p) == 0:
        raise ValueError("projection has rank 0")
    lam, residual = _compression(x, p)
    return lam if residual <= tol else None


def word_operator(ins: KrausInstrument, word) -> np.ndarray:
    """``a_w = a_{w[-1]} ... a_{w[0]}``."""
    a = np.eye(ins.d, dtype=complex)
    for i in word:
        a = ins.operators[i] @ a
    return a


def word_scalar(ins: KrausInstrument, p, word, tol: float = DARK_TOL) -> float | None:
    a = word_operator(ins, word)
    return scalar_compression_check(a.conj().T @ a, p, tol)


def _one_step(ins: KrausInstrument, p):
    return [_compression(e, p) for e in ins.effects]


def _walk_image(ins: KrausInstrument, p, i: int) -> np.ndarray:
    v, _ = polar_decompose(ins.operators[i] @ p)
    q = v @ p @ v.conj().T
    return (q + q.conj().T) / 2


def dark_step(ins: KrausInstrument, dp: DarkProjection, i: int,
              tol: float = DARK_TOL, prob_floor: float = PROB_FLOOR):
    """Move a dark projection along outcome ``i``.

    Returns ``(lambda_i, p_i')`` with ``p_i' = v_i p v_i*`` from the polar
    decomposition of ``a_i p``, or ``None`` when ``lambda_i`` is below the
    probability floor (the transition cannot happen).
    """
    if dp.verified_depth < 1:
        raise ValueError("dark_step needs a verified dark projection")
    if not 0 <= i < ins.k:
        raise IndexError(f"outcome {i} out of range for k={ins.k}")
    lam = dp.one_step_scalars[i]
    if lam <= prob_floor:
        return None
    q = _walk_image(ins, dp.p, i)
    try:
        q = as_projection(q)
    except InvariantError as exc:
        raise DarkViolation(f"image under outcome {i} is not a projection: {exc}") from exc
    if _rank(q) != dp.rank:
        raise DarkViolation(f"outcome {i} changed the rank from {dp.rank} to {_rank(q)}")
    checks = _one_step(ins, q)
    worst = max(r for _, r in checks)
    if worst > tol:
        raise DarkViolation(f"image under outcome {i} fails the scalar check by {worst:.3e}")
    scalars = tuple(lam for lam, _ in checks)
    return lam, DarkProjection(q, scalars, dp.verified_depth, dp.closure, dp.method)


def _find(family, q, tol: float) -> int | None:
    for j, (other, _) in enumerate(family):
        if np.max(np.abs(other - q)) <= tol:
            return j
    return None


def _counterexample(ins, p, word) -> Counterexample:
    a = word_operator(ins, word)
    _, residual = _compression(a.conj().T @ a, p)
    return Counterexample(tuple(word), residual)


def _closure(ins, p, max_closure, tol, prob_floor):
    """Breadth-first dark walk from ``p``; one-step check at every visited projection."""
    family = [(p, ())]
    queue = deque([0])
    while queue:
        q, word = family[queue.popleft()]
        checks = _one_step(ins, q)
        for i, (lam, residual) in enumerate(checks):
            if residual > tol:
                return _counterexample(ins, p, word + (i,))
        for i, (lam, _) in enumerate(checks):
            if lam <= prob_floor:
                continue
            image = _walk_image(ins, q, i)
            if _find(family, image, 10 * tol) is None:
                family.append((image, word + (i,)))
                if len(family) > max_closure:
                    return VerificationUndecided(len(family), "closure budget exceeded")
                queue.append(len(family) - 1)
    return family


def _word_span(ins: KrausInstrument, p, tol: float):
    """Certify the all-words condition on a basis of span{a_w* a_w : all words w}.

    The span is the smallest space containing 1 and closed under
    ``X -> a_i* X a_i``; it is built breadth-first over words, keeping only
    words whose ``a_w* a_w`` is linearly independent of the earlier ones (over
    the reals, so the basis stays Hermitian). It has at most ``d**2`` elements.
    """
    d = ins.d

    def vec(x):
        return np.concatenate([x.real.ravel(), x.imag.ravel()])

    basis: list[np.ndarray] = []
    frontier = []
    depth = 0

    def add(x, word):
        v = vec(x)
        r = v.copy()
        for _ in range(2):
            for b in basis:
                r = r - (b @ r) * b
        norm = np.linalg.norm(r)
        if norm <= SPAN_TOL * max(np.linalg.norm(v), 1e-300):
            return False
        basis.append(r / norm)
        b = (r[: d * d] + 1j * r[d * d:]).reshape(d, d) / norm
        _, residual = _compression(b, p)
        if residual > tol:
            return _counterexample(ins, p, word)
        frontier.append((x, word))
        return True

    add(np.eye(d, dtype=complex), ())
    while frontier and len(basis) < d * d:
        current, frontier = frontier, []
        depth += 1
        for x, word in current:
            for i, a in enumerate(ins.operators):
                out = add(a.conj().T @ x @ a, (i,) + word)
                if isinstance(out, Counterexample):
                    return out
                if len(basis) == d * d:
                    break
    return depth


def verify_dark(ins: KrausInstrument, p, max_closure: int | None = None, tol: float = DARK_TOL,
                method: str = "auto", prob_floor: float = PROB_FLOOR):
    """Decide whether ``p`` is dark.

    Returns a :class:`DarkProjection`, a :class:`Counterexample` naming a word
    that breaks the condition, or :class:`VerificationUndecided` when
    ``method="closure"`` and the dark walk visits more than ``max_closure``
    (default ``4*d``) distinct projections. With ``method="auto"`` an
    exhausted closure budget falls back to the word-span certificate, which
    always decides.
    """
    if method not in ("auto", "closure", "word-span"):
        raise ValueError(f"unknown method {method!r}")
    p = as_projection(p)
    if _rank(p) < 1:
        raise ValueError("projection has rank 0")
    max_closure = 4 * ins.d if max_closure is None else max_closure
    checks = _one_step(ins, p)
    scalars = tuple(lam for lam, _ in checks)
    if _rank(p) == 1:
        return DarkProjection(p, scalars, 1, (p,), "rank-one")
    for i, (_, residual) in enumerate(checks):
        if residual > tol:
            return Counterexample((i,), residual)

    if method != "word-span":
        family = _closure(ins, p, max_closure, tol, prob_floor)
        if isinstance(family, Counterexample):
            return family
        if isinstance(family, list):
            depth = 1 + max(len(w) for _, w in family)
            return DarkProjection(p, scalars, depth, tuple(q for q, _ in family), "closure")
        if method == "closure":
            return family

    out = _word_span(ins, p, tol)
    if isinstance(out, Counterexample):
        return out
    return DarkProjection(p, scalars, max(out, 1), (p,), "word-span")


class DarkWalkState:
    """Position of a dark walk after ``n`` steps and the ``(outcome, lambda)`` history so far."""

    __slots__ = ("current", "n", "_log")

    def __init__(self, current: DarkProjection, n: int, log: list):
        self.current = current
        self.n = n
        self._log = log

    @property
    def history(self) -> list[tuple[int, float]]:
        return self._log[: self.n]

    def __repr__(self) -> str:
        return f"DarkWalkState(n={self.n}, rank={self.current.rank})"


def dark_walk(ins: KrausInstrument, dp0: DarkProjection, n: int, seed: int,
              tol: float = DARK_TOL) -> list[DarkWalkState]:
    """Random walk ``p -> p_i'`` with probability ``lambda_i`` (inverse CDF, counter-based draws)."""
    rng = CounterRNG(seed)
    log: list[tuple[int, float]] = []
    current = dp0
    states = [DarkWalkState(current, 0, log)]
    for t in range(n):
        probs = np.array([current.one_step_scalars], dtype=float)
        i = int(_choose(probs, np.array([rng.uniform()]))[0])
        lam, current = dark_step(ins, current, i, tol)
        log.append((i, lam))
        states.append(DarkWalkState(current, t + 1, log))
    return states


@dataclass
class DarkDetection:
    projection: DarkProjection | None
    n_traj: int
    n_plateaued: int
    candidate_delta: float | None = None
    candidate_purity: float | None = None
    candidate_seed: int | None = None
    verification: object = None
    reason: str = ""

    def summary_dict(self) -> dict:
        ver = self.verification
        return {
            "found": self.projection is not None,
            "n_traj": self.n_traj,
            "n_plateaued": self.n_plateaued,
            "candidate_delta": self.candidate_delta,
            "candidate_purity": self.candidate_purity,
            "candidate_seed": self.candidate_seed,
            "verification": type(ver).__name__ if ver is not None else None,
            "reason": self.reason,
        }

    def to_dict(self) -> dict:
        out = self.summary_dict()
        out["dark_projection"] = self.projection.to_dict() if self.projection is not None else None
        if isinstance(self.verification, (Counterexample, VerificationUndecided)):
            out["counterexample" if isinstance(self.verification, Counterexample)
                else "undecided"] = self.verification.to_dict()
        return out


def detect_dark_from_ensemble(
    ins: KrausInstrument,
    ensemble: list[TrajectorySummary],
    plateau_margin: float = PLATEAU_MARGIN,
    delta_tol: float = DELTA_TOL,
    min_fraction: float = 0.05,
    max_closure: int | None = None,
    tol: float = DARK_TOL,
) -> DarkDetection:
    """Take the support of the most stationary plateaued final state and verify it."""
    plateaued = [
        s for s in ensemble
        if classify_series(s.purity, plateau_margin=plateau_margin)[0] == NON_PURIFYING
    ]
    result = DarkDetection(None, len(ensemble), len(plateaued))
    if not plateaued or len(plateaued) < min_fraction * len(ensemble):
        result.reason = "no significant fraction of trajectories plateaued below full purity"
        return result
    deltas = [delta_sum(ins, s.final_state) for s in plateaued]
    best = int(np.argmin(deltas))
    cand = plateaued[best]
    result.candidate_delta = deltas[best]
    result.candidate_purity = cand.final_purity
    result.candidate_seed = cand.seed
    if deltas[best] > delta_tol:
        result.reason = "no plateaued state is stationary enough"
        return result
    p = support_projection(cand.final_state)
    verdict = verify_dark(ins, p, max_closure=max_closure, tol=tol)
    result.verification = verdict
    if isinstance(verdict, DarkProjection):
        result.projection = verdict
        result.reason = "verified"
    else:
        result.reason = "candidate support failed verification"
    return result


def detect_dark(
    ins: KrausInstrument,
    theta0=None,
    n_traj: int = 100,
    n_steps: int = 2000,
    seed: int = 0,
    workers: int | None = None,
    **kwargs,
) -> DarkDetection:
    """Search for a dark projection from trajectories started at ``theta0`` (default ``1/d``)."""
    if n_traj < 1 or n_steps < 1:
        raise ValueError("budgets must be positive")
    theta0 = maximally_mixed(ins.d) if theta0 is None else as_density(theta0)
    ensemble = run_ensemble(ins, theta0, n_steps, n_traj, seed, workers=workers)
    return detect_dark_from_ensemble(ins, ensemble, **kwargs)


@dataclass(frozen=True)
class EqualSpectraReport:
    """Equal-spectra hypothesis ``a_i rho a_i* ~ lambda_i rho`` and the compression conclusion."""

    hypothesis_holds: bool
    lambdas: tuple[float, ...]
    lambda_sum: float
    conclusion_holds: bool | None
    residuals: tuple[float, ...] = ()

    def to_dict(self) -> dict:
        return {
            "hypothesis_holds": self.hypothesis_holds,
            "lambdas": list(self.lambdas),
            "lambda_sum": self.lambda_sum,
            "conclusion_holds": self.conclusion_holds,
            "residuals": list(self.residuals),
        }


def equal_spectra_check(ins: KrausInstrument, rho, tol: float = 1e-9,
                 dark_tol: float = DARK_TOL, prob_floor: float = PROB_FLOOR) -> EqualSpectraReport:
    rho = as_density(rho)
    lambdas = []
    hypothesis = True
    for a in ins.operators:
        x = a @ rho @ a.conj().T
        lam = float(np.trace(x).real)
        if lam <= prob_floor:
            lambdas.append(0.0)
            continue
        lambdas.append(lam)
        if not spectra_unitarily_equivalent(x / lam, rho, tol):
            hypothesis = False
    total = float(sum(lambdas))
    if not hypothesis:
        return EqualSpectraReport(False, tuple(lambdas), total, None)
    p = support_projection(rho)
    residuals = []
    ok = abs(total - 1.0) <= SCALAR_SUM_TOL
    for e, lam in zip(ins.effects, lambdas):
        got = scalar_compression_check(e, p, dark_tol)
        residuals.append(float(np.max(np.abs(p @ e @ p - lam * p))))
        ok = ok and got is not None and residuals[-1] <= dark_tol
    return EqualSpectraReport(True, tuple(lambdas), total, ok, tuple(residuals))


@dataclass(frozen=True)
class DetPosReport:
    rank: int
    det_pos: float
    premise: bool
    trace_gap: float
    inequality_holds: bool
    equality: bool
    is_scalar_projection: bool

    @property
    def consistent(self) -> bool:
        """Equality in the trace bound coincides with ``x = lambda p``."""
        return not self.premise or self.equality == self.is_scalar_projection


def detpos_implication_check(x, lam: float, tol: float = 1e-10) -> DetPosReport:
    """Check ``det_pos(x) = lam**r  =>  tr(xp) >= lam r`` with equality iff ``x = lam p``."""
    if lam <= 0:
        raise ValueError("lam must be positive")
    x = as_hermitian(x)
    p = support_projection(x)
    r = _rank(p)
    dp = det_pos(x)
    premise = abs(dp - lam**r) <= tol * max(1.0, lam**r)
    gap = float(np.trace(x @ p).real - lam * r)
    return DetPosReport(
        rank=r,
        det_pos=dp,
        premise=premise,
        trace_gap=gap,
        inequality_holds=(not premise) or gap >= -tol,
        equality=premise and abs(gap) <= tol,
        is_scalar_projection=bool(np.max(np.abs(x - lam * p)) <= tol),
    )

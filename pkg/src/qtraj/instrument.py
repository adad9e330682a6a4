"""Perfect measurements given by Kraus operators ``a_1..a_k`` with ``sum a_i* a_i = 1``.

Outcomes are 0-based indices into the operator stack.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import InvariantError, as_matrix, project_to_density, random_unitary

PROB_FLOOR = 1e-14
COMPLETENESS_TOL = 1e-10
UNITARY_TOL = 1e-10


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    residual: float
    message: str = ""

    def __bool__(self) -> bool:
        return self.ok


class KrausInstrument:
    """An ordered, immutable stack of ``k`` operators acting on ``C^d``.

    Construction checks completeness unless ``check=False``; unchecked
    instruments exist so that :func:`validate` can report on them.
    """

    def __init__(self, operators, name: str = "", check: bool = True):
        ops = np.array(operators, dtype=complex)
        if ops.ndim == 2:
            ops = ops[None]
        if ops.ndim != 3 or ops.shape[1] != ops.shape[2]:
            raise ValueError(f"operators must have shape (k, d, d), got {ops.shape}")
        if ops.shape[0] < 1:
            raise ValueError("an instrument needs at least one operator")
        if ops.shape[1] < 2:
            raise ValueError("system dimension must be at least 2")
        if not np.all(np.isfinite(ops)):
            raise InvariantError("operators have non-finite entries")
        ops.setflags(write=False)
        self.operators = ops
        self.name = name
        effects = ops.conj().transpose(0, 2, 1) @ ops
        effects.setflags(write=False)
        # a_i* a_i, used for outcome probabilities tr(a_i* a_i theta)
        self.effects = effects
        if check:
            report = validate(self)
            if not report.ok:
                raise InvariantError(report.message)

    @property
    def k(self) -> int:
        return self.operators.shape[0]

    @property
    def d(self) -> int:
        return self.operators.shape[1]

    def __len__(self) -> int:
        return self.k

    def __getitem__(self, i: int) -> np.ndarray:
        return self.operators[i]

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"<KrausInstrument{label} d={self.d} k={self.k}>"

    def __eq__(self, other) -> bool:
        if not isinstance(other, KrausInstrument):
            return NotImplemented
        return self.operators.shape == other.operators.shape and bool(
            np.array_equal(self.operators, other.operators)
        )

    __hash__ = None


def completeness_residual(ops) -> float:
    ops = np.asarray(ops, dtype=complex)
    total = np.einsum("kji,kjl->il", ops.conj(), ops)
    return float(np.max(np.abs(total - np.eye(ops.shape[-1]))))


def validate(ins, tol: float = COMPLETENESS_TOL) -> ValidationReport:
    """Check ``sum a_i* a_i = 1``; never raises on a well-shaped input."""
    ops = ins.operators if isinstance(ins, KrausInstrument) else np.asarray(ins, dtype=complex)
    residual = completeness_residual(ops)
    if residual <= tol:
        return ValidationReport(True, residual)
    return ValidationReport(
        False, residual, f"completeness violated: max|sum a_i* a_i - 1| = {residual:.3e}"
    )


def _is_unitary(u, tol: float = UNITARY_TOL) -> bool:
    u = np.asarray(u)
    return u.ndim == 2 and u.shape[0] == u.shape[1] and (
        np.max(np.abs(u.conj().T @ u - np.eye(u.shape[0]))) <= tol
    )


def from_von_neumann(projections, tol: float = 1e-10, name: str = "von-neumann") -> KrausInstrument:
    """Projective measurement: ``a_i = p_i`` for orthogonal projections summing to 1."""
    ps = np.array([as_matrix(p) for p in projections])
    d = ps.shape[1]
    for i, p in enumerate(ps):
        if np.max(np.abs(p @ p - p)) > tol or np.max(np.abs(p - p.conj().T)) > tol:
            raise ValueError(f"element {i} is not an orthogonal projection")
        for j in range(i):
            if np.max(np.abs(p @ ps[j])) > tol:
                raise ValueError(f"projections {j} and {i} are not orthogonal")
    if np.max(np.abs(ps.sum(axis=0) - np.eye(d))) > tol:
        raise ValueError("projections do not sum to the identity")
    return KrausInstrument(ps, name=name)


@dataclass(frozen=True)
class AncillaSpec:
    """Pure ancilla state ``beta`` in ``C^k`` and a unitary ``u`` on ``C^k (x) C^d``.

    ``u`` is read as a ``k x k`` block matrix of ``d x d`` blocks: block
    ``(i, j)`` is ``u[i*d:(i+1)*d, j*d:(j+1)*d]``.
    """

    beta: np.ndarray
    u: np.ndarray
    k: int = field(init=False)
    d: int = field(init=False)

    def __post_init__(self):
        beta = np.array(self.beta, dtype=complex).ravel()
        u = np.array(self.u, dtype=complex)
        if abs(np.linalg.norm(beta) - 1.0) > 1e-12:
            raise ValueError(f"ancilla state must be a unit vector, |beta| = {np.linalg.norm(beta)!r}")
        k = beta.size
        if u.ndim != 2 or u.shape[0] != u.shape[1] or u.shape[0] % k:
            raise ValueError(f"u of shape {u.shape} is not a square (k*d) matrix for k={k}")
        if not _is_unitary(u):
            raise ValueError("u is not unitary")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "d", u.shape[0] // k)


def from_ancilla_unitary(spec: AncillaSpec, name: str = "ancilla-unitary") -> KrausInstrument:
    """Indirect measurement: ``a_i = sum_j beta_j u_ij``."""
    k, d = spec.k, spec.d
    blocks = spec.u.reshape(k, d, k, d).transpose(0, 2, 1, 3)
    ops = np.einsum("j,ijab->iab", spec.beta, blocks)
    return KrausInstrument(ops, name=name)


def random_instrument(d: int, k: int, seed: int) -> KrausInstrument:
    """Generic instrument: first block column of a Haar unitary on ``C^k (x) C^d``."""
    if d < 2 or k < 2:
        raise ValueError("random_instrument needs d >= 2 and k >= 2")
    rng = np.random.default_rng(seed)
    beta = np.zeros(k, dtype=complex)
    beta[0] = 1.0
    spec = AncillaSpec(beta, random_unitary(k * d, rng))
    return from_ancilla_unitary(spec, name=f"random-d{d}-k{k}-s{seed}")


def block_permutation_instrument(l: int, e: int, pi, isometry_seed: int) -> KrausInstrument:
    """Random walk between ``l`` orthogonal ``e``-dimensional blocks.

    Outcome ``i*l + j`` has operator ``sqrt(pi[i, j]) v_ij`` where ``v_ij`` maps
    block ``i`` isometrically onto block ``j`` (a seeded Haar unitary placed at
    block position ``(j, i)``).
    """
    pi = np.array(pi, dtype=float)
    if pi.shape != (l, l):
        raise ValueError(f"pi must be {l}x{l}, got {pi.shape}")
    if np.any(pi < 0) or np.max(np.abs(pi.sum(axis=1) - 1.0)) > 1e-12:
        raise ValueError("pi must be row-stochastic")
    rng = np.random.default_rng(isometry_seed)
    d = l * e
    ops = np.zeros((l * l, d, d), dtype=complex)
    for i in range(l):
        for j in range(l):
            v = random_unitary(e, rng)
            ops[i * l + j, j * e:(j + 1) * e, i * e:(i + 1) * e] = np.sqrt(pi[i, j]) * v
    return KrausInstrument(ops, name=f"block-permutation-l{l}-e{e}-s{isometry_seed}")


def block_projection(l: int, e: int, i: int) -> np.ndarray:
    """Projection onto block ``i`` of a :func:`block_permutation_instrument`."""
    p = np.zeros((l * e, l * e), dtype=complex)
    p[i * e:(i + 1) * e, i * e:(i + 1) * e] = np.eye(e)
    return p


def tensor_dark_instrument(b: KrausInstrument, unitaries) -> KrausInstrument:
    """``a_i = b_i (x) u_i`` for a qubit instrument ``b`` and unitaries ``u_i``."""
    if b.d != 2:
        raise ValueError(f"b must act on C^2, got d={b.d}")
    us = [np.asarray(u, dtype=complex) for u in unitaries]
    if len(us) != b.k:
        raise ValueError(f"need {b.k} unitaries, got {len(us)}")
    for i, u in enumerate(us):
        if not _is_unitary(u):
            raise ValueError(f"factor {i} is not unitary")
    if len({u.shape for u in us}) != 1:
        raise ValueError("unitaries must share one dimension")
    ops = np.array([np.kron(bi, u) for bi, u in zip(b.operators, us)])
    return KrausInstrument(ops, name="tensor-dark")


def unitary_family(unitaries, weights, name: str = "unitary-family") -> KrausInstrument:
    """``a_i = sqrt(w_i) u_i``; every outcome leaves the spectrum unchanged."""
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
        raise ValueError("weights must be a probability vector")
    ops = np.array([np.sqrt(wi) * np.asarray(u, dtype=complex) for wi, u in zip(w, unitaries)])
    return KrausInstrument(ops, name=name)


def branches(ins: KrausInstrument, theta) -> np.ndarray:
    """Unnormalized posteriors ``a_i theta a_i*`` stacked over outcomes."""
    ops = ins.operators
    return ops @ np.asarray(theta, dtype=complex) @ ops.conj().transpose(0, 2, 1)


def probabilities(ins: KrausInstrument, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=complex)
    # tr(E_i theta) = sum_ab E_i[a, b] theta[b, a]
    return np.einsum("kab,ba->k", ins.effects, theta).real


def apply(ins: KrausInstrument, i: int, theta, prob_floor: float = PROB_FLOOR):
    """Probability of outcome ``i`` and the conditioned state (``None`` if impossible)."""
    if not 0 <= i < ins.k:
        raise IndexError(f"outcome {i} out of range for k={ins.k}")
    a = ins.operators[i]
    unnorm = a @ np.asarray(theta, dtype=complex) @ a.conj().T
    prob = float(np.trace(unnorm).real)
    if prob <= prob_floor:
        return max(prob, 0.0), None
    post, _ = project_to_density(unnorm / prob)
    return prob, post


def mean_channel(ins: KrausInstrument, theta) -> np.ndarray:
    out = branches(ins, theta).sum(axis=0)
    return (out + out.conj().T) / 2

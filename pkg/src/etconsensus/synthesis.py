"""Feedback and observer gain synthesis.

All designs go through the Riccati equation ``A'Q + QA - QBB'Q + I = 0``.  Its
inverse solution also certifies the strict LMI ``AP + PA' - BB' < 0`` because
``AP + PA' - BB' = -P^2`` when ``P = Q^{-1}``, so no SDP solver is needed.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as la

HURWITZ_TOL = 1e-10
RANK_RTOL = 1e-9

MODES = ("state-feedback-lmi", "state-feedback-care", "output-feedback")


class SynthesisError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class SystemModel:
    A: np.ndarray
    B: np.ndarray
    C: Optional[np.ndarray] = None

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 1:
            B = B.reshape(-1, 1)
        n = A.shape[0]
        if A.shape != (n, n):
            raise ValueError(f"A must be square, got {A.shape}")
        if B.shape[0] != n:
            raise ValueError(f"B must have {n} rows, got {B.shape}")
        C = np.eye(n) if self.C is None else np.atleast_2d(np.asarray(self.C, dtype=float))
        if C.shape[1] != n:
            raise ValueError(f"C must have {n} columns, got {C.shape}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def p(self) -> int:
        return self.B.shape[1]

    @property
    def m(self) -> int:
        return self.C.shape[0]


@dataclass(frozen=True, eq=False)
class GainSet:
    Q: np.ndarray
    P: np.ndarray
    K: np.ndarray
    Gamma: np.ndarray
    F: Optional[np.ndarray] = None
    riccati_residual: float = float("nan")
    lmi_margin: float = float("nan")
    mode: str = ""


@dataclass(frozen=True)
class ModelReport:
    stabilizable: bool
    detectable: bool
    unstable_modes: list  # eigenvalues with Re >= 0 failing the Hautus test for (A, B)
    unobservable_modes: list


def _hautus_failures(A: np.ndarray, B: np.ndarray) -> list[complex]:
    n = A.shape[0]
    bad = []
    for lam in np.linalg.eigvals(A):
        if lam.real < -HURWITZ_TOL:
            continue
        M = np.hstack([A - lam * np.eye(n), B])
        s = np.linalg.svd(M, compute_uv=False)
        if s.size == 0 or np.sum(s > RANK_RTOL * max(s[0], 1e-300)) < n:
            bad.append(complex(lam))
    return bad


def validate_model(model: SystemModel) -> ModelReport:
    """Hautus rank tests for stabilizability of (A, B) and detectability of (A, C)."""
    unstable = _hautus_failures(model.A, model.B)
    unobservable = _hautus_failures(model.A.T, model.C.T)
    return ModelReport(not unstable, not unobservable, unstable, unobservable)


def is_hurwitz(M) -> bool:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    return bool(np.max(np.linalg.eigvals(M).real) < -HURWITZ_TOL)


def care_residual(A, B, Q) -> float:
    return float(np.linalg.norm(A.T @ Q + Q @ A - Q @ B @ B.T @ Q + np.eye(A.shape[0]), "fro"))


def solve_care(A, B) -> np.ndarray:
    """Stabilizing solution of ``A'Q + QA - QBB'Q + I = 0``.

    Ordered Schur form of the Hamiltonian ``[[A, -BB'], [-I, -A']]`` gives the
    stable invariant subspace; one Newton (Kleinman) step then polishes it.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    n = A.shape[0]
    bad = _hautus_failures(A, B)
    if bad:
        raise SynthesisError(f"(A, B) is not stabilizable; uncontrollable modes {bad}")
    G = B @ B.T
    H = np.block([[A, -G], [-np.eye(n), -A.T]])
    T, Z, sdim = la.schur(H, output="real", sort="lhp")
    if sdim != n:
        raise SynthesisError(f"Hamiltonian has {sdim} stable eigenvalues, expected {n}")
    U1, U2 = Z[:n, :n], Z[n:, :n]
    Q = np.linalg.solve(U1.T, U2.T).T
    Q = 0.5 * (Q + Q.T)
    # Newton step: (A - GQ)'X + X(A - GQ) = -(I + QGQ)
    Acl = A - G @ Q
    if is_hurwitz(Acl):
        Xn = la.solve_continuous_lyapunov(Acl.T, -(np.eye(n) + Q @ G @ Q))
        Xn = 0.5 * (Xn + Xn.T)
        if care_residual(A, B, Xn) <= care_residual(A, B, Q):
            Q = Xn
    if not is_hurwitz(A - G @ Q):
        raise SynthesisError("Riccati solution is not stabilizing")
    if np.min(np.linalg.eigvalsh(Q)) <= 0:
        raise SynthesisError("Riccati solution is not positive definite")
    return Q


def lmi_margin(A, B, P) -> float:
    """``-lambda_max(AP + PA' - BB')``; positive means the strict LMI holds."""
    M = A @ P + P @ A.T - B @ B.T
    return float(-np.max(np.linalg.eigvalsh(0.5 * (M + M.T))))


def solve_lmi_via_care(A, B, scale: float = 1.0) -> tuple[np.ndarray, float]:
    """Feasible ``P > 0`` for ``AP + PA' - BB' < 0`` and its margin.

    ``P = scale * Q^{-1}`` with ``Q`` from :func:`solve_care`.  At ``scale = 1``
    the residual is exactly ``-P^2``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    if scale < 1.0:
        raise ValueError("scale must be >= 1")
    Q = solve_care(A, B)
    P = scale * np.linalg.inv(Q)
    P = 0.5 * (P + P.T)
    margin = lmi_margin(A, B, P)
    if margin <= 0:
        raise SynthesisError(f"scale {scale} breaks the LMI (margin {margin:.3g})")
    return P, margin


def observer_gain(A, C) -> np.ndarray:
    """``F = -Po C'`` with ``A Po + Po A' - Po C'C Po + I = 0`` (the dual CARE)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    try:
        Po = solve_care(A.T, C.T)
    except SynthesisError as exc:
        raise SynthesisError(f"(A, C) is not detectable: {exc}") from None
    F = -Po @ C.T
    if not is_hurwitz(A + F @ C):
        raise SynthesisError("observer gain does not make A + FC Hurwitz")
    return F


def gains_from_Q(A, B, Q, mode: str = "", F=None, P=None) -> GainSet:
    Q = np.asarray(Q, dtype=float)
    P = np.linalg.inv(Q) if P is None else np.asarray(P, dtype=float)
    K = -B.T @ Q
    Gamma = Q @ B @ B.T @ Q
    return GainSet(
        Q=Q,
        P=P,
        K=K,
        Gamma=Gamma,
        F=F,
        riccati_residual=care_residual(A, B, Q),
        lmi_margin=lmi_margin(A, B, P),
        mode=mode,
    )


def gains_from_P(model: SystemModel, P, mode: str = "given-P") -> GainSet:
    """Gains from an externally supplied ``P`` (``Q = P^{-1}``); ``P`` must be symmetric."""
    P = np.asarray(P, dtype=float)
    if not np.allclose(P, P.T, rtol=0, atol=1e-12):
        raise SynthesisError("P must be symmetric")
    if np.min(np.linalg.eigvalsh(P)) <= 0:
        raise SynthesisError("P must be positive definite")
    return gains_from_Q(model.A, model.B, np.linalg.inv(P), mode=mode, P=P)


def symmetrize(M) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    return 0.5 * (M + M.T)


def synthesize_gains(model: SystemModel, mode: str = "state-feedback-lmi") -> GainSet:
    if mode not in MODES:
        raise ValueError(f"unknown synthesis mode {mode!r}; expected one of {MODES}")
    report = validate_model(model)
    if not report.stabilizable:
        raise SynthesisError(f"(A, B) is not stabilizable; uncontrollable modes {report.unstable_modes}")
    A, B = model.A, model.B
    if mode == "state-feedback-lmi":
        P, _ = solve_lmi_via_care(A, B)
        return gains_from_Q(A, B, np.linalg.inv(P), mode=mode, P=P)
    Q = solve_care(A, B)
    F = None
    if mode == "output-feedback":
        if not report.detectable:
            raise SynthesisError(f"(A, C) is not detectable; unobservable modes {report.unobservable_modes}")
        F = observer_gain(A, model.C)
    return gains_from_Q(A, B, Q, mode=mode, F=F)


def format_gains(gains: GainSet) -> str:
    """Structured text block, row-major, 12 significant digits."""

    def mat(name, M):
        M = np.atleast_2d(M)
        rows = "; ".join(" ".join(f"{v:.12g}" for v in row) for row in M)
        return f"{name} = [{rows}]"

    lines = [f"[gains] mode = {gains.mode}"]
    for name in ("Q", "P", "K", "Gamma"):
        lines.append(mat(name, getattr(gains, name)))
    if gains.F is not None:
        lines.append(mat("F", gains.F))
    lines.append(f"riccati_residual = {gains.riccati_residual:.12g}")
    lines.append(f"lmi_margin = {gains.lmi_margin:.12g}")
    return "\n".join(lines)

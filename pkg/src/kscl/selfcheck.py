"""Built-in invariant suite run by ``kscl selfcheck``.

Every suite draws from its own fixed seed, so verdicts are reproducible.
Calls go through module attributes (``subspace.project`` and friends) so a
fault patched into a module is seen by every suite.
"""

from __future__ import annotations

import contextlib
import time
from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from . import linalg, loss, subspace

FAULTS = ("projection-sign",)


@dataclass(frozen=True)
class SuiteResult:
    name: str
    passed: bool
    detail: str
    seconds: float


def _unit(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    x = rng.normal(size=(n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def _random_subspace(rng, k, d, rho=1.0):
    return subspace.build_subspace(_unit(rng, k, d), subspace.TruncationPolicy(rho))


def check_eigensolver() -> str | None:
    rng = np.random.default_rng(101)
    worst = [0.0, 0.0, 0.0]
    for _ in range(200):
        k = int(rng.integers(1, 9))
        x = rng.normal(size=(k + 2, k))
        a = x.T @ x
        res = linalg.sym_eig(a)
        vals, vecs = res.eigenvalues, res.eigenvectors
        worst[0] = max(worst[0], float(np.max(np.abs(vecs.T @ vecs - np.eye(k)))))
        worst[1] = max(worst[1], float(np.max(np.abs(a @ vecs - vecs * vals))))
        worst[2] = max(worst[2], abs(float(vals.sum() - np.trace(a))) / max(1.0, abs(float(np.trace(a)))))
    if worst[0] > 1e-10:
        return f"eigenvector orthonormality error {worst[0]:.3e}"
    if worst[1] > 1e-8:
        return f"eigen-residual {worst[1]:.3e}"
    if worst[2] > 1e-8:
        return f"trace not preserved ({worst[2]:.3e})"
    return None


def check_projection_geometry() -> str | None:
    rng = np.random.default_rng(102)
    for _ in range(100):
        d = int(rng.integers(3, 12))
        s = _random_subspace(rng, int(rng.integers(1, d)), d, rho=float(rng.uniform(0.3, 1.0)))
        v = rng.normal(size=d)
        p = subspace.project(s, v)
        if np.max(np.abs(subspace.project(s, p) - p)) > 1e-10:
            return "projection is not idempotent"
        dist = subspace.projection_distance(s, v)
        if abs(v @ v - (p @ p + dist**2)) > 1e-9 * max(1.0, v @ v):
            return "Pythagoras identity violated"
        if abs(float(np.linalg.norm(v - p)) - dist) > 1e-8:
            return "projection distance disagrees with the projection residual"
    return None


def check_residual_vanishes() -> str | None:
    rng = np.random.default_rng(103)
    for _ in range(100):
        d = int(rng.integers(3, 12))
        keys = _unit(rng, int(rng.integers(1, d)), d)
        s = subspace.build_subspace(keys, subspace.TruncationPolicy(1.0))
        for key in keys:
            if np.linalg.norm(key - subspace.project(s, key)) > 1e-8:
                return "full-rank subspace does not reproduce its own keys"
    return None


def check_k1_reduction() -> str | None:
    rng = np.random.default_rng(104)
    for _ in range(200):
        d = int(rng.integers(2, 16))
        key, v = _unit(rng, 2, d)
        s = subspace.build_subspace(key[None], subspace.TruncationPolicy(1.0))
        if abs(subspace.projection_length(s, v) - abs(float(key @ v))) > 1e-10:
            return "K=1 projection length differs from |cosine|"
    return None


def check_gradient() -> str | None:
    rng = np.random.default_rng(105)
    h = 1e-5
    for _ in range(10):
        d, n = 8, 5
        cands = [_random_subspace(rng, 3, d, rho=0.7) for _ in range(n)]
        v = _unit(rng, 1, d)[0]
        pos = int(rng.integers(n))
        g = loss.kshot_loss_and_grad(v, cands, pos).grad_wrt_query
        fd = np.zeros(d)
        for i in range(d):
            e = np.zeros(d)
            e[i] = h
            fd[i] = (loss.kshot_loss_and_grad(v + e, cands, pos).loss - loss.kshot_loss_and_grad(v - e, cands, pos).loss) / (2 * h)
        if np.max(np.abs(g - fd)) > 1e-4 * max(np.max(np.abs(fd)), 1e-3):
            return f"query gradient differs from finite differences by {np.max(np.abs(g - fd)):.3e}"
    return None


def check_least_squares() -> str | None:
    rng = np.random.default_rng(106)
    for _ in range(100):
        keys = _unit(rng, 3, 6)
        s = subspace.build_subspace(keys, subspace.TruncationPolicy(1.0))
        v = rng.normal(size=6)
        coef, *_ = np.linalg.lstsq(keys.T, v, rcond=None)
        if np.max(np.abs(subspace.project(s, v) - keys.T @ coef)) > 1e-8:
            return "projection disagrees with least squares"
    return None


def check_dual_form() -> str | None:
    rng = np.random.default_rng(107)
    for _ in range(100):
        d = int(rng.integers(2, 11))
        k = int(rng.integers(1, d + 1))
        keys = _unit(rng, k, d)
        s = subspace.build_subspace(keys, subspace.TruncationPolicy(1.0))
        lam, vecs = np.linalg.eigh(keys.T @ keys)
        top = vecs[:, lam > 1e-10]
        if top.shape[1] != s.rank or np.max(np.abs(top @ top.T - s.basis @ s.basis.T)) > 1e-8:
            return "dual K x K basis spans a different space than the direct D x D one"
    return None


SUITES: list[tuple[str, Callable[[], str | None]]] = [
    ("eigensolver", check_eigensolver),
    ("projection-geometry", check_projection_geometry),
    ("residual-vanishing", check_residual_vanishes),
    ("k1-reduction", check_k1_reduction),
    ("gradient", check_gradient),
    ("least-squares", check_least_squares),
    ("dual-form", check_dual_form),
]


@contextlib.contextmanager
def injected_fault(name: str | None) -> Iterator[None]:
    """Temporarily break a primitive so the suite can prove it notices."""
    if name is None:
        yield
        return
    if name != "projection-sign":
        raise ValueError(f"unknown fault {name!r}; choose from {FAULTS}")
    original = subspace.project
    subspace.project = lambda s, v: -original(s, v)
    try:
        yield
    finally:
        subspace.project = original


def run_selfcheck(fault: str | None = None) -> list[SuiteResult]:
    results = []
    with injected_fault(fault):
        for name, fn in SUITES:
            started = time.perf_counter()
            try:
                problem = fn()
            except Exception as exc:  # a crash is a failed invariant, not a crash of the tool
                problem = f"{type(exc).__name__}: {exc}"
            results.append(SuiteResult(name, problem is None, problem or "ok", time.perf_counter() - started))
    return results

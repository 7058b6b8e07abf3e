"""Finite irreducible aperiodic Markov chains.

Validation, stationary analysis, path sampling, and a regenerative
(hitting-time) accumulator.  The accumulator estimates

    E_i[ sum_{m=0}^{tau-1} g(Y_m) ],   tau = first time n > 0 with Y_n = i0,

by Monte Carlo; it is kept as an independent oracle for the linear-system
Poisson solver and is never used on a production path.

All operations are pure given their inputs.  Sampling takes an explicit
generator, so concurrent use is safe when each caller owns its stream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .errors import NotIrreducible, NotStochastic, Periodic, SolverFailure

ROW_SUM_TOL = 1e-12
STATIONARY_TOL = 1e-10


@dataclass(frozen=True)
class MarkovChain:
    """A validated finite chain.  Construct via :func:`build_chain`."""

    P: np.ndarray
    n_states: int

    def cumulative_rows(self) -> np.ndarray:
        """Row-wise cumulative transition probabilities, used for inverse-CDF sampling."""
        return np.cumsum(self.P, axis=1)


@dataclass(frozen=True)
class StationaryDistribution:
    """The unique invariant distribution of an irreducible aperiodic chain."""

    pi: np.ndarray

    @property
    def diag(self) -> np.ndarray:
        """The diagonal weight matrix with the stationary probabilities on the diagonal."""
        return np.diag(self.pi)


def _period(support: np.ndarray) -> int:
    """Period of a strongly connected digraph given as a boolean adjacency matrix.

    BFS from node 0 assigns levels; the period is the gcd of
    ``level[u] + 1 - level[v]`` over all edges ``u -> v``.
    """
    s = support.shape[0]
    level = np.full(s, -1, dtype=int)
    level[0] = 0
    frontier = [0]
    while frontier:
        nxt = []
        for u in frontier:
            for v in np.flatnonzero(support[u]):
                if level[v] < 0:
                    level[v] = level[u] + 1
                    nxt.append(int(v))
        frontier = nxt
    g = 0
    for u in range(s):
        for v in np.flatnonzero(support[u]):
            g = math.gcd(g, level[u] + 1 - level[v])
    return abs(g)


def build_chain(P: np.ndarray) -> MarkovChain:
    """Validate a transition matrix and wrap it as a chain.

    Raises NotStochastic when a row sum strays beyond 1e-12 or an entry
    leaves [0, 1] (renormalization is refused: silent fixes hide config
    bugs), NotIrreducible when the support digraph is not strongly
    connected, and Periodic when the chain period exceeds one.
    """
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise NotStochastic(f"transition matrix must be square, got shape {P.shape}")
    s = P.shape[0]
    if not np.all(np.isfinite(P)):
        raise NotStochastic("transition matrix has non-finite entries")
    if np.any(P < 0.0) or np.any(P > 1.0):
        raise NotStochastic("transition probabilities must lie in [0, 1]")
    row_err = np.abs(P.sum(axis=1) - 1.0)
    if np.any(row_err > ROW_SUM_TOL):
        bad = int(np.argmax(row_err))
        raise NotStochastic(
            f"row {bad} sums to {P[bad].sum():.17g}, off by {row_err[bad]:.3e} "
            f"(tolerance {ROW_SUM_TOL:g}); renormalization is refused"
        )
    support = P > 0.0
    n_comp, _ = connected_components(csr_matrix(support), directed=True, connection="strong")
    if n_comp != 1:
        raise NotIrreducible(f"support digraph has {n_comp} strongly connected components")
    period = _period(support)
    if period != 1:
        raise Periodic(f"chain has period {period}")
    return MarkovChain(P=P, n_states=s)


def stationary_distribution(chain: MarkovChain) -> StationaryDistribution:
    """Solve the balance equations for the unique stationary distribution.

    Solves the linear system with the transposed transition matrix minus the
    identity, replacing one equation by the normalization row.  Deterministic,
    with no iterative-eigensolver tolerance coupling.
    """
    s = chain.n_states
    A = chain.P.T - np.eye(s)
    A[-1, :] = 1.0
    b = np.zeros(s)
    b[-1] = 1.0
    try:
        pi = np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:
        raise SolverFailure(f"balance system singular: {exc}") from exc
    residual = float(np.max(np.abs(pi @ chain.P - pi)))
    if residual > STATIONARY_TOL or np.any(pi <= 0.0) or abs(pi.sum() - 1.0) > STATIONARY_TOL:
        raise SolverFailure(
            f"stationary solve left residual {residual:.3e} or an invalid distribution"
        )
    return StationaryDistribution(pi=pi)


def sample_path(
    chain: MarkovChain,
    initial_state: int,
    length: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Sample ``length`` states of one path, starting exactly at ``initial_state``.

    Reproducible: the same generator state yields the same path.  One uniform
    is consumed per transition via inverse-CDF lookup on the cumulative rows.
    """
    s = chain.n_states
    if not 0 <= initial_state < s:
        raise ValueError(f"initial state {initial_state} out of range [0, {s})")
    if length < 1:
        raise ValueError("path length must be at least 1")
    cum = chain.cumulative_rows()
    out = np.empty(length, dtype=np.int64)
    out[0] = initial_state
    us = rng.random(length - 1)
    y = initial_state
    for k in range(length - 1):
        y = min(int(np.searchsorted(cum[y], us[k], side="right")), s - 1)
        out[k + 1] = y
    return out


def expected_hitting_sums(
    chain: MarkovChain,
    i0: int,
    g: np.ndarray,
    n_cycles: int = 10_000,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Monte Carlo estimate of the accumulated value of ``g`` until hitting ``i0``.

    For each start state i, averages ``sum_{m=0}^{tau-1} g(Y_m)`` over
    ``n_cycles`` independent episodes, where tau is the first n > 0 with
    Y_n = i0.  Returns ``(estimate, standard_error)``, both of shape
    ``g.shape``; cycles are independent so the plain iid standard error
    is valid.
    """
    if rng is None:
        rng = np.random.default_rng()
    s = chain.n_states
    if not 0 <= i0 < s:
        raise ValueError(f"anchor state {i0} out of range [0, {s})")
    g = np.asarray(g, dtype=float)
    if g.shape[0] != s:
        raise ValueError(f"g must have leading dimension {s}, got {g.shape}")
    flat = g.reshape(s, -1)
    k = flat.shape[1]
    cum_rows = [chain.P[i].cumsum().tolist() for i in range(s)]
    from bisect import bisect_right

    total = np.zeros((s, k))
    total_sq = np.zeros((s, k))
    buf: list[float] = []
    ptr = 0

    def next_u() -> float:
        nonlocal buf, ptr
        if ptr >= len(buf):
            buf = rng.random(8192).tolist()
            ptr = 0
        u = buf[ptr]
        ptr += 1
        return u

    for start in range(s):
        for _ in range(n_cycles):
            acc = flat[start].copy()
            y = start
            while True:
                row = cum_rows[y]
                y = min(bisect_right(row, next_u()), s - 1)
                if y == i0:
                    break
                acc += flat[y]
            total[start] += acc
            total_sq[start] += acc * acc
    mean = total / n_cycles
    var = np.maximum(total_sq / n_cycles - mean * mean, 0.0)
    se = np.sqrt(var / n_cycles)
    return mean.reshape(g.shape), se.reshape(g.shape)

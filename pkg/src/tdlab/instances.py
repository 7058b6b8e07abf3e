"""Built-in problem instances used by the test suite and the quickstart.

The scalar instance is the smallest nontrivial case (one state, one
feature) where every quantity has a closed form.

The reference instance is a five-state chain with two features.  The
chain is random but biased toward alternating between two state groups,
and the features are whitened against the stationary distribution,
aligned with the chain's two most anti-correlated modes, and scaled to
the gain level that maximizes the certified contraction margin.  The
alignment gives the averaged map a strong actual contraction, so
convergence is measurable at desk-scale horizons.
"""

from __future__ import annotations

import numpy as np

from .analytic import PolicyEvalProblem
from .features import FeatureMap, build_features, scaling_threshold
from .markov import MarkovChain, build_chain, stationary_distribution

REFERENCE_SEED = 99
REFERENCE_SWAP_WEIGHT = 0.7
REFERENCE_MODE_MIX = 0.15


def scalar_problem() -> PolicyEvalProblem:
    """One state, one feature: fixed point 4, contraction factor sqrt(0.890625)."""
    chain = build_chain(np.array([[1.0]]))
    features = build_features(np.array([[0.5]]))
    return PolicyEvalProblem(chain, np.array([1.0]), 0.5, features)


def whitened_features(
    chain: MarkovChain, raw: np.ndarray, gamma: float, gain_fraction: float = 1.0 / np.sqrt(2.0)
) -> FeatureMap:
    """Whiten raw features against the stationary weights and scale the gain.

    The returned features have a weighted Gram matrix equal to
    ``(gain_fraction * threshold)^2`` times the identity: equal singular
    values, so the gain sits at ``gain_fraction`` of the scaling threshold.
    The default fraction maximizes the certified contraction margin.
    """
    pi = stationary_distribution(chain).pi
    raw = np.asarray(raw, dtype=float)
    gram = raw.T @ (pi[:, None] * raw)
    L = np.linalg.cholesky(gram)
    white = np.linalg.solve(L, raw.T).T
    target_gain = gain_fraction * scaling_threshold(gamma)
    return build_features(white * target_gain)


def oscillatory_mode_features(
    chain: MarkovChain,
    gamma: float,
    n_features: int,
    mode_mix: float,
    rng: np.random.Generator,
    gain_fraction: float = 1.0 / np.sqrt(2.0),
) -> FeatureMap:
    """Features spanning the chain's most anti-correlated directions.

    Takes the eigenvectors of the symmetrized, stationary-weighted
    transition kernel with the most negative eigenvalues, perturbs them by
    ``mode_mix`` units of Gaussian noise, and whitens.  Aligning the
    feature subspace with these modes maximizes the actual contraction of
    the averaged map at a fixed certified gain.
    """
    pi = stationary_distribution(chain).pi
    sq = np.sqrt(pi)
    kernel = sq[:, None] * chain.P / sq[None, :]
    kernel = 0.5 * (kernel + kernel.T)
    _, vecs = np.linalg.eigh(kernel)
    raw = vecs[:, :n_features] / sq[:, None]
    raw = raw + mode_mix * rng.standard_normal(raw.shape)
    return whitened_features(chain, raw, gamma, gain_fraction)


def reference_chain(
    seed: int = REFERENCE_SEED, swap_weight: float = REFERENCE_SWAP_WEIGHT
) -> MarkovChain:
    """A random five-state chain biased toward alternating between two groups.

    Rows are Dirichlet draws blended with a kernel that sends each group's
    mass to the other group; the Dirichlet part keeps every entry positive,
    so the chain is irreducible and aperiodic by construction.
    """
    rng = np.random.default_rng(seed)
    s = 5
    dirichlet = rng.dirichlet(np.ones(s), size=s)
    group_a = np.array([0, 1])
    group_b = np.array([2, 3, 4])
    swap = np.zeros((s, s))
    for i in range(s):
        targets = group_b if i in group_a else group_a
        w = rng.dirichlet(np.ones(len(targets)))
        swap[i, targets] = w
    return build_chain((1.0 - swap_weight) * dirichlet + swap_weight * swap)


def reference_problem(seed: int = REFERENCE_SEED) -> PolicyEvalProblem:
    """The five-state, two-feature instance used throughout the test suite."""
    rng = np.random.default_rng(seed + 1)
    chain = reference_chain(seed)
    gamma = 0.5
    features = oscillatory_mode_features(chain, gamma, 2, REFERENCE_MODE_MIX, rng)
    rewards = rng.uniform(0.0, 0.3, size=5)
    return PolicyEvalProblem(chain, rewards, gamma, features)


def reference_config_dict(
    n0: int = 100,
    horizon: int = 10_000,
    n_trajectories: int = 2000,
    master_seed: int = 2024,
    epsilon: float = 0.045,
    delta: float = 0.1,
    d1: float = 0.5,
) -> dict:
    """A complete config-file dictionary for the reference instance."""
    problem = reference_problem()
    return {
        "chain": {"P": problem.chain.P.tolist()},
        "rewards": {"r": problem.rewards.tolist()},
        "gamma": problem.gamma,
        "features": {"Phi": problem.features.Phi.tolist()},
        "schedule": {"kind": "harmonic", "d1": d1},
        "experiment": {
            "n0": n0,
            "horizon": horizon,
            "n_trajectories": n_trajectories,
            "master_seed": master_seed,
            "epsilon": epsilon,
            "delta": delta,
            "epsilon_grid": [0.01, 0.03, 0.045, 0.06, 0.09],
            "delta_grid": [0.004, 0.02, 0.1, 0.5, 1.0],
            "initial_state_policy": "stationary",
        },
        "output": {"dir": "out", "formats": ["json", "csv"]},
    }

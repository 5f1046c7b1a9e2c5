"""Exact control-as-inference machinery on small finite state spaces.

Everything here is exact and enumerable by design: it exists to cross-check
the particle planner, so nothing is approximated.  The central identity it
exposes - the optimally controlled chain law coinciding with the trajectory
posterior under exponentiated-cost observations - is what the whole planning
stack rests on.

Scores live in the extended reals: -inf plus anything finite is -inf, and a
trellis whose best terminal score is -inf has no feasible path.  Ties break
toward the lowest index everywhere, so results are deterministic and directly
comparable across implementations.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import AllZeroDesirability, DeadEndState, NoFeasiblePath

_ROW_TOL = 1e-12


@dataclass(frozen=True)
class FiniteKLMDP:
    """S states, K steps: passive row-stochastic transitions p_k (k < K) and
    state costs q_k >= 0 for k = 0..K (extended reals)."""

    passive: tuple  # K matrices (S, S)
    costs: tuple  # K+1 vectors (S,)

    def __post_init__(self):
        passive = tuple(np.asarray(p, dtype=float) for p in self.passive)
        costs = tuple(np.asarray(q, dtype=float) for q in self.costs)
        if len(costs) != len(passive) + 1:
            raise ValueError("need K transition matrices and K+1 cost vectors")
        s = costs[0].shape[0]
        for p in passive:
            if p.shape != (s, s):
                raise ValueError("transition matrices must be (S, S)")
            if np.max(np.abs(p.sum(axis=1) - 1.0)) > _ROW_TOL:
                raise ValueError("transition rows must sum to 1")
            if np.any(p < 0):
                raise ValueError("transition probabilities must be non-negative")
        for q in costs:
            if q.shape != (s,) or np.any(q < 0):
                raise ValueError("costs must be non-negative S-vectors")
        object.__setattr__(self, "passive", passive)
        object.__setattr__(self, "costs", costs)

    @property
    def n_states(self) -> int:
        return self.costs[0].shape[0]

    @property
    def horizon(self) -> int:
        return len(self.passive)


@dataclass(frozen=True)
class DesirabilityTable:
    """z_k = exp(-value) per step; 0 <= z <= 1 whenever costs are >= 0."""

    z: tuple  # K+1 vectors (S,)

    def value(self, k: int) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return -np.log(self.z[k])


def solve_desirability(mdp: FiniteKLMDP, start: int | None = None) -> DesirabilityTable:
    """Backward recursion z_K = exp(-q_K), z_k = exp(-q_k) * p_k @ z_{k+1}."""
    z = [np.exp(-mdp.costs[-1])]
    for k in range(mdp.horizon - 1, -1, -1):
        z.append(np.exp(-mdp.costs[k]) * (mdp.passive[k] @ z[-1]))
    z.reverse()
    z0 = z[0]
    if start is not None and z0[start] == 0.0:
        raise AllZeroDesirability(f"no feasible trajectory from state {start}")
    if np.all(z0 == 0.0):
        raise AllZeroDesirability("desirability vanished at every start state")
    return DesirabilityTable(tuple(z))


def desirability_operator(p_k: np.ndarray, z_next: np.ndarray) -> np.ndarray:
    """Expected next-step value of a function under the passive dynamics."""
    return np.asarray(p_k) @ np.asarray(z_next)


def optimal_policy(mdp: FiniteKLMDP, table: DesirabilityTable):
    """Optimally controlled transitions pi_k = p_k * z_{k+1} / (p_k z_{k+1}).

    Rows whose continuation mass is zero (dead ends) come back all-zero; use
    :func:`optimal_policy_row` to turn such a query into a DeadEndState error.
    """
    policies = []
    for k in range(mdp.horizon):
        g = desirability_operator(mdp.passive[k], table.z[k + 1])
        pi = mdp.passive[k] * table.z[k + 1][None, :]
        alive = g > 0
        pi[alive] /= g[alive, None]
        pi[~alive] = 0.0
        policies.append(pi)
    return policies


def optimal_policy_row(mdp: FiniteKLMDP, table: DesirabilityTable, k: int, x: int) -> np.ndarray:
    g = float(desirability_operator(mdp.passive[k], table.z[k + 1])[x])
    if g == 0.0:
        raise DeadEndState(f"state {x} at step {k} has zero continuation desirability")
    return mdp.passive[k][x] * table.z[k + 1] / g


def enumerate_trajectories(n_states: int, horizon: int):
    """All state sequences x_1..x_K as tuples, in lexicographic order."""
    return itertools.product(range(n_states), repeat=horizon)


def trajectory_posterior(mdp: FiniteKLMDP, x0: int):
    """Normalized posterior over trajectories x_1..x_K given the start state
    and all artificial observations on.

    Returns (probs, log_partition): probs is a flat (S**K,) array aligned with
    :func:`enumerate_trajectories`.  Only meant for enumerable instances.
    """
    S, K = mdp.n_states, mdp.horizon
    weights = np.empty(S**K)
    for idx, traj in enumerate(enumerate_trajectories(S, K)):
        w = np.exp(-mdp.costs[0][x0])
        prev = x0
        for k, x in enumerate(traj):
            w *= mdp.passive[k][prev, x]
            qk = mdp.costs[k + 1][x]
            w *= 0.0 if np.isinf(qk) else np.exp(-qk)
            prev = x
        weights[idx] = w
    total = weights.sum()
    if total == 0.0:
        raise AllZeroDesirability(f"no feasible trajectory from state {x0}")
    with np.errstate(divide="ignore"):
        return weights / total, float(np.log(total))


def chain_law(policies, x0: int):
    """Probability of each trajectory under given per-step transition
    matrices, flat array aligned with :func:`enumerate_trajectories`."""
    S = policies[0].shape[0]
    K = len(policies)
    probs = np.empty(S**K)
    for idx, traj in enumerate(enumerate_trajectories(S, K)):
        p = 1.0
        prev = x0
        for k, x in enumerate(traj):
            p *= policies[k][prev, x]
            prev = x
        probs[idx] = p
    return probs


def soft_value_enumeration(mdp: FiniteKLMDP, x0: int) -> float:
    """-log of the trajectory-summed exponentiated cost, via brute-force
    log-sum-exp over all S**K trajectories; equals the value at the start."""
    S, K = mdp.n_states, mdp.horizon
    logs = []
    for traj in enumerate_trajectories(S, K):
        lw = -mdp.costs[0][x0]
        prev = x0
        for k, x in enumerate(traj):
            p = mdp.passive[k][prev, x]
            lw += -np.inf if p == 0.0 else np.log(p)
            lw -= mdp.costs[k + 1][x]
            prev = x
        logs.append(lw)
    logs = np.asarray(logs)
    m = logs.max()
    if m == -np.inf:
        return np.inf
    return float(-(m + np.log(np.sum(np.exp(logs - m)))))


def expected_total_cost(mdp: FiniteKLMDP, policies, x0: int) -> float:
    """Expected cost-plus-control of a policy: state costs along the chain
    plus the KL of the policy from the passive dynamics at every step."""
    mu = np.zeros(mdp.n_states)
    mu[x0] = 1.0
    total = float(mdp.costs[0][x0])
    for k in range(mdp.horizon):
        pi, p = policies[k], mdp.passive[k]
        for x in np.nonzero(mu > 0)[0]:
            row_pi, row_p = pi[x], p[x]
            mask = row_pi > 0
            if np.any(row_p[mask] == 0.0):
                return np.inf
            kl = float(np.sum(row_pi[mask] * np.log(row_pi[mask] / row_p[mask])))
            total += mu[x] * kl
        mu = mu @ pi
        q = mdp.costs[k + 1]
        live = mu > 0
        if np.any(np.isinf(q[live])):
            return np.inf
        total += float(mu[live] @ q[live])
    return total


@dataclass(frozen=True)
class ViterbiResult:
    path: tuple  # node index per level, root level included
    score: float


def exact_trellis_viterbi(transitions, emissions, delta0=None) -> ViterbiResult:
    """MAP path through an explicit trellis by dynamic programming.

    transitions: K score matrices, transitions[k][j, i] taking level-k node j
    to level-(k+1) node i (log-densities, extended reals).
    emissions: K score vectors for levels 1..K (log-emissions, -cost).
    delta0: level-0 node scores, default all zero.

    Returns the argmax path over levels 0..K and its score; ties resolve to
    the lowest node index.  Raises NoFeasiblePath if every terminal score
    is -inf.
    """
    if len(transitions) != len(emissions):
        raise ValueError("need one transition matrix per emission vector")
    K = len(transitions)
    n0 = transitions[0].shape[0]
    delta = np.zeros(n0) if delta0 is None else np.asarray(delta0, dtype=float)
    back = []
    for k in range(K):
        trans = np.asarray(transitions[k], dtype=float)
        scores = delta[:, None] + trans
        delta = scores.max(axis=0) + np.asarray(emissions[k], dtype=float)
        back.append(scores.argmax(axis=0))
    best = int(np.argmax(delta))
    score = float(delta[best])
    if score == -np.inf:
        raise NoFeasiblePath("all terminal trellis scores are -inf")
    path = [best]
    for k in range(K - 1, -1, -1):
        path.append(int(back[k][path[-1]]))
    path.reverse()
    return ViterbiResult(path=tuple(path), score=score)


def random_instance(rng, n_states: int, horizon: int, inf_cost_prob: float = 0.15) -> FiniteKLMDP:
    """Random well-formed instance for duality checks; some costs may be +inf."""
    passive = []
    for _ in range(horizon):
        raw = rng.uniform(0.05, 1.0, size=(n_states, n_states))
        passive.append(raw / raw.sum(axis=1, keepdims=True))
    costs = []
    for _ in range(horizon + 1):
        q = rng.uniform(0.0, 2.0, size=n_states)
        mask = rng.uniform(size=n_states) < inf_cost_prob
        if mask.all():  # keep at least one state alive per step
            mask[rng.integers(n_states)] = False
        q[mask] = np.inf
        costs.append(q)
    costs[0][:] = np.where(np.isinf(costs[0]), 1.0, costs[0])
    return FiniteKLMDP(tuple(passive), tuple(costs))


def duality_residuals(rng, n_states: int, horizon: int):
    """One random instance's residuals: (posterior vs chain law, value vs
    enumeration).  Used by the verify-duality command and the test suite."""
    mdp = random_instance(rng, n_states, horizon)
    x0 = int(rng.integers(mdp.n_states))
    table = solve_desirability(mdp, start=x0)
    posterior, _ = trajectory_posterior(mdp, x0)
    law = chain_law(optimal_policy(mdp, table), x0)
    pol_res = float(np.max(np.abs(posterior - law)))
    val_res = abs(float(table.value(0)[x0]) - soft_value_enumeration(mdp, x0))
    return pol_res, val_res

"""Exact dynamic-programming oracles over hidden states.

Policies here are memoryless tables of shape ``(n_obs, n_actions)``; rows for
observations no acting state emits are ignored.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from math import comb

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .model import EnvModel

__all__ = [
    "as_policy_table",
    "evaluate_policies",
    "exact_policy_eval",
    "per_step_value",
    "value_iteration",
    "SearchSpec",
    "SearchBudgetError",
    "best_memoryless_policy",
    "best_deterministic_policy",
]


class SearchBudgetError(ValueError):
    """The requested policy search exceeds the configured evaluation budget."""


def as_policy_table(policy, model: EnvModel) -> np.ndarray:
    table = np.asarray(getattr(policy, "table", policy), dtype=float)
    if table.shape != (model.n_obs, model.n_actions):
        raise ValueError(
            f"policy table must have shape {(model.n_obs, model.n_actions)}, "
            f"got {table.shape}"
        )
    acting = model.acting_obs()
    rows = table[acting]
    if rows.min() < 0 or np.any(np.abs(rows.sum(axis=1) - 1.0) > 1e-9):
        raise ValueError("policy rows must be probability vectors on acting observations")
    return table


def _state_action_probs(model: EnvModel, tables: np.ndarray) -> np.ndarray:
    """Per-state action distributions ``(P, S, A)``; zero on terminal states."""
    pi = tables[:, model.obs_map, :].copy()
    pi[:, model.terminal, :] = 0.0
    return pi


def _backup(model: EnvModel, values: np.ndarray, gamma: float) -> np.ndarray:
    """One-step lookahead ``Q[p, s, a]`` for a batch of value vectors ``(P, S)``."""
    S, A = model.n_states, model.n_actions
    cont = np.where(model.terminal, 0.0, values)
    if isinstance(model.kernel, np.ndarray):
        ev = cont @ model.kernel_T
    else:
        ev = (model.kernel @ cont.T).T
    return model.reward + gamma * ev.reshape(-1, S, A)


def evaluate_policies(
    model: EnvModel, tables: np.ndarray, gamma: float | None = None
) -> np.ndarray:
    """Exact hidden-state values ``(P, S)`` for a batch of policy tables.

    Finite horizons use backward induction from the horizon; ``horizon=None``
    solves the discounted linear system per policy.
    """
    gamma = model.discount if gamma is None else gamma
    tables = np.asarray(tables, dtype=float)
    pi = _state_action_probs(model, tables)
    if model.horizon is not None:
        V = np.zeros((tables.shape[0], model.n_states))
        for _ in range(model.horizon):
            V = (pi * _backup(model, V, gamma)).sum(axis=2)
        return V
    if gamma >= 1.0:
        raise ValueError("infinite-horizon evaluation needs gamma < 1")
    S, A = model.n_states, model.n_actions
    T = model.transition.tocoo()
    keep = ~model.terminal[T.col]
    s_idx, a_idx = np.divmod(T.row[keep], A)
    out = np.empty((tables.shape[0], S))
    for p in range(tables.shape[0]):
        weights = T.data[keep] * pi[p, s_idx, a_idx]
        P_pi = sp.csr_matrix((weights, (s_idx, T.col[keep])), shape=(S, S))
        r_pi = np.einsum("sa,sa->s", pi[p], model.reward)
        system = sp.identity(S, format="csc") - gamma * P_pi.tocsc()
        out[p] = spla.spsolve(system, r_pi)
    return out


def exact_policy_eval(model: EnvModel, policy, gamma: float | None = None):
    """Return ``(state_values, J)`` where ``J`` weights values by ``initial_dist``."""
    table = as_policy_table(policy, model)
    V = evaluate_policies(model, table[None], gamma)[0]
    return V, float(model.initial_dist @ V)


def per_step_value(J: float, gamma: float, horizon: int) -> float:
    """Convert a discounted finite-horizon return into an average per-step reward."""
    if gamma == 1.0:
        return J / horizon
    return J * (1.0 - gamma) / (1.0 - gamma**horizon)


def value_iteration(
    model: EnvModel, gamma: float | None = None, tol: float = 1e-12, max_iter: int = 1_000_000
):
    """Optimal values of the underlying fully observed MDP.

    Returns ``(V, Q, J)`` at the first decision step. Finite horizons are solved
    by backward induction (the optimum may then be time dependent).
    """
    gamma = model.discount if gamma is None else gamma
    V = np.zeros(model.n_states)
    steps = model.horizon if model.horizon is not None else max_iter
    for _ in range(steps):
        Q = _backup(model, V[None], gamma)[0]
        V_new = np.where(model.terminal, 0.0, Q.max(axis=1))
        delta = np.max(np.abs(V_new - V))
        V = V_new
        if model.horizon is None and delta < tol:
            break
    Q = _backup(model, V[None], gamma)[0] if model.horizon is None else Q
    return V, Q, float(model.initial_dist @ V)


@dataclass(frozen=True)
class SearchSpec:
    """Grid resolution per simplex axis and the evaluation budget."""

    resolution: int = 101
    budget: int = 2_000_000
    stochastic: bool = True
    chunk: int = 2048


def _simplex_grid(n_actions: int, resolution: int) -> np.ndarray:
    m = resolution - 1
    points = [
        c
        for c in itertools.product(range(m + 1), repeat=n_actions - 1)
        if sum(c) <= m
    ]
    pts = np.array([list(c) + [m - sum(c)] for c in points], dtype=float)
    return pts / m


def _search(model, gamma, acting, row_choices, spec):
    n_rows = len(row_choices)
    total = n_rows ** len(acting)
    if total > spec.budget:
        raise SearchBudgetError(
            f"search needs {total} policy evaluations "
            f"({len(acting)} observations x {n_rows} rows each), budget {spec.budget}"
        )
    best_value, best_table = -np.inf, None
    combos = itertools.product(range(n_rows), repeat=len(acting))
    base = np.full((model.n_obs, model.n_actions), 1.0 / model.n_actions)
    while True:
        chunk = list(itertools.islice(combos, spec.chunk))
        if not chunk:
            break
        idx = np.array(chunk)
        tables = np.repeat(base[None], len(chunk), axis=0)
        tables[:, acting, :] = row_choices[idx]
        J = evaluate_policies(model, tables, gamma) @ model.initial_dist
        j = int(np.argmax(J))
        if J[j] > best_value:
            best_value, best_table = float(J[j]), tables[j]
    return best_table, best_value


def best_deterministic_policy(model: EnvModel, gamma: float | None = None, spec=None):
    """Exact enumeration of deterministic memoryless policies."""
    spec = spec or SearchSpec()
    acting = model.acting_obs()
    return _search(model, gamma, acting, np.eye(model.n_actions), spec)


def best_memoryless_policy(model: EnvModel, gamma: float | None = None, spec=None):
    """Best memoryless policy found by deterministic enumeration plus a simplex grid.

    The grid includes every vertex, so the deterministic optimum is always
    covered; the grid resolution brackets the stochastic optimum.
    """
    spec = spec or SearchSpec()
    acting = model.acting_obs()
    if not spec.stochastic:
        return best_deterministic_policy(model, gamma, spec)
    n_points = comb(spec.resolution - 1 + model.n_actions - 1, model.n_actions - 1)
    if n_points ** len(acting) > spec.budget:
        raise SearchBudgetError(
            f"simplex grid needs {n_points}^{len(acting)} evaluations, "
            f"budget {spec.budget}"
        )
    grid = _simplex_grid(model.n_actions, spec.resolution)
    return _search(model, gamma, acting, grid, spec)

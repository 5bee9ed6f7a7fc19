"""Tabular one-player CFR and CFR+ with exact counterfactual values."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .base import BaseLearner, model_of
from .policies import TabularPolicy, entropy, regret_matching
from .pomdp.model import EnvModel
from .pomdp.oracles import _backup, _state_action_probs, as_policy_table

__all__ = [
    "RegretTable",
    "CounterfactualTables",
    "counterfactual_values",
    "cfr_update",
    "regret_matching",
    "immediate_cf_regret",
    "cfr_solve",
    "CFRResult",
    "CFRSolver",
    "VARIANTS",
]

VARIANTS = ("cfr", "cfrplus")


@dataclass
class RegretTable:
    values: np.ndarray
    variant: str = "cfrplus"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        self.values = np.asarray(self.values, dtype=float)

    @classmethod
    def zeros(cls, n_obs: int, n_actions: int, variant: str = "cfrplus"):
        return cls(np.zeros((n_obs, n_actions)), variant)


@dataclass
class CounterfactualTables:
    """Forced-action values ``q[o, a]``, their policy average ``v[o]``, and reach.

    ``reach[o]`` is the expected number of visits to ``o`` per episode; rows
    with ``reached[o] == False`` hold zeros.
    """

    q: np.ndarray
    v: np.ndarray
    reach: np.ndarray
    J: float = float("nan")
    reached: np.ndarray = field(init=False)

    def __post_init__(self):
        self.reached = self.reach > 0.0


def _occupancy(model: EnvModel, pi: np.ndarray) -> np.ndarray:
    """``d[h, s]``: probability of acting in state ``s`` at step ``h``."""
    H = model.horizon
    S = model.n_states
    d = np.zeros((H, S))
    d[0] = model.initial_dist
    T = model.kernel_T
    acting = ~model.terminal
    for h in range(1, H):
        flow = (d[h - 1][:, None] * pi).ravel()
        d[h] = (T @ flow) * acting
    return d


def counterfactual_values(
    model: EnvModel, policy, gamma: float | None = None, chunk: int = 256
) -> CounterfactualTables:
    """Exact stationary forced-action values for every (observation, action).

    For each pair the agent plays ``a`` whenever it observes ``o`` and follows
    ``policy`` elsewhere; the value is averaged over the hidden states and
    steps at which ``policy`` itself reaches ``o``, weighted by that
    occupancy.
    """
    if model.horizon is None:
        raise ValueError("counterfactual values need a finite horizon")
    gamma = model.discount if gamma is None else gamma
    table = as_policy_table(policy, model)
    n_obs, A = model.n_obs, model.n_actions
    pi = _state_action_probs(model, table[None])[0]
    d = _occupancy(model, pi)
    obs_onehot = np.zeros((model.n_states, n_obs))
    obs_onehot[np.arange(model.n_states), model.obs_map] = 1.0
    obs_onehot[model.terminal] = 0.0
    reach = d.sum(axis=0) @ obs_onehot

    acting = np.flatnonzero(reach > 0.0)
    pairs = [(o, a) for o in acting for a in range(A)]
    q = np.zeros((n_obs, A))
    J = float("nan")
    # the last batch row is the unforced policy, giving J for free
    jobs = [pairs[i : i + chunk] for i in range(0, len(pairs), chunk)] or [[]]
    for j, job in enumerate(jobs):
        with_base = j == len(jobs) - 1
        tables = np.repeat(table[None], len(job) + with_base, axis=0)
        o_idx = np.array([o for o, _ in job], dtype=int)
        a_idx = np.array([a for _, a in job], dtype=int)
        p_idx = np.arange(len(job))
        tables[p_idx, o_idx, :] = 0.0
        tables[p_idx, o_idx, a_idx] = 1.0
        pis = _state_action_probs(model, tables)
        member = obs_onehot[:, o_idx].T  # (P, S)
        num = np.zeros(len(job))
        V = np.zeros((len(tables), model.n_states))
        for h in range(model.horizon - 1, -1, -1):
            Q = _backup(model, V, gamma)
            V = (pis * Q).sum(axis=2)
            if job:
                forced = Q[p_idx, :, a_idx]  # (P, S)
                num += np.einsum("ps,ps->p", member[: len(job)] * d[h], forced[: len(job)])
        if job:
            q[o_idx, a_idx] = num / reach[o_idx]
        if with_base:
            J = float(model.initial_dist @ V[-1])
    v = np.einsum("oa,oa->o", table, q)
    v[reach <= 0.0] = 0.0
    return CounterfactualTables(q=q, v=v, reach=reach, J=J)


def cfr_update(table: RegretTable, cf: CounterfactualTables) -> RegretTable:
    """One regret recursion step; unreached observations keep their values."""
    if table.values.shape != cf.q.shape:
        raise ValueError("regret table and counterfactual tables differ in shape")
    prev = table.values
    carry = np.maximum(prev, 0.0) if table.variant == "cfrplus" else prev
    new = carry + cf.q - cf.v[:, None]
    new = np.where(cf.reached[:, None], new, prev)
    return RegretTable(new, table.variant)


def immediate_cf_regret(table: RegretTable) -> np.ndarray:
    return table.values.max(axis=1)


@dataclass
class CFRResult:
    """Solver output.

    ``policies[t]`` is the policy played at iteration ``t + 1`` and
    ``policies[-1]`` the final iterate after ``T`` updates.
    """

    policies: np.ndarray
    average_policy: np.ndarray
    regret: RegretTable
    J: np.ndarray
    max_immediate_regret: np.ndarray

    @property
    def final_policy(self) -> np.ndarray:
        return self.policies[-1]

    def trace_rows(self):
        for t, (j, r) in enumerate(zip(self.J, self.max_immediate_regret), start=1):
            yield {"iteration": t, "J": j, "max_immediate_regret": r, "avg_regret": r / t}


def cfr_solve(
    model: EnvModel,
    iterations: int,
    variant: str = "cfrplus",
    gamma: float | None = None,
    initial_regret: np.ndarray | None = None,
) -> CFRResult:
    """Iterate counterfactual values, regret update and regret matching."""
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    n_obs, A = model.n_obs, model.n_actions
    regret = RegretTable(
        np.zeros((n_obs, A)) if initial_regret is None else np.array(initial_regret, dtype=float),
        variant,
    )
    policy = regret_matching(regret.values)
    policies = np.empty((iterations + 1, n_obs, A))
    policies[0] = policy
    J = np.empty(iterations)
    max_imm = np.empty(iterations)
    avg_num = np.zeros((n_obs, A))
    avg_den = np.zeros(n_obs)
    for t in range(iterations):
        cf = counterfactual_values(model, policy, gamma)
        J[t] = cf.J
        avg_num += cf.reach[:, None] * policy
        avg_den += cf.reach
        regret = cfr_update(regret, cf)
        acting = cf.reached
        max_imm[t] = immediate_cf_regret(regret)[acting].max() if acting.any() else 0.0
        policy = regret_matching(regret.values)
        policies[t + 1] = policy
    average = np.where(
        avg_den[:, None] > 0, avg_num / np.where(avg_den > 0, avg_den, 1.0)[:, None], 1.0 / A
    )
    return CFRResult(policies, average, regret, J, max_imm)


class CFRSolver(BaseLearner):
    """Estimator wrapper around :func:`cfr_solve`.

    Parameters
    ----------
    variant : {"cfr", "cfrplus"}
    iterations : int
    gamma : float or None
        Discount; defaults to the environment's.
    use_average : bool
        Deploy the occupancy-weighted average policy instead of the final iterate.
    """

    def __init__(self, variant="cfrplus", iterations=100, gamma=None, use_average=False):
        self.variant = variant
        self.iterations = iterations
        self.gamma = gamma
        self.use_average = use_average

    def fit(self, env, y=None):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        model = model_of(env)
        self.result_ = cfr_solve(model, int(self.iterations), self.variant, self.gamma)
        table = self.result_.average_policy if self.use_average else self.result_.final_policy
        self.policy_ = TabularPolicy(table)
        acting = model.acting_obs()
        ent = entropy(self.result_.policies[:-1, acting]).mean(axis=1)
        self.metrics_ = [
            {
                "iteration": row["iteration"],
                "env_steps": row["iteration"],
                "mean_return": row["J"],
                "episodes": 0,
                "max_abs_advantage": row["max_immediate_regret"],
                "mean_entropy": float(h),
                "exact_return": row["J"],
            }
            for row, h in zip(self.result_.trace_rows(), ent)
        ]
        return self

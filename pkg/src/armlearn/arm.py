"""Advantage-based regret minimization (ARM).

Each iteration collects a batch with the current policy, fits a state-value
function V (parameters ``theta``) and a cumulative clipped action value Q+
(parameters ``omega``) against n-step targets bootstrapped from a
Polyak-averaged copy of V (``phi``), then plays regret matching on
``A+ = Q+ - V``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .approx import AdamState, ParamSet, adam_step, make_approximator, polyak_update
from .base import BaseLearner, as_env
from .cfr import counterfactual_values
from .policies import FunctionPolicy, TabularPolicy, entropy, regret_matching
from .pomdp.oracles import exact_policy_eval
from .rollout import BatchArrays, TrajectoryBatch, collect_sharded, stream, window_sums
from .utils.validation import check_positive_int, check_scalar_range

__all__ = [
    "AdvantageEstimator",
    "ReplayMemory",
    "n_step_return",
    "compute_targets",
    "fit_iteration",
    "policy_from_advantage",
    "is_corrected_return",
    "offpolicy_targets",
    "importance_weights",
    "ARM",
    "arm_train",
]


@dataclass
class AdvantageEstimator:
    approx_v: object
    approx_q: object
    v_params: ParamSet
    q_params: ParamSet
    target_params: ParamSet
    prev_v_params: ParamSet | None = None
    prev_q_params: ParamSet | None = None
    gamma: float = 0.99
    n: int = 5
    tau: float = 0.01

    @classmethod
    def create(cls, kind, n_inputs, n_actions, rng, gamma=0.99, n=5, tau=0.01, n_hidden=64):
        approx_v = make_approximator(kind, n_inputs, 1, n_hidden)
        approx_q = make_approximator(kind, n_inputs, n_actions, n_hidden)
        v = approx_v.init_params(rng, "state_value")
        q = approx_q.init_params(rng, "cumulative_q")
        return cls(approx_v, approx_q, v, q, v.copy("target"), gamma=gamma, n=n, tau=tau)

    def value(self, x, params=None) -> np.ndarray:
        return self.approx_v.forward((params or self.v_params).values, x)[:, 0]

    def target_value(self, x) -> np.ndarray:
        return self.approx_v.forward(self.target_params.values, x)[:, 0]

    def q_plus(self, x, params=None) -> np.ndarray:
        return self.approx_q.forward((params or self.q_params).values, x)

    def advantage(self, x) -> np.ndarray:
        """``A+_t(o, .) = Q+(o, .; omega) - V(o; theta)``."""
        return self.q_plus(x) - self.value(x)[:, None]

    def previous_advantage(self, x, actions) -> np.ndarray:
        """``phi_k`` from the iteration ``t-1`` snapshots; zero before any fit."""
        if self.prev_v_params is None:
            return np.zeros(len(actions))
        q = self.q_plus(x, self.prev_q_params)[np.arange(len(actions)), actions]
        return q - self.value(x, self.prev_v_params)


def n_step_return(episode, k: int, n: int, gamma: float, target_value) -> float:
    """``g_k^n`` for one transition index ``k`` of an episode (list of transitions).

    ``target_value(obs)`` evaluates the target network ``V'`` on one observation.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    L = len(episode)
    g = 0.0
    for j in range(min(n, L - k)):
        g += gamma**j * episode[k + j].reward
    if k + n <= L and episode[k + n - 1].nonterminal:
        g += gamma**n * target_value(episode[k + n - 1].next_obs)
    return g


def _window(arrays: BatchArrays, n: int, gamma: float):
    """Precomputed pieces of ``v_k = g_k^n`` and ``q_k = r_k + gamma g_{k+1}^{n-1}``."""
    boot_idx, boot_mask = arrays.bootstrap_index(n)
    v_rewards = window_sums(arrays, n, gamma)
    q_rewards = arrays.rewards + gamma * window_sums(arrays, n - 1, gamma, start=1)
    return v_rewards, q_rewards, boot_idx, boot_mask


def compute_targets(batch, estimator: AdvantageEstimator, t: int):
    """Regression targets ``(v_k, q_k^+)`` for every transition of ``batch``.

    ``estimator`` must still hold the iteration ``t - 1`` parameters, which
    supply the clipped bonus ``max(0, phi_k)``; at ``t == 1`` the bonus is 0.
    """
    arrays = batch.arrays if isinstance(batch, TrajectoryBatch) else batch
    gamma, n = estimator.gamma, estimator.n
    v_rewards, q_rewards, boot_idx, boot_mask = _window(arrays, n, gamma)
    nxt = arrays.inputs(estimator.approx_v, nxt=True)
    boot = gamma**n * boot_mask * estimator.target_value(nxt[boot_idx])
    v = v_rewards + boot
    q = q_rewards + boot
    if t == 1:
        return v, q.copy()
    x = arrays.inputs(estimator.approx_q)
    phi = estimator.q_plus(x)[np.arange(len(arrays)), arrays.actions] - estimator.value(x)
    return v, np.maximum(0.0, phi) + q


def _begin_iteration(est: AdvantageEstimator, t: int):
    """Snapshot iteration ``t-1`` parameters and reset the target to ``theta_{t-1}``."""
    if t > 1:
        est.prev_v_params = est.v_params.copy()
        est.prev_q_params = est.q_params.copy()
    est.target_params = est.v_params.copy("target")


def _sgd_loop(est, arrays, v_rewards, q_rewards, bonus, boot_idx, boot_mask, L, minibatch, lr, rng):
    """Run ``L`` minibatch steps of the V update, Q+ update and target tracking."""
    x_v = arrays.inputs(est.approx_v)
    x_q = arrays.inputs(est.approx_q)
    nxt = arrays.inputs(est.approx_v, nxt=True)
    opt_v = AdamState.for_params(est.v_params, lr=lr)
    opt_q = AdamState.for_params(est.q_params, lr=lr)
    N = len(arrays)
    gn = est.gamma**est.n
    rows = np.arange(minibatch)
    grad_q = np.zeros((minibatch, est.approx_q.n_out))
    for _ in range(L):
        idx = rng.integers(0, N, size=minibatch)
        bi = boot_idx[idx]
        boot = gn * boot_mask[idx] * est.approx_v.forward(est.target_params.values, nxt[bi])[:, 0]
        v_target = v_rewards[idx] + boot
        q_target = bonus[idx] + q_rewards[idx] + boot

        xv = x_v[idx]
        pred_v, cache = est.approx_v.forward(est.v_params.values, xv, return_cache=True)
        g = (pred_v[:, 0] - v_target)[:, None] / minibatch
        adam_step(opt_v, est.v_params, est.approx_v.backward(est.v_params.values, xv, g, cache))

        xq = x_q[idx]
        acts = arrays.actions[idx]
        pred_q, cache = est.approx_q.forward(est.q_params.values, xq, return_cache=True)
        grad_q.fill(0.0)
        grad_q[rows, acts] = (pred_q[rows, acts] - q_target) / minibatch
        adam_step(opt_q, est.q_params, est.approx_q.backward(est.q_params.values, xq, grad_q, cache))

        polyak_update(est.target_params, est.v_params, est.tau)


def fit_iteration(batch, estimator, t, gradient_steps, minibatch_size, learning_rate, rng):
    """Fit ``theta_t`` and ``omega_t`` on one on-policy batch (warm-started)."""
    check_positive_int(gradient_steps, "gradient_steps")
    arrays = batch.arrays if isinstance(batch, TrajectoryBatch) else batch
    _begin_iteration(estimator, t)
    v_rewards, q_rewards, boot_idx, boot_mask = _window(arrays, estimator.n, estimator.gamma)
    x = arrays.inputs(estimator.approx_q)
    phi = estimator.previous_advantage(x, arrays.actions) if t > 1 else np.zeros(len(arrays))
    _sgd_loop(
        estimator, arrays, v_rewards, q_rewards, np.maximum(0.0, phi),
        boot_idx, boot_mask, gradient_steps, minibatch_size, learning_rate, rng,
    )
    return estimator


def policy_from_advantage(estimator: AdvantageEstimator, n_ids: int | None = None):
    """Regret matching on ``A+``; tables are materialized, other kinds snapshot parameters."""
    if estimator.approx_q.uses_ids:
        ids = np.arange(estimator.approx_q.shape[0] if n_ids is None else n_ids)
        return TabularPolicy(regret_matching(estimator.advantage(ids)))
    approx_v, approx_q = estimator.approx_v, estimator.approx_q
    wv = estimator.v_params.values.copy()
    wq = estimator.q_params.values.copy()

    def probs(ids, feats):
        adv = approx_q.forward(wq, feats) - approx_v.forward(wv, feats)
        return regret_matching(adv)

    return FunctionPolicy(probs, approx_q.n_out)


def importance_weights(pi_probs, mu_probs, c: float) -> np.ndarray:
    """Truncated ratios ``min(c, pi / mu)``."""
    mu = np.asarray(mu_probs, dtype=float)
    if np.any(mu <= 0.0):
        raise ValueError("behavior probability of a logged action is zero")
    return np.minimum(c, np.asarray(pi_probs, dtype=float) / mu)


def is_corrected_return(episode, k, n, gamma, behavior, current, c, target_value) -> float:
    """Importance-corrected ``g_k^n(mu || pi)`` for one transition.

    ``behavior(tr)`` and ``current(tr)`` give the probability of the logged
    action under the behavior and current policies; the bootstrap term is
    not reweighted.
    """
    L = len(episode)
    g, prod = 0.0, 1.0
    for j in range(min(n, L - k)):
        tr = episode[k + j]
        prod *= float(importance_weights(current(tr), behavior(tr), c))
        g += gamma**j * prod * tr.reward
    if k + n <= L and episode[k + n - 1].nonterminal:
        g += gamma**n * target_value(episode[k + n - 1].next_obs)
    return g


def offpolicy_targets(arrays: BatchArrays, estimator, t: int, pi_probs, c: float):
    """Off-policy ``(v_k, q_k^+)`` for every row of ``arrays``.

    ``pi_probs`` holds the current policy's probability of each logged action.
    As in :func:`compute_targets`, ``estimator`` holds the iteration ``t - 1``
    parameters that supply the bonus.
    """
    w = importance_weights(pi_probs, arrays.behavior_prob, c)
    gamma, n = estimator.gamma, estimator.n
    boot_idx, boot_mask = arrays.bootstrap_index(n)
    nxt = arrays.inputs(estimator.approx_v, nxt=True)
    g = window_sums(arrays, n, gamma, weights=w)
    g = g + gamma**n * boot_mask * estimator.target_value(nxt[boot_idx])
    q = (1.0 - w) * arrays.rewards + g
    if t == 1:
        return g, q
    x = arrays.inputs(estimator.approx_q)
    phi = estimator.q_plus(x)[np.arange(len(arrays)), arrays.actions] - estimator.value(x)
    return g, np.maximum(0.0, phi) + q


def _fit_offpolicy(memory, estimator, t, policy, c, gradient_steps, minibatch_size, lr, rng):
    arrays = memory.arrays()
    _begin_iteration(estimator, t)
    pi = policy.probs(arrays.ids, arrays.features)[np.arange(len(arrays)), arrays.actions]
    w = importance_weights(pi, arrays.behavior_prob, c)
    gamma, n = estimator.gamma, estimator.n
    boot_idx, boot_mask = arrays.bootstrap_index(n)
    g_rewards = window_sums(arrays, n, gamma, weights=w)
    q_rewards = (1.0 - w) * arrays.rewards + g_rewards
    x = arrays.inputs(estimator.approx_q)
    phi = estimator.previous_advantage(x, arrays.actions) if t > 1 else np.zeros(len(arrays))
    _sgd_loop(
        estimator, arrays, g_rewards, q_rewards, np.maximum(0.0, phi),
        boot_idx, boot_mask, gradient_steps, minibatch_size, lr, rng,
    )


class ReplayMemory:
    """Most recent batches whose step total stays within ``capacity``."""

    def __init__(self, capacity: int):
        self.capacity = check_positive_int(capacity, "replay_capacity")
        self.batches: deque[TrajectoryBatch] = deque()

    @property
    def total_steps(self) -> int:
        return sum(b.total_steps for b in self.batches)

    def add(self, batch: TrajectoryBatch) -> None:
        if batch.total_steps > self.capacity:
            raise ValueError(
                f"batch of {batch.total_steps} steps exceeds replay capacity {self.capacity}"
            )
        self.batches.append(batch)
        while self.total_steps > self.capacity:
            self.batches.popleft()

    def arrays(self) -> BatchArrays:
        return BatchArrays.concat([b.arrays for b in self.batches])

    def __len__(self) -> int:
        return len(self.batches)


_DEFAULT_LR = {"table": 1e-3, "linear": 1e-3, "mlp": 1e-4}


class ARM(BaseLearner):
    """Batch ARM learner.

    Parameters
    ----------
    approximator : {"table", "linear", "mlp"}
    iterations : int
        Number of sampling iterations.
    batch_size : int
        Environment steps per iteration (whole episodes, so batches may run over).
    gradient_steps : int or None
        Minibatch steps per iteration; defaults to ``batch_size // 4``.
    minibatch_size : int
    gamma : float or None
        Discount; defaults to the environment's.
    n_steps : int
        Return horizon ``n``.
    tau : float
        Polyak rate of the target value function.
    learning_rate : float or None
        Adam step size; 1e-3 for table/linear and 1e-4 for mlp when None.
    hidden_units : int
    off_policy : bool
        Fit on a replay memory of past batches with truncated importance weights.
    clip : float
        Importance-weight truncation ``c``.
    replay_capacity : int or None
        Memory size in steps; defaults to four maximal batches.
    exact_targets : bool
        Replace sampled regression by exact counterfactual values (tabular,
        memoryless only). No environment steps are taken.
    workers : int
        Number of independent collection streams per batch.
    record_exact : bool
        Also record the exact value of each iteration's policy when the
        environment is memoryless.
    random_state : int
    """

    def __init__(
        self,
        approximator="table",
        iterations=100,
        batch_size=1024,
        gradient_steps=None,
        minibatch_size=32,
        gamma=None,
        n_steps=5,
        tau=0.01,
        learning_rate=None,
        hidden_units=64,
        off_policy=False,
        clip=1.0,
        replay_capacity=None,
        exact_targets=False,
        workers=1,
        record_exact=True,
        random_state=0,
    ):
        self.approximator = approximator
        self.iterations = iterations
        self.batch_size = batch_size
        self.gradient_steps = gradient_steps
        self.minibatch_size = minibatch_size
        self.gamma = gamma
        self.n_steps = n_steps
        self.tau = tau
        self.learning_rate = learning_rate
        self.hidden_units = hidden_units
        self.off_policy = off_policy
        self.clip = clip
        self.replay_capacity = replay_capacity
        self.exact_targets = exact_targets
        self.workers = workers
        self.record_exact = record_exact
        self.random_state = random_state

    def _validate(self, env):
        check_positive_int(self.iterations, "iterations")
        check_positive_int(self.batch_size, "batch_size")
        check_positive_int(self.minibatch_size, "minibatch_size")
        check_positive_int(self.n_steps, "n_steps")
        check_positive_int(self.workers, "workers")
        check_scalar_range(self.tau, "tau", 0.0, 1.0)
        check_scalar_range(self.clip, "clip", 0.0)
        gamma = env.model.discount if self.gamma is None else self.gamma
        check_scalar_range(gamma, "gamma", 0.0, 1.0, low_open=True)
        if self.approximator not in _DEFAULT_LR:
            raise ValueError(f"approximator must be one of {tuple(_DEFAULT_LR)}")
        steps = self.gradient_steps if self.gradient_steps is not None else max(1, self.batch_size // 4)
        check_positive_int(steps, "gradient_steps")
        lr = self.learning_rate if self.learning_rate is not None else _DEFAULT_LR[self.approximator]
        check_scalar_range(lr, "learning_rate", 0.0, low_open=True)
        return gamma, steps, lr

    def fit(self, env, y=None):
        env = as_env(env)
        gamma, grad_steps, lr = self._validate(env)
        memoryless = env.n_obs == env.model.n_obs
        seed = int(self.random_state)
        n_inputs = env.n_obs if self.approximator == "table" else env.n_features
        self.estimator_ = AdvantageEstimator.create(
            self.approximator, n_inputs, env.n_actions, stream(seed, 0),
            gamma=gamma, n=int(self.n_steps), tau=float(self.tau), n_hidden=int(self.hidden_units),
        )
        if self.exact_targets:
            return self._fit_exact(env, gamma)

        policy = _uniform(env)
        capacity = self.replay_capacity or 4 * (self.batch_size + env.horizon - 1)
        memory = ReplayMemory(capacity) if self.off_policy else None
        self.metrics_ = []
        self.policy_tables_ = [] if self.approximator == "table" else None
        steps = 0
        for t in range(1, int(self.iterations) + 1):
            rngs = [stream(seed, 1, t, w) for w in range(int(self.workers))]
            batch = collect_sharded(env, policy, self.batch_size, rngs, policy_id=t)
            steps += batch.total_steps
            row = self._batch_row(t, steps, batch, policy, gamma, env, memoryless)
            if memory is not None:
                memory.add(batch)
                _fit_offpolicy(
                    memory, self.estimator_, t, policy, float(self.clip),
                    grad_steps, self.minibatch_size, lr, stream(seed, 2, t),
                )
            else:
                fit_iteration(batch, self.estimator_, t, grad_steps, self.minibatch_size, lr, stream(seed, 2, t))
            policy = policy_from_advantage(self.estimator_)
            arrays = batch.arrays
            row["max_abs_advantage"] = float(
                np.abs(self.estimator_.advantage(arrays.inputs(self.estimator_.approx_q))).max()
            )
            self.metrics_.append(row)
            if self.policy_tables_ is not None:
                self.policy_tables_.append(policy.table.copy())
        self.policy_ = policy
        return self

    def _batch_row(self, t, steps, batch, policy, gamma, env, memoryless):
        arrays = batch.arrays
        ids, first = np.unique(arrays.ids, return_index=True)
        ent = entropy(policy.probs(ids, arrays.features[first]))
        exact = float("nan")
        if self.record_exact and memoryless:
            exact = exact_policy_eval(env.model, policy.table_for(env), gamma)[1]
        return {
            "iteration": t,
            "env_steps": steps,
            "mean_return": float(batch.episode_returns(gamma).mean()),
            "episodes": len(batch.episodes),
            "max_abs_advantage": float("nan"),
            "mean_entropy": float(ent.mean()),
            "exact_return": exact,
        }

    def _fit_exact(self, env, gamma):
        """Tabular ARM with exact counterfactual targets in place of regression."""
        if self.approximator != "table" or env.n_obs != env.model.n_obs:
            raise ValueError("exact_targets requires a table approximator on a memoryless env")
        model = env.model
        est = self.estimator_
        n_obs, A = model.n_obs, model.n_actions
        V = est.v_params.values.reshape(n_obs, 1)
        Q = est.q_params.values.reshape(n_obs, A)
        policy = _uniform(env)
        self.metrics_ = []
        self.policy_tables_ = []
        for t in range(1, int(self.iterations) + 1):
            cf = counterfactual_values(model, policy.table, gamma)
            reached = cf.reached
            bonus = np.maximum(0.0, Q - V) if t > 1 else np.zeros_like(Q)
            Q[reached] = bonus[reached] + cf.q[reached]
            V[reached, 0] = cf.v[reached]
            acting = model.acting_obs()
            self.metrics_.append(
                {
                    "iteration": t,
                    "env_steps": t,
                    "mean_return": cf.J,
                    "episodes": 0,
                    "max_abs_advantage": float(np.abs(Q - V)[acting].max()),
                    "mean_entropy": float(entropy(policy.table[acting]).mean()),
                    "exact_return": cf.J,
                }
            )
            policy = TabularPolicy(regret_matching(Q - V))
            self.policy_tables_.append(policy.table.copy())
        self.policy_ = policy
        return self


def _uniform(env):
    A = env.n_actions
    if env.n_obs <= 5_000_000:
        return TabularPolicy(np.full((env.n_obs, A), 1.0 / A))
    return FunctionPolicy(lambda ids, feats: np.full((len(ids), A), 1.0 / A), A)


def arm_train(env, config: dict | None = None):
    """Train ARM with keyword hyperparameters; returns ``(policy, metrics)``."""
    learner = ARM(**(config or {})).fit(env)
    return learner.policy_, learner.metrics_

"""Comparison learners: n-step double Q-learning and batch actor-critic."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .approx import AdamState, ParamSet, adam_step, make_approximator
from .base import BaseLearner, as_env
from .policies import FunctionPolicy, TabularPolicy, entropy, epsilon_greedy, softmax
from .pomdp.oracles import exact_policy_eval
from .rollout import collect_sharded, stream, window_sums
from .utils.validation import check_positive_int, check_scalar_range

__all__ = [
    "double_q_targets",
    "epsilon_schedule",
    "NStepReplay",
    "QLearnerState",
    "DoubleQLearning",
    "ActorCriticState",
    "actor_critic_gradients",
    "ActorCritic",
    "q_learning_train",
    "actor_critic_train",
]

_DEFAULT_LR = {"table": 1e-2, "linear": 1e-3, "mlp": 1e-4}


def double_q_targets(returns, boot_discount, q_online_next, q_target_next) -> np.ndarray:
    """``R + gamma^m Q_target(o', argmax_a Q_online(o', a))``.

    ``boot_discount`` already folds in ``gamma^m`` and the terminal mask.
    """
    best = np.argmax(q_online_next, axis=1)
    return returns + boot_discount * q_target_next[np.arange(len(best)), best]


def epsilon_schedule(step: int, total: int, start=1.0, final=0.01, fraction=0.2) -> float:
    """Linear anneal from ``start`` to ``final`` over ``fraction * total`` steps."""
    span = max(1.0, fraction * total)
    return final + (start - final) * max(0.0, 1.0 - step / span)


class NStepReplay:
    """Fixed-capacity ring of n-step transitions; oldest entries are overwritten."""

    def __init__(self, capacity: int, n_features: int):
        self.capacity = check_positive_int(capacity, "replay_capacity")
        self.ids = np.zeros(capacity, dtype=np.int64)
        self.next_ids = np.zeros(capacity, dtype=np.int64)
        self.features = np.zeros((capacity, n_features))
        self.next_features = np.zeros((capacity, n_features))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.returns = np.zeros(capacity)
        self.boot_discount = np.zeros(capacity)
        self.size = 0
        self._next = 0

    def add(self, obs, action, ret, next_obs, boot_discount):
        i = self._next
        self.ids[i], self.features[i] = obs.id, obs.features
        self.next_ids[i], self.next_features[i] = next_obs.id, next_obs.features
        self.actions[i], self.returns[i], self.boot_discount[i] = action, ret, boot_discount
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, rng, k):
        return rng.integers(0, self.size, size=k)

    def __len__(self):
        return self.size


@dataclass
class QLearnerState:
    approx: object
    online: ParamSet
    target: ParamSet
    optimizer: AdamState
    replay: NStepReplay
    n: int
    gamma: float
    target_update: int

    def inputs(self, ids, features):
        return ids if self.approx.uses_ids else features

    def q(self, x, params=None):
        return self.approx.forward((params or self.online).values, x)


def _push_n_step(state: QLearnerState, pending: list, final: bool):
    """Emit n-step transitions from the front of ``pending``.

    ``pending`` holds ``(obs, action, reward, next_obs, nonterminal)``. Without
    ``final`` only full windows are emitted; at episode end all remaining are.
    """
    n, gamma = state.n, state.gamma
    while pending and (final or len(pending) >= n):
        m = min(n, len(pending))
        ret = sum(gamma**j * pending[j][2] for j in range(m))
        last = pending[m - 1]
        state.replay.add(pending[0][0], pending[0][1], ret, last[3], gamma**m * last[4])
        pending.pop(0)


def _q_update(state: QLearnerState, rng, minibatch: int):
    r = state.replay
    idx = r.sample(rng, minibatch)
    x = state.inputs(r.ids[idx], r.features[idx])
    xn = state.inputs(r.next_ids[idx], r.next_features[idx])
    y = double_q_targets(r.returns[idx], r.boot_discount[idx], state.q(xn), state.q(xn, state.target))
    pred, cache = state.approx.forward(state.online.values, x, return_cache=True)
    rows = np.arange(minibatch)
    acts = r.actions[idx]
    grad = np.zeros_like(pred)
    grad[rows, acts] = (pred[rows, acts] - y) / minibatch
    adam_step(state.optimizer, state.online, state.approx.backward(state.online.values, x, grad, cache))


class _Learner(BaseLearner):
    def _env_setup(self, env):
        env = as_env(env)
        gamma = env.model.discount if self.gamma is None else self.gamma
        check_scalar_range(gamma, "gamma", 0.0, 1.0, low_open=True)
        if self.approximator not in _DEFAULT_LR:
            raise ValueError(f"approximator must be one of {tuple(_DEFAULT_LR)}")
        lr = self.learning_rate if self.learning_rate is not None else _DEFAULT_LR[self.approximator]
        check_scalar_range(lr, "learning_rate", 0.0, low_open=True)
        n_inputs = env.n_obs if self.approximator == "table" else env.n_features
        return env, gamma, lr, n_inputs

    def _exact(self, env, policy, gamma):
        if not self.record_exact or env.n_obs != env.model.n_obs:
            return float("nan")
        return exact_policy_eval(env.model, policy.table_for(env), gamma)[1]


class DoubleQLearning(_Learner):
    """n-step double Q-learning with epsilon-greedy exploration and replay.

    Parameters
    ----------
    approximator : {"table", "linear", "mlp"}
    total_steps : int
        Environment step budget.
    batch_size : int
        Environment steps between metrics rows.
    n_steps : int
    gamma : float or None
    learning_rate : float or None
        Adam step size; 1e-2 table, 1e-3 linear, 1e-4 mlp when None.
    minibatch_size : int
    replay_capacity : int
    target_update : int
        Environment steps between hard target copies.
    train_every : int
        Environment steps per gradient step.
    epsilon_start, epsilon_final, exploration_fraction : float
        Linear exploration schedule over the first ``exploration_fraction`` of the budget.
    hidden_units : int
    record_exact : bool
    random_state : int
    """

    def __init__(
        self,
        approximator="table",
        total_steps=100_000,
        batch_size=1024,
        n_steps=1,
        gamma=None,
        learning_rate=None,
        minibatch_size=32,
        replay_capacity=25_000,
        target_update=1000,
        train_every=4,
        epsilon_start=1.0,
        epsilon_final=0.01,
        exploration_fraction=0.2,
        hidden_units=64,
        record_exact=True,
        random_state=0,
    ):
        self.approximator = approximator
        self.total_steps = total_steps
        self.batch_size = batch_size
        self.n_steps = n_steps
        self.gamma = gamma
        self.learning_rate = learning_rate
        self.minibatch_size = minibatch_size
        self.replay_capacity = replay_capacity
        self.target_update = target_update
        self.train_every = train_every
        self.epsilon_start = epsilon_start
        self.epsilon_final = epsilon_final
        self.exploration_fraction = exploration_fraction
        self.hidden_units = hidden_units
        self.record_exact = record_exact
        self.random_state = random_state

    def _policy(self, state, eps, env):
        if state.approx.uses_ids:
            return TabularPolicy(epsilon_greedy(state.q(np.arange(env.n_obs)), eps))
        approx, w = state.approx, state.online.values.copy()
        return FunctionPolicy(lambda ids, f: epsilon_greedy(approx.forward(w, f), eps), env.n_actions)

    def fit(self, env, y=None):
        env, gamma, lr, n_inputs = self._env_setup(env)
        for name in ("total_steps", "batch_size", "n_steps", "minibatch_size", "target_update", "train_every"):
            check_positive_int(getattr(self, name), name)
        for name in ("epsilon_start", "epsilon_final", "exploration_fraction"):
            check_scalar_range(getattr(self, name), name, 0.0, 1.0)
        seed = int(self.random_state)
        approx = make_approximator(self.approximator, n_inputs, env.n_actions, int(self.hidden_units))
        online = approx.init_params(stream(seed, 0), "q_online")
        state = QLearnerState(
            approx, online, online.copy("q_target"), AdamState.for_params(online, lr=lr),
            NStepReplay(int(self.replay_capacity), env.n_features),
            int(self.n_steps), gamma, int(self.target_update),
        )
        self.state_ = state
        act_rng, fit_rng = stream(seed, 1), stream(seed, 2)
        total = int(self.total_steps)
        eps_of = lambda k: epsilon_schedule(
            k, total, self.epsilon_start, self.epsilon_final, self.exploration_fraction
        )

        self.metrics_ = []
        returns, obs_seen = [], {}
        pending, ep_ret, ep_k = [], 0.0, 0
        obs = env.reset(act_rng)
        for k in range(1, total + 1):
            eps = eps_of(k - 1)
            x = state.inputs(np.array([obs.id]), obs.features[None, :])
            if act_rng.random() < eps:
                a = int(act_rng.integers(env.n_actions))
            else:
                a = int(np.argmax(state.q(x)[0]))
            obs_seen[obs.id] = obs.features
            next_obs, r, done = env.step(a, act_rng)
            ep_ret += gamma**ep_k * r
            ep_k += 1
            pending.append((obs, a, r, next_obs, 0.0 if done else 1.0))
            _push_n_step(state, pending, final=done)
            if done:
                returns.append(ep_ret)
                ep_ret, ep_k = 0.0, 0
                obs = env.reset(act_rng)
            else:
                obs = next_obs
            if k % self.train_every == 0 and len(state.replay) >= self.minibatch_size:
                _q_update(state, fit_rng, int(self.minibatch_size))
            if k % state.target_update == 0:
                state.target = state.online.copy("q_target")
            if k % self.batch_size == 0 or k == total:
                self.metrics_.append(self._row(state, env, gamma, k, eps_of(k), returns, obs_seen))
                returns, obs_seen = [], {}
        self.policy_ = self._policy(state, float(self.epsilon_final), env)
        return self

    def _row(self, state, env, gamma, k, eps, returns, obs_seen):
        policy = self._policy(state, eps, env)
        ids = np.array(sorted(obs_seen))
        feats = np.stack([obs_seen[i] for i in ids])
        q = state.q(state.inputs(ids, feats))
        pi = epsilon_greedy(q, eps)
        adv = q - (pi * q).sum(axis=1, keepdims=True)
        return {
            "iteration": len(self.metrics_) + 1,
            "env_steps": k,
            "mean_return": float(np.mean(returns)) if returns else float("nan"),
            "episodes": len(returns),
            "max_abs_advantage": float(np.abs(adv).max()),
            "mean_entropy": float(entropy(pi).mean()),
            "exact_return": self._exact(env, policy, gamma),
        }


@dataclass
class ActorCriticState:
    actor_approx: object
    critic_approx: object
    policy: ParamSet
    critic: ParamSet
    actor_opt: AdamState
    critic_opt: AdamState
    beta: float
    n: int
    gamma: float

    def logits(self, x):
        return self.actor_approx.forward(self.policy.values, x)

    def value(self, x):
        return self.critic_approx.forward(self.critic.values, x)[:, 0]


def actor_critic_gradients(logits, actions, advantages, beta):
    """Gradient on the logits of ``-mean(A log pi(a)) - beta * mean(H(pi))``."""
    pi = softmax(logits)
    m = len(actions)
    g = pi.copy()
    g[np.arange(m), actions] -= 1.0
    g *= advantages[:, None]
    logp = np.log(np.clip(pi, 1e-300, None))
    h = -(pi * logp).sum(axis=1, keepdims=True)
    g += beta * pi * (logp + h)
    return g / m


def _clip_norm(grads, max_norm):
    norm = np.sqrt(sum(float(g @ g) for g in grads))
    if max_norm is not None and norm > max_norm:
        return [g * (max_norm / norm) for g in grads]
    return grads


class ActorCritic(_Learner):
    """Batch advantage actor-critic with an entropy bonus.

    Parameters
    ----------
    approximator : {"table", "linear", "mlp"}
    iterations : int
    batch_size : int
        Environment steps per iteration.
    minibatch_size : int
        Rows per gradient step; each iteration makes ``epochs`` passes.
    epochs : int
    n_steps : int
    gamma : float or None
    learning_rate : float or None
    entropy_coef : float
        Entropy bonus ``beta``.
    max_grad_norm : float or None
        Joint gradient-norm clip over actor and critic.
    hidden_units : int
    workers : int
    record_exact : bool
    random_state : int
    """

    def __init__(
        self,
        approximator="table",
        iterations=100,
        batch_size=1024,
        minibatch_size=128,
        epochs=1,
        n_steps=40,
        gamma=None,
        learning_rate=None,
        entropy_coef=0.01,
        max_grad_norm=0.5,
        hidden_units=64,
        workers=1,
        record_exact=True,
        random_state=0,
    ):
        self.approximator = approximator
        self.iterations = iterations
        self.batch_size = batch_size
        self.minibatch_size = minibatch_size
        self.epochs = epochs
        self.n_steps = n_steps
        self.gamma = gamma
        self.learning_rate = learning_rate
        self.entropy_coef = entropy_coef
        self.max_grad_norm = max_grad_norm
        self.hidden_units = hidden_units
        self.workers = workers
        self.record_exact = record_exact
        self.random_state = random_state

    def _policy(self, state, env):
        if state.actor_approx.uses_ids:
            return TabularPolicy(softmax(state.logits(np.arange(env.n_obs))))
        approx, w = state.actor_approx, state.policy.values.copy()
        return FunctionPolicy(lambda ids, f: softmax(approx.forward(w, f)), env.n_actions)

    def fit(self, env, y=None):
        env, gamma, lr, n_inputs = self._env_setup(env)
        for name in ("iterations", "batch_size", "minibatch_size", "epochs", "n_steps", "workers"):
            check_positive_int(getattr(self, name), name)
        check_scalar_range(self.entropy_coef, "entropy_coef", 0.0)
        if self.max_grad_norm is not None:
            check_scalar_range(self.max_grad_norm, "max_grad_norm", 0.0, low_open=True)
        seed = int(self.random_state)
        h = int(self.hidden_units)
        actor = make_approximator(self.approximator, n_inputs, env.n_actions, h)
        critic = make_approximator(self.approximator, n_inputs, 1, h)
        init = stream(seed, 0)
        p, c = actor.init_params(init, "policy"), critic.init_params(init, "critic")
        state = ActorCriticState(
            actor, critic, p, c, AdamState.for_params(p, lr=lr), AdamState.for_params(c, lr=lr),
            float(self.entropy_coef), int(self.n_steps), gamma,
        )
        self.state_ = state
        policy = self._policy(state, env)
        self.metrics_ = []
        steps = 0
        for t in range(1, int(self.iterations) + 1):
            rngs = [stream(seed, 1, t, w) for w in range(int(self.workers))]
            batch = collect_sharded(env, policy, self.batch_size, rngs, policy_id=t)
            steps += batch.total_steps
            arrays = batch.arrays
            ids, first = np.unique(arrays.ids, return_index=True)
            row = {
                "iteration": t,
                "env_steps": steps,
                "mean_return": float(batch.episode_returns(gamma).mean()),
                "episodes": len(batch.episodes),
                "max_abs_advantage": float("nan"),
                "mean_entropy": float(entropy(policy.probs(ids, arrays.features[first])).mean()),
                "exact_return": self._exact(env, policy, gamma),
            }
            adv = self._update(state, arrays, stream(seed, 2, t))
            row["max_abs_advantage"] = float(np.abs(adv).max())
            self.metrics_.append(row)
            policy = self._policy(state, env)
        self.policy_ = policy
        return self

    def _update(self, state, arrays, rng):
        x_a = arrays.inputs(state.actor_approx)
        x_c = arrays.inputs(state.critic_approx)
        nxt = arrays.inputs(state.critic_approx, nxt=True)
        boot_idx, boot_mask = arrays.bootstrap_index(state.n)
        returns = window_sums(arrays, state.n, state.gamma)
        returns = returns + state.gamma**state.n * boot_mask * state.value(nxt[boot_idx])
        adv = returns - state.value(x_c)
        N = len(arrays)
        mb = min(int(self.minibatch_size), N)
        for _ in range(int(self.epochs)):
            order = rng.permutation(N)
            for s in range(0, N - mb + 1, mb):
                idx = order[s : s + mb]
                logits, cache_a = state.actor_approx.forward(state.policy.values, x_a[idx], return_cache=True)
                g_logits = actor_critic_gradients(logits, arrays.actions[idx], adv[idx], state.beta)
                g_p = state.actor_approx.backward(state.policy.values, x_a[idx], g_logits, cache_a)
                v, cache_c = state.critic_approx.forward(state.critic.values, x_c[idx], return_cache=True)
                g_v = (v[:, 0] - returns[idx])[:, None] / mb
                g_c = state.critic_approx.backward(state.critic.values, x_c[idx], g_v, cache_c)
                g_p, g_c = _clip_norm([g_p, g_c], self.max_grad_norm)
                adam_step(state.actor_opt, state.policy, g_p)
                adam_step(state.critic_opt, state.critic, g_c)
        return adv


def q_learning_train(env, config: dict | None = None):
    learner = DoubleQLearning(**(config or {})).fit(env)
    return learner.policy_, learner.metrics_


def actor_critic_train(env, config: dict | None = None):
    learner = ActorCritic(**(config or {})).fit(env)
    return learner.policy_, learner.metrics_

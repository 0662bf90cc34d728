"""
Deep decentralized multi-agent actor-critic.

Each component has its own actor network mapping the shared input (all
marginal beliefs, deterioration rates and time) to a distribution over its
three actions; the joint policy is the product of the component policies. A
centralized critic estimates the value of the input. Training is off-policy
from a replay buffer, with truncated importance weights correcting for the
exploratory behavior policy.
"""

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from src.environment.episode import AgentView, EnvConfig, action_costs, reset, step
from src.environment.evaluation import CostReport, evaluate_policy
from src.inference.belief import SystemBelief, initial_belief_for, update_belief
from src.learning.nnet import (
    Mlp,
    MlpSpec,
    NetworkParameters,
    Optimizer,
    backward,
    softmax,
    softmax_log_prob_upstream,
)
from src.learning.replay import Batch, Experience, ReplayBuffer
from src.models.actions import N_ACTIONS, Action, Observation
from src.reliability.system import annual_risk, system_failure_prob
from src.utils.artifacts import load_container, save_container, write_csv
from src.utils.errors import (
    ConfigError,
    ImpossibleObservationError,
    NumericalError,
    TrainingDivergedError,
)
from src.utils.experiment_config import TrainingConfig

logger = logging.getLogger(__name__)

CHECKPOINT_KIND = "ddmac-policy"
CURVE_COLUMNS = ("episode", "mean_cost", "epsilon", "actor_lr")
UNIFORM_EXPLORATION = np.full(N_ACTIONS, 1.0 / N_ACTIONS)


# --- Input encoding ---


def input_dim(n_components: int, n_crack: int, n_rate: int, horizon: int) -> int:
    return n_components * (n_crack + n_rate) + horizon + 1


def encode_input(view: AgentView, n_rate: int, horizon: int) -> np.ndarray:
    """Marginal beliefs, one-hot deterioration rates and one-hot time, concatenated."""
    n = view.rate.size
    rate = np.zeros((n, n_rate))
    rate[np.arange(n), np.minimum(view.rate, n_rate - 1)] = 1.0
    time = np.zeros(horizon + 1)
    time[min(view.t, horizon)] = 1.0
    return np.concatenate([view.marginals.ravel(), rate.ravel(), time])


# --- Elementary terms ---


def joint_policy_prob(actor_outputs: np.ndarray, actions: np.ndarray) -> float:
    """Product over components of the probability each actor gave its action."""
    probs = np.asarray(actor_outputs, dtype=float)
    actions = np.asarray(actions, dtype=int)
    return float(np.prod(probs[np.arange(actions.size), actions]))


def importance_weight(pi_prob: float, mu_prob: float, c: float) -> float:
    """Truncated importance weight ``min(c, pi / mu)``."""
    if mu_prob <= 0:
        raise ValueError("behavior probability must be positive")
    return min(c, pi_prob / mu_prob)


def advantage(exp: Experience, critic: Mlp, gamma: float) -> float:
    """One-step TD residual; the bootstrap term is dropped at terminal states."""
    v_now = float(critic(exp.input_t)[0])
    v_next = 0.0 if exp.terminal else float(critic(exp.input_next)[0])
    return exp.reward + gamma * v_next - v_now


def exploration_rate(config: TrainingConfig, episode: int) -> float:
    """Linear decay over the first ``exploration_decay_episodes``, then constant."""
    frac = min(1.0, episode / config.exploration_decay_episodes)
    start, end = config.exploration_start, config.exploration_end
    return start + frac * (end - start)


def learning_rates(config: TrainingConfig, episode: int) -> tuple[float, float]:
    """Piecewise-constant (actor, critic) learning rates."""
    idx = 0 if episode < config.lr_anneal_episode else 1
    return config.actor_lr[idx], config.critic_lr[idx]


# --- Agent ---


@dataclass
class DdmacAgent:
    """Actor networks (one per component, or one shared trunk) plus the critic."""

    actors: list[Mlp]
    critic: Mlp
    n_components: int
    shared_trunk: bool = False

    @classmethod
    def create(
        cls,
        n_components: int,
        in_dim: int,
        actor_hidden: list[int],
        critic_hidden: list[int],
        seed: int,
        shared_trunk: bool = False,
    ) -> "DdmacAgent":
        seeds = np.random.SeedSequence(seed).spawn(n_components + 1)
        critic = Mlp(
            MlpSpec(in_dim, tuple(critic_hidden), 1, "linear"),
            seed=int(seeds[0].generate_state(1)[0]),
        )
        if shared_trunk:
            n_out = n_components * N_ACTIONS
            spec = MlpSpec(in_dim, tuple(actor_hidden), n_out, "linear")
            actors = [Mlp(spec, seed=int(seeds[1].generate_state(1)[0]))]
        else:
            spec = MlpSpec(in_dim, tuple(actor_hidden), N_ACTIONS, "softmax")
            actors = [
                Mlp(spec, seed=int(s.generate_state(1)[0])) for s in seeds[1:]
            ]
        return cls(
            actors=actors,
            critic=critic,
            n_components=n_components,
            shared_trunk=shared_trunk,
        )

    def policy_probs(self, inputs: np.ndarray) -> tuple[np.ndarray, list]:
        """Action probabilities ``[B][N][3]`` and the forward caches."""
        inputs = np.atleast_2d(inputs)
        if self.shared_trunk:
            logits, cache = self.actors[0].forward_cached(inputs)
            logits = logits.reshape(inputs.shape[0], self.n_components, N_ACTIONS)
            probs = softmax(logits)
            return probs, [cache]
        outputs = [actor.forward_cached(inputs) for actor in self.actors]
        probs = np.stack([out for out, _ in outputs], axis=1)
        return probs, [cache for _, cache in outputs]

    def values(self, inputs: np.ndarray) -> np.ndarray:
        out, _ = self.critic.forward_cached(np.atleast_2d(inputs))
        return out[:, 0]

    def snapshot(self) -> "DdmacAgent":
        return DdmacAgent(
            actors=[Mlp(a.spec, a.params.copy()) for a in self.actors],
            critic=Mlp(self.critic.spec, self.critic.params.copy()),
            n_components=self.n_components,
            shared_trunk=self.shared_trunk,
        )


@dataclass
class BatchTerms:
    advantages: np.ndarray  # [B]
    weights: np.ndarray  # truncated importance weights [B]
    scale: np.ndarray  # w * A * sample weight / B
    probs: np.ndarray  # [B][N][3]
    caches: list


def batch_terms(batch: Batch, agent: DdmacAgent, gamma: float, c: float) -> BatchTerms:
    """Advantages from the current critic; importance weights from the actors."""
    v_now = agent.values(batch.inputs)
    v_next = np.where(batch.terminal, 0.0, agent.values(batch.next_inputs))
    advantages = batch.rewards + gamma * v_next - v_now
    probs, caches = agent.policy_probs(batch.inputs)
    b_idx = np.arange(len(batch))[:, None]
    l_idx = np.arange(agent.n_components)[None, :]
    pi = np.prod(probs[b_idx, l_idx, batch.actions], axis=1)
    mu = np.prod(batch.behavior_probs, axis=1)
    if np.any(mu <= 0):
        raise ValueError("behavior probability must be positive")
    weights = np.minimum(c, pi / mu)
    scale = weights * advantages * batch.sample_weights / len(batch)
    if not np.all(np.isfinite(scale)):
        raise NumericalError("non-finite advantage or importance weight")
    return BatchTerms(advantages, weights, scale, probs, caches)


def actor_gradients(
    batch: Batch, agent: DdmacAgent, terms: BatchTerms
) -> list[NetworkParameters]:
    """Gradient of ``mean(w A sum_l log pi_l(a_l))`` for every actor network."""
    upstreams = []
    for l in range(agent.n_components):
        up = softmax_log_prob_upstream(terms.probs[:, l, :], batch.actions[:, l])
        upstreams.append(up * terms.scale[:, None])
    if agent.shared_trunk:
        joined = np.concatenate(upstreams, axis=1)
        return [backward(agent.actors[0].params, terms.caches[0], joined)]
    return [
        backward(actor.params, cache, up)
        for actor, cache, up in zip(agent.actors, terms.caches, upstreams)
    ]


def critic_gradient(
    batch: Batch, agent: DdmacAgent, terms: BatchTerms
) -> NetworkParameters:
    """Semi-gradient ``mean(w A grad V)``; the TD target is held constant."""
    _, cache = agent.critic.forward_cached(batch.inputs)
    return backward(agent.critic.params, cache, terms.scale[:, None])


def actor_surrogate(batch: Batch, agent: DdmacAgent, terms: BatchTerms) -> float:
    """The objective whose gradient ``actor_gradients`` returns, with w and A fixed."""
    probs, _ = agent.policy_probs(batch.inputs)
    b_idx = np.arange(len(batch))[:, None]
    l_idx = np.arange(agent.n_components)[None, :]
    log_pi = np.log(probs[b_idx, l_idx, batch.actions]).sum(axis=1)
    return float(np.sum(terms.scale * log_pi))


def critic_surrogate(batch: Batch, agent: DdmacAgent, terms: BatchTerms) -> float:
    return float(np.sum(terms.scale * agent.values(batch.inputs)))


def update_actors(
    batch: Batch,
    agent: DdmacAgent,
    lr: float,
    c: float,
    gamma: float,
    optimizers: list[Optimizer] | None = None,
    terms: BatchTerms | None = None,
) -> DdmacAgent:
    """One ascent step of every actor along the importance-weighted policy gradient."""
    if len(batch) == 0:
        raise ValueError("batch must not be empty")
    terms = terms or batch_terms(batch, agent, gamma, c)
    grads = actor_gradients(batch, agent, terms)
    optimizers = optimizers or [Optimizer() for _ in agent.actors]
    for actor, grad, opt in zip(agent.actors, grads, optimizers):
        actor.params = opt.step(actor.params, grad, lr)
    return agent


def update_critic(
    batch: Batch,
    agent: DdmacAgent,
    lr: float,
    c: float,
    gamma: float,
    optimizer: Optimizer | None = None,
    terms: BatchTerms | None = None,
) -> DdmacAgent:
    """One ascent step of the critic along ``w A grad V``."""
    if len(batch) == 0:
        raise ValueError("batch must not be empty")
    terms = terms or batch_terms(batch, agent, gamma, c)
    grad = critic_gradient(batch, agent, terms)
    agent.critic.params = (optimizer or Optimizer()).step(agent.critic.params, grad, lr)
    return agent


# --- Behavior policy ---


def behavior_sample(
    probs: np.ndarray, epsilon: float, exploration: np.ndarray, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """
    Every component independently explores with probability ``epsilon``
    (drawing from ``exploration``) and otherwise samples its actor. Returns
    the actions and the mixture probability ``epsilon r(a) + (1 - epsilon) pi(a)``
    of each taken action.
    """
    n = probs.shape[0]
    explore = rng.random(n) < epsilon
    u = rng.random(n)
    mixture_src = np.where(explore[:, None], exploration[None, :], probs)
    actions = (np.cumsum(mixture_src, axis=1) > u[:, None]).argmax(axis=1)
    mixture = epsilon * exploration[None, :] + (1.0 - epsilon) * probs
    mu = mixture[np.arange(n), actions]
    return actions, mu


# --- Checkpoints ---


@dataclass
class PolicyArtifact:
    agent: DdmacAgent
    env_hash: str
    n_crack: int
    n_rate: int
    horizon: int
    seed: int
    episodes: int

    def input_dim(self) -> int:
        return input_dim(
            self.agent.n_components, self.n_crack, self.n_rate, self.horizon
        )


def _spec_dict(spec: MlpSpec) -> dict:
    return {
        "input_dim": spec.input_dim,
        "hidden": list(spec.hidden),
        "output_dim": spec.output_dim,
        "output_activation": spec.output_activation,
    }


def save_checkpoint(path: str, artifact: PolicyArtifact) -> None:
    agent = artifact.agent
    arrays = agent.critic.params.to_dict("critic")
    for i, actor in enumerate(agent.actors):
        arrays.update(actor.params.to_dict(f"actor{i}"))
    header = {
        "env_hash": artifact.env_hash,
        "n_components": agent.n_components,
        "shared_trunk": agent.shared_trunk,
        "n_crack": artifact.n_crack,
        "n_rate": artifact.n_rate,
        "horizon": artifact.horizon,
        "seed": artifact.seed,
        "episodes": artifact.episodes,
        "actor_spec": _spec_dict(agent.actors[0].spec),
        "critic_spec": _spec_dict(agent.critic.spec),
    }
    save_container(path, CHECKPOINT_KIND, header, arrays)


def load_checkpoint(path: str, expected_env_hash: str | None = None) -> PolicyArtifact:
    header, arrays = load_container(path, CHECKPOINT_KIND)
    if expected_env_hash is not None and header["env_hash"] != expected_env_hash:
        raise ConfigError(
            f"checkpoint {path} was trained on environment {header['env_hash'][:12]}, "
            f"not {expected_env_hash[:12]}"
        )
    actor_spec = MlpSpec(**header["actor_spec"])
    critic_spec = MlpSpec(**header["critic_spec"])
    n_actors = 1 if header["shared_trunk"] else header["n_components"]
    agent = DdmacAgent(
        actors=[
            Mlp(actor_spec, NetworkParameters.from_dict(arrays, f"actor{i}"))
            for i in range(n_actors)
        ],
        critic=Mlp(critic_spec, NetworkParameters.from_dict(arrays, "critic")),
        n_components=header["n_components"],
        shared_trunk=header["shared_trunk"],
    )
    return PolicyArtifact(
        agent=agent,
        env_hash=header["env_hash"],
        n_crack=header["n_crack"],
        n_rate=header["n_rate"],
        horizon=header["horizon"],
        seed=header["seed"],
        episodes=header["episodes"],
    )


class DdmacPolicy:
    """Environment policy backed by trained actors; samples, or the mode if greedy."""

    def __init__(self, artifact: PolicyArtifact, greedy: bool = False):
        self.artifact = artifact
        self.greedy = greedy

    def __call__(self, view: AgentView, rng: np.random.Generator) -> np.ndarray:
        x = encode_input(view, self.artifact.n_rate, self.artifact.horizon)
        probs, _ = self.artifact.agent.policy_probs(x)
        probs = probs[0]
        if self.greedy:
            return probs.argmax(axis=1)
        u = rng.random(probs.shape[0])
        return (np.cumsum(probs, axis=1) > u[:, None]).argmax(axis=1)


# --- Training ---


@dataclass
class TrainResult:
    artifact: PolicyArtifact
    curves: list[tuple] = field(default_factory=list)
    evaluations: list[tuple[int, CostReport]] = field(default_factory=list)
    mean_importance_weight: float = 1.0


def _moving_average(costs: list[float], window: int) -> float:
    recent = costs[-window:]
    return math.fsum(recent) / len(recent)


def train(
    env: EnvConfig,
    config: TrainingConfig,
    seed: int,
    curves_path: str | None = None,
    threads: int = 1,
) -> TrainResult:
    """
    Runs ``config.episodes`` training episodes. After every environment step
    past the warm-up, one batch updates the actors and the critic. Raises
    ``TrainingDivergedError`` when the moving-average cost grows by
    ``divergence_factor`` over ``divergence_lag`` episodes.
    """
    model = env.bundle.model
    n = env.n_components
    horizon = env.horizon_years
    in_dim = input_dim(n, model.n_crack, model.n_rate, horizon)
    agent = DdmacAgent.create(
        n, in_dim, config.actor_hidden, config.critic_hidden, seed, config.shared_trunk
    )
    actor_opts = [
        Optimizer(config.optimizer, config.momentum, config.grad_clip)
        for _ in agent.actors
    ]
    critic_opt = Optimizer(config.optimizer, config.momentum, config.grad_clip)
    buffer = ReplayBuffer(
        in_dim,
        n,
        config.buffer_capacity,
        seed + 1,
        prioritized=config.prioritized_replay,
    )
    behavior_rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    priming = np.array(
        [
            config.priming_do_nothing_prob,
            (1.0 - config.priming_do_nothing_prob) / 2.0,
            (1.0 - config.priming_do_nothing_prob) / 2.0,
        ]
    )
    warmup = max(config.warmup_transitions, 1)

    costs: list[float] = []
    averages: list[float] = []
    curves: list[tuple] = []
    evaluations: list[tuple[int, CostReport]] = []
    weight_sum, weight_count = 0.0, 0

    for episode in range(config.episodes):
        epsilon = exploration_rate(config, episode)
        actor_lr, critic_lr = learning_rates(config, episode)
        if episode < config.priming_episodes:
            exploration = priming
        else:
            exploration = UNIFORM_EXPLORATION
        state = reset(env, np.random.SeedSequence([seed, 1, episode]))
        x = encode_input(state.view(), model.n_rate, horizon)
        episode_cost, discount = 0.0, 1.0
        while not state.done:
            probs, _ = agent.policy_probs(x)
            actions, mu = behavior_sample(probs[0], epsilon, exploration, behavior_rng)
            result = step(state, actions)
            x_next = encode_input(state.view(), model.n_rate, horizon)
            buffer.store(Experience(x, actions, mu, result.reward, x_next, state.done))
            episode_cost -= discount * result.reward
            discount *= env.discount

            if len(buffer) >= warmup:
                batch = buffer.sample(config.batch_size)
                terms = batch_terms(batch, agent, env.discount, config.is_clip)
                update_actors(
                    batch,
                    agent,
                    actor_lr,
                    config.is_clip,
                    env.discount,
                    actor_opts,
                    terms,
                )
                update_critic(
                    batch,
                    agent,
                    critic_lr,
                    config.is_clip,
                    env.discount,
                    critic_opt,
                    terms,
                )
                buffer.update_priorities(batch.indices, terms.advantages)
                weight_sum += float(terms.weights.sum())
                weight_count += len(batch)
            x = x_next

        costs.append(episode_cost)
        average = _moving_average(costs, config.cost_window)
        averages.append(average)
        curves.append((episode, average, epsilon, actor_lr))
        _check_divergence(averages, episode, config, epsilon)

        if config.eval_every and (episode + 1) % config.eval_every == 0:
            snapshot = PolicyArtifact(
                agent.snapshot(),
                env.config_hash,
                model.n_crack,
                model.n_rate,
                horizon,
                seed,
                episode + 1,
            )
            report = evaluate_policy(
                DdmacPolicy(snapshot),
                env,
                config.eval_episodes,
                seed=seed + episode + 1,
                threads=threads,
            )
            evaluations.append((episode + 1, report))
        if (episode + 1) % max(1, config.episodes // 20) == 0:
            logger.info(
                f"Episode {episode + 1}/{config.episodes}: moving-average cost "
                f"{average:.4g}, epsilon {epsilon:.3f}, actor lr {actor_lr:g}"
            )

    if curves_path:
        write_csv(curves_path, CURVE_COLUMNS, curves)
    artifact = PolicyArtifact(
        agent=agent,
        env_hash=env.config_hash,
        n_crack=model.n_crack,
        n_rate=model.n_rate,
        horizon=horizon,
        seed=seed,
        episodes=config.episodes,
    )
    mean_weight = weight_sum / weight_count if weight_count else 1.0
    logger.info(f"Training finished; mean importance weight {mean_weight:.3f}")
    return TrainResult(artifact, curves, evaluations, mean_weight)


def _check_divergence(
    averages: list[float], episode: int, config: TrainingConfig, epsilon: float
) -> None:
    lag = config.divergence_lag
    if episode < lag:
        return
    before, now = averages[episode - lag], averages[episode]
    if before > 0 and now > config.divergence_factor * before:
        raise TrainingDivergedError(
            f"moving-average cost rose from {before:.4g} to {now:.4g} "
            f"within {lag} episodes",
            diagnostics={
                "episode": episode,
                "cost_before": before,
                "cost_now": now,
                "epsilon": epsilon,
            },
        )


# --- Exact solution of tiny problems ---


@dataclass(frozen=True)
class SmallPomdpSolution:
    expected_cost: float
    first_action: tuple[int, ...]


def solve_small_pomdp(env: EnvConfig, max_components: int = 2) -> SmallPomdpSolution:
    """
    Optimal expected discounted cost by full enumeration of the belief tree,
    merging identical beliefs. Only practical for one or two components and
    short horizons; the risk term uses the belief, as the environment does.
    """
    n = env.n_components
    if n > max_components:
        raise ValueError(
            f"exact enumeration supports at most {max_components} components"
        )
    model = env.bundle.model
    structure = env.bundle.structure
    belief0 = initial_belief_for(model, structure, env.bundle.prior)
    joint_actions = list(itertools.product(range(N_ACTIONS), repeat=n))
    memo: dict[tuple, tuple[float, tuple[int, ...]]] = {}

    def key(belief: SystemBelief) -> tuple:
        return (
            belief.time,
            tuple(np.round(belief.cond.ravel(), 12)),
            tuple(np.round(belief.hyper, 12)),
            tuple(belief.rate),
            tuple(belief.decorrelated),
        )

    def best(belief: SystemBelief, p_sys: float) -> tuple[float, tuple[int, ...]]:
        if belief.time >= env.horizon_years:
            return 0.0, ()
        k = key(belief)
        if k in memo:
            return memo[k]
        best_value, best_action = -math.inf, joint_actions[0]
        for joint in joint_actions:
            actions = np.array(joint, dtype=int)
            inspected = np.flatnonzero(actions == Action.DN_I)
            cost = action_costs(actions, env.cost_model)
            base = cost.campaign + cost.inspection + cost.repair
            value = 0.0
            for outcome in itertools.product(
                (Observation.DETECTION, Observation.NO_DETECTION), repeat=inspected.size
            ):
                observations = np.full(n, int(Observation.NONE))
                observations[inspected] = outcome
                try:
                    nxt = update_belief(
                        belief, actions, observations, model, structure, env.repair_rate
                    )
                except ImpossibleObservationError:
                    continue
                prob = math.exp(nxt.last_log_likelihood)
                if prob == 0.0:
                    continue
                p_next = system_failure_prob(nxt.failure_probs(), env.system)
                reward = base + annual_risk(p_next, p_sys, env.r_fail)
                value += prob * (reward + env.discount * best(nxt, p_next)[0])
            if value > best_value + 1e-12:
                best_value, best_action = value, joint
        memo[k] = (best_value, best_action)
        return memo[k]

    p0 = system_failure_prob(belief0.failure_probs(), env.system)
    value, action = best(belief0, p0)
    logger.info(
        f"Exact solution over {len(memo)} belief nodes: expected cost {-value:.6g}"
    )
    return SmallPomdpSolution(expected_cost=-value, first_action=action)

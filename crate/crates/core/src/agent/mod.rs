//! Deep Deterministic Policy Gradient for the battery simulator.
//!
//! The actor maps a normalized observation to three unit-interval outputs
//! (solar charge, grid charge, discharge) which are scaled by the battery
//! capacity into kWh requests. The critic scores (observation, unit action)
//! pairs. Both have slowly tracking target copies.

mod noise;
mod replay;

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use noise::{NoiseKind, NoiseParams, NoiseState};
pub use replay::{Minibatch, ReplayBuffer, Transition};

use crate::data::{HalfHourRecord, WeekTrace};
use crate::env::{Action, BatteryEnv, EnvConfig, Observation, Policy};
use crate::error::{Error, Result};
use crate::neural::{
    adam_update, init_mlp, soft_update, Activation, AdamState, Gradients, Mlp, NetworkCheckpoint,
};
use crate::seeds::{derive_seed, RunSeeds};

pub const OBS_DIM: usize = Observation::DIM;
pub const ACTION_DIM: usize = 3;

pub const CHECKPOINT_FORMAT: &str = "solarbatt-agent";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HyperParams {
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// Discount factor.
    pub gamma: f64,
    /// Soft target-update rate.
    pub tau: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub actor_hiddens: Vec<usize>,
    pub critic_hiddens: Vec<usize>,
    pub noise: NoiseParams,
    /// Environment steps of training.
    pub training_iterations: usize,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            gamma: 0.99,
            tau: 0.005,
            batch_size: 64,
            buffer_capacity: 1_000_000,
            actor_hiddens: vec![64, 64],
            critic_hiddens: vec![64, 64],
            noise: NoiseParams::default(),
            training_iterations: 50_000,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let key = |k: &str| format!("hyperparams.{k}");
        for (k, v) in [("actor_lr", self.actor_lr), ("critic_lr", self.critic_lr)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config_at(key(k), format!("must be positive, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::config_at(key("gamma"), "must lie in [0, 1]"));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::config_at(key("tau"), "must lie in (0, 1]"));
        }
        if self.batch_size == 0 {
            return Err(Error::config_at(key("batch_size"), "must be at least 1"));
        }
        if self.buffer_capacity == 0 {
            return Err(Error::config_at(key("buffer_capacity"), "must be at least 1"));
        }
        for (k, h) in [("actor_hiddens", &self.actor_hiddens), ("critic_hiddens", &self.critic_hiddens)] {
            if h.contains(&0) {
                return Err(Error::config_at(key(k), "layer widths must be positive"));
            }
        }
        let n = &self.noise;
        if !(n.sigma_start >= 0.0 && n.sigma_end >= 0.0 && n.theta >= 0.0) {
            return Err(Error::config_at(key("noise"), "theta and sigma must be non-negative"));
        }
        Ok(())
    }
}

/// Per-feature reference magnitudes used to normalize observations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObsScales(pub [f64; OBS_DIM]);

impl ObsScales {
    /// Capacity for the two battery features, the training maxima for the
    /// demand/solar features (residuals share their demand's scale). A
    /// feature that is zero throughout gets scale 1.
    pub fn from_training(weeks: &[WeekTrace], capacity: f64) -> Self {
        let max = |f: fn(&HalfHourRecord) -> f64| {
            let m = weeks
                .iter()
                .flat_map(|w| w.records())
                .map(f)
                .fold(0.0, f64::max);
            if m > 0.0 {
                m
            } else {
                1.0
            }
        };
        let (gc, cl, cs) = (max(|r| r.gc), max(|r| r.cl), max(|r| r.cs));
        ObsScales([capacity, capacity, gc, cl, cs, cl, gc])
    }
}

/// Divide each observation feature by its scale. No clamping.
pub fn normalize_observation(obs: &Observation, scales: &ObsScales) -> Result<[f64; OBS_DIM]> {
    if let Some(bad) = scales.0.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
        return Err(Error::config(format!("observation scales must be positive, got {bad}")));
    }
    let raw = obs.as_array();
    let mut out = [0.0; OBS_DIM];
    for i in 0..OBS_DIM {
        out[i] = raw[i] / scales.0[i];
    }
    Ok(out)
}

/// Online and target networks with their optimizers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentNets {
    pub actor: Mlp,
    pub critic: Mlp,
    pub target_actor: Mlp,
    pub target_critic: Mlp,
    pub actor_opt: AdamState,
    pub critic_opt: AdamState,
}

fn layer_sizes(input: usize, hiddens: &[usize], output: usize) -> Vec<usize> {
    std::iter::once(input)
        .chain(hiddens.iter().copied())
        .chain(std::iter::once(output))
        .collect()
}

impl AgentNets {
    /// Fresh networks; targets start as exact copies.
    pub fn new(hp: &HyperParams, init_seed: u64) -> Result<Self> {
        let actor = init_mlp(
            &layer_sizes(OBS_DIM, &hp.actor_hiddens, ACTION_DIM),
            Activation::Sigmoid,
            derive_seed(init_seed, 0),
        )?;
        let critic = init_mlp(
            &layer_sizes(OBS_DIM + ACTION_DIM, &hp.critic_hiddens, 1),
            Activation::Identity,
            derive_seed(init_seed, 1),
        )?;
        Ok(AgentNets {
            actor_opt: AdamState::new(&actor),
            critic_opt: AdamState::new(&critic),
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            actor,
            critic,
        })
    }

    pub fn check_dims(&self) -> Result<()> {
        let ok = self.actor.input_dim() == OBS_DIM
            && self.actor.output_dim() == ACTION_DIM
            && self.critic.input_dim() == OBS_DIM + ACTION_DIM
            && self.critic.output_dim() == 1
            && self.target_actor.layer_sizes() == self.actor.layer_sizes()
            && self.target_critic.layer_sizes() == self.critic.layer_sizes();
        if ok {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "agent networks {:?}/{:?} do not match observation {OBS_DIM} and action {ACTION_DIM}",
                self.actor.layer_sizes(),
                self.critic.layer_sizes()
            )))
        }
    }
}

/// Actor output plus optional noise, clamped to `[0, 1]`, then scaled by
/// `capacity`. Returns the kWh requests and the unit-interval action.
pub fn act(
    nets: &AgentNets,
    obs_vec: &[f64],
    noise: Option<&mut NoiseState>,
    capacity: f64,
) -> Result<(Action, [f64; ACTION_DIM])> {
    if obs_vec.len() != nets.actor.input_dim() {
        return Err(Error::Shape(format!(
            "observation has {} features, actor expects {}",
            obs_vec.len(),
            nets.actor.input_dim()
        )));
    }
    let view = ArrayView2::from_shape((1, obs_vec.len()), obs_vec)
        .map_err(|e| Error::Shape(e.to_string()))?;
    let out = nets.actor.predict(view)?;
    let mut unit = [0.0; ACTION_DIM];
    for (u, v) in unit.iter_mut().zip(out.row(0)) {
        *u = *v;
    }
    if let Some(noise) = noise {
        for (u, n) in unit.iter_mut().zip(noise.sample()) {
            *u += n;
        }
    }
    for u in unit.iter_mut() {
        *u = if u.is_nan() { *u } else { u.clamp(0.0, 1.0) };
    }
    let action = Action::new(unit[0] * capacity, unit[1] * capacity, unit[2] * capacity);
    Ok((action, unit))
}

/// Row-wise concatenation of observations and actions.
pub fn critic_input(s: ArrayView2<f64>, a: ArrayView2<f64>) -> Result<Array2<f64>> {
    concatenate(Axis(1), &[s, a]).map_err(|e| Error::Shape(e.to_string()))
}

/// `y_i = r_i + gamma * Q'(s'_i, mu'(s'_i))`, or `r_i` on terminal steps.
pub fn critic_targets(
    batch: &Minibatch,
    target_actor: &Mlp,
    target_critic: &Mlp,
    gamma: f64,
) -> Result<Array1<f64>> {
    let next_actions = target_actor.predict(batch.s_next.view())?;
    let q_next = target_critic.predict(critic_input(batch.s_next.view(), next_actions.view())?.view())?;
    Ok(Array1::from_iter((0..batch.len()).map(|i| {
        if batch.terminal[i] {
            batch.r[i]
        } else {
            batch.r[i] + gamma * q_next[[i, 0]]
        }
    })))
}

/// Mean squared TD error of `critic` against `targets`.
pub fn critic_loss(critic: &Mlp, batch: &Minibatch, targets: &Array1<f64>) -> Result<f64> {
    let q = critic.predict(critic_input(batch.s.view(), batch.a.view())?.view())?;
    Ok(q.column(0)
        .iter()
        .zip(targets)
        .map(|(q, y)| (y - q).powi(2))
        .sum::<f64>()
        / batch.len() as f64)
}

/// `J = (1/N) sum_i Q(s_i, mu(s_i))` and its gradient with respect to the
/// actor's parameters (the direction of ascent).
pub fn actor_objective_grad(actor: &Mlp, critic: &Mlp, states: ArrayView2<f64>) -> Result<(f64, Gradients)> {
    let n = states.nrows() as f64;
    let actor_cache = actor.forward_batch(states)?;
    let critic_cache = critic.forward_batch(critic_input(states, actor_cache.output().view())?.view())?;
    let objective = critic_cache.output().sum() / n;
    let dq = Array2::from_elem((states.nrows(), 1), 1.0 / n);
    let (_, d_input) = critic.backward(&critic_cache, dq.view())?;
    let d_action = d_input.slice(s![.., OBS_DIM..]).to_owned();
    let (grads, _) = actor.backward(&actor_cache, d_action.view())?;
    Ok((objective, grads))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    /// Critic loss before the update.
    pub critic_loss: f64,
    /// Actor objective before the actor update (after the critic update).
    pub actor_objective: f64,
}

/// One critic step on the TD loss followed by one actor step up the
/// deterministic policy gradient. Targets are left alone.
pub fn train_step(nets: &mut AgentNets, batch: &Minibatch, hp: &HyperParams) -> Result<TrainStats> {
    let n = batch.len() as f64;
    let targets = critic_targets(batch, &nets.target_actor, &nets.target_critic, hp.gamma)?;

    let cache = nets
        .critic
        .forward_batch(critic_input(batch.s.view(), batch.a.view())?.view())?;
    let q = cache.output();
    let mut loss = 0.0;
    let mut dq = Array2::zeros((batch.len(), 1));
    for i in 0..batch.len() {
        let err = q[[i, 0]] - targets[i];
        loss += err * err;
        dq[[i, 0]] = 2.0 * err / n;
    }
    loss /= n;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("critic loss is {loss}")));
    }
    let (critic_grads, _) = nets.critic.backward(&cache, dq.view())?;
    adam_update(&mut nets.critic, &critic_grads, &mut nets.critic_opt, hp.critic_lr)?;

    let (objective, mut actor_grads) = actor_objective_grad(&nets.actor, &nets.critic, batch.s.view())?;
    if !objective.is_finite() {
        return Err(Error::Numeric(format!("actor objective is {objective}")));
    }
    actor_grads.scale(-1.0);
    adam_update(&mut nets.actor, &actor_grads, &mut nets.actor_opt, hp.actor_lr)?;

    Ok(TrainStats {
        critic_loss: loss,
        actor_objective: objective,
    })
}

/// Soft-update both target networks towards their online networks.
pub fn soft_update_targets(nets: &mut AgentNets, tau: f64) -> Result<()> {
    soft_update(&mut nets.target_actor, &nets.actor, tau)?;
    soft_update(&mut nets.target_critic, &nets.critic, tau)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

/// A DDPG learner bound to one battery size.
#[derive(Clone, Debug)]
pub struct Agent {
    pub nets: AgentNets,
    pub hp: HyperParams,
    pub scales: ObsScales,
    pub capacity: f64,
    pub replay: ReplayBuffer,
    pub noise: NoiseState,
    sample_rng: ChaCha8Rng,
    /// Training steps taken so far (drives the noise schedule).
    pub steps_done: usize,
}

impl Agent {
    pub fn new(hp: HyperParams, scales: ObsScales, capacity: f64, seeds: &RunSeeds) -> Result<Self> {
        hp.validate()?;
        let nets = AgentNets::new(&hp, seeds.init)?;
        Ok(Agent {
            replay: ReplayBuffer::new(hp.buffer_capacity),
            noise: NoiseState::new(&hp.noise, seeds.noise),
            sample_rng: ChaCha8Rng::seed_from_u64(seeds.replay),
            nets,
            hp,
            scales,
            capacity,
            steps_done: 0,
        })
    }

    /// Rebuild an evaluation-only agent from saved networks.
    pub fn from_nets(nets: AgentNets, hp: HyperParams, scales: ObsScales, capacity: f64, seeds: &RunSeeds) -> Result<Self> {
        nets.check_dims()?;
        let mut agent = Agent::new(hp, scales, capacity, seeds)?;
        agent.nets = nets;
        Ok(agent)
    }

    /// Noise-free action for an observation.
    pub fn greedy_action(&self, obs: &Observation) -> Result<Action> {
        let v = normalize_observation(obs, &self.scales)?;
        Ok(act(&self.nets, &v, None, self.capacity)?.0)
    }

    fn current_sigma(&self) -> f64 {
        let total = self.hp.training_iterations.max(1) as f64;
        self.hp.noise.sigma_at(self.steps_done as f64 / total)
    }
}

/// Deterministic evaluation policy backed by an agent's actor. Errors (which
/// only arise from non-finite networks) surface as NaN requests, which the
/// simulator rejects.
pub struct ActorPolicy<'a>(pub &'a Agent);

impl Policy for ActorPolicy<'_> {
    fn decide(&mut self, obs: &Observation, _in_window: bool) -> Action {
        self.0
            .greedy_action(obs)
            .unwrap_or(Action::new(f64::NAN, f64::NAN, f64::NAN))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    /// Sum of rewards (negated cost), AUD.
    pub reward: f64,
    pub steps: usize,
    /// Transitions pushed to the replay buffer.
    pub stored: usize,
    pub updates: usize,
    /// Mean over this episode's updates; zero when there were none.
    pub critic_loss: f64,
    pub actor_objective: f64,
    /// Exploration scale at the end of the episode.
    pub sigma: f64,
}

/// Play one episode. In training mode every step explores, stores its
/// transition and, once the buffer holds a batch, runs one update and one
/// soft target update. `step_limit` truncates the episode (the last stored
/// transition is then not marked terminal).
pub fn run_episode(
    agent: &mut Agent,
    config: &EnvConfig,
    trace: &[HalfHourRecord],
    mode: Mode,
    step_limit: usize,
) -> Result<EpisodeStats> {
    agent.nets.check_dims()?;
    if (config.capacity - agent.capacity).abs() > 1e-12 {
        return Err(Error::Shape(format!(
            "agent built for {} kWh, environment has {} kWh",
            agent.capacity, config.capacity
        )));
    }
    let (mut env, mut obs) = BatteryEnv::reset(config, trace)?;
    let mut stats = EpisodeStats::default();
    agent.noise.reset();
    while !env.is_done() && stats.steps < step_limit {
        let s = normalize_observation(&obs, &agent.scales)?;
        let (action, unit) = match mode {
            Mode::Train => {
                let sigma = agent.current_sigma();
                agent.noise.set_sigma(sigma);
                act(&agent.nets, &s, Some(&mut agent.noise), agent.capacity)?
            }
            Mode::Eval => act(&agent.nets, &s, None, agent.capacity)?,
        };
        let out = env.step(action)?;
        stats.reward += out.reward;
        stats.steps += 1;
        if mode == Mode::Train {
            let s_next = normalize_observation(&out.observation, &agent.scales)?;
            agent.replay.push(Transition {
                s,
                a: unit,
                r: out.reward,
                s_next,
                terminal: out.done,
            });
            stats.stored += 1;
            agent.steps_done += 1;
            if let Some(batch) = agent.replay.sample(agent.hp.batch_size, &mut agent.sample_rng) {
                let t = train_step(&mut agent.nets, &batch, &agent.hp)?;
                soft_update_targets(&mut agent.nets, agent.hp.tau)?;
                stats.updates += 1;
                stats.critic_loss += t.critic_loss;
                stats.actor_objective += t.actor_objective;
            }
        }
        obs = out.observation;
    }
    if stats.updates > 0 {
        stats.critic_loss /= stats.updates as f64;
        stats.actor_objective /= stats.updates as f64;
    }
    stats.sigma = agent.noise.sigma;
    Ok(stats)
}

/// Everything needed to restore a trained agent for evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentCheckpoint {
    pub format: String,
    pub version: u32,
    pub actor: NetworkCheckpoint,
    pub critic: NetworkCheckpoint,
    pub target_actor: NetworkCheckpoint,
    pub target_critic: NetworkCheckpoint,
    pub hyperparams: HyperParams,
    pub seeds: RunSeeds,
    pub scales: ObsScales,
    pub env: EnvConfig,
    pub steps_done: usize,
}

impl AgentCheckpoint {
    pub fn from_agent(agent: &Agent, env: &EnvConfig, seeds: RunSeeds) -> Self {
        let n = &agent.nets;
        AgentCheckpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            actor: NetworkCheckpoint::new(n.actor.clone(), Some(n.actor_opt.clone())),
            critic: NetworkCheckpoint::new(n.critic.clone(), Some(n.critic_opt.clone())),
            target_actor: NetworkCheckpoint::new(n.target_actor.clone(), None),
            target_critic: NetworkCheckpoint::new(n.target_critic.clone(), None),
            hyperparams: agent.hp.clone(),
            seeds,
            scales: agent.scales,
            env: env.clone(),
            steps_done: agent.steps_done,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported agent checkpoint {} v{}",
                self.format, self.version
            )));
        }
        for c in [&self.actor, &self.critic, &self.target_actor, &self.target_critic] {
            c.validate()?;
        }
        Ok(())
    }

    pub fn into_agent(self) -> Result<Agent> {
        self.validate()?;
        let actor_opt = self
            .actor
            .optimizer
            .ok_or_else(|| Error::Format("actor optimizer state missing".into()))?;
        let critic_opt = self
            .critic
            .optimizer
            .ok_or_else(|| Error::Format("critic optimizer state missing".into()))?;
        let nets = AgentNets {
            actor: self.actor.network,
            critic: self.critic.network,
            target_actor: self.target_actor.network,
            target_critic: self.target_critic.network,
            actor_opt,
            critic_opt,
        };
        let mut agent = Agent::from_nets(nets, self.hyperparams, self.scales, self.env.capacity, &self.seeds)?;
        agent.steps_done = self.steps_done;
        Ok(agent)
    }
}

//! Two-timescale training loop.
//!
//! Every episode each agent updates its policy by REINFORCE on the overall
//! return (extrinsic plus `lambda` times its intrinsic reward). At the end of
//! a lifetime of `N_ep` episodes each agent updates its intrinsic-reward
//! network along a first-order meta-gradient of the lifetime extrinsic
//! return:
//!
//! * `g_theta = G_life * sum_{k,t} grad pi_final(a|o) / pi_behavior(a|o)`
//!   reuses the lifetime's samples through importance ratios;
//! * the policy update of episode `k` moved theta by
//!   `alpha * G_ov^(k) * S_k` with `S_k` the summed score, so the part of
//!   `theta_final` that depends on eta is `alpha * lambda * S_k *
//!   sum_t gamma^t r_in^(k,t)` (dependence of `S_k` on eta is dropped);
//! * contracting with `g_theta` turns the Jacobian into one scalar per
//!   episode, `s_k = alpha * lambda * (g_theta . S_k)`, which seeds an LSTM
//!   backward pass with upstream `gamma^t * s_k`.
//!
//! The baselines reuse the same loop: independent extrinsic-only learners,
//! one shared extrinsic-only policy, and uniform random play.

use crate::agent::{ActionSample, AgentBundle, ObsEncoder};
use crate::config::{BpttWindow, Credit, ExperimentConfig, RunMode};
use crate::env::{Action, MacEnv};
use crate::numcore::{
    init_lstm, init_mlp, lstm_bptt_into, mlp_forward, mlp_grad_logprob_into, Activation,
    FlatParams, Optimizer, StateGrad,
};
use crate::seed::{stream_rng, stream_seed, Stream};
use crate::{Error, GradBuffer, LstmCache, LstmParams, LstmState, MlpParams, Result};

/// One agent's experience at one slot.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutStep {
    pub encoding: Vec<f64>,
    pub action: Action,
    /// Probability of `action` under the policy that sampled it.
    pub behavior_prob: f64,
    /// `R_ext^{t+1}`
    pub r_ext: f64,
    /// `R_in^{t+1}`; zero for agents without an intrinsic network.
    pub r_in: f64,
}

/// One agent's episode.
#[derive(Clone, Debug)]
pub struct EpisodeRollout {
    pub agent: usize,
    /// Episode index within the lifetime, from 0.
    pub episode: usize,
    pub steps: Vec<RolloutStep>,
    pub lstm_caches: Vec<LstmCache>,
    /// Intrinsic network state when the episode started.
    pub lstm_start: Option<LstmState>,
}

impl EpisodeRollout {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn extrinsic_rewards(&self) -> impl Iterator<Item = f64> + '_ {
        self.steps.iter().map(|s| s.r_ext)
    }
}

/// One agent's lifetime, with what each episode's policy update left behind.
#[derive(Clone, Debug)]
pub struct LifetimeRollout {
    pub agent: usize,
    pub episodes: Vec<EpisodeRollout>,
    /// `sum_t grad log pi_{theta^(k-1)}(a_t|o_t)` per episode.
    pub score_sums: Vec<GradBuffer>,
    /// Clip factor applied to each policy update.
    pub update_scales: Vec<f64>,
    /// Policy before each update; kept only for reward-to-go credit.
    pub policy_snapshots: Vec<MlpParams>,
}

impl LifetimeRollout {
    pub fn new(agent: usize) -> Self {
        LifetimeRollout {
            agent,
            episodes: Vec::new(),
            score_sums: Vec::new(),
            update_scales: Vec::new(),
            policy_snapshots: Vec::new(),
        }
    }
}

/// `sum_t gamma^t r_t`
pub fn discounted_sum(rewards: impl IntoIterator<Item = f64>, gamma: f64) -> f64 {
    let mut discount = 1.0;
    let mut total = 0.0;
    for r in rewards {
        total += discount * r;
        discount *= gamma;
    }
    total
}

pub fn episodic_extrinsic_return(rollout: &EpisodeRollout, gamma: f64) -> f64 {
    discounted_sum(rollout.extrinsic_rewards(), gamma)
}

/// `sum_t gamma^t (R_ext^{t+1} + lambda R_in^{t+1})`
pub fn episodic_overall_return(rollout: &EpisodeRollout, lambda: f64, gamma: f64) -> f64 {
    discounted_sum(
        rollout.steps.iter().map(|s| s.r_ext + lambda * s.r_in),
        gamma,
    )
}

/// Lifetime extrinsic return; the discount keeps compounding across
/// episode boundaries.
pub fn lifetime_extrinsic_return(lifetime: &LifetimeRollout, gamma: f64) -> f64 {
    discounted_sum(
        lifetime.episodes.iter().flat_map(|e| e.extrinsic_rewards()),
        gamma,
    )
}

/// Per-step discounted returns-to-go `G_t = sum_{t' >= t} gamma^{t'-t} r_{t'}`.
fn returns_to_go(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

/// REINFORCE gradient of one episode under `policy` together with the
/// summed score `sum_t grad log pi(a_t|o_t)`.
pub fn policy_gradient(
    policy: &MlpParams,
    rollout: &EpisodeRollout,
    lambda: f64,
    gamma: f64,
    credit: Credit,
) -> Result<(GradBuffer, GradBuffer)> {
    let mut score_sum = GradBuffer::zeros(policy.layout());
    let grad = match credit {
        Credit::Episode => {
            for step in &rollout.steps {
                let (_, cache) = mlp_forward(policy, &step.encoding)?;
                mlp_grad_logprob_into(
                    policy,
                    &cache,
                    step.action.joint_index(),
                    1.0,
                    &mut score_sum,
                )?;
            }
            let mut g = score_sum.clone();
            g.scale(episodic_overall_return(rollout, lambda, gamma));
            g
        }
        Credit::ToGo => {
            let rewards: Vec<f64> = rollout
                .steps
                .iter()
                .map(|s| s.r_ext + lambda * s.r_in)
                .collect();
            let to_go = returns_to_go(&rewards, gamma);
            let mut g = GradBuffer::zeros(policy.layout());
            for (step, &ret) in rollout.steps.iter().zip(&to_go) {
                let (_, cache) = mlp_forward(policy, &step.encoding)?;
                let a = step.action.joint_index();
                mlp_grad_logprob_into(policy, &cache, a, 1.0, &mut score_sum)?;
                mlp_grad_logprob_into(policy, &cache, a, ret, &mut g)?;
            }
            g
        }
    };
    if !grad.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite policy gradient for agent {} episode {}",
            rollout.agent, rollout.episode
        )));
    }
    Ok((grad, score_sum))
}

#[derive(Clone, Debug)]
pub struct PolicyUpdate {
    pub overall_return: f64,
    pub score_sum: GradBuffer,
    pub clip_scale: f64,
}

/// One ascent step `theta += alpha * G_ov * sum_t grad log pi` on the
/// agent's policy (or the configured reward-to-go variant).
pub fn policy_update(
    bundle: &mut AgentBundle,
    rollout: &EpisodeRollout,
    cfg: &ExperimentConfig,
    lambda: f64,
) -> Result<PolicyUpdate> {
    let (grad, score_sum) =
        policy_gradient(&bundle.policy, rollout, lambda, cfg.gamma, cfg.credit)?;
    let clip_scale = bundle
        .policy_opt
        .step(&mut bundle.policy, &grad, cfg.alpha, cfg.clip())?;
    Ok(PolicyUpdate {
        overall_return: episodic_overall_return(rollout, lambda, cfg.gamma),
        score_sum,
        clip_scale,
    })
}

/// `G_life * sum_{k,t} pi_final(a|o) / pi_behavior(a|o) * grad log pi_final(a|o)`,
/// the importance-weighted policy gradient at the end-of-lifetime policy.
pub fn importance_weighted_gradient(
    final_policy: &MlpParams,
    lifetime: &LifetimeRollout,
    lifetime_return: f64,
) -> Result<GradBuffer> {
    let mut g = GradBuffer::zeros(final_policy.layout());
    for step in lifetime.episodes.iter().flat_map(|e| &e.steps) {
        let (_, cache) = mlp_forward(final_policy, &step.encoding)?;
        let a = step.action.joint_index();
        let ratio = cache.log_probs[a].exp() / step.behavior_prob;
        mlp_grad_logprob_into(final_policy, &cache, a, lifetime_return * ratio, &mut g)?;
    }
    Ok(g)
}

#[derive(Clone, Debug)]
pub struct MetaGradient {
    pub lifetime_return: f64,
    pub policy_grad: GradBuffer,
    /// Per-episode contraction scalars `s_k`.
    pub episode_scalars: Vec<f64>,
    pub grad: GradBuffer,
}

/// First-order meta-gradient of the lifetime extrinsic return with respect
/// to the intrinsic-reward parameters.
pub fn intrinsic_meta_gradient(
    final_policy: &MlpParams,
    intrinsic: &LstmParams,
    lifetime: &LifetimeRollout,
    cfg: &ExperimentConfig,
) -> Result<MetaGradient> {
    let n_ep = lifetime.episodes.len();
    if lifetime.score_sums.len() != n_ep || lifetime.update_scales.len() != n_ep {
        return Err(Error::Protocol(format!(
            "lifetime of agent {} has {} episodes but {} recorded policy updates",
            lifetime.agent,
            n_ep,
            lifetime.score_sums.len()
        )));
    }
    if let Some(e) = lifetime
        .episodes
        .iter()
        .find(|e| e.lstm_caches.len() != e.steps.len())
    {
        return Err(Error::Protocol(format!(
            "episode {} of agent {} is missing intrinsic-network caches",
            e.episode, lifetime.agent
        )));
    }
    let gamma = cfg.gamma;
    let lifetime_return = lifetime_extrinsic_return(lifetime, gamma);
    let policy_grad = importance_weighted_gradient(final_policy, lifetime, lifetime_return)?;

    let mut episode_scalars = Vec::with_capacity(n_ep);
    let mut upstreams: Vec<Vec<f64>> = Vec::with_capacity(n_ep);
    for (k, episode) in lifetime.episodes.iter().enumerate() {
        let base = cfg.alpha * cfg.lambda * lifetime.update_scales[k];
        let s_k = base * policy_grad.dot(&lifetime.score_sums[k])?;
        episode_scalars.push(s_k);
        let upstream = match cfg.credit {
            Credit::Episode => {
                let mut discount = 1.0;
                episode
                    .steps
                    .iter()
                    .map(|_| {
                        let u = discount * s_k;
                        discount *= gamma;
                        u
                    })
                    .collect()
            }
            Credit::ToGo => {
                let snapshot = lifetime.policy_snapshots.get(k).ok_or_else(|| {
                    Error::Protocol("reward-to-go credit needs per-episode policy snapshots".into())
                })?;
                // r_in at t' enters every G_t with t <= t', weighted gamma^{t'-t}
                let mut acc = 0.0;
                let mut out = Vec::with_capacity(episode.steps.len());
                for step in &episode.steps {
                    let (_, cache) = mlp_forward(snapshot, &step.encoding)?;
                    let mut score = GradBuffer::zeros(snapshot.layout());
                    mlp_grad_logprob_into(
                        snapshot,
                        &cache,
                        step.action.joint_index(),
                        1.0,
                        &mut score,
                    )?;
                    acc = gamma * acc + policy_grad.dot(&score)?;
                    out.push(base * acc);
                }
                out
            }
        };
        upstreams.push(upstream);
    }

    let mut grad = GradBuffer::zeros(intrinsic.layout());
    match cfg.bptt_window {
        BpttWindow::Episode => {
            for (episode, upstream) in lifetime.episodes.iter().zip(&upstreams) {
                lstm_bptt_into(intrinsic, &episode.lstm_caches, upstream, None, &mut grad)?;
            }
        }
        BpttWindow::Lifetime => {
            let mut carry: Option<StateGrad<f64>> = None;
            for (episode, upstream) in lifetime.episodes.iter().zip(&upstreams).rev() {
                let out = lstm_bptt_into(
                    intrinsic,
                    &episode.lstm_caches,
                    upstream,
                    carry.as_ref(),
                    &mut grad,
                )?;
                carry = Some(out);
            }
        }
    }
    if !grad.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite meta-gradient for agent {}",
            lifetime.agent
        )));
    }
    Ok(MetaGradient {
        lifetime_return,
        policy_grad,
        episode_scalars,
        grad,
    })
}

/// `eta += beta * grad_eta J_life` for one agent; returns the meta-gradient
/// norm before clipping.
pub fn intrinsic_update(
    bundle: &mut AgentBundle,
    lifetime: &LifetimeRollout,
    cfg: &ExperimentConfig,
) -> Result<f64> {
    let intrinsic = bundle
        .intrinsic
        .as_mut()
        .ok_or_else(|| Error::Protocol(format!("agent {} has no intrinsic network", bundle.id)))?;
    let meta = intrinsic_meta_gradient(&bundle.policy, intrinsic, lifetime, cfg)?;
    let norm = meta.grad.norm();
    bundle
        .intrinsic_opt
        .step(intrinsic, &meta.grad, cfg.beta, cfg.intrinsic_clip())?;
    Ok(norm)
}

/// Statistics of one training episode.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    pub lifetime: usize,
    /// Episode index within the lifetime.
    pub episode: usize,
    /// Episode index over the whole run.
    pub episode_global: usize,
    pub pct_delivered: f64,
    pub g_ep_ext: f64,
    pub g_ep_ov: Vec<f64>,
    pub mean_abs_rin: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LifetimeRecord {
    pub lifetime: usize,
    pub g_life_ext: f64,
    /// Meta-gradient norm per agent; empty without intrinsic networks.
    pub meta_grad_norm: Vec<f64>,
    /// Mean delivery percentage over the lifetime's last selection window.
    pub selection_score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LifetimeReport {
    pub episodes: Vec<EpisodeRecord>,
    pub summary: LifetimeRecord,
}

/// Policy shared by all agents under parameter sharing.
#[derive(Clone, Debug)]
pub struct SharedPolicy {
    pub params: MlpParams,
    pub opt: Optimizer<f64>,
}

pub struct Trainer {
    cfg: ExperimentConfig,
    run_seed: u64,
    env: MacEnv,
    encoder: ObsEncoder,
    bundles: Vec<AgentBundle>,
    shared: Option<SharedPolicy>,
    lifetimes_done: usize,
    episodes_done: usize,
    lifetime_returns: Vec<f64>,
    prev_r_ext: f64,
}

impl Trainer {
    pub fn new(cfg: &ExperimentConfig, run_seed: u64) -> Result<Self> {
        cfg.validate()?;
        let env = MacEnv::new(cfg.env_config())?;
        let encoder = ObsEncoder::new(cfg.buffer_size, cfg.memory);
        let dims = [
            encoder.len(),
            cfg.policy_hidden,
            cfg.policy_hidden,
            crate::env::NUM_ACTIONS,
        ];
        let intrinsic_in =
            encoder.len() + crate::env::NUM_ACTIONS + usize::from(cfg.intrinsic_sees_rext);
        let mut bundles = Vec::with_capacity(cfg.n_agents);
        for i in 0..cfg.n_agents as u64 {
            let policy = init_mlp(
                &dims,
                Activation::Tanh,
                stream_seed(run_seed, Stream::PolicyInit, &[i]),
            )?;
            let intrinsic = if cfg.mode.uses_intrinsic() {
                Some(init_lstm(
                    intrinsic_in,
                    cfg.intrinsic_hidden,
                    cfg.intrinsic_head_activation,
                    cfg.forget_bias,
                    stream_seed(run_seed, Stream::IntrinsicInit, &[i]),
                )?)
            } else {
                None
            };
            bundles.push(AgentBundle::new(
                i as usize,
                policy,
                intrinsic,
                cfg.optimizer,
                stream_rng(run_seed, Stream::Policy, &[i]),
            ));
        }
        let shared = (cfg.mode == RunMode::ExtrinsicPs).then(|| {
            let params = bundles[0].policy.clone();
            SharedPolicy {
                opt: Optimizer::new(cfg.optimizer, params.values().len()),
                params,
            }
        });
        Ok(Trainer {
            cfg: cfg.clone(),
            run_seed,
            env,
            encoder,
            bundles,
            shared,
            lifetimes_done: 0,
            episodes_done: 0,
            lifetime_returns: Vec::new(),
            prev_r_ext: 0.0,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn run_seed(&self) -> u64 {
        self.run_seed
    }

    pub fn bundles(&self) -> &[AgentBundle] {
        &self.bundles
    }

    pub fn bundles_mut(&mut self) -> &mut [AgentBundle] {
        &mut self.bundles
    }

    pub fn shared_policy(&self) -> Option<&SharedPolicy> {
        self.shared.as_ref()
    }

    /// Policy agent `i` acts with.
    pub fn acting_policy(&self, agent: usize) -> &MlpParams {
        match &self.shared {
            Some(s) => &s.params,
            None => &self.bundles[agent].policy,
        }
    }

    pub fn env(&self) -> &MacEnv {
        &self.env
    }

    pub fn lifetimes_done(&self) -> usize {
        self.lifetimes_done
    }

    pub fn episodes_done(&self) -> usize {
        self.episodes_done
    }

    pub fn lifetime_returns(&self) -> &[f64] {
        &self.lifetime_returns
    }

    fn lambda(&self) -> f64 {
        if self.cfg.mode.uses_intrinsic() {
            self.cfg.lambda
        } else {
            0.0
        }
    }

    /// Plays episode `k` of the current lifetime with the current policies.
    /// Intrinsic networks advance their state; no parameters change.
    pub fn run_episode(&mut self, k: usize) -> Result<(Vec<EpisodeRollout>, EpisodeRecord)> {
        let n = self.cfg.n_agents;
        let seed = stream_seed(
            self.run_seed,
            Stream::Environment,
            &[self.lifetimes_done as u64, k as u64],
        );
        let mut obs = self.env.reset(seed);
        let mut rollouts: Vec<EpisodeRollout> = self
            .bundles
            .iter()
            .map(|b| EpisodeRollout {
                agent: b.id,
                episode: k,
                steps: Vec::with_capacity(self.cfg.episode_len),
                lstm_caches: Vec::new(),
                lstm_start: b.intrinsic.as_ref().map(|_| b.lstm_state.clone()),
            })
            .collect();
        let mut actions = vec![Action::NOOP; n];
        let mut samples: Vec<ActionSample> = Vec::with_capacity(n);
        let mut encodings: Vec<Vec<f64>> = Vec::with_capacity(n);
        while !self.env.is_done() {
            samples.clear();
            encodings.clear();
            for (i, bundle) in self.bundles.iter_mut().enumerate() {
                let enc = self.encoder.encode(&obs[i])?;
                let sample = match (self.cfg.mode, &self.shared) {
                    (RunMode::RandomUniform, _) => bundle.act_uniform(),
                    (_, Some(shared)) => bundle.act_with(&shared.params, &enc)?,
                    _ => bundle.act(&enc)?,
                };
                actions[i] = sample.action;
                samples.push(sample);
                encodings.push(enc);
            }
            let outcome = self.env.step(&actions)?;
            let rext_feature = self.cfg.intrinsic_sees_rext.then_some(self.prev_r_ext);
            for (i, bundle) in self.bundles.iter_mut().enumerate() {
                let enc = std::mem::take(&mut encodings[i]);
                let r_in = if bundle.intrinsic.is_some() {
                    let (r, cache) = bundle.intrinsic_reward(&enc, actions[i], rext_feature)?;
                    rollouts[i].lstm_caches.push(cache);
                    r
                } else {
                    0.0
                };
                rollouts[i].steps.push(RolloutStep {
                    encoding: enc,
                    action: actions[i],
                    behavior_prob: samples[i].prob,
                    r_ext: outcome.r_ext,
                    r_in,
                });
            }
            self.prev_r_ext = outcome.r_ext;
            obs = outcome.observations;
        }
        let gamma = self.cfg.gamma;
        let lambda = self.lambda();
        let record = EpisodeRecord {
            lifetime: self.lifetimes_done,
            episode: k,
            episode_global: self.episodes_done,
            pct_delivered: self.env.pct_delivered(),
            g_ep_ext: episodic_extrinsic_return(&rollouts[0], gamma),
            g_ep_ov: rollouts
                .iter()
                .map(|r| episodic_overall_return(r, lambda, gamma))
                .collect(),
            mean_abs_rin: rollouts
                .iter()
                .map(|r| r.steps.iter().map(|s| s.r_in.abs()).sum::<f64>() / r.len() as f64)
                .collect(),
        };
        self.episodes_done += 1;
        Ok((rollouts, record))
    }

    /// Applies the per-episode policy updates of the current mode. Returns
    /// the per-agent updates (empty for uniform play).
    fn update_policies(&mut self, rollouts: &[EpisodeRollout]) -> Result<Vec<PolicyUpdate>> {
        let lambda = self.lambda();
        match self.cfg.mode {
            RunMode::RandomUniform => Ok(Vec::new()),
            RunMode::Proposed | RunMode::ExtrinsicNps => self
                .bundles
                .iter_mut()
                .zip(rollouts)
                .map(|(b, r)| policy_update(b, r, &self.cfg, lambda))
                .collect(),
            RunMode::ExtrinsicPs => {
                let shared = self.shared.as_mut().expect("shared policy exists");
                let mut mean = GradBuffer::zeros(shared.params.layout());
                let mut updates = Vec::with_capacity(rollouts.len());
                let weight = 1.0 / rollouts.len() as f64;
                for r in rollouts {
                    let (g, score_sum) =
                        policy_gradient(&shared.params, r, 0.0, self.cfg.gamma, self.cfg.credit)?;
                    mean.add_scaled(&g, weight)?;
                    updates.push(PolicyUpdate {
                        overall_return: episodic_overall_return(r, 0.0, self.cfg.gamma),
                        score_sum,
                        clip_scale: 1.0,
                    });
                }
                let scale =
                    shared
                        .opt
                        .step(&mut shared.params, &mean, self.cfg.alpha, self.cfg.clip())?;
                for u in &mut updates {
                    u.clip_scale = scale;
                }
                for b in &mut self.bundles {
                    b.policy = shared.params.clone();
                }
                Ok(updates)
            }
        }
    }

    /// Runs the `N_ep` episodes of one lifetime with their policy updates,
    /// without touching the intrinsic networks. Lifetime rollouts are
    /// retained only when the mode learns intrinsic rewards.
    pub fn collect_lifetime(&mut self) -> Result<(Vec<LifetimeRollout>, Vec<EpisodeRecord>, f64)> {
        for b in &mut self.bundles {
            b.reset_lifetime_state();
        }
        self.prev_r_ext = 0.0;
        let keep = self.cfg.mode.uses_intrinsic();
        let snapshots = keep && self.cfg.credit == Credit::ToGo;
        let mut lifetimes: Vec<LifetimeRollout> =
            (0..self.cfg.n_agents).map(LifetimeRollout::new).collect();
        let mut records = Vec::with_capacity(self.cfg.episodes_per_lifetime);
        let mut r_ext_all =
            Vec::with_capacity(self.cfg.episodes_per_lifetime * self.cfg.episode_len);
        for k in 0..self.cfg.episodes_per_lifetime {
            let (rollouts, record) = self.run_episode(k)?;
            r_ext_all.extend(rollouts[0].extrinsic_rewards());
            if snapshots {
                for (lt, b) in lifetimes.iter_mut().zip(&self.bundles) {
                    lt.policy_snapshots.push(b.policy.clone());
                }
            }
            let updates = self.update_policies(&rollouts)?;
            if keep {
                for ((lt, rollout), update) in lifetimes.iter_mut().zip(rollouts).zip(updates) {
                    lt.episodes.push(rollout);
                    lt.score_sums.push(update.score_sum);
                    lt.update_scales.push(update.clip_scale);
                }
            }
            records.push(record);
        }
        let g_life = discounted_sum(r_ext_all, self.cfg.gamma);
        Ok((lifetimes, records, g_life))
    }

    /// Intrinsic-network update of every agent from its lifetime rollout.
    pub fn update_intrinsic(&mut self, lifetimes: &[LifetimeRollout]) -> Result<Vec<f64>> {
        if !self.cfg.mode.uses_intrinsic() {
            return Ok(Vec::new());
        }
        let cfg = &self.cfg;
        self.bundles
            .iter_mut()
            .zip(lifetimes)
            .map(|(b, lt)| intrinsic_update(b, lt, cfg))
            .collect()
    }

    /// One full lifetime: episodes with policy updates, then the intrinsic
    /// updates. The final policies carry over to the next lifetime.
    pub fn run_lifetime(&mut self) -> Result<LifetimeReport> {
        let (lifetimes, episodes, g_life_ext) = self.collect_lifetime()?;
        let meta_grad_norm = self.update_intrinsic(&lifetimes)?;
        let window = self.cfg.selection_window.min(episodes.len());
        let selection_score = episodes[episodes.len() - window..]
            .iter()
            .map(|e| e.pct_delivered)
            .sum::<f64>()
            / window as f64;
        let summary = LifetimeRecord {
            lifetime: self.lifetimes_done,
            g_life_ext,
            meta_grad_norm,
            selection_score,
        };
        self.lifetime_returns.push(g_life_ext);
        self.lifetimes_done += 1;
        Ok(LifetimeReport { episodes, summary })
    }

    /// Moving-average lifetime return stopped improving by the configured
    /// relative margin.
    pub fn converged(&self) -> bool {
        has_converged(
            &self.lifetime_returns,
            self.cfg.convergence_window,
            self.cfg.convergence_threshold,
        )
    }

    pub fn finished(&self) -> bool {
        self.lifetimes_done >= self.cfg.max_lifetimes || self.converged()
    }
}

/// Compares the moving average of the last `window` lifetime returns with
/// the one a lifetime earlier; converged when the relative improvement is
/// below `threshold`. Non-positive thresholds never converge.
pub fn has_converged(returns: &[f64], window: usize, threshold: f64) -> bool {
    if threshold <= 0.0 || window == 0 || returns.len() < window + 1 {
        return false;
    }
    let n = returns.len();
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let current = mean(&returns[n - window..]);
    let previous = mean(&returns[n - window - 1..n - 1]);
    let scale = previous.abs().max(f64::EPSILON);
    (current - previous) / scale < threshold
}

/// Event stream of a training run.
#[derive(Clone, Debug, PartialEq)]
pub enum TrainEvent {
    Episode(EpisodeRecord),
    Lifetime(LifetimeRecord),
}

/// Trains one seed until convergence or `max_lifetimes`, streaming
/// statistics to `sink`. Returns the trainer holding the final networks.
pub fn train(
    cfg: &ExperimentConfig,
    run_seed: u64,
    mut sink: impl FnMut(&Trainer, &TrainEvent) -> Result<()>,
) -> Result<Trainer> {
    let mut trainer = Trainer::new(cfg, run_seed)?;
    while !trainer.finished() {
        let report = trainer.run_lifetime()?;
        for e in report.episodes {
            sink(&trainer, &TrainEvent::Episode(e))?;
        }
        sink(&trainer, &TrainEvent::Lifetime(report.summary))?;
    }
    Ok(trainer)
}

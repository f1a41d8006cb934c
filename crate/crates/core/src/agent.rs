//! One learning UE: its policy network, its intrinsic-reward network and the
//! random stream it samples actions from.

use rand::Rng;

use crate::env::{Action, Observation, NUM_ACTIONS, NUM_MESSAGES};
use crate::numcore::{
    lstm_step, mlp_forward, mlp_grad_logprob, sample_categorical, FlatParams, Optimizer,
    OptimizerKind,
};
use crate::seed::StreamRng;
use crate::{Error, GradBuffer, LstmCache, LstmParams, LstmState, MlpParams, Result};

/// One-hot encoding of an [`Observation`]:
/// `onehot(b^t) ‖ M × [onehot(b) ‖ onehot(a) ‖ onehot(m)]`.
///
/// Slots from before the episode start encode buffer 0 and message 0 with an
/// all-zero action block, so a valid encoding carries `1 + 2M + k` ones where
/// `k` is the number of real history slots.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ObsEncoder {
    buffer_size: usize,
    memory: usize,
}

impl ObsEncoder {
    pub fn new(buffer_size: usize, memory: usize) -> Self {
        ObsEncoder {
            buffer_size,
            memory,
        }
    }

    fn level_width(&self) -> usize {
        self.buffer_size + 1
    }

    fn slot_width(&self) -> usize {
        self.level_width() + NUM_ACTIONS + NUM_MESSAGES
    }

    pub fn len(&self) -> usize {
        self.level_width() + self.memory * self.slot_width()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn encode(&self, obs: &Observation) -> Result<Vec<f64>> {
        if obs.history.len() != self.memory {
            return Err(Error::Encoding(format!(
                "history holds {} slots, expected {}",
                obs.history.len(),
                self.memory
            )));
        }
        let level = |b: usize| {
            if b > self.buffer_size {
                Err(Error::Encoding(format!(
                    "buffer level {b} exceeds capacity {}",
                    self.buffer_size
                )))
            } else {
                Ok(b)
            }
        };
        let mut out = vec![0.0; self.len()];
        out[level(obs.buffer)?] = 1.0;
        for (j, slot) in obs.history.iter().enumerate() {
            let base = self.level_width() + j * self.slot_width();
            let (b, a, m) = match slot {
                Some(s) => (s.buffer, Some(s.action.joint_index()), s.msg.index()),
                None => (0, None, 0),
            };
            out[base + level(b)?] = 1.0;
            if let Some(a) = a {
                out[base + self.level_width() + a] = 1.0;
            }
            out[base + self.level_width() + NUM_ACTIONS + m] = 1.0;
        }
        Ok(out)
    }
}

/// Input of the intrinsic-reward network: observation encoding, action
/// one-hot and, optionally, the previous extrinsic reward.
pub fn intrinsic_input(encoding: &[f64], action: Action, prev_r_ext: Option<f64>) -> Vec<f64> {
    let mut x = Vec::with_capacity(encoding.len() + NUM_ACTIONS + 1);
    x.extend_from_slice(encoding);
    let mut onehot = [0.0; NUM_ACTIONS];
    onehot[action.joint_index()] = 1.0;
    x.extend_from_slice(&onehot);
    if let Some(r) = prev_r_ext {
        x.push(r);
    }
    x
}

/// Sampled action with its probability under the sampling policy.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActionSample {
    pub action: Action,
    pub prob: f64,
    pub log_prob: f64,
}

#[derive(Clone, Debug)]
pub struct AgentBundle {
    pub id: usize,
    pub policy: MlpParams,
    pub intrinsic: Option<LstmParams>,
    /// Intrinsic network state; persists over the episodes of a lifetime.
    pub lstm_state: LstmState,
    pub policy_opt: Optimizer<f64>,
    pub intrinsic_opt: Optimizer<f64>,
    rng: StreamRng,
}

impl AgentBundle {
    pub fn new(
        id: usize,
        policy: MlpParams,
        intrinsic: Option<LstmParams>,
        optimizer: OptimizerKind,
        rng: StreamRng,
    ) -> Self {
        let hidden = intrinsic.as_ref().map_or(0, |p| p.hidden_dim());
        AgentBundle {
            id,
            policy_opt: Optimizer::new(optimizer, policy.values().len()),
            intrinsic_opt: Optimizer::new(
                optimizer,
                intrinsic.as_ref().map_or(0, |p| p.values().len()),
            ),
            policy,
            intrinsic,
            lstm_state: LstmState::zeros(hidden),
            rng,
        }
    }

    pub fn reset_lifetime_state(&mut self) {
        let hidden = self.intrinsic.as_ref().map_or(0, |p| p.hidden_dim());
        self.lstm_state = LstmState::zeros(hidden);
    }

    /// Samples from the policy with this agent's own stream.
    pub fn act(&mut self, encoding: &[f64]) -> Result<ActionSample> {
        let (probs, cache) = mlp_forward(&self.policy, encoding)?;
        let idx = sample_categorical(&probs, &mut self.rng);
        Ok(ActionSample {
            action: Action::from_index(idx)?,
            prob: probs[idx],
            log_prob: cache.log_probs[idx],
        })
    }

    /// Samples with another policy (the shared one under parameter sharing).
    pub fn act_with(&mut self, policy: &MlpParams, encoding: &[f64]) -> Result<ActionSample> {
        let (probs, cache) = mlp_forward(policy, encoding)?;
        let idx = sample_categorical(&probs, &mut self.rng);
        Ok(ActionSample {
            action: Action::from_index(idx)?,
            prob: probs[idx],
            log_prob: cache.log_probs[idx],
        })
    }

    /// Uniform draw over the action set, ignoring the observation.
    pub fn act_uniform(&mut self) -> ActionSample {
        let idx = self.rng.gen_range(0..NUM_ACTIONS);
        let prob = 1.0 / NUM_ACTIONS as f64;
        ActionSample {
            action: Action::from_index(idx).expect("index in range"),
            prob,
            log_prob: prob.ln(),
        }
    }

    /// Advances the intrinsic network by one step on `(o, a)` and returns its
    /// reward together with the cache for the meta-gradient.
    pub fn intrinsic_reward(
        &mut self,
        encoding: &[f64],
        action: Action,
        prev_r_ext: Option<f64>,
    ) -> Result<(f64, LstmCache)> {
        let params = self.intrinsic.as_ref().ok_or_else(|| {
            Error::Protocol(format!("agent {} has no intrinsic network", self.id))
        })?;
        let x = intrinsic_input(encoding, action, prev_r_ext);
        let (r, next, cache) = lstm_step(params, &x, &self.lstm_state)?;
        self.lstm_state = next;
        Ok((r, cache))
    }

    /// Score `∇θ log π(action | o)` under the agent's current policy.
    pub fn grad_logprob(&self, encoding: &[f64], action: Action) -> Result<GradBuffer> {
        let (_, cache) = mlp_forward(&self.policy, encoding)?;
        mlp_grad_logprob(&self.policy, &cache, action.joint_index())
    }
}

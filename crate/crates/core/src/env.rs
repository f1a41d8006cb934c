//! Single-cell uplink contention simulator.
//!
//! `N` UEs each hold a FIFO buffer of `P` data PDUs and share one
//! slotted data channel: a slot carries a PDU only when exactly one UE
//! transmits. Signalling runs over dedicated error-free control channels to
//! a base station with a fixed MAC behaviour: it ACKs every successful
//! reception and grants one of the remaining access requests at random.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::seed::StreamRng;
use crate::{Error, Result};

/// Number of joint (data, signal) actions.
pub const NUM_ACTIONS: usize = 6;
/// Number of distinct base-station messages.
pub const NUM_MESSAGES: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DataAction {
    Noop = 0,
    Transmit = 1,
    Delete = 2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Signal {
    Silent = 0,
    Request = 1,
}

/// Data-plane and control-plane decision of one UE for one slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Action {
    pub data: DataAction,
    pub signal: Signal,
}

impl Action {
    pub const NOOP: Action = Action {
        data: DataAction::Noop,
        signal: Signal::Silent,
    };

    pub fn new(data: DataAction, signal: Signal) -> Self {
        Action { data, signal }
    }

    /// `2 * data + signal`
    pub fn joint_index(self) -> usize {
        2 * self.data as usize + self.signal as usize
    }

    pub fn from_index(index: usize) -> Result<Self> {
        if index >= NUM_ACTIONS {
            return Err(Error::Bounds {
                index,
                len: NUM_ACTIONS,
            });
        }
        let data = match index / 2 {
            0 => DataAction::Noop,
            1 => DataAction::Transmit,
            _ => DataAction::Delete,
        };
        let signal = if index % 2 == 1 {
            Signal::Request
        } else {
            Signal::Silent
        };
        Ok(Action { data, signal })
    }

    pub fn all() -> impl Iterator<Item = Action> {
        (0..NUM_ACTIONS).map(|i| Action::from_index(i).unwrap())
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.joint_index())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BsMessage {
    #[default]
    NoGrant = 0,
    Grant = 1,
    Ack = 2,
}

impl BsMessage {
    pub fn index(self) -> usize {
        self as usize
    }
}

/// A data PDU: owning UE and its position in the initial buffer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PduId {
    pub ue: usize,
    pub seq: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub n_agents: usize,
    /// `P`: PDUs per UE at episode start.
    pub buffer_size: usize,
    /// `M`: history window length.
    pub memory: usize,
    /// `T_ep`: slots per episode.
    pub episode_len: usize,
    /// Reward any collision-free reception, including repeats of a PDU the
    /// BS already holds.
    pub reward_duplicates: bool,
    /// Report, in history slot `j`, the message that was available when
    /// that slot's action was chosen instead of the reply it provoked.
    pub strict_obs_indexing: bool,
}

impl EnvConfig {
    pub fn new(n_agents: usize, buffer_size: usize, memory: usize, episode_len: usize) -> Self {
        EnvConfig {
            n_agents,
            buffer_size,
            memory,
            episode_len,
            reward_duplicates: false,
            strict_obs_indexing: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("n_agents", self.n_agents),
            ("buffer_size", self.buffer_size),
            ("memory", self.memory),
            ("episode_len", self.episode_len),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }
}

/// One past slot as seen by a UE.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservedStep {
    /// Buffer level before the slot's action.
    pub buffer: usize,
    pub action: Action,
    pub msg: BsMessage,
}

/// Local view of one UE: current buffer level and the last `M` slots,
/// newest first. `None` marks slots before the episode started.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub buffer: usize,
    pub history: Vec<Option<ObservedStep>>,
}

impl Observation {
    /// Flat tuple `(b^t, b, a, m, b, a, m, ...)` of arity `1 + 3M`;
    /// pre-episode slots are zeros.
    pub fn to_tuple(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(1 + 3 * self.history.len());
        out.push(self.buffer);
        for slot in &self.history {
            match slot {
                Some(s) => out.extend([s.buffer, s.action.joint_index(), s.msg.index()]),
                None => out.extend([0, 0, 0]),
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct HistoryEntry {
    buffer: usize,
    action: Action,
    /// Message in hand when the action was chosen.
    msg_before: BsMessage,
    /// Reply to this slot's events.
    msg_after: BsMessage,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UeState {
    buffer: VecDeque<PduId>,
    last_msg: BsMessage,
    history: VecDeque<Option<HistoryEntry>>,
}

impl UeState {
    fn full(ue: usize, cfg: &EnvConfig) -> Self {
        UeState {
            buffer: (0..cfg.buffer_size).map(|seq| PduId { ue, seq }).collect(),
            last_msg: BsMessage::NoGrant,
            history: std::iter::repeat_n(None, cfg.memory).collect(),
        }
    }

    pub fn buffer_level(&self) -> usize {
        self.buffer.len()
    }

    pub fn head(&self) -> Option<PduId> {
        self.buffer.front().copied()
    }

    pub fn last_msg(&self) -> BsMessage {
        self.last_msg
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    /// Slot index that was just played.
    pub t: usize,
    pub observations: Vec<Observation>,
    /// Shared extrinsic reward, -1 or 0.
    pub r_ext: f64,
    /// New unique PDU accepted this slot.
    pub delivered: Option<PduId>,
    /// UE whose transmission got through, whether or not it was new.
    pub received_from: Option<usize>,
    pub collision: bool,
    pub messages: Vec<BsMessage>,
    pub all_delivered: bool,
    pub ledger_size: usize,
}

impl StepOutcome {
    pub fn trace_header(n_agents: usize) -> String {
        let mut cols = vec!["t".to_string()];
        cols.extend((0..n_agents).map(|i| format!("a{i}")));
        cols.extend((0..n_agents).map(|i| format!("m{i}")));
        cols.push("r_ext".into());
        cols.push("delivered".into());
        cols.join(",")
    }

    /// CSV trace line `t, actions.., msgs.., R_ext, |ledger|`.
    pub fn trace_row(&self, actions: &[Action]) -> String {
        let mut cols = vec![self.t.to_string()];
        cols.extend(actions.iter().map(|a| a.joint_index().to_string()));
        cols.extend(self.messages.iter().map(|m| m.index().to_string()));
        cols.push(format!("{}", self.r_ext));
        cols.push(self.ledger_size.to_string());
        cols.join(",")
    }
}

/// Base-station reply for one slot. The UE whose PDU got through (if any)
/// receives an ACK and its request is ignored; one of the remaining
/// requesters, drawn uniformly from `rng`, receives a grant.
pub fn bs_respond<R: Rng + ?Sized>(
    received_from: Option<usize>,
    requests: &[bool],
    rng: &mut R,
) -> Vec<BsMessage> {
    let mut msgs = vec![BsMessage::NoGrant; requests.len()];
    if let Some(ue) = received_from {
        msgs[ue] = BsMessage::Ack;
    }
    let pool: Vec<usize> = requests
        .iter()
        .enumerate()
        .filter(|&(i, &r)| r && Some(i) != received_from)
        .map(|(i, _)| i)
        .collect();
    if !pool.is_empty() {
        msgs[pool[rng.gen_range(0..pool.len())]] = BsMessage::Grant;
    }
    msgs
}

pub struct MacEnv {
    cfg: EnvConfig,
    ues: Vec<UeState>,
    ledger: BTreeSet<PduId>,
    t: usize,
    started: bool,
    rng: StreamRng,
}

impl MacEnv {
    pub fn new(cfg: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        use rand::SeedableRng;
        Ok(MacEnv {
            ues: (0..cfg.n_agents).map(|i| UeState::full(i, &cfg)).collect(),
            cfg,
            ledger: BTreeSet::new(),
            t: 0,
            started: false,
            rng: StreamRng::seed_from_u64(0),
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    /// Refills every buffer, clears the ledger and histories and reseeds the
    /// grant lottery.
    pub fn reset(&mut self, episode_seed: u64) -> Vec<Observation> {
        use rand::SeedableRng;
        self.ues = (0..self.cfg.n_agents)
            .map(|i| UeState::full(i, &self.cfg))
            .collect();
        self.ledger.clear();
        self.t = 0;
        self.started = true;
        self.rng = StreamRng::seed_from_u64(episode_seed);
        self.observations()
    }

    pub fn step_index(&self) -> usize {
        self.t
    }

    pub fn is_done(&self) -> bool {
        self.t >= self.cfg.episode_len
    }

    pub fn ue(&self, agent: usize) -> Result<&UeState> {
        self.ues.get(agent).ok_or(Error::Bounds {
            index: agent,
            len: self.ues.len(),
        })
    }

    pub fn ledger(&self) -> &BTreeSet<PduId> {
        &self.ledger
    }

    pub fn all_delivered(&self) -> bool {
        self.ledger.len() == self.cfg.n_agents * self.cfg.buffer_size
    }

    /// Share of all PDUs the BS holds, in percent.
    pub fn pct_delivered(&self) -> f64 {
        100.0 * self.ledger.len() as f64 / (self.cfg.n_agents * self.cfg.buffer_size) as f64
    }

    pub fn observation(&self, agent: usize) -> Result<Observation> {
        let ue = self.ue(agent)?;
        let strict = self.cfg.strict_obs_indexing;
        Ok(Observation {
            buffer: ue.buffer_level(),
            history: ue
                .history
                .iter()
                .map(|slot| {
                    slot.map(|e| ObservedStep {
                        buffer: e.buffer,
                        action: e.action,
                        msg: if strict { e.msg_before } else { e.msg_after },
                    })
                })
                .collect(),
        })
    }

    pub fn observations(&self) -> Vec<Observation> {
        (0..self.cfg.n_agents)
            .map(|i| self.observation(i).unwrap())
            .collect()
    }

    pub fn step(&mut self, actions: &[Action]) -> Result<StepOutcome> {
        if !self.started {
            return Err(Error::Protocol("step before reset".into()));
        }
        if self.is_done() {
            return Err(Error::Protocol(format!(
                "episode already ran its {} slots",
                self.cfg.episode_len
            )));
        }
        if actions.len() != self.cfg.n_agents {
            return Err(Error::Shape {
                context: "joint action",
                expected: self.cfg.n_agents,
                got: actions.len(),
            });
        }
        let was_complete = self.all_delivered();
        let levels_before: Vec<usize> = self.ues.iter().map(UeState::buffer_level).collect();

        // data channel
        let transmitters: Vec<usize> = actions
            .iter()
            .enumerate()
            .filter(|&(i, a)| a.data == DataAction::Transmit && !self.ues[i].buffer.is_empty())
            .map(|(i, _)| i)
            .collect();
        let collision = transmitters.len() > 1;
        let mut received_from = None;
        let mut delivered = None;
        let mut duplicate = false;
        if let [ue] = transmitters[..] {
            let pdu = self.ues[ue].head().expect("transmitter has a PDU");
            received_from = Some(ue);
            if self.ledger.insert(pdu) {
                delivered = Some(pdu);
            } else {
                duplicate = true;
            }
        }

        for (ue, a) in self.ues.iter_mut().zip(actions) {
            if a.data == DataAction::Delete {
                ue.buffer.pop_front();
            }
        }

        let success = delivered.is_some() || (duplicate && self.cfg.reward_duplicates);
        let r_ext = if success || was_complete { 0.0 } else { -1.0 };

        let requests: Vec<bool> = actions
            .iter()
            .map(|a| a.signal == Signal::Request)
            .collect();
        let messages = bs_respond(received_from, &requests, &mut self.rng);

        for (i, ue) in self.ues.iter_mut().enumerate() {
            let entry = HistoryEntry {
                buffer: levels_before[i],
                action: actions[i],
                msg_before: ue.last_msg,
                msg_after: messages[i],
            };
            ue.history.pop_back();
            ue.history.push_front(Some(entry));
            ue.last_msg = messages[i];
        }

        let t = self.t;
        self.t += 1;
        Ok(StepOutcome {
            t,
            observations: self.observations(),
            r_ext,
            delivered,
            received_from,
            collision,
            messages,
            all_delivered: self.all_delivered(),
            ledger_size: self.ledger.len(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    const TX: Action = Action {
        data: DataAction::Transmit,
        signal: Signal::Silent,
    };
    const IDLE: Action = Action::NOOP;

    fn env(n: usize, p: usize, m: usize, t: usize) -> MacEnv {
        let mut e = MacEnv::new(EnvConfig::new(n, p, m, t)).unwrap();
        e.reset(42);
        e
    }

    #[test]
    fn joint_index_is_bijective() {
        let mut seen = [false; NUM_ACTIONS];
        for a in Action::all() {
            assert_eq!(Action::from_index(a.joint_index()).unwrap(), a);
            seen[a.joint_index()] = true;
        }
        assert!(seen.iter().all(|&s| s));
        assert!(Action::from_index(6).is_err());
    }

    #[test]
    fn reset_fills_buffers_and_zero_pads_history() {
        let mut e = MacEnv::new(EnvConfig::new(2, 2, 3, 32)).unwrap();
        let obs = e.reset(1);
        for o in &obs {
            assert_eq!(o.to_tuple(), vec![2, 0, 0, 0, 0, 0, 0, 0, 0, 0]);
            assert_eq!(o.history.len(), 3);
        }
        let mut e = MacEnv::new(EnvConfig::new(2, 1, 3, 32)).unwrap();
        assert!(e.reset(1).iter().all(|o| o.buffer == 1));
        assert_eq!(e.pct_delivered(), 0.0);
    }

    #[test]
    fn invalid_config_is_rejected() {
        assert!(matches!(
            MacEnv::new(EnvConfig::new(2, 0, 3, 32)),
            Err(Error::Config(_))
        ));
        assert!(MacEnv::new(EnvConfig::new(0, 1, 3, 32)).is_err());
    }

    #[test]
    fn single_transmission_delivers() {
        let mut e = env(2, 1, 3, 32);
        let out = e.step(&[TX, IDLE]).unwrap();
        assert_eq!(out.r_ext, 0.0);
        assert_eq!(out.delivered, Some(PduId { ue: 0, seq: 0 }));
        assert_eq!(out.messages, vec![BsMessage::Ack, BsMessage::NoGrant]);
        assert_eq!(e.pct_delivered(), 50.0);
        // transmission does not pop the buffer
        assert_eq!(e.ue(0).unwrap().buffer_level(), 1);
    }

    #[test]
    fn collision_delivers_nothing() {
        let mut e = env(2, 1, 3, 32);
        let out = e.step(&[TX, TX]).unwrap();
        assert!(out.collision);
        assert_eq!(out.delivered, None);
        assert_eq!(out.r_ext, -1.0);
    }

    #[test]
    fn after_everything_is_delivered_reward_is_zero() {
        let mut e = env(2, 1, 3, 32);
        e.step(&[TX, IDLE]).unwrap();
        e.step(&[IDLE, TX]).unwrap();
        assert_eq!(e.pct_delivered(), 100.0);
        let out = e.step(&[IDLE, IDLE]).unwrap();
        assert_eq!(out.r_ext, 0.0);
        assert!(out.all_delivered);
        let out = e.step(&[TX, TX]).unwrap();
        assert_eq!(out.r_ext, 0.0);
    }

    #[test]
    fn repeated_pdu_is_not_rewarded_by_default() {
        let mut e = env(2, 1, 3, 32);
        e.step(&[TX, IDLE]).unwrap();
        let out = e.step(&[TX, IDLE]).unwrap();
        assert_eq!(out.delivered, None);
        assert_eq!(out.received_from, Some(0));
        assert_eq!(out.messages[0], BsMessage::Ack);
        assert_eq!(out.r_ext, -1.0);
        assert_eq!(e.ledger().len(), 1);

        let mut cfg = EnvConfig::new(2, 1, 3, 32);
        cfg.reward_duplicates = true;
        let mut e = MacEnv::new(cfg).unwrap();
        e.reset(42);
        e.step(&[TX, IDLE]).unwrap();
        assert_eq!(e.step(&[TX, IDLE]).unwrap().r_ext, 0.0);
        assert_eq!(e.ledger().len(), 1);
    }

    #[test]
    fn transmit_or_delete_on_empty_buffer_is_noop() {
        let mut e = env(2, 1, 3, 32);
        let del = Action::new(DataAction::Delete, Signal::Silent);
        e.step(&[del, IDLE]).unwrap();
        assert_eq!(e.ue(0).unwrap().buffer_level(), 0);
        e.step(&[del, IDLE]).unwrap();
        assert_eq!(e.ue(0).unwrap().buffer_level(), 0);
        // UE0 empty: its transmit does not occupy the channel
        let out = e.step(&[TX, TX]).unwrap();
        assert!(!out.collision);
        assert_eq!(out.delivered, Some(PduId { ue: 1, seq: 0 }));
    }

    #[test]
    fn observation_after_one_step_with_ack() {
        let mut e = env(2, 1, 3, 32);
        let a = Action::from_index(3).unwrap();
        assert_eq!((a.data, a.signal), (DataAction::Transmit, Signal::Request));
        e.step(&[a, IDLE]).unwrap();
        let o = e.observation(0).unwrap();
        assert_eq!(o.to_tuple(), vec![1, 1, 3, 2, 0, 0, 0, 0, 0, 0]);
        assert_eq!(o.to_tuple().len(), 1 + 3 * 3);
        assert!(matches!(e.observation(2), Err(Error::Bounds { .. })));
    }

    #[test]
    fn strict_indexing_shows_message_held_at_decision_time() {
        let mut cfg = EnvConfig::new(2, 1, 3, 32);
        cfg.strict_obs_indexing = true;
        let mut e = MacEnv::new(cfg).unwrap();
        e.reset(0);
        let a = Action::from_index(3).unwrap();
        e.step(&[a, IDLE]).unwrap();
        assert_eq!(
            e.observation(0).unwrap().to_tuple(),
            vec![1, 1, 3, 0, 0, 0, 0, 0, 0, 0]
        );
        e.step(&[IDLE, IDLE]).unwrap();
        assert_eq!(
            e.observation(0).unwrap().to_tuple(),
            vec![1, 1, 0, 2, 1, 3, 0, 0, 0, 0]
        );
    }

    #[test]
    fn stepping_past_the_horizon_is_an_error() {
        let mut e = env(2, 1, 3, 2);
        e.step(&[IDLE, IDLE]).unwrap();
        e.step(&[IDLE, IDLE]).unwrap();
        assert!(matches!(e.step(&[IDLE, IDLE]), Err(Error::Protocol(_))));
        let mut fresh = MacEnv::new(EnvConfig::new(2, 1, 3, 2)).unwrap();
        assert!(matches!(fresh.step(&[IDLE, IDLE]), Err(Error::Protocol(_))));
    }

    #[test]
    fn bs_ack_overrides_request_and_grants_other() {
        let mut rng = StreamRng::seed_from_u64(0);
        assert_eq!(
            bs_respond(Some(0), &[true, true], &mut rng),
            vec![BsMessage::Ack, BsMessage::Grant]
        );
        assert_eq!(
            bs_respond(None, &[false, false], &mut rng),
            vec![BsMessage::NoGrant, BsMessage::NoGrant]
        );
    }

    #[test]
    fn bs_lottery_is_uniform() {
        let mut rng = StreamRng::seed_from_u64(123);
        let trials = 10_000;
        let mut first = 0;
        for _ in 0..trials {
            let m = bs_respond(None, &[true, true], &mut rng);
            match (m[0], m[1]) {
                (BsMessage::Grant, BsMessage::NoGrant) => first += 1,
                (BsMessage::NoGrant, BsMessage::Grant) => {}
                other => panic!("unexpected reply {other:?}"),
            }
        }
        let share = first as f64 / trials as f64;
        assert!((share - 0.5).abs() < 0.02, "{share}");
    }

    #[test]
    fn same_seed_same_trajectory() {
        let req = Action::new(DataAction::Noop, Signal::Request);
        let script = [[req, req], [TX, req], [req, TX], [TX, TX]];
        let run = |seed| {
            let mut e = MacEnv::new(EnvConfig::new(2, 2, 3, 8)).unwrap();
            let first = e.reset(seed);
            let outs: Vec<StepOutcome> = script.iter().map(|a| e.step(a).unwrap()).collect();
            (first, outs)
        };
        assert_eq!(run(5), run(5));
    }

    #[test]
    fn trace_row_format() {
        let mut e = env(2, 1, 3, 4);
        let acts = [TX, Action::from_index(1).unwrap()];
        let out = e.step(&acts).unwrap();
        assert_eq!(
            StepOutcome::trace_header(2),
            "t,a0,a1,m0,m1,r_ext,delivered"
        );
        assert_eq!(out.trace_row(&acts), "0,2,1,2,1,0,1");
    }
}

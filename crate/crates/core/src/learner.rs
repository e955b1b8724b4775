//! Online context learner.
//!
//! Scenarios arrive one at a time as `(id, action, distribution)`. For every
//! action the learner keeps a list of contexts. An incoming scenario joins the
//! context whose barycenter is KL-closest when that divergence is below
//! `delta_add`; otherwise it opens a new context. After every observation the
//! contexts of that action are merged pairwise, smallest semi-weighted
//! Jensen-Shannon divergence first, until no pair is below `delta_merge`.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distributions::{
    kl_divergence, smooth, sw_js_divergence, DistributionError, JudgmentDistribution,
    DEFAULT_EPSILON,
};

pub const SNAPSHOT_VERSION: u32 = 1;

/// Tolerance when checking that a stored component sum matches its count.
const SUM_CHECK_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LearnerError {
    #[error("scenario {id} was already observed for action {action}")]
    DuplicateScenario { action: String, id: String },
    #[error("action {0} is not registered")]
    UnknownAction(String),
    #[error("invalid learner config: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Distribution(#[from] DistributionError),
    #[error("snapshot version {found} is not supported (expected {expected})")]
    SchemaVersionMismatch { found: u32, expected: u32 },
    #[error("corrupt snapshot: {0}")]
    CorruptDocument(String),
}

/// Thresholds in nats plus the smoothing constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnerConfig {
    pub delta_add: f64,
    pub delta_merge: f64,
    pub epsilon: f64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self { delta_add: 0.12, delta_merge: 0.03, epsilon: DEFAULT_EPSILON }
    }
}

impl LearnerConfig {
    pub fn new(delta_add: f64, delta_merge: f64) -> Self {
        Self { delta_add, delta_merge, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), LearnerError> {
        if !(self.delta_add > 0.0 && self.delta_add.is_finite()) {
            return Err(LearnerError::InvalidConfig("delta_add must be positive"));
        }
        if !(self.delta_merge > 0.0 && self.delta_merge.is_finite()) {
            return Err(LearnerError::InvalidConfig("delta_merge must be positive"));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(LearnerError::InvalidConfig("epsilon must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// A moral context: the scenarios of one action that share a judgment profile.
///
/// The barycenter is never stored; it is derived from the exact component
/// sums so that repeated updates cannot drift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Context {
    pub id: u64,
    pub member_ids: Vec<String>,
    pub sum_distribution: [f64; 3],
    pub size: u64,
}

impl Context {
    fn singleton(id: u64, scenario: String, dist: &JudgmentDistribution) -> Self {
        Self { id, member_ids: alloc::vec![scenario], sum_distribution: *dist.as_array(), size: 1 }
    }

    pub fn barycenter(&self) -> JudgmentDistribution {
        // Invariant: size >= 1 and the sum is a sum of `size` distributions.
        JudgmentDistribution::from_weights(self.sum_distribution)
            .expect("context sums are non-negative with positive total")
    }

    fn absorb_scenario(&mut self, scenario: String, dist: &JudgmentDistribution) {
        let p = dist.as_array();
        for i in 0..3 {
            self.sum_distribution[i] += p[i];
        }
        self.size += 1;
        self.member_ids.push(scenario);
    }

    fn absorb_context(&mut self, other: Context) {
        for i in 0..3 {
            self.sum_distribution[i] += other.sum_distribution[i];
        }
        self.size += other.size;
        self.member_ids.extend(other.member_ids);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Event {
    Created { seq: u64, action: String, context: u64, scenario: String },
    Assigned { seq: u64, action: String, context: u64, scenario: String, divergence: f64 },
    Merged { seq: u64, action: String, src: u64, dst: u64, divergence: f64 },
}

impl Event {
    pub fn seq(&self) -> u64 {
        match self {
            Event::Created { seq, .. } | Event::Assigned { seq, .. } | Event::Merged { seq, .. } => {
                *seq
            }
        }
    }
}

/// What happened to a single observation, before merging.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Placement {
    Assigned { context: u64, divergence: f64 },
    Created { context: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnerState {
    config: LearnerConfig,
    actions: BTreeMap<String, Vec<Context>>,
    events: Vec<Event>,
    next_context_id: u64,
    next_seq: u64,
    registry: Option<BTreeSet<String>>,
}

impl LearnerState {
    pub fn new(config: LearnerConfig) -> Result<Self, LearnerError> {
        config.validate()?;
        Ok(Self {
            config,
            actions: BTreeMap::new(),
            events: Vec::new(),
            next_context_id: 0,
            next_seq: 0,
            registry: None,
        })
    }

    /// Strict mode: observations for actions outside `actions` are rejected.
    pub fn with_registry<I, S>(mut self, actions: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.registry = Some(actions.into_iter().map(Into::into).collect());
        self
    }

    pub fn config(&self) -> &LearnerConfig {
        &self.config
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn actions(&self) -> impl Iterator<Item = &str> {
        self.actions.keys().map(String::as_str)
    }

    pub fn contexts(&self, action: &str) -> &[Context] {
        self.actions.get(action).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn all_contexts(&self) -> impl Iterator<Item = (&str, &Context)> {
        self.actions.iter().flat_map(|(a, cs)| cs.iter().map(move |c| (a.as_str(), c)))
    }

    pub fn n_contexts(&self) -> usize {
        self.actions.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Context id holding `scenario` under `action`.
    pub fn context_of(&self, action: &str, scenario: &str) -> Option<&Context> {
        self.contexts(action).iter().find(|c| c.member_ids.iter().any(|m| m == scenario))
    }

    /// Scenario id to context id, for one action.
    pub fn assignments(&self, action: &str) -> BTreeMap<String, u64> {
        let mut out = BTreeMap::new();
        for c in self.contexts(action) {
            for m in &c.member_ids {
                out.insert(m.clone(), c.id);
            }
        }
        out
    }

    fn push_event(&mut self, make: impl FnOnce(u64) -> Event) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.events.push(make(seq));
    }

    /// Adding rule followed by a merge pass to fixpoint.
    pub fn observe(
        &mut self,
        scenario_id: &str,
        action: &str,
        dist: &JudgmentDistribution,
    ) -> Result<Placement, LearnerError> {
        if let Some(registry) = &self.registry {
            if !registry.contains(action) {
                return Err(LearnerError::UnknownAction(action.to_string()));
            }
        }
        if self.context_of(action, scenario_id).is_some() {
            return Err(LearnerError::DuplicateScenario {
                action: action.to_string(),
                id: scenario_id.to_string(),
            });
        }

        let eps = self.config.epsilon;
        let incoming = smooth(dist, eps);
        let contexts = self.actions.entry(action.to_string()).or_default();

        let mut best: Option<(usize, f64)> = None;
        for (i, c) in contexts.iter().enumerate() {
            let kl = kl_divergence(&incoming, &smooth(&c.barycenter(), eps))?;
            // Strict comparison: the earliest-created context wins ties.
            if best.is_none_or(|(_, b)| kl < b) {
                best = Some((i, kl));
            }
        }

        let placement = match best {
            Some((i, kl)) if kl < self.config.delta_add => {
                let c = &mut contexts[i];
                c.absorb_scenario(scenario_id.to_string(), dist);
                Placement::Assigned { context: c.id, divergence: kl }
            }
            _ => {
                let id = self.next_context_id;
                self.next_context_id += 1;
                contexts.push(Context::singleton(id, scenario_id.to_string(), dist));
                Placement::Created { context: id }
            }
        };

        let (action_s, scenario_s) = (action.to_string(), scenario_id.to_string());
        match placement {
            Placement::Assigned { context, divergence } => self.push_event(|seq| Event::Assigned {
                seq,
                action: action_s,
                context,
                scenario: scenario_s,
                divergence,
            }),
            Placement::Created { context } => self.push_event(|seq| Event::Created {
                seq,
                action: action_s,
                context,
                scenario: scenario_s,
            }),
        }

        self.merge_pass(action)?;
        Ok(placement)
    }

    /// Merges the closest qualifying pair until none remains below
    /// `delta_merge`. The lower-id context survives. Returns the merge count.
    pub fn merge_pass(&mut self, action: &str) -> Result<usize, LearnerError> {
        let eps = self.config.epsilon;
        let threshold = self.config.delta_merge;
        let mut merges = 0;
        loop {
            let Some(contexts) = self.actions.get_mut(action) else {
                return Ok(merges);
            };
            let smoothed: Vec<JudgmentDistribution> =
                contexts.iter().map(|c| smooth(&c.barycenter(), eps)).collect();
            let mut best: Option<(usize, usize, f64)> = None;
            for i in 0..contexts.len() {
                for j in (i + 1)..contexts.len() {
                    let d = sw_js_divergence(
                        &smoothed[i],
                        contexts[i].size,
                        &smoothed[j],
                        contexts[j].size,
                    )?;
                    if d < threshold && best.is_none_or(|(_, _, b)| d < b) {
                        best = Some((i, j, d));
                    }
                }
            }
            let Some((i, j, divergence)) = best else {
                return Ok(merges);
            };
            // Contexts are kept in creation (= id) order, so i holds the lower id.
            let absorbed = contexts.remove(j);
            let (src, dst) = (absorbed.id, contexts[i].id);
            contexts[i].absorb_context(absorbed);
            let action_s = action.to_string();
            self.push_event(|seq| Event::Merged { seq, action: action_s, src, dst, divergence });
            merges += 1;
        }
    }

    /// Folds `observe` over a stream in order.
    pub fn run_stream<'a, I>(config: LearnerConfig, stream: I) -> Result<Self, LearnerError>
    where
        I: IntoIterator<Item = (&'a str, &'a str, &'a JudgmentDistribution)>,
    {
        let mut state = Self::new(config)?;
        for (id, action, dist) in stream {
            state.observe(id, action, dist)?;
        }
        Ok(state)
    }

    pub fn to_snapshot(&self) -> Snapshot {
        Snapshot {
            version: SNAPSHOT_VERSION,
            config: self.config,
            actions: self
                .actions
                .iter()
                .map(|(action, contexts)| ActionContexts {
                    action: action.clone(),
                    contexts: contexts.clone(),
                })
                .collect(),
            events: self.events.clone(),
            next_context_id: self.next_context_id,
            next_seq: self.next_seq,
            registry: self.registry.as_ref().map(|r| r.iter().cloned().collect()),
        }
    }

    pub fn from_snapshot(snapshot: Snapshot) -> Result<Self, LearnerError> {
        if snapshot.version != SNAPSHOT_VERSION {
            return Err(LearnerError::SchemaVersionMismatch {
                found: snapshot.version,
                expected: SNAPSHOT_VERSION,
            });
        }
        snapshot.config.validate().map_err(|e| LearnerError::CorruptDocument(e.to_string()))?;
        let corrupt = |msg: &str| LearnerError::CorruptDocument(msg.to_string());

        let mut actions = BTreeMap::new();
        let mut ids = BTreeSet::new();
        for entry in snapshot.actions {
            let mut members = BTreeSet::new();
            let mut last_id = None;
            for c in &entry.contexts {
                if c.size == 0 || c.size as usize != c.member_ids.len() {
                    return Err(corrupt("context size does not match its member list"));
                }
                if !ids.insert(c.id) || c.id >= snapshot.next_context_id {
                    return Err(corrupt("duplicate or out-of-range context id"));
                }
                if last_id.is_some_and(|l| l >= c.id) {
                    return Err(corrupt("contexts are not in id order"));
                }
                last_id = Some(c.id);
                let s = c.sum_distribution;
                if s.iter().any(|v| !(v.is_finite() && *v >= 0.0))
                    || libm::fabs(s[0] + s[1] + s[2] - c.size as f64)
                        > SUM_CHECK_TOLERANCE * c.size as f64
                {
                    return Err(corrupt("context sum does not match its size"));
                }
                for m in &c.member_ids {
                    if !members.insert(m.clone()) {
                        return Err(corrupt("scenario appears in two contexts"));
                    }
                }
            }
            if actions.insert(entry.action, entry.contexts).is_some() {
                return Err(corrupt("action listed twice"));
            }
        }
        if snapshot.events.iter().any(|e| e.seq() >= snapshot.next_seq) {
            return Err(corrupt("event sequence number out of range"));
        }
        Ok(Self {
            config: snapshot.config,
            actions,
            events: snapshot.events,
            next_context_id: snapshot.next_context_id,
            next_seq: snapshot.next_seq,
            registry: snapshot.registry.map(|r| r.into_iter().collect()),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_snapshot()).expect("snapshot serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, LearnerError> {
        let snapshot: Snapshot = serde_json::from_str(text)
            .map_err(|e| LearnerError::CorruptDocument(e.to_string()))?;
        Self::from_snapshot(snapshot)
    }
}

/// Versioned, serializable form of a [`LearnerState`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub version: u32,
    pub config: LearnerConfig,
    pub actions: Vec<ActionContexts>,
    pub events: Vec<Event>,
    pub next_context_id: u64,
    pub next_seq: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub registry: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionContexts {
    pub action: String,
    pub contexts: Vec<Context>,
}

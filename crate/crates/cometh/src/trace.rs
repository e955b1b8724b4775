//! Follows one scenario through every stage of a finished run.

use std::fmt;

use cometh_core::distributions::emd;
use cometh_core::generalization::softmax;
use cometh_core::{Judgment, JudgmentDistribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::{Gateway, TemplateId};
use crate::pipeline::{load_features, load_model, load_state, scenario_actions, scenarios};
use crate::run::RunDir;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextDistance {
    pub context_id: u64,
    pub size: u64,
    pub barycenter: JudgmentDistribution,
    pub emd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub scenario_id: String,
    pub text: String,
    pub distribution: JudgmentDistribution,
    pub majority: Judgment,
    pub reformulations: Vec<(TemplateId, String)>,
    pub action: String,
    pub contexts: Vec<ContextDistance>,
    pub assigned_context: u64,
    pub nearest_context: u64,
    pub feature_template: TemplateId,
    pub features: Vec<(String, u8)>,
    /// Per context, in `contexts` order; empty for single-context actions.
    pub scores: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub predicted_context: u64,
    pub predicted_judgment: Judgment,
    pub aligned: bool,
}

pub fn trace(run: &RunDir, gateway: &Gateway, scenario_id: &str, template: TemplateId) -> Result<Trace> {
    let scenarios = scenarios(run)?;
    let actions = scenario_actions(run, &scenarios)?;
    let idx = scenarios
        .iter()
        .position(|s| s.id == scenario_id)
        .ok_or_else(|| Error::Data(format!("no scenario with id {scenario_id:?}")))?;
    let scenario = &scenarios[idx];
    let action = &actions[idx];
    let distribution = scenario.distribution();
    let majority = scenario.counts().majority();

    let reformulations = TemplateId::EXTRACTION
        .iter()
        .map(|&t| Ok((t, gateway.extract_action(&scenario.text, t)?)))
        .collect::<Result<Vec<_>>>()?;

    let state = load_state(run)?;
    let contexts: Vec<ContextDistance> = state
        .contexts(action)
        .iter()
        .map(|c| {
            let b = c.barycenter();
            ContextDistance { context_id: c.id, size: c.size, emd: emd(&distribution, &b), barycenter: b }
        })
        .collect();
    let assigned_context = state
        .context_of(action, scenario_id)
        .ok_or_else(|| Error::Data(format!("{scenario_id} has no context")))?
        .id;
    let nearest_context = contexts
        .iter()
        .min_by(|a, b| a.emd.total_cmp(&b.emd).then(a.context_id.cmp(&b.context_id)))
        .map(|c| c.context_id)
        .expect("action has a context");

    let file = load_features(run, template)?;
    let af = file
        .actions
        .iter()
        .find(|a| &a.action == action)
        .ok_or_else(|| Error::Data(format!("no features for action {action}")))?;
    let row_idx = af.scenario_ids.iter().position(|s| s == scenario_id).expect("feature row per scenario");
    let x = &af.rows[row_idx];
    let features = af.feature_names.iter().cloned().zip(x.iter().copied()).collect();

    let (scores, probabilities, predicted_context) = match load_model(run, template, action)? {
        Some(model) => {
            let s = model.score(x).map_err(Error::data)?;
            let p = softmax(&s);
            let c = model.predict_context(x).map_err(Error::data)?;
            (s, p, c)
        }
        None => (Vec::new(), Vec::new(), assigned_context),
    };
    let predicted_judgment = contexts
        .iter()
        .find(|c| c.context_id == predicted_context)
        .map(|c| Judgment::argmax(c.barycenter.as_array()))
        .ok_or_else(|| Error::Data(format!("context {predicted_context} not found")))?;

    Ok(Trace {
        scenario_id: scenario_id.to_string(),
        text: scenario.text.clone(),
        distribution,
        majority,
        reformulations,
        action: action.clone(),
        contexts,
        assigned_context,
        nearest_context,
        feature_template: template,
        features,
        scores,
        probabilities,
        predicted_context,
        predicted_judgment,
        aligned: predicted_judgment == majority,
    })
}

fn triple(d: &JudgmentDistribution) -> String {
    let p = d.as_array();
    format!("(B {:.3}, N {:.3}, S {:.3})", p[0], p[1], p[2])
}

impl fmt::Display for Trace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Scenario {}: {}", self.scenario_id, self.text)?;
        writeln!(f, "Human judgments {} -> majority {}", triple(&self.distribution), self.majority)?;
        writeln!(f, "\nStage 0: pre-processing")?;
        for (t, phrase) in &self.reformulations {
            writeln!(f, "  {:<14} {phrase}", t.as_str())?;
        }
        writeln!(f, "  core action    {}", self.action)?;
        writeln!(f, "\nStage 1: context assignment")?;
        for c in &self.contexts {
            let mark = match (c.context_id == self.assigned_context, c.context_id == self.nearest_context) {
                (true, true) => "  <- assigned, nearest",
                (true, false) => "  <- assigned",
                (false, true) => "  <- nearest",
                _ => "",
            };
            writeln!(f, "  C{:<3} n={:<3} {}  EMD = {:.3}{mark}", c.context_id, c.size, triple(&c.barycenter), c.emd)?;
        }
        writeln!(f, "\nStage 2: feature vector ({})", self.feature_template)?;
        for (name, v) in &self.features {
            writeln!(f, "  {v}  {name}")?;
        }
        writeln!(f, "\nStage 3: scores")?;
        if self.scores.is_empty() {
            writeln!(f, "  single context; no model")?;
        }
        for ((c, s), p) in self.contexts.iter().zip(&self.scores).zip(&self.probabilities) {
            writeln!(f, "  C{:<3} s = {s:>8.3}  p = {p:.3}", c.context_id)?;
        }
        writeln!(f, "  predicted cluster = C{}", self.predicted_context)?;
        writeln!(
            f,
            "  predicted judgment = {} (human majority {}, {})",
            self.predicted_judgment,
            self.majority,
            if self.aligned { "aligned" } else { "not aligned" }
        )
    }
}

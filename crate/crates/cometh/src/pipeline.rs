//! Pipeline stages over a run directory: preprocess, learn, features, train,
//! evaluate, plus the end-to-end judge baseline.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use cometh_core::generalization::{
    export_weights, fold_partition, run_fold, summarize_folds, train, CvData, CvReport, FeatureMatrix,
    GeneralizationError, GeneralizationModel,
};
use cometh_core::learner::LearnerState;
use cometh_core::metrics::{self, ClusterAlignment, EvalScores, HomogeneityMode, DEFAULT_LAMBDA};
use cometh_core::synthetic::BENCHMARK_ACTION;
use cometh_core::{seed, Judgment, JudgmentDistribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{self, read_json, Scenario};
use crate::error::{Error, Result};
use crate::gateway::{Gateway, TemplateId};
use crate::preprocess::{self, ActionClusters};
use crate::run::{slug, write_bytes, write_json, ActionSource, RunDir, Stage, StageOutcome};

pub const PIPELINE: [Stage; 5] = [Stage::Preprocess, Stage::Learn, Stage::Features, Stage::Train, Stage::Evaluate];

/// Runs one stage, or skips it when its outputs are current.
pub fn run_stage(run: &mut RunDir, gateway: &Gateway, stage: Stage, force: bool) -> Result<StageOutcome> {
    run.run_stage(stage, force, |run, dir| match stage {
        Stage::Preprocess => preprocess(run, gateway, dir),
        Stage::Learn => learn(run, dir),
        Stage::Features => features(run, gateway, dir),
        Stage::Train => train_stage(run, dir),
        Stage::Evaluate => evaluate(run, dir),
        Stage::Baseline => baseline(run, gateway, dir),
    })
}

pub fn scenarios(run: &RunDir) -> Result<Vec<Scenario>> {
    dataset::ingest(&run.config.dataset)
}

/// Action name per scenario, in dataset order.
pub fn scenario_actions(run: &RunDir, scenarios: &[Scenario]) -> Result<Vec<String>> {
    match run.config.actions {
        ActionSource::Single => Ok(vec![BENCHMARK_ACTION.to_string(); scenarios.len()]),
        ActionSource::Preprocess => {
            let clusters: ActionClusters = read_json(&run.require(Stage::Preprocess, "actions.json")?)?;
            let by_id = clusters.action_of();
            scenarios
                .iter()
                .map(|s| {
                    by_id.get(s.id.as_str()).map(|a| a.to_string()).ok_or_else(|| {
                        Error::Data(format!("scenario {} is missing from the preprocessing output", s.id))
                    })
                })
                .collect()
        }
    }
}

pub fn load_state(run: &RunDir) -> Result<LearnerState> {
    let path = run.require(Stage::Learn, "state.json")?;
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    LearnerState::from_json(&text).map_err(Error::data)
}

fn csv_bytes(header: &[String], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(Error::internal)?;
    for r in rows {
        w.write_record(r).map_err(Error::internal)?;
    }
    w.into_inner().map_err(Error::internal)
}

// ---------------------------------------------------------------------------
// preprocess

pub fn preprocess(run: &RunDir, gateway: &Gateway, dir: &Path) -> Result<()> {
    let scenarios = scenarios(run)?;
    let cfg = &run.config;
    let result = preprocess::cluster_actions(&scenarios, &cfg.preprocess, cfg.seed, &cfg.embedding, gateway)?;
    preprocess::write_outputs(dir, &scenarios, &result)
}

// ---------------------------------------------------------------------------
// learn

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnReport {
    pub n_contexts: usize,
    pub contexts_per_action: BTreeMap<String, usize>,
    pub cluster_alignment: ClusterAlignment,
    /// Scores against the canonical set, when every scenario is labeled with
    /// a canonical.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<EvalScores>,
}

pub fn learn(run: &RunDir, dir: &Path) -> Result<()> {
    let scenarios = scenarios(run)?;
    let actions = scenario_actions(run, &scenarios)?;
    let mut state = LearnerState::new(run.config.learner).map_err(|e| Error::Config(e.to_string()))?;
    for (s, a) in scenarios.iter().zip(&actions) {
        state.observe(&s.id, a, &s.distribution()).map_err(Error::data)?;
    }
    write_bytes(&dir.join("state.json"), state.to_json().as_bytes())?;

    let mut rows = Vec::new();
    for action in state.actions() {
        for c in state.contexts(action) {
            let b = c.barycenter();
            let p = b.as_array();
            rows.push(vec![
                action.to_string(),
                c.id.to_string(),
                c.size.to_string(),
                p[0].to_string(),
                p[1].to_string(),
                p[2].to_string(),
                b.mode().as_str().to_string(),
            ]);
        }
    }
    let header: Vec<String> =
        ["action", "context_id", "size", "blame", "neutral", "support", "dominant"].map(String::from).to_vec();
    write_bytes(&dir.join("contexts.csv"), &csv_bytes(&header, &rows)?)?;

    let assignment_rows: Vec<Vec<String>> = scenarios
        .iter()
        .zip(&actions)
        .map(|(s, a)| {
            let c = state.context_of(a, &s.id).expect("observed").id;
            vec![s.id.clone(), a.clone(), c.to_string()]
        })
        .collect();
    let header: Vec<String> = ["scenario_id", "action", "context_id"].map(String::from).to_vec();
    write_bytes(&dir.join("assignments.csv"), &csv_bytes(&header, &assignment_rows)?)?;

    let majority: BTreeMap<String, Judgment> =
        scenarios.iter().map(|s| (s.id.clone(), s.counts().majority())).collect();
    let cluster_alignment = metrics::cluster_alignment_rate(&state, &majority).map_err(Error::data)?;
    let synthetic = synthetic_scores(run, &scenarios, &state)?;
    let report = LearnReport {
        n_contexts: state.n_contexts(),
        contexts_per_action: state.actions().map(|a| (a.to_string(), state.contexts(a).len())).collect(),
        cluster_alignment,
        synthetic,
    };
    write_json(&dir.join("report.json"), &report)
}

fn synthetic_scores(run: &RunDir, scenarios: &[Scenario], state: &LearnerState) -> Result<Option<EvalScores>> {
    if run.config.actions != ActionSource::Single {
        return Ok(None);
    }
    let canonicals = dataset::load_canonicals(run.config.canonicals.as_deref())?;
    let mut labels = BTreeMap::new();
    for s in scenarios {
        match s.ideal_action.as_deref() {
            Some(l) if canonicals.get(l).is_some() => {
                labels.insert(s.id.clone(), l.to_string());
            }
            _ => return Ok(None),
        }
    }
    metrics::evaluate(state, &canonicals, &labels, DEFAULT_LAMBDA, HomogeneityMode::SizeWeighted)
        .map(Some)
        .map_err(Error::data)
}

// ---------------------------------------------------------------------------
// features

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionFeatures {
    pub action: String,
    pub scenario_ids: Vec<String>,
    /// Learned context per scenario.
    pub contexts: Vec<u64>,
    /// Context ids in the order they were shown to the model.
    pub cluster_context_ids: Vec<u64>,
    pub cluster_features: Vec<Vec<String>>,
    pub feature_names: Vec<String>,
    pub rows: Vec<Vec<u8>>,
}

impl ActionFeatures {
    pub fn matrix(&self) -> Result<FeatureMatrix> {
        FeatureMatrix::new(self.feature_names.clone(), self.rows.clone()).map_err(Error::data)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureFile {
    pub template: TemplateId,
    pub actions: Vec<ActionFeatures>,
}

/// Union of the per-cluster lists, first occurrence wins (case-insensitive).
pub fn union_features(lists: &[Vec<String>]) -> Vec<String> {
    let mut seen = BTreeSet::new();
    lists.iter().flatten().filter(|f| seen.insert(f.trim().to_lowercase())).cloned().collect()
}

pub fn build_action_features(
    gateway: &Gateway,
    template: TemplateId,
    action: &str,
    members: &[&Scenario],
    state: &LearnerState,
) -> Result<ActionFeatures> {
    let contexts: Vec<u64> = members
        .iter()
        .map(|s| state.context_of(action, &s.id).map(|c| c.id))
        .collect::<Option<_>>()
        .ok_or_else(|| Error::Data(format!("learner state does not cover action {action}")))?;
    let cluster_context_ids: Vec<u64> = state.contexts(action).iter().map(|c| c.id).collect();
    let cluster_texts: Vec<Vec<String>> = cluster_context_ids
        .iter()
        .map(|cid| members.iter().zip(&contexts).filter(|(_, c)| *c == cid).map(|(s, _)| s.text.clone()).collect())
        .collect();
    let cluster_features = gateway.extract_features(&cluster_texts, template)?;
    let feature_names = union_features(&cluster_features);
    let pairs: Vec<(usize, usize)> =
        (0..members.len()).flat_map(|i| (0..feature_names.len()).map(move |f| (i, f))).collect();
    let values = gateway.map(&pairs, |&(i, f)| gateway.evaluate_feature(&members[i].text, &feature_names[f]))?;
    let rows = values.chunks(feature_names.len()).map(<[u8]>::to_vec).collect();
    Ok(ActionFeatures {
        action: action.to_string(),
        scenario_ids: members.iter().map(|s| s.id.clone()).collect(),
        contexts,
        cluster_context_ids,
        cluster_features,
        feature_names,
        rows,
    })
}

fn members_by_action<'a>(scenarios: &'a [Scenario], actions: &[String]) -> BTreeMap<String, Vec<&'a Scenario>> {
    let mut out: BTreeMap<String, Vec<&Scenario>> = BTreeMap::new();
    for (s, a) in scenarios.iter().zip(actions) {
        out.entry(a.clone()).or_default().push(s);
    }
    out
}

pub fn features(run: &RunDir, gateway: &Gateway, dir: &Path) -> Result<()> {
    let scenarios = scenarios(run)?;
    let actions = scenario_actions(run, &scenarios)?;
    let state = load_state(run)?;
    let groups = members_by_action(&scenarios, &actions);
    for &template in &run.config.features.templates {
        let actions = groups
            .iter()
            .map(|(action, members)| build_action_features(gateway, template, action, members, &state))
            .collect::<Result<Vec<_>>>()?;
        write_json(&dir.join(format!("{template}.json")), &FeatureFile { template, actions })?;
    }
    Ok(())
}

pub fn load_features(run: &RunDir, template: TemplateId) -> Result<FeatureFile> {
    read_json(&run.require(Stage::Features, &format!("{template}.json"))?)
}

// ---------------------------------------------------------------------------
// train

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvFile {
    pub template: TemplateId,
    pub action: String,
    pub folds: usize,
    pub holdout: usize,
    pub seed: u64,
    pub scenario_ids: Vec<String>,
    pub report: CvReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainEntry {
    pub template: TemplateId,
    pub action: String,
    /// Subdirectory under `train/<template>/`.
    pub slug: String,
    pub n_scenarios: usize,
    pub n_contexts: usize,
    pub n_features: usize,
    /// False when the action has a single context; nothing to discriminate.
    pub trained: bool,
    pub converged: bool,
    pub cv_accuracy: Option<f64>,
    pub cv_alignment: Option<f64>,
}

fn barycenters(state: &LearnerState, action: &str) -> BTreeMap<u64, JudgmentDistribution> {
    state.contexts(action).iter().map(|c| (c.id, c.barycenter())).collect()
}

fn weights_csv(model: &GeneralizationModel) -> Result<Vec<u8>> {
    let report = export_weights(model);
    let mut header = vec!["feature".to_string(), "weight".to_string()];
    header.extend(report.context_ids.iter().map(|c| format!("context_{c}")));
    let rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| {
            let mut row = vec![r.feature.clone(), r.weight.to_string()];
            row.extend(r.influence.iter().map(f64::to_string));
            row
        })
        .collect();
    csv_bytes(&header, &rows)
}

/// Folds actually used: the configured count, or as many full holdouts as
/// the action has scenarios for.
pub fn effective_folds(n: usize, folds: usize, holdout: usize) -> usize {
    folds.min(n / holdout)
}

pub fn train_stage(run: &RunDir, dir: &Path) -> Result<()> {
    let scenarios = scenarios(run)?;
    let majority: BTreeMap<&str, Judgment> =
        scenarios.iter().map(|s| (s.id.as_str(), s.counts().majority())).collect();
    let state = load_state(run)?;
    let gcfg = &run.config.generalization;
    let mut summary = Vec::new();
    for (ti, &template) in run.config.features.templates.iter().enumerate() {
        let file = load_features(run, template)?;
        for (ai, af) in file.actions.iter().enumerate() {
            let matrix = af.matrix()?;
            let n_contexts = af.contexts.iter().collect::<BTreeSet<_>>().len();
            let out = dir.join(template.as_str()).join(slug(&af.action));
            fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            let model = match train(&matrix, &af.contexts, &gcfg.train) {
                Ok(m) => Some(m),
                Err(GeneralizationError::SingleContext) => None,
                Err(e) => return Err(Error::Data(format!("{template}/{}: {e}", af.action))),
            };
            if let Some(m) = &model {
                write_json(&out.join("model.json"), m)?;
                write_json(&out.join("weights.json"), &export_weights(m))?;
                write_bytes(&out.join("weights.csv"), &weights_csv(m)?)?;
            }

            let folds = effective_folds(matrix.n_scenarios(), gcfg.folds, gcfg.holdout);
            let cv = if folds == 0 {
                None
            } else {
                let seed = seed::derive(run.config.seed, &[ti as u64, ai as u64]);
                let maj: Vec<Judgment> = af.scenario_ids.iter().map(|id| majority[id.as_str()]).collect();
                let bary = barycenters(&state, &af.action);
                let data = CvData { matrix: &matrix, assignments: &af.contexts, majority: &maj, barycenters: &bary };
                let parts = fold_partition(matrix.n_scenarios(), folds, gcfg.holdout, seed).map_err(Error::data)?;
                let results = parts
                    .par_iter()
                    .enumerate()
                    .map(|(k, h)| run_fold(&data, k, h, &gcfg.train))
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| Error::Data(format!("{template}/{}: {e}", af.action)))?;
                let report = summarize_folds(results);
                let file = CvFile {
                    template,
                    action: af.action.clone(),
                    folds,
                    holdout: gcfg.holdout,
                    seed,
                    scenario_ids: af.scenario_ids.clone(),
                    report,
                };
                write_json(&out.join("cv.json"), &file)?;
                Some(file.report)
            };
            summary.push(TrainEntry {
                template,
                action: af.action.clone(),
                slug: slug(&af.action),
                n_scenarios: matrix.n_scenarios(),
                n_contexts,
                n_features: matrix.n_features(),
                trained: model.is_some(),
                converged: model.as_ref().is_some_and(|m| m.converged),
                cv_accuracy: cv.as_ref().map(|r| r.accuracy),
                cv_alignment: cv.as_ref().map(|r| r.alignment_rate),
            });
        }
    }
    write_json(&dir.join("summary.json"), &summary)
}

pub fn load_model(run: &RunDir, template: TemplateId, action: &str) -> Result<Option<GeneralizationModel>> {
    let p = run.stage_dir(Stage::Train).join(template.as_str()).join(slug(action)).join("model.json");
    if p.is_file() {
        read_json(&p).map(Some)
    } else {
        Ok(None)
    }
}

// ---------------------------------------------------------------------------
// evaluate

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentEntry {
    pub template: TemplateId,
    pub action: String,
    pub n_predictions: usize,
    pub alignment_rate: f64,
    pub context_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentTable {
    pub actions: Vec<String>,
    pub entries: Vec<AlignmentEntry>,
    /// Unweighted mean over actions, per template.
    pub mean_by_template: BTreeMap<TemplateId, f64>,
}

/// Alignment recomputed from the persisted fold predictions and the
/// dataset's majority judgments.
pub fn recompute_alignment(cv: &CvFile, majority: &BTreeMap<String, Judgment>) -> Result<(usize, f64, f64)> {
    let mut predicted = BTreeMap::new();
    let mut truth = BTreeMap::new();
    let mut hits = 0usize;
    for fold in &cv.report.folds {
        for (k, &i) in fold.holdout.iter().enumerate() {
            let id = cv.scenario_ids.get(i).ok_or_else(|| Error::Data("cv index out of range".into()))?;
            predicted.insert(id.clone(), fold.predicted_judgments[k]);
            let m = majority.get(id).ok_or_else(|| Error::Data(format!("unknown scenario {id}")))?;
            truth.insert(id.clone(), *m);
            hits += usize::from(fold.predicted_contexts[k] == fold.true_contexts[k]);
        }
    }
    let rate = metrics::alignment_rate(&predicted, &truth).map_err(Error::data)?;
    Ok((predicted.len(), rate, hits as f64 / predicted.len() as f64))
}

pub fn evaluate(run: &RunDir, dir: &Path) -> Result<()> {
    let scenarios = scenarios(run)?;
    let majority: BTreeMap<String, Judgment> =
        scenarios.iter().map(|s| (s.id.clone(), s.counts().majority())).collect();
    let summary: Vec<TrainEntry> = read_json(&run.require(Stage::Train, "summary.json")?)?;
    let mut entries = Vec::new();
    for e in &summary {
        let p = run.stage_dir(Stage::Train).join(e.template.as_str()).join(&e.slug).join("cv.json");
        if !p.is_file() {
            continue;
        }
        let cv: CvFile = read_json(&p)?;
        let (n, rate, accuracy) = recompute_alignment(&cv, &majority)?;
        if (rate - cv.report.alignment_rate).abs() > 1e-12 {
            return Err(Error::Internal(format!(
                "{}/{}: recomputed alignment {rate} differs from training report {}",
                e.template, e.action, cv.report.alignment_rate
            )));
        }
        entries.push(AlignmentEntry {
            template: e.template,
            action: e.action.clone(),
            n_predictions: n,
            alignment_rate: rate,
            context_accuracy: accuracy,
        });
    }
    let actions: Vec<String> =
        entries.iter().map(|e| e.action.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let mut mean_by_template = BTreeMap::new();
    for t in entries.iter().map(|e| e.template).collect::<BTreeSet<_>>() {
        let rates: Vec<f64> = entries.iter().filter(|e| e.template == t).map(|e| e.alignment_rate).collect();
        mean_by_template.insert(t, rates.iter().sum::<f64>() / rates.len() as f64);
    }
    let table = AlignmentTable { actions, entries, mean_by_template };
    write_json(&dir.join("alignment.json"), &table)?;
    write_bytes(&dir.join("alignment.csv"), &table_csv(&table, |e| e.alignment_rate, true)?)?;
    write_bytes(&dir.join("accuracy.csv"), &table_csv(&table, |e| e.context_accuracy, false)?)?;
    Ok(())
}

fn table_csv(table: &AlignmentTable, value: fn(&AlignmentEntry) -> f64, with_mean: bool) -> Result<Vec<u8>> {
    let mut header = vec!["template".to_string()];
    header.extend(table.actions.iter().cloned());
    if with_mean {
        header.push("mean".into());
    }
    let templates: BTreeSet<TemplateId> = table.entries.iter().map(|e| e.template).collect();
    let rows: Vec<Vec<String>> = templates
        .into_iter()
        .map(|t| {
            let mut row = vec![t.to_string()];
            for a in &table.actions {
                let v = table.entries.iter().find(|e| e.template == t && &e.action == a).map(value);
                row.push(v.map(|v| v.to_string()).unwrap_or_default());
            }
            if with_mean {
                row.push(table.mean_by_template[&t].to_string());
            }
            row
        })
        .collect();
    csv_bytes(&header, &rows)
}

// ---------------------------------------------------------------------------
// baseline

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineEntry {
    pub template: TemplateId,
    /// `ideal_action`, or "all" for unlabeled scenarios.
    pub group: String,
    pub n: usize,
    pub alignment_rate: f64,
    pub error_rate: f64,
}

pub fn baseline(run: &RunDir, gateway: &Gateway, dir: &Path) -> Result<()> {
    let scenarios = scenarios(run)?;
    let mut entries = Vec::new();
    let mut responses = Vec::new();
    for &template in &run.config.baseline.templates {
        let outcomes = gateway.map(&scenarios, |s| gateway.judge_scenario(&s.text, template))?;
        let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, s) in scenarios.iter().enumerate() {
            groups.entry(s.ideal_action.clone().unwrap_or_else(|| "all".into())).or_default().push(i);
            let line = serde_json::json!({
                "template": template,
                "scenario_id": s.id,
                "raw": outcomes[i].raw,
                "judgment": outcomes[i].judgment,
            });
            responses.push(serde_json::to_string(&line).map_err(Error::internal)?);
        }
        for (group, idx) in groups {
            let aligned =
                idx.iter().filter(|&&i| outcomes[i].judgment == Some(scenarios[i].counts().majority())).count();
            let error_rate = metrics::error_rate(idx.iter().map(|&i| outcomes[i].raw.as_str()));
            entries.push(BaselineEntry {
                template,
                group,
                n: idx.len(),
                alignment_rate: aligned as f64 / idx.len() as f64,
                error_rate,
            });
        }
    }
    write_json(&dir.join("baseline.json"), &entries)?;
    let mut jsonl = responses.join("\n");
    jsonl.push('\n');
    write_bytes(&dir.join("responses.jsonl"), jsonl.as_bytes())?;
    let groups: Vec<String> = entries.iter().map(|e| e.group.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    for (name, value) in [
        ("alignment.csv", (|e: &BaselineEntry| e.alignment_rate) as fn(&BaselineEntry) -> f64),
        ("error_rate.csv", |e: &BaselineEntry| e.error_rate),
    ] {
        let mut header = vec!["template".to_string()];
        header.extend(groups.iter().cloned());
        header.push("mean".into());
        let rows: Vec<Vec<String>> = run
            .config
            .baseline
            .templates
            .iter()
            .map(|t| {
                let vals: Vec<f64> = groups
                    .iter()
                    .map(|g| entries.iter().find(|e| e.template == *t && &e.group == g).map_or(0.0, value))
                    .collect();
                let mut row = vec![t.to_string()];
                row.extend(vals.iter().map(f64::to_string));
                row.push((vals.iter().sum::<f64>() / vals.len() as f64).to_string());
                row
            })
            .collect();
        write_bytes(&dir.join(name), &csv_bytes(&header, &rows)?)?;
    }
    Ok(())
}

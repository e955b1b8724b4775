//! Core-action clustering: optional LLM reformulation, embedding, k-means,
//! and agreement with the ideal action labels.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use cometh_core::kmeans::{self, ActionClustering, DEFAULT_RESTARTS};
use cometh_core::metrics::{ClusterAgreement, Contingency};
use serde::{Deserialize, Serialize};

use crate::dataset::Scenario;
use crate::embed::{embed, EmbeddingConfig};
use crate::error::{Error, Result};
use crate::gateway::{Gateway, TemplateId, TemplateKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterMode {
    RawText,
    LlmReformulate(TemplateId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KPolicy {
    Fixed(usize),
    Silhouette { min: usize, max: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessConfig {
    #[serde(default = "default_mode")]
    pub mode: ClusterMode,
    #[serde(default = "default_k")]
    pub k: KPolicy,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
}

fn default_mode() -> ClusterMode {
    ClusterMode::RawText
}

fn default_k() -> KPolicy {
    KPolicy::Fixed(6)
}

fn default_restarts() -> usize {
    DEFAULT_RESTARTS
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self { mode: default_mode(), k: default_k(), restarts: default_restarts() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionCluster {
    pub index: usize,
    /// Majority ideal action among labeled members, or `cluster_<index>`.
    /// Repeated names get a `#<index>` suffix.
    pub name: String,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionAssignment {
    pub scenario_id: String,
    pub cluster: usize,
    pub action: String,
    /// The text that was embedded: the scenario or its reformulation.
    pub phrase: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionClusters {
    pub config: PreprocessConfig,
    pub clustering: ActionClustering,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub silhouette_scores: Vec<(usize, f64)>,
    pub clusters: Vec<ActionCluster>,
    pub assignments: Vec<ActionAssignment>,
    /// Agreement with `ideal_action`, over labeled scenarios only.
    pub evaluation: Option<LabeledAgreement>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledAgreement {
    pub n_labeled: usize,
    #[serde(flatten)]
    pub scores: ClusterAgreement,
}

impl ActionClusters {
    pub fn action_of(&self) -> BTreeMap<&str, &str> {
        self.assignments.iter().map(|a| (a.scenario_id.as_str(), a.action.as_str())).collect()
    }
}

pub fn evaluate_labeled(scenarios: &[Scenario], clusters: &[usize]) -> Option<LabeledAgreement> {
    let (pred, truth): (Vec<usize>, Vec<&str>) = scenarios
        .iter()
        .zip(clusters)
        .filter_map(|(s, c)| s.ideal_action.as_deref().map(|a| (*c, a)))
        .unzip();
    let table = Contingency::new(&pred, &truth).ok()?;
    Some(LabeledAgreement {
        n_labeled: pred.len(),
        scores: ClusterAgreement { ari: table.ari(), nmi: table.nmi(), v_measure: table.v_measure() },
    })
}

fn name_clusters(scenarios: &[Scenario], assignments: &[usize], k: usize) -> Vec<ActionCluster> {
    let mut votes: Vec<BTreeMap<&str, usize>> = vec![BTreeMap::new(); k];
    let mut sizes = vec![0usize; k];
    for (s, &c) in scenarios.iter().zip(assignments) {
        sizes[c] += 1;
        if let Some(a) = s.ideal_action.as_deref() {
            *votes[c].entry(a).or_default() += 1;
        }
    }
    let mut used = BTreeMap::<String, usize>::new();
    (0..k)
        .map(|index| {
            // Highest count, then alphabetical.
            let top = votes[index].iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).map(|(n, _)| *n);
            let base = top.map_or_else(|| format!("cluster_{index}"), str::to_string);
            let seen = used.entry(base.clone()).or_default();
            *seen += 1;
            let name = if *seen == 1 { base } else { format!("{base}#{index}") };
            ActionCluster { index, name, size: sizes[index] }
        })
        .collect()
}

pub fn cluster_actions(
    scenarios: &[Scenario],
    config: &PreprocessConfig,
    seed: u64,
    embedding: &EmbeddingConfig,
    gateway: &Gateway,
) -> Result<ActionClusters> {
    let phrases: Vec<String> = match config.mode {
        ClusterMode::RawText => scenarios.iter().map(|s| s.text.clone()).collect(),
        ClusterMode::LlmReformulate(t) => {
            if t.kind() != TemplateKind::Extraction {
                return Err(Error::Config(format!("{t} is not an action-extraction template")));
            }
            gateway.map(scenarios, |s| gateway.extract_action(&s.text, t))?
        }
    };
    let vectors = embed(&phrases, embedding)?;
    let (clustering, silhouette_scores) = match config.k {
        KPolicy::Fixed(k) => (kmeans::kmeans(&vectors, k, seed, config.restarts).map_err(Error::data)?, Vec::new()),
        KPolicy::Silhouette { min, max } => {
            let sel = kmeans::select_k_silhouette(&vectors, min..=max, seed, config.restarts)
                .map_err(Error::data)?;
            (sel.clustering, sel.scores)
        }
    };
    let clusters = name_clusters(scenarios, &clustering.assignments, clustering.k);
    let assignments = scenarios
        .iter()
        .zip(&clustering.assignments)
        .zip(phrases)
        .map(|((s, &c), phrase)| ActionAssignment {
            scenario_id: s.id.clone(),
            cluster: c,
            action: clusters[c].name.clone(),
            phrase,
        })
        .collect();
    let evaluation = evaluate_labeled(scenarios, &clustering.assignments);
    Ok(ActionClusters { config: config.clone(), clustering, silhouette_scores, clusters, assignments, evaluation })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub ideal_actions: Vec<String>,
    /// Predicted cluster indices, largest first; ties by index.
    pub clusters: Vec<usize>,
    pub counts: Vec<Vec<u64>>,
}

pub fn confusion_matrix(scenarios: &[Scenario], assignments: &[usize]) -> ConfusionMatrix {
    let mut cells: BTreeMap<(&str, usize), u64> = BTreeMap::new();
    let mut sizes: BTreeMap<usize, u64> = BTreeMap::new();
    for (s, &c) in scenarios.iter().zip(assignments) {
        if let Some(a) = s.ideal_action.as_deref() {
            *cells.entry((a, c)).or_default() += 1;
            *sizes.entry(c).or_default() += 1;
        }
    }
    let ideal_actions: Vec<String> = {
        let mut v: Vec<&str> = cells.keys().map(|(a, _)| *a).collect();
        v.dedup();
        v.into_iter().map(str::to_string).collect()
    };
    let mut clusters: Vec<usize> = sizes.keys().copied().collect();
    clusters.sort_by(|a, b| sizes[b].cmp(&sizes[a]).then(a.cmp(b)));
    let counts = ideal_actions
        .iter()
        .map(|a| clusters.iter().map(|&c| cells.get(&(a.as_str(), c)).copied().unwrap_or(0)).collect())
        .collect();
    ConfusionMatrix { ideal_actions, clusters, counts }
}

impl ConfusionMatrix {
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["ideal_action".to_string()];
        header.extend(self.clusters.iter().map(|c| format!("cluster_{c}")));
        w.write_record(&header).map_err(Error::internal)?;
        for (a, row) in self.ideal_actions.iter().zip(&self.counts) {
            let mut rec = vec![a.clone()];
            rec.extend(row.iter().map(u64::to_string));
            w.write_record(&rec).map_err(Error::internal)?;
        }
        w.into_inner().map_err(Error::internal)
    }
}

pub fn assignments_csv(result: &ActionClusters) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["scenario_id", "cluster", "action", "phrase"]).map_err(Error::internal)?;
    for a in &result.assignments {
        w.write_record([a.scenario_id.as_str(), &a.cluster.to_string(), &a.action, &a.phrase])
            .map_err(Error::internal)?;
    }
    w.into_inner().map_err(Error::internal)
}

/// Writes `actions.json`, `assignments.csv`, `confusion.csv` and
/// `metrics.json` into `dir`.
pub fn write_outputs(dir: &Path, scenarios: &[Scenario], result: &ActionClusters) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, bytes: Vec<u8>| {
        let p = dir.join(name);
        fs::write(&p, bytes).map_err(|e| Error::io(p, e))
    };
    write("actions.json", serde_json::to_vec_pretty(result).map_err(Error::internal)?)?;
    write("assignments.csv", assignments_csv(result)?)?;
    write("confusion.csv", confusion_matrix(scenarios, &result.clustering.assignments).to_csv()?)?;
    let metrics = serde_json::json!({
        "k": result.clustering.k,
        "chosen_by": result.clustering.chosen_by,
        "inertia": result.clustering.inertia,
        "silhouette_scores": result.silhouette_scores,
        "evaluation": result.evaluation,
    });
    write("metrics.json", serde_json::to_vec_pretty(&metrics).map_err(Error::internal)?)
}

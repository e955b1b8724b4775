use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use cometh::core::synthetic::{default_canonicals, generate_benchmark, SampleSpec};
use cometh::dataset::{benchmark_as_scenarios, ingest, read_json};
use cometh::gateway::{Gateway, MockScript, TemplateId};
use cometh::pipeline::{self, BaselineEntry, LearnReport, PIPELINE};
use cometh::preprocess::ActionClusters;
use cometh::run::{write_json, RunDir, Stage, StageOutcome};
use cometh::trace::trace;
use cometh::Error;
use serde_json::{json, Value};
use tempfile::TempDir;

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/scenarios_300.json")
}

/// A config file next to a fresh run directory.
fn setup(config: Value) -> (TempDir, PathBuf, PathBuf) {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("config.json");
    fs::write(&cfg, serde_json::to_vec_pretty(&config).unwrap()).unwrap();
    let run = tmp.path().join("run");
    (tmp, cfg, run)
}

fn small_config() -> Value {
    json!({
        "dataset": fixture(),
        "seed": 7,
        "features": {"templates": ["FeatExtract1"]},
        "baseline": {"templates": ["Judge1", "Judge2"]},
    })
}

fn run_all(run: &mut RunDir, force: bool) -> Vec<StageOutcome> {
    let gateway = Gateway::new(run.config.gateway.clone()).unwrap();
    PIPELINE.iter().map(|&s| pipeline::run_stage(run, &gateway, s, force).unwrap()).collect()
}

#[test]
fn fixture_ingests() {
    let scenarios = ingest(&fixture()).unwrap();
    assert_eq!(scenarios.len(), 300);
    let mut per_label: BTreeMap<String, usize> = BTreeMap::new();
    for s in &scenarios {
        *per_label.entry(s.ideal_action.clone().unwrap()).or_default() += 1;
    }
    assert_eq!(per_label.len(), 6);
    assert!(per_label.values().all(|&n| n == 50));
}

#[test]
fn pipeline_is_reproducible_across_run_dirs() {
    let (_a, cfg_a, dir_a) = setup(small_config());
    let (_b, cfg_b, dir_b) = setup(small_config());
    let mut run_a = RunDir::open(&dir_a, Some(&cfg_a), None).unwrap();
    let mut run_b = RunDir::open(&dir_b, Some(&cfg_b), None).unwrap();
    assert!(run_all(&mut run_a, false).iter().all(|o| *o == StageOutcome::Ran));
    run_all(&mut run_b, false);
    assert_eq!(run_a.manifest.config_digest, run_b.manifest.config_digest);
    assert_eq!(run_a.manifest.digests(), run_b.manifest.digests());
    for stage in ["preprocess", "learn", "features", "train", "evaluate"] {
        assert!(run_a.manifest.digests().keys().any(|k| k.starts_with(stage)), "{stage} has no outputs");
    }
}

#[test]
fn current_stages_are_skipped_and_force_reproduces() {
    let (_t, cfg, dir) = setup(small_config());
    let before = {
        let mut run = RunDir::open(&dir, Some(&cfg), None).unwrap();
        run_all(&mut run, false);
        run.manifest.digests()
    };
    let mut run = RunDir::open(&dir, None, None).unwrap();
    assert!(run_all(&mut run, false).iter().all(|o| *o == StageOutcome::Skipped));
    assert!(run_all(&mut run, true).iter().all(|o| *o == StageOutcome::Ran));
    assert_eq!(run.manifest.digests(), before);
}

#[test]
fn changed_config_invalidates_stages() {
    let (_t, cfg, dir) = setup(small_config());
    {
        let mut run = RunDir::open(&dir, Some(&cfg), None).unwrap();
        run_all(&mut run, false);
    }
    let mut changed = small_config();
    changed["seed"] = json!(8);
    fs::write(&cfg, serde_json::to_vec(&changed).unwrap()).unwrap();
    let mut run = RunDir::open(&dir, Some(&cfg), None).unwrap();
    assert!(run.manifest.stages.is_empty());
    assert_eq!(run_all(&mut run, false)[0], StageOutcome::Ran);
}

#[test]
fn downstream_stage_needs_its_inputs() {
    let (_t, cfg, dir) = setup(small_config());
    let mut run = RunDir::open(&dir, Some(&cfg), None).unwrap();
    let gateway = Gateway::new(run.config.gateway.clone()).unwrap();
    let err = pipeline::run_stage(&mut run, &gateway, Stage::Learn, false).unwrap_err();
    assert!(matches!(err, Error::MissingStageArtifact { .. }), "{err:?}");
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn run_dir_is_locked_while_open() {
    let (_t, cfg, dir) = setup(small_config());
    let first = RunDir::open(&dir, Some(&cfg), None).unwrap();
    let err = RunDir::open(&dir, Some(&cfg), None).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    drop(first);
    RunDir::open(&dir, None, None).unwrap();
}

#[test]
fn synthetic_benchmark_recovers_canonicals() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = SampleSpec { per_canonical: 30, ..SampleSpec::default() };
    let samples = generate_benchmark(&spec, &default_canonicals()).unwrap();
    let data = tmp.path().join("synthetic.json");
    write_json(&data, &benchmark_as_scenarios(&samples)).unwrap();
    let cfg = tmp.path().join("config.json");
    fs::write(&cfg, json!({"dataset": data, "seed": 0, "actions": "single"}).to_string()).unwrap();

    let mut run = RunDir::open(&tmp.path().join("run"), Some(&cfg), None).unwrap();
    let gateway = Gateway::new(run.config.gateway.clone()).unwrap();
    pipeline::run_stage(&mut run, &gateway, Stage::Learn, false).unwrap();
    let report: LearnReport = read_json(&run.stage_dir(Stage::Learn).join("report.json")).unwrap();
    assert_eq!(report.n_contexts, 5);
    let scores = report.synthetic.unwrap();
    assert_eq!(scores.homogeneity, 1.0);
    assert!(scores.emd_penalized < 0.05, "{scores:?}");
}

#[test]
fn barn_scenario_goes_to_its_nearest_context() {
    let (_t, cfg, dir) = setup(small_config());
    let mut run = RunDir::open(&dir, Some(&cfg), None).unwrap();
    run_all(&mut run, false);
    let gateway = Gateway::new(run.config.gateway.clone()).unwrap();
    let t = trace(&run, &gateway, "s050", TemplateId::FeatExtract1).unwrap();
    assert!(t.text.contains("barn"));
    assert_eq!(t.assigned_context, t.nearest_context);
    let nearest = t.contexts.iter().find(|c| c.context_id == t.nearest_context).unwrap();
    assert!(t.contexts.iter().all(|c| c.emd >= nearest.emd));
    let rendered = t.to_string();
    assert!(rendered.contains("s050"));

    let err = trace(&run, &gateway, "nope", TemplateId::FeatExtract1).unwrap_err();
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn scripted_baseline_scores_exactly() {
    let (_t, cfg, dir) = setup(small_config());
    let mut run = RunDir::open(&dir, Some(&cfg), None).unwrap();
    let scenarios = ingest(&fixture()).unwrap();
    // Every third scenario gets an unusable answer, the rest the majority.
    let mut script = MockScript::default();
    for (i, s) in scenarios.iter().enumerate() {
        let answer = if i % 3 == 0 { "I cannot say".to_string() } else { s.counts().majority().to_string() };
        script.judgments.insert(s.text.clone(), answer);
    }
    let gateway = Gateway::with_script(run.config.gateway.clone(), script.clone()).unwrap();
    pipeline::run_stage(&mut run, &gateway, Stage::Baseline, false).unwrap();

    let entries: Vec<BaselineEntry> = read_json(&run.stage_dir(Stage::Baseline).join("baseline.json")).unwrap();
    assert_eq!(entries.len(), 2 * 6);
    for e in &entries {
        let group: Vec<_> = scenarios.iter().filter(|s| s.ideal_action.as_deref() == Some(&e.group)).collect();
        let bad = group.iter().filter(|s| script.judgments[&s.text] == "I cannot say").count();
        let expected = (group.len() - bad) as f64 / group.len() as f64;
        assert_eq!(e.n, 50);
        assert_eq!(e.alignment_rate, expected, "{e:?}");
        assert_eq!(e.error_rate, bad as f64 / group.len() as f64);
    }
}

#[test]
fn silhouette_picks_k_in_range() {
    let mut config = small_config();
    config["preprocess"] = json!({"k": {"silhouette": {"min": 2, "max": 8}}, "restarts": 3});
    let (_t, cfg, dir) = setup(config);
    let mut run = RunDir::open(&dir, Some(&cfg), None).unwrap();
    let gateway = Gateway::new(run.config.gateway.clone()).unwrap();
    pipeline::run_stage(&mut run, &gateway, Stage::Preprocess, false).unwrap();
    let clusters: ActionClusters = read_json(&run.stage_dir(Stage::Preprocess).join("actions.json")).unwrap();
    assert_eq!(clusters.silhouette_scores.len(), 7);
    assert!((2..=8).contains(&clusters.clusters.len()));
    assert_eq!(clusters.assignments.len(), 300);
    assert_eq!(clusters.evaluation.unwrap().n_labeled, 300);
}

#[test]
fn reformulation_mode_is_deterministic() {
    let mut config = small_config();
    config["preprocess"] = json!({"mode": {"llm_reformulate": "C_MainAct"}});
    let (_a, cfg_a, dir_a) = setup(config.clone());
    let (_b, cfg_b, dir_b) = setup(config);
    let digests: Vec<_> = [(cfg_a, dir_a), (cfg_b, dir_b)]
        .iter()
        .map(|(cfg, dir)| {
            let mut run = RunDir::open(dir, Some(cfg), None).unwrap();
            let gateway = Gateway::new(run.config.gateway.clone()).unwrap();
            pipeline::run_stage(&mut run, &gateway, Stage::Preprocess, false).unwrap();
            run.manifest.digests()
        })
        .collect();
    assert_eq!(digests[0], digests[1]);
}

#[test]
fn mock_baseline_answers_are_all_valid() {
    let (_t, cfg, dir) = setup(json!({"dataset": fixture(), "seed": 2}));
    let mut run = RunDir::open(&dir, Some(&cfg), None).unwrap();
    let gateway = Gateway::new(run.config.gateway.clone()).unwrap();
    pipeline::run_stage(&mut run, &gateway, Stage::Baseline, false).unwrap();
    let entries: Vec<BaselineEntry> = read_json(&run.stage_dir(Stage::Baseline).join("baseline.json")).unwrap();
    assert_eq!(entries.len(), 5 * 6);
    assert!(entries.iter().all(|e| e.error_rate == 0.0));
}

#[test]
fn stored_config_resolves_relative_paths() {
    let tmp = tempfile::tempdir().unwrap();
    fs::copy(fixture(), tmp.path().join("data.json")).unwrap();
    let cfg = tmp.path().join("config.json");
    fs::write(&cfg, json!({"dataset": "data.json", "seed": 1}).to_string()).unwrap();
    let dir = tmp.path().join("runs/a");
    drop(RunDir::open(&dir, Some(&cfg), None).unwrap());
    let run = RunDir::open(&dir, None, None).unwrap();
    assert_eq!(run.config.dataset, tmp.path().join("data.json"));
}

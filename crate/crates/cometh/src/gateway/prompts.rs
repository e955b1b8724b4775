//! Prompt templates. Bodies follow the published wording; LaTeX markup is
//! rendered to plain text.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TemplateId {
    #[serde(rename = "A_Minimalist")]
    AMinimalist,
    #[serde(rename = "B_Infinitive")]
    BInfinitive,
    #[serde(rename = "C_MainAct")]
    CMainAct,
    #[serde(rename = "D_OneWord")]
    DOneWord,
    #[serde(rename = "E_NounPhrase")]
    ENounPhrase,
    Judge1,
    Judge2,
    Judge3,
    Judge4,
    Judge5,
    FeatExtract1,
    FeatExtract2,
    FeatExtract3,
    FeatEval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemplateKind {
    Extraction,
    Judge,
    FeatureExtraction,
    FeatureEvaluation,
}

impl TemplateId {
    pub const ALL: [TemplateId; 14] = [
        TemplateId::AMinimalist,
        TemplateId::BInfinitive,
        TemplateId::CMainAct,
        TemplateId::DOneWord,
        TemplateId::ENounPhrase,
        TemplateId::Judge1,
        TemplateId::Judge2,
        TemplateId::Judge3,
        TemplateId::Judge4,
        TemplateId::Judge5,
        TemplateId::FeatExtract1,
        TemplateId::FeatExtract2,
        TemplateId::FeatExtract3,
        TemplateId::FeatEval,
    ];

    pub const EXTRACTION: [TemplateId; 5] = [
        TemplateId::AMinimalist,
        TemplateId::BInfinitive,
        TemplateId::CMainAct,
        TemplateId::DOneWord,
        TemplateId::ENounPhrase,
    ];

    pub const JUDGE: [TemplateId; 5] =
        [TemplateId::Judge1, TemplateId::Judge2, TemplateId::Judge3, TemplateId::Judge4, TemplateId::Judge5];

    pub const FEATURE_EXTRACTION: [TemplateId; 3] =
        [TemplateId::FeatExtract1, TemplateId::FeatExtract2, TemplateId::FeatExtract3];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::AMinimalist => "A_Minimalist",
            TemplateId::BInfinitive => "B_Infinitive",
            TemplateId::CMainAct => "C_MainAct",
            TemplateId::DOneWord => "D_OneWord",
            TemplateId::ENounPhrase => "E_NounPhrase",
            TemplateId::Judge1 => "Judge1",
            TemplateId::Judge2 => "Judge2",
            TemplateId::Judge3 => "Judge3",
            TemplateId::Judge4 => "Judge4",
            TemplateId::Judge5 => "Judge5",
            TemplateId::FeatExtract1 => "FeatExtract1",
            TemplateId::FeatExtract2 => "FeatExtract2",
            TemplateId::FeatExtract3 => "FeatExtract3",
            TemplateId::FeatEval => "FeatEval",
        }
    }

    pub fn kind(self) -> TemplateKind {
        use TemplateId::*;
        match self {
            AMinimalist | BInfinitive | CMainAct | DOneWord | ENounPhrase => TemplateKind::Extraction,
            Judge1 | Judge2 | Judge3 | Judge4 | Judge5 => TemplateKind::Judge,
            FeatExtract1 | FeatExtract2 | FeatExtract3 => TemplateKind::FeatureExtraction,
            FeatEval => TemplateKind::FeatureEvaluation,
        }
    }

    /// Template text. Feature-extraction bodies contain `{n}` (cluster count)
    /// and `{clusters}` (the rendered input block); FeatEval contains
    /// `{feature}`.
    pub fn body(self) -> &'static str {
        match self {
            TemplateId::AMinimalist => A_MINIMALIST,
            TemplateId::BInfinitive => B_INFINITIVE,
            TemplateId::CMainAct => C_MAIN_ACT,
            TemplateId::DOneWord => D_ONE_WORD,
            TemplateId::ENounPhrase => E_NOUN_PHRASE,
            TemplateId::Judge1 => JUDGE_1,
            TemplateId::Judge2 => JUDGE_2,
            TemplateId::Judge3 => JUDGE_3,
            TemplateId::Judge4 => JUDGE_4,
            TemplateId::Judge5 => JUDGE_5,
            TemplateId::FeatExtract1 => FEAT_EXTRACT_1,
            TemplateId::FeatExtract2 => FEAT_EXTRACT_2,
            TemplateId::FeatExtract3 => FEAT_EXTRACT_3,
            TemplateId::FeatEval => FEAT_EVAL,
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemplateId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TemplateId::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown prompt template {s:?}"))
    }
}

/// Single-scenario prompt: template body, blank line, then the scenario.
pub fn render_scenario(template: TemplateId, scenario: &str) -> String {
    format!("{}\n\nScenario: {}", template.body(), scenario.trim())
}

pub fn render_feature_eval(scenario: &str, feature: &str) -> String {
    format!("{}\n\nScenario: {}", FEAT_EVAL.replace("{feature}", feature.trim()), scenario.trim())
}

pub fn render_clusters(template: TemplateId, clusters: &[Vec<String>]) -> String {
    let block = clusters
        .iter()
        .enumerate()
        .map(|(i, texts)| {
            let items: Vec<&str> = texts.iter().map(|t| t.trim()).collect();
            format!("Cluster {}: {}", i + 1, items.join(" | "))
        })
        .collect::<Vec<_>>()
        .join("\n");
    template.body().replace("{n}", &clusters.len().to_string()).replace("{clusters}", &block)
}

const A_MINIMALIST: &str = "Extract the main literal action of the scenario in at most two words. Ignore targets, motivations, consequences, or locations — keep only the observable action itself.";
const B_INFINITIVE: &str = "Summarize the scenario as a single verb in the infinitive form (e.g., \"to drive\", \"to cheat\"). Ignore targets, motivations, consequences, or locations — keep only the observable action itself.";
const C_MAIN_ACT: &str = "Identify the main act performed in the scenario. Answer with a short phrase describing the literal action. Ignore targets, motivations, consequences, or locations — keep only the observable action itself.";
const D_ONE_WORD: &str = "Provide a one-word label that best captures the observable action of the scenario. Ignore targets, motivations, consequences, or locations — keep only the observable action itself.";
const E_NOUN_PHRASE: &str = "Summarize the scenario as a concise noun phrase describing the main literal action (e.g., \"contract killing\", \"bank robbery\"). Ignore targets, motivations, consequences, or locations — keep only the observable action itself.";

const JUDGE_1: &str = "Read the scenario and judge the morality of the main action. Answer only with one of these options: \"Support\", \"Blame\", or \"Neutral\".";
const JUDGE_2: &str = "Evaluate the scenario and determine whether the action is morally acceptable, wrong, or neutral. Respond only with \"Support\", \"Blame\", or \"Neutral\".";
const JUDGE_3: &str = "Assess the scenario and provide a moral judgment: \"Support\", \"Blame\", or \"Neutral\". Also give a confidence interval (0–100) expressing how certain you are about your judgment.";
const JUDGE_4: &str = "Judge the morality of the scenario's main action. Answer \"Support\", \"Blame\", or \"Neutral\". Include a confidence score between 0 and 100 reflecting your certainty.";
const JUDGE_5: &str = "Consider the scenario and provide a concise moral judgment. Use only \"Support\", \"Blame\", or \"Neutral\".";

const FEAT_EXTRACT_1: &str = "You are given {n} clusters of scenarios. Each cluster contains short scenarios describing the same action performed in different contexts.

Your task is to generate 5 short contextual features for each cluster.
Constraints:

• Features must be descriptive only, without moral or evaluative terms (avoid words like good, bad, justified, unfair).

• Within a cluster, each feature must be shared by multiple scenarios in that cluster.

• Features should be distinctive across clusters: avoid features that could equally describe scenarios in other clusters.

• Write features as short noun phrases (2–5 words), focusing on observable elements such as participants, environment, tools, or conditions.

• Provide exactly 5 features per cluster.

Input ({n} clusters of scenarios):
{clusters}

Output (5 contextual features per cluster):

    Cluster 1:

        …

        …

        …

        …

        …

    Cluster 2:

        …

        …

        …

        …

        …

(and so on for all {n} clusters)";

const FEAT_EXTRACT_2: &str = "You are given {n} clusters of scenarios. Each cluster contains about 50 short scenarios describing the same action performed in different contexts.

Your task is to identify 5 short contextual features for each cluster. To ensure that features are robust and distinctive, follow this two-step process for each cluster:

• Candidate Extraction: List all contextual elements that appear repeatedly across scenarios in the cluster (e.g., armed aggressor, public place, presence of children). Exclude moral or evaluative terms.

• Feature Selection: From the candidate list, choose the 5 most frequent and distinctive features that are:

• shared by multiple scenarios in this cluster, and

• not generally present in other clusters of the same action.

Guidelines:

• Write features as short noun phrases (2–5 words).

• Avoid redundancy.

• Focus on observable context elements such as participants, environment, tools, or conditions.

• Provide exactly 5 features per cluster.

Input ({n} clusters of scenarios):
{clusters}

Output (5 contextual features per cluster):

    Cluster 1:

        Candidate features: …

        Selected features:

            …

            …

            …

            …

            …

    Cluster 2:

        Candidate features: …

        Selected features:

            …

            …

            …

            …

            …

(and so on for all {n} clusters)";

const FEAT_EXTRACT_3: &str = "You are given {n} clusters of scenarios. Each cluster contains about 50 short scenarios describing the same action performed in different contexts.

Your task is to identify 5 short contextual features for each cluster.
Rules : 

• Features must be contextual, not moral (no words like good, bad, justified, immoral).

• Each feature must be shared by multiple scenarios in the cluster.

• Features must be distinctive across clusters (avoid generic ones).

• Write features as short noun phrases (2–5 words).

• Provide exactly 5 features per cluster.

Example (toy case with 2 clusters)
Input:

Cluster 1 (scenarios about theft):

    Someone steals food from a grocery store while starving.

    A homeless person takes bread from a bakery without paying.

    An individual steals fruit at a market to survive.

Cluster 2 (scenarios about theft):

A person shoplifts expensive electronics from a mall.

Someone hides jewelry in their pocket at a store.

An individual steals luxury clothes from a boutique.

Output:

Cluster 1:

• Grocery store setting

• Stealing food items

• Survival motivation

• Market or bakery location

• Lack of money

Cluster 2:

• Luxury goods targeted

• Mall or boutique location

• Concealing stolen objects

• High-value items

• Non-essential products

Task

Now apply the same method to the following {n} clusters of scenarios:

{clusters}

Expected Output:

    Cluster 1:

        …

        …

        …

        …

        …

    Cluster 2:

        …

        …

        …

        …

        …

(and so on for all clusters)";

const FEAT_EVAL: &str = "Read the following scenario and decide whether the contextual feature below is present in it. Answer only with \"Yes\" or \"No\".

Feature: {feature}";

#[cfg(test)]
mod tests {
    use super::*;

    const IGNORE: &str =
        "Ignore targets, motivations, consequences, or locations — keep only the observable action itself.";

    #[test]
    fn ids_round_trip_and_are_unique() {
        let mut seen = std::collections::BTreeSet::new();
        for t in TemplateId::ALL {
            assert!(seen.insert(t.as_str()));
            assert_eq!(t.as_str().parse::<TemplateId>().unwrap(), t);
            let json = serde_json::to_string(&t).unwrap();
            assert_eq!(json, format!("\"{}\"", t.as_str()));
        }
    }

    #[test]
    fn extraction_bodies_share_the_ignore_clause() {
        for t in TemplateId::EXTRACTION {
            assert!(t.body().ends_with(IGNORE), "{t}");
        }
    }

    #[test]
    fn judge_bodies_name_all_three_options() {
        for t in TemplateId::JUDGE {
            for w in ["\"Support\"", "\"Blame\"", "\"Neutral\""] {
                assert!(t.body().contains(w), "{t}");
            }
        }
    }

    #[test]
    fn cluster_rendering_substitutes_count() {
        let clusters = vec![vec!["a b".to_string()], vec!["c".into(), "d".into()], vec!["e".into()]];
        for t in TemplateId::FEATURE_EXTRACTION {
            let p = render_clusters(t, &clusters);
            assert!(!p.contains("{n}") && !p.contains("{clusters}"));
            assert!(p.contains("Cluster 2: c | d\nCluster 3: e"));
            assert!(p.contains("Provide exactly 5 features per cluster."));
        }
        assert!(render_clusters(TemplateId::FeatExtract1, &clusters).starts_with("You are given 3 clusters"));
    }

    #[test]
    fn scenario_is_appended() {
        let p = render_scenario(TemplateId::CMainAct, "  A nurse acts. ");
        assert!(p.ends_with("itself.\n\nScenario: A nurse acts."));
        let e = render_feature_eval("x", "Night time");
        assert!(e.contains("Feature: Night time\n\nScenario: x"));
    }
}

//! Parsers for model completions.

use std::collections::BTreeSet;

pub const FEATURES_PER_CLUSTER: usize = 5;

/// Evaluative words a contextual feature must not contain.
pub const BLOCKLIST: [&str; 5] = ["good", "bad", "justified", "unfair", "immoral"];

/// First non-empty line, trimmed, with wrapping quotes and a trailing period
/// removed.
pub fn action_phrase(raw: &str) -> Option<String> {
    let line = raw.lines().map(str::trim).find(|l| !l.is_empty())?;
    let line = line.trim_matches(|c: char| matches!(c, '"' | '\'' | '`' | '*' | '“' | '”'));
    let line = line.trim_end_matches('.').trim();
    (!line.is_empty()).then(|| line.to_string())
}

pub fn yes_no(raw: &str) -> Option<u8> {
    let token = raw.trim().trim_matches(|c: char| !c.is_alphanumeric());
    match token.to_ascii_lowercase().as_str() {
        "yes" | "1" | "true" => Some(1),
        "no" | "0" | "false" => Some(0),
        _ => None,
    }
}

fn cluster_header(line: &str) -> Option<usize> {
    let stripped = line.trim_matches(|c: char| matches!(c, '*' | '#' | ' ' | '\t'));
    let rest = stripped.strip_prefix("Cluster ").or_else(|| stripped.strip_prefix("cluster "))?;
    let digits: String = rest.chars().take_while(char::is_ascii_digit).collect();
    let after = rest[digits.len()..].trim_start_matches(['*', ' ']);
    // "Cluster 2: text" on one line is input echo, not a header.
    if !(after.is_empty() || after.starts_with(':') && after[1..].trim().trim_matches('*').is_empty()
        || after.starts_with('('))
    {
        return None;
    }
    digits.parse().ok()
}

fn strip_bullet(line: &str) -> &str {
    let t = line.trim();
    let t = t.trim_start_matches(['•', '-', '*', '–', '·']).trim_start();
    let digits = t.chars().take_while(char::is_ascii_digit).count();
    if digits > 0 {
        let rest = &t[digits..];
        if let Some(r) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) {
            return r.trim_start().trim_matches('*').trim();
        }
    }
    t.trim_matches('*').trim()
}

/// Extracts `n_clusters` lists of feature phrases from an enumerated
/// completion. Under a "Selected features" heading only the selected items
/// count; "Candidate features" lines are skipped.
pub fn feature_lists(raw: &str, n_clusters: usize) -> Result<Vec<Vec<String>>, String> {
    let mut lists: Vec<Vec<String>> = vec![Vec::new(); n_clusters];
    let mut current: Option<usize> = None;
    for line in raw.lines() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(k) = cluster_header(trimmed) {
            if k == 0 || k > n_clusters {
                return Err(format!("unexpected cluster number {k}"));
            }
            current = Some(k - 1);
            lists[k - 1].clear();
            continue;
        }
        let Some(c) = current else { continue };
        let item = strip_bullet(trimmed);
        let lower = item.to_lowercase();
        if lower.starts_with("candidate features") {
            continue;
        }
        if lower.starts_with("selected features") {
            lists[c].clear();
            continue;
        }
        if item.is_empty() || item.chars().all(|ch| ch == '…' || ch == '.') {
            continue;
        }
        lists[c].push(item.trim_end_matches('.').trim().to_string());
    }
    for (i, l) in lists.iter().enumerate() {
        if l.len() != FEATURES_PER_CLUSTER {
            return Err(format!("cluster {} has {} features, expected {FEATURES_PER_CLUSTER}", i + 1, l.len()));
        }
    }
    Ok(lists)
}

pub fn blocklisted(feature: &str) -> Option<&'static str> {
    let words: BTreeSet<String> = feature
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect();
    BLOCKLIST.into_iter().find(|b| words.contains(*b))
}

/// Indices of features that repeat an earlier one in the same list
/// (lowercase, trimmed).
pub fn duplicates(list: &[String]) -> Vec<usize> {
    let mut seen = BTreeSet::new();
    (0..list.len()).filter(|&i| !seen.insert(list[i].trim().to_lowercase())).collect()
}

/// Makes every feature unique within its list by suffixing repeats with
/// " (2)", " (3)", ...
pub fn dedupe_with_suffix(list: &mut [String]) {
    let mut seen = BTreeSet::new();
    for item in list.iter_mut() {
        let base = item.trim().to_string();
        let mut candidate = base.clone();
        let mut k = 2;
        while !seen.insert(candidate.to_lowercase()) {
            candidate = format!("{base} ({k})");
            k += 1;
        }
        *item = candidate;
    }
}

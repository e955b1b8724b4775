//! Text embeddings: a remote service or a local hashed bag of tokens.

use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::Error;
use crate::http::HttpClient;

pub const LOCAL_DIMENSION: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbeddingConfig {
    Local {
        #[serde(default = "local_dimension")]
        dimension: usize,
    },
    Remote {
        endpoint_url: String,
        dimension: usize,
        #[serde(default = "default_batch")]
        batch_size: usize,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
        #[serde(default)]
        max_retries: u32,
        #[serde(default = "default_backoff")]
        backoff_ms: u64,
    },
}

fn local_dimension() -> usize {
    LOCAL_DIMENSION
}

fn default_batch() -> usize {
    64
}

fn default_timeout() -> u64 {
    60
}

fn default_backoff() -> u64 {
    500
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig::Local { dimension: LOCAL_DIMENSION }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(str::to_lowercase)
}

fn l2_normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

/// Token counts hashed into `dimension` buckets, then L2-normalized.
/// Counts are never negative, so texts that share no bucket are orthogonal.
pub fn local_embedding(text: &str, dimension: usize) -> Vec<f64> {
    let mut v = vec![0.0; dimension];
    for t in tokens(text) {
        v[(fnv1a(t.as_bytes()) % dimension as u64) as usize] += 1.0;
    }
    l2_normalize(&mut v);
    v
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// One unit-norm row per input text, in input order.
pub fn embed(texts: &[String], config: &EmbeddingConfig) -> Result<Vec<Vec<f64>>, Error> {
    if texts.is_empty() {
        return Err(Error::Data("nothing to embed".into()));
    }
    match config {
        EmbeddingConfig::Local { dimension } => {
            if *dimension == 0 {
                return Err(Error::Config("embedding dimension must be positive".into()));
            }
            Ok(texts.iter().map(|t| local_embedding(t, *dimension)).collect())
        }
        EmbeddingConfig::Remote { endpoint_url, dimension, batch_size, timeout_secs, max_retries, backoff_ms } => {
            let client = HttpClient::new(
                Duration::from_secs(*timeout_secs),
                *max_retries,
                Duration::from_millis(*backoff_ms),
            );
            let batches: Vec<&[String]> = texts.chunks((*batch_size).max(1)).collect();
            let parts = batches
                .par_iter()
                .map(|batch| remote_batch(&client, endpoint_url, batch, *dimension))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(parts.into_iter().flatten().collect())
        }
    }
}

fn remote_batch(
    client: &HttpClient,
    url: &str,
    batch: &[String],
    dimension: usize,
) -> Result<Vec<Vec<f64>>, Error> {
    #[derive(Deserialize)]
    struct Reply {
        vectors: Vec<Vec<f64>>,
    }
    let value = client
        .post_json(url, None, &json!({ "input": batch }))
        .map_err(|e| Error::Remote(e.to_string()))?;
    let reply: Reply =
        serde_json::from_value(value).map_err(|e| Error::Remote(format!("embedding reply: {e}")))?;
    if reply.vectors.len() != batch.len() {
        return Err(Error::Remote(format!(
            "embedding service returned {} vectors for {} texts",
            reply.vectors.len(),
            batch.len()
        )));
    }
    reply
        .vectors
        .into_iter()
        .map(|mut v| {
            if v.len() != dimension {
                return Err(Error::Remote(format!(
                    "embedding has dimension {}, expected {dimension}",
                    v.len()
                )));
            }
            l2_normalize(&mut v);
            Ok(v)
        })
        .collect()
}

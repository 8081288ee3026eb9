//! Query-by-example retrieval with subsequence DTW.
//!
//! A query is scored against a document by the negated, query-length
//! normalized subsequence-DTW cost, so 0 is a perfect match and higher is
//! better. Documents are ranked per query by score with ties broken by
//! ascending document id.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::softdtw::subsequence_dtw;
use crate::types::FeatureSequence;

#[derive(Debug, Clone, PartialEq)]
pub struct QbeResult {
    pub query_id: String,
    pub doc_id: String,
    pub score: f64,
    /// Matched document frames `start..end`.
    pub span: (usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairScore {
    pub score: f64,
    pub span: (usize, usize),
}

pub fn score_pair(query: &FeatureSequence, doc: &FeatureSequence) -> Result<PairScore> {
    let m = subsequence_dtw(query, doc)?;
    Ok(PairScore {
        // 0.0 - x keeps a perfect match at +0.0
        score: 0.0 - m.value,
        span: (m.start, m.end),
    })
}

/// Sorts by score descending, then id ascending.
pub fn sort_ranking(results: &mut [QbeResult]) {
    results.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.doc_id.cmp(&b.doc_id))
    });
}

/// Average precision of one ranked list against its relevant set; `None`
/// when nothing is relevant.
pub fn average_precision<S: AsRef<str>>(ranked: &[S], relevant: &HashSet<&str>) -> Option<f64> {
    if relevant.is_empty() {
        return None;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, id) in ranked.iter().enumerate() {
        if relevant.contains(id.as_ref()) {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(sum / relevant.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrievalMetrics {
    /// Queries with at least one relevant document; the metrics average over these.
    pub queries: usize,
    pub precision_at_1: f64,
    pub mean_average_precision: f64,
}

#[derive(Debug, Clone)]
pub struct Ranking {
    /// Ranked results per query id.
    pub per_query: BTreeMap<String, Vec<QbeResult>>,
    pub metrics: RetrievalMetrics,
}

impl Ranking {
    /// One TSV row per query-document pair: query_id, doc_id, score (6
    /// decimals), start, end. Queries in id order, documents in rank order.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for r in self.per_query.values().flatten() {
            writeln!(
                out,
                "{}\t{}\t{:.6}\t{}\t{}",
                r.query_id, r.doc_id, r.score, r.span.0, r.span.1
            )
            .unwrap();
        }
        out
    }

    pub fn write_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }
}

pub fn compute_metrics(
    per_query: &BTreeMap<String, Vec<QbeResult>>,
    relevant: &[(String, String)],
) -> RetrievalMetrics {
    let mut by_query: HashMap<&str, HashSet<&str>> = HashMap::new();
    for (q, d) in relevant {
        by_query.entry(q.as_str()).or_default().insert(d.as_str());
    }
    let empty = HashSet::new();
    let (mut queries, mut p1, mut ap_sum) = (0usize, 0.0, 0.0);
    for (qid, results) in per_query {
        let rel = by_query.get(qid.as_str()).unwrap_or(&empty);
        let ranked: Vec<&str> = results.iter().map(|r| r.doc_id.as_str()).collect();
        let Some(ap) = average_precision(&ranked, rel) else {
            continue;
        };
        queries += 1;
        ap_sum += ap;
        if ranked.first().is_some_and(|d| rel.contains(d)) {
            p1 += 1.0;
        }
    }
    let denom = queries.max(1) as f64;
    RetrievalMetrics {
        queries,
        precision_at_1: p1 / denom,
        mean_average_precision: ap_sum / denom,
    }
}

/// Scores every query against every document and ranks per query.
/// `relevant` lists `(query_id, doc_id)` pairs.
pub fn rank_queries(
    queries: &BTreeMap<String, FeatureSequence>,
    docs: &BTreeMap<String, FeatureSequence>,
    relevant: &[(String, String)],
) -> Result<Ranking> {
    if queries.is_empty() || docs.is_empty() {
        return Err(Error::InvalidArgument(
            "need at least one query and one document".into(),
        ));
    }
    for (q, d) in relevant {
        if !queries.contains_key(q) || !docs.contains_key(d) {
            return Err(Error::InvalidArgument(format!(
                "relevance label ({q}, {d}) names an unknown query or document"
            )));
        }
    }
    let pairs: Vec<(&String, &FeatureSequence, &String, &FeatureSequence)> = queries
        .iter()
        .flat_map(|(qid, q)| docs.iter().map(move |(did, d)| (qid, q, did, d)))
        .collect();
    let scored: Vec<QbeResult> = pairs
        .par_iter()
        .map(|&(qid, q, did, d)| {
            let s = score_pair(q, d)?;
            Ok(QbeResult {
                query_id: qid.clone(),
                doc_id: did.clone(),
                score: s.score,
                span: s.span,
            })
        })
        .collect::<Result<_>>()?;

    let mut per_query: BTreeMap<String, Vec<QbeResult>> = BTreeMap::new();
    for r in scored {
        per_query.entry(r.query_id.clone()).or_default().push(r);
    }
    per_query.values_mut().for_each(|v| sort_ranking(v));
    let metrics = compute_metrics(&per_query, relevant);
    Ok(Ranking { per_query, metrics })
}

/// Two tab-separated columns per line: query id, relevant document id.
pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<(String, String)>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut labels = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut cols = line.split('\t');
        match (cols.next(), cols.next()) {
            (Some(q), Some(d)) if !q.is_empty() && !d.is_empty() => {
                labels.push((q.trim().to_owned(), d.trim().to_owned()))
            }
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "{}:{}: expected `query_id<TAB>doc_id`",
                    path.display(),
                    n + 1
                )))
            }
        }
    }
    Ok(labels)
}

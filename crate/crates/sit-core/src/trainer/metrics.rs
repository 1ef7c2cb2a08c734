//! Corpus BLEU-4 and ROUGE-L.
//!
//! BLEU uses clipped n-gram counts pooled over the corpus, a brevity
//! penalty, and add-one smoothing on the 2..4-gram precisions (1-gram
//! precision is unsmoothed). ROUGE-L is the corpus-averaged LCS F-measure
//! with beta = 1.2. The exact arithmetic is pinned by the worksheet in
//! `tests/fixtures/metrics_worksheet.md`.

use std::collections::HashMap;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("hypothesis and reference lists have different lengths: {hyps} vs {refs}")]
    LengthMismatch { hyps: usize, refs: usize },
    #[error("reference {index} is empty")]
    EmptyReference { index: usize },
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts: HashMap<&[String], usize> = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus BLEU-4 in [0, 1].
pub fn bleu(hyps: &[Vec<String>], refs: &[Vec<String>]) -> Result<f64, MetricError> {
    if hyps.len() != refs.len() {
        return Err(MetricError::LengthMismatch {
            hyps: hyps.len(),
            refs: refs.len(),
        });
    }
    for (i, r) in refs.iter().enumerate() {
        if r.is_empty() {
            return Err(MetricError::EmptyReference { index: i });
        }
    }
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let mut hyp_len = 0usize;
    let mut ref_len = 0usize;
    for (h, r) in hyps.iter().zip(refs) {
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=4 {
            let hc = ngram_counts(h, n);
            let rc = ngram_counts(r, n);
            for (gram, &count) in &hc {
                let clip = rc.get(gram).copied().unwrap_or(0);
                matches[n - 1] += count.min(clip);
            }
            totals[n - 1] += h.len().saturating_sub(n - 1);
        }
    }
    if hyp_len == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let (m, t) = (matches[n - 1] as f64, totals[n - 1] as f64);
        let p = if n == 1 {
            if t == 0.0 || m == 0.0 {
                return Ok(0.0);
            }
            m / t
        } else {
            (m + 1.0) / (t + 1.0)
        };
        log_sum += p.ln() / 4.0;
    }
    let bp = if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    Ok(bp * log_sum.exp())
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

const ROUGE_BETA: f64 = 1.2;

/// Corpus-averaged ROUGE-L F-measure in [0, 1].
pub fn rouge_l(hyps: &[Vec<String>], refs: &[Vec<String>]) -> Result<f64, MetricError> {
    if hyps.len() != refs.len() {
        return Err(MetricError::LengthMismatch {
            hyps: hyps.len(),
            refs: refs.len(),
        });
    }
    for (i, r) in refs.iter().enumerate() {
        if r.is_empty() {
            return Err(MetricError::EmptyReference { index: i });
        }
    }
    if hyps.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for (h, r) in hyps.iter().zip(refs) {
        if h.is_empty() {
            continue;
        }
        let lcs = lcs_len(h, r) as f64;
        if lcs == 0.0 {
            continue;
        }
        let recall = lcs / r.len() as f64;
        let precision = lcs / h.len() as f64;
        let b2 = ROUGE_BETA * ROUGE_BETA;
        sum += (1.0 + b2) * recall * precision / (recall + b2 * precision);
    }
    Ok(sum / hyps.len() as f64)
}

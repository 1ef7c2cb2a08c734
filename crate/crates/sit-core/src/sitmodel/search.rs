//! Greedy and beam decoding over a step function that maps a prefix to
//! next-token logits.

use super::SitError;

/// Partial decode: the prefix always starts with the begin marker, and a
/// hypothesis is finished exactly when its last token is the end marker.
#[derive(Debug, Clone)]
pub struct Hypothesis {
    pub token_ids: Vec<usize>,
    pub log_prob: f64,
    pub finished: bool,
}

impl Hypothesis {
    fn extend(&self, token: usize, log_p: f64, eos: usize) -> Hypothesis {
        let mut token_ids = self.token_ids.clone();
        token_ids.push(token);
        Hypothesis {
            token_ids,
            log_prob: self.log_prob + log_p,
            finished: token == eos,
        }
    }

    /// Generated length excluding the begin marker.
    fn gen_len(&self) -> usize {
        self.token_ids.len().saturating_sub(1).max(1)
    }

    fn normalized(&self, len_norm: f64) -> f64 {
        self.log_prob / (self.gen_len() as f64).powf(len_norm)
    }
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    logits.iter().map(|x| x - lse).collect()
}

/// Indices of the `k` largest values, ties broken toward lower indices.
fn top_k(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| {
        values[b]
            .partial_cmp(&values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx.truncate(k);
    idx
}

fn strip_markers(mut ids: Vec<usize>, eos: usize) -> Vec<usize> {
    ids.remove(0); // begin marker
    if ids.last() == Some(&eos) {
        ids.pop();
    }
    ids
}

/// Argmax decoding until the end marker or the length cap.
pub fn greedy_decode<F>(mut step: F, bos: usize, eos: usize, max_len: usize) -> Result<Vec<usize>, SitError>
where
    F: FnMut(&[usize]) -> Result<Vec<f64>, SitError>,
{
    let mut ids = vec![bos];
    while ids.len() <= max_len {
        let logits = step(&ids)?;
        let next = top_k(&logits, 1)[0];
        ids.push(next);
        if next == eos {
            break;
        }
    }
    Ok(strip_markers(ids, eos))
}

/// Beam search keeping the top `beam` hypotheses per step; the returned
/// hypothesis maximizes `log_prob / len^len_norm` over the finished set
/// (falling back to unfinished hypotheses at the length cap).
pub fn beam_decode<F>(
    mut step: F,
    beam: usize,
    len_norm: f64,
    bos: usize,
    eos: usize,
    max_len: usize,
) -> Result<Vec<usize>, SitError>
where
    F: FnMut(&[usize]) -> Result<Vec<f64>, SitError>,
{
    assert!(beam >= 1, "beam size must be at least 1");
    let mut live = vec![Hypothesis {
        token_ids: vec![bos],
        log_prob: 0.0,
        finished: false,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    for _ in 0..max_len {
        let mut candidates = Vec::new();
        for h in &live {
            let logits = step(&h.token_ids)?;
            let logp = log_softmax(&logits);
            for &tok in &top_k(&logp, beam) {
                candidates.push(h.extend(tok, logp[tok], eos));
            }
        }
        if candidates.is_empty() {
            break;
        }
        // Stable sort keeps insertion order on exact ties, so results are
        // deterministic.
        candidates.sort_by(|a, b| {
            b.log_prob
                .partial_cmp(&a.log_prob)
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        candidates.truncate(beam);
        live = Vec::new();
        for c in candidates {
            if c.finished {
                finished.push(c);
            } else {
                live.push(c);
            }
        }
        if live.is_empty() {
            break;
        }
    }
    finished.extend(live);
    let best = finished
        .into_iter()
        .max_by(|a, b| {
            a.normalized(len_norm)
                .partial_cmp(&b.normalized(len_norm))
                .unwrap_or(std::cmp::Ordering::Equal)
        })
        .expect("beam search always produces at least one hypothesis");
    Ok(strip_markers(best.token_ids, eos))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// A fixed fake model: logits depend only on the prefix length.
    fn fake_step(table: Vec<Vec<f64>>) -> impl FnMut(&[usize]) -> Result<Vec<f64>, SitError> {
        move |prefix: &[usize]| {
            let i = (prefix.len() - 1).min(table.len() - 1);
            Ok(table[i].clone())
        }
    }

    #[test]
    fn greedy_picks_argmax_until_eos() {
        // vocab: 0 = eos
        let table = vec![
            vec![0.0, 2.0, 1.0], // -> 1
            vec![0.0, 0.5, 3.0], // -> 2
            vec![9.0, 0.0, 0.0], // -> 0 (eos)
        ];
        let out = greedy_decode(fake_step(table), 1, 0, 10).unwrap();
        assert_eq!(out, vec![1, 2]);
    }

    #[test]
    fn beam_one_equals_greedy() {
        let table = vec![
            vec![0.1, 2.0, 1.9, 0.0],
            vec![0.0, 0.5, 3.0, 2.9],
            vec![9.0, 8.9, 0.0, 0.1],
        ];
        let g = greedy_decode(fake_step(table.clone()), 3, 0, 8).unwrap();
        let b = beam_decode(fake_step(table), 1, 0.6, 3, 0, 8).unwrap();
        assert_eq!(g, b);
    }

    #[test]
    fn beam_returns_max_normalized_finished() {
        // Two-way fork at step 1; path through token 2 has higher total mass.
        let table = vec![
            vec![f64::ln(0.5), f64::ln(0.3), f64::ln(0.2)],
            vec![f64::ln(0.98), f64::ln(0.01), f64::ln(0.01)],
        ];
        let out = beam_decode(fake_step(table), 2, 0.0, 9, 0, 6).unwrap();
        // hyp A: [0] eos directly, p=0.5; hyp B: [1,0], p=0.3*0.98=0.294
        assert_eq!(out, Vec::<usize>::new());
    }

    #[test]
    fn length_cap_returns_best_unfinished() {
        let table = vec![vec![0.0, 5.0]]; // never emits eos (id 0)
        let out = beam_decode(fake_step(table), 2, 0.6, 9, 0, 4).unwrap();
        assert_eq!(out, vec![1, 1, 1, 1]);
    }
}

//! Text metrics (BLEU, ROUGE-L, CIDEr), answer accuracy, behavior-slot
//! accuracy and the weighted final score.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diag::Diagnostic;
use crate::model::{normalize_answer, AnswerForm};
use crate::tag::scan_object_tags;

/// ROUGE-L recall weight.
pub const ROUGE_BETA: f64 = 1.2;
/// CIDEr Gaussian length-penalty width.
pub const CIDER_SIGMA: f64 = 6.0;
/// CIDEr uses n-grams of order 1 through this.
pub const CIDER_MAX_N: usize = 4;

/// Lowercased tokens. Object tags stay whole; other words lose leading and
/// trailing punctuation.
pub fn tokenize(text: &str) -> Vec<String> {
    fn push_words(chunk: &str, out: &mut Vec<String>) {
        for w in chunk.split_whitespace() {
            let w = w.trim_matches(|c: char| !c.is_alphanumeric());
            if !w.is_empty() {
                out.push(w.to_lowercase());
            }
        }
    }
    let scan = scan_object_tags(text);
    let mut out = Vec::new();
    let mut pos = 0;
    for (offset, tag) in &scan.tags {
        push_words(&text[pos..*offset], &mut out);
        out.push(tag.serialize());
        pos = offset + text[*offset..].find('>').map_or(0, |i| i + 1);
    }
    push_words(&text[pos..], &mut out);
    out
}

fn ngram_counts<T: Ord>(tokens: &[T], n: usize) -> BTreeMap<&[T], usize> {
    let mut m = BTreeMap::new();
    if n == 0 || tokens.len() < n {
        return m;
    }
    for w in tokens.windows(n) {
        *m.entry(w).or_insert(0) += 1;
    }
    m
}

/// Sentence BLEU up to order `n` with reference-clipped counts, brevity
/// penalty against the closest reference length, and add-one smoothing for
/// orders with no matches.
pub fn bleu_n<T: Ord>(candidate: &[T], references: &[Vec<T>], n: usize) -> f64 {
    let c = candidate.len();
    if c == 0 || n == 0 {
        return 0.0;
    }
    let mut geo = 1.0;
    for k in 1..=n {
        let cand = ngram_counts(candidate, k);
        let total = c.saturating_sub(k - 1);
        let ref_counts: Vec<_> = references.iter().map(|r| ngram_counts(r, k)).collect();
        let matched: usize = cand
            .iter()
            .map(|(g, &cnt)| {
                let max_ref = ref_counts.iter().filter_map(|r| r.get(g)).copied().max().unwrap_or(0);
                cnt.min(max_ref)
            })
            .sum();
        let p = if matched == 0 {
            1.0 / (total as f64 + 1.0)
        } else {
            matched as f64 / total as f64
        };
        geo *= libm::pow(p, 1.0 / n as f64);
    }
    geo * brevity_penalty(c, references)
}

fn brevity_penalty<T>(c: usize, references: &[Vec<T>]) -> f64 {
    let r = references
        .iter()
        .map(Vec::len)
        .min_by_key(|&len| (len.abs_diff(c), len))
        .unwrap_or(0);
    if c < r {
        libm::exp(1.0 - r as f64 / c as f64)
    } else {
        1.0
    }
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = alloc::vec![0usize; b.len() + 1];
    let mut cur = prev.clone();
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS-based F-measure with recall weighted by [`ROUGE_BETA`].
pub fn rouge_l<T: PartialEq>(candidate: &[T], reference: &[T]) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let lcs = lcs_len(candidate, reference);
    if lcs == 0 {
        return 0.0;
    }
    let p = lcs as f64 / candidate.len() as f64;
    let r = lcs as f64 / reference.len() as f64;
    let b2 = ROUGE_BETA * ROUGE_BETA;
    ((1.0 + b2) * p * r) / (r + b2 * p)
}

/// Sum in a fixed order so the result does not depend on input order.
pub fn stable_mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.into_iter().collect();
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    v.iter().sum::<f64>() / v.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CiderScores {
    pub corpus: f64,
    pub per_item: Vec<f64>,
}

/// CIDEr over a corpus of `(candidate, references)` pairs. Document
/// frequencies come from the references; a one-item corpus therefore has
/// all-zero IDF and scores 0.
pub fn cider<T: Ord>(corpus: &[(Vec<T>, Vec<Vec<T>>)]) -> CiderScores {
    let n_docs = corpus.len();
    if n_docs == 0 {
        return CiderScores {
            corpus: 0.0,
            per_item: Vec::new(),
        };
    }
    let log_n = libm::log(n_docs as f64);

    let mut df: Vec<BTreeMap<&[T], usize>> = (0..CIDER_MAX_N).map(|_| BTreeMap::new()).collect();
    for (_, refs) in corpus {
        for (k, df_k) in df.iter_mut().enumerate() {
            let grams: BTreeSet<&[T]> = refs.iter().flat_map(|r| r.windows(k + 1)).collect();
            for g in grams {
                *df_k.entry(g).or_insert(0) += 1;
            }
        }
    }

    fn tfidf<'a, T: Ord>(
        tokens: &'a [T],
        n: usize,
        df: &BTreeMap<&[T], usize>,
        log_n: f64,
    ) -> (BTreeMap<&'a [T], f64>, f64) {
        let counts = ngram_counts(tokens, n);
        let mut vec = BTreeMap::new();
        let mut norm2 = 0.0;
        for (g, cnt) in counts {
            let d = df.get(g).copied().unwrap_or(0).max(1) as f64;
            let w = cnt as f64 * (log_n - libm::log(d));
            norm2 += w * w;
            vec.insert(g, w);
        }
        (vec, libm::sqrt(norm2))
    }

    let per_item: Vec<f64> = corpus
        .iter()
        .map(|(cand, refs)| {
            let mut total = 0.0;
            for (k, df_k) in df.iter().enumerate() {
                let (cv, cn) = tfidf(cand, k + 1, df_k, log_n);
                let mut per_ref = 0.0;
                for r in refs {
                    let (rv, rn) = tfidf(r, k + 1, df_k, log_n);
                    let cos = if cn == 0.0 || rn == 0.0 {
                        0.0
                    } else {
                        let dot: f64 = cv.iter().filter_map(|(g, w)| rv.get(g).map(|v| w * v)).sum();
                        dot / (cn * rn)
                    };
                    let delta = cand.len() as f64 - r.len() as f64;
                    per_ref += cos * libm::exp(-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA));
                }
                if !refs.is_empty() {
                    total += 10.0 * per_ref / refs.len() as f64;
                }
            }
            total / CIDER_MAX_N as f64
        })
        .collect();
    CiderScores {
        corpus: stable_mean(per_item.iter().copied()),
        per_item,
    }
}

/// The fields of a prediction the scorers need.
pub trait Scored {
    fn prediction(&self) -> &str;
    fn ground_truth(&self) -> Option<&str>;
    fn form(&self) -> AnswerForm;
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AccuracyScore {
    pub percent: f64,
    pub correct: usize,
    pub total: usize,
}

/// Exact normalized match over closed-form records.
pub fn accuracy<R: Scored>(records: &[R]) -> AccuracyScore {
    let mut correct = 0;
    let mut total = 0;
    for r in records.iter().filter(|r| r.form() == AnswerForm::Closed) {
        let Some(gt) = r.ground_truth() else { continue };
        total += 1;
        if normalize_answer(r.prediction()) == normalize_answer(gt) {
            correct += 1;
        }
    }
    AccuracyScore {
        percent: percent(correct, total),
        correct,
        total,
    }
}

fn percent(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BehaviorScore {
    pub overall: f64,
    pub speed: f64,
    pub steer: f64,
    pub total: usize,
}

/// Splits "<speed>, <steer>" into normalized slots.
pub fn behavior_slots(answer: &str) -> Option<(String, String)> {
    let (speed, steer) = answer.split_once(',')?;
    let (speed, steer) = (normalize_answer(speed), normalize_answer(steer));
    (!speed.is_empty() && !steer.is_empty()).then_some((speed, steer))
}

/// Slot accuracy for behavior answers. Callers pass behavior-stage records
/// only. Unparseable answers count as wrong on both slots.
pub fn behavior_accuracy<R: Scored>(records: &[R]) -> (BehaviorScore, Vec<Diagnostic>) {
    let mut diags = Vec::new();
    let (mut both, mut speed, mut steer, mut total) = (0, 0, 0, 0);
    for (i, r) in records.iter().enumerate() {
        let Some(gt) = r.ground_truth() else { continue };
        total += 1;
        let (Some(p), Some(g)) = (behavior_slots(r.prediction()), behavior_slots(gt)) else {
            diags.push(Diagnostic::warning(
                "behavior-format",
                format!("behavior record {i}"),
                format!("cannot split `{}` / `{gt}` into speed and steer", r.prediction()),
            ));
            continue;
        };
        let sp = p.0 == g.0;
        let st = p.1 == g.1;
        speed += sp as usize;
        steer += st as usize;
        both += (sp && st) as usize;
    }
    (
        BehaviorScore {
            overall: percent(both, total),
            speed: percent(speed, total),
            steer: percent(steer, total),
            total,
        },
        diags,
    )
}

/// Names accepted in a weight map.
pub const COMPONENT_NAMES: [&str; 7] = ["accuracy", "gpt", "match", "bleu1", "rouge_l", "cider", "behavior"];

/// Report components on a 0-100 scale. `None` means the component was not
/// computed (no judge, no behavior records...).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreComponents {
    pub accuracy: Option<f64>,
    pub gpt: Option<f64>,
    #[serde(rename = "match")]
    pub match_score: Option<f64>,
    pub bleu1: Option<f64>,
    pub rouge_l: Option<f64>,
    pub cider: Option<f64>,
    pub behavior: Option<f64>,
}

impl ScoreComponents {
    /// Builds percent-scale components from raw metric values: BLEU and
    /// ROUGE-L in [0, 1], CIDEr clipped at 10.
    pub fn from_raw(accuracy: f64, match_score: f64, bleu1: f64, rouge_l: f64, cider: f64) -> Self {
        Self {
            accuracy: Some(accuracy),
            gpt: None,
            match_score: Some(match_score),
            bleu1: Some(bleu1 * 100.0),
            rouge_l: Some(rouge_l * 100.0),
            cider: Some(cider.min(10.0) * 10.0),
            behavior: None,
        }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        match name {
            "accuracy" => self.accuracy,
            "gpt" => self.gpt,
            "match" => self.match_score,
            "bleu1" => self.bleu1,
            "rouge_l" => self.rouge_l,
            "cider" => self.cider,
            "behavior" => self.behavior,
            _ => None,
        }
    }

    /// Equal weights over the components that feed the headline table.
    pub fn default_weights(&self) -> BTreeMap<String, f64> {
        ["accuracy", "gpt", "match", "bleu1", "rouge_l", "cider"]
            .into_iter()
            .filter(|n| self.get(n).is_some())
            .map(|n| (n.to_string(), 1.0))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum WeightError {
    #[error("unknown score component `{0}`")]
    Unknown(String),
    #[error("weight for `{0}` is negative")]
    Negative(String),
    #[error("weights sum to zero")]
    ZeroSum,
    #[error("component `{0}` has weight {1} but was not computed")]
    Missing(String, f64),
}

/// Weighted arithmetic mean of the components named in `weights`.
pub fn final_score(components: &ScoreComponents, weights: &BTreeMap<String, f64>) -> Result<f64, WeightError> {
    let mut num = 0.0;
    let mut den = 0.0;
    for (name, &w) in weights {
        if !COMPONENT_NAMES.contains(&name.as_str()) {
            return Err(WeightError::Unknown(name.clone()));
        }
        if w.is_nan() || w < 0.0 {
            return Err(WeightError::Negative(name.clone()));
        }
        if w == 0.0 {
            continue;
        }
        let v = components
            .get(name)
            .ok_or_else(|| WeightError::Missing(name.clone(), w))?;
        num += w * v;
        den += w;
    }
    if den <= 0.0 {
        return Err(WeightError::ZeroSum);
    }
    Ok(num / den)
}

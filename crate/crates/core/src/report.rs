//! Scoring a set of predictions into an [`EvalReport`].

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::detection::{match_count, MatchMode, DEFAULT_MATCH_RADIUS};
use crate::diag::Diagnostic;
use crate::graph::ContextStrategy;
use crate::metrics::{
    accuracy, behavior_accuracy, bleu_n, cider, final_score, rouge_l, stable_mean, tokenize, BehaviorScore,
    ScoreComponents, Scored, WeightError,
};
use crate::model::{AnswerForm, Stage};
use crate::prompt::PromptStyle;
use crate::tag::parse_object_tags;
use crate::UNANSWERED;

/// One line of a predictions file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub frame_id: String,
    pub node_id: String,
    pub question: String,
    pub answer: String,
    pub gt_answer: Option<String>,
    pub stage: Stage,
    /// Not persisted; resolved from the dataset.
    #[serde(skip, default = "open_form")]
    pub answer_form: AnswerForm,
}

fn open_form() -> AnswerForm {
    AnswerForm::Open
}

impl Scored for PredictionRecord {
    fn prediction(&self) -> &str {
        &self.answer
    }
    fn ground_truth(&self) -> Option<&str> {
        self.gt_answer.as_deref()
    }
    fn form(&self) -> AnswerForm {
        self.answer_form
    }
}

/// External judge returning a 0-100 quality score for one answer.
pub trait Judge {
    fn score(&self, question: &str, gt_answer: &str, prediction: &str) -> Option<f64>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoringConfig {
    /// `None` selects equal weights over the computed headline components.
    pub weights: Option<BTreeMap<String, f64>>,
    pub radius: f64,
    pub match_mode: MatchMode,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            weights: None,
            radius: DEFAULT_MATCH_RADIUS,
            match_mode: MatchMode::Greedy,
        }
    }
}

/// Run settings echoed into the report so numbers carry their provenance.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunEcho {
    pub preset: Option<String>,
    pub strategy: Option<ContextStrategy>,
    pub style: Option<PromptStyle>,
    pub split: Option<String>,
    pub backend: Option<String>,
    pub seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub answered: usize,
    pub total: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchSummary {
    /// Matched ground-truth objects over all ground-truth objects, percent.
    pub per_object: f64,
    /// Mean of per-frame match fractions, percent.
    pub per_frame: f64,
    pub matched: usize,
    pub gt_objects: usize,
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub records: usize,
    pub coverage: Coverage,
    pub accuracy: f64,
    pub closed_questions: usize,
    #[serde(rename = "match")]
    pub match_score: MatchSummary,
    /// BLEU-1 through BLEU-4, each a mean of sentence scores.
    pub bleu: [f64; 4],
    pub rouge_l: f64,
    pub cider: f64,
    pub behavior: BehaviorScore,
    pub gpt_score: Option<f64>,
    pub final_score: f64,
    pub weights: BTreeMap<String, f64>,
    pub scoring: ScoringConfig,
    pub run: RunEcho,
    pub warnings: Vec<Diagnostic>,
}

/// Scores `records`. Unanswered nodes are scored as given (the sentinel
/// answer) and counted in [`Coverage`].
pub fn evaluate(
    records: &[PredictionRecord],
    scoring: &ScoringConfig,
    run: RunEcho,
    judge: Option<&dyn Judge>,
) -> Result<EvalReport, WeightError> {
    let mut warnings = Vec::new();

    let acc = accuracy(records);
    if acc.total == 0 {
        warnings.push(Diagnostic::warning(
            "no-closed",
            "accuracy",
            "no closed-form questions; accuracy is 0",
        ));
    }

    let behavior_records: Vec<PredictionRecord> =
        records.iter().filter(|r| r.stage == Stage::Behavior).cloned().collect();
    let (behavior, diags) = behavior_accuracy(&behavior_records);
    warnings.extend(diags);

    let scored: Vec<&PredictionRecord> = records.iter().filter(|r| r.gt_answer.is_some()).collect();
    let pairs: Vec<(Vec<String>, Vec<Vec<String>>)> = scored
        .iter()
        .map(|r| {
            (
                tokenize(&r.answer),
                alloc::vec![tokenize(r.gt_answer.as_deref().unwrap_or(""))],
            )
        })
        .collect();
    let mut bleu = [0.0; 4];
    for (k, b) in bleu.iter_mut().enumerate() {
        *b = stable_mean(pairs.iter().map(|(c, refs)| bleu_n(c, refs, k + 1)));
    }
    let rouge = stable_mean(pairs.iter().map(|(c, refs)| rouge_l(c, &refs[0])));
    let cider_score = cider(&pairs).corpus;

    let match_score = match_summary(&scored, scoring);
    if match_score.gt_objects == 0 {
        warnings.push(Diagnostic::warning(
            "no-objects",
            "match",
            "no object tags in ground truth; match is 0",
        ));
    }

    let gpt_score = judge.map(|j| {
        stable_mean(scored.iter().filter_map(|r| {
            j.score(&r.question, r.gt_answer.as_deref().unwrap_or(""), &r.answer)
                .map(|s| s.clamp(0.0, 100.0))
        }))
    });

    let mut components = ScoreComponents::from_raw(acc.percent, match_score.per_object, bleu[0], rouge, cider_score);
    components.gpt = gpt_score;
    if behavior.total > 0 {
        components.behavior = Some(behavior.overall);
    }
    let weights = scoring.weights.clone().unwrap_or_else(|| components.default_weights());
    let final_score = final_score(&components, &weights)?;

    Ok(EvalReport {
        records: records.len(),
        coverage: Coverage {
            answered: records.iter().filter(|r| r.answer != UNANSWERED).count(),
            total: records.len(),
        },
        accuracy: acc.percent,
        closed_questions: acc.total,
        match_score,
        bleu,
        rouge_l: rouge,
        cider: cider_score,
        behavior,
        gpt_score,
        final_score,
        weights,
        scoring: scoring.clone(),
        run,
        warnings,
    })
}

fn match_summary(records: &[&PredictionRecord], scoring: &ScoringConfig) -> MatchSummary {
    let mut per_frame: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for r in records {
        let gt = parse_object_tags(r.gt_answer.as_deref().unwrap_or(""));
        if gt.is_empty() {
            continue;
        }
        let pred = parse_object_tags(&r.answer);
        let m = match_count(&pred, &gt, scoring.radius, scoring.match_mode);
        let e = per_frame.entry(r.frame_id.as_str()).or_default();
        e.0 += m;
        e.1 += gt.len();
    }
    let matched: usize = per_frame.values().map(|v| v.0).sum();
    let gt_objects: usize = per_frame.values().map(|v| v.1).sum();
    MatchSummary {
        per_object: if gt_objects == 0 {
            0.0
        } else {
            100.0 * matched as f64 / gt_objects as f64
        },
        per_frame: 100.0 * stable_mean(per_frame.values().map(|&(m, g)| m as f64 / g as f64)),
        matched,
        gt_objects,
        radius: scoring.radius,
    }
}

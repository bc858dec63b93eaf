//! Report serializations: one-row CSV and a plain-text comparison table.

use std::fmt::Write as _;

use gvqa_core::report::EvalReport;

pub const CSV_HEADER: [&str; 26] = [
    "preset",
    "strategy",
    "context_form",
    "split",
    "backend",
    "seed",
    "radius",
    "match_mode",
    "weights",
    "records",
    "answered",
    "accuracy",
    "closed_questions",
    "match",
    "match_per_frame",
    "bleu1",
    "bleu2",
    "bleu3",
    "bleu4",
    "rouge_l",
    "cider",
    "behavior",
    "behavior_speed",
    "behavior_steer",
    "gpt",
    "final_score",
];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn csv_row(r: &EvalReport) -> Vec<String> {
    let weights: Vec<String> = r.weights.iter().map(|(k, v)| format!("{k}={v}")).collect();
    vec![
        opt(r.run.preset.as_ref()),
        opt(r.run.strategy),
        opt(r.run.style.map(|s| s.context_form)),
        opt(r.run.split.as_ref()),
        opt(r.run.backend.as_ref()),
        opt(r.run.seed),
        r.scoring.radius.to_string(),
        format!("{:?}", r.scoring.match_mode).to_lowercase(),
        weights.join(";"),
        r.records.to_string(),
        r.coverage.answered.to_string(),
        r.accuracy.to_string(),
        r.closed_questions.to_string(),
        r.match_score.per_object.to_string(),
        r.match_score.per_frame.to_string(),
        r.bleu[0].to_string(),
        r.bleu[1].to_string(),
        r.bleu[2].to_string(),
        r.bleu[3].to_string(),
        r.rouge_l.to_string(),
        r.cider.to_string(),
        r.behavior.overall.to_string(),
        r.behavior.speed.to_string(),
        r.behavior.steer.to_string(),
        opt(r.gpt_score),
        r.final_score.to_string(),
    ]
}

pub fn report_csv(r: &EvalReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory write");
    w.write_record(csv_row(r)).expect("in-memory write");
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}

/// One row per labelled report, in the layout of a results table.
pub fn render_table(rows: &[(String, &EvalReport)]) -> String {
    let label_w = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max("Method".len());
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<label_w$} | {:>8} | {:>8} | {:>8} | {:>8} | {:>8} | {:>8} | {:>8}",
        "Method", "Accuracy", "Match", "BLEU-1", "ROUGE-L", "CIDEr", "Behavior", "Final"
    );
    let _ = writeln!(s, "{}", "-".repeat(label_w + 7 * 11));
    for (label, r) in rows {
        let _ = writeln!(
            s,
            "{:<label_w$} | {:>8.2} | {:>8.2} | {:>8.4} | {:>8.4} | {:>8.4} | {:>8.2} | {:>8.2}",
            label,
            r.accuracy,
            r.match_score.per_object,
            r.bleu[0],
            r.rouge_l,
            r.cider,
            r.behavior.overall,
            r.final_score
        );
    }
    s
}

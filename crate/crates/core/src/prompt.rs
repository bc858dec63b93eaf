//! Prompt assembly: predecessor answers become context, optionally rewritten
//! as short declarative sentences, followed by the current question.

use alloc::borrow::Cow;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diag::Diagnostic;
use crate::graph::GvqaGraph;
use crate::model::{normalize_answer, KeyFrame, QaNode};
use crate::tag::{scan_object_tags, ObjectTag};

const FORMAT_INSTRUCTION_ASSET: &str = include_str!("../assets/format_instruction.txt");

/// The camera-layout instruction, byte-exact as published (including its
/// "back right left" slip). `corrected` replaces that phrase with "back right".
pub fn format_instruction(corrected: bool) -> Cow<'static, str> {
    let raw = FORMAT_INSTRUCTION_ASSET.trim_end();
    if corrected {
        Cow::Owned(raw.replace("back right left of", "back right of"))
    } else {
        Cow::Borrowed(raw)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextForm {
    /// Predecessors as `Q: <question> A: <answer>`.
    RawQa,
    /// Predecessors rewritten into statements.
    Declarative,
}

impl ContextForm {
    pub fn name(self) -> &'static str {
        match self {
            ContextForm::RawQa => "raw_qa",
            ContextForm::Declarative => "declarative",
        }
    }
}

impl fmt::Display for ContextForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("unknown prompt style `{0}` (expected raw_qa or declarative)")]
pub struct UnknownStyle(pub String);

impl FromStr for ContextForm {
    type Err = UnknownStyle;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "raw_qa" | "raw" => Ok(ContextForm::RawQa),
            "declarative" => Ok(ContextForm::Declarative),
            _ => Err(UnknownStyle(s.into())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptStyle {
    pub context_form: ContextForm,
    pub include_format_instruction: bool,
    pub include_detections: bool,
    /// Use "back right" instead of the published "back right left".
    #[serde(default)]
    pub correct_instruction_typo: bool,
}

impl PromptStyle {
    pub const fn new(context_form: ContextForm) -> Self {
        Self {
            context_form,
            include_format_instruction: false,
            include_detections: false,
            correct_instruction_typo: false,
        }
    }
}

impl Default for PromptStyle {
    fn default() -> Self {
        Self::new(ContextForm::RawQa)
    }
}

/// An auxiliary verb that can open a yes/no question.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Auxiliary {
    /// Question-initial form, matched case-insensitively ("Would").
    pub word: String,
    /// Used for a "yes" answer ("would").
    pub affirmative: String,
    /// Used for a "no" answer ("would not").
    pub negative: String,
}

/// Rule table for turning a yes/no QA pair into a statement.
///
/// A question `<Aux> <subject> <predicate>?` answered yes/no becomes
/// `<subject> <aux form> <predicate>.`. The subject must be a leading object
/// tag or one of `subject_phrases`; anything else falls back to `Q: .. A: ..`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewriteRules {
    pub auxiliaries: Vec<Auxiliary>,
    pub yes_answers: Vec<String>,
    pub no_answers: Vec<String>,
    #[serde(default)]
    pub subject_phrases: Vec<String>,
}

impl Default for RewriteRules {
    fn default() -> Self {
        let aux = |w: &str, a: &str, n: &str| Auxiliary {
            word: w.into(),
            affirmative: a.into(),
            negative: n.into(),
        };
        Self {
            auxiliaries: Vec::from([
                aux("Would", "would", "would not"),
                aux("Will", "will", "will not"),
                aux("Is", "is", "is not"),
                aux("Are", "are", "are not"),
                aux("Does", "does", "does not"),
                aux("Do", "do", "do not"),
                aux("Can", "can", "cannot"),
            ]),
            yes_answers: Vec::from(["yes".to_string()]),
            no_answers: Vec::from(["no".to_string()]),
            subject_phrases: Vec::from(["the ego vehicle".to_string()]),
        }
    }
}

impl RewriteRules {
    pub fn rewrite(&self, question: &str, answer: &str) -> String {
        self.try_rewrite(question, answer)
            .unwrap_or_else(|| raw_qa(question, answer))
    }

    fn try_rewrite(&self, question: &str, answer: &str) -> Option<String> {
        let norm = normalize_answer(answer);
        let positive = if self.yes_answers.iter().any(|y| normalize_answer(y) == norm) {
            true
        } else if self.no_answers.iter().any(|n| normalize_answer(n) == norm) {
            false
        } else {
            return None;
        };

        let body = question.trim().strip_suffix('?')?.trim_end();
        let (first, rest) = body.split_once(char::is_whitespace)?;
        let aux = self.auxiliaries.iter().find(|a| a.word.eq_ignore_ascii_case(first))?;
        let rest = rest.trim_start();

        let subject_len = self.subject_len(rest)?;
        let (subject, predicate) = rest.split_at(subject_len);
        let predicate = predicate.trim_start();
        if predicate.is_empty() {
            return None;
        }
        let form = if positive { &aux.affirmative } else { &aux.negative };
        Some(format!("{} {form} {predicate}.", capitalize(subject)))
    }

    fn subject_len(&self, text: &str) -> Option<usize> {
        if let Some((0, _)) = scan_object_tags(text).tags.first() {
            return text.find('>').map(|i| i + 1);
        }
        self.subject_phrases.iter().find_map(|p| {
            let head = text.get(..p.len())?;
            let boundary = text[p.len()..].starts_with(char::is_whitespace);
            (head.eq_ignore_ascii_case(p) && boundary).then_some(p.len())
        })
    }
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

pub fn raw_qa(question: &str, answer: &str) -> String {
    format!("Q: {} A: {}", question.trim(), answer.trim())
}

/// Rewrites a QA pair with the default rule table.
pub fn rewrite_declarative(question: &str, answer: &str) -> String {
    RewriteRules::default().rewrite(question, answer)
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Rendered {
    pub text: String,
    pub diagnostics: Vec<Diagnostic>,
}

/// Splits an answer of the shape "There is A, B, and C. The IDs of these
/// objects are T1, T2, and T3." into `[(T1, A), (T2, B), (T3, C)]`.
/// On failure, the tags found and the reason.
type Unpaired = (Vec<ObjectTag>, String);

fn pair_n0_clauses(n0_answer: &str) -> Result<Vec<(ObjectTag, String)>, Unpaired> {
    let scan = scan_object_tags(n0_answer);
    let tags: Vec<ObjectTag> = scan.tags.iter().map(|(_, t)| t.clone()).collect();
    let Some(&(first_offset, _)) = scan.tags.first() else {
        return Err((tags, "no object tags in first answer".into()));
    };
    let head = &n0_answer[..first_offset];
    let Some(end) = head.rfind('.') else {
        return Err((tags, "no description sentence before the object ids".into()));
    };
    let sentence = head[..end].trim();
    let lower = sentence.to_ascii_lowercase();
    let body = ["there is ", "there are "]
        .iter()
        .find(|p| lower.starts_with(*p))
        .map(|p| &sentence[p.len()..])
        .unwrap_or(sentence);

    let mut clauses: Vec<&str> = body
        .split(", and ")
        .flat_map(|part| part.split(", "))
        .map(str::trim)
        .filter(|c| !c.is_empty())
        .collect();
    if clauses.len() == 1 && tags.len() == 2 {
        if let Some((a, b)) = clauses[0].split_once(" and ") {
            clauses = Vec::from([a.trim(), b.trim()]);
        }
    }
    let clauses: Vec<&str> = clauses
        .into_iter()
        .map(|c| c.strip_prefix("and ").unwrap_or(c))
        .collect();
    if clauses.len() != tags.len() {
        let why = format!("{} description clauses but {} object ids", clauses.len(), tags.len());
        return Err((tags, why));
    }
    Ok(tags.into_iter().zip(clauses.into_iter().map(String::from)).collect())
}

/// One sentence per mentioned object, pairing it with its description from
/// the frame's first answer. Objects the first answer does not list are
/// skipped.
pub fn reformat_n0_answer(n0_answer: &str, mentioned_tags: &[ObjectTag]) -> Rendered {
    let mut out = Rendered::default();
    let mut seen: Vec<&str> = Vec::new();
    let mut sentences: Vec<String> = Vec::new();
    match pair_n0_clauses(n0_answer) {
        Ok(pairs) => {
            for tag in mentioned_tags {
                if seen.contains(&tag.id.as_str()) {
                    continue;
                }
                seen.push(&tag.id);
                if let Some((_, desc)) = pairs.iter().find(|(t, _)| t.id == tag.id) {
                    sentences.push(format!("{tag} is {desc}."));
                }
            }
        }
        Err((tags, why)) => {
            if !tags.is_empty() || !mentioned_tags.is_empty() {
                out.diagnostics.push(Diagnostic::warning("n0-shape", "", why));
            }
            for tag in mentioned_tags {
                if seen.contains(&tag.id.as_str()) {
                    continue;
                }
                seen.push(&tag.id);
                if tags.iter().any(|t| t.id == tag.id) {
                    sentences.push(format!("{tag}."));
                }
            }
        }
    }
    out.text = sentences.join("\n");
    out
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("predecessor `{0}` of `{1}` has no recorded answer")]
    MissingAnswer(String, String),
    #[error(transparent)]
    Graph(#[from] crate::graph::GraphError),
}

/// Renders the answers of `node`'s predecessors as context lines.
///
/// With [`ContextForm::Declarative`] the first node of the frame contributes
/// only sentences about objects the current question mentions; every other
/// predecessor goes through the rewrite rules.
pub fn assemble_context(
    node: &QaNode,
    graph: &GvqaGraph,
    frame: &KeyFrame,
    answers: &BTreeMap<String, String>,
    style: &PromptStyle,
    rules: &RewriteRules,
) -> Result<Rendered, PromptError> {
    let idx = graph.index_of(&node.node_id)?;
    let mut out = Rendered::default();
    let mut lines: Vec<String> = Vec::new();
    for p in graph.predecessor_indices(idx) {
        let pred = &frame.qa_list[p];
        let answer = answers
            .get(&pred.node_id)
            .ok_or_else(|| PromptError::MissingAnswer(pred.node_id.clone(), node.node_id.clone()))?;
        match style.context_form {
            ContextForm::RawQa => lines.push(raw_qa(&pred.question, answer)),
            ContextForm::Declarative if p == 0 => {
                let r = reformat_n0_answer(answer, &node.referenced_tags);
                for mut d in r.diagnostics {
                    d.location = pred.node_id.clone();
                    out.diagnostics.push(d);
                }
                if !r.text.is_empty() {
                    lines.push(r.text);
                }
            }
            ContextForm::Declarative => lines.push(rules.rewrite(&pred.question, answer)),
        }
    }
    out.text = lines.join("\n");
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssembledPrompt {
    /// Detection and predecessor context, without the instruction or question.
    pub context_block: String,
    pub question: String,
    pub full_text: String,
}

/// Joins instruction, detections, context and question with newlines,
/// skipping empty or disabled blocks.
pub fn build_prompt(context: &str, question: &str, style: &PromptStyle, detection_context: &str) -> AssembledPrompt {
    let instruction = format_instruction(style.correct_instruction_typo);
    let detections = if style.include_detections {
        detection_context
    } else {
        ""
    };
    let context_block: Vec<&str> = [detections, context].into_iter().filter(|b| !b.is_empty()).collect();
    let context_block = context_block.join("\n");

    let mut blocks: Vec<&str> = Vec::with_capacity(3);
    if style.include_format_instruction {
        blocks.push(&instruction);
    }
    if !context_block.is_empty() {
        blocks.push(&context_block);
    }
    blocks.push(question);
    let full_text = blocks.join("\n");
    AssembledPrompt {
        context_block,
        question: question.to_string(),
        full_text,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, ContextStrategy};
    use crate::model::{ClosedAnswerRule, Stage};
    use crate::tag::Camera;
    use alloc::vec;

    const N0_ANSWER: &str = "There is a red car to the front of the ego vehicle, a white SUV to the front of the ego vehicle, a white sedan to the front of the ego vehicle, a black sedan to the front of the ego vehicle, and a red light to the front of the ego vehicle. The IDs of these objects are <c1,CAM_FRONT,714.3,503.6>, <c2,CAM_FRONT,993.3,503.3>, <c3,CAM_FRONT,1300.8,531.7>, <c4,CAM_FRONT,892.5,507.5>, and <c5,CAM_FRONT,712.6,361.8>.";
    const C1: &str = "<c1,CAM_FRONT,714.3,503.6>";
    const C5: &str = "<c5,CAM_FRONT,712.6,361.8>";

    fn tag(s: &str) -> ObjectTag {
        s.parse().unwrap()
    }

    #[test]
    fn rewrite_negative() {
        let q = "Would <c1,CAM_FRONT,714.3,503.6> be in the moving direction of the ego vehicle?";
        assert_eq!(
            rewrite_declarative(q, "No."),
            "<c1,CAM_FRONT,714.3,503.6> would not be in the moving direction of the ego vehicle."
        );
        assert_eq!(
            rewrite_declarative(q, "Yes."),
            "<c1,CAM_FRONT,714.3,503.6> would be in the moving direction of the ego vehicle."
        );
    }

    #[test]
    fn rewrite_fallback() {
        let q = "What is the moving status of <c2,CAM_FRONT,993.3,503.3>?";
        assert_eq!(
            rewrite_declarative(q, "Going ahead."),
            "Q: What is the moving status of <c2,CAM_FRONT,993.3,503.3>? A: Going ahead."
        );
        // yes/no question but the answer is not yes/no
        let q = "Is <c1,CAM_FRONT,714.3,503.6> moving?";
        assert_eq!(rewrite_declarative(q, "Maybe."), format!("Q: {q} A: Maybe."));
        // no recognizable subject
        let q = "Is there a car?";
        assert_eq!(rewrite_declarative(q, "Yes."), format!("Q: {q} A: Yes."));
    }

    #[test]
    fn rewrite_subject_phrase() {
        assert_eq!(
            rewrite_declarative("Will the ego vehicle stop at the light?", "Yes."),
            "The ego vehicle will stop at the light."
        );
        assert_eq!(
            rewrite_declarative("Can the ego vehicle turn left?", "no"),
            "The ego vehicle cannot turn left."
        );
    }

    #[test]
    fn rewrite_rules_are_data() {
        let mut rules = RewriteRules::default();
        rules.auxiliaries.push(Auxiliary {
            word: "Should".into(),
            affirmative: "should".into(),
            negative: "should not".into(),
        });
        assert_eq!(
            rules.rewrite("Should <c3,CAM_BACK,1.0,2.0> yield?", "No."),
            "<c3,CAM_BACK,1.0,2.0> should not yield."
        );
    }

    #[test]
    fn n0_single_object() {
        let r = reformat_n0_answer(N0_ANSWER, &[tag(C1)]);
        assert_eq!(
            r.text,
            "<c1,CAM_FRONT,714.3,503.6> is a red car to the front of the ego vehicle."
        );
        assert!(r.diagnostics.is_empty());
    }

    #[test]
    fn n0_two_objects_in_mention_order() {
        let r = reformat_n0_answer(N0_ANSWER, &[tag(C1), tag(C5)]);
        assert_eq!(
            r.text,
            "<c1,CAM_FRONT,714.3,503.6> is a red car to the front of the ego vehicle.\n\
             <c5,CAM_FRONT,712.6,361.8> is a red light to the front of the ego vehicle."
        );
    }

    #[test]
    fn n0_absent_tag() {
        let r = reformat_n0_answer(N0_ANSWER, &[tag("<c9,CAM_BACK,1.0,1.0>")]);
        assert_eq!(r.text, "");
    }

    #[test]
    fn n0_two_clauses_without_comma() {
        let a = "There is a red car to the front of the ego vehicle and a bus to the back of the ego vehicle. The IDs of these objects are <c1,CAM_FRONT,714.3,503.6> and <c2,CAM_BACK,5.0,5.0>.";
        let r = reformat_n0_answer(a, &[tag("<c2,CAM_BACK,5.0,5.0>")]);
        assert_eq!(r.text, "<c2,CAM_BACK,5.0,5.0> is a bus to the back of the ego vehicle.");
    }

    #[test]
    fn n0_mismatch_degrades() {
        let a = "There is a red car. The IDs of these objects are <c1,CAM_FRONT,714.3,503.6>, <c2,CAM_BACK,5.0,5.0>, and <c3,CAM_BACK,6.0,6.0>.";
        let r = reformat_n0_answer(a, &[tag(C1)]);
        assert_eq!(r.text, "<c1,CAM_FRONT,714.3,503.6>.");
        assert_eq!(r.diagnostics.len(), 1);
    }

    #[test]
    fn prompt_blocks() {
        let none = PromptStyle::default();
        assert_eq!(build_prompt("", "Q?", &none, "ignored").full_text, "Q?");

        let e = PromptStyle {
            context_form: ContextForm::Declarative,
            include_format_instruction: true,
            include_detections: true,
            correct_instruction_typo: false,
        };
        let det = "There is a red car to the front of the ego vehicle, and the box center is [714.3,503.6].";
        let p = build_prompt("ctx", "Q?", &e, det);
        assert!(p.full_text.starts_with("Input six images in turn."));
        assert!(p.full_text.ends_with(&format!("\n{det}\nctx\nQ?")));
        assert_eq!(p.context_block, format!("{det}\nctx"));
    }

    #[test]
    fn instruction_typo_flag() {
        assert!(format_instruction(false).contains("in the back right left of the ego vehicle."));
        let fixed = format_instruction(true);
        assert!(fixed.contains("in the back right of the ego vehicle."));
        assert!(!fixed.contains("right left"));
        assert!(fixed.ends_with("(1600*900)."));
    }

    fn frame() -> KeyFrame {
        let rule = ClosedAnswerRule::default();
        let qs = [
            (
                Stage::Perception,
                "What are the important objects in the current scene?".to_string(),
            ),
            (Stage::Perception, format!("What is the moving status of {C1}?")),
            (
                Stage::Prediction,
                format!("Would {C1} be in the moving direction of the ego vehicle?"),
            ),
        ];
        KeyFrame {
            frame_id: "f".into(),
            camera_images: Camera::ALL.iter().map(|c| (*c, format!("{c}.jpg"))).collect(),
            key_objects: vec![],
            qa_list: qs
                .iter()
                .enumerate()
                .map(|(i, (s, q))| QaNode::new("f", i, *s, q.as_str(), Some("x".into()), &rule))
                .collect(),
            parse_diagnostics: vec![],
        }
    }

    fn answers() -> BTreeMap<String, String> {
        [
            ("f#0".to_string(), N0_ANSWER.to_string()),
            ("f#1".to_string(), "Going ahead.".to_string()),
            ("f#2".to_string(), "No.".to_string()),
        ]
        .into_iter()
        .collect()
    }

    #[test]
    fn context_raw_chain() {
        let f = frame();
        let g = build_graph(&f, ContextStrategy::Cot).unwrap();
        let rules = RewriteRules::default();
        let c = assemble_context(&f.qa_list[2], &g, &f, &answers(), &PromptStyle::default(), &rules).unwrap();
        assert_eq!(c.text, format!("Q: What is the moving status of {C1}? A: Going ahead."));
        let c0 = assemble_context(&f.qa_list[0], &g, &f, &answers(), &PromptStyle::default(), &rules).unwrap();
        assert_eq!(c0.text, "");
    }

    #[test]
    fn context_declarative_n0() {
        let f = frame();
        let g = build_graph(&f, ContextStrategy::CotN0).unwrap();
        let style = PromptStyle::new(ContextForm::Declarative);
        let c = assemble_context(&f.qa_list[2], &g, &f, &answers(), &style, &RewriteRules::default()).unwrap();
        assert_eq!(
            c.text,
            format!(
                "{C1} is a red car to the front of the ego vehicle.\n\
                 Q: What is the moving status of {C1}? A: Going ahead."
            )
        );
    }

    #[test]
    fn context_missing_answer() {
        let f = frame();
        let g = build_graph(&f, ContextStrategy::Cot).unwrap();
        let mut a = answers();
        a.remove("f#1");
        let err = assemble_context(
            &f.qa_list[2],
            &g,
            &f,
            &a,
            &PromptStyle::default(),
            &RewriteRules::default(),
        );
        assert_eq!(err, Err(PromptError::MissingAnswer("f#1".into(), "f#2".into())));
    }

    #[test]
    fn camera_phrases_cover_all() {
        for c in Camera::ALL {
            assert!(!c.phrase().is_empty());
        }
    }
}

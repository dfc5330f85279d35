//! Aggregate tables over a run and their CSV/JSON/Markdown renderings.
//!
//! Tables are lists of rows implementing [`TableRow`]. Column order is
//! fixed by the row type; numbers print with two decimals and a `.`
//! separator regardless of locale.

use std::collections::{BTreeMap, HashSet};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::agreement::{BloomLevel, QualRow};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::harness::{GenerationRecord, PromptMode, RecordKey};
use crate::score::ScoreRow;
use crate::textproc::{flesch, question_word, whitespace_length, OutputClass, QuestionWord};

/// Label of the ground-truth rows in the structure tables.
pub const GROUND_TRUTH_LABEL: &str = "GT";

/// Report file stem for each table; files are `report.<stem>.<ext>`.
pub const TABLE_STEMS: [&str; 4] = ["summary", "qwords", "length", "qual"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
    #[default]
    #[serde(rename = "md")]
    Markdown,
}

impl Format {
    pub const ALL: [Format; 3] = [Format::Csv, Format::Json, Format::Markdown];

    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
            Format::Markdown => "md",
        }
    }
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            "md" | "markdown" => Ok(Format::Markdown),
            other => Err(format!("unknown format {other:?} (expected csv, json or md)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Text(String),
    /// Percentage in [0, 100].
    Pct(f64),
    Num(f64),
    Int(usize),
    Missing,
}

impl Cell {
    fn text(&self) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Pct(v) | Cell::Num(v) => fixed2(*v),
            Cell::Int(n) => n.to_string(),
            Cell::Missing => String::new(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Text(s) => Value::String(s.clone()),
            Cell::Pct(v) | Cell::Num(v) => serde_json::Number::from_f64(*v).map_or(Value::Null, Value::Number),
            Cell::Int(n) => Value::from(*n),
            Cell::Missing => Value::Null,
        }
    }
}

fn opt(v: Option<f64>) -> Cell {
    v.map_or(Cell::Missing, Cell::Num)
}

/// Two-decimal fixed notation; negative zero prints as `0.00`.
pub fn fixed2(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

pub trait TableRow {
    const COLUMNS: &'static [&'static str];
    fn cells(&self) -> Vec<Cell>;
}

/// Header-only rendering, for tables that are legitimately empty.
pub fn render_header<T: TableRow>(format: Format) -> String {
    match format {
        Format::Csv => csv_line(T::COLUMNS.iter().map(|c| c.to_string())),
        Format::Json => "[]\n".into(),
        Format::Markdown => md_header(T::COLUMNS),
    }
}

pub fn render<T: TableRow>(rows: &[T], format: Format) -> Result<String> {
    if rows.is_empty() && format != Format::Json {
        return Err(Error::EmptyTable);
    }
    let mut out = match format {
        Format::Json => {
            let objects: Vec<Value> = rows
                .iter()
                .map(|r| {
                    let map: Map<String, Value> =
                        T::COLUMNS.iter().zip(r.cells()).map(|(c, v)| (c.to_string(), v.json())).collect();
                    Value::Object(map)
                })
                .collect();
            let mut s = serde_json::to_string_pretty(&objects)?;
            s.push('\n');
            return Ok(s);
        }
        Format::Csv => render_header::<T>(format),
        Format::Markdown => md_header(T::COLUMNS),
    };
    for row in rows {
        let row_cells = row.cells();
        let cells = row_cells.iter().map(Cell::text);
        match format {
            Format::Csv => out.push_str(&csv_line(cells)),
            _ => out.push_str(&md_line(cells.map(|c| if c.is_empty() { "n/a".into() } else { c.replace('|', "\\|") }))),
        }
    }
    Ok(out)
}

fn csv_line(fields: impl Iterator<Item = String>) -> String {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(fields).expect("writing to memory");
    String::from_utf8(writer.into_inner().expect("writing to memory")).expect("UTF-8 fields")
}

fn md_line(fields: impl Iterator<Item = String>) -> String {
    let cols: Vec<String> = fields.collect();
    format!("| {} |\n", cols.join(" | "))
}

fn md_header(columns: &[&str]) -> String {
    let mut s = md_line(columns.iter().map(|c| c.to_string()));
    s.push_str(&md_line(columns.iter().map(|_| "---".to_string())));
    s
}

/// Mode column of the summary: one prompt mode or the average over modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ModeLabel {
    Mode(PromptMode),
    Avg,
}

impl ModeLabel {
    pub fn label(self) -> String {
        match self {
            ModeLabel::Mode(m) => m.number().to_string(),
            ModeLabel::Avg => "Avg.".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub model: String,
    pub mode: ModeLabel,
    pub records: usize,
    pub pct_question: f64,
    pub pct_statement: f64,
    pub pct_empty: f64,
    pub rouge: Option<f64>,
    pub semantic: Option<f64>,
    pub icd: Option<f64>,
}

impl TableRow for SummaryRow {
    const COLUMNS: &'static [&'static str] =
        &["model", "mode", "records", "pct_question", "pct_statement", "pct_empty", "rouge", "semantic", "icd"];

    fn cells(&self) -> Vec<Cell> {
        vec![
            Cell::Text(self.model.clone()),
            Cell::Text(self.mode.label()),
            Cell::Int(self.records),
            Cell::Pct(self.pct_question),
            Cell::Pct(self.pct_statement),
            Cell::Pct(self.pct_empty),
            opt(self.rouge),
            opt(self.semantic),
            opt(self.icd),
        ]
    }
}

/// Whether structure and metric aggregates cover only questions or every
/// non-empty output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    #[default]
    QuestionsOnly,
    AllNonEmpty,
}

impl Scope {
    pub fn admits(self, class: OutputClass) -> bool {
        match self {
            Scope::QuestionsOnly => class == OutputClass::Question,
            Scope::AllNonEmpty => class != OutputClass::Empty,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Mean {
    sum: f64,
    n: usize,
}

impl Mean {
    fn add(&mut self, v: Option<f64>) {
        if let Some(v) = v {
            self.sum += v;
            self.n += 1;
        }
    }

    fn merge(&mut self, other: Mean) {
        self.sum += other.sum;
        self.n += other.n;
    }

    fn get(self) -> Option<f64> {
        (self.n > 0).then(|| self.sum / self.n as f64)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Tally {
    classes: [usize; 3],
    rouge: Mean,
    semantic: Mean,
    icd: Mean,
}

/// Partial counts behind the summary table. Tallies of disjoint record
/// sets merge into the tally of their union.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunTally {
    cells: BTreeMap<(String, PromptMode), Tally>,
}

fn class_index(c: OutputClass) -> usize {
    match c {
        OutputClass::Question => 0,
        OutputClass::Statement => 1,
        OutputClass::Empty => 2,
    }
}

impl RunTally {
    /// Counts `records` and the metric values of `scores`. Score rows
    /// whose class is outside `metric_scope` are ignored.
    pub fn build(records: &[GenerationRecord], scores: &[ScoreRow], metric_scope: Scope) -> Result<Self> {
        let keys: HashSet<RecordKey> = records.iter().map(GenerationRecord::key).collect();
        let mut tally = RunTally::default();
        for r in records {
            let cell = tally.cells.entry((r.model.clone(), r.mode)).or_default();
            cell.classes[class_index(r.output_class)] += 1;
        }
        for s in scores {
            if !keys.contains(&s.key()) {
                return Err(Error::DanglingScore(format!("{}/{}/m{}/{}", s.video_id, s.model, s.mode.number(), s.iter)));
            }
            if !metric_scope.admits(s.class) {
                continue;
            }
            let cell = tally.cells.entry((s.model.clone(), s.mode)).or_default();
            cell.rouge.add(s.rouge_l);
            cell.semantic.add(s.semantic_f1);
            cell.icd.add(s.icd);
        }
        Ok(tally)
    }

    pub fn merge(&mut self, other: &RunTally) {
        for (key, t) in &other.cells {
            let cell = self.cells.entry(key.clone()).or_default();
            for i in 0..3 {
                cell.classes[i] += t.classes[i];
            }
            cell.rouge.merge(t.rouge);
            cell.semantic.merge(t.semantic);
            cell.icd.merge(t.icd);
        }
    }

    /// Per-mode rows for each model followed by its `Avg.` row, which is
    /// the unweighted mean of the mode rows (metrics over the modes where
    /// they are defined).
    pub fn rows(&self) -> Vec<SummaryRow> {
        let mut by_model: BTreeMap<&str, Vec<SummaryRow>> = BTreeMap::new();
        for ((model, mode), t) in &self.cells {
            let total: usize = t.classes.iter().sum();
            let pct = |i: usize| if total == 0 { 0.0 } else { 100.0 * t.classes[i] as f64 / total as f64 };
            by_model.entry(model).or_default().push(SummaryRow {
                model: model.clone(),
                mode: ModeLabel::Mode(*mode),
                records: total,
                pct_question: pct(0),
                pct_statement: pct(1),
                pct_empty: pct(2),
                rouge: t.rouge.get(),
                semantic: t.semantic.get(),
                icd: t.icd.get(),
            });
        }
        let mut out = Vec::new();
        for (model, rows) in by_model {
            let n = rows.len() as f64;
            let mean = |f: fn(&SummaryRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
            let mean_opt = |f: fn(&SummaryRow) -> Option<f64>| {
                let mut m = Mean::default();
                rows.iter().for_each(|r| m.add(f(r)));
                m.get()
            };
            let avg = SummaryRow {
                model: model.to_string(),
                mode: ModeLabel::Avg,
                records: rows.iter().map(|r| r.records).sum(),
                pct_question: mean(|r| r.pct_question),
                pct_statement: mean(|r| r.pct_statement),
                pct_empty: mean(|r| r.pct_empty),
                rouge: mean_opt(|r| r.rouge),
                semantic: mean_opt(|r| r.semantic),
                icd: mean_opt(|r| r.icd),
            };
            out.extend(rows);
            out.push(avg);
        }
        out
    }
}

/// Summary table over all scored outputs.
pub fn summarize_run(records: &[GenerationRecord], scores: &[ScoreRow]) -> Result<Vec<SummaryRow>> {
    summarize_run_scoped(records, scores, Scope::AllNonEmpty)
}

pub fn summarize_run_scoped(records: &[GenerationRecord], scores: &[ScoreRow], metric_scope: Scope) -> Result<Vec<SummaryRow>> {
    Ok(RunTally::build(records, scores, metric_scope)?.rows())
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuestionWordRow {
    pub label: String,
    pub questions: usize,
    /// Percentages in [`QuestionWord::ALL`] order.
    pub pct: [f64; 10],
}

impl TableRow for QuestionWordRow {
    const COLUMNS: &'static [&'static str] =
        &["label", "where", "who", "when", "what", "why", "whose", "whom", "which", "how", "none"];

    fn cells(&self) -> Vec<Cell> {
        std::iter::once(Cell::Text(self.label.clone())).chain(self.pct.iter().map(|&p| Cell::Pct(p))).collect()
    }
}

fn question_word_row<'a>(label: &str, texts: impl Iterator<Item = &'a str>) -> Option<QuestionWordRow> {
    let mut counts = [0usize; 10];
    let mut n = 0;
    for t in texts {
        let w = question_word(t);
        counts[QuestionWord::ALL.iter().position(|&q| q == w).expect("closed enumeration")] += 1;
        n += 1;
    }
    (n > 0).then(|| QuestionWordRow {
        label: label.to_string(),
        questions: n,
        pct: counts.map(|c| 100.0 * c as f64 / n as f64),
    })
}

fn by_model(records: &[GenerationRecord], scope: Scope) -> BTreeMap<&str, Vec<&str>> {
    let mut groups: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for r in records.iter().filter(|r| scope.admits(r.output_class)) {
        groups.entry(&r.model).or_default().push(&r.raw_output);
    }
    groups
}

/// First-question-word distribution per model.
pub fn question_word_table(records: &[GenerationRecord], scope: Scope) -> Vec<QuestionWordRow> {
    by_model(records, scope)
        .into_iter()
        .filter_map(|(model, texts)| question_word_row(model, texts.into_iter()))
        .collect()
}

/// Ground-truth question-word row; `None` for a corpus without questions.
pub fn ground_truth_question_words(corpus: &Corpus) -> Option<QuestionWordRow> {
    question_word_row(GROUND_TRUTH_LABEL, ground_truth_texts(corpus))
}

fn ground_truth_texts(corpus: &Corpus) -> impl Iterator<Item = &str> {
    corpus.videos.iter().flat_map(|v| v.questions.iter().map(|q| q.text.as_str()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LengthFleschRow {
    pub label: String,
    pub outputs: usize,
    pub min: usize,
    pub avg: f64,
    pub max: usize,
    /// Mean of per-output scores over outputs that contain a word.
    pub flesch: Option<f64>,
}

impl TableRow for LengthFleschRow {
    const COLUMNS: &'static [&'static str] = &["label", "outputs", "min", "avg", "max", "flesch"];

    fn cells(&self) -> Vec<Cell> {
        vec![
            Cell::Text(self.label.clone()),
            Cell::Int(self.outputs),
            Cell::Int(self.min),
            Cell::Num(self.avg),
            Cell::Int(self.max),
            opt(self.flesch),
        ]
    }
}

fn length_flesch_row<'a>(label: &str, texts: impl Iterator<Item = &'a str>) -> Option<LengthFleschRow> {
    let mut lengths = Vec::new();
    let mut readability = Mean::default();
    for t in texts.filter(|t| !t.trim().is_empty()) {
        lengths.push(whitespace_length(t));
        readability.add(flesch(t).ok().map(|s| s.flesch));
    }
    if lengths.is_empty() {
        return None;
    }
    Some(LengthFleschRow {
        label: label.to_string(),
        outputs: lengths.len(),
        min: *lengths.iter().min().expect("non-empty"),
        avg: lengths.iter().sum::<usize>() as f64 / lengths.len() as f64,
        max: *lengths.iter().max().expect("non-empty"),
        flesch: readability.get(),
    })
}

/// Length in whitespace tokens and mean Flesch score per model.
pub fn length_flesch_table(records: &[GenerationRecord], scope: Scope) -> Vec<LengthFleschRow> {
    by_model(records, scope)
        .into_iter()
        .filter_map(|(model, texts)| length_flesch_row(model, texts.into_iter()))
        .collect()
}

pub fn ground_truth_length_flesch(corpus: &Corpus) -> Option<LengthFleschRow> {
    length_flesch_row(GROUND_TRUTH_LABEL, ground_truth_texts(corpus))
}

impl TableRow for QualRow {
    const COLUMNS: &'static [&'static str] = &[
        "model",
        "judgments",
        "relevance",
        "answerability",
        "non",
        "remember",
        "understand",
        "apply",
        "analyze",
        "evaluate",
        "create",
    ];

    fn cells(&self) -> Vec<Cell> {
        let mut cells = vec![
            Cell::Text(self.model.clone()),
            Cell::Int(self.judgments),
            Cell::Pct(self.relevance),
            Cell::Pct(self.answerability),
        ];
        cells.extend(BloomLevel::ALL.iter().map(|b| Cell::Pct(self.bloom[b.index()])));
        cells
    }
}

/// Share of non-empty outputs that repeat an earlier iteration of the same
/// session.
#[derive(Debug, Clone, PartialEq)]
pub struct DuplicateRow {
    pub model: String,
    pub outputs: usize,
    pub duplicates: usize,
    pub pct_duplicate: f64,
}

impl TableRow for DuplicateRow {
    const COLUMNS: &'static [&'static str] = &["model", "outputs", "duplicates", "pct_duplicate"];

    fn cells(&self) -> Vec<Cell> {
        vec![
            Cell::Text(self.model.clone()),
            Cell::Int(self.outputs),
            Cell::Int(self.duplicates),
            Cell::Pct(self.pct_duplicate),
        ]
    }
}

/// Outputs are compared after trimming and lowercasing.
pub fn duplicate_table(records: &[GenerationRecord]) -> Vec<DuplicateRow> {
    let mut sorted: Vec<&GenerationRecord> = records.iter().filter(|r| r.output_class != OutputClass::Empty).collect();
    sorted.sort_by_key(|r| r.key());
    let mut seen: HashSet<(&str, &str, PromptMode, String)> = HashSet::new();
    let mut counts: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for r in sorted {
        let norm = r.raw_output.trim().to_lowercase();
        let fresh = seen.insert((&r.video_id, &r.model, r.mode, norm));
        let c = counts.entry(&r.model).or_default();
        c.0 += 1;
        c.1 += usize::from(!fresh);
    }
    counts
        .into_iter()
        .map(|(model, (outputs, duplicates))| DuplicateRow {
            model: model.to_string(),
            outputs,
            duplicates,
            pct_duplicate: 100.0 * duplicates as f64 / outputs as f64,
        })
        .collect()
}

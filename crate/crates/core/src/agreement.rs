//! Human ratings of generated questions and inter-rater reliability.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::corpus::{Corpus, Source};
use crate::error::{Error, Result};
use crate::harness::{GenerationRecord, PromptMode};
use crate::rng::SplitMix64;
use crate::textproc::OutputClass;

/// Rater id under which post-discussion resolutions are stored.
pub const RESOLVED_RATER: &str = "resolved";

/// Cognitive level of a question in Bloom's taxonomy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BloomLevel {
    Non,
    Remember,
    Understand,
    Apply,
    Analyze,
    Evaluate,
    Create,
}

impl BloomLevel {
    pub const ALL: [BloomLevel; 7] = [
        BloomLevel::Non,
        BloomLevel::Remember,
        BloomLevel::Understand,
        BloomLevel::Apply,
        BloomLevel::Analyze,
        BloomLevel::Evaluate,
        BloomLevel::Create,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BloomLevel::Non => "non",
            BloomLevel::Remember => "remember",
            BloomLevel::Understand => "understand",
            BloomLevel::Apply => "apply",
            BloomLevel::Analyze => "analyze",
            BloomLevel::Evaluate => "evaluate",
            BloomLevel::Create => "create",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl FromStr for BloomLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BloomLevel::ALL
            .into_iter()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| Error::malformed("/bloom", format!("unknown Bloom level {s:?}")))
    }
}

impl fmt::Display for BloomLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One rater's judgment of one batch item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub rater_id: String,
    pub item_id: String,
    pub relevance: bool,
    pub answerability: bool,
    pub bloom: BloomLevel,
    pub timestamp: String,
}

impl AnnotationRecord {
    fn judgment(&self) -> (bool, bool, BloomLevel) {
        (self.relevance, self.answerability, self.bloom)
    }
}

pub fn read_annotations_csv(path: &Path) -> Result<Vec<AnnotationRecord>> {
    let mut reader = csv::Reader::from_path(path)?;
    reader.deserialize().map(|r| r.map_err(Error::from)).collect()
}

pub fn annotations_to_csv(records: &[AnnotationRecord]) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    if records.is_empty() {
        writer.write_record(["rater_id", "item_id", "relevance", "answerability", "bloom", "timestamp"])?;
    }
    for r in records {
        writer.serialize(r)?;
    }
    let bytes = writer.into_inner().map_err(|e| Error::io("<csv>", e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// Items × raters grid of nominal codes; `None` marks a missing rating.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingMatrix {
    pub items: Vec<String>,
    pub raters: Vec<String>,
    cells: Vec<Vec<Option<u32>>>,
}

impl RatingMatrix {
    pub fn new(items: Vec<String>, raters: Vec<String>) -> Self {
        let cells = vec![vec![None; raters.len()]; items.len()];
        Self { items, raters, cells }
    }

    /// Builds a matrix from rows of per-rater codes (`rows[item][rater]`).
    pub fn from_rows(rows: Vec<Vec<Option<u32>>>) -> Self {
        let n_raters = rows.iter().map(Vec::len).max().unwrap_or(0);
        let items = (0..rows.len()).map(|i| format!("item{i}")).collect();
        let raters = (0..n_raters).map(|r| format!("rater{r}")).collect();
        let cells = rows
            .into_iter()
            .map(|mut row| {
                row.resize(n_raters, None);
                row
            })
            .collect();
        Self { items, raters, cells }
    }

    pub fn set(&mut self, item: usize, rater: usize, code: Option<u32>) {
        self.cells[item][rater] = code;
    }

    pub fn get(&self, item: usize, rater: usize) -> Option<u32> {
        self.cells[item][rater]
    }

    pub fn rows(&self) -> &[Vec<Option<u32>>] {
        &self.cells
    }

    /// Applies `f` to every code.
    pub fn relabeled(&self, f: impl Fn(u32) -> u32) -> Self {
        Self {
            items: self.items.clone(),
            raters: self.raters.clone(),
            cells: self.cells.iter().map(|row| row.iter().map(|c| c.map(&f)).collect()).collect(),
        }
    }

    /// Adds a rater whose codes copy rater `source`.
    pub fn with_duplicate_rater(&self, source: usize) -> Self {
        let mut out = self.clone();
        out.raters.push(format!("{}-copy", self.raters[source]));
        for row in &mut out.cells {
            let code = row[source];
            row.push(code);
        }
        out
    }
}

/// Distance used between codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricLevel {
    #[default]
    Nominal,
    Ordinal,
}

/// Result of an alpha computation: a value, or the degenerate case where
/// every coding is identical and expected disagreement is zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaOutcome {
    Value(f64),
    Degenerate,
}

impl AlphaOutcome {
    pub fn value(self) -> Option<f64> {
        match self {
            AlphaOutcome::Value(v) => Some(v),
            AlphaOutcome::Degenerate => None,
        }
    }
}

impl Serialize for AlphaOutcome {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            AlphaOutcome::Value(v) => s.serialize_f64(*v),
            AlphaOutcome::Degenerate => s.serialize_str("degenerate"),
        }
    }
}

impl<'de> Deserialize<'de> for AlphaOutcome {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(AlphaOutcome::Value(v)),
            Raw::Text(t) if t == "degenerate" => Ok(AlphaOutcome::Degenerate),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("unexpected alpha {t:?}"))),
        }
    }
}

/// Krippendorff's alpha via the coincidence matrix.
///
/// Each item with `m >= 2` codings contributes `1 / (m - 1)` to the
/// coincidence count of every ordered pair of codings from different
/// raters; missing cells are skipped. Then
/// `alpha = 1 - (n - 1) * sum(o_ck * d_ck) / sum(n_c * n_k * d_ck)`.
pub fn krippendorff_alpha(matrix: &RatingMatrix, level: MetricLevel) -> Result<AlphaOutcome> {
    if matrix.raters.len() < 2 {
        return Err(Error::InsufficientData("alpha needs at least two raters".into()));
    }
    let values: BTreeSet<u32> = matrix.cells.iter().flatten().flatten().copied().collect();
    let index: HashMap<u32, usize> = values.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let k = values.len();
    let mut coincidence = vec![vec![0.0f64; k]; k];
    let mut pairable = false;
    for row in &matrix.cells {
        let coded: Vec<usize> = row.iter().flatten().map(|v| index[v]).collect();
        let m = coded.len();
        if m < 2 {
            continue;
        }
        pairable = true;
        let weight = 1.0 / (m - 1) as f64;
        for (i, &a) in coded.iter().enumerate() {
            for (j, &b) in coded.iter().enumerate() {
                if i != j {
                    coincidence[a][b] += weight;
                }
            }
        }
    }
    if !pairable {
        return Err(Error::InsufficientData("no item has two or more codings".into()));
    }
    let marginals: Vec<f64> = coincidence.iter().map(|row| row.iter().sum()).collect();
    let n: f64 = marginals.iter().sum();
    let distance = distance_matrix(&marginals, level);
    let mut observed = 0.0;
    let mut expected = 0.0;
    for c in 0..k {
        for d in 0..k {
            observed += coincidence[c][d] * distance[c][d];
            expected += marginals[c] * marginals[d] * distance[c][d];
        }
    }
    if expected == 0.0 {
        return Ok(AlphaOutcome::Degenerate);
    }
    Ok(AlphaOutcome::Value(1.0 - (n - 1.0) * observed / expected))
}

fn distance_matrix(marginals: &[f64], level: MetricLevel) -> Vec<Vec<f64>> {
    let k = marginals.len();
    let mut dist = vec![vec![0.0; k]; k];
    for c in 0..k {
        for d in 0..k {
            dist[c][d] = match level {
                MetricLevel::Nominal => f64::from(u8::from(c != d)),
                MetricLevel::Ordinal => {
                    let (lo, hi) = (c.min(d), c.max(d));
                    let between: f64 = marginals[lo..=hi].iter().sum();
                    let x = between - (marginals[c] + marginals[d]) / 2.0;
                    x * x
                }
            };
        }
    }
    dist
}

/// A rated dimension of an annotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dimension {
    Relevance,
    Answerability,
    Bloom,
}

impl Dimension {
    fn code(self, a: &AnnotationRecord) -> u32 {
        match self {
            Dimension::Relevance => u32::from(a.relevance),
            Dimension::Answerability => u32::from(a.answerability),
            Dimension::Bloom => a.bloom.index() as u32,
        }
    }
}

/// Rating matrix of one dimension; items and raters in sorted order. The
/// resolved pseudo-rater is left out.
pub fn rating_matrix(annotations: &[AnnotationRecord], dimension: Dimension) -> RatingMatrix {
    let independent = annotations.iter().filter(|a| a.rater_id != RESOLVED_RATER);
    let items: BTreeSet<&str> = independent.clone().map(|a| a.item_id.as_str()).collect();
    let raters: BTreeSet<&str> = independent.clone().map(|a| a.rater_id.as_str()).collect();
    let item_index: HashMap<&str, usize> = items.iter().enumerate().map(|(i, &s)| (s, i)).collect();
    let rater_index: HashMap<&str, usize> = raters.iter().enumerate().map(|(i, &s)| (s, i)).collect();
    let mut matrix = RatingMatrix::new(
        items.iter().map(|s| s.to_string()).collect(),
        raters.iter().map(|s| s.to_string()).collect(),
    );
    for a in independent {
        matrix.set(item_index[a.item_id.as_str()], rater_index[a.rater_id.as_str()], Some(dimension.code(a)));
    }
    matrix
}

/// Alpha per dimension; `None` where there is not enough data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub relevance: Option<AlphaOutcome>,
    pub answerability: Option<AlphaOutcome>,
    pub bloom: Option<AlphaOutcome>,
}

/// Pre-discussion agreement. Bloom levels use `bloom_level` distance;
/// the binary dimensions are always nominal.
pub fn agreement_report(annotations: &[AnnotationRecord], bloom_level: MetricLevel) -> AgreementReport {
    let alpha = |dim, level| krippendorff_alpha(&rating_matrix(annotations, dim), level).ok();
    AgreementReport {
        relevance: alpha(Dimension::Relevance, MetricLevel::Nominal),
        answerability: alpha(Dimension::Answerability, MetricLevel::Nominal),
        bloom: alpha(Dimension::Bloom, bloom_level),
    }
}

/// Videos to sample per source and which response to show.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSpec {
    pub videos_per_source: BTreeMap<Source, usize>,
    /// Iteration shown per (backend, mode); 1 is the first response.
    pub iteration: usize,
}

impl Default for SampleSpec {
    fn default() -> Self {
        Self {
            videos_per_source: [(Source::Teded, 3), (Source::Khan, 3)].into(),
            iteration: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchVideo {
    pub id: String,
    pub source: Source,
    pub domain: Option<String>,
    pub transcript: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchItem {
    pub item_id: String,
    pub video_id: String,
    pub model: String,
    pub mode: PromptMode,
    pub iteration: usize,
    pub question: String,
    pub output_class: OutputClass,
}

/// Items handed to raters, with the transcripts they need for context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationBatch {
    pub seed: u64,
    pub spec: SampleSpec,
    pub videos: Vec<BatchVideo>,
    pub items: Vec<BatchItem>,
}

impl EvaluationBatch {
    pub fn item(&self, item_id: &str) -> Option<&BatchItem> {
        self.items.iter().find(|i| i.item_id == item_id)
    }

    pub fn video(&self, video_id: &str) -> Option<&BatchVideo> {
        self.videos.iter().find(|v| v.id == video_id)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let batch: EvaluationBatch = serde_json::from_str(&text)?;
        let mut seen = BTreeSet::new();
        for item in &batch.items {
            if !seen.insert(item.item_id.as_str()) {
                return Err(Error::malformed("/items", format!("duplicate item id {:?}", item.item_id)));
            }
        }
        Ok(batch)
    }
}

pub fn item_id(video_id: &str, model: &str, mode: PromptMode) -> String {
    format!("{video_id}:{model}:m{}", mode.number())
}

/// Seeded sample of videos per source; every (backend, mode) response at
/// the chosen iteration of those videos becomes one item.
pub fn sample_batch(records: &[GenerationRecord], corpus: &Corpus, spec: &SampleSpec, seed: u64) -> Result<EvaluationBatch> {
    if records.is_empty() {
        return Err(Error::InsufficientData("no generation records to sample from".into()));
    }
    let with_records: BTreeSet<&str> = records.iter().map(|r| r.video_id.as_str()).collect();
    let mut rng = SplitMix64::new(seed);
    let mut chosen = Vec::new();
    for (&source, &quota) in &spec.videos_per_source {
        let mut candidates: Vec<&str> = with_records
            .iter()
            .copied()
            .filter(|id| corpus.get(id).is_some_and(|v| v.source == source))
            .collect();
        if candidates.len() < quota {
            return Err(Error::InsufficientData(format!(
                "need {quota} {source} videos, artifact has {}",
                candidates.len()
            )));
        }
        rng.shuffle(&mut candidates);
        chosen.extend(candidates.into_iter().take(quota));
    }
    let mut items = Vec::new();
    let mut videos = Vec::new();
    for id in chosen {
        let video = corpus.get(id).expect("candidate comes from the corpus");
        videos.push(BatchVideo {
            id: video.id.clone(),
            source: video.source,
            domain: video.domain.clone(),
            transcript: video.transcript.clone(),
        });
        let mut picked: Vec<&GenerationRecord> = records
            .iter()
            .filter(|r| r.video_id == id && r.iteration == spec.iteration)
            .collect();
        picked.sort_by(|a, b| (&a.model, a.mode).cmp(&(&b.model, b.mode)));
        items.extend(picked.into_iter().map(|r| BatchItem {
            item_id: item_id(&r.video_id, &r.model, r.mode),
            video_id: r.video_id.clone(),
            model: r.model.clone(),
            mode: r.mode,
            iteration: r.iteration,
            question: r.raw_output.clone(),
            output_class: r.output_class,
        }));
    }
    Ok(EvaluationBatch {
        seed,
        spec: spec.clone(),
        videos,
        items,
    })
}

/// Which annotations feed the qualitative table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resolution {
    /// Every independent judgment counts.
    PreDiscussion,
    /// One judgment per item: the resolved record, or the raters' shared
    /// judgment when they all agree.
    PostDiscussion,
}

/// Per-model percentages of relevant and answerable questions and the
/// distribution over Bloom levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualRow {
    pub model: String,
    pub judgments: usize,
    pub relevance: f64,
    pub answerability: f64,
    pub bloom: [f64; 7],
}

/// Qualitative table over items whose output is a question.
pub fn aggregate_annotations(
    annotations: &[AnnotationRecord],
    batch: &EvaluationBatch,
    resolution: Resolution,
) -> Result<Vec<QualRow>> {
    let mut by_item: BTreeMap<&str, Vec<&AnnotationRecord>> = BTreeMap::new();
    for a in annotations {
        if batch.item(&a.item_id).is_none() {
            return Err(Error::malformed("/item_id", format!("annotation for unknown item {:?}", a.item_id)));
        }
        by_item.entry(a.item_id.as_str()).or_default().push(a);
    }
    let mut judgments: BTreeMap<&str, Vec<(bool, bool, BloomLevel)>> = BTreeMap::new();
    let mut unresolved = Vec::new();
    for item in batch.items.iter().filter(|i| i.output_class == OutputClass::Question) {
        let Some(records) = by_item.get(item.item_id.as_str()) else {
            continue;
        };
        let entry = judgments.entry(item.model.as_str()).or_default();
        match resolution {
            Resolution::PreDiscussion => {
                entry.extend(records.iter().filter(|a| a.rater_id != RESOLVED_RATER).map(|a| a.judgment()));
            }
            Resolution::PostDiscussion => {
                if let Some(resolved) = records.iter().find(|a| a.rater_id == RESOLVED_RATER) {
                    entry.push(resolved.judgment());
                } else {
                    let distinct: BTreeSet<_> = records.iter().map(|a| a.judgment()).collect();
                    if distinct.len() == 1 {
                        entry.extend(distinct);
                    } else {
                        unresolved.push(item.item_id.clone());
                    }
                }
            }
        }
    }
    if !unresolved.is_empty() {
        return Err(Error::UnresolvedItems(unresolved));
    }
    Ok(judgments
        .into_iter()
        .filter(|(_, js)| !js.is_empty())
        .map(|(model, js)| {
            let n = js.len() as f64;
            let pct = |count: usize| 100.0 * count as f64 / n;
            let mut bloom = [0usize; 7];
            for j in &js {
                bloom[j.2.index()] += 1;
            }
            QualRow {
                model: model.to_string(),
                judgments: js.len(),
                relevance: pct(js.iter().filter(|j| j.0).count()),
                answerability: pct(js.iter().filter(|j| j.1).count()),
                bloom: bloom.map(pct),
            }
        })
        .collect())
}

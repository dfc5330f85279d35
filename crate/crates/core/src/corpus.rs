//! Question-generation corpora: loading, filtering, splitting and statistics.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// Provenance key listing videos whose transcript was empty at load time.
pub const DEGENERATE_KEY: &str = "degenerate_transcripts";
/// Provenance key listing videos left without questions by filtering.
pub const NO_QUESTIONS_KEY: &str = "videos_without_questions";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Teded,
    Khan,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Teded => "teded",
            Source::Khan => "khan",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionType {
    Open,
    MultipleChoice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthQuestion {
    pub text: String,
    pub qtype: QuestionType,
    pub useful: bool,
    #[serde(default)]
    pub options: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoRecord {
    pub id: String,
    pub source: Source,
    #[serde(default)]
    pub domain: Option<String>,
    pub duration_seconds: f64,
    pub transcript: String,
    #[serde(default)]
    pub media_ref: Option<String>,
    pub questions: Vec<GroundTruthQuestion>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Corpus {
    pub videos: Vec<VideoRecord>,
    #[serde(default)]
    pub provenance: Map<String, Value>,
}

impl Corpus {
    /// Validates every invariant and flags empty transcripts in provenance.
    pub fn validated(mut self) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut degenerate = Vec::new();
        for (i, video) in self.videos.iter().enumerate() {
            if !seen.insert(video.id.as_str()) {
                return Err(Error::DuplicateId(video.id.clone()));
            }
            if !(video.duration_seconds.is_finite() && video.duration_seconds >= 0.0) {
                return Err(Error::malformed(
                    format!("/videos/{i}/duration_seconds"),
                    "duration must be a finite non-negative number",
                ));
            }
            if video.transcript.trim().is_empty() {
                degenerate.push(Value::String(video.id.clone()));
            }
            for (j, q) in video.questions.iter().enumerate() {
                let pointer = format!("/videos/{i}/questions/{j}/options");
                match (q.qtype, &q.options) {
                    (QuestionType::MultipleChoice, Some(opts)) if opts.len() < 2 => {
                        return Err(Error::malformed(pointer, "multiple-choice needs at least 2 options"));
                    }
                    (QuestionType::MultipleChoice, None) => {
                        return Err(Error::malformed(pointer, "multiple-choice question without options"));
                    }
                    (QuestionType::Open, Some(_)) => {
                        return Err(Error::malformed(pointer, "open question must not carry options"));
                    }
                    _ => {}
                }
            }
        }
        if degenerate.is_empty() {
            self.provenance.remove(DEGENERATE_KEY);
        } else {
            self.provenance.insert(DEGENERATE_KEY.into(), Value::Array(degenerate));
        }
        Ok(self)
    }

    pub fn get(&self, id: &str) -> Option<&VideoRecord> {
        self.videos.iter().find(|v| v.id == id)
    }

    pub fn ids(&self) -> Vec<String> {
        self.videos.iter().map(|v| v.id.clone()).collect()
    }

    pub fn question_count(&self) -> usize {
        self.videos.iter().map(|v| v.questions.len()).sum()
    }
}

fn json_pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        out.push('/');
        match seg {
            Segment::Seq { index } => out.push_str(&index.to_string()),
            Segment::Map { key } => out.push_str(&key.replace('~', "~0").replace('/', "~1")),
            Segment::Enum { variant } => out.push_str(variant),
            Segment::Unknown => out.push('?'),
        }
    }
    if out.is_empty() {
        out.push('/');
    }
    out
}

/// Parses and validates a corpus document.
pub fn parse_corpus(json: &str) -> Result<Corpus> {
    let de = &mut serde_json::Deserializer::from_str(json);
    let corpus: Corpus = serde_path_to_error::deserialize(de).map_err(|e| {
        let pointer = json_pointer(e.path());
        Error::malformed(pointer, e.into_inner().to_string())
    })?;
    corpus.validated()
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text)
}

/// Question filtering rules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterPolicy {
    pub require_useful: bool,
    pub drop_cloze: bool,
    pub drop_no_question_mark: bool,
    pub cloze_markers: Vec<String>,
}

impl Default for FilterPolicy {
    fn default() -> Self {
        Self {
            require_useful: true,
            drop_cloze: true,
            drop_no_question_mark: true,
            cloze_markers: vec!["___".into(), "____".into(), "_____".into()],
        }
    }
}

impl FilterPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.drop_cloze && self.cloze_markers.iter().all(|m| m.is_empty()) {
            return Err(Error::malformed("/cloze_markers", "cloze markers required when drop_cloze is set"));
        }
        Ok(())
    }

    pub fn keeps(&self, q: &GroundTruthQuestion) -> bool {
        if self.require_useful && !q.useful {
            return false;
        }
        if self.drop_cloze
            && self
                .cloze_markers
                .iter()
                .any(|m| !m.is_empty() && q.text.contains(m.as_str()))
        {
            return false;
        }
        !(self.drop_no_question_mark && !q.text.contains('?'))
    }
}

/// Applies `policy` to every question. Videos left without questions stay in
/// the corpus and are listed under [`NO_QUESTIONS_KEY`] in provenance.
pub fn filter_questions(mut corpus: Corpus, policy: &FilterPolicy) -> Corpus {
    let mut emptied = Vec::new();
    for video in &mut corpus.videos {
        video.questions.retain(|q| policy.keeps(q));
        if video.questions.is_empty() {
            emptied.push(Value::String(video.id.clone()));
        }
    }
    if emptied.is_empty() {
        corpus.provenance.remove(NO_QUESTIONS_KEY);
    } else {
        corpus.provenance.insert(NO_QUESTIONS_KEY.into(), Value::Array(emptied));
    }
    corpus
}

/// Train/validation/test membership by video id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub seed: u64,
    pub ratios: [f64; 3],
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl SplitAssignment {
    pub fn subset(&self, name: &str) -> Option<&[String]> {
        match name {
            "train" => Some(&self.train),
            "val" => Some(&self.val),
            "test" => Some(&self.test),
            _ => None,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("split serializes") + "\n"
    }
}

pub fn check_ratios(ratios: [f64; 3]) -> Result<()> {
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) {
        return Err(Error::BadRatios(format!("{ratios:?} must be finite and non-negative")));
    }
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::BadRatios(format!("{ratios:?} sum to {sum}, expected 1")));
    }
    Ok(())
}

/// Sizes of the three subsets: floor, floor, remainder.
pub fn split_sizes(n: usize, ratios: [f64; 3]) -> (usize, usize, usize) {
    // The epsilon absorbs products like 0.29 * 100 = 28.999999999999996.
    let floor = |r: f64| ((r * n as f64) + 1e-9).floor() as usize;
    let train = floor(ratios[0]).min(n);
    let val = floor(ratios[1]).min(n - train);
    (train, val, n - train - val)
}

/// Seeded shuffle of the corpus id order, cut into floor/floor/remainder.
/// Each subset is stored sorted.
pub fn split_corpus(corpus: &Corpus, ratios: [f64; 3], seed: u64) -> Result<SplitAssignment> {
    check_ratios(ratios)?;
    let mut ids = corpus.ids();
    SplitMix64::new(seed).shuffle(&mut ids);
    let (n_train, n_val, _) = split_sizes(ids.len(), ratios);
    let mut test = ids.split_off(n_train + n_val);
    let mut val = ids.split_off(n_train);
    let mut train = ids;
    train.sort();
    val.sort();
    test.sort();
    Ok(SplitAssignment {
        seed,
        ratios,
        train,
        val,
        test,
    })
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SourceStats {
    pub videos: usize,
    pub questions: usize,
    pub avg_questions: f64,
    pub min_duration: f64,
    pub avg_duration: f64,
    pub max_duration: f64,
}

impl SourceStats {
    fn from_videos<'a>(videos: impl IntoIterator<Item = &'a VideoRecord>) -> Self {
        let mut stats = SourceStats::default();
        let mut total_duration = 0.0;
        for v in videos {
            if stats.videos == 0 {
                stats.min_duration = v.duration_seconds;
            }
            stats.videos += 1;
            stats.questions += v.questions.len();
            total_duration += v.duration_seconds;
            stats.min_duration = stats.min_duration.min(v.duration_seconds);
            stats.max_duration = stats.max_duration.max(v.duration_seconds);
        }
        if stats.videos > 0 {
            stats.avg_questions = stats.questions as f64 / stats.videos as f64;
            stats.avg_duration = total_duration / stats.videos as f64;
        }
        stats
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CorpusStats {
    pub per_source: BTreeMap<Source, SourceStats>,
    pub total: SourceStats,
}

pub fn corpus_stats(corpus: &Corpus) -> CorpusStats {
    let sources: BTreeSet<Source> = corpus.videos.iter().map(|v| v.source).collect();
    let per_source = sources
        .into_iter()
        .map(|s| (s, SourceStats::from_videos(corpus.videos.iter().filter(|v| v.source == s))))
        .collect();
    CorpusStats {
        per_source,
        total: SourceStats::from_videos(&corpus.videos),
    }
}

/// Per-subset, per-source video and question counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub subset: String,
    pub source: Option<Source>,
    pub videos: usize,
    pub questions: usize,
}

pub fn split_stats(corpus: &Corpus, split: &SplitAssignment) -> Vec<SplitCounts> {
    let mut rows = Vec::new();
    for (name, ids) in [("train", &split.train), ("val", &split.val), ("test", &split.test)] {
        let members: Vec<&VideoRecord> = ids.iter().filter_map(|id| corpus.get(id)).collect();
        for source in [Some(Source::Teded), Some(Source::Khan), None] {
            let picked = members.iter().filter(|v| source.is_none_or(|s| v.source == s));
            let (videos, questions) = picked.fold((0, 0), |(n, q), v| (n + 1, q + v.questions.len()));
            rows.push(SplitCounts {
                subset: name.to_string(),
                source,
                videos,
                questions,
            });
        }
    }
    rows
}

/// `H:MM:SS`, rounded to the nearest second.
pub fn format_hms(seconds: f64) -> String {
    let total = seconds.max(0.0).round() as u64;
    format!("{}:{:02}:{:02}", total / 3600, (total / 60) % 60, total % 60)
}

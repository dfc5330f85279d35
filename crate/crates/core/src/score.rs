//! Scoring driver: turns a records file into per-output score rows.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::embed::{self, EmbeddingProvider, EmbeddingVector};
use crate::error::{Error, Result};
use crate::harness::{GenerationRecord, PromptMode, RecordKey};
use crate::metrics::{self, DomainPool, DEFAULT_ICD_DOMAINS};
use crate::par::{self, Execution};
use crate::textproc::{self, OutputClass};

/// Scores file inside a run directory.
pub const SCORES_FILE: &str = "scores.jsonl";

/// Metric bundle for one generation output. A metric is `None` when it does
/// not apply: no ground-truth questions, no usable tokens, or (for ICD) no
/// eligible domain pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub video_id: String,
    pub model: String,
    pub mode: PromptMode,
    pub iter: usize,
    pub class: OutputClass,
    pub rouge_l: Option<f64>,
    pub semantic_f1: Option<f64>,
    pub icd: Option<f64>,
}

impl ScoreRow {
    pub fn key(&self) -> RecordKey {
        (self.video_id.clone(), self.model.clone(), self.mode, self.iter)
    }
}

#[derive(Debug, Clone)]
pub struct ScoreConfig {
    pub icd_domains: BTreeSet<String>,
    pub pool_cap: Option<usize>,
    pub seed: u64,
    /// Rescaling baseline for semantic F1; 0 disables rescaling.
    pub baseline: f64,
    pub exec: Execution,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self {
            icd_domains: DEFAULT_ICD_DOMAINS.iter().map(|d| d.to_string()).collect(),
            pool_cap: None,
            seed: 0,
            baseline: 0.0,
            exec: Execution::default(),
        }
    }
}

struct VideoContext<'a> {
    references: Vec<&'a str>,
    reference_tokens: Vec<Vec<String>>,
    pool: Option<&'a DomainPool>,
    transcript: Option<EmbeddingVector>,
}

/// Scores every non-empty record.
///
/// ROUGE-L and semantic F1 take the best match over the video's
/// ground-truth questions; ICD uses the video's domain pool. Rows come out
/// in record order.
pub fn score_records(
    records: &[GenerationRecord],
    corpus: &Corpus,
    provider: &dyn EmbeddingProvider,
    config: &ScoreConfig,
) -> Result<Vec<ScoreRow>> {
    let pools = metrics::build_domain_pools(corpus, &config.icd_domains, provider, config.pool_cap, config.seed, config.exec)?;

    let video_ids: BTreeSet<&str> = records.iter().map(|r| r.video_id.as_str()).collect();
    let mut contexts: HashMap<&str, VideoContext> = HashMap::new();
    let mut missing_transcripts: Vec<(&str, String)> = Vec::new();
    for id in video_ids {
        let video = corpus
            .get(id)
            .ok_or_else(|| Error::malformed("/video_id", format!("record references unknown video {id:?}")))?;
        let pool = video
            .domain
            .as_deref()
            .and_then(|d| pools.get(d))
            .filter(|p| p.size_for(id) > 0 && !video.transcript.trim().is_empty());
        let transcript = pool.and_then(|p| p.transcript_of(id)).cloned();
        if pool.is_some() && transcript.is_none() {
            missing_transcripts.push((id, video.transcript.clone()));
        }
        contexts.insert(
            id,
            VideoContext {
                references: video.questions.iter().map(|q| q.text.as_str()).collect(),
                reference_tokens: video.questions.iter().map(|q| textproc::tokenize(&q.text)).collect(),
                pool,
                transcript,
            },
        );
    }
    // Videos sampled out of a capped pool still need their own transcript.
    let texts: Vec<String> = missing_transcripts.iter().map(|(_, t)| t.clone()).collect();
    let extra = par::try_map(config.exec, &texts, |t| embed::embed_text(provider, t))?;
    for ((id, _), vector) in missing_transcripts.into_iter().zip(extra) {
        if let Some(ctx) = contexts.get_mut(id) {
            ctx.transcript = Some(vector);
        }
    }

    let scorable: Vec<&GenerationRecord> = records.iter().filter(|r| r.output_class != OutputClass::Empty).collect();
    par::try_map(config.exec, &scorable, |record| {
        let ctx = &contexts[record.video_id.as_str()];
        score_one(record, ctx, provider, config)
    })
}

fn score_one(record: &GenerationRecord, ctx: &VideoContext, provider: &dyn EmbeddingProvider, config: &ScoreConfig) -> Result<ScoreRow> {
    let text = record.raw_output.as_str();
    let candidate_tokens = textproc::tokenize(text);
    let token_index: HashMap<&str, usize> = ctx.references.iter().enumerate().map(|(i, r)| (*r, i)).collect();

    let rouge = match metrics::best_match(text, &ctx.references, |_, r| {
        Ok(metrics::rouge_l(&candidate_tokens, &ctx.reference_tokens[token_index[r]]).f1)
    }) {
        Ok(v) => Some(v),
        Err(Error::NoReferences) => None,
        Err(e) => return Err(e),
    };

    let semantic = if ctx.references.is_empty() || candidate_tokens.is_empty() {
        None
    } else {
        let mut batch = Vec::with_capacity(ctx.references.len() + 1);
        batch.push(text.to_string());
        batch.extend(ctx.references.iter().map(|r| r.to_string()));
        let vectors = provider.embed_token_batch(&batch)?;
        let (candidate_vecs, reference_vecs) = vectors.split_first().expect("candidate vectors present");
        let outcome = metrics::best_match(text, &ctx.references, |_, r| {
            let (p, rec) = metrics::greedy_match(candidate_vecs, &reference_vecs[token_index[r]])?;
            Ok(metrics::SemanticScore::from_raw(p, rec, config.baseline).f1)
        });
        match outcome {
            Ok(v) => Some(v),
            // A reference without tokens cannot be matched; skip the metric.
            Err(Error::EmptyText) => None,
            Err(e) => return Err(e),
        }
    };

    let icd = match (ctx.pool, &ctx.transcript) {
        (Some(pool), Some(transcript)) => {
            let q = embed::embed_text(provider, text)?;
            Some(metrics::icd_from_embeddings(&q, transcript, pool, &record.video_id)?.value)
        }
        _ => None,
    };

    Ok(ScoreRow {
        video_id: record.video_id.clone(),
        model: record.model.clone(),
        mode: record.mode,
        iter: record.iteration,
        class: record.output_class,
        rouge_l: rouge,
        semantic_f1: semantic,
        icd,
    })
}

pub fn write_scores(path: &Path, rows: &[ScoreRow]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for row in rows {
        serde_json::to_writer(&mut w, row)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_scores(path: &Path) -> Result<Vec<ScoreRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::malformed(format!("{}:{}", path.display(), i + 1), e.to_string())))
        .collect()
}

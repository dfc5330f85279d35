//! Reference-based and reference-free scoring of generated questions.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, VideoRecord};
use crate::embed::{self, EmbeddingProvider, EmbeddingVector, Granularity};
use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::rng::SplitMix64;

/// Domain labels specific enough to form ICD contrast pools.
pub const DEFAULT_ICD_DOMAINS: [&str; 4] = ["math", "science", "computing", "economics-finance-domain"];

/// Cosine similarity; 0 when either vector is zero. Clamped to [-1, 1].
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch { left: a.dim(), right: b.dim() });
    }
    let (mut dot, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.values().iter().zip(b.values()) {
        dot += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return Ok(0.0);
    }
    // sqrt(aa * bb) rather than sqrt(aa) * sqrt(bb): cos(v, v) is then exactly 1.
    Ok((dot / (aa * bb).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Length of the longest common subsequence.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L with balanced F1.
pub fn rouge_l<T: PartialEq>(candidate: &[T], reference: &[T]) -> RougeScore {
    let l = lcs_len(candidate, reference) as f64;
    let ratio = |d: usize| if d == 0 { 0.0 } else { l / d as f64 };
    let (precision, recall) = (ratio(candidate.len()), ratio(reference.len()));
    RougeScore {
        precision,
        recall,
        f1: harmonic(precision, recall),
    }
}

/// Greedy-matching semantic similarity. When `baseline > 0` the three values
/// are rescaled as `(raw - baseline) / (1 - baseline)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SemanticScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub baseline: f64,
}

impl SemanticScore {
    pub fn from_raw(precision: f64, recall: f64, baseline: f64) -> Self {
        let f1 = harmonic(precision, recall);
        let rescale = |x: f64| if baseline > 0.0 { (x - baseline) / (1.0 - baseline) } else { x };
        Self {
            precision: rescale(precision),
            recall: rescale(recall),
            f1: rescale(f1),
            baseline,
        }
    }
}

/// Raw (precision, recall) of greedy max-cosine matching.
pub fn greedy_match(candidate: &[EmbeddingVector], reference: &[EmbeddingVector]) -> Result<(f64, f64)> {
    if candidate.is_empty() || reference.is_empty() {
        return Err(Error::EmptyText);
    }
    let mut sims = vec![vec![0.0; reference.len()]; candidate.len()];
    for (i, c) in candidate.iter().enumerate() {
        for (j, r) in reference.iter().enumerate() {
            sims[i][j] = cosine(c, r)?;
        }
    }
    let max_of = |it: &mut dyn Iterator<Item = f64>| it.fold(f64::NEG_INFINITY, f64::max);
    let precision = sims.iter().map(|row| max_of(&mut row.iter().copied())).sum::<f64>() / candidate.len() as f64;
    let recall = (0..reference.len())
        .map(|j| max_of(&mut sims.iter().map(|row| row[j])))
        .sum::<f64>()
        / reference.len() as f64;
    Ok((precision, recall))
}

/// Token-level semantic F1 between two texts.
pub fn semantic_f1(candidate: &str, reference: &str, provider: &dyn EmbeddingProvider, baseline: f64) -> Result<SemanticScore> {
    if candidate.trim().is_empty() || reference.trim().is_empty() {
        return Err(Error::EmptyText);
    }
    if !provider.supports(Granularity::Tokens) {
        return Err(Error::UnsupportedGranularity(provider.name().to_string()));
    }
    let mut lists = provider.embed_token_batch(&[candidate.to_string(), reference.to_string()])?;
    let reference_vecs = lists.pop().unwrap_or_default();
    let candidate_vecs = lists.pop().unwrap_or_default();
    let (p, r) = greedy_match(&candidate_vecs, &reference_vecs)?;
    Ok(SemanticScore::from_raw(p, r, baseline))
}

/// Highest score of `generated` against any reference.
pub fn best_match<S: AsRef<str>>(
    generated: &str,
    references: &[S],
    mut scorer: impl FnMut(&str, &str) -> Result<f64>,
) -> Result<f64> {
    if references.is_empty() {
        return Err(Error::NoReferences);
    }
    let mut best = f64::NEG_INFINITY;
    for r in references {
        best = best.max(scorer(generated, r.as_ref())?);
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcdScore {
    pub value: f64,
    pub pool_size: usize,
    pub domain: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoolMember {
    pub video_id: String,
    pub transcript: EmbeddingVector,
}

/// Transcript embeddings of the videos sharing one domain label.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainPool {
    pub domain: String,
    pub members: Vec<PoolMember>,
}

impl DomainPool {
    /// Contrast set for `video_id`: every member except the video itself.
    pub fn contrast_for<'a>(&'a self, video_id: &'a str) -> impl Iterator<Item = &'a EmbeddingVector> + 'a {
        self.members
            .iter()
            .filter(move |m| m.video_id != video_id)
            .map(|m| &m.transcript)
    }

    pub fn size_for(&self, video_id: &str) -> usize {
        self.contrast_for(video_id).count()
    }

    pub fn transcript_of(&self, video_id: &str) -> Option<&EmbeddingVector> {
        self.members.iter().find(|m| m.video_id == video_id).map(|m| &m.transcript)
    }
}

/// Inner-class difference from precomputed embeddings: the question's cosine
/// to its own transcript minus its mean cosine to the other transcripts of
/// the domain.
pub fn icd_from_embeddings(
    question: &EmbeddingVector,
    transcript: &EmbeddingVector,
    pool: &DomainPool,
    video_id: &str,
) -> Result<IcdScore> {
    let own = cosine(question, transcript)?;
    let mut diff_sum = 0.0;
    let mut n = 0usize;
    // Averaging the differences equals own - mean(others) and is exactly 0
    // when every contrast transcript equals the target.
    for other in pool.contrast_for(video_id) {
        diff_sum += own - cosine(question, other)?;
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyPool(pool.domain.clone()));
    }
    Ok(IcdScore {
        value: (diff_sum / n as f64).clamp(-1.0, 1.0),
        pool_size: n,
        domain: pool.domain.clone(),
    })
}

pub fn icd(question: &str, video: &VideoRecord, pool: &DomainPool, provider: &dyn EmbeddingProvider) -> Result<IcdScore> {
    let domain = video.domain.as_deref().ok_or_else(|| Error::MissingDomain(video.id.clone()))?;
    if domain != pool.domain {
        return Err(Error::DomainMismatch {
            video: domain.to_string(),
            pool: pool.domain.clone(),
        });
    }
    if pool.size_for(&video.id) == 0 {
        return Err(Error::EmptyPool(pool.domain.clone()));
    }
    let vectors = embed::embed_texts(provider, &[question.to_string(), video.transcript.clone()])?;
    icd_from_embeddings(&vectors[0], &vectors[1], pool, &video.id)
}

fn domain_seed(seed: u64, domain: &str) -> u64 {
    domain.bytes().fold(seed, |h, b| h.rotate_left(5) ^ b as u64)
}

/// One pool per allowed domain that has at least one video with a
/// non-empty transcript. With `cap`, larger domains are sampled down to
/// `cap` members by a seeded shuffle; members keep corpus order.
pub fn build_domain_pools(
    corpus: &Corpus,
    allowed_domains: &BTreeSet<String>,
    provider: &dyn EmbeddingProvider,
    cap: Option<usize>,
    seed: u64,
    exec: Execution,
) -> Result<BTreeMap<String, DomainPool>> {
    let mut pools = BTreeMap::new();
    for domain in allowed_domains {
        let mut members: Vec<&VideoRecord> = corpus
            .videos
            .iter()
            .filter(|v| v.domain.as_deref() == Some(domain.as_str()) && !v.transcript.trim().is_empty())
            .collect();
        if members.is_empty() {
            continue;
        }
        if let Some(cap) = cap.filter(|&c| c < members.len()) {
            let mut order: Vec<usize> = (0..members.len()).collect();
            SplitMix64::new(domain_seed(seed, domain)).shuffle(&mut order);
            order.truncate(cap);
            order.sort_unstable();
            members = order.into_iter().map(|i| members[i]).collect();
        }
        let embeddings = par::try_map(exec, &members, |v| embed::embed_text(provider, &v.transcript))?;
        let members = members
            .iter()
            .zip(embeddings)
            .map(|(v, transcript)| PoolMember {
                video_id: v.id.clone(),
                transcript,
            })
            .collect();
        pools.insert(
            domain.clone(),
            DomainPool {
                domain: domain.clone(),
                members,
            },
        );
    }
    Ok(pools)
}

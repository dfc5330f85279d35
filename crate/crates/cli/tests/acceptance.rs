//! Acceptance criteria, one line each on stderr.
//!
//! Every criterion is checked against an oracle written here, independent
//! of the library code it exercises. The single test fails if any
//! criterion does.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use vidqg_core::agreement::{krippendorff_alpha, AlphaOutcome, MetricLevel, RatingMatrix};
use vidqg_core::corpus::{filter_questions, load_corpus, split_corpus, Corpus, FilterPolicy, Source, VideoRecord};
use vidqg_core::embed::{embed_text, LocalEmbedder};
use vidqg_core::harness::{
    build_prompt, load_records, run_experiment, BackendProfile, ExperimentConfig, GenerationBackend, GenerationRecord,
    MockBackend, PromptMode,
};
use vidqg_core::http::RetryPolicy;
use vidqg_core::metrics::{build_domain_pools, icd, icd_from_embeddings, rouge_l, DEFAULT_ICD_DOMAINS};
use vidqg_core::par::Execution;
use vidqg_core::report::{question_word_table, render, summarize_run, Format, ModeLabel, Scope, SummaryRow};
use vidqg_core::rng::SplitMix64;
use vidqg_core::score::{score_records, ScoreConfig, ScoreRow};
use vidqg_core::textproc::{classify_output, flesch, flesch_score, OutputClass};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);
/// (model, mode) -> (classes, [rouge, semantic, icd] values).
type Groups = BTreeMap<(String, u8), (Vec<OutputClass>, [Vec<f64>; 3])>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn fixture(name: &str) -> PathBuf {
    root().join("fixtures").join(name)
}

fn filtered(name: &str) -> Corpus {
    filter_questions(load_corpus(fixture(name)).unwrap(), &FilterPolicy::default())
}

// ROUGE-L -------------------------------------------------------------------

/// All lists over {0,1,2} of length <= 7, ordered by length.
fn all_lists() -> Vec<Vec<u8>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..7 {
        frontier = frontier
            .iter()
            .flat_map(|l: &Vec<u8>| {
                (0..3u8).map(move |s| {
                    let mut l = l.clone();
                    l.push(s);
                    l
                })
            })
            .collect();
        out.extend(frontier.iter().cloned());
    }
    out
}

fn rouge_exhaustive() -> Outcome {
    let start = Instant::now();
    let lists = all_lists();
    let index: HashMap<&[u8], usize> = lists.iter().enumerate().map(|(i, l)| (l.as_slice(), i)).collect();
    let words = lists.len().div_ceil(64);
    // Bitset of every subsequence of each list, enumerated by index mask.
    let subsequences: Vec<Vec<u64>> = lists
        .par_iter()
        .map(|l| {
            let mut bits = vec![0u64; words];
            for mask in 0u32..(1 << l.len()) {
                let sub: Vec<u8> = (0..l.len()).filter(|i| mask & (1 << i) != 0).map(|i| l[i]).collect();
                let id = index[sub.as_slice()];
                bits[id / 64] |= 1 << (id % 64);
            }
            bits
        })
        .collect();
    let lens: Vec<usize> = lists.iter().map(Vec::len).collect();
    let mismatches: usize = (0..lists.len())
        .into_par_iter()
        .map(|a| {
            let mut bad = 0;
            for b in 0..lists.len() {
                // Longest common subsequence = longest list in both sets; ids grow with length.
                let mut longest = 0;
                for w in (0..words).rev() {
                    let common = subsequences[a][w] & subsequences[b][w];
                    if common != 0 {
                        longest = lens[w * 64 + 63 - common.leading_zeros() as usize];
                        break;
                    }
                }
                let l = longest as f64;
                let p = if lens[a] == 0 { 0.0 } else { l / lens[a] as f64 };
                let r = if lens[b] == 0 { 0.0 } else { l / lens[b] as f64 };
                let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
                let dp = rouge_l(&lists[a], &lists[b]);
                if dp.f1 != f1 || dp.precision != p || dp.recall != r {
                    bad += 1;
                }
            }
            bad
        })
        .sum();
    let elapsed = start.elapsed();
    let pairs = lists.len() * lists.len();
    ensure(mismatches == 0, || format!("{mismatches} of {pairs} pairs differ"))?;
    ensure(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    Ok(format!("{pairs} pairs identical in {:.2}s", elapsed.as_secs_f64()))
}

// ICD -------------------------------------------------------------------------

fn oracle_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn oracle_icd(q: &[f64], own: &[f64], others: &[&[f64]]) -> f64 {
    let mean = others.iter().map(|o| oracle_cosine(q, o)).sum::<f64>() / others.len() as f64;
    oracle_cosine(q, own) - mean
}

fn domain_scores(corpus: &Corpus) -> Vec<ScoreRow> {
    let records: Vec<GenerationRecord> = corpus
        .videos
        .iter()
        .map(|v| GenerationRecord {
            video_id: v.id.clone(),
            model: "oracle".into(),
            mode: PromptMode::M1,
            iteration: 1,
            raw_output: v.questions[0].text.clone(),
            output_class: OutputClass::Question,
            request_digest: String::new(),
            timestamp: String::new(),
        })
        .collect();
    score_records(&records, corpus, &LocalEmbedder::default(), &ScoreConfig::default()).unwrap()
}

fn icd_correctness() -> Outcome {
    let start = Instant::now();
    let corpus = filtered("domains.json");
    let provider = LocalEmbedder::default();
    let frozen: BTreeMap<String, f64> = serde_json::from_str(
        &std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/icd_expected.json")).unwrap(),
    )
    .unwrap();
    ensure(frozen.len() == 12, || "frozen oracle incomplete".into())?;

    // Raw vectors, recombined by the oracle.
    let transcripts: HashMap<&str, Vec<f64>> = corpus
        .videos
        .iter()
        .map(|v| (v.id.as_str(), embed_text(&provider, &v.transcript).unwrap().values().to_vec()))
        .collect();
    let rows = domain_scores(&corpus);
    let pools = build_domain_pools(
        &corpus,
        &DEFAULT_ICD_DOMAINS.iter().map(|d| d.to_string()).collect(),
        &provider,
        None,
        0,
        Execution::Parallel,
    )
    .unwrap();
    let mut worst: f64 = 0.0;
    for (video, row) in corpus.videos.iter().zip(&rows) {
        let q = embed_text(&provider, &video.questions[0].text).unwrap();
        let others: Vec<&[f64]> = corpus
            .videos
            .iter()
            .filter(|o| o.domain == video.domain && o.id != video.id)
            .map(|o| transcripts[o.id.as_str()].as_slice())
            .collect();
        let expected = oracle_icd(q.values(), &transcripts[video.id.as_str()], &others);
        let direct = icd(&video.questions[0].text, video, &pools[video.domain.as_deref().unwrap()], &provider)
            .unwrap()
            .value;
        let scored = row.icd.ok_or_else(|| format!("{}: no icd", video.id))?;
        ensure((-1.0..=1.0).contains(&scored), || format!("{}: {scored} out of range", video.id))?;
        for got in [direct, scored] {
            worst = worst.max((got - expected).abs()).max((got - frozen[&video.id]).abs());
        }
    }
    ensure(worst <= 1e-9, || format!("max deviation {worst:e}"))?;

    let same = "Light bends when it enters water. The angle depends on the medium.";
    let mut twin = corpus.clone();
    for v in twin.videos.iter_mut().filter(|v| v.domain.as_deref() == Some("science")) {
        v.transcript = same.into();
    }
    let identical: Vec<f64> = domain_scores(&twin)
        .into_iter()
        .filter(|r| r.video_id.starts_with("science"))
        .map(|r| r.icd.unwrap())
        .collect();
    ensure(identical.len() == 4 && identical.iter().all(|&v| v == 0.0), || {
        format!("identical pool gave {identical:?}")
    })?;
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(5), || format!("took {elapsed:?}"))?;
    Ok(format!("12 values, max deviation {worst:.1e}; identical pool exactly 0; {:.2}s", elapsed.as_secs_f64()))
}

fn icd_scale_invariance() -> Outcome {
    let corpus = filtered("domains.json");
    let provider = LocalEmbedder::default();
    let pools = build_domain_pools(
        &corpus,
        &DEFAULT_ICD_DOMAINS.iter().map(|d| d.to_string()).collect(),
        &provider,
        None,
        0,
        Execution::Sequential,
    )
    .unwrap();
    let mut worst: f64 = 0.0;
    for video in &corpus.videos {
        let pool = &pools[video.domain.as_deref().unwrap()];
        let q = embed_text(&provider, &video.questions[0].text).unwrap();
        let t = pool.transcript_of(&video.id).unwrap().clone();
        let base = icd_from_embeddings(&q, &t, pool, &video.id).unwrap().value;
        let mut scaled_pool = pool.clone();
        for m in &mut scaled_pool.members {
            m.transcript = m.transcript.scaled(7.3);
        }
        let scaled = icd_from_embeddings(&q.scaled(7.3), &t.scaled(7.3), &scaled_pool, &video.id).unwrap().value;
        worst = worst.max((base - scaled).abs());
    }
    ensure(worst <= 1e-9, || format!("max change {worst:e}"))?;
    Ok(format!("max change {worst:.1e} over 12 videos"))
}

// Prompts ---------------------------------------------------------------------

fn prompt_golden() -> Outcome {
    let video = VideoRecord {
        id: "v".into(),
        source: Source::Teded,
        domain: None,
        duration_seconds: 1.0,
        transcript: "Rivers carve valleys.".into(),
        media_ref: None,
        questions: vec![],
    };
    let bare = BackendProfile {
        needs_question_list: false,
        needs_transcript: false,
        ..BackendProfile::stateless("bare")
    };
    let cases = [
        (PromptMode::M1, 1, "Create a question about the video content."),
        (PromptMode::M2, 1, "Develop a question that tests comprehension of the video's main idea."),
        (PromptMode::M3, 1, "Generate a question to assess the knowledge acquired from the video."),
        (PromptMode::M1, 2, "Create an additional question about the video content."),
        (PromptMode::M2, 3, "Develop an additional question that tests comprehension of the video's main idea."),
        (PromptMode::M3, 2, "Generate an additional question to assess the knowledge acquired from the video."),
    ];
    for (mode, iteration, expected) in cases {
        let got = build_prompt(mode, iteration, &[], &video, &bare).prompt;
        ensure(got == expected, || format!("mode {} iteration {iteration}: {got:?}", mode.number()))?;
    }
    let stateless = BackendProfile::stateless("text-only");
    let got = build_prompt(PromptMode::M1, 3, &["What is a river?".into(), "Why do valleys form?".into()], &video, &stateless);
    let expected = "The following questions were already generated: What is a river?; Why do valleys form?\n\
                    Create an additional question about the video content.\n\
                    Transcript: Rivers carve valleys.";
    ensure(got.prompt == expected, || format!("injected prompt {:?}", got.prompt))?;
    let first = build_prompt(PromptMode::M2, 1, &[], &video, &stateless).prompt;
    ensure(
        first == "Develop a question that tests comprehension of the video's main idea.\nTranscript: Rivers carve valleys.",
        || format!("first prompt {first:?}"),
    )?;
    Ok("3 templates, rewording, question list and transcript lines byte-exact".into())
}

// Harness -----------------------------------------------------------------------

fn experiment(dir: &Path, backend: Arc<MockBackend>) -> (Vec<GenerationRecord>, usize) {
    let corpus = filtered("corpus.json");
    let ids: Vec<String> = corpus.videos.iter().map(|v| v.id.clone()).collect();
    let config = ExperimentConfig {
        retry: RetryPolicy::immediate(1),
        ..ExperimentConfig::new(dir)
    };
    let backends: Vec<Arc<dyn GenerationBackend>> = vec![backend];
    let artifact = run_experiment(&ids, &corpus, &backends, &PromptMode::ALL, &config).unwrap();
    (artifact.records, artifact.manifest.records_new)
}

fn harness_accounting() -> Outcome {
    let corpus = filtered("corpus.json");
    let counts: Vec<usize> = corpus.videos.iter().map(|v| v.questions.len()).collect();
    ensure(counts == [2, 1], || format!("fixture question counts {counts:?}"))?;

    let dir = tempfile::tempdir().unwrap();
    let mock = Arc::new(MockBackend::templated(BackendProfile::stateless("mock")));
    let (records, new) = experiment(dir.path(), Arc::clone(&mock));
    ensure(records.len() == 9 && new == 9, || format!("{} records, {new} new", records.len()))?;
    let on_disk = load_records(dir.path().join("records.jsonl")).unwrap();
    ensure(on_disk.len() == 9, || format!("{} records on disk", on_disk.len()))?;

    let again = Arc::new(MockBackend::templated(BackendProfile::stateless("mock")));
    let (records, new) = experiment(dir.path(), Arc::clone(&again));
    ensure(records.len() == 9 && new == 0 && again.call_count() == 0, || {
        format!("resume: {} records, {new} new, {} calls", records.len(), again.call_count())
    })?;

    let empty_dir = tempfile::tempdir().unwrap();
    let once_empty = Arc::new(MockBackend::new(BackendProfile::stateless("mock"), |req, _| {
        let transcript = req.transcript.as_deref().unwrap_or_default();
        Ok(if req.prompt.contains("Create a question") && transcript.contains("fraction") {
            String::new()
        } else {
            "What is shown?".into()
        })
    }));
    let (records, _) = experiment(empty_dir.path(), once_empty);
    let summary = summarize_run(&records, &[]).unwrap();
    let avg = summary.iter().find(|r| r.mode == ModeLabel::Avg).unwrap();
    let expected = 100.0 / 9.0;
    ensure((avg.pct_empty - expected).abs() < 0.01, || format!("pct_empty {}", avg.pct_empty))?;
    Ok(format!("9 records, resume adds 0, pct_empty {:.2}", avg.pct_empty))
}

// Text --------------------------------------------------------------------------

fn random_string(rng: &mut SplitMix64) -> String {
    const ALPHABET: &[char] = &['a', 'Z', '7', ' ', '\t', '\n', '?', '.', '!', '\u{a0}', '\u{2003}', 'é', '？', '¿'];
    let len = rng.below(12) as usize;
    (0..len).map(|_| ALPHABET[rng.below(ALPHABET.len() as u64) as usize]).collect()
}

fn classification_partition() -> Outcome {
    let mut rng = SplitMix64::new(2024);
    let mut counts = [0usize; 3];
    for _ in 0..10_000 {
        let s = random_string(&mut rng);
        let expected = if s.chars().all(char::is_whitespace) {
            OutputClass::Empty
        } else if s.contains('?') {
            OutputClass::Question
        } else {
            OutputClass::Statement
        };
        let got = classify_output(&s);
        ensure(got == expected, || format!("{s:?}: {got:?}, expected {expected:?}"))?;
        counts[OutputClass::ALL.iter().position(|&c| c == got).unwrap()] += 1;
    }
    ensure(counts.iter().all(|&c| c > 0), || format!("class counts {counts:?}"))?;
    Ok(format!("10000 strings, class counts {counts:?}"))
}

fn flesch_checks() -> Outcome {
    let stats = flesch("The cat sat.").map_err(|e| e.to_string())?;
    ensure((stats.words, stats.sentences, stats.syllables) == (3, 1, 3), || format!("{stats:?}"))?;
    let expected = 206.835 - 1.015 * 3.0 - 84.6 * 1.0;
    ensure((stats.flesch - 119.19).abs() <= 0.01 && (stats.flesch - expected).abs() < 1e-9, || {
        format!("score {}", stats.flesch)
    })?;
    let mut rng = SplitMix64::new(99);
    for _ in 0..1000 {
        let words = 1 + rng.below(200) as usize;
        let sentences = 1 + rng.below(20) as usize;
        let syllables = words + rng.below(3 * words as u64) as usize;
        let more = syllables + 1 + rng.below(10) as usize;
        let (a, b) = (flesch_score(words, sentences, syllables), flesch_score(words, sentences, more));
        ensure(b < a, || format!("W={words} S={sentences}: {syllables}->{more} gave {a} -> {b}"))?;
    }
    Ok(format!("\"The cat sat.\" = {:.2}; 1000 perturbations strictly decreasing", stats.flesch))
}

// Agreement ---------------------------------------------------------------------

/// Coincidence-matrix alpha written from the definition.
fn oracle_alpha(rows: &[Vec<Option<u32>>]) -> f64 {
    let values: BTreeSet<u32> = rows.iter().flatten().flatten().copied().collect();
    let values: Vec<u32> = values.into_iter().collect();
    let k = values.len();
    let pos = |v: u32| values.iter().position(|&x| x == v).unwrap();
    let mut o = vec![vec![0.0f64; k]; k];
    for row in rows {
        let coded: Vec<u32> = row.iter().flatten().copied().collect();
        let m = coded.len();
        if m < 2 {
            continue;
        }
        for i in 0..m {
            for j in 0..m {
                if i != j {
                    o[pos(coded[i])][pos(coded[j])] += 1.0 / (m as f64 - 1.0);
                }
            }
        }
    }
    let nc: Vec<f64> = o.iter().map(|r| r.iter().sum()).collect();
    let n: f64 = nc.iter().sum();
    let mut d_o = 0.0;
    let mut d_e = 0.0;
    for c in 0..k {
        for d in 0..k {
            if c != d {
                d_o += o[c][d];
                d_e += nc[c] * nc[d];
            }
        }
    }
    1.0 - (n - 1.0) * d_o / d_e
}

fn random_rows(rng: &mut SplitMix64) -> Vec<Vec<Option<u32>>> {
    let raters = 2 + rng.below(3) as usize;
    let items = 3 + rng.below(15) as usize;
    (0..items)
        .map(|_| {
            (0..raters)
                .map(|_| (rng.below(10) < 8).then(|| rng.below(4) as u32))
                .collect()
        })
        .collect()
}

fn krippendorff_checks() -> Outcome {
    let mut rng = SplitMix64::new(7);
    for _ in 0..20 {
        let raters = 2 + rng.below(3) as usize;
        let rows: Vec<Vec<Option<u32>>> = (0..6)
            .map(|i| vec![Some(if i == 0 { 0 } else { 1 + rng.below(3) as u32 }); raters])
            .collect();
        let got = krippendorff_alpha(&RatingMatrix::from_rows(rows), MetricLevel::Nominal).unwrap();
        ensure(got == AlphaOutcome::Value(1.0), || format!("perfect agreement gave {got:?}"))?;
    }

    let fixture: Vec<Vec<Option<u32>>> = [(1, 1), (1, 0), (0, 0), (0, 1)].iter().map(|&(a, b)| vec![Some(a), Some(b)]).collect();
    let got = krippendorff_alpha(&RatingMatrix::from_rows(fixture.clone()), MetricLevel::Nominal)
        .unwrap()
        .value()
        .unwrap();
    let oracle = oracle_alpha(&fixture);
    ensure((got - oracle).abs() <= 1e-9, || format!("binary fixture {got} vs oracle {oracle}"))?;

    let mut checked = 0;
    while checked < 100 {
        let rows = random_rows(&mut rng);
        let m = RatingMatrix::from_rows(rows.clone());
        let Ok(AlphaOutcome::Value(base)) = krippendorff_alpha(&m, MetricLevel::Nominal) else {
            continue;
        };
        let mut perm = [0u32, 1, 2, 3];
        rng.shuffle(&mut perm);
        let relabeled = krippendorff_alpha(&m.relabeled(|c| perm[c as usize] * 5 + 1), MetricLevel::Nominal)
            .unwrap()
            .value()
            .unwrap();
        ensure((base - relabeled).abs() <= 1e-12, || format!("relabeling moved alpha {base} -> {relabeled}"))?;
        ensure((base - oracle_alpha(&rows)).abs() <= 1e-9, || format!("alpha {base} disagrees with oracle"))?;
        checked += 1;
    }
    Ok(format!("perfect = 1.0 exactly; binary fixture {got:.6} matches oracle; 100 permutations invariant"))
}

// Split ---------------------------------------------------------------------------

fn corpus_of(n: usize) -> Corpus {
    Corpus {
        videos: (0..n)
            .map(|i| VideoRecord {
                id: format!("vid{i:03}"),
                source: if i % 3 == 0 { Source::Khan } else { Source::Teded },
                domain: None,
                duration_seconds: 60.0,
                transcript: "t.".into(),
                media_ref: None,
                questions: vec![],
            })
            .collect(),
        provenance: Default::default(),
    }
}

fn split_contract() -> Outcome {
    for n in 1..=100 {
        let corpus = corpus_of(n);
        let split = split_corpus(&corpus, [0.8, 0.1, 0.1], 1234).map_err(|e| e.to_string())?;
        let (train, val) = (8 * n / 10, n / 10);
        let test = n - train - val;
        ensure((split.train.len(), split.val.len(), split.test.len()) == (train, val, test), || {
            format!("n={n}: sizes {}/{}/{}", split.train.len(), split.val.len(), split.test.len())
        })?;
        let mut all: Vec<&String> = split.train.iter().chain(&split.val).chain(&split.test).collect();
        all.sort();
        all.dedup();
        ensure(all.len() == n, || format!("n={n}: not a partition"))?;
        for seed in [1234, 42] {
            let a = split_corpus(&corpus, [0.8, 0.1, 0.1], seed).unwrap().to_json();
            let b = split_corpus(&corpus, [0.8, 0.1, 0.1], seed).unwrap().to_json();
            ensure(a == b, || format!("n={n} seed={seed}: split files differ"))?;
        }
    }
    Ok("n = 1..100: floor/floor/remainder sizes, partitions, byte-identical reruns".into())
}

// Report ----------------------------------------------------------------------------

fn report_fixture() -> (Vec<GenerationRecord>, Vec<ScoreRow>) {
    let mut rng = SplitMix64::new(31337);
    let texts = ["What is it?", "Why now?", "How so?", "Is it red?", "A statement.", "", "   "];
    let mut records = Vec::new();
    let mut scores = Vec::new();
    for i in 0..200 {
        let raw = texts[rng.below(texts.len() as u64) as usize].to_string();
        let record = GenerationRecord {
            video_id: format!("v{}", rng.below(10)),
            model: ["alpha", "beta", "gamma"][rng.below(3) as usize].into(),
            mode: PromptMode::ALL[rng.below(3) as usize],
            iteration: i + 1,
            output_class: classify_output(&raw),
            raw_output: raw,
            request_digest: String::new(),
            timestamp: String::new(),
        };
        if record.output_class != OutputClass::Empty {
            let unit = |rng: &mut SplitMix64| rng.below(1_000_000) as f64 / 1_000_000.0;
            scores.push(ScoreRow {
                video_id: record.video_id.clone(),
                model: record.model.clone(),
                mode: record.mode,
                iter: record.iteration,
                class: record.output_class,
                rouge_l: Some(unit(&mut rng)),
                semantic_f1: Some(unit(&mut rng)),
                icd: (rng.below(4) != 0).then(|| unit(&mut rng) * 2.0 - 1.0),
            });
        }
        records.push(record);
    }
    (records, scores)
}

/// Recomputes the summary with plain loops: (model, mode) -> values.
fn reaggregate(records: &[GenerationRecord], scores: &[ScoreRow]) -> BTreeMap<(String, String), [Option<f64>; 6]> {
    let mut groups = Groups::new();
    for r in records {
        groups.entry((r.model.clone(), r.mode.number())).or_default().0.push(r.output_class);
    }
    for s in scores {
        let g = &mut groups.get_mut(&(s.model.clone(), s.mode.number())).unwrap().1;
        for (slot, v) in g.iter_mut().zip([s.rouge_l, s.semantic_f1, s.icd]) {
            slot.extend(v);
        }
    }
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    let mut out = BTreeMap::new();
    let mut per_model: BTreeMap<String, Vec<[Option<f64>; 6]>> = BTreeMap::new();
    for ((model, mode), (classes, metrics)) in &groups {
        let pct = |c: OutputClass| 100.0 * classes.iter().filter(|&&x| x == c).count() as f64 / classes.len() as f64;
        let row = [
            Some(pct(OutputClass::Question)),
            Some(pct(OutputClass::Statement)),
            Some(pct(OutputClass::Empty)),
            mean(&metrics[0]),
            mean(&metrics[1]),
            mean(&metrics[2]),
        ];
        per_model.entry(model.clone()).or_default().push(row);
        out.insert((model.clone(), mode.to_string()), row);
    }
    for (model, rows) in per_model {
        let avg: Vec<Option<f64>> = (0..6)
            .map(|i| {
                let vals: Vec<f64> = rows.iter().filter_map(|r| r[i]).collect();
                mean(&vals)
            })
            .collect();
        out.insert((model, "Avg.".into()), avg.try_into().unwrap());
    }
    out
}

fn report_consistency() -> Outcome {
    let (records, scores) = report_fixture();
    let summary = summarize_run(&records, &scores).map_err(|e| e.to_string())?;
    let oracle = reaggregate(&records, &scores);
    ensure(summary.len() == oracle.len(), || format!("{} rows vs {}", summary.len(), oracle.len()))?;
    let values = |r: &SummaryRow| {
        [Some(r.pct_question), Some(r.pct_statement), Some(r.pct_empty), r.rouge, r.semantic, r.icd]
    };
    let mut worst: f64 = 0.0;
    for row in &summary {
        let expected = oracle
            .get(&(row.model.clone(), row.mode.label()))
            .ok_or_else(|| format!("unexpected row {} {}", row.model, row.mode.label()))?;
        for (got, want) in values(row).iter().zip(expected) {
            match (got, want) {
                (Some(g), Some(w)) => worst = worst.max((g - w).abs()),
                (None, None) => {}
                _ => return Err(format!("{} {}: {got:?} vs {want:?}", row.model, row.mode.label())),
            }
        }
        let total = row.pct_question + row.pct_statement + row.pct_empty;
        ensure((total - 100.0).abs() <= 0.01, || format!("class percentages sum to {total}"))?;
    }
    ensure(worst <= 1e-9, || format!("max deviation {worst:e}"))?;
    for row in question_word_table(&records, Scope::QuestionsOnly) {
        let total: f64 = row.pct.iter().sum();
        ensure((total - 100.0).abs() <= 0.01, || format!("{}: question words sum to {total}", row.label))?;
    }
    for format in Format::ALL {
        let a = render(&summary, format).unwrap();
        let b = render(&summarize_run(&records, &scores).unwrap(), format).unwrap();
        ensure(a == b, || format!("{format:?} render differs between runs"))?;
    }
    Ok(format!("{} rows, max deviation {worst:.1e}; distributions sum to 100; renders stable", summary.len()))
}

// End to end ------------------------------------------------------------------------

fn vidqg(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_vidqg"))
        .args(args)
        .env_remove("VIDQG_PROVIDER_URL")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    } else {
        Err(format!("vidqg {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)))
    }
}

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let corpus = fixture("corpus.json");
    let corpus = corpus.to_str().unwrap();
    vidqg(&["validate", corpus])?;
    vidqg(&["split", corpus, "--seed", "1234", "--ratios", "0.8,0.1,0.1", "--out", out])?;
    vidqg(&["generate", corpus, "--backends", "mock", "--modes", "1,2,3", "--out", out])?;
    vidqg(&["score", corpus, "--provider", "local", "--out", out])?;
    vidqg(&["report", corpus, "--out", out])?;
    let lines = std::fs::read_to_string(dir.path().join("records.jsonl")).unwrap().lines().count();
    ensure(lines == 9, || format!("{lines} records"))?;
    for stem in ["summary", "qwords", "length", "qual"] {
        for ext in ["csv", "json", "md"] {
            let path = dir.path().join(format!("report.{stem}.{ext}"));
            ensure(path.is_file(), || format!("missing {}", path.display()))?;
        }
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!("validate, split, generate, score, report in {:.2}s; 4 report files x 3 formats", elapsed.as_secs_f64()))
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 11] = [
        ("rouge-l exhaustive oracle", rouge_exhaustive),
        ("icd correctness", icd_correctness),
        ("icd scale invariance", icd_scale_invariance),
        ("prompt golden", prompt_golden),
        ("harness accounting", harness_accounting),
        ("classification partition", classification_partition),
        ("flesch", flesch_checks),
        ("krippendorff", krippendorff_checks),
        ("split contract", split_contract),
        ("report consistency", report_consistency),
        ("end-to-end dry run", end_to_end),
    ];
    let mut failed = Vec::new();
    let mut stderr = std::io::stderr();
    for (name, check) in criteria {
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        match &outcome {
            Ok(detail) => writeln!(stderr, "PASS  {name}: {detail}").unwrap(),
            Err(detail) => {
                writeln!(stderr, "FAIL  {name}: {detail}").unwrap();
                failed.push(name);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

//! Prompt protocol and generation runs against question-generation backends.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{mpsc, Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::corpus::{Corpus, VideoRecord};
use crate::error::{Error, Result};
use crate::http::{self, HttpError, RetryPolicy};
use crate::par::{self, Execution};
use crate::textproc::{self, OutputClass};

/// Prefix of the injected list of earlier questions.
pub const QUESTION_LIST_PREFIX: &str = "The following questions were already generated: ";
/// Prefix of the injected transcript line.
pub const TRANSCRIPT_PREFIX: &str = "Transcript: ";
/// Records file inside a run directory.
pub const RECORDS_FILE: &str = "records.jsonl";
/// Manifest file inside a run directory.
pub const MANIFEST_FILE: &str = "manifest.json";

/// One of the three fixed prompt templates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PromptMode {
    M1,
    M2,
    M3,
}

impl PromptMode {
    pub const ALL: [PromptMode; 3] = [PromptMode::M1, PromptMode::M2, PromptMode::M3];

    pub fn template(self) -> &'static str {
        match self {
            PromptMode::M1 => "Create a question about the video content.",
            PromptMode::M2 => "Develop a question that tests comprehension of the video's main idea.",
            PromptMode::M3 => "Generate a question to assess the knowledge acquired from the video.",
        }
    }

    pub fn number(self) -> u8 {
        match self {
            PromptMode::M1 => 1,
            PromptMode::M2 => 2,
            PromptMode::M3 => 3,
        }
    }

    pub fn from_number(n: u8) -> Option<Self> {
        match n {
            1 => Some(PromptMode::M1),
            2 => Some(PromptMode::M2),
            3 => Some(PromptMode::M3),
            _ => None,
        }
    }

    /// Parses a comma-separated list such as `1,2,3`.
    pub fn parse_list(list: &str) -> Result<Vec<PromptMode>> {
        let mut modes = Vec::new();
        for part in list.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let mode = part
                .parse::<u8>()
                .ok()
                .and_then(PromptMode::from_number)
                .ok_or_else(|| Error::malformed("/modes", format!("unknown prompt mode {part:?}")))?;
            if !modes.contains(&mode) {
                modes.push(mode);
            }
        }
        if modes.is_empty() {
            return Err(Error::malformed("/modes", "at least one prompt mode is required"));
        }
        Ok(modes)
    }
}

impl Serialize for PromptMode {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u8(self.number())
    }
}

impl<'de> Deserialize<'de> for PromptMode {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let n = u8::deserialize(d)?;
        PromptMode::from_number(n).ok_or_else(|| serde::de::Error::custom(format!("prompt mode must be 1, 2 or 3, got {n}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalityMask {
    pub use_video: bool,
    pub use_audio: bool,
}

impl Default for ModalityMask {
    fn default() -> Self {
        Self {
            use_video: true,
            use_audio: true,
        }
    }
}

/// What a backend needs in each request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendProfile {
    pub name: String,
    #[serde(default)]
    pub supports_session: bool,
    #[serde(default)]
    pub needs_question_list: bool,
    #[serde(default)]
    pub needs_transcript: bool,
    #[serde(default)]
    pub accepts_media: bool,
    #[serde(default)]
    pub modality_mask: ModalityMask,
    /// Free-form descriptive metadata (frame sampling strategy and so on).
    #[serde(default, skip_serializing_if = "Map::is_empty")]
    pub metadata: Map<String, Value>,
}

impl BackendProfile {
    /// A stateless profile that receives the earlier questions and the
    /// transcript with every request.
    pub fn stateless(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            supports_session: false,
            needs_question_list: true,
            needs_transcript: true,
            accepts_media: false,
            modality_mask: ModalityMask::default(),
            metadata: Map::new(),
        }
    }

    /// A profile whose server keeps a per-session question cache.
    pub fn session(name: impl Into<String>) -> Self {
        Self {
            supports_session: true,
            needs_question_list: false,
            needs_transcript: false,
            accepts_media: true,
            ..Self::stateless(name)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::malformed("/backends/name", "backend name must not be empty"));
        }
        if self.needs_question_list && self.supports_session {
            return Err(Error::malformed(
                format!("/backends/{}", self.name),
                "a session backend must not also need the question list",
            ));
        }
        Ok(())
    }
}

/// Prompt text plus the side channels sent with it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptPayload {
    pub prompt: String,
    pub transcript: Option<String>,
    pub media_ref: Option<String>,
}

/// Builds the prompt for one iteration.
///
/// Iteration 1 uses the template verbatim; later iterations ask for "an
/// additional question". Stateless backends that need it get the earlier
/// questions on a line before the prompt, and transcript-only backends get a
/// `Transcript:` line after it.
pub fn build_prompt(
    mode: PromptMode,
    iteration: usize,
    prior_questions: &[String],
    video: &VideoRecord,
    profile: &BackendProfile,
) -> PromptPayload {
    let mut instruction = mode.template().to_string();
    if iteration >= 2 {
        instruction = instruction.replacen("a question", "an additional question", 1);
    }
    let mut lines = Vec::with_capacity(3);
    if profile.needs_question_list && !prior_questions.is_empty() {
        lines.push(format!("{QUESTION_LIST_PREFIX}{}", prior_questions.join("; ")));
    }
    lines.push(instruction);
    if profile.needs_transcript {
        lines.push(format!("{TRANSCRIPT_PREFIX}{}", video.transcript));
    }
    PromptPayload {
        prompt: lines.join("\n"),
        transcript: profile.needs_transcript.then(|| video.transcript.clone()),
        media_ref: if profile.accepts_media { video.media_ref.clone() } else { None },
    }
}

/// Body of `POST /v1/generate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub model: String,
    pub session_id: Option<String>,
    pub prompt: String,
    pub transcript: Option<String>,
    pub media_ref: Option<String>,
    pub modality_mask: ModalityMask,
    pub params: Map<String, Value>,
}

impl GenerateRequest {
    /// Hex SHA-256 of the serialized request.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("request serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct GenerateResponse {
    pub text: String,
}

/// A question-generation model reachable through the generate protocol.
pub trait GenerationBackend: Send + Sync {
    fn profile(&self) -> &BackendProfile;

    /// A single delivery attempt; retries are handled by the caller.
    fn generate(&self, request: &GenerateRequest) -> Result<String, HttpError>;
}

/// Backend served over HTTP.
pub struct HttpBackend {
    profile: BackendProfile,
    url: String,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(profile: BackendProfile, base_url: &str, timeout: Duration) -> Self {
        Self {
            profile,
            url: http::endpoint(base_url, "/v1/generate"),
            agent: http::agent(timeout),
        }
    }
}

impl GenerationBackend for HttpBackend {
    fn profile(&self) -> &BackendProfile {
        &self.profile
    }

    fn generate(&self, request: &GenerateRequest) -> Result<String, HttpError> {
        http::post_json::<_, GenerateResponse>(&self.agent, &self.url, request).map(|r| r.text)
    }
}

type Responder = dyn Fn(&GenerateRequest, usize) -> Result<String, HttpError> + Send + Sync;

/// In-process backend for dry runs and tests. Every request is logged; the
/// responder sees the request and a zero-based call counter.
pub struct MockBackend {
    profile: BackendProfile,
    responder: Box<Responder>,
    calls: AtomicUsize,
    log: Mutex<Vec<GenerateRequest>>,
}

impl MockBackend {
    pub fn new(
        profile: BackendProfile,
        responder: impl Fn(&GenerateRequest, usize) -> Result<String, HttpError> + Send + Sync + 'static,
    ) -> Self {
        Self {
            profile,
            responder: Box::new(responder),
            calls: AtomicUsize::new(0),
            log: Mutex::new(Vec::new()),
        }
    }

    /// Deterministic questions built from transcript words.
    pub fn templated(profile: BackendProfile) -> Self {
        Self::new(profile, |req, _| Ok(templated_question(req)))
    }

    pub fn call_count(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn requests(&self) -> Vec<GenerateRequest> {
        self.log.lock().unwrap_or_else(|p| p.into_inner()).clone()
    }
}

impl GenerationBackend for MockBackend {
    fn profile(&self) -> &BackendProfile {
        &self.profile
    }

    fn generate(&self, request: &GenerateRequest) -> Result<String, HttpError> {
        let call = self.calls.fetch_add(1, Ordering::SeqCst);
        self.log.lock().unwrap_or_else(|p| p.into_inner()).push(request.clone());
        (self.responder)(request, call)
    }
}

fn templated_question(req: &GenerateRequest) -> String {
    let source = req.transcript.as_deref().unwrap_or(&req.prompt);
    let words: Vec<String> = textproc::tokenize(source).into_iter().filter(|w| w.chars().count() >= 5).collect();
    let digest = Sha256::digest(format!("{}|{}", req.session_id.as_deref().unwrap_or(""), req.prompt).as_bytes());
    let pick = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
    let topic = if words.is_empty() {
        "this topic".to_string()
    } else {
        words[(pick % words.len() as u64) as usize].clone()
    };
    if req.prompt.contains("comprehension") {
        format!("Why is {topic} central to the main idea of the video?")
    } else if req.prompt.contains("knowledge") {
        format!("How would you use what you learned about {topic} in a new situation?")
    } else {
        format!("What does the video explain about {topic}?")
    }
}

/// One raw backend output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub video_id: String,
    pub model: String,
    pub mode: PromptMode,
    pub iteration: usize,
    pub raw_output: String,
    pub output_class: OutputClass,
    pub request_digest: String,
    pub timestamp: String,
}

/// Identity of a record: (video, model, mode, iteration).
pub type RecordKey = (String, String, PromptMode, usize);

impl GenerationRecord {
    pub fn key(&self) -> RecordKey {
        (self.video_id.clone(), self.model.clone(), self.mode, self.iteration)
    }
}

fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Per-session settings.
#[derive(Debug, Clone, Default)]
pub struct SessionOptions {
    pub retry: RetryPolicy,
    pub params: Map<String, Value>,
}

pub fn session_id(video_id: &str, model: &str, mode: PromptMode) -> String {
    format!("{video_id}/{model}/m{}", mode.number())
}

/// Runs iterations `1..=n` of one (video, backend, mode) session.
pub fn run_session(
    video: &VideoRecord,
    backend: &dyn GenerationBackend,
    mode: PromptMode,
    n: usize,
    options: &SessionOptions,
) -> Result<Vec<GenerationRecord>> {
    resume_session(video, backend, mode, n, &[], options, |_| {})
}

/// Like [`run_session`] but skips iterations already in `done`, whose
/// outputs still count as earlier questions. `on_record` sees each new
/// record as soon as it exists. Returns only the new records.
///
/// Only outputs classified as questions are injected as earlier questions.
pub fn resume_session(
    video: &VideoRecord,
    backend: &dyn GenerationBackend,
    mode: PromptMode,
    n: usize,
    done: &[GenerationRecord],
    options: &SessionOptions,
    mut on_record: impl FnMut(&GenerationRecord),
) -> Result<Vec<GenerationRecord>> {
    let profile = backend.profile();
    let by_iteration: BTreeMap<usize, &GenerationRecord> = done.iter().map(|r| (r.iteration, r)).collect();
    let mut prior: Vec<String> = Vec::new();
    let mut fresh = Vec::new();
    let mut delivered_any = false;
    for iteration in 1..=n.max(1) {
        let record = match by_iteration.get(&iteration) {
            Some(&existing) => existing.clone(),
            None => {
                let payload = build_prompt(mode, iteration, &prior, video, profile);
                let request = GenerateRequest {
                    model: profile.name.clone(),
                    session_id: profile.supports_session.then(|| session_id(&video.id, &profile.name, mode)),
                    prompt: payload.prompt,
                    transcript: payload.transcript,
                    media_ref: payload.media_ref,
                    modality_mask: profile.modality_mask,
                    params: options.params.clone(),
                };
                let outcome = options.retry.run(HttpError::is_retryable, |_| backend.generate(&request));
                let raw_output = match outcome {
                    Ok(text) => text,
                    Err(HttpError::Transport(message)) if !delivered_any => {
                        return Err(Error::BackendUnreachable {
                            backend: profile.name.clone(),
                            message,
                        });
                    }
                    Err(_) => String::new(),
                };
                delivered_any = true;
                let record = GenerationRecord {
                    video_id: video.id.clone(),
                    model: profile.name.clone(),
                    mode,
                    iteration,
                    output_class: textproc::classify_output(&raw_output),
                    raw_output,
                    request_digest: request.digest(),
                    timestamp: now_rfc3339(),
                };
                on_record(&record);
                fresh.push(record.clone());
                record
            }
        };
        if record.output_class == OutputClass::Question {
            prior.push(record.raw_output.trim().to_string());
        }
    }
    Ok(fresh)
}

/// Settings of a generation run.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub out_dir: PathBuf,
    pub seed: u64,
    pub params: Map<String, Value>,
    pub retry: RetryPolicy,
    /// Concurrent sessions per backend.
    pub max_in_flight: usize,
    pub exec: Execution,
    /// Hash of the full run configuration, recorded in the manifest.
    pub config_hash: String,
    /// Snapshot of the full run configuration, recorded in the manifest.
    pub config: Value,
}

impl ExperimentConfig {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self {
            out_dir: out_dir.into(),
            seed: 0,
            params: Map::new(),
            retry: RetryPolicy::default(),
            max_in_flight: 4,
            exec: Execution::default(),
            config_hash: String::new(),
            config: Value::Null,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub seed: u64,
    pub backends: Vec<BackendProfile>,
    pub modes: Vec<PromptMode>,
    pub params: Map<String, Value>,
    pub retry: RetryPolicy,
    pub video_ids: Vec<String>,
    pub started_at: String,
    pub finished_at: String,
    pub wall_clock_seconds: f64,
    pub records_total: usize,
    pub records_new: usize,
    pub requests_sent: usize,
    pub unreachable: BTreeMap<String, String>,
    #[serde(default)]
    pub config: Value,
}

#[derive(Debug, Clone)]
pub struct RunArtifact {
    pub records: Vec<GenerationRecord>,
    pub manifest: RunManifest,
    pub records_path: PathBuf,
}

/// Number of generations per (video, backend, mode): one per ground-truth
/// question, at least one.
pub fn generation_count(video: &VideoRecord) -> usize {
    video.questions.len().max(1)
}

/// Reads a records file. A torn final line (no trailing newline) is
/// ignored; any other unparsable line is an error.
pub fn load_records(path: impl AsRef<Path>) -> Result<Vec<GenerationRecord>> {
    let path = path.as_ref();
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    let complete = text.ends_with('\n');
    let lines: Vec<&str> = text.lines().collect();
    let mut records = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(r) => records.push(r),
            Err(_) if i + 1 == lines.len() && !complete => break,
            Err(e) => return Err(Error::malformed(format!("{}:{}", path.display(), i + 1), e.to_string())),
        }
    }
    Ok(records)
}

fn sort_records(records: &mut [GenerationRecord]) {
    records.sort_by_key(GenerationRecord::key);
}

/// Rewrites `path` with one line per record, in key order.
pub fn write_records(path: &Path, records: &[GenerationRecord]) -> Result<()> {
    let tmp = path.with_extension("jsonl.tmp");
    {
        let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = BufWriter::new(file);
        for r in records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n").map_err(|e| Error::io(&tmp, e))?;
        }
        let file = w.into_inner().map_err(|e| Error::io(&tmp, e.into_error()))?;
        file.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

struct Session<'a> {
    video: &'a VideoRecord,
    mode: PromptMode,
    done: Vec<GenerationRecord>,
}

/// Generates `n` outputs per (video, backend, mode) and streams them to
/// `records.jsonl` under the output directory.
///
/// Iterations already present in the file are skipped, so rerunning a
/// finished run sends no requests. Sessions of one backend run with at most
/// `max_in_flight` in parallel; backends run side by side. After the run the
/// file is rewritten in key order and `manifest.json` is written. Backends
/// that cannot be reached are listed in the manifest rather than failing
/// the run.
pub fn run_experiment(
    video_ids: &[String],
    corpus: &Corpus,
    backends: &[Arc<dyn GenerationBackend>],
    modes: &[PromptMode],
    config: &ExperimentConfig,
) -> Result<RunArtifact> {
    if backends.is_empty() {
        return Err(Error::malformed("/backends", "at least one backend is required"));
    }
    if modes.is_empty() {
        return Err(Error::malformed("/modes", "at least one prompt mode is required"));
    }
    let mut names = BTreeSet::new();
    for b in backends {
        b.profile().validate()?;
        if !names.insert(b.profile().name.clone()) {
            return Err(Error::malformed("/backends", format!("backend {:?} listed twice", b.profile().name)));
        }
    }
    let videos: Vec<&VideoRecord> = video_ids
        .iter()
        .map(|id| corpus.get(id).ok_or_else(|| Error::malformed("/video_ids", format!("unknown video id {id:?}"))))
        .collect::<Result<_>>()?;

    let started = Instant::now();
    let started_at = now_rfc3339();
    fs::create_dir_all(&config.out_dir).map_err(|e| Error::io(&config.out_dir, e))?;
    let records_path = config.out_dir.join(RECORDS_FILE);
    let mut existing = load_records(&records_path)?;
    // Drop a torn tail and duplicates before appending.
    sort_records(&mut existing);
    existing.dedup_by(|a, b| a.key() == b.key());
    write_records(&records_path, &existing)?;

    let mut done: HashMap<(String, String, PromptMode), Vec<GenerationRecord>> = HashMap::new();
    for r in &existing {
        done.entry((r.video_id.clone(), r.model.clone(), r.mode)).or_default().push(r.clone());
    }

    let session_options = SessionOptions {
        retry: config.retry,
        params: config.params.clone(),
    };
    let (tx, rx) = mpsc::channel::<GenerationRecord>();
    let append_path = records_path.clone();
    let writer = std::thread::spawn(move || -> Result<usize> {
        let file = OpenOptions::new()
            .append(true)
            .create(true)
            .open(&append_path)
            .map_err(|e| Error::io(&append_path, e))?;
        let mut w = BufWriter::new(file);
        let mut written = 0;
        for record in rx {
            serde_json::to_writer(&mut w, &record)?;
            w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| Error::io(&append_path, e))?;
            written += 1;
        }
        Ok(written)
    });

    let unreachable: Mutex<BTreeMap<String, String>> = Mutex::new(BTreeMap::new());
    let requests = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for backend in backends {
            let name = backend.profile().name.clone();
            let sessions: Vec<Session> = videos
                .iter()
                .flat_map(|&video| modes.iter().map(move |&mode| (video, mode)))
                .filter_map(|(video, mode)| {
                    let prior = done.get(&(video.id.clone(), name.clone(), mode)).cloned().unwrap_or_default();
                    (prior.len() < generation_count(video)).then_some(Session { video, mode, done: prior })
                })
                .collect();
            let tx = tx.clone();
            let (unreachable, requests, options) = (&unreachable, &requests, &session_options);
            scope.spawn(move || {
                let dead = AtomicBool::new(false);
                let tx = Mutex::new(tx);
                par::for_each_bounded(config.exec, config.max_in_flight, &sessions, |s| {
                    if dead.load(Ordering::SeqCst) {
                        return;
                    }
                    let outcome = resume_session(
                        s.video,
                        backend.as_ref(),
                        s.mode,
                        generation_count(s.video),
                        &s.done,
                        options,
                        |r| {
                            requests.fetch_add(1, Ordering::SeqCst);
                            let _ = tx.lock().unwrap_or_else(|p| p.into_inner()).send(r.clone());
                        },
                    );
                    if let Err(e) = outcome {
                        dead.store(true, Ordering::SeqCst);
                        unreachable
                            .lock()
                            .unwrap_or_else(|p| p.into_inner())
                            .entry(name.clone())
                            .or_insert_with(|| e.to_string());
                    }
                });
            });
        }
    });
    drop(tx);
    let records_new = writer.join().expect("record writer panicked")?;

    let mut records = load_records(&records_path)?;
    sort_records(&mut records);
    records.dedup_by(|a, b| a.key() == b.key());
    write_records(&records_path, &records)?;

    let manifest = RunManifest {
        config_hash: config.config_hash.clone(),
        seed: config.seed,
        backends: backends.iter().map(|b| b.profile().clone()).collect(),
        modes: modes.to_vec(),
        params: config.params.clone(),
        retry: config.retry,
        video_ids: video_ids.to_vec(),
        started_at,
        finished_at: now_rfc3339(),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        records_total: records.len(),
        records_new,
        requests_sent: requests.load(Ordering::SeqCst),
        unreachable: unreachable.into_inner().unwrap_or_else(|p| p.into_inner()),
        config: config.config.clone(),
    };
    let manifest_path = config.out_dir.join(MANIFEST_FILE);
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| Error::io(&manifest_path, e))?;
    Ok(RunArtifact {
        records,
        manifest,
        records_path,
    })
}

/// Reads `manifest.json` from a run directory.
pub fn load_manifest(dir: impl AsRef<Path>) -> Result<RunManifest> {
    let path = dir.as_ref().join(MANIFEST_FILE);
    let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

/// Streams records from a file without loading it whole.
pub fn for_each_record(path: impl AsRef<Path>, mut f: impl FnMut(GenerationRecord)) -> Result<()> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            f(serde_json::from_str(&line).map_err(|e| Error::malformed(format!("{}:{}", path.display(), i + 1), e.to_string()))?);
        }
    }
    Ok(())
}

//! Record/replay of reasoner traffic.
//!
//! A transcript file starts with a header line and then holds one record per
//! completion call:
//!
//! ```text
//! {"transcript":1,"supports_images":true}
//! {"digest":"9f2c...","role":"planner","prompt":"...","completions":["..."],"usage":{...}}
//! ```
//!
//! Replay serves recorded completions for a digest in the order they were
//! recorded; once only one remains it keeps answering with it.

use std::collections::{HashMap, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{Reasoner, ReasonerError, ReasonerRequest, ReasonerResponse, Role, Usage};

pub const TRANSCRIPT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptHeader {
    pub transcript: u32,
    pub supports_images: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub digest: String,
    pub role: Role,
    pub prompt: String,
    pub completions: Vec<String>,
    pub usage: Usage,
}

/// Passes calls through to `inner` and appends each one to a transcript.
pub struct RecordingReasoner<R> {
    inner: R,
    sink: Mutex<File>,
}

impl<R: Reasoner> RecordingReasoner<R> {
    /// Opens `path` for appending, writing the header if the file is new or empty.
    pub fn create(inner: R, path: &Path) -> Result<Self, ReasonerError> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        let mut f = OpenOptions::new().create(true).append(true).open(path)?;
        if f.metadata()?.len() == 0 {
            let header = TranscriptHeader {
                transcript: TRANSCRIPT_VERSION,
                supports_images: inner.supports_images(),
            };
            writeln!(
                f,
                "{}",
                serde_json::to_string(&header).expect("header serializes")
            )?;
            f.flush()?;
        }
        Ok(Self {
            inner,
            sink: Mutex::new(f),
        })
    }
}

impl<R: Reasoner> Reasoner for RecordingReasoner<R> {
    fn complete(&self, req: &ReasonerRequest) -> Result<ReasonerResponse, ReasonerError> {
        let resp = self.inner.complete(req)?;
        let rec = TranscriptRecord {
            digest: req.digest(),
            role: req.role,
            prompt: req.prompt.clone(),
            completions: resp.completions.clone(),
            usage: resp.usage.clone(),
        };
        let mut line = serde_json::to_string(&rec).expect("record serializes");
        line.push('\n');
        let mut f = self.sink.lock().expect("transcript lock poisoned");
        f.write_all(line.as_bytes())?;
        f.flush()?;
        Ok(resp)
    }

    fn supports_images(&self) -> bool {
        self.inner.supports_images()
    }
}

/// Parsed transcript contents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transcript {
    pub header: TranscriptHeader,
    pub records: Vec<TranscriptRecord>,
    /// Set when an unterminated final line could not be parsed and was dropped.
    pub truncated: bool,
}

/// Parses transcript text. A malformed final line without a newline is
/// treated as an interrupted write and dropped; any other bad line is an error.
pub fn parse_transcript(text: &str) -> Result<Transcript, ReasonerError> {
    let mut lines = text.split_inclusive('\n').enumerate().peekable();
    let header = loop {
        match lines.next() {
            None => return Err(ReasonerError::Transcript("empty transcript".into())),
            Some((_, l)) if l.trim().is_empty() => continue,
            Some((i, l)) => {
                let h: TranscriptHeader = serde_json::from_str(l.trim()).map_err(|e| {
                    ReasonerError::Transcript(format!("line {}: bad header: {e}", i + 1))
                })?;
                if h.transcript != TRANSCRIPT_VERSION {
                    return Err(ReasonerError::Transcript(format!(
                        "unsupported transcript version {}",
                        h.transcript
                    )));
                }
                break h;
            }
        }
    };
    let mut records = Vec::new();
    let mut truncated = false;
    while let Some((i, raw)) = lines.next() {
        let l = raw.trim();
        if l.is_empty() {
            continue;
        }
        match serde_json::from_str::<TranscriptRecord>(l) {
            Ok(r) => records.push(r),
            Err(_) if lines.peek().is_none() && !raw.ends_with('\n') => {
                log::warn!("transcript line {} is truncated; ignoring it", i + 1);
                truncated = true;
            }
            Err(e) => return Err(ReasonerError::Transcript(format!("line {}: {e}", i + 1))),
        }
    }
    Ok(Transcript {
        header,
        records,
        truncated,
    })
}

pub fn render_transcript(t: &Transcript) -> String {
    let mut out = serde_json::to_string(&t.header).expect("header serializes");
    out.push('\n');
    for r in &t.records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

/// Completions and usage of one recorded call.
type Recorded = (Vec<String>, Usage);

/// Serves completions from a transcript; unknown digests are a [`ReasonerError::ReplayMiss`].
#[derive(Debug)]
pub struct ReplayReasoner {
    queues: Mutex<HashMap<String, VecDeque<Recorded>>>,
    images: bool,
}

impl ReplayReasoner {
    pub fn load(path: &Path) -> Result<Self, ReasonerError> {
        let text = std::fs::read_to_string(path)?;
        Ok(Self::from_transcript(parse_transcript(&text)?))
    }

    pub fn from_transcript(t: Transcript) -> Self {
        let mut queues: HashMap<String, VecDeque<(Vec<String>, Usage)>> = HashMap::new();
        for r in t.records {
            queues
                .entry(r.digest)
                .or_default()
                .push_back((r.completions, r.usage));
        }
        Self {
            queues: Mutex::new(queues),
            images: t.header.supports_images,
        }
    }
}

impl Reasoner for ReplayReasoner {
    fn complete(&self, req: &ReasonerRequest) -> Result<ReasonerResponse, ReasonerError> {
        let digest = req.digest();
        let mut queues = self.queues.lock().expect("replay lock poisoned");
        let miss = || ReasonerError::ReplayMiss {
            role: req.role,
            digest: digest.clone(),
        };
        let q = queues.get_mut(&digest).ok_or_else(miss)?;
        let (completions, usage) = if q.len() > 1 {
            q.pop_front().expect("non-empty queue")
        } else {
            q.front().cloned().ok_or_else(miss)?
        };
        Ok(ReasonerResponse { completions, usage })
    }

    fn supports_images(&self) -> bool {
        self.images
    }
}

#[cfg(test)]
mod tests {
    use super::super::scripted::{ScriptEntry, ScriptedReasoner};
    use super::*;

    fn req(prompt: &str) -> ReasonerRequest {
        ReasonerRequest {
            role: Role::Planner,
            prompt: prompt.into(),
            attachments: vec![],
            temperature: 0.7,
            sample_count: 1,
            item_id: "a".into(),
            subtask: None,
        }
    }

    #[test]
    fn record_then_replay_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let inner = ScriptedReasoner::new([
            ScriptEntry::new("a", Role::Planner, None, vec!["first \u{e9}".into()]),
            ScriptEntry::new("a", Role::Planner, None, vec!["second".into()]),
        ]);
        let rec = RecordingReasoner::create(inner, &path).unwrap();
        let a = rec.complete(&req("p")).unwrap();
        let b = rec.complete(&req("p")).unwrap();
        drop(rec);

        let replay = ReplayReasoner::load(&path).unwrap();
        assert_eq!(replay.complete(&req("p")).unwrap(), a);
        assert_eq!(replay.complete(&req("p")).unwrap(), b);
        assert_eq!(replay.complete(&req("p")).unwrap(), b);
        match replay.complete(&req("unseen")) {
            Err(ReasonerError::ReplayMiss { digest, .. }) => {
                assert_eq!(digest, req("unseen").digest())
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncated_tail_is_dropped() {
        let rec = TranscriptRecord {
            digest: "d".into(),
            role: Role::Initializer,
            prompt: "p".into(),
            completions: vec!["c".into()],
            usage: Usage::default(),
        };
        let full = render_transcript(&Transcript {
            header: TranscriptHeader {
                transcript: 1,
                supports_images: false,
            },
            records: vec![rec.clone(), rec],
            truncated: false,
        });
        let cut = &full[..full.len() - 10];
        let t = parse_transcript(cut).unwrap();
        assert!(t.truncated);
        assert_eq!(t.records.len(), 1);
        let broken = full.replacen("\"digest\"", "\"digets\"", 1);
        assert!(parse_transcript(&broken).is_err());
    }
}

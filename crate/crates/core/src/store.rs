//! On-disk formats and the file-tree record store.
//!
//! Annotation documents are versioned JSON. Ground truth can also move in
//! and out as MOTChallenge CSV, with lineage carried in a sidecar CSV since
//! the format has no place for it. [`FileStore`] keeps every record as one
//! JSON file under a root directory, written by atomic rename.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{self, Write as _};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tempfile::NamedTempFile;
use thiserror::Error;

use crate::track::{AnnotationSet, BoundingBox, ChildSlot, KeyFrame, LineageLabel, SplitEvent, Track, TrackError, TrackId, VideoId, VideoMeta};
use crate::workflow::{ReportRow, WorkflowConfig};

pub const SCHEMA_VERSION: u64 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("schema violation at `{path}`: {message}")]
    SchemaViolation { path: String, message: String },
    #[error("unsupported schema_version {found} (expected {expected})")]
    VersionMismatch { found: u64, expected: u64 },
    #[error("line {line}: {message}")]
    ParseError { line: u64, message: String },
    #[error("line {line}: frames for id {id} are not increasing")]
    NonMonotonicFrames { id: String, line: u64 },
    #[error("record not found: {0}")]
    NotFound(String),
    #[error("conflicting update of {0}")]
    Conflict(String),
    #[error("invalid record key segment {0:?}")]
    InvalidKey(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: corrupt record: {message}")]
    Corrupt { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SchemaMode {
    #[default]
    Strict,
    Lenient,
}

/// Versioned on-disk form of an [`AnnotationSet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NativeAnnotationDocument {
    pub schema_version: u64,
    pub video_id: VideoId,
    pub tracks: Vec<Track>,
}

impl From<&AnnotationSet> for NativeAnnotationDocument {
    fn from(set: &AnnotationSet) -> Self {
        Self { schema_version: SCHEMA_VERSION, video_id: set.video_id.clone(), tracks: set.tracks.clone() }
    }
}

pub fn save_annotations(set: &AnnotationSet) -> String {
    serde_json::to_string_pretty(&NativeAnnotationDocument::from(set)).expect("documents always serialize")
}

const DOC_FIELDS: &[&str] = &["schema_version", "video_id", "tracks"];
const TRACK_FIELDS: &[&str] = &["id", "label", "parent_id", "split", "key_frames"];
const SPLIT_FIELDS: &[&str] = &["frame", "children"];
const KEYFRAME_FIELDS: &[&str] = &["frame", "x", "y", "w", "h"];

fn unknown_field(v: &Value, allowed: &[&str], at: &str) -> Option<String> {
    let obj = v.as_object()?;
    obj.keys().find(|k| !allowed.contains(&k.as_str())).map(|k| format!("{at}{k}"))
}

fn check_known_fields(doc: &Value) -> Result<(), StoreError> {
    let violation = |path: String| StoreError::SchemaViolation { path, message: "unknown field".into() };
    if let Some(p) = unknown_field(doc, DOC_FIELDS, "") {
        return Err(violation(p));
    }
    let tracks = doc.get("tracks").and_then(Value::as_array).map(Vec::as_slice).unwrap_or_default();
    for (i, t) in tracks.iter().enumerate() {
        let at = format!("tracks[{i}].");
        if let Some(p) = unknown_field(t, TRACK_FIELDS, &at) {
            return Err(violation(p));
        }
        if let Some(p) = t.get("split").and_then(|s| unknown_field(s, SPLIT_FIELDS, &format!("{at}split."))) {
            return Err(violation(p));
        }
        let kfs = t.get("key_frames").and_then(Value::as_array).map(Vec::as_slice).unwrap_or_default();
        for (j, k) in kfs.iter().enumerate() {
            if let Some(p) = unknown_field(k, KEYFRAME_FIELDS, &format!("{at}key_frames[{j}].")) {
                return Err(violation(p));
            }
        }
    }
    Ok(())
}

/// Parses and validates a native document.
pub fn load_annotations(text: &str, mode: SchemaMode) -> Result<AnnotationSet, StoreError> {
    let doc: Value = serde_json::from_str(text)
        .map_err(|e| StoreError::ParseError { line: e.line() as u64, message: e.to_string() })?;
    match doc.get("schema_version").map(Value::as_u64) {
        Some(Some(SCHEMA_VERSION)) => {}
        Some(Some(found)) => return Err(StoreError::VersionMismatch { found, expected: SCHEMA_VERSION }),
        Some(None) => {
            return Err(StoreError::SchemaViolation {
                path: "schema_version".into(),
                message: "expected a non-negative integer".into(),
            })
        }
        None => return Err(StoreError::SchemaViolation { path: "schema_version".into(), message: "missing".into() }),
    }
    if mode == SchemaMode::Strict {
        check_known_fields(&doc)?;
    }
    let doc: NativeAnnotationDocument = serde_path_to_error::deserialize(doc).map_err(|e| StoreError::SchemaViolation {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    let set = AnnotationSet { video_id: doc.video_id, tracks: doc.tracks };
    set.validate().map_err(|e| StoreError::SchemaViolation { path: track_path(&set, &e), message: e.to_string() })?;
    Ok(set)
}

fn track_path(set: &AnnotationSet, e: &TrackError) -> String {
    let id = match e {
        TrackError::DuplicateId(id) | TrackError::MissingParent { track: id, .. } => Some(id),
        TrackError::MissingChild { track, .. } => Some(track),
        TrackError::UnlistedChild { child, .. }
        | TrackError::LabelMismatch { child, .. }
        | TrackError::ChildBirthMismatch { child, .. } => Some(child),
        _ => None,
    };
    id.and_then(|id| set.tracks.iter().rposition(|t| t.id() == id))
        .map_or_else(|| "tracks".to_owned(), |i| format!("tracks[{i}]"))
}

/// Result of a MOT export: the CSV, the lineage sidecar when the set has
/// splits, and any warnings for the operator.
#[derive(Debug, Clone, PartialEq)]
pub struct MotExport {
    pub csv: String,
    pub lineage: Option<String>,
    pub warnings: Vec<String>,
}

/// Integer ids for the MOT file: the track ids themselves when they are all
/// positive integers, otherwise 1..=n in set order.
fn mot_ids(set: &AnnotationSet) -> Vec<u64> {
    let parsed: Option<Vec<u64>> =
        set.tracks.iter().map(|t| t.id().as_str().parse::<u64>().ok().filter(|&n| n > 0)).collect();
    parsed.unwrap_or_else(|| (1..=set.tracks.len() as u64).collect())
}

pub fn export_mot_csv(set: &AnnotationSet) -> MotExport {
    let ids = mot_ids(set);
    let mut rows: Vec<(u32, u64, BoundingBox)> = Vec::new();
    for (t, &id) in set.tracks.iter().zip(&ids) {
        rows.extend(t.densify().into_iter().map(|(f, b)| (f, id, b)));
    }
    rows.sort_by_key(|&(f, id, _)| (f, id));
    let mut csv = String::new();
    for (f, id, b) in rows {
        csv.push_str(&format!("{},{},{},{},{},{},1,-1,-1,-1\n", f + 1, id, b.x(), b.y(), b.w(), b.h()));
    }
    let id_of: HashMap<&TrackId, u64> = set.tracks.iter().map(Track::id).zip(ids.iter().copied()).collect();
    let mut lineage = String::new();
    for t in &set.tracks {
        if let Some(split) = t.split() {
            for c in &split.children {
                lineage.push_str(&format!("{},{},{}\n", id_of[c], id_of[t.id()], split.frame + 1));
            }
        }
    }
    let (lineage, warnings) = if lineage.is_empty() {
        (None, Vec::new())
    } else {
        let warning = "MOT CSV cannot express splits; children exported as independent ids, lineage written to the sidecar".to_owned();
        (Some(format!("child_id,parent_id,split_frame\n{lineage}")), vec![warning])
    };
    MotExport { csv, lineage, warnings }
}

fn csv_line(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, name: &str) -> Result<T, StoreError> {
    let raw = rec.get(i).ok_or_else(|| StoreError::ParseError { line: csv_line(rec), message: format!("missing {name}") })?;
    raw.parse().map_err(|_| StoreError::ParseError { line: csv_line(rec), message: format!("bad {name} {raw:?}") })
}

fn csv_reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes())
}

/// Reads MOTChallenge rows. Every row becomes a keyframe; tracks are listed
/// in order of first appearance and get root labels in that order.
pub fn import_mot_csv(text: &str, video_id: VideoId) -> Result<AnnotationSet, StoreError> {
    let mut order: Vec<String> = Vec::new();
    let mut frames: HashMap<String, Vec<KeyFrame>> = HashMap::new();
    for rec in csv_reader(text).records() {
        let rec = rec.map_err(|e| StoreError::ParseError {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        let line = csv_line(&rec);
        let frame: u32 = field(&rec, 0, "frame")?;
        if frame == 0 {
            return Err(StoreError::ParseError { line, message: "frames are 1-based".into() });
        }
        let id: String = field(&rec, 1, "id")?;
        let (x, y, w, h) = (field(&rec, 2, "bb_left")?, field(&rec, 3, "bb_top")?, field(&rec, 4, "bb_width")?, field(&rec, 5, "bb_height")?);
        let bbox = BoundingBox::new(x, y, w, h).map_err(|e| StoreError::ParseError { line, message: e.to_string() })?;
        let kfs = frames.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            Vec::new()
        });
        if kfs.last().is_some_and(|k| k.frame >= frame - 1) {
            return Err(StoreError::NonMonotonicFrames { id, line });
        }
        kfs.push(KeyFrame::new(frame - 1, bbox));
    }
    let tracks = order
        .into_iter()
        .enumerate()
        .map(|(i, id)| {
            let kfs = frames.remove(&id).expect("recorded");
            let label = LineageLabel::root(i as u64 + 1).expect("positive");
            Track::new(TrackId(id), label, kfs).expect("non-empty increasing keyframes")
        })
        .collect();
    Ok(AnnotationSet { video_id, tracks })
}

/// Reattaches lineage from a sidecar to a set imported from MOT CSV, then
/// relabels every tree from its root.
pub fn apply_lineage_sidecar(set: &mut AnnotationSet, sidecar: &str) -> Result<(), StoreError> {
    let mut children: BTreeMap<String, (u32, Vec<String>, u64)> = BTreeMap::new();
    for rec in csv_reader(sidecar).records() {
        let rec = rec.map_err(|e| StoreError::ParseError { line: e.position().map_or(0, |p| p.line()), message: e.to_string() })?;
        if rec.get(0) == Some("child_id") {
            continue;
        }
        let line = csv_line(&rec);
        let child: String = field(&rec, 0, "child_id")?;
        let parent: String = field(&rec, 1, "parent_id")?;
        let frame: u32 = field(&rec, 2, "split_frame")?;
        if frame == 0 {
            return Err(StoreError::ParseError { line, message: "frames are 1-based".into() });
        }
        let entry = children.entry(parent).or_insert((frame - 1, Vec::new(), line));
        if entry.0 != frame - 1 {
            return Err(StoreError::ParseError { line, message: "children disagree on the split frame".into() });
        }
        entry.1.push(child);
    }
    let index: HashMap<String, usize> =
        set.tracks.iter().enumerate().map(|(i, t)| (t.id().as_str().to_owned(), i)).collect();
    for (parent, (frame, kids, line)) in children {
        let bad = |message: String| StoreError::ParseError { line, message };
        let [a, b]: [String; 2] = kids.try_into().map_err(|_| bad(format!("parent {parent} needs exactly two children")))?;
        let pi = *index.get(&parent).ok_or_else(|| bad(format!("unknown parent {parent}")))?;
        for c in [&a, &b] {
            let ci = *index.get(c).ok_or_else(|| bad(format!("unknown child {c}")))?;
            set.tracks[ci].set_parent(Some(TrackId(parent.clone())));
        }
        if set.tracks[pi].lifetime().end >= frame {
            return Err(bad(format!("parent {parent} has boxes at or after its split")));
        }
        set.tracks[pi].set_split(Some(SplitEvent { frame, children: [TrackId(a), TrackId(b)] }));
    }
    relabel(set);
    set.validate().map_err(|e| StoreError::SchemaViolation { path: track_path(set, &e), message: e.to_string() })
}

/// Numbers roots 1.. in set order and derives child labels from parents.
fn relabel(set: &mut AnnotationSet) {
    let index: HashMap<TrackId, usize> = set.tracks.iter().enumerate().map(|(i, t)| (t.id().clone(), i)).collect();
    let mut stack: Vec<(usize, LineageLabel)> = Vec::new();
    let mut next = 0u64;
    for i in 0..set.tracks.len() {
        if set.tracks[i].parent_id().is_none() {
            next += 1;
            stack.push((i, LineageLabel::root(next).expect("positive")));
        }
    }
    while let Some((i, label)) = stack.pop() {
        if let Some(split) = set.tracks[i].split().cloned() {
            for (slot, c) in [ChildSlot::First, ChildSlot::Second].into_iter().zip(&split.children) {
                if let Some(&ci) = index.get(c) {
                    stack.push((ci, label.child(slot)));
                }
            }
        }
        set.tracks[i].set_label(label);
    }
}

/// Round report rows as CSV.
pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from("name,round,filtered,videos,mean_auc,mean_tracc,mean_precision20\n");
    for r in rows {
        let a = &r.aggregate;
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.name, r.round, r.filtered, a.videos, a.mean_auc, a.mean_tracc, a.mean_precision20
        ));
    }
    out
}

/// A project: its videos and workflow configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectRecord {
    pub id: String,
    pub videos: Vec<VideoMeta>,
    pub workflow: WorkflowConfig,
    pub created: DateTime<Utc>,
}

impl ProjectRecord {
    pub fn validate(&self) -> Result<(), StoreError> {
        check_segment(&self.id)?;
        let mut seen = std::collections::HashSet::new();
        for (i, v) in self.videos.iter().enumerate() {
            v.validate().map_err(|e| StoreError::SchemaViolation { path: format!("videos[{i}]"), message: e.to_string() })?;
            if !seen.insert(&v.id) {
                return Err(StoreError::SchemaViolation {
                    path: format!("videos[{i}].id"),
                    message: format!("duplicate video id {}", v.id),
                });
            }
        }
        Ok(())
    }
}

fn check_segment(s: &str) -> Result<(), StoreError> {
    let ok = !s.is_empty()
        && s.len() <= 128
        && !s.starts_with('.')
        && s.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'));
    if ok {
        Ok(())
    } else {
        Err(StoreError::InvalidKey(s.to_owned()))
    }
}

/// Location of a record: path segments under the store root. The final
/// segment names the `.json` file, the others are directories.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RecordKey(Vec<String>);

impl RecordKey {
    pub fn new<I, S>(segments: I) -> Result<Self, StoreError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let segments: Vec<String> = segments.into_iter().map(Into::into).collect();
        if segments.is_empty() {
            return Err(StoreError::InvalidKey(String::new()));
        }
        for s in &segments {
            check_segment(s)?;
        }
        Ok(Self(segments))
    }

    fn relative(&self) -> PathBuf {
        let mut p: PathBuf = self.0.iter().collect();
        p.set_extension("json");
        p
    }

    fn dir(&self) -> PathBuf {
        self.0.iter().collect()
    }

    pub fn project(p: &str) -> Result<Self, StoreError> {
        Self::new(["projects", p, "project"])
    }
    pub fn state(p: &str) -> Result<Self, StoreError> {
        Self::new(["projects", p, "state"])
    }
    pub fn videos(p: &str) -> Result<Self, StoreError> {
        Self::new(["projects", p, "videos"])
    }
    pub fn video(p: &str, v: &str) -> Result<Self, StoreError> {
        Self::new(["projects", p, "videos", v])
    }
    pub fn ground_truth(p: &str, v: &str) -> Result<Self, StoreError> {
        Self::new(["projects", p, "gt", v])
    }
    pub fn accepted(p: &str, v: &str, round: u32) -> Result<Self, StoreError> {
        Self::new(["projects".to_owned(), p.into(), "accepted".into(), v.into(), format!("r{round:03}")])
    }
    pub fn tasks(p: &str) -> Result<Self, StoreError> {
        Self::new(["projects", p, "tasks"])
    }
    pub fn task(p: &str, t: &str) -> Result<Self, StoreError> {
        Self::new(["projects", p, "tasks", t])
    }
    pub fn submissions(p: &str, t: &str) -> Result<Self, StoreError> {
        Self::new(["projects", p, "submissions", t])
    }
    pub fn submission(p: &str, t: &str, slot: u32) -> Result<Self, StoreError> {
        Self::new(["projects".to_owned(), p.into(), "submissions".into(), t.into(), format!("s{slot:03}")])
    }
    pub fn tickets(p: &str, t: &str) -> Result<Self, StoreError> {
        Self::new(["projects", p, "tickets", t])
    }
    pub fn ticket(p: &str, t: &str, slot: u32) -> Result<Self, StoreError> {
        Self::new(["projects".to_owned(), p.into(), "tickets".into(), t.into(), format!("s{slot:03}")])
    }
    pub fn report(p: &str, name: &str) -> Result<Self, StoreError> {
        Self::new(["projects", p, "reports", name])
    }
}

impl std::fmt::Display for RecordKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0.join("/"))
    }
}

/// A record with the version it was read at. Versions start at 1 and grow
/// by one per write.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versioned<T> {
    pub version: u64,
    pub record: T,
}

/// Directory-tree record store. Writes go to a temp file in the target
/// directory and are renamed into place, so readers only ever see complete
/// records. Conditional writes on the same key are serialized by a per-key
/// lock inside this process.
#[derive(Debug)]
pub struct FileStore {
    root: PathBuf,
    locks: Mutex<HashMap<RecordKey, Arc<Mutex<()>>>>,
}

impl FileStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|source| StoreError::Io { path: root.clone(), source })?;
        Ok(Self { root, locks: Mutex::new(HashMap::new()) })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path(&self, key: &RecordKey) -> PathBuf {
        self.root.join(key.relative())
    }

    fn lock(&self, key: &RecordKey) -> Arc<Mutex<()>> {
        let mut locks = self.locks.lock().expect("lock table poisoned");
        locks.entry(key.clone()).or_default().clone()
    }

    fn read_raw<T: DeserializeOwned>(&self, key: &RecordKey) -> Result<Option<Versioned<T>>, StoreError> {
        let path = self.path(key);
        match fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map(Some)
                .map_err(|e| StoreError::Corrupt { path, message: e.to_string() }),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(source) => Err(StoreError::Io { path, source }),
        }
    }

    fn temp_for(&self, key: &RecordKey, body: &[u8]) -> Result<(NamedTempFile, PathBuf), StoreError> {
        let path = self.path(key);
        let dir = path.parent().expect("keys have a file name").to_path_buf();
        let io_err = |source| StoreError::Io { path: dir.clone(), source };
        fs::create_dir_all(&dir).map_err(io_err)?;
        let mut tmp = NamedTempFile::new_in(&dir).map_err(io_err)?;
        tmp.write_all(body).map_err(io_err)?;
        Ok((tmp, path))
    }

    fn write_raw<T: Serialize>(&self, key: &RecordKey, version: u64, record: &T) -> Result<(), StoreError> {
        let body = serde_json::to_vec_pretty(&Versioned { version, record }).expect("records serialize");
        let (tmp, path) = self.temp_for(key, &body)?;
        tmp.persist(&path).map_err(|e| StoreError::Io { path, source: e.error })?;
        Ok(())
    }

    pub fn get<T: DeserializeOwned>(&self, key: &RecordKey) -> Result<Versioned<T>, StoreError> {
        self.read_raw(key)?.ok_or_else(|| StoreError::NotFound(key.to_string()))
    }

    pub fn try_get<T: DeserializeOwned>(&self, key: &RecordKey) -> Result<Option<Versioned<T>>, StoreError> {
        self.read_raw(key)
    }

    pub fn exists(&self, key: &RecordKey) -> bool {
        self.path(key).is_file()
    }

    /// Unconditional write; returns the new version.
    pub fn put<T: Serialize + DeserializeOwned>(&self, key: &RecordKey, record: &T) -> Result<u64, StoreError> {
        let lock = self.lock(key);
        let _guard = lock.lock().expect("record lock poisoned");
        let version = self.read_raw::<Value>(key)?.map_or(1, |v| v.version + 1);
        self.write_raw(key, version, record)?;
        Ok(version)
    }

    /// Writes only if the key does not exist yet, across processes too.
    pub fn create<T: Serialize>(&self, key: &RecordKey, record: &T) -> Result<(), StoreError> {
        let body = serde_json::to_vec_pretty(&Versioned { version: 1, record }).expect("records serialize");
        let (tmp, path) = self.temp_for(key, &body)?;
        match tmp.persist_noclobber(&path) {
            Ok(_) => Ok(()),
            Err(e) if e.error.kind() == io::ErrorKind::AlreadyExists => Err(StoreError::Conflict(key.to_string())),
            Err(e) => Err(StoreError::Io { path, source: e.error }),
        }
    }

    /// Writes if the stored version still equals `expected` (`None`: record
    /// must be absent). Returns the new version.
    pub fn compare_and_set<T: Serialize>(
        &self,
        key: &RecordKey,
        expected: Option<u64>,
        record: &T,
    ) -> Result<u64, StoreError> {
        let lock = self.lock(key);
        let _guard = lock.lock().expect("record lock poisoned");
        let current = self.read_raw::<Value>(key)?.map(|v| v.version);
        if current != expected {
            return Err(StoreError::Conflict(key.to_string()));
        }
        let version = current.map_or(1, |v| v + 1);
        self.write_raw(key, version, record)?;
        Ok(version)
    }

    /// Read-modify-write under the key lock.
    pub fn update<T, E, F>(&self, key: &RecordKey, f: F) -> Result<T, E>
    where
        T: Serialize + DeserializeOwned,
        E: From<StoreError>,
        F: FnOnce(Option<T>) -> Result<T, E>,
    {
        let lock = self.lock(key);
        let _guard = lock.lock().expect("record lock poisoned");
        let current = self.read_raw::<T>(key)?;
        let version = current.as_ref().map_or(1, |v| v.version + 1);
        let next = f(current.map(|v| v.record))?;
        self.write_raw(key, version, &next)?;
        Ok(next)
    }

    pub fn remove(&self, key: &RecordKey) -> Result<(), StoreError> {
        let lock = self.lock(key);
        let _guard = lock.lock().expect("record lock poisoned");
        let path = self.path(key);
        match fs::remove_file(&path) {
            Ok(()) => Ok(()),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Err(StoreError::NotFound(key.to_string())),
            Err(source) => Err(StoreError::Io { path, source }),
        }
    }

    /// Records directly under the collection `dir`, sorted by name.
    pub fn list<T: DeserializeOwned>(&self, dir: &RecordKey) -> Result<Vec<(String, Versioned<T>)>, StoreError> {
        let path = self.root.join(dir.dir());
        let entries = match fs::read_dir(&path) {
            Ok(e) => e,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(source) => return Err(StoreError::Io { path, source }),
        };
        let mut names = Vec::new();
        for entry in entries {
            let entry = entry.map_err(|source| StoreError::Io { path: path.clone(), source })?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if let Some(stem) = name.strip_suffix(".json").filter(|s| !s.starts_with('.')) {
                names.push(stem.to_owned());
            }
        }
        names.sort();
        let mut out = Vec::with_capacity(names.len());
        for name in names {
            let mut segments = dir.0.clone();
            segments.push(name.clone());
            if let Some(v) = self.read_raw(&RecordKey(segments))? {
                out.push((name, v));
            }
        }
        Ok(out)
    }
}

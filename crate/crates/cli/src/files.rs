//! Working-directory layout and file helpers.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crowdmot_core::store::{apply_lineage_sidecar, import_mot_csv, load_annotations, save_annotations, SchemaMode};
use crowdmot_core::track::{AnnotationSet, VideoId};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Io(_) => 2,
        }
    }

    pub fn invalid(path: &Path, what: impl std::fmt::Display) -> Self {
        CliError::Validation(format!("{}: {what}", path.display()))
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| io_error(path, e))
}

/// Parses JSON, naming the file and the offending field on failure.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = read_text(path)?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        CliError::invalid(path, format!("field `{field}`: {}", e.inner()))
    })
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("records serialize");
    s.push('\n');
    s
}

/// Writes `contents`, refusing to replace an existing file unless `force`.
pub fn write_new(path: &Path, contents: &str, force: bool) -> Result<(), CliError> {
    if !force && path.exists() {
        return Err(CliError::Validation(format!("{} exists; pass --force to overwrite", path.display())));
    }
    write(path, contents)
}

pub fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| io_error(path, e))
}

pub fn remove_dir(path: &Path) -> Result<(), CliError> {
    match fs::remove_dir_all(path) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(()),
        Err(e) => Err(io_error(path, e)),
    }
}

/// `*.json` files in `dir`, sorted by name; empty when `dir` is missing.
pub fn json_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = match fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_error(dir, e)),
    };
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| io_error(dir, e))?.path();
        if path.extension().is_some_and(|x| x == "json") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|x| x.eq_ignore_ascii_case("csv"))
}

/// Default sidecar location for `gt.csv`: `gt.lineage.csv`.
pub fn sidecar_for(path: &Path) -> PathBuf {
    path.with_extension("lineage.csv")
}

/// Loads a native document or a MOT CSV (with its sidecar if present).
/// CSV files take `video_id`, or the file stem when none is given.
pub fn load_set(path: &Path, video_id: Option<&VideoId>, lineage: Option<&Path>) -> Result<AnnotationSet, CliError> {
    let text = read_text(path)?;
    if !is_csv(path) {
        return load_annotations(&text, SchemaMode::Strict).map_err(|e| CliError::invalid(path, e));
    }
    let id = video_id.cloned().unwrap_or_else(|| {
        VideoId::new(path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default())
    });
    let mut set = import_mot_csv(&text, id).map_err(|e| CliError::invalid(path, e))?;
    let sidecar = lineage.map(Path::to_path_buf).or_else(|| Some(sidecar_for(path)).filter(|p| p.exists()));
    if let Some(sidecar) = sidecar {
        let text = read_text(&sidecar)?;
        apply_lineage_sidecar(&mut set, &text).map_err(|e| CliError::invalid(&sidecar, e))?;
    }
    Ok(set)
}

pub fn save_set(path: &Path, set: &AnnotationSet, force: bool) -> Result<(), CliError> {
    let mut text = save_annotations(set);
    text.push('\n');
    write_new(path, &text, force)
}

/// Paths inside the working directory.
pub struct Layout<'a>(pub &'a Path);

impl Layout<'_> {
    pub fn video(&self, id: &VideoId) -> PathBuf {
        self.0.join("videos").join(format!("{id}.json"))
    }
    pub fn videos(&self) -> PathBuf {
        self.0.join("videos")
    }
    pub fn gt(&self, id: &VideoId) -> PathBuf {
        self.0.join("gt").join(format!("{id}.json"))
    }
    pub fn state(&self) -> PathBuf {
        self.0.join("state.json")
    }
    pub fn tasks(&self) -> PathBuf {
        self.0.join("tasks")
    }
    pub fn task(&self, id: &str) -> PathBuf {
        self.tasks().join(format!("{id}.json"))
    }
    pub fn submissions(&self) -> PathBuf {
        self.0.join("submissions")
    }
    pub fn task_submissions(&self, task: &str) -> PathBuf {
        self.submissions().join(task)
    }
    pub fn accepted(&self, id: &VideoId) -> PathBuf {
        self.0.join("accepted").join(format!("{id}.json"))
    }
    pub fn reports(&self) -> PathBuf {
        self.0.join("reports")
    }
}

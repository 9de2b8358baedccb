//! Module source buffers and validated edits.
//!
//! A module may contain a marker line; participants can only replace the
//! text after it. Edits are parsed and compiled before anything changes.

use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeMap;
use std::fs;
use std::hash::{Hash, Hasher};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::prelude::PRELUDE;
use crate::program::{LoadError, Program};
use crate::syntax::{line_col, parse_module, ParsedModule};

/// Trimmed content of the line that starts the editable region.
pub const MARKER: &str = "-- EDITABLE";

/// Byte offset just past the first marker line.
pub fn find_marker(source: &str) -> Option<usize> {
    let mut offset = 0;
    for line in source.split_inclusive('\n') {
        offset += line.len();
        if line.trim() == MARKER {
            return Some(offset);
        }
    }
    None
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModuleBuffer {
    pub name: String,
    pub source: String,
    pub marker_offset: Option<usize>,
    /// File the buffer was read from, if any.
    pub path: Option<PathBuf>,
}

impl ModuleBuffer {
    pub fn new(name: impl Into<String>, source: impl Into<String>, path: Option<PathBuf>) -> Self {
        let source = source.into();
        ModuleBuffer {
            name: name.into(),
            marker_offset: find_marker(&source),
            source,
            path,
        }
    }

    pub fn has_marker(&self) -> bool {
        self.marker_offset.is_some()
    }

    pub fn header(&self) -> &str {
        &self.source[..self.marker_offset.unwrap_or(self.source.len())]
    }

    pub fn editable(&self) -> &str {
        match self.marker_offset {
            Some(m) => &self.source[m..],
            None => "",
        }
    }

    pub fn parse(&self) -> Result<ParsedModule, LoadError> {
        parse_module(&self.source, &self.name).map_err(|error| LoadError::Syntax {
            module: self.name.clone(),
            error,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModuleView {
    pub header: String,
    pub editable: String,
    pub has_marker: bool,
}

/// A load error located in module source.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagnostic {
    pub module: Option<String>,
    pub start: Option<usize>,
    pub end: Option<usize>,
    /// One-based line and column of `start`.
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub message: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match (&self.module, self.line, self.column) {
            (Some(m), Some(l), Some(c)) => write!(f, "{m}:{l}:{c}: {}", self.message),
            (Some(m), ..) => write!(f, "{m}: {}", self.message),
            _ => f.write_str(&self.message),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("cannot read {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{} error(s) while loading modules", .0.len())]
    Load(Vec<Diagnostic>),
    #[error("edit rejected with {} error(s)", .0.len())]
    Rejected(Vec<Diagnostic>),
    #[error("no module named {0}")]
    NoSuchModule(String),
    #[error("module {0} has no editable region")]
    NoEditableRegion(String),
    #[error("edit based on generation {expected}, but the program is at generation {actual}")]
    StaleGeneration { expected: u64, actual: u64 },
}

/// A validated edit that has not been applied yet.
#[derive(Clone, Debug)]
pub struct CheckedEdit {
    pub buffer: ModuleBuffer,
    pub program: Arc<Program>,
}

pub struct ProgramStore {
    buffers: BTreeMap<String, ModuleBuffer>,
    program: Arc<Program>,
    persist: bool,
}

impl ProgramStore {
    /// Reads every `.hs` file in `dir`; the file stem is the module name.
    pub fn load_directory(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let dir = dir.as_ref();
        let io = |source| StoreError::Io {
            path: dir.to_path_buf(),
            source,
        };
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(io)?
            .map(|e| e.map(|e| e.path()))
            .collect::<Result<_, _>>()
            .map_err(io)?;
        paths.retain(|p| p.is_file() && p.extension().is_some_and(|e| e == "hs"));
        paths.sort();
        let mut user = Vec::new();
        for path in paths {
            let source = fs::read_to_string(&path).map_err(|source| StoreError::Io {
                path: path.clone(),
                source,
            })?;
            let name = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            user.push(ModuleBuffer::new(name, source, Some(path)));
        }
        Self::from_buffers(user)
    }

    /// Builds a store from in-memory `(module name, source)` pairs.
    pub fn from_sources<N: Into<String>, S: Into<String>>(
        sources: impl IntoIterator<Item = (N, S)>,
    ) -> Result<Self, StoreError> {
        Self::from_buffers(
            sources
                .into_iter()
                .map(|(n, s)| ModuleBuffer::new(n, s, None))
                .collect(),
        )
    }

    fn from_buffers(user: Vec<ModuleBuffer>) -> Result<Self, StoreError> {
        let mut buffers = BTreeMap::new();
        let prelude = PRELUDE.iter().map(|(n, s)| ModuleBuffer::new(*n, *s, None));
        let mut errors = Vec::new();
        for b in prelude.chain(user) {
            if buffers.contains_key(&b.name) {
                errors.push(LoadError::DuplicateModule(b.name.clone()));
                continue;
            }
            buffers.insert(b.name.clone(), b);
        }
        let mut parsed = Vec::new();
        for b in buffers.values() {
            match b.parse() {
                Ok(m) => parsed.push(m),
                Err(e) => errors.push(e),
            }
        }
        if errors.is_empty() {
            match Program::load(parsed) {
                Ok(program) => {
                    return Ok(ProgramStore {
                        buffers,
                        program: Arc::new(program),
                        persist: false,
                    })
                }
                Err(es) => errors.extend(es),
            }
        }
        let diags = errors.iter().map(|e| diagnostic(e, &buffers)).collect();
        Err(StoreError::Load(diags))
    }

    /// Write accepted edits back to the files they came from.
    pub fn set_persist(&mut self, persist: bool) {
        self.persist = persist;
    }

    pub fn program(&self) -> &Arc<Program> {
        &self.program
    }

    pub fn generation(&self) -> u64 {
        self.program.generation()
    }

    /// `(name, has_marker)` for every module, alphabetically.
    pub fn modules(&self) -> Vec<(String, bool)> {
        self.buffers.values().map(|b| (b.name.clone(), b.has_marker())).collect()
    }

    pub fn buffer(&self, name: &str) -> Option<&ModuleBuffer> {
        self.buffers.get(name)
    }

    pub fn view(&self, name: &str) -> Result<ModuleView, StoreError> {
        let b = self
            .buffers
            .get(name)
            .ok_or_else(|| StoreError::NoSuchModule(name.to_string()))?;
        Ok(ModuleView {
            header: b.header().to_string(),
            editable: b.editable().to_string(),
            has_marker: b.has_marker(),
        })
    }

    /// Validates replacing the editable region of `name` without applying it.
    pub fn check_edit(
        &self,
        name: &str,
        editable_text: &str,
        expected_generation: Option<u64>,
    ) -> Result<CheckedEdit, StoreError> {
        let b = self
            .buffers
            .get(name)
            .ok_or_else(|| StoreError::NoSuchModule(name.to_string()))?;
        let Some(marker) = b.marker_offset else {
            return Err(StoreError::NoEditableRegion(name.to_string()));
        };
        if let Some(expected) = expected_generation {
            if expected != self.generation() {
                return Err(StoreError::StaleGeneration {
                    expected,
                    actual: self.generation(),
                });
            }
        }
        let mut buffer = b.clone();
        buffer.source = format!("{}{}", b.header(), editable_text);
        buffer.marker_offset = Some(marker);
        let reject = |e: Vec<LoadError>| {
            let mut view = self.buffers.clone();
            view.insert(buffer.name.clone(), buffer.clone());
            StoreError::Rejected(e.iter().map(|e| diagnostic(e, &view)).collect())
        };
        let parsed = buffer.parse().map_err(|e| reject(vec![e]))?;
        let program = self.program.swap_module(parsed).map_err(reject)?;
        Ok(CheckedEdit {
            buffer,
            program: Arc::new(program),
        })
    }

    /// Applies a checked edit. The edit must have been checked against the
    /// current program.
    pub fn commit(&mut self, edit: CheckedEdit) -> u64 {
        if self.persist {
            if let Some(path) = &edit.buffer.path {
                if let Err(e) = fs::write(path, &edit.buffer.source) {
                    tracing::warn!("could not save {}: {e}", path.display());
                }
            }
        }
        self.buffers.insert(edit.buffer.name.clone(), edit.buffer);
        self.program = edit.program;
        self.program.generation()
    }

    pub fn submit_edit(
        &mut self,
        name: &str,
        editable_text: &str,
        expected_generation: Option<u64>,
    ) -> Result<u64, StoreError> {
        let edit = self.check_edit(name, editable_text, expected_generation)?;
        Ok(self.commit(edit))
    }

    /// Hash of every buffer's name and source.
    pub fn content_hash(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for b in self.buffers.values() {
            b.name.hash(&mut h);
            b.source.hash(&mut h);
        }
        h.finish()
    }

    /// Compiles all committed buffers from scratch.
    pub fn reparse(&self) -> Result<Program, Vec<LoadError>> {
        let parsed = self
            .buffers
            .values()
            .map(|b| b.parse())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| vec![e])?;
        Program::load(parsed)
    }
}

fn diagnostic(e: &LoadError, buffers: &BTreeMap<String, ModuleBuffer>) -> Diagnostic {
    let mut d = Diagnostic {
        module: None,
        start: None,
        end: None,
        line: None,
        column: None,
        message: e.message(),
    };
    match e.location() {
        Some((module, span)) => {
            d.module = Some(module.to_string());
            d.start = Some(span.start);
            d.end = Some(span.end);
            if let Some(b) = buffers.get(module) {
                let (line, col) = line_col(&b.source, span.start.min(b.source.len()));
                d.line = Some(line);
                d.column = Some(col);
            }
        }
        None => {
            if let LoadError::UnknownExport { module, .. } | LoadError::DuplicateModule(module) = e {
                d.module = Some(module.clone());
            }
        }
    }
    d
}

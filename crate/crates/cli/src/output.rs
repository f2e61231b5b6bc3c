//! Atomic report emission: each file is written to a temporary sibling
//! and renamed into place, one file at a time.

use std::io::Write;
use std::path::{Path, PathBuf};

use mktsens_core::lattice::{AnnotatedHasseDiagram, RenderStyle};

use crate::error::{CliError, Result};
use crate::report::{FileKind, OutputFile};

pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let err = |source| CliError::Write {
        path: path.to_path_buf(),
        source,
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(err)?;
    tmp.write_all(contents.as_bytes()).map_err(err)?;
    tmp.as_file().sync_all().map_err(err)?;
    tmp.persist(path).map_err(|e| err(e.error))?;
    Ok(())
}

/// Writes `files` into `dir` (created if missing), in name order.
pub fn write_all(dir: &Path, files: &[OutputFile]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::Write {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut sorted: Vec<&OutputFile> = files.iter().collect();
    sorted.sort_by(|a, b| a.name.cmp(&b.name));
    let mut written = Vec::with_capacity(sorted.len());
    for f in sorted {
        let path = dir.join(&f.name);
        write_atomic(&path, &f.contents)?;
        written.push(path);
    }
    Ok(written)
}

/// Renders `diagram` as `dot` or `json` and writes it atomically.
pub fn emit_hasse(diagram: &AnnotatedHasseDiagram, format: &str, path: &Path, style: &RenderStyle) -> Result<()> {
    let contents = match format {
        "dot" => diagram.to_dot(style),
        "json" => diagram.to_json(),
        other => return Err(CliError::Usage(format!("unknown diagram format {other:?}; expected dot or json"))),
    };
    write_atomic(path, &contents)
}

pub fn kind_name(kind: FileKind) -> &'static str {
    match kind {
        FileKind::Dot => "dot",
        FileKind::Json => "json",
        FileKind::Csv => "csv",
    }
}

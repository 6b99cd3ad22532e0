//! CSV artifacts. Numbers use Rust's shortest round-trip formatting, so the
//! same values always produce the same bytes.

use std::fs;
use std::path::{Path, PathBuf};

use nonlocal_rd::GridField;

use crate::error::{CliError, CliResult};

pub const SPECIES: [&str; 3] = ["A", "B", "C"];

/// Shortest round-trip decimal, switching to exponent form for very small or
/// very large magnitudes.
pub fn fmt_num(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || (1e-5..1e16).contains(&a) || !v.is_finite() {
        v.to_string()
    } else {
        format!("{v:e}")
    }
}

/// An output directory that removes everything it wrote unless committed.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    created_root: bool,
    written: Vec<PathBuf>,
    committed: bool,
}

impl OutputDir {
    pub fn create(root: &Path) -> CliResult<Self> {
        let created_root = !root.exists();
        fs::create_dir_all(root).map_err(|source| CliError::Io {
            path: root.display().to_string(),
            source,
        })?;
        Ok(OutputDir {
            root: root.to_path_buf(),
            created_root,
            written: Vec::new(),
            committed: false,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn files(&self) -> Vec<String> {
        self.written
            .iter()
            .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .collect()
    }

    pub fn csv<I>(&mut self, name: &str, header: &[&str], rows: I) -> CliResult<()>
    where
        I: IntoIterator<Item = Vec<String>>,
    {
        let path = self.path(name);
        self.written.push(path.clone());
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(header)?;
        for row in rows {
            w.write_record(&row)?;
        }
        w.flush().map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn text(&mut self, name: &str, contents: &str) -> CliResult<()> {
        let path = self.path(name);
        self.written.push(path.clone());
        fs::write(&path, contents).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// Keeps the written files.
    pub fn commit(mut self) {
        self.committed = true;
    }
}

impl Drop for OutputDir {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        for p in &self.written {
            let _ = fs::remove_file(p);
        }
        if self.created_root {
            // only succeeds if nothing else landed there
            let _ = fs::remove_dir(&self.root);
        }
    }
}

/// Rows `(time, species, index_1, index_2, value)`; `index_2` is blank in 1d.
pub fn field_rows(fields: &[GridField]) -> impl Iterator<Item = Vec<String>> + '_ {
    fields.iter().flat_map(|f| {
        let grid = f.grid;
        f.values.iter().enumerate().flat_map(move |(j, v)| {
            v.iter().enumerate().map(move |(idx, &x)| {
                let [i0, i1] = grid.unflatten(idx);
                let second = if grid.dim() == 1 { String::new() } else { i1.to_string() };
                vec![fmt_num(f.time), SPECIES[j].to_string(), i0.to_string(), second, fmt_num(x)]
            })
        })
    })
}

pub const FIELD_HEADER: [&str; 5] = ["time", "species", "index_1", "index_2", "value"];
pub const MASS_HEADER: [&str; 5] = ["time", "model", "species", "mass", "stderr"];

/// Rows `(time, model, species, mass, stderr)`; `stderr` is blank when not given.
pub fn mass_rows(model: &str, times: &[f64], masses: &[Vec<f64>], stderr: Option<&[Vec<f64>]>) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for (i, (t, m)) in times.iter().zip(masses).enumerate() {
        for (j, &v) in m.iter().enumerate() {
            let se = stderr.map_or(String::new(), |s| fmt_num(s[i][j]));
            rows.push(vec![fmt_num(*t), model.to_string(), SPECIES[j].to_string(), fmt_num(v), se]);
        }
    }
    rows
}

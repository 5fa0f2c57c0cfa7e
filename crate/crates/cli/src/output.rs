//! Versioned, hash-stamped output files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use kforq_core::{ControlWindow, IterRecord, Trajectory, WindowValues};
use serde::Serialize;

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// JSON wrapper carrying the schema version and config hash.
#[derive(Debug, Serialize)]
pub struct Envelope<'a, T: Serialize> {
    pub schema_version: u32,
    pub config_hash: &'a str,
    #[serde(flatten)]
    pub body: &'a T,
}

/// Output directory bound to one config hash.
#[derive(Debug, Clone)]
pub struct OutputDir {
    dir: PathBuf,
    hash: String,
    written: Vec<PathBuf>,
}

impl OutputDir {
    pub fn create(dir: &Path, hash: &str) -> Result<Self, CliError> {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::Output(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            hash: hash.to_string(),
            written: Vec::new(),
        })
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    fn create_file(&mut self, name: &str) -> Result<(PathBuf, fs::File), CliError> {
        let path = self.dir.join(name);
        let file = fs::File::create(&path)
            .map_err(|e| CliError::Output(format!("cannot write {}: {e}", path.display())))?;
        self.written.push(path.clone());
        Ok((path, file))
    }

    pub fn json<T: Serialize>(&mut self, name: &str, body: &T) -> Result<PathBuf, CliError> {
        let env = Envelope {
            schema_version: SCHEMA_VERSION,
            config_hash: &self.hash,
            body,
        };
        let mut text = serde_json::to_string_pretty(&env)?;
        text.push('\n');
        let (path, mut f) = self.create_file(name)?;
        f.write_all(text.as_bytes())?;
        Ok(path)
    }

    /// CSV with a leading `# config_hash:` comment line.
    pub fn csv<R: Serialize>(
        &mut self,
        name: &str,
        rows: impl IntoIterator<Item = R>,
    ) -> Result<PathBuf, CliError> {
        let (path, mut f) = self.create_file(name)?;
        writeln!(f, "# config_hash: {}", self.hash)?;
        let mut w = csv::Writer::from_writer(f);
        for r in rows {
            w.serialize(r)
                .map_err(|e| CliError::Output(e.to_string()))?;
        }
        w.flush()?;
        Ok(path)
    }

    pub fn trajectory(
        &mut self,
        name: &str,
        setup: &crate::config::Setup,
        traj: &kforq_core::ForwardTrajectory,
    ) -> Result<PathBuf, CliError> {
        let (path, f) = self.create_file(name)?;
        let hash = self.hash.clone();
        kforq_core::write_trajectory_csv(
            std::io::BufWriter::new(f),
            &setup.domain,
            &setup.time,
            traj,
            &hash,
        )?;
        Ok(path)
    }

    pub fn optimizer_log(
        &mut self,
        name: &str,
        history: &[IterRecord],
    ) -> Result<PathBuf, CliError> {
        self.csv(name, history.iter())
    }

    pub fn field_csv(
        &mut self,
        name: &str,
        column: &'static str,
        setup: &crate::config::Setup,
        traj: &Trajectory,
    ) -> Result<PathBuf, CliError> {
        let rows = (0..traj.len()).flat_map(|n| {
            (0..setup.domain.n()).map(move |i| FieldRow {
                t: setup.time.t(n),
                x: setup.domain.x(i),
                value: traj.frame(n)[i],
            })
        });
        self.csv_with_value_column(name, column, rows)
    }

    pub fn control_csv(
        &mut self,
        name: &str,
        setup: &crate::config::Setup,
        window: &ControlWindow,
        omega: &WindowValues,
    ) -> Result<PathBuf, CliError> {
        let full = window.extend(omega);
        let rows = window.steps().flat_map(|k| {
            let frame = full.frame(k).clone();
            window.nodes().map(move |i| FieldRow {
                t: setup.time.t(k),
                x: setup.domain.x(i),
                value: frame[i],
            })
        });
        self.csv_with_value_column(name, "omega", rows)
    }

    fn csv_with_value_column(
        &mut self,
        name: &str,
        column: &'static str,
        rows: impl Iterator<Item = FieldRow>,
    ) -> Result<PathBuf, CliError> {
        let (path, mut f) = self.create_file(name)?;
        writeln!(f, "# config_hash: {}", self.hash)?;
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(f);
        w.write_record(["t", "x", column])
            .map_err(|e| CliError::Output(e.to_string()))?;
        for r in rows {
            w.serialize(r)
                .map_err(|e| CliError::Output(e.to_string()))?;
        }
        w.flush()?;
        Ok(path)
    }
}

#[derive(Debug, Serialize)]
struct FieldRow {
    t: f64,
    x: f64,
    value: f64,
}

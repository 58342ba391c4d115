//! Dataset and split resolution shared by all subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use splitlens_core::ingest::{load_dataset, DataFormat, IngestConfig, Loaded};
use splitlens_core::model::{Dataset, PerSet};
use splitlens_core::splits::{find_preset, AssignmentFile, SplitAssignment};

use crate::CliError;

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Annotation directory (Cholec80 layout), generic CSV file, or dataset JSON file.
    #[arg(long)]
    pub data: PathBuf,
    /// Input layout; guessed from the path when omitted.
    #[arg(long)]
    pub data_format: Option<DataFormat>,
    /// JSON ingest configuration; flags below override its fields.
    #[arg(long)]
    pub ingest_config: Option<PathBuf>,
    #[arg(long)]
    pub phase_fps: Option<u32>,
    #[arg(long)]
    pub tool_fps: Option<u32>,
    #[arg(long)]
    pub target_fps: Option<u32>,
}

impl DataArgs {
    pub fn ingest_config(&self) -> Result<IngestConfig, CliError> {
        let mut cfg = match &self.ingest_config {
            Some(path) => serde_json::from_str(&read(path)?)
                .with_context(|| format!("parsing ingest config {}", path.display()))?,
            None => {
                let format = self.data_format.unwrap_or_else(|| guess_format(&self.data));
                match format {
                    DataFormat::Cholec80 => IngestConfig::cholec80(),
                    f => IngestConfig::generic(f),
                }
            }
        };
        if let (Some(f), Some(_)) = (self.data_format, &self.ingest_config) {
            cfg.format = f;
        }
        if let Some(v) = self.phase_fps {
            cfg.phase_fps = v;
        }
        if let Some(v) = self.tool_fps {
            cfg.tool_fps = v;
        }
        if let Some(v) = self.target_fps {
            cfg.target_fps = v;
        }
        Ok(cfg)
    }

    /// Loads the dataset, reporting skipped surgeries on stderr.
    pub fn load(&self) -> Result<Loaded, CliError> {
        let cfg = self.ingest_config()?;
        let loaded = load_dataset(&self.data, &cfg)
            .with_context(|| format!("loading {}", self.data.display()))?;
        for (id, err) in &loaded.report.errors {
            eprintln!("warning: skipped surgery {id}: {err}");
        }
        Ok(loaded)
    }
}

pub fn guess_format(path: &Path) -> DataFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => DataFormat::GenericJson,
        Some("csv") => DataFormat::GenericCsv,
        _ => DataFormat::Cholec80,
    }
}

pub fn read(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

/// Writes to `path`, or stdout when `path` is `None` or `-`.
pub fn write_output(path: Option<&Path>, contents: &str) -> anyhow::Result<()> {
    match path {
        Some(p) if p != Path::new("-") => {
            fs::write(p, contents).with_context(|| format!("writing {}", p.display()))
        }
        _ => {
            use std::io::Write;
            let mut out = std::io::stdout().lock();
            out.write_all(contents.as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}

/// Resolves a preset name or an assignment file path, checked against the dataset.
pub fn resolve_split(arg: &str, dataset: &Dataset) -> Result<(String, SplitAssignment), CliError> {
    let (name, assignment) = if let Some(p) = find_preset(arg) {
        (p.name.to_owned(), p.assignment())
    } else {
        let path = Path::new(arg);
        if !path.exists() {
            return Err(CliError::validation(format!(
                "`{arg}` is neither a split preset nor an existing assignment file"
            )));
        }
        let file: AssignmentFile = serde_json::from_str(&read(path)?)
            .with_context(|| format!("parsing assignment file {arg}"))?;
        let name = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or(arg)
            .to_owned();
        let a = SplitAssignment::from_file(&file).map_err(|violations| CliError::Validation {
            message: format!("assignment file {arg} is invalid"),
            violations,
        })?;
        (name, a)
    };
    assignment
        .validate(dataset)
        .map_err(|violations| CliError::Validation {
            message: format!("split {name} does not partition the dataset"),
            violations,
        })?;
    Ok((name, assignment))
}

/// Parses `train/val/test` sizes; `-` or `0` for val means no validation set.
pub fn parse_sizes(s: &str) -> Result<PerSet<usize>, String> {
    let parts: Vec<&str> = s.split('/').collect();
    let num = |p: &str| -> Result<usize, String> {
        match p.trim() {
            "-" => Ok(0),
            t => t.parse().map_err(|_| format!("bad set size `{t}`")),
        }
    };
    match parts.as_slice() {
        [train, test] => Ok(PerSet {
            train: num(train)?,
            val: 0,
            test: num(test)?,
        }),
        [train, val, test] => Ok(PerSet {
            train: num(train)?,
            val: num(val)?,
            test: num(test)?,
        }),
        _ => Err(format!("expected train/val/test sizes, got `{s}`")),
    }
}

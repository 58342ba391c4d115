//! Annotation ingestion: Cholec80-style phase/tool files, a generic CSV
//! layout and the dataset JSON document this crate writes itself.
//!
//! Phase and tool rows are numbered in source video frames (`phase_fps`).
//! Downsampling keeps the rows whose frame number falls on a whole
//! target-rate boundary (`frame % (phase_fps / target_fps) == 0`); the kept
//! row's time index is `frame / (phase_fps / target_fps)`.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    Dataset, FrameRecord, InstrumentId, InstrumentSet, ModelError, PhaseId, Surgery,
    MAX_INSTRUMENTS,
};

pub const DATASET_SCHEMA_VERSION: u32 = 1;

/// Canonical Cholec80 phase order, Preparation first.
pub const CHOLEC80_PHASES: [&str; 7] = [
    "Preparation",
    "CalotTriangleDissection",
    "ClippingCutting",
    "GallbladderDissection",
    "GallbladderPackaging",
    "CleaningCoagulation",
    "GallbladderRetraction",
];

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: frame {frame} does not follow frame {previous}")]
    NonMonotonic {
        line: usize,
        previous: u64,
        frame: u64,
    },
    #[error("line {line}: invalid presence flag `{value}` (expected 0 or 1)")]
    InvalidFlag { line: usize, value: String },
    #[error("line {line}: expected {expected} columns, found {found}")]
    RowWidth {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("missing header line")]
    MissingHeader,
    #[error("surgery `{0}`: no joinable frames")]
    NoJoinableFrames(String),
    #[error("unknown phase `{0}`")]
    UnknownPhase(String),
    #[error("unknown instrument `{0}`")]
    UnknownInstrument(String),
    #[error("tool header {found:?} differs from vocabulary {expected:?}")]
    VocabularyMismatch {
        expected: Vec<String>,
        found: Vec<String>,
    },
    #[error("unsupported dataset schema version {0}")]
    SchemaVersion(u32),
    #[error("invalid ingest configuration: {0}")]
    Config(String),
    #[error("no surgeries found under {0}")]
    NoSurgeries(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    InFile {
        path: PathBuf,
        source: Box<IngestError>,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl IngestError {
    fn in_file(self, path: &Path) -> IngestError {
        IngestError::InFile {
            path: path.to_path_buf(),
            source: Box::new(self),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataFormat {
    Cholec80,
    GenericCsv,
    GenericJson,
}

impl std::str::FromStr for DataFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "cholec80" => Ok(DataFormat::Cholec80),
            "generic-csv" | "csv" => Ok(DataFormat::GenericCsv),
            "generic-json" | "json" => Ok(DataFormat::GenericJson),
            other => Err(format!("unknown data format `{other}`")),
        }
    }
}

/// Omitted fields in a JSON config take their Cholec80 defaults.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    pub format: DataFormat,
    pub phase_fps: u32,
    pub tool_fps: u32,
    pub target_fps: u32,
    /// Canonical phase order. `None` uses the Cholec80 order for Cholec80
    /// data and first-appearance order otherwise.
    pub phases: Option<Vec<String>>,
    /// Instrument order for generic CSV input; `None` uses first appearance.
    /// Cholec80 files take theirs from the tool header.
    pub instruments: Option<Vec<String>>,
    /// File name templates; `{id}` captures the surgery id.
    pub phase_pattern: String,
    pub tool_pattern: String,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig::cholec80()
    }
}

impl IngestConfig {
    pub fn cholec80() -> Self {
        IngestConfig {
            format: DataFormat::Cholec80,
            phase_fps: 25,
            tool_fps: 1,
            target_fps: 1,
            phases: Some(CHOLEC80_PHASES.iter().map(|s| s.to_string()).collect()),
            instruments: None,
            phase_pattern: "{id}-phase.txt".into(),
            tool_pattern: "{id}-tool.txt".into(),
        }
    }

    pub fn generic(format: DataFormat) -> Self {
        IngestConfig {
            format,
            phase_fps: 1,
            tool_fps: 1,
            target_fps: 1,
            phases: None,
            ..IngestConfig::cholec80()
        }
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        if self.target_fps == 0 || self.phase_fps == 0 || self.tool_fps == 0 {
            return Err(IngestError::Config("frame rates must be positive".into()));
        }
        if self.phase_fps % self.target_fps != 0 || self.tool_fps % self.target_fps != 0 {
            return Err(IngestError::Config(format!(
                "target rate {} must divide phase rate {} and tool rate {}",
                self.target_fps, self.phase_fps, self.tool_fps
            )));
        }
        for (name, pat) in [("phase", &self.phase_pattern), ("tool", &self.tool_pattern)] {
            if pat.matches("{id}").count() != 1 {
                return Err(IngestError::Config(format!(
                    "{name} pattern `{pat}` must contain `{{id}}` exactly once"
                )));
            }
        }
        Ok(())
    }

    /// Source frames per working-rate time step.
    pub fn frame_ratio(&self) -> u64 {
        u64::from(self.phase_fps / self.target_fps)
    }
}

/// Rows of one tool file: the header's instrument names and one presence
/// set per kept row, indexed against those names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolStream {
    pub instruments: Vec<String>,
    pub rows: Vec<(u64, InstrumentSet)>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct JoinDiagnostics {
    pub dropped_phase_only: u64,
    pub dropped_tool_only: u64,
}

fn split_fields(line: &str) -> Vec<&str> {
    if line.contains('\t') {
        line.split('\t').map(str::trim).collect()
    } else {
        line.split_whitespace().collect()
    }
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
}

pub fn parse_phase_stream(
    text: &str,
    config: &IngestConfig,
) -> Result<Vec<(u64, String)>, IngestError> {
    config.validate()?;
    let ratio = config.frame_ratio();
    let mut out = Vec::new();
    let mut previous: Option<u64> = None;
    for (idx, (line, content)) in data_lines(text).enumerate() {
        let fields = split_fields(content);
        if fields.len() != 2 {
            return Err(IngestError::Malformed {
                line,
                message: format!("expected `frame<TAB>phase`, found {} columns", fields.len()),
            });
        }
        let frame = match fields[0].parse::<u64>() {
            Ok(f) => f,
            Err(_) if idx == 0 => continue, // header
            Err(_) => {
                return Err(IngestError::Malformed {
                    line,
                    message: format!("invalid frame number `{}`", fields[0]),
                })
            }
        };
        if let Some(p) = previous {
            if frame <= p {
                return Err(IngestError::NonMonotonic {
                    line,
                    previous: p,
                    frame,
                });
            }
        }
        previous = Some(frame);
        if frame % ratio == 0 {
            out.push((frame / ratio, fields[1].to_owned()));
        }
    }
    Ok(out)
}

pub fn parse_tool_stream(text: &str, config: &IngestConfig) -> Result<ToolStream, IngestError> {
    config.validate()?;
    let ratio = config.frame_ratio();
    let mut lines = data_lines(text);
    let (_, header) = lines.next().ok_or(IngestError::MissingHeader)?;
    let header = split_fields(header);
    if header.len() < 2 || header[0].parse::<u64>().is_ok() {
        return Err(IngestError::MissingHeader);
    }
    let instruments: Vec<String> = header[1..].iter().map(|s| s.to_string()).collect();
    if instruments.len() > MAX_INSTRUMENTS {
        return Err(ModelError::TooManyInstruments(instruments.len()).into());
    }
    let width = header.len();

    let mut rows = Vec::new();
    let mut previous: Option<u64> = None;
    for (line, content) in lines {
        let fields = split_fields(content);
        if fields.len() != width {
            return Err(IngestError::RowWidth {
                line,
                expected: width,
                found: fields.len(),
            });
        }
        let frame = fields[0].parse::<u64>().map_err(|_| IngestError::Malformed {
            line,
            message: format!("invalid frame number `{}`", fields[0]),
        })?;
        if let Some(p) = previous {
            if frame <= p {
                return Err(IngestError::NonMonotonic {
                    line,
                    previous: p,
                    frame,
                });
            }
        }
        previous = Some(frame);
        let mut set = InstrumentSet::EMPTY;
        for (i, flag) in fields[1..].iter().enumerate() {
            match *flag {
                "0" => {}
                "1" => set.insert(InstrumentId(i as u16)),
                other => {
                    return Err(IngestError::InvalidFlag {
                        line,
                        value: other.to_owned(),
                    })
                }
            }
        }
        if frame % ratio == 0 {
            rows.push((frame / ratio, set));
        }
    }
    Ok(ToolStream { instruments, rows })
}

/// Inner join of the two streams on time index. Both inputs must be sorted
/// ascending (the parsers guarantee it).
pub fn join_streams(
    id: &str,
    phases: &[(u64, PhaseId)],
    tools: &[(u64, InstrumentSet)],
) -> Result<(Surgery, JoinDiagnostics), IngestError> {
    let mut frames = Vec::with_capacity(phases.len().min(tools.len()));
    let mut diag = JoinDiagnostics::default();
    let (mut i, mut j) = (0, 0);
    while i < phases.len() && j < tools.len() {
        let (tp, phase) = phases[i];
        let (tt, instruments) = tools[j];
        match tp.cmp(&tt) {
            std::cmp::Ordering::Less => {
                diag.dropped_phase_only += 1;
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                diag.dropped_tool_only += 1;
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                frames.push(FrameRecord {
                    time_index: tp,
                    phase,
                    instruments,
                });
                i += 1;
                j += 1;
            }
        }
    }
    diag.dropped_phase_only += (phases.len() - i) as u64;
    diag.dropped_tool_only += (tools.len() - j) as u64;
    if frames.is_empty() {
        return Err(IngestError::NoJoinableFrames(id.to_owned()));
    }
    Ok((
        Surgery {
            id: id.to_owned(),
            frames,
        },
        diag,
    ))
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct LoadReport {
    /// Surgeries skipped because of a per-surgery error, with the message.
    pub errors: Vec<(String, String)>,
    pub diagnostics: BTreeMap<String, JoinDiagnostics>,
}

#[derive(Debug)]
pub struct Loaded {
    pub dataset: Dataset,
    pub report: LoadReport,
}

pub fn load_dataset(root: &Path, config: &IngestConfig) -> Result<Loaded, IngestError> {
    config.validate()?;
    match config.format {
        DataFormat::Cholec80 => load_stream_pairs(root, config),
        DataFormat::GenericCsv => {
            let text = read(root)?;
            let dataset = parse_generic_csv(&text, config).map_err(|e| e.in_file(root))?;
            Ok(Loaded {
                dataset,
                report: LoadReport::default(),
            })
        }
        DataFormat::GenericJson => {
            let text = read(root)?;
            let doc: DatasetDocument =
                serde_json::from_str(&text).map_err(|e| IngestError::from(e).in_file(root))?;
            let dataset = doc.into_dataset().map_err(|e| e.in_file(root))?;
            Ok(Loaded {
                dataset,
                report: LoadReport::default(),
            })
        }
    }
}

fn read(path: &Path) -> Result<String, IngestError> {
    fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn match_pattern<'a>(pattern: &str, file_name: &'a str) -> Option<&'a str> {
    let (prefix, suffix) = pattern.split_once("{id}")?;
    let id = file_name.strip_prefix(prefix)?.strip_suffix(suffix)?;
    (!id.is_empty()).then_some(id)
}

fn discover(root: &Path, pattern: &str) -> Result<HashMap<String, PathBuf>, IngestError> {
    let mut found = HashMap::new();
    for entry in walkdir::WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| IngestError::Io {
            path: root.to_path_buf(),
            source: e.into(),
        })?;
        if !entry.file_type().is_file() {
            continue;
        }
        if let Some(id) = entry.file_name().to_str().and_then(|n| match_pattern(pattern, n)) {
            found.entry(id.to_owned()).or_insert_with(|| entry.into_path());
        }
    }
    Ok(found)
}

struct ParsedSurgery {
    id: String,
    phases: Vec<(u64, String)>,
    tools: ToolStream,
}

fn load_stream_pairs(root: &Path, config: &IngestConfig) -> Result<Loaded, IngestError> {
    let phase_files = discover(root, &config.phase_pattern)?;
    let tool_files = discover(root, &config.tool_pattern)?;
    let mut report = LoadReport::default();

    let mut ids: Vec<&String> = phase_files.keys().chain(tool_files.keys()).collect();
    ids.sort();
    ids.dedup();

    let parsed: Vec<Result<ParsedSurgery, (String, String)>> = ids
        .par_iter()
        .map(|id| {
            let (Some(pp), Some(tp)) = (phase_files.get(*id), tool_files.get(*id)) else {
                let missing = if phase_files.contains_key(*id) { "tool" } else { "phase" };
                return Err(((*id).clone(), format!("missing {missing} file")));
            };
            let parse = || -> Result<ParsedSurgery, IngestError> {
                let phases = parse_phase_stream(&read(pp)?, config).map_err(|e| e.in_file(pp))?;
                let tools = parse_tool_stream(&read(tp)?, config).map_err(|e| e.in_file(tp))?;
                Ok(ParsedSurgery {
                    id: (*id).clone(),
                    phases,
                    tools,
                })
            };
            parse().map_err(|e| ((*id).clone(), e.to_string()))
        })
        .collect();

    let mut ok = Vec::new();
    for p in parsed {
        match p {
            Ok(p) => ok.push(p),
            Err(e) => report.errors.push(e),
        }
    }
    let Some(first) = ok.first() else {
        return Err(IngestError::NoSurgeries(root.to_path_buf()));
    };
    let instruments = first.tools.instruments.clone();
    let phases = match &config.phases {
        Some(p) => p.clone(),
        None => first_appearance(ok.iter().flat_map(|s| s.phases.iter().map(|(_, n)| n.as_str()))),
    };
    let phase_index: HashMap<&str, PhaseId> = phases
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), PhaseId(i as u16)))
        .collect();

    let mut surgeries = Vec::new();
    for s in ok {
        let build = || -> Result<(Surgery, JoinDiagnostics), IngestError> {
            if s.tools.instruments != instruments {
                return Err(IngestError::VocabularyMismatch {
                    expected: instruments.clone(),
                    found: s.tools.instruments.clone(),
                });
            }
            let resolved = s
                .phases
                .iter()
                .map(|(t, n)| {
                    phase_index
                        .get(n.as_str())
                        .map(|&p| (*t, p))
                        .ok_or_else(|| IngestError::UnknownPhase(n.clone()))
                })
                .collect::<Result<Vec<_>, _>>()?;
            join_streams(&s.id, &resolved, &s.tools.rows)
        };
        match build() {
            Ok((surgery, diag)) => {
                report.diagnostics.insert(surgery.id.clone(), diag);
                surgeries.push(surgery);
            }
            Err(e) => report.errors.push((s.id.clone(), e.to_string())),
        }
    }
    if surgeries.is_empty() {
        return Err(IngestError::NoSurgeries(root.to_path_buf()));
    }
    let dataset = Dataset::new(phases, instruments, surgeries)?;
    Ok(Loaded { dataset, report })
}

fn first_appearance<'a>(names: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for n in names {
        if !out.iter().any(|o| o == n) {
            out.push(n.to_owned());
        }
    }
    out
}

/// `surgery_id,time_index,phase,instrument_1;...;instrument_k`, header
/// optional. Rows of one surgery must have increasing time indices.
pub fn parse_generic_csv(text: &str, config: &IngestConfig) -> Result<Dataset, IngestError> {
    let ratio = config.frame_ratio();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    struct Row {
        surgery: String,
        time: u64,
        phase: String,
        instruments: Vec<String>,
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(i + 1);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() != 3 && record.len() != 4 {
            return Err(IngestError::RowWidth {
                line,
                expected: 4,
                found: record.len(),
            });
        }
        let time = match record[1].parse::<u64>() {
            Ok(t) => t,
            Err(_) if i == 0 => continue,
            Err(_) => {
                return Err(IngestError::Malformed {
                    line,
                    message: format!("invalid time index `{}`", &record[1]),
                })
            }
        };
        let instruments = record
            .get(3)
            .unwrap_or("")
            .split(';')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_owned)
            .collect();
        rows.push((
            line,
            Row {
                surgery: record[0].to_owned(),
                time,
                phase: record[2].to_owned(),
                instruments,
            },
        ));
    }

    let phases = match &config.phases {
        Some(p) => p.clone(),
        None => first_appearance(rows.iter().map(|(_, r)| r.phase.as_str())),
    };
    let mut instruments: Vec<String> = config.instruments.clone().unwrap_or_default();
    for (_, r) in &rows {
        for name in &r.instruments {
            if !instruments.contains(name) {
                if config.instruments.is_some() {
                    return Err(IngestError::UnknownInstrument(name.clone()));
                }
                instruments.push(name.clone());
            }
        }
    }
    if instruments.len() > MAX_INSTRUMENTS {
        return Err(ModelError::TooManyInstruments(instruments.len()).into());
    }

    let mut by_surgery: BTreeMap<String, Vec<FrameRecord>> = BTreeMap::new();
    for (line, r) in rows {
        if r.time % ratio != 0 {
            continue;
        }
        let phase = phases
            .iter()
            .position(|p| *p == r.phase)
            .ok_or_else(|| IngestError::UnknownPhase(r.phase.clone()))?;
        let set = r
            .instruments
            .iter()
            .map(|n| InstrumentId(instruments.iter().position(|i| i == n).unwrap() as u16))
            .collect();
        let frames = by_surgery.entry(r.surgery).or_default();
        let time_index = r.time / ratio;
        if let Some(prev) = frames.last() {
            if time_index <= prev.time_index {
                return Err(IngestError::NonMonotonic {
                    line,
                    previous: prev.time_index * ratio,
                    frame: r.time,
                });
            }
        }
        frames.push(FrameRecord {
            time_index,
            phase: PhaseId(phase as u16),
            instruments: set,
        });
    }
    let surgeries = by_surgery
        .into_iter()
        .map(|(id, frames)| Surgery { id, frames })
        .collect();
    Ok(Dataset::new(phases, instruments, surgeries)?)
}

/// Writes the dataset in the generic CSV layout at the working rate.
pub fn to_generic_csv(dataset: &Dataset) -> String {
    let mut out = String::from("surgery_id,time_index,phase,instruments\n");
    for s in dataset.surgeries() {
        for f in &s.frames {
            let names = dataset.instrument_names(f.instruments).join(";");
            out.push_str(&format!(
                "{},{},{},{}\n",
                s.id,
                f.time_index,
                dataset.phase_name(f.phase),
                names
            ));
        }
    }
    out
}

/// Serialized dataset, the `generic-json` ingest format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetDocument {
    pub schema_version: u32,
    pub phases: Vec<String>,
    pub instruments: Vec<String>,
    pub surgeries: Vec<SurgeryDocument>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurgeryDocument {
    pub id: String,
    pub frames: Vec<FrameDocument>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameDocument {
    pub t: u64,
    pub phase: String,
    #[serde(default)]
    pub instruments: Vec<String>,
}

impl DatasetDocument {
    pub fn from_dataset(dataset: &Dataset) -> Self {
        DatasetDocument {
            schema_version: DATASET_SCHEMA_VERSION,
            phases: dataset.phases().to_vec(),
            instruments: dataset.instruments().to_vec(),
            surgeries: dataset
                .surgeries()
                .iter()
                .map(|s| SurgeryDocument {
                    id: s.id.clone(),
                    frames: s
                        .frames
                        .iter()
                        .map(|f| FrameDocument {
                            t: f.time_index,
                            phase: dataset.phase_name(f.phase).to_owned(),
                            instruments: dataset.instrument_names(f.instruments),
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    pub fn into_dataset(self) -> Result<Dataset, IngestError> {
        if self.schema_version != DATASET_SCHEMA_VERSION {
            return Err(IngestError::SchemaVersion(self.schema_version));
        }
        let phase_index: HashMap<&str, PhaseId> = self
            .phases
            .iter()
            .enumerate()
            .map(|(i, n)| (n.as_str(), PhaseId(i as u16)))
            .collect();
        let inst_index: HashMap<&str, InstrumentId> = self
            .instruments
            .iter()
            .enumerate()
            .map(|(i, n)| (n.as_str(), InstrumentId(i as u16)))
            .collect();
        let mut surgeries = Vec::with_capacity(self.surgeries.len());
        for s in &self.surgeries {
            let mut frames = Vec::with_capacity(s.frames.len());
            for f in &s.frames {
                let phase = *phase_index
                    .get(f.phase.as_str())
                    .ok_or_else(|| IngestError::UnknownPhase(f.phase.clone()))?;
                let instruments = f
                    .instruments
                    .iter()
                    .map(|n| {
                        inst_index
                            .get(n.as_str())
                            .copied()
                            .ok_or_else(|| IngestError::UnknownInstrument(n.clone()))
                    })
                    .collect::<Result<InstrumentSet, _>>()?;
                frames.push(FrameRecord {
                    time_index: f.t,
                    phase,
                    instruments,
                });
            }
            surgeries.push(Surgery {
                id: s.id.clone(),
                frames,
            });
        }
        Ok(Dataset::new(self.phases, self.instruments, surgeries)?)
    }
}

pub fn dataset_to_json(dataset: &Dataset) -> String {
    serde_json::to_string(&DatasetDocument::from_dataset(dataset)).expect("serializable")
}

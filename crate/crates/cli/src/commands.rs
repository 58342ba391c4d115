//! Batch subcommands.

use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::Context;
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use splitlens_core::coverage::{coverage_report_with, CoverageOptions, CoverageReport};
use splitlens_core::ingest::{dataset_to_json, to_generic_csv, DataFormat};
use splitlens_core::model::{Dataset, PerSet, SetLabel};
use splitlens_core::optimizer::{optimize, Objective, OptimizeResult, SearchConfig};
use splitlens_core::stats::{compute_set_sizes, FilterCriteria, SetSizeStats};
use splitlens_core::viewmodel::build_view_model;

use crate::data::{parse_sizes, read, resolve_split, write_output, DataArgs};
use crate::CliError;

pub const AUDIT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Json,
    TextTable,
}

#[derive(Debug, Clone, Args)]
pub struct AuditArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Split preset name (e.g. 32/8/40) or assignment JSON file.
    #[arg(long)]
    pub split: String,
    #[arg(long, value_enum, default_value = "json")]
    pub format: OutputFormat,
    /// Output file; stdout when omitted.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Smallest instrument set counted as a combination.
    #[arg(long, default_value_t = 2)]
    pub min_combination_size: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditReport {
    pub schema_version: u32,
    pub split: String,
    pub coverage: CoverageReport,
    pub set_sizes: SetSizeStats,
}

pub fn audit_report(
    dataset: &Dataset,
    split: &str,
    min_combination_size: usize,
) -> Result<AuditReport, CliError> {
    if min_combination_size == 0 {
        return Err(CliError::validation("minimum combination size must be at least 1"));
    }
    let (name, assignment) = resolve_split(split, dataset)?;
    let options = CoverageOptions {
        min_combination_size,
    };
    Ok(AuditReport {
        schema_version: AUDIT_SCHEMA_VERSION,
        split: name,
        coverage: coverage_report_with(dataset, &assignment, &options),
        set_sizes: compute_set_sizes(dataset, &assignment),
    })
}

pub fn render_audit(report: &AuditReport, format: OutputFormat) -> String {
    match format {
        OutputFormat::Json => {
            let mut s = serde_json::to_string_pretty(report).expect("report serializes");
            s.push('\n');
            s
        }
        OutputFormat::TextTable => {
            let mut out = report.coverage.to_text_table(&report.split);
            out.push('\n');
            let _ = writeln!(out, "{:<8}{:>10}{:>10}{:>14}", "Set", "Surgeries", "Frames", "Mean frames");
            for (set, s) in report.set_sizes.sets.iter() {
                if set == SetLabel::Val && !report.coverage.has_validation {
                    continue;
                }
                let mean = s.mean_frames.map_or("-".to_owned(), |m| format!("{m:.3}"));
                let _ = writeln!(out, "{:<8}{:>10}{:>10}{:>14}", set.as_str(), s.surgeries, s.frames, mean);
            }
            out
        }
    }
}

pub fn audit(args: &AuditArgs) -> Result<(), CliError> {
    let loaded = args.data.load()?;
    let report = audit_report(&loaded.dataset, &args.split, args.min_combination_size)?;
    write_output(args.output.as_deref(), &render_audit(&report, args.format))?;
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct OptimizeArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Set sizes as train/val/test, e.g. 32/8/40 or 40/-/40.
    #[arg(long, value_parser = parse_sizes)]
    pub sizes: Option<PerSet<usize>>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Maximum objective evaluations.
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub restarts: Option<usize>,
    /// JSON file with objective weights.
    #[arg(long)]
    pub objective: Option<PathBuf>,
    /// JSON search configuration (sizes, seed, budget, restarts, objective).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Starting split (preset or assignment file); also supplies default sizes.
    #[arg(long)]
    pub initial: Option<String>,
    /// Best assignment, in the assignment file format.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Improvement trace as CSV (evaluation,score).
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

/// Search settings as read from a config file or an HTTP request; every
/// field is optional and falls back to a default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeSettings {
    pub sizes: Option<PerSet<usize>>,
    pub seed: Option<u64>,
    pub budget: Option<usize>,
    pub restarts: Option<usize>,
    pub objective: Option<Objective>,
}

impl OptimizeSettings {
    pub const DEFAULT_BUDGET: usize = 20_000;
    pub const DEFAULT_RESTARTS: usize = 4;

    /// Settings in `self` win over `other`.
    pub fn or(self, other: OptimizeSettings) -> OptimizeSettings {
        OptimizeSettings {
            sizes: self.sizes.or(other.sizes),
            seed: self.seed.or(other.seed),
            budget: self.budget.or(other.budget),
            restarts: self.restarts.or(other.restarts),
            objective: self.objective.or(other.objective),
        }
    }

    pub fn resolve(&self, fallback_sizes: Option<PerSet<usize>>) -> Result<(SearchConfig, Objective), CliError> {
        let sizes = self
            .sizes
            .or(fallback_sizes)
            .ok_or_else(|| CliError::validation("set sizes are required (--sizes or --initial)"))?;
        Ok((
            SearchConfig {
                sizes,
                seed: self.seed.unwrap_or(0),
                budget: self.budget.unwrap_or(Self::DEFAULT_BUDGET),
                restarts: self.restarts.unwrap_or(Self::DEFAULT_RESTARTS),
            },
            self.objective.clone().unwrap_or_default(),
        ))
    }
}

pub fn trace_csv(result: &OptimizeResult) -> String {
    let mut out = String::from("evaluation,score\n");
    for t in &result.trace {
        let _ = writeln!(out, "{},{}", t.evaluation, t.score);
    }
    out
}

pub fn optimize_cmd(args: &OptimizeArgs) -> Result<(), CliError> {
    let loaded = args.data.load()?;
    let ds = &loaded.dataset;
    let from_file = match &args.config {
        Some(p) => serde_json::from_str(&read(p)?).with_context(|| format!("parsing {}", p.display()))?,
        None => OptimizeSettings::default(),
    };
    let objective = match &args.objective {
        Some(p) => Some(serde_json::from_str(&read(p)?).with_context(|| format!("parsing {}", p.display()))?),
        None => None,
    };
    let flags = OptimizeSettings {
        sizes: args.sizes,
        seed: args.seed,
        budget: args.budget,
        restarts: args.restarts,
        objective,
    };
    let initial = match &args.initial {
        Some(arg) => Some(resolve_split(arg, ds)?.1),
        None => None,
    };
    let (config, objective) = flags.or(from_file).resolve(initial.as_ref().map(|a| a.sizes()))?;
    let result = optimize(ds, &config, &objective, initial.as_ref())
        .map_err(|e| CliError::validation(e.to_string()))?;

    let mut file = serde_json::to_string_pretty(&result.assignment.to_file()).expect("serializes");
    file.push('\n');
    write_output(args.output.as_deref(), &file)?;
    if let Some(p) = &args.trace {
        write_output(Some(p), &trace_csv(&result))?;
    }
    eprintln!(
        "objective (a heuristic of this tool): {:.3} -> {:.3} after {} evaluations",
        result.initial_score, result.score, result.evaluations
    );
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct ExportArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub split: String,
    /// JSON filter criteria applied to the phase and instrument views.
    #[arg(long)]
    pub filter: Option<PathBuf>,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

pub fn export_viewmodel(args: &ExportArgs) -> Result<(), CliError> {
    let loaded = args.data.load()?;
    let (_, assignment) = resolve_split(&args.split, &loaded.dataset)?;
    let filter: FilterCriteria = match &args.filter {
        Some(p) => serde_json::from_str(&read(p)?).with_context(|| format!("parsing {}", p.display()))?,
        None => FilterCriteria::default(),
    };
    let vm = build_view_model(&loaded.dataset, &assignment, &filter)
        .map_err(|e| CliError::validation(e.to_string()))?;
    let mut s = serde_json::to_string_pretty(&vm).expect("view model serializes");
    s.push('\n');
    write_output(args.output.as_deref(), &s)?;
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct IngestArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Output layout.
    #[arg(long, default_value = "generic-json")]
    pub to: DataFormat,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

pub fn ingest(args: &IngestArgs) -> Result<(), CliError> {
    let loaded = args.data.load()?;
    let out = match args.to {
        DataFormat::GenericJson => {
            let mut s = dataset_to_json(&loaded.dataset);
            s.push('\n');
            s
        }
        DataFormat::GenericCsv => to_generic_csv(&loaded.dataset),
        DataFormat::Cholec80 => {
            return Err(CliError::validation("cannot write the Cholec80 layout; use generic-json or generic-csv"))
        }
    };
    write_output(args.output.as_deref(), &out)?;
    eprintln!(
        "{} surgeries, {} frames, fingerprint {}",
        loaded.dataset.surgeries().len(),
        loaded.dataset.total_frames(),
        loaded.dataset.fingerprint()
    );
    Ok(())
}

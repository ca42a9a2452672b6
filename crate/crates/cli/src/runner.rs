//! Expands a config into independent runs, executes them on a worker pool
//! and writes traces, the manifest, the summary and a config snapshot.

use std::fs;
use std::path::{Path, PathBuf};

use np2m2::fmt::format_sig;
use np2m2::rng::derive_seed;
use np2m2::rrm::{read_trace_csv, trace_csv_string};
use np2m2::{
    gen_circles, gen_linear_synthetic, load_csv, metrics, nearmiss3_undersample, run_rgd_lr, run_rrm, run_rrm_lr,
    CsvColumns, Dataset, IterationRecord,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{DatasetConfig, ExperimentConfig, Method};
use crate::error::CliError;

pub const SUMMARY_FILE: &str = "summary.csv";
pub const MANIFEST_FILE: &str = "manifest.csv";
pub const SNAPSHOT_FILE: &str = "resolved_config.toml";
pub const TRACE_DIR: &str = "traces";
pub const SUMMARY_HEADER: &str =
    "dataset,map,d,method,alpha,trials,burn_in,mean_accuracy,std_accuracy,mean_consistency,std_consistency";
pub const MANIFEST_HEADER: &str = "trace,dataset,map,d,method,alpha,trial,burn_in,mean_accuracy,mean_consistency";

/// Environment variable holding the worker count.
pub const WORKERS_ENV: &str = "NP2M2_WORKERS";

/// A swept parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Alpha,
    D,
}

impl std::str::FromStr for SweepParam {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "alpha" => Ok(SweepParam::Alpha),
            "d" => Ok(SweepParam::D),
            other => Err(CliError::Argument(format!(
                "unknown sweep parameter `{other}` (expected alpha or d)"
            ))),
        }
    }
}

/// The grid to execute: every `alpha` times every configured `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub config: ExperimentConfig,
    pub alphas: Vec<f64>,
    pub sweep: Option<(SweepParam, Vec<f64>)>,
}

impl Plan {
    pub fn run(config: ExperimentConfig) -> Self {
        let alphas = vec![config.rrm.alpha];
        Self {
            config,
            alphas,
            sweep: None,
        }
    }

    pub fn sweep(mut config: ExperimentConfig, param: SweepParam, values: Vec<f64>) -> Result<Self, CliError> {
        if values.is_empty() {
            return Err(CliError::Argument("sweep needs at least one value".into()));
        }
        let alphas = match param {
            SweepParam::Alpha => {
                for &a in &values {
                    if !(a > 0.0 && a < 0.5) {
                        return Err(CliError::Argument(format!("alpha must lie in (0, 0.5), got {a}")));
                    }
                }
                values.clone()
            }
            SweepParam::D => {
                if let Some(d) = values.iter().find(|d| !(**d >= 0.0 && d.is_finite())) {
                    return Err(CliError::Argument(format!("d must be >= 0, got {d}")));
                }
                config.map.d = values.clone();
                // Per-d label intensities no longer line up with the new grid.
                config.map.b = None;
                vec![config.rrm.alpha]
            }
        };
        Ok(Self {
            config,
            alphas,
            sweep: Some((param, values)),
        })
    }
}

/// Parses a comma-separated list of reals.
pub fn parse_values(list: &str) -> Result<Vec<f64>, CliError> {
    let values: Result<Vec<f64>, _> = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| CliError::Argument(format!("`{s}` is not a number"))))
        .collect();
    let values = values?;
    if values.is_empty() {
        return Err(CliError::Argument("value list is empty".into()));
    }
    Ok(values)
}

/// Identifies one table cell.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CellKey {
    pub dataset: String,
    pub map: String,
    pub d: String,
    pub method: String,
    pub alpha: String,
}

impl CellKey {
    fn csv_prefix(&self) -> String {
        format!("{},{},{},{},{}", self.dataset, self.map, self.d, self.method, self.alpha)
    }
}

/// One finished run.
#[derive(Debug, Clone)]
pub struct TraceResult {
    pub key: CellKey,
    pub method: Method,
    pub d: f64,
    pub alpha: f64,
    pub trial: usize,
    pub file: String,
    /// The in-memory records, at full precision.
    pub records: Vec<IterationRecord>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub traces: Vec<TraceResult>,
    pub summary_csv: String,
}

struct Job {
    key: CellKey,
    method: Method,
    d: f64,
    d_index: usize,
    alpha: f64,
    trial: usize,
    file: String,
}

pub fn worker_count() -> Result<usize, CliError> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(CliError::Argument(format!("{WORKERS_ENV} must be a positive integer, got `{v}`"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)),
    }
}

fn sanitize(label: &str) -> String {
    label.replace([',', '\n', '\r', '/', '\\'], "_")
}

fn base_datasets(config: &ExperimentConfig) -> Result<Vec<Dataset>, CliError> {
    let trials = config.rrm.trials;
    let tau = config.kernel.tau;
    let per_trial = |make: &dyn Fn(u64) -> np2m2::Result<Dataset>| -> Result<Vec<Dataset>, CliError> {
        (0..trials)
            .map(|k| Ok(make(derive_seed(config.seed, k as u64))?.with_tau(tau)?))
            .collect()
    };
    match &config.dataset {
        DatasetConfig::Circles { n_per_class, noise } => per_trial(&|s| gen_circles(*n_per_class, *noise, s)),
        DatasetConfig::Linear {
            n_per_class,
            dim,
            informative,
            class_sep,
        } => per_trial(&|s| gen_linear_synthetic(*n_per_class, *dim, *informative, *class_sep, s)),
        DatasetConfig::Csv {
            path,
            label_column,
            positive_label,
            negative_label,
            feature_columns,
            standardize,
            nearmiss,
        } => {
            let columns = CsvColumns {
                label_column: label_column.clone(),
                positive_label: positive_label.clone(),
                negative_label: negative_label.clone(),
                feature_columns: feature_columns.clone(),
            };
            let mut data = load_csv(path, &columns)?;
            if *standardize {
                data = data.standardized();
            }
            if let Some(nm) = nearmiss {
                data = nearmiss3_undersample(&data, nm.minority_label, nm.k)?;
            }
            let data = data.with_tau(tau)?;
            Ok(vec![data; trials])
        }
    }
}

fn trial_width(trials: usize) -> usize {
    trials.saturating_sub(1).to_string().len().max(2)
}

fn plan_jobs(plan: &Plan) -> Vec<Job> {
    let c = &plan.config;
    let dataset = sanitize(&c.dataset.label());
    let width = trial_width(c.rrm.trials);
    let mut jobs = Vec::new();
    for &alpha in &plan.alphas {
        for (d_index, &d) in c.map.d.iter().enumerate() {
            for &method in &c.methods {
                let key = CellKey {
                    dataset: dataset.clone(),
                    map: c.map.kind.name().into(),
                    d: format_sig(d, 12),
                    method: method.name().into(),
                    alpha: format_sig(alpha, 12),
                };
                for trial in 0..c.rrm.trials {
                    let file = format!(
                        "{}_d{}_alpha{}_trial{:0width$}.csv",
                        key.method, key.d, key.alpha, trial
                    );
                    jobs.push(Job {
                        key: key.clone(),
                        method,
                        d,
                        d_index,
                        alpha,
                        trial,
                        file,
                    });
                }
            }
        }
    }
    jobs
}

fn execute(config: &ExperimentConfig, base: &Dataset, job: &Job) -> Result<Vec<IterationRecord>, CliError> {
    let map = config.map_spec(job.d, job.d_index, base.n_features())?;
    let settings = config.rrm_settings(job.alpha, derive_seed(config.seed, (1 << 40) + job.trial as u64));
    let records = match job.method {
        Method::Np2m2 => run_rrm(base, &config.kernel_spec()?, &map, &settings)?.records,
        Method::RrmLr => run_rrm_lr(base, &map, &settings, &config.lr_settings())?.records,
        Method::RgdLr => run_rgd_lr(base, &map, &settings, &config.lr_settings(), config.lr.rgd_step)?.records,
    };
    Ok(records)
}

/// Writes `contents` to `path` through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    fs::write(&tmp, contents).map_err(CliError::io(&tmp))?;
    fs::rename(&tmp, path).map_err(CliError::io(path))
}

/// One manifest entry: a trace file and the cell it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub trace: String,
    pub key: CellKey,
    pub trial: usize,
    pub burn_in: usize,
}

/// Builds the manifest and summary CSV text from traces as read back from
/// disk. Cells appear in order of first occurrence.
pub fn build_tables(entries: &[(ManifestEntry, Vec<IterationRecord>)]) -> Result<(String, String), CliError> {
    let g = |v: f64| format_sig(v, 12);
    let mut manifest = format!("{MANIFEST_HEADER}\n");
    let mut cells: Vec<(CellKey, usize, Vec<&[IterationRecord]>)> = Vec::new();
    for (entry, records) in entries {
        let (acc, cons) = metrics::trial_means(records, entry.burn_in)
            .map_err(|e| CliError::Audit(format!("{}: {e}", entry.trace)))?;
        manifest.push_str(&format!(
            "{},{},{},{},{},{}\n",
            entry.trace,
            entry.key.csv_prefix(),
            entry.trial,
            entry.burn_in,
            g(acc),
            g(cons)
        ));
        match cells.iter_mut().find(|(k, b, _)| *k == entry.key && *b == entry.burn_in) {
            Some((_, _, list)) => list.push(records),
            None => cells.push((entry.key.clone(), entry.burn_in, vec![records])),
        }
    }
    let mut summary = format!("{SUMMARY_HEADER}\n");
    for (key, burn_in, traces) in &cells {
        let s = metrics::summarize(traces, *burn_in)?;
        summary.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            key.csv_prefix(),
            s.trials,
            s.burn_in,
            g(s.mean_accuracy),
            g(s.std_accuracy),
            g(s.mean_consistency),
            g(s.std_consistency)
        ));
    }
    Ok((manifest, summary))
}

#[derive(Serialize)]
struct Snapshot<'a> {
    version: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    sweep: Option<SweepSnapshot>,
    config: &'a ExperimentConfig,
}

#[derive(Serialize)]
struct SweepSnapshot {
    param: &'static str,
    values: Vec<f64>,
}

/// Executes every run of `plan`, writing outputs under `out_dir`.
pub fn run_plan(plan: &Plan, out_dir: &Path, workers: usize) -> Result<RunOutcome, CliError> {
    let config = &plan.config;
    let trace_dir = out_dir.join(TRACE_DIR);
    fs::create_dir_all(&trace_dir).map_err(CliError::io(&trace_dir))?;

    let snapshot = Snapshot {
        version: env!("CARGO_PKG_VERSION"),
        sweep: plan.sweep.as_ref().map(|(p, v)| SweepSnapshot {
            param: match p {
                SweepParam::Alpha => "alpha",
                SweepParam::D => "d",
            },
            values: v.clone(),
        }),
        config,
    };
    let text = toml::to_string(&snapshot).map_err(|e| CliError::Audit(format!("cannot serialize config: {e}")))?;
    write_atomic(&out_dir.join(SNAPSHOT_FILE), &text)?;

    let bases = base_datasets(config)?;
    let jobs = plan_jobs(plan);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Argument(format!("cannot start worker pool: {e}")))?;
    let results: Vec<Result<TraceResult, (String, CliError)>> = pool.install(|| {
        jobs.par_iter()
            .map(|job| {
                let records = execute(config, &bases[job.trial], job).map_err(|e| (job.file.clone(), e))?;
                write_atomic(&trace_dir.join(&job.file), &trace_csv_string(&records))
                    .map_err(|e| (job.file.clone(), e))?;
                Ok(TraceResult {
                    key: job.key.clone(),
                    method: job.method,
                    d: job.d,
                    alpha: job.alpha,
                    trial: job.trial,
                    file: job.file.clone(),
                    records,
                })
            })
            .collect()
    });

    let total = results.len();
    let mut traces = Vec::with_capacity(total);
    let mut failed = 0;
    for r in results {
        match r {
            Ok(t) => traces.push(t),
            Err((file, e)) => {
                failed += 1;
                eprintln!("error: {file}: {e}");
            }
        }
    }
    if failed > 0 {
        return Err(CliError::Partial { failed, total });
    }

    // The tables are built from the files as written so that `report`
    // reproduces them exactly.
    let mut entries = Vec::with_capacity(traces.len());
    for t in &traces {
        let path = trace_dir.join(&t.file);
        let text = fs::read_to_string(&path).map_err(CliError::io(&path))?;
        entries.push((
            ManifestEntry {
                trace: t.file.clone(),
                key: t.key.clone(),
                trial: t.trial,
                burn_in: config.rrm.burn_in,
            },
            read_trace_csv(text.as_bytes())?,
        ));
    }
    let (manifest, summary) = build_tables(&entries)?;
    write_atomic(&out_dir.join(MANIFEST_FILE), &manifest)?;
    write_atomic(&out_dir.join(SUMMARY_FILE), &summary)?;
    Ok(RunOutcome {
        out_dir: out_dir.to_path_buf(),
        traces,
        summary_csv: summary,
    })
}

/// Parsed summary row.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub key: CellKey,
    pub trials: usize,
    pub burn_in: usize,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_consistency: f64,
    pub std_consistency: f64,
}

pub fn parse_summary(text: &str) -> Result<Vec<SummaryRow>, CliError> {
    let mut lines = text.lines();
    if lines.next() != Some(SUMMARY_HEADER) {
        return Err(CliError::Audit(format!("{SUMMARY_FILE}: unexpected header")));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let bad = || CliError::Audit(format!("{SUMMARY_FILE}: malformed line {}", i + 2));
            let c: Vec<&str> = line.split(',').collect();
            if c.len() != 11 {
                return Err(bad());
            }
            let f = |k: usize| c[k].parse::<f64>().map_err(|_| bad());
            let u = |k: usize| c[k].parse::<usize>().map_err(|_| bad());
            Ok(SummaryRow {
                key: CellKey {
                    dataset: c[0].into(),
                    map: c[1].into(),
                    d: c[2].into(),
                    method: c[3].into(),
                    alpha: c[4].into(),
                },
                trials: u(5)?,
                burn_in: u(6)?,
                mean_accuracy: f(7)?,
                std_accuracy: f(8)?,
                mean_consistency: f(9)?,
                std_consistency: f(10)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn value_lists() {
        assert_eq!(parse_values("0.3, 0.4,0.49").unwrap(), vec![0.3, 0.4, 0.49]);
        assert!(parse_values("").is_err());
        assert!(parse_values("a").is_err());
    }

    #[test]
    fn sweep_checks() {
        let c = ExperimentConfig::parse(
            "name='x'\n[dataset]\nkind='circles'\nn_per_class=3\nnoise=0.1\n[map]\nkind='label_flip'\nd=[5.0]\n",
        )
        .unwrap();
        assert!(Plan::sweep(c.clone(), SweepParam::Alpha, vec![]).is_err());
        assert!(Plan::sweep(c.clone(), SweepParam::Alpha, vec![0.7]).is_err());
        let p = Plan::sweep(c, SweepParam::D, vec![1.0, 2.0]).unwrap();
        assert_eq!(p.config.map.d, vec![1.0, 2.0]);
        assert!("gamma".parse::<SweepParam>().is_err());
    }

    #[test]
    fn trial_file_width() {
        assert_eq!(trial_width(10), 2);
        assert_eq!(trial_width(101), 3);
    }
}

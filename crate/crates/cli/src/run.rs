//! Subcommand implementations. Each writes its artifacts into the configured
//! output directory and returns what it computed.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use cvsf_core::bootstrap::{run_bootstrap, CriticalValue, FailedReplication};
use cvsf_core::design::{simulate, DgpSpec, Simulation};
use cvsf_core::identification::Diagnostics;
use cvsf_core::{
    Dataset, FirstStageFit, Kind, Pipeline, PipelineConfig, Region, StructuralEstimates,
    StructuralFunctionEstimate,
};
use serde::{Deserialize, Serialize};

use crate::config::{DiscretizeSpec, RunConfig};
use crate::failure::Failure;
use crate::output::{write_atomic, write_table};

pub const ESTIMATES_FILE: &str = "estimates.csv";
pub const DIAGNOSTICS_REPORT: &str = "diagnostics.txt";
pub const DIAGNOSTICS_TABLE: &str = "diagnostics.csv";
pub const METADATA_FILE: &str = "metadata.json";
pub const STUDY_FILE: &str = "study.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub replications: usize,
    pub completed: usize,
    pub failed: Vec<FailedReplication>,
    pub critical_values: Vec<CriticalValue>,
}

/// Everything needed to repeat a run, plus what happened.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: RunConfig,
    pub status: String,
    pub exit_code: u8,
    pub observations: Option<usize>,
    pub identified: Option<bool>,
    pub warnings: Vec<String>,
    pub bootstrap: Option<BootstrapSummary>,
    pub outputs: Vec<String>,
    pub started_unix: u64,
    pub elapsed_seconds: f64,
}

impl Metadata {
    fn new(command: &str, config: &RunConfig) -> Metadata {
        Metadata {
            tool: "cvsf".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config: config.clone(),
            status: "running".into(),
            exit_code: 0,
            observations: None,
            identified: None,
            warnings: Vec::new(),
            bootstrap: None,
            outputs: Vec::new(),
            started_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
            elapsed_seconds: 0.0,
        }
    }

    pub fn load(path: &Path) -> Result<Metadata, Failure> {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
    }

    fn finish<T>(&mut self, result: &Result<T, Failure>, start: Instant) {
        self.elapsed_seconds = start.elapsed().as_secs_f64();
        match result {
            Ok(_) => self.status = "ok".into(),
            Err(e) => {
                self.status = e.to_string();
                self.exit_code = e.exit_code();
            }
        }
    }

    fn write(&self, dir: &Path) -> Result<(), Failure> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Failure::Numeric(format!("cannot encode metadata: {e}")))?;
        write_atomic(&dir.join(METADATA_FILE), |w| writeln!(w, "{text}"))
    }
}

fn prepare(config: &RunConfig) -> Result<RunConfig, Failure> {
    config.validate()?;
    let mut config = config.clone();
    if let Some(input) = &config.input {
        // absolute, so the metadata replays from any working directory
        if let Ok(abs) = fs::canonicalize(input) {
            config.input = Some(abs);
        }
    }
    fs::create_dir_all(&config.output).map_err(|e| {
        Failure::Usage(format!(
            "cannot create output directory {}: {e}",
            config.output.display()
        ))
    })?;
    Ok(config)
}

/// Runs `body` with metadata bookkeeping; metadata is written whatever the
/// outcome.
fn with_metadata<T>(
    command: &str,
    config: &RunConfig,
    body: impl FnOnce(&RunConfig, &mut Metadata) -> Result<T, Failure>,
) -> Result<T, Failure> {
    let start = Instant::now();
    let config = prepare(config)?;
    let mut meta = Metadata::new(command, &config);
    let result = body(&config, &mut meta);
    meta.finish(&result, start);
    meta.write(&config.output)?;
    result
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    write_atomic(path, |w| w.write_all(text.as_bytes()))
}

fn write_diagnostics_table(path: &Path, diagnostics: &Diagnostics) -> Result<(), Failure> {
    write_atomic(path, |w| {
        let mut csv = csv::Writer::from_writer(w);
        for row in diagnostics.rows() {
            csv.serialize(row)?;
        }
        csv.flush()
    })
}

/// First stage plus identification diagnostics, with the report files
/// written even when identification fails.
fn diagnose_inner(
    config: &RunConfig,
    data: &Dataset,
    meta: &mut Metadata,
) -> Result<Diagnostics, Failure> {
    let dir = &config.output;
    let pipeline = config.pipeline();
    let first = match FirstStageFit::fit(data, &pipeline.basis, &pipeline.stage, None) {
        Ok(f) => f,
        Err(e) => {
            let failure = Failure::from(e);
            if let Failure::Identification(m) = &failure {
                let mut report = format!("first stage failed: {m}\n");
                for c in cvsf_core::identification::instrument_cells(&data.z)
                    .iter()
                    .flatten()
                {
                    report.push_str(&format!(
                        "instrument value {}: {} observations ({:.1}%)\n",
                        c.value,
                        c.count,
                        100.0 * c.share
                    ));
                }
                report.push_str("identification: FAILED\n");
                write_text(&dir.join(DIAGNOSTICS_REPORT), &report)?;
                meta.outputs.push(DIAGNOSTICS_REPORT.into());
                meta.identified = Some(false);
            }
            return Err(failure);
        }
    };
    let v_hat = first.control_values(data)?;
    let diagnostics =
        Diagnostics::compute(data, &first, &v_hat, &pipeline.basis, config.threshold)?;
    write_text(&dir.join(DIAGNOSTICS_REPORT), &diagnostics.report())?;
    write_diagnostics_table(&dir.join(DIAGNOSTICS_TABLE), &diagnostics)?;
    meta.outputs.push(DIAGNOSTICS_REPORT.into());
    meta.outputs.push(DIAGNOSTICS_TABLE.into());
    meta.identified = Some(diagnostics.identified());
    for c in diagnostics.thin_instrument_cells() {
        meta.warnings.push(format!(
            "thin instrument cell: z = {} holds {:.1}% of observations",
            c.value,
            100.0 * c.share
        ));
    }
    if !diagnostics.identified() {
        return Err(Failure::Identification(format!(
            "identification diagnostics failed at threshold {}; see {}",
            config.threshold,
            dir.join(DIAGNOSTICS_REPORT).display()
        )));
    }
    Ok(diagnostics)
}

/// Result of `estimate`.
#[derive(Debug, Clone)]
pub struct EstimateOutcome {
    pub estimates: StructuralEstimates,
    pub diagnostics: Diagnostics,
    pub output: PathBuf,
}

pub fn run_estimate(config: &RunConfig) -> Result<EstimateOutcome, Failure> {
    with_metadata("estimate", config, |config, meta| {
        let data = config.load_data()?;
        meta.observations = Some(data.n());
        let diagnostics = diagnose_inner(config, &data, meta)?;
        let region = config.region.resolve(&data)?;
        let pipeline = config.pipeline();
        let estimates = match &config.bootstrap {
            Some(b) => {
                let boot = config.bootstrap_config(b);
                let outcome = run_bootstrap(&data, &pipeline, &region, &boot)?;
                meta.bootstrap = Some(BootstrapSummary {
                    replications: boot.replications,
                    completed: outcome.draws.len(),
                    failed: outcome.failed.clone(),
                    critical_values: outcome.critical_values.clone(),
                });
                outcome.estimates
            }
            None => Pipeline::fit(&data, &pipeline)?.evaluate_region(&region)?,
        };
        let tables: Vec<&StructuralFunctionEstimate> = estimates.iter().collect();
        write_table(&config.output.join(ESTIMATES_FILE), &tables)?;
        meta.outputs.push(ESTIMATES_FILE.into());
        Ok(EstimateOutcome {
            estimates,
            diagnostics,
            output: config.output.clone(),
        })
    })
}

pub fn run_diagnose(config: &RunConfig) -> Result<Diagnostics, Failure> {
    with_metadata("diagnose", config, |config, meta| {
        let data = config.load_data()?;
        meta.observations = Some(data.n());
        diagnose_inner(config, &data, meta)
    })
}

/// Named simulation designs.
pub fn preset(name: &str, seed: u64) -> Result<DgpSpec, Failure> {
    Ok(match name.replace('-', "_").as_str() {
        "linear_binary" => DgpSpec::linear_binary(seed),
        "deterministic" => DgpSpec::deterministic(seed),
        "irrelevant" => DgpSpec::irrelevant(seed),
        "continuous_skewed" => DgpSpec::continuous_skewed(seed),
        "identity_control" => DgpSpec::identity_control([1.0, 0.5], [1.0, 0.3], [1.0, 0.2], seed),
        other => {
            return Err(Failure::Usage(format!(
                "unknown design `{other}` (expected linear_binary, deterministic, irrelevant, \
                 continuous_skewed or identity_control)"
            )))
        }
    })
}

/// True structural functions of a simulation on `region`, in the estimate
/// layout.
pub fn truth_tables(sim: &Simulation, region: &Region) -> Result<StructuralEstimates, Failure> {
    let t = &sim.truth;
    let mut dsf = Vec::new();
    let mut qsf = Vec::new();
    let mut asf = Vec::new();
    for &x in &region.x_grid {
        dsf.push(
            region
                .y_grid
                .iter()
                .map(|&y| t.dsf(y, x))
                .collect::<Result<Vec<_>, _>>()?,
        );
        qsf.push(
            region
                .p_levels
                .iter()
                .map(|&p| t.qsf(p, x))
                .collect::<Result<Vec<_>, _>>()?,
        );
        asf.push(vec![t.asf(x)?]);
    }
    let table = |kind, index_grid: &Vec<f64>, values| StructuralFunctionEstimate {
        kind,
        x_grid: region.x_grid.clone(),
        index_grid: index_grid.clone(),
        values,
        bands: None,
    };
    Ok(StructuralEstimates {
        dsf: table(Kind::Dsf, &region.y_grid, dsf),
        qsf: table(Kind::Qsf, &region.p_levels, qsf),
        asf: table(Kind::Asf, &Vec::new(), asf),
    })
}

/// Draws a sample, writes it as CSV and optionally writes the truth on the
/// sample's default region.
pub fn run_simulate(
    spec: &DgpSpec,
    n: usize,
    output: &Path,
    truth: Option<&Path>,
) -> Result<Simulation, Failure> {
    let sim = simulate(spec, n)?;
    write_atomic(output, |w| {
        sim.data.to_csv_writer(w).map_err(|e| match e {
            cvsf_core::Error::Io(io) => io,
            other => std::io::Error::other(other.to_string()),
        })
    })?;
    if let Some(path) = truth {
        let region = Region::default_for(&sim.data)?;
        let tables = truth_tables(&sim, &region)?;
        write_table(path, &tables.iter().collect::<Vec<_>>())?;
    }
    Ok(sim)
}

/// One coarsened-instrument fit of the discretization study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyCell {
    pub design: u8,
    pub bins: usize,
    /// `sup |Q̂_M − Q̂_continuous|` over the region, when the fit succeeded.
    pub sup_deviation: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Study {
    pub benchmark: StructuralFunctionEstimate,
    pub cells: Vec<StudyCell>,
}

impl Study {
    pub fn deviation(&self, design: u8, bins: usize) -> Option<f64> {
        self.cells
            .iter()
            .find(|c| c.design == design && c.bins == bins)
            .and_then(|c| c.sup_deviation)
    }
}

fn sup_distance(a: &StructuralFunctionEstimate, b: &StructuralFunctionEstimate) -> f64 {
    a.values
        .iter()
        .flatten()
        .zip(b.values.iter().flatten())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

/// Fits the QSF with the continuous instrument and with each design × M
/// coarsening, and reports sup-norm deviations from the continuous fit.
/// Failed cells keep their error and do not stop the study.
pub fn discretization_study(
    data: &Dataset,
    pipeline: &PipelineConfig,
    region: &Region,
    bins: &[usize],
) -> Result<Study, Failure> {
    let benchmark = Pipeline::fit(data, pipeline)?.evaluate_region(region)?.qsf;
    let mut cells = Vec::new();
    for design in [1u8, 2] {
        for &m in bins {
            let spec = DiscretizeSpec { design, bins: m };
            let fitted = spec
                .apply(data)
                .and_then(|d| Ok(Pipeline::fit(&d, pipeline)?.evaluate_region(region)?.qsf));
            cells.push(match fitted {
                Ok(q) => StudyCell {
                    design,
                    bins: m,
                    sup_deviation: Some(sup_distance(&q, &benchmark)),
                    error: None,
                },
                Err(e) => StudyCell {
                    design,
                    bins: m,
                    sup_deviation: None,
                    error: Some(e.to_string()),
                },
            });
        }
    }
    Ok(Study { benchmark, cells })
}

pub fn run_study(config: &RunConfig, bins: &[usize]) -> Result<Study, Failure> {
    if bins.is_empty() {
        return Err(Failure::Usage(
            "the study needs at least one bin count".into(),
        ));
    }
    let mut config = config.clone();
    // the study sets the coarsening itself
    config.discretize = None;
    with_metadata("study", &config, |config, meta| {
        let data = config.load_data()?;
        meta.observations = Some(data.n());
        let region = config.region.resolve(&data)?;
        let study = discretization_study(&data, &config.pipeline(), &region, bins)?;
        write_atomic(&config.output.join(STUDY_FILE), |w| {
            let mut csv = csv::Writer::from_writer(w);
            csv.write_record(["design", "bins", "sup_deviation", "status"])?;
            csv.write_record(["continuous", "", "0", "ok"])?;
            for c in &study.cells {
                csv.write_record([
                    c.design.to_string(),
                    c.bins.to_string(),
                    c.sup_deviation.map_or(String::new(), |d| d.to_string()),
                    c.error.clone().unwrap_or_else(|| "ok".into()),
                ])?;
            }
            csv.flush()
        })?;
        meta.outputs.push(STUDY_FILE.into());
        for c in study.cells.iter().filter(|c| c.error.is_some()) {
            meta.warnings.push(format!(
                "design {} with {} bins failed: {}",
                c.design,
                c.bins,
                c.error.as_deref().unwrap_or_default()
            ));
        }
        Ok(study)
    })
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cvsf_cli::output::{emit_plot_data, read_table, refine};
use cvsf_cli::run::preset;
use cvsf_cli::{
    run_diagnose, run_estimate, run_simulate, run_study, Failure, Metadata, Overrides, RunConfig,
};
use cvsf_core::{DgpSpec, Kind};

#[derive(Parser)]
#[command(
    name = "cvsf",
    version,
    about = "Structural functions of triangular models via quantile-regression control variables"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the DSF, QSF and ASF, with optional bootstrap bands.
    Estimate(RunArgs),
    /// Report identification diagnostics only.
    Diagnose(RunArgs),
    /// Draw a synthetic sample.
    Simulate(SimulateArgs),
    /// Compare QSFs under coarsened instruments with the continuous fit.
    Study {
        #[command(flatten)]
        run: RunArgs,
        /// Bin counts M to try with both discretization designs.
        #[arg(long, value_delimiter = ',', default_values_t = [2usize, 3, 5, 15])]
        bins_list: Vec<usize>,
    },
    /// Extract one structural function from a table for plotting.
    Plotdata(PlotArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Replay the configuration recorded in a metadata.json.
    #[arg(long, conflicts_with = "config")]
    from_metadata: Option<PathBuf>,
    /// Input CSV with header y,x,z,z1.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Quantile levels per process (T).
    #[arg(long)]
    grid_size: Option<usize>,
    /// Outcome mesh points (S).
    #[arg(long)]
    mesh_size: Option<usize>,
    /// Eigenvalue threshold B of the identification gate.
    #[arg(long)]
    threshold: Option<f64>,
    /// Comma-separated terms, e.g. `1,x`.
    #[arg(long)]
    p_terms: Option<String>,
    #[arg(long)]
    q_terms: Option<String>,
    #[arg(long)]
    r_terms: Option<String>,
    #[arg(long)]
    s_terms: Option<String>,
    /// Bootstrap replications; 0 disables the bootstrap.
    #[arg(long)]
    replications: Option<usize>,
    /// Band level.
    #[arg(long)]
    level: Option<f64>,
    /// Discretization design (1 or 2).
    #[arg(long)]
    design: Option<u8>,
    /// Number of bins M of the discretization.
    #[arg(long)]
    bins: Option<usize>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig, Failure> {
        let mut config = match (&self.config, &self.from_metadata) {
            (Some(path), _) => RunConfig::load(path)?,
            (None, Some(path)) => Metadata::load(path)?.config,
            (None, None) => RunConfig::default(),
        };
        config.apply(&Overrides {
            input: self.input.clone(),
            output: self.output.clone(),
            seed: self.seed,
            epsilon: self.epsilon,
            grid_size: self.grid_size,
            mesh_size: self.mesh_size,
            threshold: self.threshold,
            p_terms: self.p_terms.clone(),
            q_terms: self.q_terms.clone(),
            r_terms: self.r_terms.clone(),
            s_terms: self.s_terms.clone(),
            replications: self.replications,
            level: self.level,
            design: self.design,
            bins: self.bins,
        })?;
        Ok(config)
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// Named design: linear_binary, deterministic, irrelevant,
    /// continuous_skewed or identity_control.
    #[arg(long, default_value = "linear_binary", conflicts_with = "spec")]
    dgp: String,
    /// TOML file with a full design specification.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
    /// Also write the true structural functions on the default region.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    /// Table written by `estimate` (estimates.csv) or a previous `plotdata`.
    #[arg(long)]
    table: PathBuf,
    #[arg(long)]
    kind: Kind,
    #[arg(long)]
    output: PathBuf,
    /// Resample onto this many equally spaced x values.
    #[arg(long)]
    x_points: Option<usize>,
}

fn simulate(args: &SimulateArgs) -> Result<(), Failure> {
    let spec = match &args.spec {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
            let mut spec: DgpSpec = toml::from_str(&text)
                .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
            spec.seed = args.seed;
            spec
        }
        None => preset(&args.dgp, args.seed)?,
    };
    run_simulate(&spec, args.n, &args.output, args.truth.as_deref())?;
    Ok(())
}

fn plotdata(args: &PlotArgs) -> Result<(), Failure> {
    let tables = read_table(&args.table)?;
    let table = tables.iter().find(|t| t.kind == args.kind).ok_or_else(|| {
        Failure::Data(format!(
            "{} has no `{}` rows",
            args.table.display(),
            args.kind
        ))
    })?;
    let table = match args.x_points {
        Some(points) => refine(table, points)?,
        None => table.clone(),
    };
    emit_plot_data(&table, &args.output)
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Estimate(args) => {
            let outcome = run_estimate(&args.resolve()?)?;
            print!("{}", outcome.diagnostics.report());
            eprintln!("wrote {}", outcome.output.display());
        }
        Command::Diagnose(args) => {
            let diagnostics = run_diagnose(&args.resolve()?)?;
            print!("{}", diagnostics.report());
        }
        Command::Simulate(args) => simulate(&args)?,
        Command::Study { run, bins_list } => {
            let study = run_study(&run.resolve()?, &bins_list)?;
            println!("design,bins,sup_deviation");
            for c in &study.cells {
                match c.sup_deviation {
                    Some(d) => println!("{},{},{d}", c.design, c.bins),
                    None => println!("{},{},failed", c.design, c.bins),
                }
            }
        }
        Command::Plotdata(args) => plotdata(&args)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

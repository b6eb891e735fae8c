//! Command-line front end: runs flows on built-in model problems or on a
//! user-supplied matrix and writes plot-ready CSV series plus JSON summaries.
//!
//! Every run writes `manifest.json` echoing all resolved parameters, so a
//! run can be reproduced exactly from its output directory. All outputs are
//! computed before anything is written: a failing run leaves no partial
//! files. Exit codes: 0 success, 1 bad input (flags, files, parameters),
//! 2 numerical failure (integration, eigensolver, root finding).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{Value, json};

use dissflow::matcore::{
    invariant_drifts, optimal_assignment, random_complex_matrix, reference_spectrum, seeded_rng,
    spectral_discrepancy, trace_power_invariants,
};
use dissflow::models::chain::{
    DisorderSpec, ScanSpec, asymptotic_decay_rate, build_disordered_matrix, disorder_scan,
    has_strongly_dissipative, scan_csv,
};
use dissflow::models::scattering::{
    ScatteringSpec, build_scattering_matrix, central_eigenvalue, solve_secular,
    strongly_dissipative_eigenvalue, weak_coupling_eigenvalue,
};
use dissflow::superfermion::{
    SingleModeParams, single_mode_analytic_flow, single_mode_density_evolution,
    single_mode_matrix, single_mode_steady_density,
};
use dissflow::sw::{SwError, compare_flow_vs_sw};
use dissflow::{
    C64, CMatrix, FlowConfig, FlowOutcome, FlowRun, GeneratorKind, PreconditionerPolicy, StepMode,
};

const OUT_ENV: &str = "DISSFLOW_OUT";

#[derive(Parser)]
#[command(
    name = "dissflow",
    version,
    about = "Diagonalize non-Hermitian matrices by integrating dissipative flow equations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Flow a seeded random dense complex matrix and compare the final
    /// diagonal against the reference eigensolver.
    Random(RandomArgs),
    /// Flow the exactly solvable single decaying mode and emit parameter
    /// curves, the steady occupation, and the occupation time series.
    SingleMode(SingleModeArgs),
    /// Flow the momentum-space loss model and compare closed-form decay-rate
    /// estimates against the dense spectrum.
    Scattering(ScatteringArgs),
    /// Diagonalize disordered chains with a central loss site, either exactly
    /// (decay-rate scan over lengths) or by disorder-averaged flows.
    Disordered(DisorderedArgs),
    /// Compare second-order effective blocks against exact spectra and
    /// converged flows over a range of perturbation strengths.
    SwCompare(SwCompareArgs),
    /// Flow a matrix read from a file in the documented text format.
    FlowFile(FlowFileArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum GeneratorChoice {
    Wegner,
    DiagAdjoint,
    White,
}

impl GeneratorChoice {
    fn kind(self) -> GeneratorKind {
        match self {
            GeneratorChoice::Wegner => GeneratorKind::Wegner,
            GeneratorChoice::DiagAdjoint => GeneratorKind::DiagAdjoint,
            GeneratorChoice::White => GeneratorKind::white(),
        }
    }
}

#[derive(Args)]
struct FlowArgs {
    /// Flow generator.
    #[arg(long, value_enum, default_value_t = GeneratorChoice::White)]
    generator: GeneratorChoice,
    /// Integration step (initial step in adaptive mode).
    #[arg(long, default_value_t = 1e-3)]
    dl: f64,
    /// Flow-time budget.
    #[arg(long, default_value_t = 10.0)]
    lmax: f64,
    /// Use embedded-error adaptive stepping instead of fixed steps.
    #[arg(long)]
    adaptive: bool,
    /// Per-step error threshold for adaptive stepping.
    #[arg(long, default_value_t = 1e-9)]
    err_threshold: f64,
    /// Largest step adaptive control may take.
    #[arg(long, default_value_t = 0.5)]
    max_step: f64,
    /// Pin off-diagonal entries once they fall below this fraction of their
    /// initial magnitude (0 disables truncation).
    #[arg(long, default_value_t = 0.0)]
    truncate_frac: f64,
    /// Declare convergence when |V|^2 falls to this ratio of its initial
    /// value (0 flows the full budget).
    #[arg(long, default_value_t = 1e-12)]
    stop_ratio: f64,
    /// Record every k-th accepted step in the trace.
    #[arg(long, default_value_t = 10)]
    trace_stride: usize,
}

impl FlowArgs {
    fn config(&self, invariant_count: usize) -> FlowConfig {
        FlowConfig {
            generator: self.generator.kind(),
            step: self.dl,
            max_flow: self.lmax,
            mode: if self.adaptive {
                StepMode::Adaptive {
                    error_threshold: self.err_threshold,
                    min_step: 1e-9,
                    max_step: self.max_step,
                }
            } else {
                StepMode::Fixed
            },
            truncation_fraction: self.truncate_frac,
            stop_offdiag_ratio: self.stop_ratio,
            trace_stride: self.trace_stride,
            invariant_count,
            preconditioner: PreconditionerPolicy::Off,
        }
    }

    fn manifest(&self, params: &mut BTreeMap<String, Value>) {
        params.insert("generator".into(), json!(self.generator.kind().name()));
        params.insert("dl".into(), json!(self.dl));
        params.insert("lmax".into(), json!(self.lmax));
        params.insert("adaptive".into(), json!(self.adaptive));
        params.insert("err_threshold".into(), json!(self.err_threshold));
        params.insert("max_step".into(), json!(self.max_step));
        params.insert("truncate_frac".into(), json!(self.truncate_frac));
        params.insert("stop_ratio".into(), json!(self.stop_ratio));
        params.insert("trace_stride".into(), json!(self.trace_stride));
    }
}

#[derive(Args)]
struct OutArgs {
    /// Output directory (defaults to $DISSFLOW_OUT, then the current
    /// directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl OutArgs {
    fn resolve(&self) -> PathBuf {
        self.out
            .clone()
            .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("."))
    }
}

#[derive(Args)]
struct RandomArgs {
    /// Matrix dimension.
    #[arg(long, default_value_t = 15)]
    dim: usize,
    /// Seed for the matrix draw.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    flow: FlowArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct SingleModeArgs {
    /// Mode energy.
    #[arg(long, default_value_t = 1.0)]
    eps: f64,
    /// Loss rate.
    #[arg(long, default_value_t = 1.0)]
    g1: f64,
    /// Gain rate.
    #[arg(long, default_value_t = 0.0)]
    g2: f64,
    /// Initial occupation for the time series.
    #[arg(long, default_value_t = 0.3)]
    n0: f64,
    /// Last time of the occupation series.
    #[arg(long, default_value_t = 3.0)]
    tmax: f64,
    /// Number of points in the occupation series.
    #[arg(long, default_value_t = 20)]
    tpoints: usize,
    /// Number of flow-parameter samples over [0, lmax].
    #[arg(long, default_value_t = 40)]
    samples: usize,
    #[command(flatten)]
    flow: FlowArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct ScatteringArgs {
    /// Excitation velocity.
    #[arg(long = "v", default_value_t = 1.0)]
    velocity: f64,
    /// Loss strength.
    #[arg(long, default_value_t = 5.0)]
    gamma: f64,
    /// Momentum cutoff: the model keeps 2*j_cutoff + 1 levels.
    #[arg(long, default_value_t = 15)]
    j_cutoff: usize,
    /// Box size fixing the level spacing.
    #[arg(long = "box", default_value_t = 31.0)]
    box_size: f64,
    #[command(flatten)]
    flow: FlowArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DisorderedMode {
    Exact,
    Flow,
}

#[derive(Args)]
struct DisorderedArgs {
    /// Chain lengths, comma separated (one length in flow mode).
    #[arg(long = "sites", value_delimiter = ',', required = true)]
    sizes: Vec<usize>,
    /// Hopping amplitude.
    #[arg(long = "J", default_value_t = 1.0)]
    hopping: f64,
    /// Disorder half-width.
    #[arg(long = "W", default_value_t = 1.0)]
    disorder: f64,
    /// Loss rate on the central site.
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    /// Number of disorder realizations.
    #[arg(long, default_value_t = 100)]
    realizations: usize,
    /// Base seed; realization k draws from stream k.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// exact: reference eigensolver scan; flow: disorder-averaged flows.
    #[arg(long, value_enum, default_value_t = DisorderedMode::Exact)]
    mode: DisorderedMode,
    #[command(flatten)]
    flow: FlowArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct SwCompareArgs {
    /// Problem dimension.
    #[arg(long, default_value_t = 6)]
    dim: usize,
    /// Seed for the unperturbed diagonal and the perturbation.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Perturbation strengths, comma separated.
    #[arg(long = "xi", value_delimiter = ',', default_values_t = vec![1e-3, 3e-3, 1e-2])]
    xis: Vec<f64>,
    /// Eigenvalue-clustering threshold of the block partition.
    #[arg(long, default_value_t = 1e-2)]
    gap_threshold: f64,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct FlowFileArgs {
    /// Matrix file: first line the dimension, then dim^2 lines "re im" in
    /// row-major order.
    matrix: PathBuf,
    #[command(flatten)]
    flow: FlowArgs,
    #[command(flatten)]
    out: OutArgs,
}

enum CliError {
    /// Bad flags, parameters, or input files.
    Input(String),
    /// The computation itself failed.
    Numerical(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Input(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Input(m) | CliError::Numerical(m) => m,
        }
    }
}

fn input(e: impl std::fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

fn numerical(e: impl std::fmt::Display) -> CliError {
    CliError::Numerical(e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Random(args) => cmd_random(args),
        Command::SingleMode(args) => cmd_single_mode(args),
        Command::Scattering(args) => cmd_scattering(args),
        Command::Disordered(args) => cmd_disordered(args),
        Command::SwCompare(args) => cmd_sw_compare(args),
        Command::FlowFile(args) => cmd_flow_file(args),
    }
}

/// Resolved run description echoed next to the outputs.
#[derive(Serialize)]
struct Manifest {
    command: &'static str,
    version: &'static str,
    output_dir: String,
    seed: Option<u64>,
    parameters: BTreeMap<String, Value>,
}

/// Compute-first plumbing: files accumulate in memory and hit disk only
/// after every computation has succeeded.
struct Outputs {
    dir: PathBuf,
    manifest: Manifest,
    files: Vec<(&'static str, String)>,
}

impl Outputs {
    fn new(
        command: &'static str,
        out: &OutArgs,
        seed: Option<u64>,
        parameters: BTreeMap<String, Value>,
    ) -> Result<Outputs, CliError> {
        let dir = out.resolve();
        std::fs::create_dir_all(&dir)
            .map_err(|e| input(format!("cannot create output directory {}: {e}", dir.display())))?;
        Ok(Outputs {
            manifest: Manifest {
                command,
                version: env!("CARGO_PKG_VERSION"),
                output_dir: dir.display().to_string(),
                seed,
                parameters,
            },
            dir,
            files: Vec::new(),
        })
    }

    fn add(&mut self, name: &'static str, contents: String) {
        self.files.push((name, contents));
    }

    fn add_json(&mut self, name: &'static str, value: &impl Serialize) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value)
            .map_err(|e| numerical(format!("cannot serialize {name}: {e}")))?;
        text.push('\n');
        self.files.push((name, text));
        Ok(())
    }

    fn write(mut self) -> Result<(), CliError> {
        let mut manifest = serde_json::to_string_pretty(&self.manifest)
            .map_err(|e| numerical(format!("cannot serialize manifest: {e}")))?;
        manifest.push('\n');
        self.files.insert(0, ("manifest.json", manifest));
        for (name, contents) in &self.files {
            let path = self.dir.join(name);
            std::fs::write(&path, contents)
                .map_err(|e| input(format!("cannot write {}: {e}", path.display())))?;
            println!("wrote {}", path.display());
        }
        Ok(())
    }
}

fn trace_csv(out: &FlowOutcome) -> String {
    let mut buf = Vec::new();
    out.trace.write_csv(&mut buf).expect("in-memory write");
    String::from_utf8(buf).expect("ascii csv")
}

/// Final diagonal matched onto reference-spectrum slots, one row per slot.
fn eigenvalue_csv(flow: &[C64], exact: &[C64]) -> String {
    let n = exact.len();
    let cost: Vec<f64> = exact
        .iter()
        .flat_map(|&e| flow.iter().map(move |&f| (e - f).norm_sqr()))
        .collect();
    let perm = optimal_assignment(&cost, n);
    let mut csv = String::from("slot,flow_re,flow_im,exact_re,exact_im\n");
    for slot in 0..n {
        let f = flow[perm[slot]];
        let e = exact[slot];
        let _ = writeln!(csv, "{slot},{:.16e},{:.16e},{:.16e},{:.16e}", f.re, f.im, e.re, e.im);
    }
    csv
}

fn spectrum_csv(spectrum: &[C64]) -> String {
    let mut csv = String::from("re,im\n");
    for z in spectrum {
        let _ = writeln!(csv, "{:.16e},{:.16e}", z.re, z.im);
    }
    csv
}

#[derive(Serialize)]
struct FlowSummary {
    spectral_discrepancy: f64,
    max_relative_invariant_drift: f64,
    offdiag_ratio: f64,
    final_ell: f64,
    steps_taken: usize,
    steps_rejected: usize,
    pinned_entries: usize,
    stop: String,
    anomalies: Vec<String>,
    preconditioner: Option<String>,
}

fn flow_summary(out: &FlowOutcome, exact: &[C64]) -> Result<FlowSummary, CliError> {
    let delta = spectral_discrepancy(&out.final_diag(), exact).map_err(numerical)?;
    let count = out.initial_matrix.dim();
    let inv0 = trace_power_invariants(&out.initial_matrix, count);
    let drift = invariant_drifts(&out.initial_matrix, &out.final_matrix, count)
        .iter()
        .zip(&inv0)
        .map(|(d, i)| d / i.norm().max(1.0))
        .fold(0.0f64, f64::max);
    Ok(FlowSummary {
        spectral_discrepancy: delta,
        max_relative_invariant_drift: drift,
        offdiag_ratio: out.offdiag_ratio(),
        final_ell: out.final_ell,
        steps_taken: out.steps_taken,
        steps_rejected: out.steps_rejected,
        pinned_entries: out.pinned_entries,
        stop: format!("{:?}", out.stop),
        anomalies: out.anomalies.iter().map(|a| format!("{a:?}")).collect(),
        preconditioner: out.preconditioner.as_ref().map(|p| format!("{p:?}")),
    })
}

fn execute_flow(m: CMatrix, config: FlowConfig) -> Result<FlowOutcome, CliError> {
    FlowRun::new(m, config).map_err(input)?.execute().map_err(numerical)
}

fn cmd_random(args: RandomArgs) -> Result<(), CliError> {
    if args.dim == 0 {
        return Err(CliError::Input("dimension must be at least 1".into()));
    }
    let mut params = BTreeMap::new();
    params.insert("dim".into(), json!(args.dim));
    args.flow.manifest(&mut params);
    let mut outputs = Outputs::new("random", &args.out, Some(args.seed), params)?;

    let mut rng = seeded_rng(args.seed, 0);
    let m = random_complex_matrix(args.dim, &mut rng);
    let exact = reference_spectrum(&m).map_err(numerical)?;
    let out = execute_flow(m, args.flow.config(args.dim))?;

    outputs.add("trace.csv", trace_csv(&out));
    outputs.add("eigenvalues.csv", eigenvalue_csv(&out.final_diag(), &exact));
    outputs.add_json("summary.json", &flow_summary(&out, &exact)?)?;
    outputs.write()
}

#[derive(Serialize)]
struct SingleModeSummary {
    steady_density: f64,
    steady_density_analytic: f64,
    lambda_up: (f64, f64),
    lambda_down: (f64, f64),
    analytic_curve: bool,
}

fn cmd_single_mode(args: SingleModeArgs) -> Result<(), CliError> {
    if !(args.g1 >= 0.0 && args.g2 >= 0.0) {
        return Err(CliError::Input(format!(
            "rates must be non-negative, got g1 = {}, g2 = {}",
            args.g1, args.g2
        )));
    }
    if args.g1 + args.g2 == 0.0 {
        return Err(CliError::Input("no relaxation without dissipation (g1 + g2 = 0)".into()));
    }
    if args.tpoints < 2 {
        return Err(CliError::Input("tpoints must be at least 2".into()));
    }
    if args.samples < 1 {
        return Err(CliError::Input("samples must be at least 1".into()));
    }
    let mut params = BTreeMap::new();
    params.insert("eps".into(), json!(args.eps));
    params.insert("g1".into(), json!(args.g1));
    params.insert("g2".into(), json!(args.g2));
    params.insert("n0".into(), json!(args.n0));
    params.insert("tmax".into(), json!(args.tmax));
    params.insert("tpoints".into(), json!(args.tpoints));
    params.insert("samples".into(), json!(args.samples));
    args.flow.manifest(&mut params);
    let mut outputs = Outputs::new("single-mode", &args.out, None, params)?;

    let generator = args.flow.generator.kind();
    // A closed form is catalogued for white-like flows away from the
    // equal-rate freezing point and for loss-only flows otherwise.
    let analytic = match generator {
        GeneratorKind::WhiteLike { .. } => args.g1 != args.g2,
        _ => args.g2 == 0.0,
    };

    let header = if analytic {
        "ell,alpha,mu1,mu2,analytic_alpha,analytic_mu1,analytic_mu2\n"
    } else {
        "ell,alpha,mu1,mu2\n"
    };
    let mut curve = String::from(header);
    let mut final_diag = None;
    for k in 0..=args.samples {
        let ell = args.flow.lmax * k as f64 / args.samples as f64;
        let p = if k == 0 {
            SingleModeParams::from_matrix(&single_mode_matrix(args.eps, args.g1, args.g2))
        } else {
            let mut config = args.flow.config(2);
            config.max_flow = ell;
            config.stop_offdiag_ratio = 0.0;
            config.trace_stride = usize::MAX;
            let out = execute_flow(single_mode_matrix(args.eps, args.g1, args.g2), config)?;
            if k == args.samples {
                final_diag = Some(out.final_diag());
            }
            SingleModeParams::from_matrix(&out.final_matrix)
        };
        if analytic {
            let a = single_mode_analytic_flow(generator, args.g1, args.g2, ell)
                .map_err(numerical)?;
            let _ = writeln!(
                curve,
                "{ell:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                p.alpha, p.mu1, p.mu2, a.alpha, a.mu1, a.mu2
            );
        } else {
            let _ = writeln!(curve, "{ell:.16e},{:.16e},{:.16e},{:.16e}", p.alpha, p.mu1, p.mu2);
        }
    }

    let n_ss = single_mode_steady_density(args.eps, args.g1, args.g2).map_err(numerical)?;
    let ts: Vec<f64> =
        (0..args.tpoints).map(|i| args.tmax * i as f64 / (args.tpoints - 1) as f64).collect();
    let ns = single_mode_density_evolution(args.eps, args.g1, args.g2, args.n0, &ts)
        .map_err(numerical)?;
    let mut density = String::from("t,n\n");
    for (t, n) in ts.iter().zip(&ns) {
        let _ = writeln!(density, "{t:.16e},{n:.16e}");
    }

    let mut diag = final_diag.expect("samples >= 1 flows at least once");
    diag.sort_by(|a, b| b.im.partial_cmp(&a.im).expect("finite eigenvalues"));
    outputs.add("flow_params.csv", curve);
    outputs.add("density.csv", density);
    outputs.add_json(
        "summary.json",
        &SingleModeSummary {
            steady_density: n_ss,
            steady_density_analytic: args.g2 / (args.g1 + args.g2),
            lambda_up: (diag[0].re, diag[0].im),
            lambda_down: (diag[1].re, diag[1].im),
            analytic_curve: analytic,
        },
    )?;
    outputs.write()
}

#[derive(Serialize)]
struct ScatteringSummary {
    flow: FlowSummary,
    dense_central: (f64, f64),
    /// Strong-coupling estimate when gamma > 4v, weak-coupling when
    /// gamma < 4v, absent at the threshold.
    closed_form: Option<f64>,
    secular_root: Option<f64>,
}

fn cmd_scattering(args: ScatteringArgs) -> Result<(), CliError> {
    let spec = ScatteringSpec {
        velocity: args.velocity,
        gamma: args.gamma,
        box_size: args.box_size,
        j_cutoff: args.j_cutoff,
    };
    let m = build_scattering_matrix(&spec).map_err(input)?;
    let mut params = BTreeMap::new();
    params.insert("v".into(), json!(args.velocity));
    params.insert("gamma".into(), json!(args.gamma));
    params.insert("j_cutoff".into(), json!(args.j_cutoff));
    params.insert("box".into(), json!(args.box_size));
    args.flow.manifest(&mut params);
    let mut outputs = Outputs::new("scattering", &args.out, None, params)?;

    let exact = reference_spectrum(&m).map_err(numerical)?;
    let dim = m.dim();
    let out = execute_flow(m, args.flow.config(dim))?;
    let central = central_eigenvalue(&exact).map_err(numerical)?;
    let ratio = args.gamma / args.velocity;
    let closed_form = if ratio > 4.0 {
        Some(strongly_dissipative_eigenvalue(&spec).map_err(numerical)?)
    } else if ratio < 4.0 && args.gamma > 0.0 {
        Some(weak_coupling_eigenvalue(&spec).map_err(numerical)?)
    } else {
        None
    };
    let secular_root =
        if args.gamma > 0.0 { Some(solve_secular(&spec).map_err(numerical)?) } else { None };

    outputs.add("spectrum.csv", spectrum_csv(&exact));
    outputs.add("trace.csv", trace_csv(&out));
    outputs.add("eigenvalues.csv", eigenvalue_csv(&out.final_diag(), &exact));
    outputs.add_json(
        "summary.json",
        &ScatteringSummary {
            flow: flow_summary(&out, &exact)?,
            dense_central: (central.re, central.im),
            closed_form,
            secular_root,
        },
    )?;
    outputs.write()
}

#[derive(Serialize)]
struct SingleSpectrumSummary {
    sites: usize,
    asymptotic_decay_rate: f64,
    strongly_dissipative: bool,
}

#[derive(Serialize)]
struct DisorderedFlowSummary {
    sites: usize,
    realizations: usize,
    worst_slot_diff: f64,
    worst_offdiag_ratio: f64,
}

fn cmd_disordered(args: DisorderedArgs) -> Result<(), CliError> {
    let mut params = BTreeMap::new();
    params.insert("sites".into(), json!(args.sizes));
    params.insert("J".into(), json!(args.hopping));
    params.insert("W".into(), json!(args.disorder));
    params.insert("gamma".into(), json!(args.gamma));
    params.insert("realizations".into(), json!(args.realizations));
    params.insert(
        "mode".into(),
        json!(match args.mode {
            DisorderedMode::Exact => "exact",
            DisorderedMode::Flow => "flow",
        }),
    );
    if args.mode == DisorderedMode::Flow {
        args.flow.manifest(&mut params);
    }

    match args.mode {
        DisorderedMode::Exact => {
            let mut outputs = Outputs::new("disordered", &args.out, Some(args.seed), params)?;
            if args.sizes.len() == 1 && args.realizations == 1 {
                let spec = DisorderSpec {
                    sites: args.sizes[0],
                    hopping: args.hopping,
                    disorder: args.disorder,
                    gamma: args.gamma,
                    seed: args.seed,
                };
                let m = build_disordered_matrix(&spec, 0).map_err(input)?;
                let spectrum = reference_spectrum(&m).map_err(numerical)?;
                let rate = asymptotic_decay_rate(&spectrum).map_err(numerical)?;
                outputs.add("spectrum.csv", spectrum_csv(&spectrum));
                outputs.add_json(
                    "summary.json",
                    &SingleSpectrumSummary {
                        sites: spec.sites,
                        asymptotic_decay_rate: rate,
                        strongly_dissipative: has_strongly_dissipative(&spectrum, 5.0),
                    },
                )?;
                return outputs.write();
            }
            if args.sizes.len() < 2 {
                return Err(CliError::Input(
                    "an exact scan needs at least two lengths (or exactly one length with \
                     --realizations 1 for a single spectrum)"
                        .into(),
                ));
            }
            let scan = ScanSpec {
                hopping: args.hopping,
                disorder: args.disorder,
                gamma: args.gamma,
                seed: args.seed,
                sizes: args.sizes.clone(),
                realizations: args.realizations,
            };
            let report = disorder_scan(&scan).map_err(|e| match e {
                dissflow::models::ModelError::BadParams { .. } => input(e),
                other => numerical(other),
            })?;
            outputs.add("scan.csv", scan_csv(&report));
            outputs.add_json("summary.json", &report)?;
            outputs.write()
        }
        DisorderedMode::Flow => {
            if args.sizes.len() != 1 {
                return Err(CliError::Input(
                    "flow mode averages one chain length at a time; pass a single --sites value"
                        .into(),
                ));
            }
            if args.flow.adaptive {
                return Err(CliError::Input(
                    "flow mode integrates on a fixed step grid so realizations can be \
                     averaged; drop --adaptive"
                        .into(),
                ));
            }
            if args.realizations == 0 {
                return Err(CliError::Input("need at least one realization".into()));
            }
            let mut outputs = Outputs::new("disordered", &args.out, Some(args.seed), params)?;
            let spec = DisorderSpec {
                sites: args.sizes[0],
                hopping: args.hopping,
                disorder: args.disorder,
                gamma: args.gamma,
                seed: args.seed,
            };
            let n = spec.sites;
            let mut mean_flow = vec![C64::new(0.0, 0.0); n];
            let mut mean_exact = vec![C64::new(0.0, 0.0); n];
            let mut grid: Vec<f64> = Vec::new();
            let mut mean_offnorm: Vec<f64> = Vec::new();
            let mut worst_ratio = 0.0f64;
            let weight = 1.0 / args.realizations as f64;
            for r in 0..args.realizations as u64 {
                let m = build_disordered_matrix(&spec, r).map_err(input)?;
                let exact = reference_spectrum(&m).map_err(numerical)?;
                let out = execute_flow(m, args.flow.config(2))?;
                worst_ratio = worst_ratio.max(out.offdiag_ratio());
                if r == 0 {
                    grid = out.trace.rows.iter().map(|row| row.ell).collect();
                    mean_offnorm = vec![0.0; grid.len()];
                }
                if out.trace.rows.len() != grid.len() {
                    return Err(CliError::Numerical(format!(
                        "realization {r} sampled {} trace rows where realization 0 sampled {}",
                        out.trace.rows.len(),
                        grid.len()
                    )));
                }
                for (acc, row) in mean_offnorm.iter_mut().zip(&out.trace.rows) {
                    *acc += weight * row.offnorm_sq;
                }
                let flow = out.final_diag();
                let cost: Vec<f64> = exact
                    .iter()
                    .flat_map(|&e| flow.iter().map(move |&f| (e - f).norm_sqr()))
                    .collect();
                let perm = optimal_assignment(&cost, n);
                for slot in 0..n {
                    mean_exact[slot] += weight * exact[slot];
                    mean_flow[slot] += weight * flow[perm[slot]];
                }
            }
            let mut diag_csv = String::from("slot,flow_re,flow_im,exact_re,exact_im\n");
            let mut worst_slot = 0.0f64;
            for slot in 0..n {
                let f = mean_flow[slot];
                let e = mean_exact[slot];
                worst_slot = worst_slot.max((f.im - e.im).abs());
                let _ = writeln!(
                    diag_csv,
                    "{slot},{:.16e},{:.16e},{:.16e},{:.16e}",
                    f.re, f.im, e.re, e.im
                );
            }
            let mut decay_csv = String::from("ell,mean_offnorm_sq\n");
            for (l, v) in grid.iter().zip(&mean_offnorm) {
                let _ = writeln!(decay_csv, "{l:.16e},{v:.16e}");
            }
            outputs.add("averaged_diag.csv", diag_csv);
            outputs.add("decay.csv", decay_csv);
            outputs.add_json(
                "summary.json",
                &DisorderedFlowSummary {
                    sites: n,
                    realizations: args.realizations,
                    worst_slot_diff: worst_slot,
                    worst_offdiag_ratio: worst_ratio,
                },
            )?;
            outputs.write()
        }
    }
}

fn cmd_sw_compare(args: SwCompareArgs) -> Result<(), CliError> {
    if args.dim < 2 {
        return Err(CliError::Input("dimension must be at least 2".into()));
    }
    let mut params = BTreeMap::new();
    params.insert("dim".into(), json!(args.dim));
    params.insert("xi".into(), json!(args.xis));
    params.insert("gap_threshold".into(), json!(args.gap_threshold));
    let mut outputs = Outputs::new("sw-compare", &args.out, Some(args.seed), params)?;

    let mut rng = seeded_rng(args.seed, 0);
    let diag_src = random_complex_matrix(args.dim, &mut rng);
    let l0 = CMatrix::from_diag(
        &(0..args.dim).map(|i| 3.0 * diag_src[(i, i)]).collect::<Vec<C64>>(),
    );
    let l1 = random_complex_matrix(args.dim, &mut rng);
    let cmp = compare_flow_vs_sw(&l0, &l1, &args.xis, args.gap_threshold).map_err(|e| match e {
        SwError::BadInput { .. } => input(e),
        other => numerical(other),
    })?;

    let mut points = String::from("xi,sw_vs_exact,flow_vs_exact,flow_vs_sw\n");
    for p in &cmp.points {
        let _ = writeln!(
            points,
            "{:.16e},{:.16e},{:.16e},{:.16e}",
            p.xi, p.sw_vs_exact, p.flow_vs_exact, p.flow_vs_sw
        );
    }
    outputs.add("points.csv", points);
    outputs.add_json("summary.json", &cmp)?;
    outputs.write()
}

fn cmd_flow_file(args: FlowFileArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&args.matrix)
        .map_err(|e| input(format!("cannot read {}: {e}", args.matrix.display())))?;
    let m = parse_matrix(&args.matrix, &text)?;
    let mut params = BTreeMap::new();
    params.insert("matrix".into(), json!(args.matrix.display().to_string()));
    params.insert("dim".into(), json!(m.dim()));
    args.flow.manifest(&mut params);
    let mut outputs = Outputs::new("flow-file", &args.out, None, params)?;

    let exact = reference_spectrum(&m).map_err(numerical)?;
    let dim = m.dim();
    let out = execute_flow(m, args.flow.config(dim))?;
    outputs.add("trace.csv", trace_csv(&out));
    outputs.add("eigenvalues.csv", eigenvalue_csv(&out.final_diag(), &exact));
    outputs.add_json("summary.json", &flow_summary(&out, &exact)?)?;
    outputs.write()
}

/// Tokens of a line together with their 1-based column positions.
fn tokens_with_cols(line: &str) -> Vec<(usize, &str)> {
    let mut tokens = Vec::new();
    let mut start = None;
    for (i, ch) in line.char_indices() {
        if ch.is_whitespace() {
            if let Some(s) = start.take() {
                tokens.push((s + 1, &line[s..i]));
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        tokens.push((s + 1, &line[s..]));
    }
    tokens
}

/// Parse the documented matrix format: first line the dimension, then dim^2
/// lines "re im" in row-major order. Errors carry line and column numbers.
fn parse_matrix(path: &Path, text: &str) -> Result<CMatrix, CliError> {
    let at = |line: usize, col: usize, msg: String| {
        CliError::Input(format!("{}:{line}:{col}: {msg}", path.display()))
    };
    let mut lines = text.lines().enumerate();
    let (_, first) = lines
        .next()
        .ok_or_else(|| at(1, 1, "empty file; expected the matrix dimension".into()))?;
    let dim_tokens = tokens_with_cols(first);
    let (col, tok) = *dim_tokens
        .first()
        .ok_or_else(|| at(1, 1, "expected the matrix dimension".into()))?;
    if dim_tokens.len() > 1 {
        return Err(at(1, dim_tokens[1].0, "expected a single dimension token".into()));
    }
    let dim: usize = tok
        .parse()
        .map_err(|_| at(1, col, format!("cannot parse dimension from \"{tok}\"")))?;
    if dim == 0 {
        return Err(at(1, col, "dimension must be at least 1".into()));
    }

    let mut entries = Vec::with_capacity(dim * dim);
    for (idx, line) in lines {
        let lineno = idx + 1;
        let tokens = tokens_with_cols(line);
        if tokens.is_empty() {
            continue;
        }
        if entries.len() == dim * dim {
            return Err(at(
                lineno,
                tokens[0].0,
                format!("unexpected data after {} entries", dim * dim),
            ));
        }
        if tokens.len() != 2 {
            let col = tokens.get(2).map(|t| t.0).unwrap_or(tokens[0].0);
            return Err(at(
                lineno,
                col,
                format!("expected \"re im\", found {} token(s)", tokens.len()),
            ));
        }
        let mut parts = [0.0f64; 2];
        for (slot, (col, tok)) in tokens.iter().enumerate() {
            parts[slot] = tok
                .parse()
                .map_err(|_| at(lineno, *col, format!("cannot parse number from \"{tok}\"")))?;
        }
        entries.push(C64::new(parts[0], parts[1]));
    }
    if entries.len() != dim * dim {
        return Err(CliError::Input(format!(
            "{}: expected {} entries for dimension {dim}, found {}",
            path.display(),
            dim * dim,
            entries.len()
        )));
    }
    CMatrix::from_vec(dim, entries).map_err(input)
}

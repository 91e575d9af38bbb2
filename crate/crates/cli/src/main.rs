//! `basket`: calibrate cutoffs and simulate operating characteristics for
//! basket trials that add baskets part-way through.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use basket_core::config::{Run, RunConfig, StudyKind};
use basket_core::output::{self, CalibrationRecord, Provenance};
use basket_core::simulator::{self, SweepPoint};
use basket_core::{calibrate_many, CalibrationSpec, CutoffSet, Error, Scenario, StreamSeed};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "basket", version, about = "Basket-trial calibration and simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Calibrate cutoffs; writes cutoffs.csv and cutoffs.provenance.json.
    Calibrate(Common),
    /// Fixed-scenario study; writes oc.csv and figure2.csv.
    Simulate(WithCutoffs),
    /// Timing-of-addition sweep; writes sweep_oc.csv, figure4.csv, figure5.csv.
    Sweep(Common),
    /// Random new-basket truth with discrepancy analysis; writes oc.csv and figure3.csv.
    RandomTruth(WithCutoffs),
    /// Two existing plus two new baskets; calibrates then simulates.
    TwoPlusTwo(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides output_dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed (overrides master_seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads, 0 for all cores (overrides threads).
    #[arg(long)]
    threads: Option<usize>,
    /// Replicates per scenario for calibration and study (overrides both).
    #[arg(long)]
    replicates: Option<usize>,
    /// Also dump the raw draws of every fit for the first replicate of the
    /// first study scenario.
    #[arg(long)]
    debug_chains: bool,
}

#[derive(Args)]
struct WithCutoffs {
    #[command(flatten)]
    common: Common,
    /// Cutoffs CSV; calibrated from [calibration] when omitted.
    #[arg(long)]
    cutoffs: Option<PathBuf>,
}

#[derive(Debug)]
enum Failure {
    Invalid(String),
    Infeasible(String),
    Other(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Parse(_) | Error::Domain(_) => Failure::Invalid(e.to_string()),
            Error::CalibrationInfeasible { .. } => Failure::Infeasible(e.to_string()),
            other => Failure::Other(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Other(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Calibrate(c) => cmd_calibrate(c),
        Command::Simulate(c) => cmd_simulate(c),
        Command::Sweep(c) => cmd_sweep(c),
        Command::RandomTruth(c) => cmd_random_truth(c),
        Command::TwoPlusTwo(c) => cmd_two_plus_two(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Infeasible(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
        Err(Failure::Other(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}

/// Load the config, apply command-line overrides and set up the worker pool.
fn setup(c: &Common) -> Result<Run, Failure> {
    let src = fs::read_to_string(&c.config)
        .map_err(|e| Failure::Invalid(format!("cannot read {}: {e}", c.config.display())))?;
    let mut run = RunConfig::parse(&src)?.resolve(&src)?;
    if let Some(out) = &c.out {
        run.output_dir = out.clone();
    }
    if let Some(seed) = c.seed {
        run.master_seed = seed;
    }
    if let Some(t) = c.threads {
        run.threads = t;
    }
    if let Some(r) = c.replicates {
        if r == 0 {
            return Err(Failure::Invalid("--replicates must be at least 1".into()));
        }
        if let Some(cal) = run.calibration.as_mut() {
            cal.replicates = r;
        }
        if let Some(st) = run.study.as_mut() {
            st.replicates = r;
        }
    }
    fs::create_dir_all(&run.output_dir).map_err(|e| {
        Failure::Invalid(format!("output directory {} is not writable: {e}", run.output_dir.display()))
    })?;
    // a second call in the same process keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new().num_threads(run.threads).build_global();
    log::info!("master seed {}, {} worker threads", run.master_seed, rayon::current_num_threads());
    Ok(run)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, Failure> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_provenance(run: &Run, command: &str, name: &str, records: Vec<CalibrationRecord>) -> CmdResult {
    let mut p = Provenance::new(command, run.master_seed, run.effective_toml()?);
    p.calibrations = records;
    fs::write(run.output_dir.join(name), p.to_json()?)?;
    Ok(())
}

fn seed(run: &Run) -> StreamSeed {
    StreamSeed::new(run.master_seed)
}

fn calibration_spec(run: &Run) -> Result<&CalibrationSpec, Failure> {
    run.calibration
        .as_ref()
        .ok_or_else(|| Failure::Invalid("config has no [calibration] table".into()))
}

fn study(run: &Run, kind: StudyKind) -> Result<&basket_core::config::Study, Failure> {
    match &run.study {
        Some(s) if s.kind == kind => Ok(s),
        Some(s) => Err(Failure::Invalid(format!("[study] kind is {:?}, this command needs {kind:?}", s.kind))),
        None => Err(Failure::Invalid("config has no [study] table".into())),
    }
}

fn records(cutoffs: &[CutoffSet], n_new: Option<u32>) -> Vec<CalibrationRecord> {
    cutoffs.iter().map(|c| CalibrationRecord { n_new, cutoffs: c.clone() }).collect()
}

fn calibrate(run: &Run) -> Result<Vec<CutoffSet>, Failure> {
    let spec = calibration_spec(run)?;
    Ok(calibrate_many(spec, &run.design, &run.approaches, seed(run).child(basket_core::stream::keys::CALIBRATION))?)
}

fn cmd_calibrate(c: &Common) -> CmdResult {
    let run = setup(c)?;
    let cutoffs = calibrate(&run)?;
    output::write_cutoffs(create(&run.output_dir, "cutoffs.csv")?, &cutoffs)?;
    write_provenance(&run, "calibrate", "cutoffs.provenance.json", records(&cutoffs, None))?;
    for set in &cutoffs {
        let d: Vec<String> = set.delta.iter().map(|d| format!("{d:.4}")).collect();
        println!("{:<6} {:<12} {}", set.approach.to_string(), set.method.to_string(), d.join(" "));
    }
    Ok(())
}

/// Cutoffs from `--cutoffs`, or calibrated in-process.
fn obtain_cutoffs(run: &Run, path: Option<&Path>) -> Result<(Vec<CutoffSet>, bool), Failure> {
    match path {
        Some(p) => {
            let f = File::open(p).map_err(|e| Failure::Invalid(format!("cannot read {}: {e}", p.display())))?;
            let sets = output::read_cutoffs(f)?;
            Ok((output::select_cutoffs(&sets, &run.approaches, &run.design)?, false))
        }
        None => Ok((calibrate(run)?, true)),
    }
}

fn truths(scenarios: &[Scenario]) -> BTreeMap<String, Vec<f64>> {
    scenarios.iter().map(|s| (s.label.clone(), s.p.clone())).collect()
}

fn debug_chains(run: &Run, enabled: bool) -> CmdResult {
    if !enabled {
        return Ok(());
    }
    let Some(scenario) = run.study.as_ref().and_then(|s| s.scenarios.first()) else {
        return Ok(());
    };
    let fits = simulator::debug_replicate(&run.design, &run.approaches, scenario, seed(run))?;
    output::write_chains(fs::File::create(run.output_dir.join("debug_chains.csv"))?, &fits)?;
    Ok(())
}

fn cmd_simulate(c: &WithCutoffs) -> CmdResult {
    let run = setup(&c.common)?;
    let st = study(&run, StudyKind::Fixed)?;
    let (cutoffs, calibrated) = obtain_cutoffs(&run, c.cutoffs.as_deref())?;
    let sim_seed = seed(&run).child(basket_core::stream::keys::SIMULATION);
    let ocs = basket_core::run_fixed_study(&run.design, &cutoffs, &st.scenarios, st.replicates, sim_seed)?;
    output::write_oc(create(&run.output_dir, "oc.csv")?, "fixed", &ocs, run.master_seed)?;
    output::write_figure2(create(&run.output_dir, "figure2.csv")?, &run.design, &truths(&st.scenarios), &ocs)?;
    if calibrated {
        output::write_cutoffs(create(&run.output_dir, "cutoffs.csv")?, &cutoffs)?;
    }
    write_provenance(&run, "simulate", "provenance.json", records(&cutoffs, None))?;
    debug_chains(&run, c.common.debug_chains)?;
    print!("{}", output::summary_table(&ocs));
    Ok(())
}

fn cmd_random_truth(c: &WithCutoffs) -> CmdResult {
    let run = setup(&c.common)?;
    let st = study(&run, StudyKind::RandomTruth)?;
    let (cutoffs, _) = obtain_cutoffs(&run, c.cutoffs.as_deref())?;
    let existing = st.existing.as_deref().unwrap_or_default();
    let interval = st.interval.unwrap_or_default();
    let sim_seed = seed(&run).child(basket_core::stream::keys::SIMULATION);
    let res = basket_core::run_random_truth_study(&run.design, existing, interval, &cutoffs, st.replicates, sim_seed)?;
    output::write_oc(create(&run.output_dir, "oc.csv")?, "random_truth", &res.oc, run.master_seed)?;
    output::write_figure3(create(&run.output_dir, "figure3.csv")?, &res.discrepancies)?;
    write_provenance(&run, "random-truth", "provenance.json", records(&cutoffs, None))?;
    print!("{}", output::summary_table(&res.oc));
    Ok(())
}

fn cmd_sweep(c: &Common) -> CmdResult {
    let run = setup(c)?;
    let st = study(&run, StudyKind::TimingSweep)?;
    let spec = calibration_spec(&run)?;
    let max_n = run.design.existing().map(|b| run.design.n[b]).max().unwrap_or(0);
    let n_new: Vec<u32> = st.n_new.clone().unwrap_or_else(|| (1..=max_n).collect());
    let points: Vec<SweepPoint> = basket_core::run_timing_sweep(
        &run.design,
        &run.approaches,
        &n_new,
        spec,
        &st.scenarios,
        st.replicates,
        seed(&run),
    )?;
    let t = truths(&st.scenarios);
    output::write_sweep_oc(create(&run.output_dir, "sweep_oc.csv")?, &points, run.master_seed)?;
    output::write_sweep_cutoffs(create(&run.output_dir, "sweep_cutoffs.csv")?, &points)?;
    output::write_sweep_figure(create(&run.output_dir, "figure4.csv")?, &run.design, &t, &points, true)?;
    output::write_sweep_figure(create(&run.output_dir, "figure5.csv")?, &run.design, &t, &points, false)?;
    let recs = points.iter().flat_map(|p| records(&p.cutoffs, Some(p.n_new))).collect();
    write_provenance(&run, "sweep", "sweep.provenance.json", recs)?;
    for p in &points {
        println!("n_new = {}", p.n_new);
        print!("{}", output::summary_table(&p.oc));
    }
    Ok(())
}

fn cmd_two_plus_two(c: &Common) -> CmdResult {
    let run = setup(c)?;
    let st = study(&run, StudyKind::TwoPlusTwo)?;
    let spec = calibration_spec(&run)?;
    let res = basket_core::run_two_plus_two_study(
        &run.design,
        &run.approaches,
        spec,
        &st.scenarios,
        st.replicates,
        seed(&run),
    )?;
    output::write_cutoffs(create(&run.output_dir, "cutoffs.csv")?, &res.cutoffs)?;
    output::write_oc(create(&run.output_dir, "oc.csv")?, "two_plus_two", &res.oc, run.master_seed)?;
    output::write_figure2(create(&run.output_dir, "figure2.csv")?, &run.design, &truths(&st.scenarios), &res.oc)?;
    write_provenance(&run, "two-plus-two", "provenance.json", records(&res.cutoffs, None))?;
    print!("{}", output::summary_table(&res.oc));
    Ok(())
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dshape_cli::output::{aggregate, report, sig, Manifest, OutputDir};
use dshape_cli::{
    compare_days, default_scenario, iteration_study, penetration_sweep, rep_seed, sigma_sweep, Case, HarnessError,
    Replicate, Result, Settings,
};
use dshape_core::traffic::read_arrivals_csv;
use dshape_core::{
    offds_run, onds_run, validate_scenario, Da, DeviationModel, OnlineConfig, ResolvePolicy, Scenario,
    VirtualTrafficMode,
};

#[derive(Debug, Parser)]
#[command(name = "dshape", version, about = "Demand shaping of deferrable traffic: scheduling runs and experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a scenario file and report every violation.
    Validate { scenario: PathBuf },
    /// Schedule one day offline with complete information.
    Offline {
        scenario: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Schedule one day slot by slot with predicted base traffic and arrivals.
    Online {
        scenario: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        online: OnlineArgs,
    },
    /// Run benchmark case 0-4 and compare it with the offline case.
    Case {
        #[arg(value_parser = clap::value_parser!(u8).range(0..=4))]
        id: u8,
        #[command(flatten)]
        source: ScenarioArgs,
        /// Recorded arrivals: a CSV used for every repetition, or a directory
        /// holding `arrivals_<rep>.csv` files from an earlier case 1 or 2 run.
        #[arg(long)]
        arrivals: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        reps: usize,
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        online: OnlineArgs,
    },
    /// All cases across base-traffic uncertainty levels.
    SweepSigma {
        #[command(flatten)]
        source: ScenarioArgs,
        /// Values of σ²; defaults to 0, 10, ..., 100.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
        #[arg(long, default_value_t = 10)]
        reps: usize,
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        online: OnlineArgs,
    },
    /// Online against offline across shares of discrete DAs.
    SweepPenetration {
        #[command(flatten)]
        source: ScenarioArgs,
        /// Discrete shares; defaults to 0.25, 0.30, ..., 0.75.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
        #[arg(long, default_value_t = 10)]
        reps: usize,
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        online: OnlineArgs,
    },
    /// Offline objective against the number of iterations.
    SweepIterations {
        #[command(flatten)]
        source: ScenarioArgs,
        /// Iteration counts; defaults to 1, 2, ..., 40.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<usize>>,
        /// Number of simulated days.
        #[arg(long, default_value_t = 10)]
        reps: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct ScenarioArgs {
    /// Scenario JSON; defaults to the bundled 96-slot diurnal day.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// σ² of the bundled day.
    #[arg(long, default_value_t = 40.0, conflicts_with = "scenario")]
    sigma2: f64,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Defaults to the scenario's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Defaults to the scenario's iteration count.
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct OnlineArgs {
    #[arg(long, value_enum, default_value_t = VirtualArg::Nonnegative)]
    virtual_mode: VirtualArg,
    #[arg(long, value_enum, default_value_t = ResolveArg::OnChange)]
    resolve: ResolveArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum VirtualArg {
    Nonnegative,
    Unconstrained,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ResolveArg {
    OnChange,
    EverySlot,
}

impl OnlineArgs {
    fn settings(&self, iterations: usize) -> Settings {
        Settings {
            iterations,
            virtual_mode: match self.virtual_mode {
                VirtualArg::Nonnegative => VirtualTrafficMode::Nonnegative,
                VirtualArg::Unconstrained => VirtualTrafficMode::Unconstrained,
            },
            resolve: match self.resolve {
                ResolveArg::OnChange => ResolvePolicy::OnChange,
                ResolveArg::EverySlot => ResolvePolicy::EverySlot,
            },
        }
    }
}

fn load(path: &Path) -> Result<Scenario> {
    let s = Scenario::load(path)?;
    let violations = validate_scenario(&s);
    if violations.is_empty() {
        Ok(s)
    } else {
        Err(HarnessError::Validation(violations))
    }
}

impl ScenarioArgs {
    fn resolve(&self) -> Result<Scenario> {
        match &self.scenario {
            Some(p) => load(p),
            None => Ok(default_scenario(self.sigma2)),
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Validate { scenario } => {
            let s = load(&scenario)?;
            println!(
                "ok: {} slots, {} continuous and {} discrete DAs{}",
                s.grid.slots,
                s.continuous_das.len(),
                s.discrete_das.len(),
                if s.arrivals.is_some() { ", arrival model" } else { "" }
            );
            Ok(())
        }
        Command::Offline { scenario, run } => offline(&load(&scenario)?, &run),
        Command::Online { scenario, run, online: o } => online(&load(&scenario)?, &run, &o),
        Command::Case {
            id,
            source,
            arrivals,
            reps,
            run,
            online: o,
        } => case(id, &source.resolve()?, arrivals.as_deref(), reps, &run, &o),
        Command::SweepSigma {
            source,
            values,
            reps,
            run,
            online: o,
        } => {
            let s = source.resolve()?;
            let values = values.unwrap_or_else(|| (0..=10).map(|i| 10.0 * i as f64).collect());
            let seed = run.seed.unwrap_or(s.seed);
            let settings = o.settings(run.iterations.unwrap_or(s.algo.iterations));
            let points = sigma_sweep(&s, &values, &Case::ALL, reps.max(1), seed, &settings)?;
            let out = OutputDir::create(&run.out)?;
            let parameter = match s.base.deviation {
                DeviationModel::Cumulative { .. } => "sigma2",
                DeviationModel::CausalFilter { .. } => "delta2",
            };
            out.write_sweep_runs("runs.csv", parameter, &points)?;
            out.write_sweep_summary("summary.csv", parameter, &points, &Case::ALL[1..])?;
            out.write_manifest(&Manifest {
                reps: Some(reps),
                values: Some(&values),
                ..Manifest::new("sweep-sigma", seed, settings, &s)
            })?;
            for p in &points {
                let cols: Vec<String> = Case::ALL[1..]
                    .iter()
                    .map(|&c| format!("case{}={}", c.id(), aggregate(&p.outcomes, c).0.map(sig).unwrap_or("-".into())))
                    .collect();
                println!("{parameter}={} {}", sig(p.value), cols.join(" "));
            }
            Ok(())
        }
        Command::SweepPenetration {
            source,
            values,
            reps,
            run,
            online: o,
        } => {
            let s = source.resolve()?;
            let values = values.unwrap_or_else(|| (0..=10).map(|i| (25 + 5 * i) as f64 / 100.0).collect());
            let seed = run.seed.unwrap_or(s.seed);
            let settings = o.settings(run.iterations.unwrap_or(s.algo.iterations));
            let points = penetration_sweep(&s, &values, reps.max(1), seed, &settings)?;
            let out = OutputDir::create(&run.out)?;
            out.write_sweep_runs("runs.csv", "discrete_share", &points)?;
            out.write_sweep_summary("summary.csv", "discrete_share", &points, &[Case::Online])?;
            out.write_manifest(&Manifest {
                reps: Some(reps),
                values: Some(&values),
                ..Manifest::new("sweep-penetration", seed, settings, &s)
            })?;
            for p in &points {
                let gap = aggregate(&p.outcomes, Case::Online).0;
                println!("share={} gap={}", sig(p.value), gap.map(sig).unwrap_or("-".into()));
            }
            Ok(())
        }
        Command::SweepIterations {
            source,
            values,
            reps,
            seed,
            out,
        } => {
            let s = source.resolve()?;
            let counts = values.unwrap_or_else(|| (1..=40).collect());
            let seed = seed.unwrap_or(s.seed);
            let points = iteration_study(&s, &counts, reps.max(1), seed)?;
            let out = OutputDir::create(&out)?;
            out.write_iterations("iterations.csv", &points)?;
            let as_f64: Vec<f64> = counts.iter().map(|&k| k as f64).collect();
            out.write_manifest(&Manifest {
                reps: Some(reps),
                values: Some(&as_f64),
                ..Manifest::new("sweep-iterations", seed, Settings::new(s.algo.iterations), &s)
            })?;
            for p in &points {
                println!("K={} mean={} std={}", p.iterations, sig(p.mean), sig(p.std));
            }
            Ok(())
        }
    }
}

fn offline(s: &Scenario, run: &RunArgs) -> Result<()> {
    let seed = run.seed.unwrap_or(s.seed);
    let iterations = run.iterations.unwrap_or(s.algo.iterations);
    let day = Replicate::draw(s, seed);
    let with_das = s.clone().with_das(&day.arrivals);
    let trace = offds_run(&with_das, &day.realized, iterations, seed)?;
    let out = OutputDir::create(&run.out)?;
    out.write_trace("trace.csv", &trace.points)?;
    out.write_schedule("schedule.csv", &day.realized, &trace.state.schedules, &trace.state.average)?;
    out.write_arrivals("arrivals.csv", &day.arrivals)?;
    out.write_manifest(&Manifest::new("offline", seed, Settings::new(iterations), s))?;
    println!(
        "V={} bound={} DAs={}",
        sig(trace.objective()),
        sig(trace.state.offline_bound()),
        day.arrivals.len()
    );
    Ok(())
}

fn online(s: &Scenario, run: &RunArgs, o: &OnlineArgs) -> Result<()> {
    let seed = run.seed.unwrap_or(s.seed);
    let settings = o.settings(run.iterations.unwrap_or(s.algo.iterations));
    let day = Replicate::draw(s, seed);
    let config = OnlineConfig {
        virtual_mode: settings.virtual_mode,
        resolve: settings.resolve,
        ..OnlineConfig::new(settings.iterations, seed)
    };
    let result = onds_run(s, &day.realized, &day.base, &day.arrivals, &config)?;
    let out = OutputDir::create(&run.out)?;
    out.write_slots("slots.csv", &result.slots)?;
    out.write_schedule("schedule.csv", &day.realized, &result.schedules, &result.average)?;
    out.write_arrivals("arrivals.csv", &day.arrivals)?;
    out.write_manifest(&Manifest::new("online", seed, settings, s))?;
    println!("V={} DAs={}", sig(result.objective), day.arrivals.len());
    Ok(())
}

fn recorded(path: &Path, rep: usize, s: &Scenario) -> Result<Vec<Da>> {
    let file = if path.is_dir() {
        path.join(format!("arrivals_{rep}.csv"))
    } else {
        path.to_path_buf()
    };
    let f = std::fs::File::open(&file).map_err(|e| HarnessError::io(&file, e))?;
    Ok(read_arrivals_csv(f, s.grid)?)
}

fn case(id: u8, s: &Scenario, arrivals: Option<&Path>, reps: usize, run: &RunArgs, o: &OnlineArgs) -> Result<()> {
    let case = Case::from_id(id).expect("clap restricts the id");
    if case.needs_recorded_arrivals() && arrivals.is_none() {
        return Err(HarnessError::MissingArrivalRecord(id));
    }
    let seed = run.seed.unwrap_or(s.seed);
    let settings = o.settings(run.iterations.unwrap_or(s.algo.iterations));
    let days = (0..reps.max(1))
        .map(|rep| {
            let day = Replicate::draw(s, rep_seed(seed, rep));
            Ok(match arrivals {
                Some(p) => day.with_arrivals(recorded(p, rep, s)?),
                None => day,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let outcomes = compare_days(s, &days, &[case], &settings)?;
    let out = OutputDir::create(&run.out)?;
    for (rep, day) in days.iter().enumerate() {
        out.write_arrivals(&format!("arrivals_{rep}.csv"), &day.arrivals)?;
    }
    out.write_gaps("gaps.csv", case, &outcomes)?;
    let (mean, se, abs) = aggregate(&outcomes, case);
    out.write_csv(
        "summary.csv",
        &["case", "reps", "mean_relative_gap", "se_relative_gap", "mean_absolute_gap"],
        [vec![
            id.to_string(),
            outcomes.len().to_string(),
            mean.map(sig).unwrap_or_default(),
            se.map(sig).unwrap_or_default(),
            sig(abs),
        ]],
    )?;
    let source = arrivals.map(|p| p.display().to_string());
    out.write_manifest(&Manifest {
        reps: Some(reps),
        case: Some(id),
        arrivals: source.as_deref(),
        ..Manifest::new("case", seed, settings, s)
    })?;
    for o in &outcomes {
        let g = report(o, case);
        println!(
            "rep={} V={} V_offline={} gap={}",
            o.rep,
            sig(g.v_subject),
            sig(g.v_reference),
            g.relative_gap.map(sig).unwrap_or("undefined".into())
        );
    }
    match (mean, se) {
        (Some(m), Some(se)) => println!("mean relative gap {} ± {}", sig(m), sig(se)),
        _ => println!("mean relative gap undefined; mean absolute gap {}", sig(abs)),
    }
    Ok(())
}

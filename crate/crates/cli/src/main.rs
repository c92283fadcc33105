//! `rtc`: run the real-time controller and its baselines on scenario files.

mod output;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rtc_core::controllers::{
    compare, run_naive, run_offline, run_realtime, ControllerKind, OfflineConfig, RealtimeConfig, RunReport,
    DEFAULT_OFFLINE_CAP,
};
use rtc_core::grid::{builtin_case_text, compute_ptdf, convert_matpower, parse_case, solve_dc_power_flow, GridCase};
use rtc_core::scenario::{generate, Archetype, GenerateOptions, Scenario, SimInput};

/// Exit code when a run finished but committed flows broke a line limit.
const EXIT_VIOLATIONS: u8 = 2;

#[derive(Parser)]
#[command(name = "rtc", version, about = "Real-time balancing control for networked microgrids")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ControllerArg {
    Rtc,
    Naive,
    Offline,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ArchetypeArg {
    Flat,
    PvEarly,
    PvLate,
}

#[derive(Subcommand)]
enum Command {
    /// Run one controller on a scenario and write slices.csv, lines.csv and report.json.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_enum, default_value = "rtc")]
        controller: ControllerArg,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Largest microgrid-slice count the offline model accepts.
        #[arg(long, default_value_t = DEFAULT_OFFLINE_CAP)]
        offline_cap: usize,
        /// kW added to every real-time market target.
        #[arg(long, default_value_t = 0.0)]
        loss_compensation: f64,
    },
    /// Run all three controllers and write a comparison table.
    Compare {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_OFFLINE_CAP)]
        offline_cap: usize,
    },
    /// Write the PTDF table of a grid.
    Ptdf {
        /// Case file, or `builtin:<name>`.
        #[arg(long)]
        grid: String,
        /// Write per-bus shift factors (injection at the bus, withdrawal at
        /// the market) instead of every bus pair.
        #[arg(long)]
        shift_factors: bool,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve a DC power flow for given bus injections.
    Powerflow {
        #[arg(long)]
        grid: String,
        /// CSV with columns `bus,injection_kw` (bus ids as in the case file).
        /// All-zero injections when absent. The market bus balances the rest.
        #[arg(long)]
        injections: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a scenario file for every microgrid of a grid.
    Generate {
        #[arg(long)]
        grid: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        name: Option<String>,
        #[arg(long, default_value_t = 15)]
        slice_seconds: u32,
        #[arg(long, default_value_t = 900)]
        slot_seconds: u32,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        pv_factor: f64,
        #[arg(long, value_enum, default_value = "flat")]
        archetype: ArchetypeArg,
        /// Initial state of charge range as fractions, e.g. `0.2,0.8`.
        #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [0.5, 0.5])]
        initial_soc: Vec<f64>,
        /// Largest target change, as a fraction of a full-power slot.
        #[arg(long, default_value_t = 0.0)]
        target_shift: f64,
    },
    /// Convert a Matpower `.m` case into the case format.
    Convert {
        #[arg(long)]
        matpower: PathBuf,
        /// Factor applied to MW/MVA figures to get kW.
        #[arg(long, default_value_t = 1.0)]
        load_scale: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::FAILURE } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::Run {
            scenario,
            controller,
            out,
            offline_cap,
            loss_compensation,
        } => cmd_run(&scenario, controller, &out, offline_cap, loss_compensation),
        Command::Compare {
            scenario,
            out,
            offline_cap,
        } => cmd_compare(&scenario, &out, offline_cap),
        Command::Ptdf {
            grid,
            shift_factors,
            out,
        } => {
            let grid = load_grid(&grid)?;
            let ptdf = compute_ptdf(&grid)?;
            let text = if shift_factors {
                output::shift_factor_csv(&grid, &ptdf)?
            } else {
                output::ptdf_csv(&grid, &ptdf)?
            };
            emit(out.as_deref(), &text)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Powerflow { grid, injections, out } => {
            let grid = load_grid(&grid)?;
            let inj = match injections {
                Some(path) => read_injections(&grid, &path)?,
                None => vec![0.0; grid.buses.len()],
            };
            let sol = solve_dc_power_flow(&grid, &inj)?;
            emit(out.as_deref(), &output::flows_csv(&grid, &sol.flows_kw)?)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Generate {
            grid,
            out,
            name,
            slice_seconds,
            slot_seconds,
            seed,
            pv_factor,
            archetype,
            initial_soc,
            target_shift,
        } => {
            let case = load_grid(&grid)?;
            let opts = GenerateOptions {
                name: name.unwrap_or_else(|| "generated".into()),
                slice_seconds,
                slot_seconds,
                seed,
                pv_realization_factor: pv_factor,
                initial_soc: (initial_soc[0], initial_soc[1]),
                target_shift,
                archetype: match archetype {
                    ArchetypeArg::Flat => Archetype::Flat,
                    ArchetypeArg::PvEarly => Archetype::PvEarly,
                    ArchetypeArg::PvLate => Archetype::PvLate,
                },
                ..Default::default()
            };
            // the scenario resolves file paths from its own directory
            let grid_ref = if grid.starts_with("builtin:") {
                grid
            } else {
                fs::canonicalize(&grid)?.display().to_string()
            };
            let scenario = generate(&grid_ref, &case, &opts);
            scenario.validate()?;
            scenario.save(&out).with_context(|| format!("writing {}", out.display()))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Convert {
            matpower,
            load_scale,
            out,
        } => {
            let text = fs::read_to_string(&matpower).with_context(|| format!("reading {}", matpower.display()))?;
            emit(out.as_deref(), &convert_matpower(&text, load_scale)?)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

/// A case file path, or `builtin:<name>` for a shipped case.
fn load_grid(spec: &str) -> Result<GridCase<f64>> {
    let text = match spec.strip_prefix("builtin:") {
        Some(name) => builtin_case_text(name)
            .with_context(|| format!("unknown builtin grid `{name}`"))?
            .to_string(),
        None => fs::read_to_string(spec).with_context(|| format!("reading {spec}"))?,
    };
    Ok(parse_case(&text)?)
}

fn load_scenario(path: &Path) -> Result<SimInput<f64>> {
    let scenario = Scenario::load(path).with_context(|| format!("loading {}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    Ok(scenario.resolve(base)?)
}

fn read_injections(grid: &GridCase<f64>, path: &Path) -> Result<Vec<f64>> {
    let mut inj = vec![0.0; grid.buses.len()];
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    for row in reader.records() {
        let row = row?;
        let label: i64 = row.get(0).context("missing bus column")?.trim().parse()?;
        let value: f64 = row.get(1).context("missing injection column")?.trim().parse()?;
        let bus = grid
            .bus_by_label(label)
            .with_context(|| format!("bus {label} not in grid"))?;
        inj[bus] += value;
    }
    let market = grid.market();
    inj[market] = 0.0;
    inj[market] = -inj.iter().sum::<f64>();
    Ok(inj)
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run_controller(
    kind: ControllerArg,
    input: &SimInput<f64>,
    offline_cap: usize,
    loss_compensation: f64,
) -> rtc_core::Result<RunReport<f64>> {
    match kind {
        ControllerArg::Rtc => run_realtime(
            input,
            &RealtimeConfig {
                loss_compensation_kw: loss_compensation,
                ..Default::default()
            },
        ),
        ControllerArg::Naive => run_naive(input),
        ControllerArg::Offline => run_offline(
            input,
            &OfflineConfig {
                cap: offline_cap,
                ..Default::default()
            },
        ),
    }
}

fn cmd_run(
    scenario: &Path,
    controller: ControllerArg,
    out: &Path,
    offline_cap: usize,
    loss_compensation: f64,
) -> Result<ExitCode> {
    let input = load_scenario(scenario)?;
    let report = run_controller(controller, &input, offline_cap, loss_compensation)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("slices.csv"), output::slices_csv(&input, &report)?)?;
    fs::write(out.join("lines.csv"), output::lines_csv(&input.grid, &report)?)?;
    fs::write(
        out.join("report.json"),
        serde_json::to_string_pretty(&output::report_summary(&input, &report))?,
    )?;
    println!(
        "{}: {} slices, objective {:.6}, max SoC error {:.3e} kWh, {} line violations",
        report.controller.name(),
        report.slices.len(),
        report.objective,
        report.max_soc_error(),
        report.events.len()
    );
    Ok(if report.events.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_VIOLATIONS)
    })
}

fn cmd_compare(scenario: &Path, out: &Path, offline_cap: usize) -> Result<ExitCode> {
    let input = load_scenario(scenario)?;
    let rt = run_controller(ControllerArg::Rtc, &input, offline_cap, 0.0)?;
    let nv = run_controller(ControllerArg::Naive, &input, offline_cap, 0.0)?;
    let off = run_controller(ControllerArg::Offline, &input, offline_cap, 0.0).map_err(|e| e.to_string());
    let outcomes = [
        (ControllerKind::Realtime, Ok(&rt)),
        (ControllerKind::Naive, Ok(&nv)),
        (ControllerKind::Offline, off.as_ref().map_err(Clone::clone)),
    ];
    let table = compare(&input.grid, &outcomes)?;
    let reports: Vec<&RunReport<f64>> = [Some(&rt), Some(&nv), off.as_ref().ok()].into_iter().flatten().collect();

    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("comparison.csv"), output::comparison_csv(&table)?)?;
    fs::write(out.join("comparison.json"), serde_json::to_string_pretty(&table)?)?;
    fs::write(out.join("market.csv"), output::market_csv(&input, &reports)?)?;
    fs::write(out.join("runtime.csv"), output::runtime_csv(&reports)?)?;
    print!("{}", output::comparison_text(&table));
    Ok(ExitCode::SUCCESS)
}

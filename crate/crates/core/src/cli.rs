//! Command-line driver. Results go to `out`, diagnostics and the trace to
//! `err`.
//!
//! Exit codes: 0 success, 1 infeasible (or an illegal schedule for
//! `check`), 2 input error, 3 solver budget exhausted, 4 internal error.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::baseline::{ims_schedule, ImsOptions};
use crate::bounds::{self, BoundsError};
use crate::encoder::{EncodeOptions, EncodingStyle};
use crate::explain::{explain_ii, render, ExplainOutcome, Format};
use crate::loop_ir::{augment_loop_carried, load_loop_str, LoopGraph};
use crate::machine::{load_machine_str, Processor};
use crate::schedule::{check_schedule, render_table, simulate, ModuloSchedule};
use crate::search::{build_problem, find_schedule, measure_pressure, Outcome, RpMode, SearchError, SearchOptions, TraceRow};
use crate::solver::{export_smtlib, Budget, SatBackend};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INFEASIBLE: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_UNKNOWN: i32 = 3;
pub const EXIT_INTERNAL: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "optswp", version, about = "Optimal modulo scheduling for VLIW processors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Find a schedule with minimal II.
    Schedule {
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        search: SearchFlags,
        /// Also write the schedule JSON to this file.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Print MII and the stage window.
    Bounds {
        #[command(flatten)]
        input: Input,
        /// II for the stage window; defaults to MII.
        #[arg(long)]
        ii: Option<u32>,
        #[arg(long)]
        max_stages: Option<u32>,
        #[arg(long, value_enum, default_value_t = OutFormat::Table)]
        format: OutFormat,
    },
    /// Validate a schedule file.
    Check {
        #[command(flatten)]
        input: Input,
        #[arg(short, long)]
        schedule: PathBuf,
        #[arg(long, value_enum, default_value_t = OutFormat::Table)]
        format: OutFormat,
    },
    /// Explain why no schedule exists at an II (by default the lower bound).
    Explain {
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        search: SearchFlags,
        #[arg(long)]
        ii: Option<u32>,
        /// Shrink the core by deletion before explaining it.
        #[arg(long)]
        minimize_core: bool,
    },
    /// Print the constraints of one probe as SMT-LIB.
    ExportSmt {
        #[command(flatten)]
        input: Input,
        #[arg(long)]
        ii: u32,
        #[arg(long)]
        stages: u32,
        #[arg(long, value_enum, default_value_t = Encoding::Compact)]
        encoding: Encoding,
        #[arg(long, value_enum, default_value_t = Writeback::Zero)]
        writeback_offset: Writeback,
        /// Include register-pressure constraints for every register file.
        #[arg(long)]
        pressure: bool,
    },
    /// Schedule with the iterative modulo scheduling heuristic.
    Baseline {
        #[command(flatten)]
        input: Input,
        #[arg(long)]
        max_ii: Option<u32>,
        /// Placements allowed per II.
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long, value_enum, default_value_t = Writeback::Zero)]
        writeback_offset: Writeback,
        #[arg(long, value_enum, default_value_t = OutFormat::Table)]
        format: OutFormat,
    },
    /// Cycle count of the pipelined loop, replaying every iteration.
    Simulate {
        #[command(flatten)]
        input: Input,
        /// Schedule to replay; without it the minimal-II schedule is found first.
        #[arg(short, long)]
        schedule: Option<PathBuf>,
        #[arg(long)]
        trip_count: Option<u64>,
        #[command(flatten)]
        search: SearchFlags,
    },
}

#[derive(Debug, Args)]
struct Input {
    #[arg(short, long)]
    machine: PathBuf,
    #[arg(short = 'l', long = "loop")]
    loop_file: PathBuf,
}

#[derive(Debug, Args)]
struct SearchFlags {
    #[arg(long)]
    max_ii: Option<u32>,
    /// Probe only this stage count.
    #[arg(long)]
    stages: Option<u32>,
    /// Largest stage count probed (required for disconnected loops).
    #[arg(long)]
    max_stages: Option<u32>,
    #[arg(long, value_enum, default_value_t = RpFlag::Lazy)]
    rp_mode: RpFlag,
    /// Solver conflicts allowed per call.
    #[arg(long)]
    resource_limit: Option<u64>,
    /// Print one JSON line per solver call on stderr.
    #[arg(long)]
    trace: bool,
    #[arg(long, value_enum, default_value_t = Encoding::Compact)]
    encoding: Encoding,
    #[arg(long, value_enum, default_value_t = Writeback::Zero)]
    writeback_offset: Writeback,
    #[arg(long, value_enum, default_value_t = OutFormat::Table)]
    format: OutFormat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutFormat {
    Table,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RpFlag {
    Lazy,
    Eager,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Encoding {
    Paper,
    Compact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Writeback {
    #[value(name = "0")]
    Zero,
    Latency,
}

impl Encoding {
    fn options(self, wb: Writeback) -> EncodeOptions {
        EncodeOptions {
            style: match self {
                Encoding::Paper => EncodingStyle::Paper,
                Encoding::Compact => EncodingStyle::Compact,
            },
            writeback_offset: wb == Writeback::Latency,
        }
    }
}

impl SearchFlags {
    fn options(&self) -> SearchOptions {
        SearchOptions {
            max_ii: self.max_ii,
            stages: self.stages,
            max_stages: self.max_stages,
            rp_mode: match self.rp_mode {
                RpFlag::Lazy => RpMode::Lazy,
                RpFlag::Eager => RpMode::Eager,
                RpFlag::Off => RpMode::Off,
            },
            budget: self.resource_limit.map_or_else(Budget::default, Budget::new),
            want_core: false,
            encode: self.encoding.options(self.writeback_offset),
        }
    }
}

/// An error with the exit code it maps to.
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }
}

impl From<SearchError> for Failure {
    fn from(e: SearchError) -> Self {
        let code = match &e {
            SearchError::Bounds(BoundsError::ZeroDistanceCycle { .. }) => EXIT_INFEASIBLE,
            SearchError::Bounds(_) => EXIT_INPUT,
            SearchError::Solver(_) | SearchError::Internal(_) => EXIT_INTERNAL,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn load(input: &Input) -> Result<(Processor, LoopGraph), Failure> {
    let p = load_machine_str(&read(&input.machine)?)
        .map_err(|e| Failure::input(format!("{}: {e}", input.machine.display())))?;
    let g = load_loop_str(&read(&input.loop_file)?, &p)
        .map_err(|e| Failure::input(format!("{}: {e}", input.loop_file.display())))?;
    Ok((p, g))
}

fn emit_trace(err: &mut dyn Write, on: bool, rows: &[TraceRow]) {
    if on {
        for r in rows {
            let _ = writeln!(err, "{}", serde_json::to_string(r).expect("trace row serializes"));
        }
    }
}

fn print_schedule(out: &mut dyn Write, s: &ModuloSchedule, p: &Processor, g: &LoopGraph, format: OutFormat) {
    match format {
        OutFormat::Json => {
            let _ = writeln!(out, "{}", s.to_json());
        }
        OutFormat::Table => {
            let _ = write!(out, "{}", render_table(s, p));
            let pressure = measure_pressure(s, &augment_loop_carried(g), p);
            let parts: Vec<String> = pressure.iter().map(|(rf, n)| format!("{rf}={n}")).collect();
            let _ = writeln!(out, "register pressure: {}", parts.join(" "));
        }
    }
}

/// Finds the minimal-II schedule; `Err` carries the exit code otherwise.
fn search(
    g: &LoopGraph,
    p: &Processor,
    flags: &SearchFlags,
    err: &mut dyn Write,
) -> Result<ModuloSchedule, Failure> {
    let r = find_schedule(g, p, &flags.options())?;
    emit_trace(err, flags.trace, &r.trace);
    match r.outcome {
        Outcome::Found { schedule, .. } => Ok(schedule),
        Outcome::Infeasible { .. } => Err(Failure {
            code: EXIT_INFEASIBLE,
            message: format!("no schedule with II in {}..={}", r.mii, r.max_ii),
        }),
        Outcome::GaveUp { reason } => Err(Failure {
            code: EXIT_UNKNOWN,
            message: format!("gave up: {reason}"),
        }),
    }
}

#[derive(Serialize)]
struct BoundsReport {
    res_mii: u32,
    rec_mii: u32,
    mii: u32,
    ii: u32,
    min_stages: u32,
    max_stages: u32,
}

#[derive(Serialize)]
struct CheckReport<'a> {
    legal: bool,
    violations: Vec<&'a str>,
}

fn execute(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, Failure> {
    match cmd {
        Command::Schedule { input, search: flags, output } => {
            let (p, g) = load(&input)?;
            let s = search(&g, &p, &flags, err)?;
            if let Some(path) = output {
                fs::write(&path, s.to_json() + "\n")
                    .map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
            }
            print_schedule(out, &s, &p, &g, flags.format);
            Ok(EXIT_OK)
        }
        Command::Bounds {
            input,
            ii,
            max_stages,
            format,
        } => {
            let (p, g) = load(&input)?;
            let g = augment_loop_carried(&g);
            let rec = bounds::rec_mii(&g).map_err(SearchError::from)?;
            let res = bounds::res_mii(&g, &p);
            let mii = rec.max(res).max(1);
            let ii = ii.unwrap_or(mii);
            let opts = SearchOptions {
                max_stages,
                ..SearchOptions::default()
            };
            let w = crate::search::stage_window(&g, ii, &opts).map_err(SearchError::from)?;
            let report = BoundsReport {
                res_mii: res,
                rec_mii: rec,
                mii,
                ii,
                min_stages: w.min_stages,
                max_stages: w.max_stages,
            };
            match format {
                OutFormat::Json => {
                    let _ = writeln!(out, "{}", serde_json::to_string_pretty(&report).unwrap());
                }
                OutFormat::Table => {
                    let _ = writeln!(out, "ResMII={res} RecMII={rec} MII={mii}");
                    let _ = writeln!(out, "II={ii} stages {}..={}", w.min_stages, w.max_stages);
                }
            }
            Ok(EXIT_OK)
        }
        Command::Check { input, schedule, format } => {
            let (p, g) = load(&input)?;
            let s = ModuloSchedule::from_json(&read(&schedule)?)
                .map_err(|e| Failure::input(format!("{}: {e}", schedule.display())))?;
            let v = check_schedule(&s, &augment_loop_carried(&g), &p);
            match format {
                OutFormat::Json => {
                    let report = CheckReport {
                        legal: v.is_empty(),
                        violations: v.iter().map(|x| x.message.as_str()).collect(),
                    };
                    let _ = writeln!(out, "{}", serde_json::to_string_pretty(&report).unwrap());
                }
                OutFormat::Table if v.is_empty() => {
                    let _ = writeln!(out, "legal");
                }
                OutFormat::Table => {
                    for x in &v {
                        let _ = writeln!(out, "{}", x.message);
                    }
                }
            }
            Ok(if v.is_empty() { EXIT_OK } else { EXIT_INFEASIBLE })
        }
        Command::Explain {
            input,
            search: flags,
            ii,
            minimize_core,
        } => {
            let (p, g) = load(&input)?;
            let ii = match ii {
                Some(ii) => ii,
                None => bounds::mii(&augment_loop_carried(&g), &p).map_err(SearchError::from)?,
            };
            let mut trace = Vec::new();
            let outcome = explain_ii(&SatBackend, &g, &p, ii, &flags.options(), minimize_core, &mut trace)?;
            emit_trace(err, flags.trace, &trace);
            match outcome {
                ExplainOutcome::Feasible(s) => {
                    let _ = writeln!(err, "a schedule exists at II={ii}; nothing to explain");
                    print_schedule(out, &s, &p, &g, flags.format);
                    Ok(EXIT_OK)
                }
                ExplainOutcome::Infeasible(d) => {
                    let format = match flags.format {
                        OutFormat::Json => Format::Json,
                        OutFormat::Table => Format::Text,
                    };
                    let text = render(&d, format).map_err(|e| Failure {
                        code: EXIT_INTERNAL,
                        message: e.to_string(),
                    })?;
                    let _ = write!(out, "{text}");
                    Ok(EXIT_INFEASIBLE)
                }
                ExplainOutcome::GaveUp(reason) => Err(Failure {
                    code: EXIT_UNKNOWN,
                    message: format!("gave up: {reason}"),
                }),
            }
        }
        Command::ExportSmt {
            input,
            ii,
            stages,
            encoding,
            writeback_offset,
            pressure,
        } => {
            if ii == 0 || stages == 0 {
                return Err(Failure::input("--ii and --stages must be positive"));
            }
            let (p, g) = load(&input)?;
            let g = augment_loop_carried(&g);
            let rfs: BTreeSet<usize> = if pressure {
                (0..p.register_files.len()).collect()
            } else {
                BTreeSet::new()
            };
            let pr = build_problem(&g, &p, ii, stages, encoding.options(writeback_offset), &rfs);
            let _ = write!(out, "{}", export_smtlib(&pr));
            Ok(EXIT_OK)
        }
        Command::Baseline {
            input,
            max_ii,
            budget,
            writeback_offset,
            format,
        } => {
            let (p, g) = load(&input)?;
            let opts = ImsOptions {
                max_ii,
                budget,
                writeback_offset: writeback_offset == Writeback::Latency,
            };
            let r = ims_schedule(&g, &p, &opts);
            let _ = writeln!(err, "baseline: {} placements", r.attempts);
            match r.schedule {
                Some(s) => {
                    print_schedule(out, &s, &p, &g, format);
                    Ok(EXIT_OK)
                }
                None => Err(Failure {
                    code: EXIT_INFEASIBLE,
                    message: "heuristic found no schedule".into(),
                }),
            }
        }
        Command::Simulate {
            input,
            schedule,
            trip_count,
            search: flags,
        } => {
            let (p, g) = load(&input)?;
            let trip = trip_count
                .or(g.trip_count)
                .ok_or_else(|| Failure::input("no trip count: pass --trip-count or set trip_count in the loop"))?;
            let s = match schedule {
                Some(path) => {
                    let s = ModuloSchedule::from_json(&read(&path)?)
                        .map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
                    let v = check_schedule(&s, &augment_loop_carried(&g), &p);
                    if let Some(x) = v.first() {
                        return Err(Failure::input(format!("{}: illegal schedule: {}", path.display(), x.message)));
                    }
                    s
                }
                None => search(&g, &p, &flags, err)?,
            };
            let cycles = simulate(&s, trip).map_err(|e| Failure::input(e.to_string()))?;
            match flags.format {
                OutFormat::Json => {
                    let v = serde_json::json!({"ii": s.ii, "stages": s.stages, "trip_count": trip, "cycles": cycles});
                    let _ = writeln!(out, "{}", serde_json::to_string_pretty(&v).unwrap());
                }
                OutFormat::Table => {
                    let _ = writeln!(out, "II={} stages={} trip_count={trip} cycles={cycles}", s.ii, s.stages);
                }
            }
            Ok(EXIT_OK)
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let text = e.render().to_string();
            if code == EXIT_OK {
                let _ = write!(out, "{text}");
            } else {
                let _ = write!(err, "{text}");
            }
            return code;
        }
    };
    match execute(cli.command, out, err) {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

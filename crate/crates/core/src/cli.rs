//! Command-line front end.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{SimulationConfig, Strategy};
use crate::debate::debate_run;
use crate::error::{MarketError, Result};
use crate::instances::random_period;
use crate::report::{
    read_checkpoint, report_csv, to_json, write_checkpoint, write_json, write_report, OutputFormat,
};
use crate::rng::{stream, Domain};
use crate::sim::{compare, run_from, traces_for, Simulation};
use crate::traces::write_traces;

#[derive(Debug, Parser)]
#[command(name = "p2p-market", version, about = "Peer-to-peer energy market simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate one strategy and write its full report
    Run(RunArgs),
    /// Simulate both strategies on the same traces and compare them
    Compare(CommonArgs),
    /// Record allocation-solver fitness traces for several market sizes
    Convergence(ConvergenceArgs),
    /// Generate a synthetic trace file
    Synth(CommonArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// TOML config; defaults are used when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Trace CSV (overrides the config)
    #[arg(long)]
    traces: Option<PathBuf>,
    /// Output file (`run`, `synth`, `convergence`) or directory (`compare`)
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "json")]
    format: OutputFormat,
    /// debate_pqr or rule
    #[arg(long)]
    strategy: Option<Strategy>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Write the pricing state at the end of the run
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Continue from a pricing checkpoint
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Record wall time in the report
    #[arg(long)]
    timing: bool,
}

#[derive(Debug, Args)]
struct ConvergenceArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Square market sizes (sellers = buyers)
    #[arg(long, value_delimiter = ',', default_value = "5,10,15")]
    sizes: Vec<usize>,
    /// Overrides the config's generation count
    #[arg(long)]
    g_max: Option<usize>,
    /// Keep every n-th generation in the output
    #[arg(long, default_value_t = 100)]
    every: usize,
}

impl CommonArgs {
    fn config(&self) -> Result<SimulationConfig> {
        let mut c = match &self.config {
            Some(path) => SimulationConfig::load(path)?,
            None => SimulationConfig::default(),
        };
        if let Some(seed) = self.seed {
            c.seed = seed;
        }
        if let Some(t) = &self.traces {
            c.traces = Some(t.to_string_lossy().into_owned());
        }
        if let Some(s) = self.strategy {
            c.strategy = s;
        }
        c.validate()?;
        Ok(c)
    }

    fn emit<T: Serialize>(&self, value: &T, out: &mut dyn Write) -> Result<()> {
        match &self.out {
            Some(path) => write_json(value, path),
            None => write_stdout(out, &to_json(value)),
        }
    }
}

fn write_stdout(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| MarketError::io("<stdout>", e))
}

fn ext(format: OutputFormat) -> &'static str {
    match format {
        OutputFormat::Json => "json",
        OutputFormat::Csv => "csv",
    }
}

fn cmd_run(args: &RunArgs, out: &mut dyn Write) -> Result<()> {
    let common = &args.common;
    if common.config.is_none() {
        return Err(MarketError::invalid("`run` requires --config"));
    }
    let config = common.config()?;
    let traces = traces_for(&config)?;
    let start = std::time::Instant::now();
    let mut sim = match &args.resume {
        Some(path) => Simulation::resume(&config, &traces, read_checkpoint(path)?)?,
        None => Simulation::new(&config, &traces)?,
    };
    let mut report = run_from(&mut sim)?;
    if args.timing {
        report.wall_time_s = Some(start.elapsed().as_secs_f64());
    }
    if let Some(path) = &args.checkpoint {
        write_checkpoint(&sim.checkpoint(), path)?;
    }
    match (&common.out, common.format) {
        (Some(path), format) => write_report(&report, path, format),
        (None, OutputFormat::Json) => write_stdout(out, &to_json(&report)),
        (None, OutputFormat::Csv) => write_stdout(out, &report_csv(&report).0),
    }
}

fn cmd_compare(args: &CommonArgs, out: &mut dyn Write) -> Result<()> {
    let config = args.config()?;
    let traces = traces_for(&config)?;
    let (cmp, ours, base) = compare(&config, &traces)?;
    match &args.out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| MarketError::io(dir, e))?;
            write_json(&cmp, dir.join("comparison.json"))?;
            let e = ext(args.format);
            write_report(&ours, dir.join(format!("debate_pqr.{e}")), args.format)?;
            write_report(&base, dir.join(format!("rule.{e}")), args.format)
        }
        None => write_stdout(out, &to_json(&cmp)),
    }
}

#[derive(Debug, Serialize)]
struct ConvergenceTrace {
    size: usize,
    final_fitness: f64,
    /// Generation numbers (1-based) of the kept samples.
    generations: Vec<usize>,
    fitness: Vec<f64>,
    /// `(f_g - f_1) / (f_G - f_1)`; 1 everywhere when the trace is flat.
    normalized: Vec<f64>,
}

#[derive(Debug, Serialize)]
struct ConvergenceReport {
    seed: u64,
    g_max: usize,
    np: usize,
    traces: Vec<ConvergenceTrace>,
}

fn convergence_trace(size: usize, config: &SimulationConfig, every: usize) -> Result<ConvergenceTrace> {
    let period = random_period(size, size, config, &mut stream(config.seed, Domain::Setup, size as u64));
    let params = config.debate_params(config.seed);
    let run = debate_run(&period, &params, &mut stream(config.seed, Domain::Allocation, size as u64))?;
    let (first, last) = (run.trace[0], *run.trace.last().expect("g_max >= 1"));
    let every = every.max(1);
    let keep: Vec<usize> = (0..run.trace.len())
        .filter(|g| (g + 1) % every == 0 || *g == 0 || *g + 1 == run.trace.len())
        .collect();
    let norm = |f: f64| if last == first { 1.0 } else { (f - first) / (last - first) };
    Ok(ConvergenceTrace {
        size,
        final_fitness: run.fitness,
        generations: keep.iter().map(|g| g + 1).collect(),
        fitness: keep.iter().map(|&g| run.trace[g]).collect(),
        normalized: keep.iter().map(|&g| norm(run.trace[g])).collect(),
    })
}

fn convergence_csv(report: &ConvergenceReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["generation".to_string()];
    for t in &report.traces {
        header.push(format!("fitness_{}", t.size));
        header.push(format!("normalized_{}", t.size));
    }
    w.write_record(&header).expect("in-memory csv");
    if let Some(first) = report.traces.first() {
        for (k, g) in first.generations.iter().enumerate() {
            let mut row = vec![g.to_string()];
            for t in &report.traces {
                row.push(t.fitness[k].to_string());
                row.push(t.normalized[k].to_string());
            }
            w.write_record(&row).expect("in-memory csv");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8")
}

fn cmd_convergence(args: &ConvergenceArgs, out: &mut dyn Write) -> Result<()> {
    let mut config = args.common.config()?;
    if let Some(g) = args.g_max {
        config.debate.g_max = g;
    }
    config.debate_params(config.seed).validate()?;
    if args.sizes.iter().any(|&n| n == 0) {
        return Err(MarketError::invalid("sizes must be >= 1"));
    }
    let report = ConvergenceReport {
        seed: config.seed,
        g_max: config.debate.g_max,
        np: config.debate.np,
        traces: args
            .sizes
            .iter()
            .map(|&n| convergence_trace(n, &config, args.every))
            .collect::<Result<_>>()?,
    };
    match args.common.format {
        OutputFormat::Json => args.common.emit(&report, out),
        OutputFormat::Csv => {
            let text = convergence_csv(&report);
            match &args.common.out {
                Some(path) => fs::write(path, text).map_err(|e| MarketError::io(path, e)),
                None => write_stdout(out, &text),
            }
        }
    }
}

fn cmd_synth(args: &CommonArgs, out: &mut dyn Write) -> Result<()> {
    let mut config = args.config()?;
    config.traces = None;
    let traces = traces_for(&config)?;
    match &args.out {
        Some(path) => write_traces(&traces, path),
        None => {
            let mut buf = Vec::new();
            traces.write_csv(&mut buf).map_err(|e| MarketError::Format {
                path: PathBuf::from("<stdout>"),
                msg: e.to_string(),
            })?;
            out.write_all(&buf).map_err(|e| MarketError::io("<stdout>", e))
        }
    }
}

/// Exit code for an error: 1 for bad input, 2 for I/O and runtime failures.
pub fn exit_code(err: &MarketError) -> i32 {
    if err.is_validation() {
        1
    } else {
        2
    }
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = if e.use_stderr() {
                write!(err, "{}", e.render())
            } else {
                write!(out, "{}", e.render())
            };
            return code;
        }
    };
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a, out),
        Command::Compare(a) => cmd_compare(a, out),
        Command::Convergence(a) => cmd_convergence(a, out),
        Command::Synth(a) => cmd_synth(a, out),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            if matches!(&cli.command, Command::Run(a) if a.common.config.is_none()) {
                let _ = writeln!(err, "\nUsage: p2p-market run --config <PATH> [OPTIONS]");
            }
            exit_code(&e)
        }
    }
}

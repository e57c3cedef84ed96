//! `planhead` command-line driver.
//!
//! Settings resolve in three layers: built-in defaults, then the JSON file
//! given with `--config`, then individual flags.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use planhead::coarsen::coarsen_trajectory;
use planhead::command_codec::{parse_commands, parse_probabilistic, CommandDictionaries};
use planhead::config::RunConfig;
use planhead::corpus::{generate_corpus, read_corpus, write_corpus, ScenarioRecord};
use planhead::evaluator::{
    dump_scenarios, evaluate_openloop, format_metrics_table, replay_closedloop, write_metrics_csv, MemoryBuffer,
    ModelPlanner, SimConfig,
};
use planhead::jsonfmt;
use planhead::model::{init_params, Variant};
use planhead::reasoner::{endpoint_from_env, oracle_reason, remote_reason, ReasonerError, ReasonerOutput};
use planhead::training::{
    grad_check, prepare_corpus, train, write_log_csv, Checkpoint, GradScope, TrainError,
};

#[derive(Parser, Debug)]
#[command(name = "planhead", version, about = "Language-conditioned trajectory planning pipeline")]
struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic scenario corpus (JSON lines).
    GenCorpus(GenCorpusArgs),
    /// Produce strategy text and command blocks for every record.
    Reason(ReasonArgs),
    /// Parse a command block and print the command set as JSON.
    Parse(ParseArgs),
    /// Write the smoothed coarse trajectory of every record.
    Coarsen(CoarsenArgs),
    /// Train a planner and write a checkpoint.
    Train(TrainArgs),
    /// Compare analytic and finite-difference gradients.
    Gradcheck(GradcheckArgs),
    /// Open-loop L2 and collision metrics of a checkpoint.
    Eval(EvalArgs),
    /// Closed-loop kinematic replay of a checkpoint along a route.
    Replay(ReplayArgs),
}

#[derive(Args, Debug)]
struct GenCorpusArgs {
    /// First seed; records use seeds `seed..seed+count`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    count: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    k_agents: Option<usize>,
}

#[derive(Args, Debug, Clone)]
struct ReasonerFlags {
    /// Remote reasoner base URL (the REALAD_VLM_ENDPOINT variable wins).
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    max_attempts: Option<u32>,
    /// Precomputed reasoning (output of `reason`), matched by record id.
    #[arg(long)]
    reasoning: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReasonArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    reasoner: ReasonerFlags,
}

#[derive(Args, Debug)]
struct ParseArgs {
    /// Command block; read from standard input when absent.
    #[arg(long)]
    text: Option<String>,
    /// Parse the probabilistic JSON form instead.
    #[arg(long)]
    probabilistic: bool,
}

#[derive(Args, Debug)]
struct CoarsenArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch loss log (CSV).
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    max_iterations: Option<usize>,
    /// full, single_level or plain.
    #[arg(long)]
    variant: Option<String>,
    #[command(flatten)]
    reasoner: ReasonerFlags,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Check these parameters instead of a fresh initialization.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Restrict the check to one parameter group.
    #[arg(long)]
    group: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    reasoner: ReasonerFlags,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Metrics CSV output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory for per-scenario CSV and SVG dumps.
    #[arg(long)]
    dump_dir: Option<PathBuf>,
    #[arg(long)]
    ego_radius: Option<f64>,
    #[command(flatten)]
    reasoner: ReasonerFlags,
}

#[derive(Args, Debug)]
struct ReplayArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Simulation config JSON; overrides the `sim` section of `--config`.
    #[arg(long)]
    sim: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    threshold: Option<f64>,
    #[command(flatten)]
    reasoner: ReasonerFlags,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::GenCorpus(a) => gen_corpus(&mut cfg, a),
        Command::Reason(a) => reason(&mut cfg, a),
        Command::Parse(a) => parse(a),
        Command::Coarsen(a) => coarsen(a),
        Command::Train(a) => train_cmd(&mut cfg, a),
        Command::Gradcheck(a) => gradcheck(&mut cfg, a),
        Command::Eval(a) => eval(&mut cfg, a),
        Command::Replay(a) => replay(&mut cfg, a),
    }
}

fn log_resolved(cfg: &RunConfig, seed: u64) -> Result<()> {
    cfg.validate()?;
    eprintln!("resolved config: {}", serde_json::to_string(cfg)?);
    eprintln!("seed: {seed}");
    Ok(())
}

fn write_json_lines<T: Serialize>(items: &[T], path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for it in items {
        jsonfmt::to_writer(&mut out, it)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn gen_corpus(cfg: &mut RunConfig, a: GenCorpusArgs) -> Result<()> {
    if let Some(h) = a.horizon {
        cfg.corpus.horizon = h;
        cfg.model.horizon = h;
    }
    if let Some(k) = a.k_agents {
        cfg.corpus.k_agents = k;
        cfg.model.k_agents = k;
    }
    let seed = a.seed.unwrap_or(cfg.train.seed);
    log_resolved(cfg, seed)?;
    let records = generate_corpus(seed..seed + a.count as u64, &cfg.corpus)?;
    let n = write_corpus(&records, &a.out)?;
    eprintln!("wrote {n} records to {}", a.out.display());
    Ok(())
}

#[derive(Serialize, serde::Deserialize)]
struct ReasoningLine {
    id: String,
    #[serde(flatten)]
    output: ReasonerOutput,
}

fn apply_reasoner_flags(cfg: &mut RunConfig, f: &ReasonerFlags) {
    if let Some(e) = &f.endpoint {
        cfg.reasoner.endpoint = Some(e.clone());
    }
    if let Some(m) = f.max_attempts {
        cfg.reasoner.max_attempts = m;
    }
}

type ReasonFn = Box<dyn Fn(&ScenarioRecord) -> Result<ReasonerOutput, ReasonerError> + Sync>;

/// Cached reasoning if a file was given, else the remote endpoint if one is
/// configured, else the rule-based oracle.
fn reasoner(cfg: &RunConfig, f: &ReasonerFlags) -> Result<ReasonFn> {
    if let Some(path) = &f.reasoning {
        let reader = BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?);
        let mut table = HashMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let r: ReasoningLine =
                serde_json::from_str(&line).with_context(|| format!("{} line {}", path.display(), i + 1))?;
            table.insert(r.id, r.output);
        }
        return Ok(Box::new(move |rec| {
            table.get(&rec.id).cloned().ok_or_else(|| ReasonerError::Verification {
                attempts: 0,
                last_text: format!("no cached reasoning for `{}`", rec.id),
            })
        }));
    }
    match endpoint_from_env(cfg.reasoner.endpoint.as_deref()) {
        Some(endpoint) => {
            eprintln!("reasoner: remote {endpoint}");
            let max = cfg.reasoner.max_attempts;
            Ok(Box::new(move |rec| remote_reason(&endpoint, &rec.id, max)))
        }
        None => Ok(Box::new(|rec| Ok(oracle_reason(rec)))),
    }
}

fn reason(cfg: &mut RunConfig, a: ReasonArgs) -> Result<()> {
    apply_reasoner_flags(cfg, &a.reasoner);
    log_resolved(cfg, cfg.train.seed)?;
    let records = read_corpus(&a.input)?;
    let r = reasoner(cfg, &a.reasoner)?;
    let lines = records
        .iter()
        .map(|rec| {
            Ok(ReasoningLine {
                id: rec.id.clone(),
                output: r(rec)?,
            })
        })
        .collect::<Result<Vec<_>, ReasonerError>>()?;
    write_json_lines(&lines, &a.out)
}

fn parse(a: ParseArgs) -> Result<()> {
    let text = match a.text {
        Some(t) => t,
        None => {
            let mut s = String::new();
            std::io::stdin().read_to_string(&mut s)?;
            s
        }
    };
    let dicts = CommandDictionaries::default();
    let json = if a.probabilistic {
        serde_json::to_string_pretty(&parse_probabilistic(&text, &dicts)?)?
    } else {
        serde_json::to_string_pretty(&parse_commands(&text, &dicts)?)?
    };
    println!("{json}");
    Ok(())
}

#[derive(Serialize)]
struct CoarseLine<'a> {
    id: &'a str,
    coarse_traj: Vec<[f64; 2]>,
}

fn coarsen(a: CoarsenArgs) -> Result<()> {
    let records = read_corpus(&a.input)?;
    let lines = records
        .iter()
        .map(|r| {
            Ok(CoarseLine {
                id: &r.id,
                coarse_traj: coarsen_trajectory(&r.gt_traj).with_context(|| format!("record {}", r.id))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_json_lines(&lines, &a.out)
}

fn parse_variant(s: &str) -> Result<Variant> {
    Ok(match s {
        "full" => Variant::Full,
        "single_level" => Variant::SingleLevel,
        "plain" => Variant::Plain,
        other => bail!("unknown variant `{other}` (expected full, single_level or plain)"),
    })
}

fn train_cmd(cfg: &mut RunConfig, a: TrainArgs) -> Result<()> {
    apply_reasoner_flags(cfg, &a.reasoner);
    let t = &mut cfg.train;
    if let Some(v) = a.epochs {
        t.epochs = v;
    }
    if let Some(v) = a.seed {
        t.seed = v;
    }
    if let Some(v) = a.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = a.lr {
        t.lr = v;
    }
    if a.max_iterations.is_some() {
        t.max_iterations = a.max_iterations;
    }
    if let Some(v) = &a.variant {
        cfg.model = cfg.model.clone().variant(parse_variant(v)?);
    }
    log_resolved(cfg, cfg.train.seed)?;
    let records = read_corpus(&a.corpus)?;
    let r = reasoner(cfg, &a.reasoner)?;
    let samples = prepare_corpus(&records, &cfg.model, r)?;
    let outcome = match train(&samples, &cfg.model, &cfg.train, None) {
        Ok(o) => o,
        Err(TrainError::Diverged { last_good, .. }) => {
            let rescue = a.out.with_extension("last_good.json");
            last_good.save(&rescue)?;
            bail!("training diverged; last good parameters saved to {}", rescue.display());
        }
        Err(e) => return Err(e.into()),
    };
    outcome.checkpoint.save(&a.out)?;
    if let Some(log) = &a.log {
        write_log_csv(&outcome.epochs, File::create(log)?)?;
    }
    if let Some(last) = outcome.epochs.last() {
        eprintln!("epoch {}: total loss {:.6}", last.epoch, last.losses.total);
    }
    Ok(())
}

fn gradcheck(cfg: &mut RunConfig, a: GradcheckArgs) -> Result<()> {
    apply_reasoner_flags(cfg, &a.reasoner);
    if let Some(s) = a.seed {
        cfg.gradcheck.seed = s;
    }
    let params = match &a.checkpoint {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            cfg.model = ck.config.model.clone();
            ck.param_store()?
        }
        None => init_params(&cfg.model, cfg.gradcheck.seed)?,
    };
    log_resolved(cfg, cfg.gradcheck.seed)?;
    let records = read_corpus(&a.corpus)?;
    let take = cfg.gradcheck.batch_size.min(records.len());
    let r = reasoner(cfg, &a.reasoner)?;
    let samples = prepare_corpus(&records[..take], &cfg.model, r)?;
    let scope = match a.group {
        Some(g) => {
            if !params.groups().contains(&g) {
                bail!("unknown parameter group `{g}`");
            }
            GradScope::Group(g)
        }
        None => GradScope::All,
    };
    let report = grad_check(&params, &cfg.model, &cfg.train.loss, &samples, &cfg.gradcheck, &scope);
    println!("{}", serde_json::to_string_pretty(&report)?);
    if !report.passed {
        bail!(
            "gradient check failed: max relative error {:.3e} (tolerance {:.1e})",
            report.max_rel_error,
            report.tolerance
        );
    }
    Ok(())
}

fn load_planner(cfg: &mut RunConfig, path: &Path) -> Result<ModelPlanner> {
    let ck = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
    cfg.model = ck.config.model.clone();
    cfg.corpus.horizon = cfg.model.horizon;
    cfg.corpus.k_agents = cfg.model.k_agents;
    Ok(ModelPlanner::from_checkpoint(&ck)?)
}

fn eval(cfg: &mut RunConfig, a: EvalArgs) -> Result<()> {
    apply_reasoner_flags(cfg, &a.reasoner);
    if let Some(r) = a.ego_radius {
        cfg.eval.ego_radius = r;
    }
    let planner = load_planner(cfg, &a.checkpoint)?;
    log_resolved(cfg, cfg.train.seed)?;
    let records = read_corpus(&a.corpus)?;
    let r = reasoner(cfg, &a.reasoner)?;
    let report = evaluate_openloop(&planner, &records, r, &cfg.eval)?;
    print!("{}", format_metrics_table(&report.tables));
    if let Some(out) = &a.out {
        write_metrics_csv(&report.tables, File::create(out)?)?;
    }
    if let Some(dir) = &a.dump_dir {
        dump_scenarios(&report, dir)?;
    }
    Ok(())
}

fn replay(cfg: &mut RunConfig, a: ReplayArgs) -> Result<()> {
    apply_reasoner_flags(cfg, &a.reasoner);
    if let Some(p) = &a.sim {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        cfg.sim = serde_json::from_str::<SimConfig>(&text).with_context(|| format!("parsing {}", p.display()))?;
    }
    if let Some(s) = a.steps {
        cfg.sim.steps = s;
    }
    if let Some(t) = a.threshold {
        cfg.sim.reuse_threshold = t;
    }
    let planner = load_planner(cfg, &a.checkpoint)?;
    cfg.sim.horizon = cfg.model.horizon;
    cfg.sim.k_agents = cfg.model.k_agents;
    log_resolved(cfg, cfg.train.seed)?;
    let r = reasoner(cfg, &a.reasoner)?;
    let mut buffer = MemoryBuffer::new();
    let mut call = |rec: &ScenarioRecord| r(rec);
    let report = replay_closedloop(&planner, &cfg.sim, &mut buffer, &mut call)?;
    #[derive(Serialize)]
    struct Summary {
        completion_fraction: f64,
        infractions: usize,
        score: f64,
        steps: usize,
        reasoner_calls: usize,
        trajectory: Vec<[f64; 2]>,
    }
    let s = Summary {
        completion_fraction: report.completion_fraction,
        infractions: report.infractions,
        score: report.score,
        steps: report.steps,
        reasoner_calls: report.reasoner_calls,
        trajectory: report.trajectory,
    };
    println!("{}", serde_json::to_string_pretty(&s)?);
    Ok(())
}

//! `sstr` command line.
//!
//! Every command writes exactly one JSON document to stdout and a short
//! human summary to stderr. Exit codes: 0 success, 2 usage, 3 data,
//! 4 degenerate input.

mod serve;

use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{debug, info};
use serde::Serialize;
use serde_json::json;

use crate::controller::{decode_savings, replay, SelectionReport};
use crate::error::Error;
use crate::io::{self, TraceFile};
use crate::segment::{self, Segmentation};
use crate::synth::{ProfileChoice, Scenario, VideoSpec, DEFAULT_JITTER};
use crate::tac::tac_score;
use crate::trace::{validate, CandidateTrace, GammaMode, MatchingStrategy, RunConfig};
use crate::vav::{vav_offline, VavState, VavVerdict};

#[derive(Debug, Parser)]
#[command(name = "sstr", version, about = "Attention-trace candidate selection for video-language decoding")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic trace file.
    Simulate(SimulateArgs),
    /// Segment the video of a trace.
    Segment(SegmentArgs),
    /// Collapse score of one candidate prefix.
    Score(ScoreArgs),
    /// Vanishing point of one candidate.
    Vav(VavArgs),
    /// Replay a full selection run.
    Run(RunArgs),
    /// Replay every trace in a directory and aggregate the decode savings.
    Bench(BenchArgs),
    /// Check a trace against the input contract.
    Validate(TraceArg),
    /// Convert between `.sstr` and its `.sstr.json` mirror.
    Mirror(MirrorArgs),
    /// Answer directive requests read as JSON lines from stdin.
    Serve,
}

#[derive(Debug, Args)]
pub struct TraceArg {
    pub trace: PathBuf,
}

#[derive(Debug, Clone, Copy, Default, ValueEnum)]
pub enum MatchingArg {
    #[default]
    Exact,
    Greedy,
}

impl From<MatchingArg> for MatchingStrategy {
    fn from(m: MatchingArg) -> Self {
        match m {
            MatchingArg::Exact => MatchingStrategy::Exact,
            MatchingArg::Greedy => MatchingStrategy::Greedy,
        }
    }
}

#[derive(Debug, Args)]
pub struct GammaArgs {
    /// Fixed boundary threshold (`inf` disables boundaries).
    #[arg(long, allow_negative_numbers = true, conflicts_with = "gamma_auto")]
    pub gamma: Option<f64>,
    /// Data-driven threshold `mean + c * std` of the inter-frame distances.
    #[arg(long, value_name = "C", allow_negative_numbers = true)]
    pub gamma_auto: Option<f64>,
    #[arg(long, value_enum, default_value_t = MatchingArg::Exact)]
    pub matching: MatchingArg,
}

impl GammaArgs {
    pub fn mode(&self) -> GammaMode {
        match (self.gamma, self.gamma_auto) {
            (Some(value), _) => GammaMode::Fixed { value },
            (None, Some(c)) => GammaMode::Auto { c },
            (None, None) => GammaMode::default(),
        }
    }
}

#[derive(Debug, Args)]
pub struct VavFlags {
    #[arg(long, default_value_t = 1.2, allow_negative_numbers = true)]
    pub alpha: f64,
    #[arg(long, default_value_t = 10)]
    pub window: usize,
    #[arg(long, default_value_t = 512)]
    pub max_prefix_tokens: usize,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 32)]
    pub frames: usize,
    #[arg(long, default_value_t = 196)]
    pub patches: usize,
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long, default_value_t = 4)]
    pub shots: usize,
    #[arg(long, default_value_t = 10)]
    pub candidates: usize,
    #[arg(long, default_value_t = 256)]
    pub length: usize,
    /// Comma-separated per-candidate profiles: `uniform`, `random`,
    /// `frame:F:MASS`, `segment:START:END:MASS`, `mixed:W1/W2/...`.
    /// The last entry repeats for the remaining candidates. Defaults to
    /// `uniform,random` (just `uniform` for a single candidate).
    #[arg(long, value_delimiter = ',')]
    pub profiles: Option<Vec<String>>,
    /// Plant the vanishing point of every candidate at this step.
    #[arg(long, conflicts_with = "prefix_fraction")]
    pub vav_at: Option<usize>,
    /// Plant the vanishing point at `round(fraction * length)`.
    #[arg(long)]
    pub prefix_fraction: Option<f64>,
    /// Window the planted vanishing point is built for.
    #[arg(long, default_value_t = 10)]
    pub window: usize,
    #[arg(long, default_value_t = DEFAULT_JITTER)]
    pub jitter: f64,
    #[arg(long, default_value_t = 0.0)]
    pub motion_jitter: f64,
    #[arg(long, short)]
    pub out: PathBuf,
    /// Also write the `.sstr.json` mirror next to the output.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    pub trace: PathBuf,
    #[command(flatten)]
    pub gamma: GammaArgs,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    pub trace: PathBuf,
    #[arg(long)]
    pub candidate_id: u32,
    /// Defaults to the full recorded length.
    #[arg(long)]
    pub prefix_len: Option<usize>,
    #[command(flatten)]
    pub gamma: GammaArgs,
}

#[derive(Debug, Args)]
pub struct VavArgs {
    pub trace: PathBuf,
    #[arg(long)]
    pub candidate_id: u32,
    #[command(flatten)]
    pub vav: VavFlags,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    pub trace: PathBuf,
    #[command(flatten)]
    pub vav: VavFlags,
    #[command(flatten)]
    pub gamma: GammaArgs,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    pub trace_dir: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    #[command(flatten)]
    pub vav: VavFlags,
    #[command(flatten)]
    pub gamma: GammaArgs,
}

#[derive(Debug, Args)]
pub struct MirrorArgs {
    /// A `.sstr` file, or a `.json` mirror to convert back.
    pub input: PathBuf,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

fn emit(out: &mut dyn Write, value: &impl Serialize) -> Result<(), Error> {
    serde_json::to_writer_pretty(&mut *out, value)?;
    writeln!(out)?;
    Ok(())
}

fn run_config(vav: &VavFlags, gamma: &GammaArgs, n_candidates: usize) -> RunConfig {
    RunConfig {
        alpha: vav.alpha,
        window: vav.window,
        gamma_mode: gamma.mode(),
        n_candidates,
        max_prefix_tokens: vav.max_prefix_tokens,
        matching: gamma.matching.into(),
    }
}

fn candidate(trace: &TraceFile, id: u32) -> Result<&CandidateTrace, Error> {
    trace
        .candidates
        .iter()
        .find(|c| c.candidate_id == id)
        .ok_or_else(|| Error::Usage(format!("no candidate with id {id}")))
}

/// Runs one parsed command. `input` is only read by `serve`.
pub fn execute(
    cli: Cli,
    input: &mut dyn BufRead,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<(), Error> {
    match cli.command {
        Command::Simulate(a) => simulate(a, out, err),
        Command::Segment(a) => {
            let tf = io::load(&a.trace)?;
            let seg = segment::segment(&tf.video, &a.gamma.mode(), a.gamma.matching.into())?;
            writeln!(err, "{} frames, K = {}, gamma = {}", seg.frames(), seg.k, seg.gamma_used)?;
            emit(out, &seg)
        }
        Command::Score(a) => {
            let tf = io::load(&a.trace)?;
            let cand = candidate(&tf, a.candidate_id)?;
            let prefix_len = a.prefix_len.unwrap_or(cand.len());
            let seg = segment::segment(&tf.video, &a.gamma.mode(), a.gamma.matching.into())?;
            let score = tac_score(cand, prefix_len, &tf.video, &seg)?;
            writeln!(
                err,
                "candidate {} prefix {}: S_f = {:.6}, S_c = {:.6}, total = {:.6} (K = {})",
                a.candidate_id, prefix_len, score.s_f, score.s_c, score.total, seg.k
            )?;
            emit(
                out,
                &json!({
                    "candidate_id": a.candidate_id,
                    "prefix_len": prefix_len,
                    "k": seg.k,
                    "score": score,
                }),
            )
        }
        Command::Vav(a) => {
            let tf = io::load(&a.trace)?;
            let cand = candidate(&tf, a.candidate_id)?;
            let config = run_config(&a.vav, &GammaArgs::none(), 1);
            let offline = vav_offline(&cand.steps, &config)?;
            let mut state = VavState::new();
            let mut verdict = VavVerdict::NotYet;
            for step in &cand.steps {
                verdict = state.advance(step, &config)?;
                if verdict != VavVerdict::NotYet {
                    break;
                }
            }
            writeln!(
                err,
                "candidate {}: j_vav = {}, streaming verdict {:?}",
                a.candidate_id,
                offline.map_or("none".into(), |j| j.to_string()),
                verdict
            )?;
            emit(
                out,
                &json!({
                    "candidate_id": a.candidate_id,
                    "length": cand.len(),
                    "j_vav": offline,
                    "streaming": verdict,
                }),
            )
        }
        Command::Run(a) => {
            let tf = io::load(&a.trace)?;
            let config = run_config(&a.vav, &a.gamma, tf.candidates.len());
            let (report, seg) = replay(&tf.video, &tf.candidates, &config)?;
            summarize_run(err, &report, &seg)?;
            emit(out, &json!({ "k": seg.k, "gamma_used": seg.gamma_used, "report": report }))
        }
        Command::Bench(a) => bench(a, out, err),
        Command::Validate(a) => {
            let tf = io::load(&a.trace)?;
            let config = RunConfig {
                n_candidates: tf.candidates.len(),
                ..RunConfig::default()
            };
            validate(&tf.video, &tf.candidates, &config)?;
            writeln!(err, "{}: ok", a.trace.display())?;
            emit(
                out,
                &json!({
                    "valid": true,
                    "frames": tf.video.frames(),
                    "patches_per_frame": tf.video.patches_per_frame(),
                    "embed_dim": tf.video.embed_dim(),
                    "candidates": tf.candidates.len(),
                }),
            )
        }
        Command::Mirror(a) => mirror(a, out, err),
        Command::Serve => serve::serve(input, out, err),
    }
}

impl GammaArgs {
    fn none() -> Self {
        Self {
            gamma: None,
            gamma_auto: None,
            matching: MatchingArg::Exact,
        }
    }
}

fn simulate(a: SimulateArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), Error> {
    if a.shots > a.frames {
        return Err(Error::Usage(format!(
            "--shots ({}) must not exceed --frames ({})",
            a.shots, a.frames
        )));
    }
    let default_profiles = || {
        let names: &[&str] = if a.candidates == 1 { &["uniform"] } else { &["uniform", "random"] };
        names.iter().map(|s| s.to_string()).collect()
    };
    let profiles = a
        .profiles
        .clone()
        .unwrap_or_else(default_profiles)
        .iter()
        .map(|p| p.parse::<ProfileChoice>())
        .collect::<Result<Vec<_>, _>>()?;
    let vav_at = match (a.vav_at, a.prefix_fraction) {
        (Some(j), _) => Some(j),
        (None, Some(p)) if (0.0..=1.0).contains(&p) => Some((p * a.length as f64).round() as usize),
        (None, Some(p)) => return Err(Error::Usage(format!("--prefix-fraction {p} outside [0, 1]"))),
        (None, None) => None,
    };
    let mut video = VideoSpec::new(a.frames, a.patches, a.dim, a.shots);
    video.motion_jitter = a.motion_jitter;
    let scenario = Scenario {
        profiles,
        vav_at,
        window: a.window,
        jitter: a.jitter,
        ..Scenario::new(video, a.candidates, a.length)
    };
    let (video, candidates) = scenario.generate(a.seed)?;
    let tf = TraceFile::new(video, candidates);
    io::save(&a.out, &tf)?;
    let mut mirror_path = None;
    if a.json {
        let p = mirror_name(&a.out);
        fs::write(&p, io::to_json_mirror(&tf)?)?;
        mirror_path = Some(p);
    }
    writeln!(
        err,
        "wrote {} ({} frames, {} candidates x {} steps)",
        a.out.display(),
        a.frames,
        a.candidates,
        a.length
    )?;
    emit(
        out,
        &json!({
            "path": a.out,
            "mirror": mirror_path,
            "seed": a.seed,
            "frames": a.frames,
            "patches_per_frame": a.patches,
            "embed_dim": a.dim,
            "shots": a.shots,
            "candidates": a.candidates,
            "length": a.length,
            "vav_at": vav_at,
        }),
    )
}

fn mirror_name(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn mirror(a: MirrorArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), Error> {
    let from_json = a.input.extension().is_some_and(|e| e == "json");
    let target = if from_json {
        let tf = io::from_json_mirror(&fs::read_to_string(&a.input)?)?;
        let target = a.out.unwrap_or_else(|| a.input.with_extension(""));
        io::save(&target, &tf)?;
        target
    } else {
        let tf = io::load(&a.input)?;
        let target = a.out.unwrap_or_else(|| mirror_name(&a.input));
        fs::write(&target, io::to_json_mirror(&tf)?)?;
        target
    };
    writeln!(err, "{} -> {}", a.input.display(), target.display())?;
    emit(out, &json!({ "input": a.input, "output": target }))
}

fn summarize_run(err: &mut dyn Write, report: &SelectionReport, seg: &Segmentation) -> Result<(), Error> {
    writeln!(err, "K = {}, gamma = {}", seg.k, seg.gamma_used)?;
    writeln!(err, "{:>5} {:>7} {:>6} {:>10}", "id", "prefix", "reason", "TAC")?;
    for c in &report.candidates {
        let tac = c
            .tac
            .as_ref()
            .map_or_else(|| c.excluded.clone().unwrap_or_default(), |t| format!("{:.6}", t.total));
        let mark = if c.candidate_id == report.winner { " *" } else { "" };
        writeln!(
            err,
            "{:>5} {:>7} {:>6} {:>10}{}",
            c.candidate_id,
            c.prefix_len,
            format!("{:?}", c.freeze_reason).to_lowercase(),
            tac,
            mark
        )?;
    }
    writeln!(
        err,
        "winner {} resumes at {}; {} of {} decode tokens, savings {:.4}",
        report.winner,
        report.resume_from,
        report.decode_tokens_spent,
        report.decode_tokens_baseline,
        report.savings_fraction
    )?;
    Ok(())
}

/// Mean loser prefix length over the winner's full length; `None` for a
/// single-candidate run.
fn prefix_fraction(report: &SelectionReport) -> Option<f64> {
    let losers: Vec<f64> = report
        .candidates
        .iter()
        .filter(|c| c.candidate_id != report.winner)
        .map(|c| c.prefix_len as f64)
        .collect();
    if losers.is_empty() || report.winner_full_len == 0 {
        return None;
    }
    Some(losers.iter().sum::<f64>() / losers.len() as f64 / report.winner_full_len as f64)
}

#[derive(Debug, Serialize)]
struct BenchEntry {
    path: PathBuf,
    candidates: usize,
    winner: u32,
    prefix_fraction: Option<f64>,
    savings_fraction: f64,
    model_savings: Option<f64>,
}

fn bench(a: BenchArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), Error> {
    if a.repeats == 0 {
        return Err(Error::Usage("--repeats must be at least 1".into()));
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(&a.trace_dir)
        .map_err(|e| Error::Usage(format!("{}: {e}", a.trace_dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "sstr"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Usage(format!("no .sstr files in {}", a.trace_dir.display())));
    }
    let traces = paths
        .iter()
        .map(|p| io::load(p).map(|t| (p.clone(), t)))
        .collect::<Result<Vec<_>, _>>()?;

    let started = Instant::now();
    let mut entries = Vec::with_capacity(traces.len());
    for rep in 0..a.repeats {
        for (path, tf) in &traces {
            let config = run_config(&a.vav, &a.gamma, tf.candidates.len());
            let (report, _) = replay(&tf.video, &tf.candidates, &config)?;
            debug!("{} repeat {rep}: winner {}", path.display(), report.winner);
            if rep == 0 {
                let p = prefix_fraction(&report);
                entries.push(BenchEntry {
                    path: path.clone(),
                    candidates: tf.candidates.len(),
                    winner: report.winner,
                    prefix_fraction: p,
                    savings_fraction: report.savings_fraction,
                    model_savings: p.map(|p| decode_savings(p, tf.candidates.len(), report.winner_full_len)),
                });
            }
        }
    }
    let wall = started.elapsed().as_secs_f64();
    let runs = (a.repeats * traces.len()) as f64;

    let mean = |xs: Vec<f64>| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
    let mean_prefix = mean(entries.iter().filter_map(|e| e.prefix_fraction).collect());
    let mean_savings = mean(entries.iter().map(|e| e.savings_fraction).collect());
    let mean_model = mean(entries.iter().filter_map(|e| e.model_savings).collect());
    info!("bench: {} files, {} repeats, {:.3}s", traces.len(), a.repeats, wall);
    writeln!(
        err,
        "{} traces x {} repeats: prefix fraction {}, savings {:.4}, {:.2} ms per run",
        traces.len(),
        a.repeats,
        mean_prefix.map_or("n/a".into(), |p| format!("{p:.4}")),
        mean_savings.unwrap_or(0.0),
        1e3 * wall / runs
    )?;
    emit(
        out,
        &json!({
            "traces": traces.len(),
            "repeats": a.repeats,
            "mean_prefix_fraction": mean_prefix,
            "mean_savings_fraction": mean_savings,
            "mean_model_savings": mean_model,
            "wall_time_s": wall,
            "mean_run_time_s": wall / runs,
            "entries": entries,
        }),
    )
}

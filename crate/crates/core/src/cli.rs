//! Command-line front end: `simulate`, `alloc`, `cost`, `compare`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use num_bigint::BigInt;
use num_traits::Zero;

use crate::alloc::{AllocationPlan, Fraction, PlanSource, QuotaRule};
use crate::cost::{cost_model, latent_frames_for_video, CostParams, SpeedupProxy};
use crate::error::{Error, Result};
use crate::packer::{CachePolicy, PolicyKind};
use crate::sim::{self, parse_quota, SimConfig};

#[derive(Debug, Parser)]
#[command(name = "packcache", about = "Budget-bounded KV-cache packing for frame-structured generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the toy generation loop and write its trace CSV.
    Simulate(SimulateArgs),
    /// Print the allocation plan for a window.
    Alloc(AllocArgs),
    /// Print analytic attended-key tables.
    Cost(CostArgs),
    /// Run all three policies on one seed, side by side.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
struct SimOverrides {
    /// key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    frames: Option<usize>,
    /// Video frames, converted to latent frames at 4x compression.
    #[arg(long, conflicts_with = "frames")]
    video_frames: Option<usize>,
    #[arg(long)]
    tokens: Option<usize>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    keep_prob: Option<f64>,
}

impl SimOverrides {
    fn resolve(&self) -> Result<SimConfig> {
        let mut cfg = match &self.config {
            Some(path) => SimConfig::load(path)?,
            None => SimConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(f) = self.frames {
            cfg.num_latent_frames = f;
        }
        if let Some(v) = self.video_frames {
            cfg.num_latent_frames = latent_frames_for_video(v);
        }
        if let Some(n) = self.tokens {
            cfg.tokens_per_frame = n;
        }
        if let Some(w) = self.window {
            cfg.window = w;
        }
        if let Some(p) = self.keep_prob {
            cfg.keep_prob = p;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    sim: SimOverrides,
    #[arg(long)]
    policy: Option<PolicyKind>,
    /// Trace CSV destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Region statistics CSV.
    #[arg(long)]
    stats: Option<PathBuf>,
    /// Pack report CSV.
    #[arg(long)]
    reports: Option<PathBuf>,
    /// JSON summary record.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AllocArgs {
    #[arg(long, default_value_t = 4)]
    w: usize,
    /// Decay factor; the half-life closed form is used when omitted.
    #[arg(long)]
    rho: Option<f64>,
    /// Quota rule: `none`, `strict:<p>/<q>` or `frame:<k>`.
    #[arg(long, default_value = "none")]
    quota: String,
    /// Strict per-frame floor, decimal or `p/q`; shorthand for `--quota strict:<b_min>`.
    #[arg(long, conflicts_with = "quota")]
    b_min: Option<String>,
    #[arg(long, default_value_t = 4084)]
    b_one: usize,
}

#[derive(Debug, Args)]
struct CostArgs {
    /// `full`, `sliding`, `packcache` or `all`.
    #[arg(long, default_value = "all")]
    policy: String,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long, conflicts_with = "frames")]
    video_frames: Option<usize>,
    #[arg(long, default_value_t = 4084)]
    tokens: usize,
    #[arg(long, default_value_t = 4333)]
    anchors: usize,
    #[arg(long, default_value_t = 4)]
    window: usize,
    /// Decimal or `p/q`.
    #[arg(long, default_value = "1")]
    keep_prob: String,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[command(flatten)]
    sim: SimOverrides,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Exact rational from `p/q` or a decimal string.
pub fn parse_fraction(s: &str) -> Result<Fraction> {
    let bad = || Error::InvalidArgument(format!("cannot parse `{s}` as a fraction"));
    if let Some((n, d)) = s.split_once('/') {
        let n: BigInt = n.trim().parse().map_err(|_| bad())?;
        let d: BigInt = d.trim().parse().map_err(|_| bad())?;
        if d.is_zero() {
            return Err(bad());
        }
        return Ok(Fraction::new(n, d));
    }
    let (int_part, frac_part) = s.split_once('.').unwrap_or((s, ""));
    if frac_part.chars().any(|c| !c.is_ascii_digit()) {
        return Err(bad());
    }
    let digits = format!("{int_part}{frac_part}");
    let numer: BigInt = digits.parse().map_err(|_| bad())?;
    let denom = BigInt::from(10u32).pow(frac_part.len() as u32);
    Ok(Fraction::new(numer, denom))
}

fn open_out(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(std::io::stdout()),
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn simulate(args: &SimulateArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = args.sim.resolve()?;
    if let Some(kind) = args.policy {
        cfg.policy.kind = kind;
    }
    let trace = sim::run(cfg)?;
    match &args.out {
        Some(p) => trace.write_csv(create(p)?)?,
        None => trace.write_csv(&mut *out)?,
    }
    if let Some(p) = &args.stats {
        trace.write_stats_csv(create(p)?)?;
    }
    if let Some(p) = &args.reports {
        trace.write_reports_csv(create(p)?)?;
    }
    if let Some(p) = &args.summary {
        std::fs::write(p, trace.summary_json() + "\n")?;
    }
    Ok(())
}

fn alloc(args: &AllocArgs, out: &mut dyn Write) -> Result<()> {
    let source = match args.rho {
        Some(rho) => PlanSource::Decay(rho),
        None => PlanSource::ClosedForm,
    };
    let quota = match &args.b_min {
        Some(b) => QuotaRule::Strict(parse_fraction(b)?),
        None => parse_quota(&args.quota)?,
    };
    if args.w == 0 {
        return Err(Error::InvalidArgument("--w must be >= 1".into()));
    }
    let plan = AllocationPlan::build(args.w, &source, &quota, args.b_one)?;
    writeln!(out, "{plan}")?;
    Ok(())
}

fn cost(args: &CostArgs, out: &mut dyn Write) -> Result<()> {
    let frames = match (args.frames, args.video_frames) {
        (Some(f), _) => f,
        (None, Some(v)) => latent_frames_for_video(v),
        (None, None) => latent_frames_for_video(48),
    };
    let mut params = CostParams::new(frames, args.tokens, args.window, args.anchors);
    params.keep_prob = parse_fraction(&args.keep_prob)?;
    let kinds: Vec<PolicyKind> = if args.policy == "all" {
        vec![PolicyKind::Full, PolicyKind::SlidingWindow, PolicyKind::PackCache]
    } else {
        vec![args.policy.parse()?]
    };
    for kind in &kinds {
        let table = cost_model(&CachePolicy::with_kind(*kind), &params)?;
        writeln!(out, "# policy={kind} frames={frames} tokens={} window={} anchors={} keep_prob={}",
            params.tokens, params.window, params.anchors, params.keep_prob)?;
        table.write_csv(&mut *out)?;
    }
    if kinds.contains(&PolicyKind::Full) && kinds.contains(&PolicyKind::PackCache) {
        let s = SpeedupProxy::compute(&params, &CachePolicy::pack_cache())?;
        writeln!(
            out,
            "# full/packcache total={} ({:.4}) last={} ({:.4})",
            s.total_ratio,
            s.total_f64(),
            s.last_ratio,
            s.last_f64()
        )?;
    }
    Ok(())
}

fn compare(args: &CompareArgs, out: &mut dyn Write) -> Result<()> {
    let base = args.sim.resolve()?;
    let kinds = [PolicyKind::Full, PolicyKind::SlidingWindow, PolicyKind::PackCache];
    let traces = kinds
        .iter()
        .map(|&kind| {
            let mut cfg = base.clone();
            cfg.policy.kind = kind;
            sim::run(cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut sink = open_out(&args.out)?;
    let target: &mut dyn Write = if args.out.is_some() { &mut *sink } else { out };
    let mut w = csv::Writer::from_writer(target);
    let mut header = vec!["frame_index".to_string()];
    for k in &kinds {
        header.push(format!("{k}_attended"));
    }
    for k in &kinds {
        header.push(format!("{k}_occupancy"));
    }
    w.write_record(&header)?;
    for i in 0..base.num_latent_frames {
        let mut row = vec![(i + 1).to_string()];
        row.extend(traces.iter().map(|t| t.frames[i].attended_keys.to_string()));
        row.extend(traces.iter().map(|t| t.frames[i].occupancy.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Runs the CLI with explicit output streams and returns the process exit code.
pub fn run_cli<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let _ = if code == 0 {
                write!(out, "{text}")
            } else {
                write!(err, "{text}")
            };
            return code;
        }
    };
    let result = match &cli.command {
        Command::Simulate(a) => simulate(a, out),
        Command::Alloc(a) => alloc(a, out),
        Command::Cost(a) => cost(a, out),
        Command::Compare(a) => compare(a, out),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use atsc_core::analysis::{mae_sweep, plt_bound, tradeoff, MeasurementModel, PltQuery, TradeoffQuery};
use atsc_core::array::{gain, ArrayConfig};
use atsc_core::channel::linear_to_db;
use atsc_core::harness::experiment::{run_experiment, write_cdf_csv, write_trace_csv, write_trials_csv};
use atsc_core::harness::metrics::Summary;
use atsc_core::harness::trajectory::{km_per_h_to_m_per_s, synth_trajectory, RouteProfile, SLOT_DURATION_S};
use atsc_core::measurement::PilotConfig;
use atsc_core::sc_tracker::TrackerParams;

mod config;

use config::RunConfig;

#[derive(Parser)]
#[command(name = "atsc", version, about = "Adaptive mmWave beam tracking simulator")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Worker threads for trials and sweep cells (default: all cores).
    #[arg(long, global = true)]
    parallel: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Trials per run or Monte Carlo draws per sweep cell.
    #[arg(long, global = true)]
    trials: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario from a TOML config; writes trials.csv, cdf.csv, trace_<k>.csv and summary.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Fix the tracking interval instead of estimating it.
        #[arg(long)]
        fixed_tf: Option<u32>,
    },
    /// MAE after one update over pilot length × perturbation × step (mae_sweep.csv).
    MaeSweep(MaeArgs),
    /// Loss-of-track bound over angular change × pilot length (plt_sweep.csv).
    PltSweep(PltArgs),
    /// Minimum pilot length and overhead index per tracking target (tradeoff.csv).
    Tradeoff(TradeoffArgs),
    /// Synthetic route with paths sampled along it (trajectory.csv).
    SynthTraj {
        #[arg(long, value_enum, default_value = "nlos-los-nlos")]
        profile: Profile,
        /// Reported slot count is for this speed.
        #[arg(long, default_value_t = 72.0)]
        speed_kmh: f64,
        #[arg(long, default_value_t = SLOT_DURATION_S)]
        slot_s: f64,
    },
    /// Beamforming gain versus pointing error (gain_curve.csv).
    GainCurve {
        #[arg(long, value_delimiter = ',', default_values_t = vec![16usize, 32, 64])]
        elements: Vec<usize>,
        /// Error span on each side, in half beam widths.
        #[arg(long, default_value_t = 4.0)]
        span_over_b: f64,
        #[arg(long, default_value_t = 801)]
        points: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Profile {
    NlosLosNlos,
    LosOnly,
}

impl From<Profile> for RouteProfile {
    fn from(p: Profile) -> Self {
        match p {
            Profile::NlosLosNlos => RouteProfile::NlosLosNlos,
            Profile::LosOnly => RouteProfile::LosOnly,
        }
    }
}

#[derive(Args)]
struct LinkArgs {
    /// Elements at the tracking side.
    #[arg(long, default_value_t = 64)]
    elements: usize,
    /// Pre-beamforming SNR.
    #[arg(long, default_value_t = -10.0, allow_hyphen_values = true)]
    gamma_db: f64,
}

#[derive(Args)]
struct MaeArgs {
    #[command(flatten)]
    link: LinkArgs,
    #[arg(long, value_delimiter = ',', default_values_t = vec![8usize, 16, 64])]
    pilots: Vec<usize>,
    /// Perturbations in half beam widths.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.5, 0.75, 1.0, 1.25, 1.5])]
    perturbs: Vec<f64>,
    /// Step grid `start:stop:count` in half beam widths.
    #[arg(long, default_value = "0.01:0.8:80")]
    steps: String,
    /// Replace each statistic by its mean.
    #[arg(long)]
    noiseless: bool,
}

#[derive(Args)]
struct PltArgs {
    #[command(flatten)]
    link: LinkArgs,
    #[arg(long, value_delimiter = ',', default_values_t = vec![4usize, 8, 16, 32])]
    pilots: Vec<usize>,
    /// Angular changes per interval in half beam widths.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7])]
    a_grid: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    perturb_over_b: f64,
    #[arg(long, default_value_t = 0.25)]
    step_over_b: f64,
    #[arg(long, default_value_t = 101)]
    error_grid: usize,
}

#[derive(Args)]
struct TradeoffArgs {
    #[command(flatten)]
    link: LinkArgs,
    /// Target probability of never losing track.
    #[arg(long, default_value_t = 0.95)]
    target: f64,
    /// Total angular change to follow, in half beam widths.
    #[arg(long, default_value_t = 10.0)]
    total_change_over_b: f64,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7])]
    a_grid: Vec<f64>,
    #[arg(long, default_value_t = 201)]
    error_grid: usize,
    #[arg(long, default_value_t = 64)]
    max_pilot: usize,
}

fn csv_writer(dir: &Path, name: &str) -> Result<csv::Writer<BufWriter<File>>> {
    let path = dir.join(name);
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok(csv::Writer::from_writer(BufWriter::new(file)))
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    Ok(BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?))
}

/// `start:stop:count`, endpoints included.
fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = text.split(':').collect();
    let [start, stop, count] = parts[..] else {
        bail!("grid `{text}` is not start:stop:count");
    };
    let (start, stop): (f64, f64) = (start.parse()?, stop.parse()?);
    let count: usize = count.parse()?;
    if count < 2 {
        return Ok(vec![start]);
    }
    Ok((0..count).map(|i| start + (stop - start) * i as f64 / (count - 1) as f64).collect())
}

#[derive(Serialize)]
struct RunSummary<'a> {
    name: &'a str,
    seed: u64,
    slots: u64,
    fixed_tf: Option<u32>,
    #[serde(flatten)]
    summary: &'a Summary,
}

fn cmd_run(common: &Common, config: &Path, fixed_tf: Option<u32>) -> Result<()> {
    let mut cfg = RunConfig::from_path(config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(trials) = common.trials {
        cfg.trials = trials;
    }
    if fixed_tf.is_some() {
        cfg.atsc.fixed_tf = fixed_tf;
    }
    let base = config.parent().unwrap_or(Path::new("."));
    let spec = cfg.to_spec(base)?;
    let result = run_experiment(&spec)?;

    write_trials_csv(&result.trials, create(&common.out, "trials.csv")?)?;
    write_cdf_csv(&result.summary, create(&common.out, "cdf.csv")?)?;
    for t in &result.trials {
        if let Some(trace) = &t.trace {
            write_trace_csv(trace, create(&common.out, &format!("trace_{}.csv", t.trial))?)?;
        }
    }
    let summary = RunSummary {
        name: &spec.name,
        seed: spec.seed,
        slots: spec.num_slots,
        fixed_tf: spec.atsc.fixed_tf,
        summary: &result.summary,
    };
    serde_json::to_writer_pretty(create(&common.out, "summary.json")?, &summary)?;
    let s = &result.summary;
    println!(
        "{}: {} trials, realign fraction {:.4}, mean κ {:.3e}, median gap {:.3} dB, overhead {:.3e}",
        spec.name, s.trials, s.realign_fraction, s.mean_kappa, s.median_snr_gap_db, s.mean_overhead_fraction
    );
    Ok(())
}

fn cmd_mae(common: &Common, args: &MaeArgs) -> Result<()> {
    let array = ArrayConfig::new(args.link.elements)?;
    let b = array.half_beam_width();
    let template = TrackerParams::recommended(b, PilotConfig::new(1));
    let perturbs: Vec<f64> = args.perturbs.iter().map(|p| p * b).collect();
    let steps: Vec<f64> = parse_grid(&args.steps)?.into_iter().map(|s| s * b).collect();
    let model = if args.noiseless { MeasurementModel::Noiseless } else { MeasurementModel::Noisy };
    let rows = mae_sweep(
        &array,
        &template,
        args.link.gamma_db,
        &args.pilots,
        &perturbs,
        &steps,
        common.trials.unwrap_or(100_000),
        common.seed.unwrap_or(0),
        model,
    )?;
    let mut w = csv_writer(&common.out, "mae_sweep.csv")?;
    w.write_record(["delta", "Delta", "n", "mae_over_B"])?;
    for r in rows {
        w.write_record([(r.step / b).to_string(), (r.perturb / b).to_string(), r.pilot_length.to_string(), r.mae_over_b.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_plt(common: &Common, args: &PltArgs) -> Result<()> {
    let array = ArrayConfig::new(args.link.elements)?;
    let b = array.half_beam_width();
    let seed = common.seed.unwrap_or(0);
    let mut w = csv_writer(&common.out, "plt_sweep.csv")?;
    w.write_record(["a_over_B", "n", "J_a", "stderr"])?;
    for &n in &args.pilots {
        let params = TrackerParams {
            perturb: args.perturb_over_b * b,
            step: args.step_over_b * b,
            pilot: PilotConfig::new(n),
            half_beam: b,
        };
        for &a in &args.a_grid {
            let q = PltQuery {
                array,
                params,
                a: a * b,
                gamma_db: args.link.gamma_db,
                error_grid: args.error_grid,
                trials: common.trials.unwrap_or(50_000),
            };
            let e = plt_bound(&q, seed)?;
            w.write_record([a.to_string(), n.to_string(), e.value.to_string(), e.stderr.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn cmd_tradeoff(common: &Common, args: &TradeoffArgs) -> Result<()> {
    let array = ArrayConfig::new(args.link.elements)?;
    let b = array.half_beam_width();
    let q = TradeoffQuery {
        array,
        template: TrackerParams::recommended(b, PilotConfig::new(1)),
        gamma_db: args.link.gamma_db,
        f: args.target,
        total_change: args.total_change_over_b * b,
        a_grid: args.a_grid.iter().map(|a| a * b).collect(),
        updates: None,
        error_grid: args.error_grid,
        trials: common.trials.unwrap_or(20_000),
        max_pilot: args.max_pilot,
    };
    let rows = tradeoff(&q, common.seed.unwrap_or(2024))?;
    let mut w = csv_writer(&common.out, "tradeoff.csv")?;
    w.write_record(["a_over_B", "N_a", "n_star", "rho"])?;
    for r in rows {
        w.write_record([r.a_over_b.to_string(), r.updates.to_string(), r.n_star.to_string(), r.rho.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_synth(common: &Common, profile: Profile, speed_kmh: f64, slot_s: f64) -> Result<()> {
    if !(speed_kmh > 0.0 && slot_s > 0.0) {
        bail!("speed and slot duration must be positive");
    }
    let data = synth_trajectory(profile.into(), common.seed.unwrap_or(0))?;
    data.write_csv(create(&common.out, "trajectory.csv")?)?;
    let slots = (data.length_m() / (km_per_h_to_m_per_s(speed_kmh) * slot_s)).floor() as u64 + 1;
    println!("{:.1} m route, {} samples, {} slots at {} km/h", data.length_m(), data.samples().len(), slots, speed_kmh);
    Ok(())
}

fn cmd_gain(common: &Common, elements: &[usize], span_over_b: f64, points: usize) -> Result<()> {
    if points < 2 || !(span_over_b > 0.0) {
        bail!("need at least two points and a positive span");
    }
    let mut w = csv_writer(&common.out, "gain_curve.csv")?;
    w.write_record(["n", "error_over_B", "gain", "gain_db_rel_peak"])?;
    for &n in elements {
        let cfg = ArrayConfig::new(n)?;
        let b = cfg.half_beam_width();
        for i in 0..points {
            let x = -span_over_b + 2.0 * span_over_b * i as f64 / (points - 1) as f64;
            let g = gain(&cfg, x * b);
            w.write_record([n.to_string(), x.to_string(), g.to_string(), linear_to_db(g / n as f64).to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(k) = cli.common.parallel {
        rayon::ThreadPoolBuilder::new().num_threads(k).build_global()?;
    }
    fs::create_dir_all(&cli.common.out).with_context(|| format!("creating {}", cli.common.out.display()))?;
    match &cli.command {
        Command::Run { config, fixed_tf } => cmd_run(&cli.common, config, *fixed_tf),
        Command::MaeSweep(args) => cmd_mae(&cli.common, args),
        Command::PltSweep(args) => cmd_plt(&cli.common, args),
        Command::Tradeoff(args) => cmd_tradeoff(&cli.common, args),
        Command::SynthTraj { profile, speed_kmh, slot_s } => cmd_synth(&cli.common, *profile, *speed_kmh, *slot_s),
        Command::GainCurve { elements, span_over_b, points } => cmd_gain(&cli.common, elements, *span_over_b, *points),
    }
}

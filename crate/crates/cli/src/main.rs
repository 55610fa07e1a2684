use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ispinv::check::{run_all, CheckSettings};
use ispinv::degradation::{
    degradation_map, degradation_summary, DegradationOptions, DownsampleKernel,
};
use ispinv::eval::{evaluate, EvalConfig, EvalInput, EvalSummary, DEFAULT_LAMBDA_SWEEP};
use ispinv::io::{self, Report};
use ispinv::synth::{generate_corpus, parse_presets, SynthConfig};
use ispinv::{
    forward_isp, invert_image, naive_invert_image, BayerPattern, InversionConfig, Stages,
};

mod table;

/// Forward camera ISP, its Jacobian, and robust inverse ISP.
#[derive(Parser, Debug)]
#[command(name = "ispinv", version, about)]
struct Cli {
    /// Worker threads for pixel-parallel work (0 = one per core).
    #[arg(long, global = true, env = "ISPINV_THREADS", default_value_t = 0)]
    threads: usize,

    /// Log filter (error, warn, info, debug).
    #[arg(long, global = true, env = "ISPINV_LOG", default_value = "warn")]
    log_level: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a linear image to sRGB.
    Render(RenderArgs),
    /// Robust residual inversion of S_d around L_b.
    Invert(InvertArgs),
    /// Direct inversion of S_d, step by step.
    InvertNaive(NaiveArgs),
    /// Raw-domain degradation map L_lr - Mos(Down(L_b)).
    Degradation(DegradationArgs),
    /// Generate a synthetic stress corpus.
    Synth(SynthArgs),
    /// Compare naive, first-order-only and two-stage inversion on a corpus.
    Eval(EvalArgs),
    /// Self-test of the Jacobian, remainder scaling and SVD.
    Check(CheckArgs),
}

#[derive(Args, Debug)]
struct RenderArgs {
    /// Linear input image (float container).
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    params: PathBuf,
    /// Output path; a .png extension writes 8-bit PNG, anything else a float container.
    #[arg(long)]
    out: PathBuf,
    /// Reject unknown keys in the parameter file.
    #[arg(long)]
    strict_params: bool,
}

#[derive(Args, Debug)]
struct InvertArgs {
    #[arg(long)]
    sd: PathBuf,
    #[arg(long)]
    lb: PathBuf,
    /// Render of L_b; recomputed when omitted.
    #[arg(long)]
    sb: Option<PathBuf>,
    #[arg(long)]
    params: PathBuf,
    #[arg(long, default_value_t = 1e-6)]
    beta: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda_r: f64,
    #[arg(long, default_value_t = 1e-3)]
    sigma_rel: f64,
    #[arg(long, default_value_t = 1e-3)]
    cond_min: f64,
    /// Use the ridge update on every pixel (ablation).
    #[arg(long)]
    first_order_only: bool,
    /// Fail when S_b disagrees with the render of L_b, and on unknown parameter keys.
    #[arg(long)]
    strict: bool,
    /// Write the inversion report (JSON) here.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct NaiveArgs {
    #[arg(long)]
    sd: PathBuf,
    #[arg(long)]
    params: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct DegradationArgs {
    /// LR raw reference frame (single-plane float container).
    #[arg(long)]
    lr_raw: PathBuf,
    #[arg(long)]
    lb: PathBuf,
    #[arg(long, default_value_t = 4)]
    factor: usize,
    #[arg(long, default_value = "RGGB")]
    pattern: BayerPattern,
    /// Downsampling kernel: area or bilinear.
    #[arg(long, default_value = "area")]
    kernel: DownsampleKernel,
    #[arg(long)]
    out: PathBuf,
    /// Write summary statistics (JSON) here.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Image size, `N` or `HxW`.
    #[arg(long, default_value = "64", value_parser = parse_size)]
    size: (usize, usize),
    #[arg(long, default_value_t = 0.3)]
    saturation: f64,
    #[arg(long, default_value_t = 0.02)]
    perturb_scale: f64,
    #[arg(long, default_value_t = 20)]
    count: usize,
    /// CCM preset file replacing the bundled presets.
    #[arg(long)]
    presets: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Corpus directory written by `synth`.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 1e-6)]
    beta: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda_r: f64,
    #[arg(long, default_value_t = 1e-3)]
    sigma_rel: f64,
    #[arg(long, default_value_t = 1e-3)]
    cond_min: f64,
    /// λ_r values for the sweep, comma separated.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    sweep: Option<Vec<f64>>,
    /// Sweep over 0, 0.2, ..., 1.
    #[arg(long, conflicts_with = "sweep")]
    default_sweep: bool,
    /// Write the full report (JSON) here.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Write the table here instead of standard output.
    #[arg(long)]
    table: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10_000)]
    pixels: usize,
    #[arg(long, default_value_t = 10_000)]
    matrices: usize,
    #[arg(long, default_value_t = 64)]
    remainder_size: usize,
    #[arg(long)]
    report: Option<PathBuf>,
}

fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let parse = |t: &str| {
        t.trim()
            .parse::<usize>()
            .map_err(|e| format!("bad size {s:?}: {e}"))
    };
    match s.split_once(['x', 'X']) {
        Some((h, w)) => Ok((parse(h)?, parse(w)?)),
        None => parse(s).map(|n| (n, n)),
    }
}

fn init_logging(level: &str) {
    env_logger::Builder::new()
        .parse_filters(level)
        .format(|buf, record| {
            writeln!(
                buf,
                "level={} target={} {}",
                record.level().as_str().to_lowercase(),
                record.target(),
                record.args()
            )
        })
        .target(env_logger::Target::Stderr)
        .init();
}

fn write_srgb_any(path: &Path, img: &ispinv::SrgbImage) -> Result<()> {
    if io::is_png(path) {
        io::write_srgb_png(path, img)?;
    } else {
        io::write_rgb(path, img)?;
    }
    Ok(())
}

fn inversion_config(beta: f64, lambda_r: f64, sigma_rel: f64, cond_min: f64) -> InversionConfig {
    InversionConfig {
        beta,
        lambda_r,
        sigma_rel_threshold: sigma_rel,
        cond_sigma_min: cond_min,
        ..Default::default()
    }
}

fn render(a: &RenderArgs) -> Result<()> {
    let params = io::read_params(&a.params, a.strict_params)?;
    let (l, _) = io::read_linear(&a.input)?;
    let s = forward_isp(&l, &params)?;
    write_srgb_any(&a.out, &s)
}

fn invert(a: &InvertArgs) -> Result<()> {
    let params = io::read_params(&a.params, a.strict)?;
    let (s_d, _) = io::read_srgb(&a.sd)?;
    let (l_b, _) = io::read_linear(&a.lb)?;
    let s_b = match &a.sb {
        Some(p) => Some(io::read_srgb(p)?.0),
        None => None,
    };
    let cfg = InversionConfig {
        stages: if a.first_order_only {
            Stages::FirstOrderOnly
        } else {
            Stages::TwoStage
        },
        strict: a.strict,
        ..inversion_config(a.beta, a.lambda_r, a.sigma_rel, a.cond_min)
    };
    let (l_d, report) = invert_image(&s_d, s_b.as_ref(), &l_b, &params, &cfg)?;
    io::write_rgb(&a.out, &l_d)?;
    log::info!(
        "event=invert pixels={} tsvd={} zero_jacobian={} clamped={}",
        report.n_pixels,
        report.n_tsvd,
        report.n_zero_jacobian,
        report.output_clamped
    );
    if let Some(path) = &a.report {
        io::write_json(path, &Report::new(None, &cfg, &report))?;
    }
    Ok(())
}

fn invert_naive(a: &NaiveArgs) -> Result<()> {
    let params = io::read_params(&a.params, false)?;
    let (s_d, _) = io::read_srgb(&a.sd)?;
    io::write_rgb(&a.out, &naive_invert_image(&s_d, &params)?)?;
    Ok(())
}

fn degradation(a: &DegradationArgs) -> Result<()> {
    let l_lr = io::read_raw(&a.lr_raw)?;
    let (l_b, _) = io::read_linear(&a.lb)?;
    let opts = DegradationOptions {
        factor: a.factor,
        kernel: a.kernel,
        pattern: a.pattern,
    };
    let m = degradation_map(&l_lr, &l_b, &opts)?;
    io::write_degradation(&a.out, &m)?;
    if let Some(path) = &a.summary {
        io::write_json(path, &Report::new(None, &opts, &degradation_summary(&m)))?;
    }
    Ok(())
}

fn synth(a: &SynthArgs) -> Result<()> {
    let mut cfg = SynthConfig {
        seed: a.seed,
        height: a.size.0,
        width: a.size.1,
        saturation_fraction: a.saturation,
        perturbation_scale: a.perturb_scale,
        ..Default::default()
    };
    if let Some(path) = &a.presets {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        cfg.ccm_presets = parse_presets(&text)?.into_iter().map(|p| p.ccm).collect();
    }
    let items = generate_corpus(&cfg, a.count)?;
    let manifest = io::write_corpus(&a.out_dir, &cfg, &items)?;
    log::info!(
        "event=synth items={} dir={}",
        manifest.count,
        a.out_dir.display()
    );
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<()> {
    let (manifest, items) = io::read_corpus(&a.corpus)?;
    let cfg = EvalConfig {
        inversion: inversion_config(a.beta, a.lambda_r, a.sigma_rel, a.cond_min),
        lambda_sweep: match (&a.sweep, a.default_sweep) {
            (Some(v), _) => v.clone(),
            (None, true) => DEFAULT_LAMBDA_SWEEP.to_vec(),
            (None, false) => Vec::new(),
        },
    };
    let inputs: Vec<EvalInput> = items
        .iter()
        .map(|it| EvalInput {
            index: it.index,
            params: &it.params,
            l_b: &it.l_b,
            s_d: &it.s_d,
        })
        .collect();
    let summary: EvalSummary = evaluate(&inputs, &cfg)?;
    if let Some(path) = &a.report {
        io::write_json(path, &Report::new(Some(manifest.seed), &cfg, &summary))?;
    }
    let text = table::render(&summary);
    match &a.table {
        Some(path) => {
            std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn check(a: &CheckArgs) -> Result<()> {
    let settings = CheckSettings {
        seed: a.seed,
        jacobian_pixels: a.pixels,
        svd_matrices: a.matrices,
        remainder_size: a.remainder_size,
    };
    let outcomes = run_all(&settings)?;
    for o in &outcomes {
        println!(
            "{} {} {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.name,
            o.detail
        );
    }
    if let Some(path) = &a.report {
        io::write_json(path, &Report::new(Some(a.seed), &settings, &outcomes))?;
    }
    let failed: Vec<&str> = outcomes
        .iter()
        .filter(|o| !o.passed)
        .map(|o| o.name.as_str())
        .collect();
    if !failed.is_empty() {
        bail!("self-check failed: {}", failed.join(", "));
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Render(a) => render(a),
        Command::Invert(a) => invert(a),
        Command::InvertNaive(a) => invert_naive(a),
        Command::Degradation(a) => degradation(a),
        Command::Synth(a) => synth(a),
        Command::Eval(a) => eval(a),
        Command::Check(a) => check(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(&cli.log_level);
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
    {
        Ok(pool) => pool,
        Err(e) => {
            log::error!("event=thread_pool error=\"{e}\"");
            return ExitCode::FAILURE;
        }
    };
    match pool.install(|| run(&cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("event=failed error=\"{e:#}\"");
            ExitCode::FAILURE
        }
    }
}

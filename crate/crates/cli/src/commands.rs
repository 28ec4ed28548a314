use std::fmt;
use std::io::Write;
use std::time::Instant;

use anyhow::{anyhow, Context};
use serde::Serialize;

use sdtrade::data_io::{
    cache_features, load_cifar10, load_image_dir, synthesize, DatasetHandle, DatasetKind, FeatureCache, SynthKind,
    SynthParams,
};
use sdtrade::experiments::{
    self, auto_taus, linear_samples, lipschitz_ratios, loss_surface, tradeoff_samples, FpMode, LipschitzConfig,
    LipschitzInput, SurfaceConfig, TradeoffConfig, TradeoffCurve,
};
use sdtrade::extractors::{
    BlacklightConfig, Extractor, ExtractorConfig, LinearConfig, LinearExtractor, PihaConfig, ToyConfig,
};
use sdtrade::sampling::{FiniteDifference, ProjectionConfig, Purpose, RngStream, ToyLoss, ToyModelConfig};
use sdtrade::theory::{general_bound, gradient_bound, toy_bound, BoundInput};

use crate::args::*;
use crate::output::Staging;

/// Failure class; decides the exit code.
pub enum CliError {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Config(e) | Self::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

fn config(msg: impl fmt::Display) -> CliError {
    CliError::Config(anyhow!("{msg}"))
}

fn runtime(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Runtime(e.into())
}

/// Library errors caused by bad parameters are config errors; the rest are runtime errors.
fn lib<E: Into<sdtrade::Error>>(e: E) -> CliError {
    let e: sdtrade::Error = e.into();
    if e.is_config() {
        CliError::Config(e.into())
    } else {
        CliError::Runtime(e.into())
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: String,
    argv: &'a [String],
    seed: u64,
    threads: Option<usize>,
    config: &'a Command,
    outputs: Vec<String>,
    wall_time_s: f64,
}

fn version_string() -> String {
    option_env!("SDTRADE_GIT_DESCRIBE").map(str::to_owned).unwrap_or_else(|| format!("v{}", env!("CARGO_PKG_VERSION")))
}

pub fn run(cli: &Cli, argv: &[String]) -> Result<(), CliError> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(config("--threads must be >= 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().map_err(runtime)?;
    }
    let start = Instant::now();
    let mut stage =
        Staging::new(&cli.out).with_context(|| format!("creating {}", cli.out.display())).map_err(runtime)?;
    let mut summary = Vec::new();
    let seed = cli.seed;
    match &cli.command {
        Command::Tradeoff(a) => tradeoff(a, seed, &mut stage, &mut summary)?,
        Command::ToyValidate(a) => toy_validate(a, seed, &mut stage, &mut summary)?,
        Command::LinearValidate(a) => linear_validate(a, seed, &mut stage, &mut summary)?,
        Command::Lipschitz(a) => lipschitz(a, seed, &mut stage, &mut summary)?,
        Command::LossSurface(a) => surface(a, seed, &mut stage, &mut summary)?,
        Command::GradConcentration(a) => concentration(a, seed, &mut stage, &mut summary)?,
        Command::Bounds(a) => bounds(a, &mut stage, &mut summary)?,
        Command::Extract(a) => extract(a, seed, &mut stage, &mut summary)?,
    }
    let mut outputs = stage.file_names().to_vec();
    outputs.push("manifest.json".into());
    let manifest = Manifest {
        tool: "sdtrade",
        version: version_string(),
        argv,
        seed,
        threads: cli.threads,
        config: &cli.command,
        outputs,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    stage.write_json("manifest.json", &manifest).map_err(runtime)?;
    stage.finalize().context("moving outputs into place").map_err(runtime)?;
    let mut stdout = std::io::stdout().lock();
    for line in summary {
        writeln!(stdout, "{line}").map_err(runtime)?;
    }
    Ok(())
}

fn check_positive(name: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(config(format!("{name} must be a positive number, got {v}")))
    }
}

fn check_taus(taus: &[f64]) -> Result<(), CliError> {
    if taus.is_empty() || taus.iter().any(|t| !(*t >= 0.0)) || taus.windows(2).any(|w| w[0] > w[1]) {
        return Err(config("--taus must be non-negative and ascending"));
    }
    Ok(())
}

fn parse_dims(s: &str) -> Result<(usize, usize, usize), CliError> {
    let parts: Vec<usize> = s
        .split('x')
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| config(format!("--dims must look like 32x32x3, got {s:?}")))?;
    match parts[..] {
        [h, w, c] => Ok((h, w, c)),
        [h, w] => Ok((h, w, 3)),
        _ => Err(config(format!("--dims must look like 32x32x3, got {s:?}"))),
    }
}

fn validate_dataset(a: &DatasetArgs) -> Result<(), CliError> {
    if a.n_images == 0 {
        return Err(config("--n-images must be >= 1"));
    }
    if a.synthetic.is_some() {
        parse_dims(&a.dims)?;
        if !(a.synth_sigma >= 0.0 && a.synth_sigma.is_finite()) {
            return Err(config("--synth-sigma must be >= 0"));
        }
    }
    Ok(())
}

fn load_dataset(a: &DatasetArgs, seed: u64) -> Result<(DatasetHandle, String), CliError> {
    let stream = RngStream::for_purpose(seed, Purpose::Dataset, 0);
    let handle = match (a.synthetic, &a.data) {
        (Some(kind), _) => {
            let kind = match kind {
                SynthKindArg::GridGaussian => SynthKind::GridGaussian,
                SynthKindArg::RandomTexture => SynthKind::RandomTexture,
                SynthKindArg::PiecewiseSmooth => SynthKind::PiecewiseSmooth,
            };
            let params = SynthParams { sigma: a.synth_sigma, ..SynthParams::default() };
            synthesize(kind, parse_dims(&a.dims)?, a.n_images, params, seed).map_err(lib)?
        }
        (None, Some(path)) => match a.format {
            DataFormat::Cifar10 => load_cifar10(path, a.n_images, stream).map_err(lib)?,
            DataFormat::ImageDir => load_image_dir(path, a.n_images, stream).map_err(lib)?,
        },
        (None, None) => return Err(config("a dataset is required: pass --data or --synthetic")),
    };
    let name = match (handle.kind, a.synthetic) {
        (DatasetKind::Cifar10Binary, _) => "cifar10".to_owned(),
        (DatasetKind::ImageDir, _) => "image_dir".to_owned(),
        (DatasetKind::Synthetic, Some(SynthKindArg::GridGaussian)) => "synthetic_grid_gaussian".to_owned(),
        (DatasetKind::Synthetic, Some(SynthKindArg::PiecewiseSmooth)) => "synthetic_piecewise_smooth".to_owned(),
        (DatasetKind::Synthetic, _) => "synthetic_random_texture".to_owned(),
    };
    Ok((handle, name))
}

fn extractor_configs(a: &ExtractorArgs, input_dim: usize) -> Result<Vec<ExtractorConfig>, CliError> {
    if a.extractors.is_empty() {
        return Err(config("at least one --extractor is required"));
    }
    let mut out = Vec::new();
    for kind in &a.extractors {
        let cfg = match kind {
            ExtractorKind::Toy => ExtractorConfig::Toy(ToyConfig { bin_size: a.bin_size }),
            ExtractorKind::Blacklight => ExtractorConfig::Blacklight(BlacklightConfig {
                bin_size: a.bin_size,
                window: a.window,
                stride: a.stride,
                top_k: a.top_k,
            }),
            ExtractorKind::Piha => ExtractorConfig::Piha(PihaConfig { sigma: a.blur_sigma, block: a.block }),
            ExtractorKind::Linear => ExtractorConfig::Linear(LinearConfig {
                input_dim,
                output_dim: input_dim,
                scale: a.scale,
                condition_number: a.condition_number,
                seed: a.matrix_seed,
            }),
        };
        cfg.validate().map_err(lib)?;
        if !out.contains(&cfg) {
            out.push(cfg);
        }
    }
    Ok(out)
}

fn fmt_range(first: f64, last: f64) -> String {
    format!("{first:.4}..{last:.4}")
}

fn tradeoff(a: &TradeoffArgs, seed: u64, stage: &mut Staging, summary: &mut Vec<String>) -> Result<(), CliError> {
    validate_dataset(&a.dataset)?;
    extractor_configs(&a.extractor, 1)?;
    if a.betas.is_empty() || a.betas.iter().any(|b| !(*b >= 0.0 && b.is_finite())) {
        return Err(config("--betas must be finite and >= 0"));
    }
    if let Some(t) = &a.taus {
        check_taus(t)?;
    }
    if a.tau_points == 0 || a.n_base == 0 || a.n_pert == 0 {
        return Err(config("--tau-points, --n-base and --n-pert must be >= 1"));
    }
    if a.n_base > a.dataset.n_images {
        return Err(config("--n-base cannot exceed --n-images"));
    }
    let (data, dataset_name) = load_dataset(&a.dataset, seed)?;
    let dim = data.images[0].dim();
    let mode = match a.mode {
        FpModeArg::Pairwise => FpMode::Pairwise,
        FpModeArg::Streaming => FpMode::Streaming,
    };
    let mut curves = Vec::new();
    for cfg in extractor_configs(&a.extractor, dim)? {
        let ex = Extractor::new(&cfg).map_err(lib)?;
        let mut taus = a.taus.clone();
        for &beta in &a.betas {
            let tc = TradeoffConfig { beta, mode, n_base: a.n_base, n_pert: a.n_pert, max_pairs: a.max_pairs };
            let samples = tradeoff_samples(&ex, &data, &tc, seed).map_err(lib)?;
            let taus = taus.get_or_insert_with(|| auto_taus(&samples.fp_distances, a.tau_points));
            let points = samples.curve(taus).map_err(lib)?;
            let (first, last) = (points[0], points[points.len() - 1]);
            summary.push(format!(
                "tradeoff {} beta={beta}: {} taus in [{}, {}], alpha_fp {}, alpha_det {}",
                ex.name(),
                points.len(),
                first.tau,
                last.tau,
                fmt_range(first.alpha_fp, last.alpha_fp),
                fmt_range(first.alpha_det, last.alpha_det),
            ));
            curves.push(TradeoffCurve { extractor: ex.name().to_owned(), dataset: dataset_name.clone(), points });
        }
    }
    let w = stage.create("tradeoff.csv").map_err(runtime)?;
    experiments::write_tradeoff_csv(w, &curves).map_err(lib)
}

fn toy_validate(
    a: &ToyValidateArgs,
    seed: u64,
    stage: &mut Staging,
    summary: &mut Vec<String>,
) -> Result<(), CliError> {
    if a.d.is_empty() || a.d.contains(&0) {
        return Err(config("--d values must be >= 1"));
    }
    for &v in a.sigma.iter().chain(&a.beta) {
        check_positive("--sigma/--beta", v)?;
    }
    if a.trials < 1000 {
        return Err(config("--trials must be >= 1000"));
    }
    let mut rows = Vec::new();
    for &d in &a.d {
        for &sigma in &a.sigma {
            for &beta in &a.beta {
                let cfg = ToyModelConfig::new(d, sigma, beta).map_err(lib)?;
                let r = experiments::toy_validate(&cfg, a.trials, seed).map_err(lib)?;
                summary.push(format!(
                    "toy-validate d={d} sigma={sigma} beta={beta}: alpha_fp={:.5} alpha_det={:.5} bound={:.5} {}",
                    r.alpha_fp_hat,
                    r.alpha_det_hat,
                    r.bound,
                    if r.violated { "VIOLATED" } else { "ok" }
                ));
                rows.push(r);
            }
        }
    }
    let w = stage.create("toy_validate.csv").map_err(runtime)?;
    experiments::write_toy_validation_csv(w, &rows).map_err(lib)
}

fn linear_validate(
    a: &LinearValidateArgs,
    seed: u64,
    stage: &mut Staging,
    summary: &mut Vec<String>,
) -> Result<(), CliError> {
    if a.d == 0 || a.grid == 0 || a.condition_number.is_empty() {
        return Err(config("--d, --grid must be >= 1 and --condition-number non-empty"));
    }
    check_positive("--sigma", a.sigma)?;
    check_positive("--beta", a.beta)?;
    check_positive("--scale", a.scale)?;
    if let Some(t) = &a.taus {
        check_taus(t)?;
    }
    if a.n < 1000 || a.tau_points == 0 {
        return Err(config("--n must be >= 1000 and --tau-points >= 1"));
    }
    for &kappa in &a.condition_number {
        let cfg = LinearConfig {
            input_dim: a.d,
            output_dim: a.d,
            scale: a.scale,
            condition_number: kappa,
            seed: a.matrix_seed,
        };
        ExtractorConfig::Linear(cfg).validate().map_err(lib)?;
        let ext = LinearExtractor::from_config(&cfg).map_err(lib)?;
        let samples = linear_samples(&ext, a.sigma, a.grid, a.beta, a.n, seed).map_err(lib)?;
        let taus = match &a.taus {
            Some(t) => t.clone(),
            None => {
                let mut all: Vec<f64> = samples.fp_distances.iter().chain(&samples.det_distances).copied().collect();
                experiments::stats::sort_floats(&mut all);
                auto_taus(&all, a.tau_points)
            }
        };
        let v = samples.evaluate(&ext, &taus).map_err(lib)?;
        let violations = v.rows.iter().filter(|r| r.violated).count();
        summary.push(format!(
            "linear-validate kappa={kappa}: ratio={:.6} spread={:.5} {} taus, {} violations",
            v.lipschitz_ratio,
            v.spread,
            v.rows.len(),
            violations
        ));
        let w = stage.create(&format!("linear_validate_kappa{kappa}.csv")).map_err(runtime)?;
        experiments::write_linear_validation_csv(w, &v.rows).map_err(lib)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct LipschitzSummary<'a> {
    extractor: &'a str,
    dataset: &'a str,
    pairs: usize,
    skipped_zero_delta: usize,
    infinite_ratios: usize,
    spread: experiments::SpreadStats,
    histogram: &'a experiments::Histogram,
}

fn lipschitz(a: &LipschitzArgs, seed: u64, stage: &mut Staging, summary: &mut Vec<String>) -> Result<(), CliError> {
    validate_dataset(&a.dataset)?;
    extractor_configs(&a.extractor, 1)?;
    check_positive("--beta", a.beta)?;
    if a.pairs == 0 || a.bins == 0 {
        return Err(config("--pairs and --bins must be >= 1"));
    }
    let (data, dataset_name) = load_dataset(&a.dataset, seed)?;
    let cfg = LipschitzConfig { n_pairs: a.pairs, beta: a.beta, bins: a.bins };
    let mut summaries = Vec::new();
    let mut reports = Vec::new();
    for ecfg in extractor_configs(&a.extractor, data.images[0].dim())? {
        let ex = Extractor::new(&ecfg).map_err(lib)?;
        let r = lipschitz_ratios(&ex, LipschitzInput::Images(&data), &cfg, seed).map_err(lib)?;
        summary.push(format!(
            "lipschitz {}: {} pairs, p05={:.4} p95={:.4} cv={:.4} ratio={}",
            r.extractor,
            r.pairs.len(),
            r.spread.p05,
            r.spread.p95,
            r.spread.coefficient_of_variation,
            r.spread.empirical_ratio.map_or("n/a".into(), |x| format!("{x:.4}"))
        ));
        let w = stage.create(&format!("lipschitz_{}.csv", r.extractor)).map_err(runtime)?;
        experiments::write_lipschitz_csv(w, &r).map_err(lib)?;
        reports.push(r);
    }
    for r in &reports {
        summaries.push(LipschitzSummary {
            extractor: &r.extractor,
            dataset: &dataset_name,
            pairs: r.pairs.len(),
            skipped_zero_delta: r.skipped_zero_delta,
            infinite_ratios: r.infinite_ratios,
            spread: r.spread,
            histogram: &r.histogram,
        });
    }
    stage.write_json("lipschitz_summary.json", &summaries).map_err(runtime)
}

fn surface(a: &LossSurfaceArgs, seed: u64, stage: &mut Staging, summary: &mut Vec<String>) -> Result<(), CliError> {
    if a.d == 0 || a.q == 0 || a.trials < 2 || a.rows == 0 {
        return Err(config("--d, --q, --rows must be >= 1 and --trials >= 2"));
    }
    if a.betas.is_empty() || a.steps.is_empty() {
        return Err(config("--betas and --steps must be non-empty"));
    }
    for &b in &a.betas {
        check_positive("--betas", b)?;
    }
    if a.steps.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
        return Err(config("--steps must be finite and >= 0"));
    }
    check_positive("--weight-scale", a.weight_scale)?;
    let loss = match a.loss {
        LossKind::Quadratic => ToyLoss::Quadratic,
        LossKind::LogSumExp => {
            let mut rng = RngStream::for_purpose(seed, Purpose::Matrix, 0).rng();
            ToyLoss::random_log_sum_exp(a.rows, a.d, a.weight_scale, &mut rng).map_err(lib)?
        }
    };
    let cfg = SurfaceConfig {
        betas: a.betas.clone(),
        steps: a.steps.clone(),
        q: a.q,
        n_trials: a.trials,
        scheme: match a.scheme {
            SchemeArg::Antithetic => FiniteDifference::Antithetic,
            SchemeArg::OneSided => FiniteDifference::OneSided,
        },
    };
    let x0 = vec![a.x0; a.d];
    let s = loss_surface(&loss, &x0, &cfg, seed).map_err(lib)?;
    for &beta in &a.betas {
        let means: Vec<String> =
            s.cells.iter().filter(|c| c.beta == beta).map(|c| format!("{}:{:.5}", c.step, c.mean_dloss)).collect();
        summary.push(format!("loss-surface beta={beta}: {}", means.join(" ")));
    }
    if s.retries > 0 {
        summary.push(format!("loss-surface: {} zero estimates redrawn", s.retries));
    }
    let w = stage.create("surface.csv").map_err(runtime)?;
    experiments::write_surface_csv(w, &s).map_err(lib)
}

fn concentration(
    a: &GradConcentrationArgs,
    seed: u64,
    stage: &mut Staging,
    summary: &mut Vec<String>,
) -> Result<(), CliError> {
    if a.trials < 1000 || a.k.is_empty() || a.beta.is_empty() {
        return Err(config("--trials must be >= 1000 and --k/--beta non-empty"));
    }
    let mut reports = Vec::new();
    for &k in &a.k {
        for &beta in &a.beta {
            let cfg = ProjectionConfig::new(k, a.d, beta, a.epsilon).map_err(lib)?;
            let r = experiments::gradient_concentration(&cfg, a.trials, seed).map_err(lib)?;
            summary.push(format!(
                "grad-concentration k={k} beta={beta} eps={}: empirical={:.5} exact={:.5} bound={:.5} {:?}{}",
                a.epsilon,
                r.empirical_prob,
                r.exact_prob,
                r.bound.raw,
                r.regime,
                if r.bound_holds { "" } else { " bound-violation (reported)" }
            ));
            reports.push(r);
        }
    }
    let w = stage.create("concentration.csv").map_err(runtime)?;
    experiments::write_concentration_csv(w, &reports).map_err(lib)
}

#[derive(Serialize)]
struct BoundOutput<'a> {
    inputs: &'a BoundsArgs,
    bound: f64,
    vacuous: bool,
}

fn bounds(a: &BoundsArgs, stage: &mut Staging, summary: &mut Vec<String>) -> Result<(), CliError> {
    let (value, vacuous) = match a.theorem {
        Theorem::Toy => {
            if a.d == 0 || !(a.beta >= 0.0) || !(0.0..=1.0).contains(&a.alpha_fp) {
                return Err(config("need --d >= 1, --beta >= 0 and --alpha-fp in [0, 1]"));
            }
            let v = toy_bound(a.d, a.beta, a.alpha_fp);
            (v, v >= 1.0)
        }
        Theorem::Lipschitz => {
            let input = BoundInput {
                d: a.d,
                beta: a.beta,
                alpha_fp: a.alpha_fp,
                lipschitz_ratio: a.ratio,
                spread: a.spread,
                k: a.k,
                epsilon: a.epsilon,
                sigma: 1.0,
            };
            let v = general_bound(&input).map_err(lib)?;
            (v, v >= 1.0)
        }
        Theorem::Gradient => {
            if a.k == 0 || !(a.beta > 0.0) || !(0.0..=1.0).contains(&a.epsilon) {
                return Err(config("need --k >= 1, --beta > 0 and --epsilon in [0, 1]"));
            }
            let b = gradient_bound(a.k, a.epsilon, a.beta);
            (b.raw, b.is_vacuous())
        }
    };
    stage.write_json("bound.json", &BoundOutput { inputs: a, bound: value, vacuous }).map_err(runtime)?;
    let rounded = (value * 1e10).round() / 1e10;
    summary.push(serde_json::json!({ "bound": rounded }).to_string());
    Ok(())
}

fn extract(a: &ExtractArgs, seed: u64, stage: &mut Staging, summary: &mut Vec<String>) -> Result<(), CliError> {
    validate_dataset(&a.dataset)?;
    extractor_configs(&a.extractor, 1)?;
    let (data, _) = load_dataset(&a.dataset, seed)?;
    for cfg in extractor_configs(&a.extractor, data.images[0].dim())? {
        let ex = Extractor::new(&cfg).map_err(lib)?;
        let name = format!("features_{}.jsonl", ex.name());
        let existing = stage.final_path(&name);
        let (cache, status) = if existing.exists() {
            let hit = cache_features(&data, &ex, &existing).map_err(lib)?;
            (FeatureCache::write(&stage.path(&name), &hit.fingerprint, hit.records).map_err(lib)?, "cache hit")
        } else {
            (cache_features(&data, &ex, &stage.path(&name)).map_err(lib)?, "extracted")
        };
        summary.push(format!("extract {}: {} features ({status})", ex.name(), cache.records.len()));
    }
    Ok(())
}

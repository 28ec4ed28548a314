//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Image criteria run on a CIFAR-10 binary batch. Set `SDTRADE_CIFAR10_DIR` to use
//! the real dataset; otherwise a photo-like synthetic batch is written in the
//! CIFAR-10 format and loaded through the same reader.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use sdtrade::data_io::{load_cifar10, synthesize, write_cifar10_batch, DatasetHandle, SynthKind, SynthParams};
use sdtrade::experiments::{
    auto_taus, gradient_concentration, linear_samples, lipschitz_ratios, loss_surface, projection_moments,
    toy_validate, tradeoff_samples, LipschitzConfig, LipschitzInput, LipschitzReport, Regime, SurfaceConfig,
    TradeoffConfig, TradeoffSamples,
};
use sdtrade::extractors::{
    BlacklightConfig, Extractor, ExtractorConfig, LinearConfig, LinearExtractor, PihaConfig, ToyConfig,
};
use sdtrade::sampling::{
    standard_normal_vec, FiniteDifference, ProjectionConfig, Purpose, RngStream, ToyLoss, ToyModelConfig,
};
use sdtrade::theory::{chi_cdf, reg_lower_gamma, std_normal_cdf, toy_bound};
use statrs::function::gamma::ln_gamma;

const SEED: u64 = 20_240_601;
const N_IMAGES: usize = 1000;

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, limit_s: u64) -> Result<(), String> {
    if elapsed.as_secs_f64() < limit_s as f64 {
        Ok(())
    } else {
        Err(format!("took {:.1}s, limit {limit_s}s", elapsed.as_secs_f64()))
    }
}

struct Cifar {
    _dir: Option<tempfile::TempDir>,
    path: PathBuf,
    source: &'static str,
    data: DatasetHandle,
}

fn cifar() -> Cifar {
    let stream = RngStream::for_purpose(SEED, Purpose::Dataset, 0);
    if let Some(root) = std::env::var_os("SDTRADE_CIFAR10_DIR") {
        let path = PathBuf::from(root);
        let data = load_cifar10(&path, N_IMAGES, stream).expect("loading SDTRADE_CIFAR10_DIR");
        return Cifar { _dir: None, path, source: "CIFAR-10", data };
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data_batch_1.bin");
    let synth =
        synthesize(SynthKind::PiecewiseSmooth, (32, 32, 3), 2 * N_IMAGES, SynthParams::default(), SEED).unwrap();
    let records: Vec<(u8, _)> = synth.images.into_iter().enumerate().map(|(i, img)| ((i % 10) as u8, img)).collect();
    write_cifar10_batch(&path, &records).unwrap();
    let data = load_cifar10(&path, N_IMAGES, stream).unwrap();
    Cifar { _dir: Some(dir), path, source: "synthetic CIFAR-format stand-in", data }
}

fn extractor(cfg: ExtractorConfig) -> Extractor {
    Extractor::new(&cfg).unwrap()
}

fn blacklight() -> Extractor {
    extractor(ExtractorConfig::Blacklight(BlacklightConfig::default()))
}

fn piha() -> Extractor {
    extractor(ExtractorConfig::Piha(PihaConfig::default()))
}

/// Every threshold where either empirical rate can change, plus the automatic sweep.
fn full_sweep(samples: &[&TradeoffSamples]) -> Vec<f64> {
    let mut taus = vec![0.0];
    for s in samples {
        taus.extend(auto_taus(&s.fp_distances, 40));
        taus.extend(s.fp_distances.iter().chain(&s.det_distances).copied().filter(|d| d.is_finite()));
    }
    taus.sort_by(f64::total_cmp);
    taus.dedup();
    taus
}

fn toy_bound_holds() -> Outcome {
    let start = Instant::now();
    let mut worst = f64::NEG_INFINITY;
    let mut violations = Vec::new();
    let mut runs = 0;
    for d in [1, 4, 16] {
        for beta in [0.1, 0.3, 0.5] {
            for sigma in [0.05, 0.1] {
                let cfg = ToyModelConfig::new(d, sigma, beta).map_err(|e| e.to_string())?;
                let v = toy_validate(&cfg, 100_000, SEED + runs).map_err(|e| e.to_string())?;
                runs += 1;
                worst = worst.max(v.alpha_det_hat - v.bound - 3.0 * v.se_det);
                if v.violated {
                    violations.push(format!("d={d} beta={beta} sigma={sigma}"));
                }
            }
        }
    }
    within(start.elapsed(), 30)?;
    let spot: f64 = toy_bound(1, 0.5, 0.0);
    let detail = format!(
        "18 configs x 1e5 trials, max(det - bound - 3SE) = {worst:.4}, spot bound {spot:.4}, {:.1}s",
        start.elapsed().as_secs_f64()
    );
    check(violations.is_empty() && (spot - 0.6827).abs() < 5e-5, format!("{detail}; violations: {violations:?}"))
}

fn linear_bound_holds() -> Outcome {
    let start = Instant::now();
    let mut violations = 0;
    let mut rows = 0;
    for kappa in [1.0, 4.0] {
        let cfg = LinearConfig { input_dim: 16, output_dim: 16, scale: 1.0, condition_number: kappa, seed: Some(SEED) };
        let ext = LinearExtractor::from_config(&cfg).map_err(|e| e.to_string())?;
        let samples = linear_samples(&ext, 0.1, 4, 0.5, 100_000, SEED).map_err(|e| e.to_string())?;
        let mut merged: Vec<f64> = samples.fp_distances.iter().chain(&samples.det_distances).copied().collect();
        merged.sort_by(f64::total_cmp);
        let taus = auto_taus(&merged, 40);
        if taus.len() != 40 {
            return Err(format!("kappa={kappa}: sweep has {} points", taus.len()));
        }
        let report = samples.evaluate(&ext, &taus).map_err(|e| e.to_string())?;
        if (report.lipschitz_ratio - kappa).abs() > 1e-9 {
            return Err(format!("kappa={kappa}: exact ratio came out {}", report.lipschitz_ratio));
        }
        rows += report.rows.len();
        violations += report.rows.iter().filter(|r| r.violated).count();
    }
    within(start.elapsed(), 60)?;
    check(
        violations == 0,
        format!("{rows} (kappa, tau) rows, {violations} violations, {:.1}s", start.elapsed().as_secs_f64()),
    )
}

fn monotone(c: &Cifar) -> Outcome {
    let extractors = [extractor(ExtractorConfig::Toy(ToyConfig::default())), blacklight(), piha()];
    let mut details = Vec::new();
    for ex in &extractors {
        let s = tradeoff_samples(ex, &c.data, &TradeoffConfig::default(), SEED).map_err(|e| e.to_string())?;
        let taus = full_sweep(&[&s]);
        let curve = s.curve(&taus).map_err(|e| e.to_string())?;
        let ok = curve.windows(2).all(|w| w[0].alpha_fp <= w[1].alpha_fp && w[0].alpha_det <= w[1].alpha_det);
        if !ok {
            return Err(format!("{} curve decreases somewhere", ex.name()));
        }
        details.push(format!("{} ({} taus)", ex.name(), taus.len()));
    }
    Ok(format!("non-decreasing on {} images: {}", c.data.count(), details.join(", ")))
}

fn beta_degradation(c: &Cifar) -> Outcome {
    let ex = blacklight();
    let at = |beta| {
        let cfg = TradeoffConfig { beta, n_base: 100, n_pert: 100, ..TradeoffConfig::default() };
        tradeoff_samples(&ex, &c.data, &cfg, SEED)
    };
    let low = at(0.01).map_err(|e| e.to_string())?;
    let high = at(0.05).map_err(|e| e.to_string())?;
    let taus = full_sweep(&[&low, &high]);
    let mut worst = f64::NEG_INFINITY;
    let mut mean_gap = 0.0;
    for &tau in &taus {
        let (a, b) = (low.point(tau), high.point(tau));
        let se = a.se_det().hypot(b.se_det());
        worst = worst.max(b.alpha_det - a.alpha_det - 3.0 * se);
        mean_gap += a.alpha_det - b.alpha_det;
    }
    mean_gap /= taus.len() as f64;
    check(
        worst <= 0.0,
        format!("{} taus, max(det@0.05 - det@0.01 - 3SE) = {worst:.4}, mean det drop {mean_gap:.4}", taus.len()),
    )
}

/// Adaptive Simpson on `[a, b]`.
fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn rec<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            return left + right + (left + right - whole) / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    rec(f, a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), tol, 50)
}

/// P(s, x) by quadrature after substituting `t = u²`, which removes the `t^{s−1}` singularity.
fn gamma_by_quadrature(s: f64, x: f64) -> f64 {
    let lg = ln_gamma(s);
    let f = |u: f64| {
        if u == 0.0 {
            if s == 0.5 {
                2.0 * (-lg).exp()
            } else {
                0.0
            }
        } else {
            ((2.0 * s - 1.0) * u.ln() - u * u + std::f64::consts::LN_2 - lg).exp()
        }
    };
    simpson(&f, 0.0, x.sqrt(), 1e-13)
}

fn special_functions() -> Outcome {
    let mut gamma_err: f64 = 0.0;
    for s in [0.5, 1.0, 2.0, 8.0, 50.0] {
        for j in 0..=40 {
            let x = 4.0 * s * j as f64 / 40.0;
            let ours = reg_lower_gamma(s, x).map_err(|e| e.to_string())?;
            gamma_err = gamma_err.max((ours - gamma_by_quadrature(s, x)).abs());
        }
    }
    let phi_err = (std_normal_cdf(1.0_f64) - 0.841_344_746_1).abs();
    let mut worst_z: f64 = 0.0;
    let n = 100_000;
    for (i, d) in [1usize, 2, 16].into_iter().enumerate() {
        let beta = 0.3;
        let mut rng = RngStream::for_purpose(SEED, Purpose::Trial, i as u64).rng();
        let mut norms: Vec<f64> = (0..n)
            .map(|_| beta * standard_normal_vec::<f64, _>(&mut rng, d).iter().map(|z| z * z).sum::<f64>().sqrt())
            .collect();
        norms.sort_by(f64::total_cmp);
        for q in [0.05, 0.25, 0.5, 0.75, 0.95] {
            let r = norms[(q * n as f64) as usize];
            let frac = norms.partition_point(|&v| v <= r) as f64 / n as f64;
            let cdf = chi_cdf(r, d, beta).map_err(|e| e.to_string())?;
            let se = (cdf * (1.0 - cdf) / n as f64).sqrt();
            worst_z = worst_z.max((frac - cdf).abs() / se);
        }
    }
    check(
        gamma_err <= 1e-8 && phi_err <= 1e-10 && worst_z <= 3.0,
        format!("gamma max err {gamma_err:.2e}, Phi(1) err {phi_err:.2e}, chi_cdf worst |z| {worst_z:.2}"),
    )
}

fn projection_property() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for (k, beta) in [(10, 0.1), (100, 0.1), (10, 1.0)] {
        let cfg = ProjectionConfig::new(k, 16, beta, 0.5).map_err(|e| e.to_string())?;
        let m = projection_moments(&cfg, 100_000, SEED).map_err(|e| e.to_string())?;
        let kf = k as f64;
        let z = (m.mean - kf) / m.se_mean;
        let rel = (m.variance - 2.0 * kf).abs() / (2.0 * kf);
        ok &= z.abs() <= 3.0 && rel <= 0.05;
        parts.push(format!("(k={k}, beta={beta}): mean z {z:+.2}, var rel err {:.2}%", 100.0 * rel));
    }
    check(ok, parts.join("; "))
}

fn gradient_regimes() -> Outcome {
    let calibrated = ProjectionConfig::new(100, 16, 0.1, 0.5).map_err(|e| e.to_string())?;
    let r = gradient_concentration(&calibrated, 100_000, SEED).map_err(|e| e.to_string())?;
    if r.regime != Regime::Calibrated {
        return Err("k=100, beta=0.1 not classified as calibrated".into());
    }
    for (k, beta) in [(10, 0.1), (1, 0.1), (100, 1.0), (10, 0.316_227_766)] {
        let cfg = ProjectionConfig::new(k, 16, beta, 0.5).map_err(|e| e.to_string())?;
        let o = gradient_concentration(&cfg, 100_000, SEED).map_err(|e| e.to_string())?;
        println!(
            "      regime k={k} beta={beta}: {:?}, empirical {:.4}, exact {:.4}, bound {:.4}{}",
            o.regime,
            o.empirical_prob,
            o.exact_prob,
            o.bound.raw,
            if o.bound_holds { "" } else { "  (bound exceeded: finding)" }
        );
    }
    check(
        r.empirical_prob >= r.bound.raw,
        format!(
            "calibrated: empirical {:.4} (exact {:.4}) >= bound {:.4}",
            r.empirical_prob, r.exact_prob, r.bound.raw
        ),
    )
}

fn surface_ordering() -> Outcome {
    let start = Instant::now();
    let mut rng = RngStream::for_purpose(SEED, Purpose::Matrix, 0).rng();
    let loss = ToyLoss::random_log_sum_exp(8, 16, 1.0, &mut rng).map_err(|e| e.to_string())?;
    let steps = [0.01, 0.05, 0.1];
    let cfg = SurfaceConfig {
        betas: vec![0.01, 1.0],
        steps: steps.to_vec(),
        q: 50,
        n_trials: 200,
        scheme: FiniteDifference::Antithetic,
    };
    let surface = loss_surface(&loss, &[1.0; 16], &cfg, SEED).map_err(|e| e.to_string())?;
    within(start.elapsed(), 60)?;
    let mut parts = Vec::new();
    let mut ok = true;
    for eta in steps {
        let (small, large) = (surface.cell(0.01, eta).unwrap(), surface.cell(1.0, eta).unwrap());
        let margin = 3.0 * small.stderr.hypot(large.stderr);
        ok &= large.mean_dloss <= small.mean_dloss + margin;
        parts.push(format!("eta={eta}: {:.5} vs {:.5} (3SE {:.5})", large.mean_dloss, small.mean_dloss, margin));
    }
    check(ok, format!("beta=1 vs beta=0.01, 200 trials: {}", parts.join("; ")))
}

fn spread_line(r: &LipschitzReport) -> String {
    let s = &r.spread;
    format!(
        "{}: p05 {:.3}, p95 {:.3}, mean {:.3}, cv {:.3}, p95/p05 {}, infinite {}, zero-delta {}",
        r.extractor,
        s.p05,
        s.p95,
        s.mean,
        s.coefficient_of_variation,
        s.empirical_ratio.map_or("n/a".into(), |v| format!("{v:.3}")),
        r.infinite_ratios,
        r.skipped_zero_delta
    )
}

fn lipschitz_exactness(c: &Cifar) -> Outcome {
    let scaled = extractor(ExtractorConfig::Linear(LinearConfig {
        input_dim: 16,
        output_dim: 16,
        scale: 2.0,
        condition_number: 1.0,
        seed: None,
    }));
    let mut rng = RngStream::for_purpose(SEED, Purpose::Natural, 0).rng();
    let inputs: Vec<Vec<f64>> = (0..100).map(|_| standard_normal_vec(&mut rng, 16)).collect();
    let cfg = LipschitzConfig::default();
    let linear = lipschitz_ratios(&scaled, LipschitzInput::Vectors(&inputs), &cfg, SEED).map_err(|e| e.to_string())?;
    let exact = linear.pairs.len() == cfg.n_pairs && linear.ratios().all(|r| r == 2.0);
    let bl = lipschitz_ratios(&blacklight(), LipschitzInput::Images(&c.data), &cfg, SEED).map_err(|e| e.to_string())?;
    let ph = lipschitz_ratios(&piha(), LipschitzInput::Images(&c.data), &cfg, SEED).map_err(|e| e.to_string())?;
    println!("      {}", spread_line(&bl));
    println!("      {}", spread_line(&ph));
    let order = match (bl.spread.coefficient_of_variation, ph.spread.coefficient_of_variation) {
        (b, p) if p < b => "PIHA tighter than Blacklight",
        (b, p) if p > b => "Blacklight tighter than PIHA",
        _ => "no ordering",
    };
    let full =
        bl.pairs.len() + bl.skipped_zero_delta == cfg.n_pairs && ph.pairs.len() + ph.skipped_zero_delta == cfg.n_pairs;
    check(
        exact && full,
        format!(
            "scaled-identity c=2: {} ratios all exactly 2 = {exact}; 10000-pair hash comparison ({order} by cv)",
            linear.pairs.len()
        ),
    )
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_sdtrade")
}

/// Runs the CLI, then replays its manifest argv with other `--threads`/`--out` values.
fn replay(out: &Path, args: &[&str]) -> Result<usize, String> {
    let first = out.join("first");
    let status = Command::new(bin())
        .arg("--out")
        .arg(&first)
        .args(["--threads", "1", "--seed", "7"])
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !status.status.success() {
        return Err(format!("{args:?} failed: {}", String::from_utf8_lossy(&status.stderr)));
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(first.join("manifest.json")).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    let argv: Vec<String> = manifest["argv"]
        .as_array()
        .ok_or("manifest has no argv")?
        .iter()
        .map(|v| v.as_str().unwrap_or_default().to_owned())
        .collect();
    let second = out.join("second");
    let mut replayed = argv[1..].to_vec();
    for (flag, value) in [("--out", second.to_string_lossy().into_owned()), ("--threads", "4".into())] {
        let i = replayed.iter().position(|a| a == flag).ok_or(format!("{flag} missing from argv"))?;
        replayed[i + 1] = value;
    }
    let status = Command::new(bin()).args(&replayed).output().map_err(|e| e.to_string())?;
    if !status.status.success() {
        return Err(format!("replay failed: {}", String::from_utf8_lossy(&status.stderr)));
    }
    let mut compared = 0;
    for name in manifest["outputs"].as_array().ok_or("manifest has no outputs")? {
        let name = name.as_str().unwrap_or_default();
        if !name.ends_with(".csv") {
            continue;
        }
        let (a, b) = (fs::read(first.join(name)), fs::read(second.join(name)));
        match (a, b) {
            (Ok(a), Ok(b)) if a == b => compared += 1,
            _ => return Err(format!("{name} differs between --threads 1 and --threads 4")),
        }
    }
    Ok(compared)
}

fn determinism(c: &Cifar) -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = c.path.to_string_lossy().into_owned();
    let runs: [&[&str]; 6] = [
        &[
            "tradeoff",
            "--data",
            &data,
            "--n-images",
            "200",
            "--extractor",
            "toy,blacklight,piha",
            "--betas",
            "0.01,0.05",
            "--n-base",
            "20",
            "--n-pert",
            "20",
        ],
        &["tradeoff", "--data", &data, "--n-images", "200", "--mode", "streaming", "--n-base", "20", "--n-pert", "10"],
        &["toy-validate", "--d", "1,4", "--sigma", "0.1", "--beta", "0.3,0.5", "--trials", "5000"],
        &["linear-validate", "--matrix-seed", "3", "--n", "5000"],
        &["lipschitz", "--data", &data, "--n-images", "100", "--extractor", "blacklight,piha", "--pairs", "500"],
        &["loss-surface", "--trials", "20", "--q", "10"],
    ];
    let mut files = 0;
    for (i, args) in runs.iter().enumerate() {
        files += replay(&tmp.path().join(i.to_string()), args)?;
    }
    let conc = replay(&tmp.path().join("conc"), &["grad-concentration", "--k", "10,100", "--trials", "2000"])?;
    Ok(format!("{} runs, {} CSV files byte-identical across --threads 1 / 4", runs.len() + 1, files + conc))
}

fn main() {
    let data = cifar();
    println!("image data: {} ({} images)", data.source, data.data.count());
    let criteria: [Criterion; 10] = [
        ("1 toy-model bound", Box::new(toy_bound_holds)),
        ("2 bi-Lipschitz bound", Box::new(linear_bound_holds)),
        ("3 curve monotonicity", Box::new(|| monotone(&data))),
        ("4 beta degradation", Box::new(|| beta_degradation(&data))),
        ("5 special functions", Box::new(special_functions)),
        ("6 chi-square projection", Box::new(projection_property)),
        ("7 gradient concentration", Box::new(gradient_regimes)),
        ("8 loss-surface ordering", Box::new(surface_ordering)),
        ("9 Lipschitz ratios", Box::new(|| lipschitz_exactness(&data))),
        ("10 determinism", Box::new(|| determinism(&data))),
    ];
    let mut failed = 0;
    for (name, run) in &criteria {
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

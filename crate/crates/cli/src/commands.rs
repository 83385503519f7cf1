use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use cdsa_core::anm::{soft_mask, synthesize_noise, NoiseParams, SoftMaskConfig};
use cdsa_core::gsm::{gradcheck_gsm, random_gsm_instance};
use cdsa_core::io::{detect_format, load_image, save_image, ImageFormat};
use cdsa_core::metrics::{
    dice_iou, hard_cldice, hd95, masked_metric, otsu_threshold, psnr, ssim, threshold_segmentation_dice,
    MetricReport, QualityMetric, Region,
};
use cdsa_core::stat_loss::{gradcheck_stat_loss, moment_alignment_loss, random_stat_instance, StatLossConfig};
use cdsa_core::subtraction::{
    display_normalize, generate_phantom, generate_synthetic_pair, log_subtract, vessel_pearson, BackgroundStyle,
    BeerLambertParams, NoiseInjection, PhantomConfig,
};
use cdsa_core::topo_loss::{gradcheck_losses, random_loss_instance, LossWeights, SoftSkeletonConfig};
use cdsa_core::vesselness::{integrated_geometric_prior, Polarity, ScaleSpaceConfig, Structureness};
use cdsa_core::{BinaryMask, CdsaError, Image, SeededRng};
use serde::Serialize;

use crate::args::*;
use crate::{CliError, CliResult};

/// Relative-error thresholds of the gradient checks.
pub const GSM_GRAD_TOL: f64 = 1e-3;
pub const LOSS_GRAD_TOL: f64 = 1e-2;
pub const STAT_GRAD_TOL: f64 = 1e-2;

pub fn dispatch(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<()> {
    let guard = Outputs { force: cli.force };
    match &cli.command {
        Command::SynthPhantom(a) => synth_phantom(a, cli.seed, &guard),
        Command::Vesselness(a) => vesselness(a, &guard),
        Command::SynthPair(a) => synth_pair(a, cli.seed, &guard),
        Command::AddNoise(a) => add_noise(a, cli.seed, &guard),
        Command::Subtract(a) => subtract(a, &guard, out, err),
        Command::Statloss(a) => statloss(a, out),
        Command::Evaluate(a) => evaluate(a, &guard, out),
        Command::Gradcheck(a) => gradcheck(a, cli.seed, out),
        Command::Pipeline(a) => pipeline(a, cli.seed, &guard, out, err),
    }
}

/// Refuses to replace existing files unless `--force` was given.
struct Outputs {
    force: bool,
}

impl Outputs {
    fn claim(&self, paths: &[&Path]) -> CliResult<()> {
        if self.force {
            return Ok(());
        }
        match paths.iter().find(|p| p.exists()) {
            Some(p) => Err(CliError::Usage(format!("{} exists; pass --force to overwrite", p.display()))),
            None => Ok(()),
        }
    }
}

fn read_image(path: &Path) -> CliResult<Image> {
    Ok(load_image(path, detect_format(path)?)?)
}

fn read_mask(path: &Path) -> CliResult<BinaryMask> {
    Ok(read_image(path)?.threshold(0.5))
}

fn output_format(path: &Path) -> CliResult<ImageFormat> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("f32") => Ok(ImageFormat::F32Raw),
        Some("pgm") => Ok(ImageFormat::Pgm16),
        _ => Err(CliError::Usage(format!("output {} must end in .f32 or .pgm", path.display()))),
    }
}

fn write_image(path: &Path, img: &Image) -> CliResult<()> {
    Ok(save_image(path, img, output_format(path)?)?)
}

fn write_mask(path: &Path, mask: &BinaryMask) -> CliResult<()> {
    Ok(save_image(path, &mask.to_image(), ImageFormat::Pgm8)?)
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Usage(e.to_string()))?;
    text.push('\n');
    Ok(fs::write(path, text)?)
}

fn print_json(out: &mut dyn Write, value: &impl Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Usage(e.to_string()))?;
    writeln!(out, "{text}")?;
    Ok(())
}

fn phantom_config(a: &PhantomArgs, seed: u64) -> PhantomConfig {
    PhantomConfig {
        seed,
        tree_depth: a.tree_depth,
        root_width: a.root_width,
        width_decay: a.width_decay,
        background_style: match a.background {
            BackgroundArg::Flat => BackgroundStyle::Flat,
            BackgroundArg::Gradient => BackgroundStyle::Gradient,
            BackgroundArg::RibBands => BackgroundStyle::RibBands,
        },
        image_size: a.size,
    }
}

fn frangi_config(a: &FrangiArgs) -> CliResult<ScaleSpaceConfig> {
    let c = match a.c.as_str() {
        "auto" => Structureness::Auto,
        v => Structureness::Fixed(
            v.parse().map_err(|_| CliError::Usage(format!("--c expects 'auto' or a number, got '{v}'")))?,
        ),
    };
    let cfg = ScaleSpaceConfig {
        sigmas: a.sigmas.clone(),
        beta: a.beta,
        c,
        polarity: match a.polarity {
            PolarityArg::Dark => Polarity::DarkVessels,
            PolarityArg::Bright => Polarity::BrightVessels,
        },
        gamma_norm: a.gamma_norm,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn noise_injection(a: &NoiseArgs) -> CliResult<Option<NoiseInjection>> {
    let params = NoiseParams::new(a.alpha, a.gamma)?;
    if params.alpha == 0.0 && params.gamma == 0.0 {
        return Ok(None);
    }
    Ok(Some(NoiseInjection {
        params,
        soft_mask: SoftMaskConfig { dilate_radius: a.dilate_radius, blur_sigma: a.blur_sigma },
    }))
}

fn synth_phantom(a: &SynthPhantomArgs, seed: u64, guard: &Outputs) -> CliResult<()> {
    let cfg = phantom_config(&a.phantom, seed);
    let files = ["background.f32", "mask.pgm", "centerline.pgm"].map(|f| a.out.join(f));
    guard.claim(&files.iter().map(PathBuf::as_path).collect::<Vec<_>>())?;
    let ph = generate_phantom(&cfg)?;
    fs::create_dir_all(&a.out)?;
    write_image(&files[0], &ph.background)?;
    write_mask(&files[1], &ph.mask)?;
    write_mask(&files[2], &ph.centerline)?;
    Ok(())
}

fn vesselness(a: &VesselnessArgs, guard: &Outputs) -> CliResult<()> {
    let cfg = frangi_config(&a.frangi)?;
    output_format(&a.out)?;
    guard.claim(&[&a.out])?;
    let img = read_image(&a.input)?;
    write_image(&a.out, &integrated_geometric_prior(&img, &cfg)?)
}

fn synth_pair(a: &SynthPairArgs, seed: u64, guard: &Outputs) -> CliResult<()> {
    let files = ["input.f32", "target.f32", "depth.f32"].map(|f| a.out.join(f));
    guard.claim(&files.iter().map(PathBuf::as_path).collect::<Vec<_>>())?;
    let noise = noise_injection(&a.noise)?;
    let bg = read_image(&a.bg)?;
    let mask = read_mask(&a.mask)?;
    let p = BeerLambertParams { mu_c: a.mu_c, ..Default::default() };
    let pair = generate_synthetic_pair(&bg, &mask, &p, noise.as_ref(), &mut SeededRng::new(seed))?;
    fs::create_dir_all(&a.out)?;
    write_image(&files[0], &pair.input)?;
    write_image(&files[1], &pair.target)?;
    write_image(&files[2], &pair.depth)
}

fn add_noise(a: &AddNoiseArgs, seed: u64, guard: &Outputs) -> CliResult<()> {
    output_format(&a.out)?;
    guard.claim(&[&a.out])?;
    let params = NoiseParams::new(a.noise.alpha, a.noise.gamma)?;
    let img = read_image(&a.input)?;
    let mask = read_mask(&a.mask)?;
    let m_soft = soft_mask(&mask, a.noise.dilate_radius, a.noise.blur_sigma)?;
    let noisy = synthesize_noise(&img, &params, &m_soft, &mut SeededRng::new(seed))?;
    write_image(&a.out, &noisy)
}

#[derive(Serialize)]
struct SubtractSummary {
    clamped: usize,
    max: f64,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".txt");
    PathBuf::from(s)
}

/// Writes the subtraction either raw (`.f32`) or display-scaled (`.pgm`)
/// with a `key=value` sidecar. Returns the maximum value.
fn write_subtraction(path: &Path, img: &Image, clamped: usize, epsilon_log: f64) -> CliResult<f64> {
    match output_format(path)? {
        ImageFormat::F32Raw => {
            save_image(path, img, ImageFormat::F32Raw)?;
            Ok(img.max())
        }
        _ => {
            let (display, scale) = display_normalize(img);
            save_image(path, &display, ImageFormat::Pgm16)?;
            let side = format!("max={}\nclamped={clamped}\nepsilon_log={epsilon_log}\n", scale.max);
            fs::write(sidecar_path(path), side)?;
            Ok(scale.max)
        }
    }
}

fn subtract(a: &SubtractArgs, guard: &Outputs, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<()> {
    let is_pgm = output_format(&a.out)? != ImageFormat::F32Raw;
    let side = sidecar_path(&a.out);
    if is_pgm {
        guard.claim(&[&a.out, &side])?;
    } else {
        guard.claim(&[&a.out])?;
    }
    let bg = read_image(&a.bg)?;
    let raw = read_image(&a.raw)?;
    let sub = log_subtract(&bg, &raw, a.epsilon_log)?;
    if sub.clamped > 0 {
        writeln!(err, "cdsa: warning: {} pixels clamped to epsilon_log={}", sub.clamped, a.epsilon_log)?;
    }
    let max = write_subtraction(&a.out, &sub.image, sub.clamped, a.epsilon_log)?;
    print_json(out, &SubtractSummary { clamped: sub.clamped, max })
}

#[derive(Serialize)]
struct StatSummary {
    total: f64,
    log_variance_term: f64,
    mean_term: f64,
    weight_sum: f64,
    mean_per_weighted_pixel: f64,
}

fn statloss(a: &StatlossArgs, out: &mut dyn Write) -> CliResult<()> {
    let cfg = StatLossConfig { window_k: a.window, lambda: a.lambda, epsilon: a.epsilon };
    cfg.validate()?;
    let syn = read_image(&a.syn)?;
    let tar = read_image(&a.tar)?;
    let w = match &a.mask {
        Some(p) => read_mask(p)?,
        None => BinaryMask::full(syn.height(), syn.width()),
    };
    let l = moment_alignment_loss(&syn, &tar, &w, &cfg)?;
    let mean = if l.weight_sum > 0.0 { l.total / l.weight_sum } else { 0.0 };
    print_json(
        out,
        &StatSummary {
            total: l.total,
            log_variance_term: l.log_variance_term,
            mean_term: l.mean_term,
            weight_sum: l.weight_sum,
            mean_per_weighted_pixel: mean,
        },
    )
}

fn evaluate(a: &EvaluateArgs, guard: &Outputs, out: &mut dyn Write) -> CliResult<()> {
    if let Some(r) = &a.report {
        guard.claim(&[r])?;
    }
    let pred = read_image(&a.pred)?;
    let gt = read_image(&a.gt)?;
    let mask = a.mask.as_deref().map(read_mask).transpose()?;
    let raw = a.raw.as_deref().map(read_image).transpose()?;
    let threshold = if a.otsu { otsu_threshold(&pred) } else { a.threshold };
    let pred_mask = pred.threshold(threshold);
    let gt_mask = gt.threshold(0.5);
    let need_mask = |name: &str| {
        mask.as_ref().ok_or_else(|| CliError::Usage(format!("metric '{name}' needs --mask")))
    };
    let mut reports = Vec::new();
    for name in &a.metrics {
        let name = name.trim();
        let seg = |r: MetricReport| r.with_param("threshold", threshold);
        let report = match name {
            "dsc" => seg(MetricReport::new("dsc", dice_iou(&pred_mask, &gt_mask)?.0, Region::Global)),
            "iou" => seg(MetricReport::new("iou", dice_iou(&pred_mask, &gt_mask)?.1, Region::Global)),
            "cldice" => seg(MetricReport::new("cldice", hard_cldice(&pred_mask, &gt_mask)?, Region::Global)),
            "hd95" => seg(MetricReport::new("hd95", hd95(&pred_mask, &gt_mask, a.spacing)?, Region::Global))
                .with_param("spacing_mm_per_px", a.spacing),
            "psnr" => {
                let p = psnr(&pred, &gt, a.data_range)?;
                let mut r = MetricReport::new("psnr", p.db, Region::Global).with_param("data_range", a.data_range);
                r.infinite = p.infinite;
                r
            }
            "ssim" => MetricReport::new("ssim", ssim(&pred, &gt, a.data_range)?, Region::Global)
                .with_param("data_range", a.data_range),
            "vpsnr" | "nvpsnr" | "vssim" | "nvssim" => {
                let which = if name.ends_with("psnr") { QualityMetric::Psnr } else { QualityMetric::Ssim };
                let region = if name.starts_with("nv") { Region::NonVessel } else { Region::Vessel };
                masked_metric(&pred, &gt, need_mask(name)?, which, region, a.data_range)?
            }
            "pearson" => {
                let raw = raw.as_ref().ok_or_else(|| CliError::Usage("metric 'pearson' needs --raw".into()))?;
                MetricReport::new("pearson", vessel_pearson(&pred, raw, need_mask(name)?)?, Region::Vessel)
            }
            "fid" | "vfid" => return Err(cdsa_core::metrics::fid(&[], &[]).unwrap_err().into()),
            other => return Err(CliError::Usage(format!("unknown metric '{other}'"))),
        };
        reports.push(report);
    }
    if let Some(r) = &a.report {
        write_json(r, &reports)?;
    }
    print_json(out, &reports)
}

#[derive(Serialize)]
struct GradSummary {
    target: &'static str,
    seed: u64,
    max_rel_error: f64,
    threshold: f64,
    checked: usize,
    skipped: usize,
    pass: bool,
}

fn gradcheck(a: &GradcheckArgs, seed: u64, out: &mut dyn Write) -> CliResult<()> {
    let (target, report, threshold) = match a.target {
        GradTarget::Gsm => {
            let (f, p, params) = random_gsm_instance(seed, 4, 8, 8);
            ("gsm", gradcheck_gsm(&f, &p, &params)?.overall(), GSM_GRAD_TOL)
        }
        GradTarget::Loss => {
            let (pred, gt) = random_loss_instance(seed, 12, 12);
            let r = gradcheck_losses(&pred, &gt, &LossWeights::default(), &SoftSkeletonConfig::default())?;
            ("loss", r, LOSS_GRAD_TOL)
        }
        GradTarget::Stat => {
            let (syn, tar, w) = random_stat_instance(seed, 12, 12);
            let cfg = StatLossConfig { window_k: 5, ..Default::default() };
            ("stat", gradcheck_stat_loss(&syn, &tar, &w, &cfg)?, STAT_GRAD_TOL)
        }
    };
    let pass = report.checked > 0 && report.max_rel_error < threshold;
    print_json(
        out,
        &GradSummary {
            target,
            seed,
            max_rel_error: report.max_rel_error,
            threshold,
            checked: report.checked,
            skipped: report.skipped,
            pass,
        },
    )?;
    if pass {
        Ok(())
    } else {
        Err(CliError::CheckFailed(format!(
            "{target} gradient check failed: max relative error {:e} >= {threshold:e}",
            report.max_rel_error
        )))
    }
}

/// Every file `pipeline` writes, relative to the output directory.
pub const PIPELINE_FILES: [&str; 12] = [
    "background.f32",
    "mask.pgm",
    "centerline.pgm",
    "prior.f32",
    "input.f32",
    "clean_input.f32",
    "target.f32",
    "depth.f32",
    "subtraction.f32",
    "subtraction.pgm",
    "subtraction.pgm.txt",
    "report.json",
];

#[derive(Serialize)]
struct PipelineReport {
    seed: u64,
    phantom: PhantomConfig,
    mu_c: f64,
    epsilon_log: f64,
    alpha: f64,
    gamma: f64,
    threshold: f64,
    clamped_pixels: usize,
    vessel_pixels: usize,
    metrics: Vec<MetricReport>,
}

fn pipeline(a: &PipelineArgs, seed: u64, guard: &Outputs, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<()> {
    let path = |f: &str| a.out.join(f);
    let files: Vec<PathBuf> = PIPELINE_FILES.iter().map(|f| path(f)).collect();
    guard.claim(&files.iter().map(PathBuf::as_path).collect::<Vec<_>>())?;
    let frangi = frangi_config(&a.frangi)?;
    let threshold = a.threshold.unwrap_or(a.mu_c / 2.0);
    if !threshold.is_finite() {
        return Err(CliError::Usage("--threshold must be finite".into()));
    }
    let noise = noise_injection(&NoiseArgs {
        alpha: a.alpha,
        gamma: a.gamma,
        dilate_radius: a.dilate_radius,
        blur_sigma: a.blur_sigma,
    })?;
    let cfg = phantom_config(&a.phantom, seed);
    let ph = generate_phantom(&cfg)?;
    let p = BeerLambertParams { mu_c: a.mu_c, epsilon_log: a.epsilon_log, ..Default::default() };
    p.validate()?;

    let mut rng = SeededRng::new(seed);
    let clean = generate_synthetic_pair(&ph.background, &ph.mask, &p, None, &mut rng)?;
    let pair = generate_synthetic_pair(&ph.background, &ph.mask, &p, noise.as_ref(), &mut rng)?;
    let prior = integrated_geometric_prior(&pair.input, &frangi)?;
    let sub = log_subtract(&pair.target, &pair.input, p.epsilon_log)?;
    if sub.clamped > 0 {
        writeln!(err, "cdsa: warning: {} pixels clamped to epsilon_log={}", sub.clamped, p.epsilon_log)?;
    }
    let ideal = clean.depth.map(|d| a.mu_c * d);
    let range = if ideal.max() > 0.0 { ideal.max() } else { 1.0 };

    let seg = sub.image.threshold(threshold);
    let (dsc, iou) = dice_iou(&seg, &ph.mask)?;
    let mut metrics = vec![
        MetricReport::new("dsc", dsc, Region::Global).with_param("threshold", threshold),
        MetricReport::new("iou", iou, Region::Global).with_param("threshold", threshold),
        MetricReport::new("cldice", hard_cldice(&seg, &ph.mask)?, Region::Global).with_param("threshold", threshold),
    ];
    if !seg.is_empty_mask() {
        metrics.push(
            MetricReport::new("hd95", hd95(&seg, &ph.mask, 1.0)?, Region::Global)
                .with_param("threshold", threshold)
                .with_param("spacing_mm_per_px", 1.0),
        );
    }
    let noiseless_dsc = threshold_segmentation_dice(&log_subtract(&clean.target, &clean.input, p.epsilon_log)?.image, &ph.mask, threshold)?;
    metrics.push(MetricReport::new("dsc_noiseless", noiseless_dsc, Region::Global).with_param("threshold", threshold));
    let pr = psnr(&sub.image, &ideal, range)?;
    let mut pr_report = MetricReport::new("psnr", pr.db, Region::Global).with_param("data_range", range);
    pr_report.infinite = pr.infinite;
    metrics.push(pr_report);
    metrics.push(MetricReport::new("ssim", ssim(&sub.image, &ideal, range)?, Region::Global).with_param("data_range", range));
    for (which, region) in [
        (QualityMetric::Psnr, Region::Vessel),
        (QualityMetric::Psnr, Region::NonVessel),
        (QualityMetric::Ssim, Region::Vessel),
        (QualityMetric::Ssim, Region::NonVessel),
    ] {
        match masked_metric(&sub.image, &ideal, &ph.mask, which, region, range) {
            Ok(r) => metrics.push(r),
            Err(CdsaError::UndefinedMetric(m)) => writeln!(err, "cdsa: skipping metric: {m}")?,
            Err(e) => return Err(e.into()),
        }
    }
    match vessel_pearson(&sub.image, &pair.input, &ph.mask) {
        Ok(r) => metrics.push(MetricReport::new("pearson", r, Region::Vessel)),
        Err(CdsaError::UndefinedCorrelation(m)) => writeln!(err, "cdsa: skipping pearson: {m}")?,
        Err(e) => return Err(e.into()),
    }

    fs::create_dir_all(&a.out)?;
    write_image(&path("background.f32"), &ph.background)?;
    write_mask(&path("mask.pgm"), &ph.mask)?;
    write_mask(&path("centerline.pgm"), &ph.centerline)?;
    write_image(&path("prior.f32"), &prior)?;
    write_image(&path("input.f32"), &pair.input)?;
    write_image(&path("clean_input.f32"), &clean.input)?;
    write_image(&path("target.f32"), &pair.target)?;
    write_image(&path("depth.f32"), &pair.depth)?;
    write_subtraction(&path("subtraction.f32"), &sub.image, sub.clamped, p.epsilon_log)?;
    write_subtraction(&path("subtraction.pgm"), &sub.image, sub.clamped, p.epsilon_log)?;
    let report = PipelineReport {
        seed,
        phantom: cfg,
        mu_c: a.mu_c,
        epsilon_log: a.epsilon_log,
        alpha: a.alpha,
        gamma: a.gamma,
        threshold,
        clamped_pixels: sub.clamped,
        vessel_pixels: ph.mask.count(),
        metrics,
    };
    write_json(&path("report.json"), &report)?;
    print_json(out, &report)
}

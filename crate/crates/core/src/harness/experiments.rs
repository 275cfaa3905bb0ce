use std::time::Instant;

use serde::Serialize;

use super::config::{ExperimentConfig, ExperimentId};
use super::dataset::{anomaly, example_mask, measure, Phantom};
use super::manifest::{RunManifest, RunRecorder};
use crate::analysis::{
    exponential_fit, foreground_mask, linear_fit, masked_values, nmse, pearson, psnr, sample_joint, ssim, FitModel,
    FitResult,
};
use crate::error::{PixcueError, Result};
use crate::forward_model::{insert_anomaly, rasterize_ellipse, zero_filled, KSpaceGrid, MaskSpec, RealImage, SamplingMask};
use crate::io::{csv_string, encode_pxi, PxiData};
use crate::net::{forward, ForwardMode, NetworkParameters};
use crate::quantizer::expectation_image;
use crate::uncertainty::{
    error_map, exact_variance_map, fast_variance_map, mc_inference, uncertainty_error_csv, McConfig, UncertaintyMap,
};

pub const METRICS_HEADER: [&str; 10] = [
    "id",
    "contrast_profile",
    "accel",
    "noise_sigma",
    "nmse",
    "psnr_db",
    "ssim",
    "mean_uncertainty_pixcue_exact",
    "mean_uncertainty_pixcue_fast",
    "mean_uncertainty_mc",
];

/// One pass/fail property evaluated by an experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self { name: name.into(), passed, detail }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub id: ExperimentId,
    pub checks: Vec<Check>,
    pub manifest: RunManifest,
}

impl ExperimentOutcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Validation phantom under one acquisition condition.
struct Case<'a> {
    phantom: &'a Phantom,
    tag: String,
    mask_spec: &'a MaskSpec,
    mask: SamplingMask,
    sigma: f64,
    y_u: KSpaceGrid,
}

/// Everything computed for one case.
struct Evaluated {
    recon: RealImage,
    zero_filled: RealImage,
    exact: UncertaintyMap,
    fast: UncertaintyMap,
    mc: Option<UncertaintyMap>,
    error: RealImage,
    foreground: Vec<bool>,
    nmse: f64,
    nmse_zero_filled: f64,
    psnr: f64,
    ssim: f64,
}

impl Evaluated {
    fn fg_mean(&self, map: &RealImage) -> f64 {
        mean(&masked_values(map, &self.foreground))
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

struct Runner<'a> {
    cfg: &'a ExperimentConfig,
    params: &'a NetworkParameters,
    validation: &'a [Phantom],
}

impl<'a> Runner<'a> {
    fn case(&self, index: usize, image: Option<&RealImage>, mask_spec: &'a MaskSpec, sigma: f64) -> Result<Case<'a>> {
        let phantom = &self.validation[index % self.validation.len()];
        let image = image.unwrap_or(&phantom.image);
        let mask = example_mask(&self.cfg.validation_mask(mask_spec), image.rows(), index)?;
        let y_u = measure(image, &mask, sigma, self.cfg.noise_seed(index))?;
        Ok(Case {
            phantom,
            tag: format!("{}_r{}_s{sigma}", phantom.id, mask_spec.accel),
            mask_spec,
            mask,
            sigma,
            y_u,
        })
    }

    /// The case and, under noise, its antithetic twin measured with the
    /// negated noise realization.
    fn noisy_pair(&self, index: usize, mask_spec: &'a MaskSpec, sigma: f64) -> Result<Vec<Case<'a>>> {
        let case = self.case(index, None, mask_spec, sigma)?;
        if sigma == 0.0 {
            return Ok(vec![case]);
        }
        let clean = measure(&case.phantom.image, &case.mask, 0.0, 0)?;
        let mirrored = clean.values().iter().zip(case.y_u.values()).map(|(c, y)| 2.0 * c - y).collect();
        let twin = Case {
            phantom: case.phantom,
            tag: format!("{}_antithetic", case.tag),
            mask_spec,
            mask: case.mask.clone(),
            sigma,
            y_u: KSpaceGrid::new(clean.rows(), clean.cols(), mirrored)?,
        };
        Ok(vec![case, twin])
    }

    fn evaluate(&self, case: &Case, reference: &RealImage, with_mc: bool) -> Result<Evaluated> {
        let volume = forward(&case.y_u, &case.mask, self.params, ForwardMode::Deterministic)?;
        let recon = expectation_image(&volume)?;
        let zf = zero_filled(&case.y_u)?.magnitude();
        let mc = if with_mc {
            let mc_cfg = McConfig { seed: crate::rng::derive_seed(self.cfg.mc.seed, 1), ..self.cfg.mc };
            Some(mc_inference(&case.y_u, &case.mask, self.params, &mc_cfg)?.variance)
        } else {
            None
        };
        Ok(Evaluated {
            exact: exact_variance_map(&volume)?,
            fast: fast_variance_map(&volume)?,
            mc,
            error: error_map(&recon, reference)?,
            foreground: foreground_mask(reference, self.cfg.foreground_threshold),
            nmse: nmse(&recon, reference)?,
            nmse_zero_filled: nmse(&zf, reference)?,
            psnr: psnr(&recon, reference)?,
            ssim: ssim(&recon, reference)?,
            recon,
            zero_filled: zf,
        })
    }

    fn metrics_row(&self, case: &Case, ev: &Evaluated) -> Vec<String> {
        let mc = ev.mc.as_ref().map(|m| ev.fg_mean(m.image())).unwrap_or(f64::NAN);
        vec![
            case.tag.clone(),
            case.phantom.profile.label().into(),
            case.mask_spec.accel.to_string(),
            case.sigma.to_string(),
            fmt(ev.nmse),
            fmt(ev.psnr),
            fmt(ev.ssim),
            fmt(ev.fg_mean(ev.exact.image())),
            fmt(ev.fg_mean(ev.fast.image())),
            fmt(mc),
        ]
    }

    fn write_maps(&self, rec: &mut RunRecorder, dir: &str, reference: &RealImage, ev: &Evaluated) -> Result<()> {
        let mut put = |name: &str, img: &RealImage| rec.write(&format!("{dir}/{name}.pxi"), &encode_pxi(&PxiData::Real(img.clone())));
        put("reference", reference)?;
        put("recon", &ev.recon)?;
        put("zero_filled", &ev.zero_filled)?;
        put("error", &ev.error)?;
        put("uncertainty_exact", ev.exact.image())?;
        put("uncertainty_fast", ev.fast.image())?;
        if let Some(mc) = &ev.mc {
            put("uncertainty_mc", mc.image())?;
        }
        let csv = uncertainty_error_csv(&ev.exact, &ev.error, Some(&ev.foreground))?;
        rec.write(&format!("{dir}/uncertainty_error.csv"), csv.as_bytes())?;
        Ok(())
    }
}

fn fmt(v: f64) -> String {
    format!("{v:.9e}")
}

fn metrics_csv(rows: &[Vec<String>]) -> Vec<u8> {
    csv_string(&METRICS_HEADER, rows).into_bytes()
}

/// Runs one experiment on held-out phantoms with trained parameters, writing
/// its artifacts and manifest under `rec`'s output directory.
pub fn run_experiment(
    id: ExperimentId,
    cfg: &ExperimentConfig,
    params: &NetworkParameters,
    validation: &[Phantom],
    mut rec: RunRecorder,
) -> Result<ExperimentOutcome> {
    if validation.is_empty() {
        return Err(PixcueError::Config("no validation phantoms".into()));
    }
    rec.seed("config", cfg.seed);
    rec.seed("validation_phantoms", cfg.validation.seed);
    rec.seed("mask", cfg.mask.seed);
    rec.seed("mc", cfg.mc.seed);
    let runner = Runner { cfg, params, validation };
    let checks = match id {
        ExperimentId::Exp1 => exp1(&runner, &mut rec)?,
        ExperimentId::Exp2 => exp2(&runner, &mut rec)?,
        ExperimentId::Exp3 => exp3(&runner, &mut rec)?,
        ExperimentId::Exp4 => exp4(&runner, &mut rec)?,
        ExperimentId::Exp5 => exp5(&runner, &mut rec)?,
        ExperimentId::Exp6 => exp6(&runner, &mut rec)?,
    };
    let checks_json = serde_json::to_vec_pretty(&checks)?;
    rec.write("checks.json", &checks_json)?;
    Ok(ExperimentOutcome { id, checks, manifest: rec.finish()? })
}

/// Baseline 4x reconstruction, uncertainty maps, and error maps.
fn exp1(r: &Runner, rec: &mut RunRecorder) -> Result<Vec<Check>> {
    let mut rows = Vec::new();
    let (mut recon_nmse, mut zf_nmse, mut corr) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..r.validation.len() {
        let case = r.case(i, None, &r.cfg.mask, 0.0)?;
        let ev = rec.timed(&format!("evaluate {}", case.tag), || r.evaluate(&case, &case.phantom.image, true))?;
        r.write_maps(rec, &case.phantom.id, &case.phantom.image, &ev)?;
        rows.push(r.metrics_row(&case, &ev));
        recon_nmse.push(ev.nmse);
        zf_nmse.push(ev.nmse_zero_filled);
        corr.push(pearson(
            &masked_values(ev.exact.image(), &ev.foreground),
            &masked_values(&ev.error, &ev.foreground),
        )?);
    }
    rec.write("metrics.csv", &metrics_csv(&rows))?;
    let summary: Vec<Vec<String>> = (0..r.validation.len())
        .map(|i| vec![r.validation[i].id.clone(), fmt(recon_nmse[i]), fmt(zf_nmse[i]), fmt(corr[i])])
        .collect();
    rec.write(
        "summary.csv",
        csv_string(&["id", "nmse_recon", "nmse_zero_filled", "pearson_uncertainty_error"], &summary).as_bytes(),
    )?;
    let (nr, nz, rr) = (mean(&recon_nmse), mean(&zf_nmse), mean(&corr));
    rec.measure("mean_nmse_recon", nr);
    rec.measure("mean_nmse_zero_filled", nz);
    rec.measure("mean_pearson_uncertainty_error", rr);
    Ok(vec![
        Check::new(
            "reconstruction beats zero-filled",
            nr < nz,
            format!("mean NMSE {nr:.5} vs zero-filled {nz:.5}"),
        ),
        Check::new(
            "uncertainty tracks error",
            rr > 0.3,
            format!("mean foreground Pearson r {rr:.4} (> 0.3)"),
        ),
    ])
}

/// Mean foreground exact uncertainty and NMSE over the validation set for one
/// condition. Under noise each phantom is averaged over an antithetic pair.
fn condition(
    r: &Runner,
    rec: &mut RunRecorder,
    mask_spec: &MaskSpec,
    sigma: f64,
    rows: &mut Vec<Vec<String>>,
    points: Option<&mut Vec<(f64, f64, f64, f64)>>,
) -> Result<(f64, f64)> {
    let (mut unc, mut err, mut pts) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..r.validation.len() {
        let mut acc = [0.0; 4];
        let cases = r.noisy_pair(i, mask_spec, sigma)?;
        for case in &cases {
            let ev = rec.timed(&format!("evaluate {}", case.tag), || r.evaluate(case, &case.phantom.image, false))?;
            rows.push(r.metrics_row(case, &ev));
            let values = [ev.fg_mean(ev.exact.image()), ev.nmse, ev.psnr, ev.ssim];
            acc.iter_mut().zip(values).for_each(|(a, v)| *a += v / cases.len() as f64);
        }
        unc.push(acc[0]);
        err.push(acc[1]);
        pts.push((acc[0], acc[1], acc[2], acc[3]));
    }
    if let Some(p) = points {
        p.extend(pts);
    }
    Ok((mean(&unc), mean(&err)))
}

/// Noise sweep at the training mask.
fn exp2(r: &Runner, rec: &mut RunRecorder) -> Result<Vec<Check>> {
    let mut rows = Vec::new();
    let mut sweep = Vec::new();
    for &sigma in &r.cfg.noise_sigmas {
        let (u, e) = condition(r, rec, &r.cfg.mask, sigma, &mut rows, None)?;
        sweep.push((sigma, u, e));
    }
    rec.write("metrics.csv", &metrics_csv(&rows))?;
    let table: Vec<Vec<String>> = sweep.iter().map(|(s, u, e)| vec![s.to_string(), fmt(*u), fmt(*e)]).collect();
    rec.write(
        "noise_sweep.csv",
        csv_string(&["noise_sigma", "mean_uncertainty_pixcue_exact", "mean_nmse"], &table).as_bytes(),
    )?;
    let monotone = sweep.windows(2).all(|w| w[1].1 >= w[0].1);
    let listing: Vec<String> = sweep.iter().map(|(s, u, _)| format!("{s}: {u:.6}")).collect();
    Ok(vec![Check::new(
        "uncertainty non-decreasing in noise",
        monotone,
        listing.join(", "),
    )])
}

/// Training mask against the harder mask.
fn exp3(r: &Runner, rec: &mut RunRecorder) -> Result<Vec<Check>> {
    let mut rows = Vec::new();
    let (u_base, e_base) = condition(r, rec, &r.cfg.mask, 0.0, &mut rows, None)?;
    let (u_hard, e_hard) = condition(r, rec, &r.cfg.stress_mask, 0.0, &mut rows, None)?;
    rec.write("metrics.csv", &metrics_csv(&rows))?;
    let table = vec![
        vec![
            r.cfg.mask.accel.to_string(),
            r.cfg.mask.center_fraction.to_string(),
            fmt(u_base),
            fmt(e_base),
        ],
        vec![
            r.cfg.stress_mask.accel.to_string(),
            r.cfg.stress_mask.center_fraction.to_string(),
            fmt(u_hard),
            fmt(e_hard),
        ],
    ];
    rec.write(
        "acceleration.csv",
        csv_string(&["accel", "center_fraction", "mean_uncertainty_pixcue_exact", "mean_nmse"], &table).as_bytes(),
    )?;
    Ok(vec![Check::new(
        "uncertainty larger under the harder mask",
        u_hard > u_base,
        format!("{u_hard:.6} at {}x vs {u_base:.6} at {}x", r.cfg.stress_mask.accel, r.cfg.mask.accel),
    )])
}

/// Withheld anomalies: is the uncertainty inside higher than elsewhere?
fn exp4(r: &Runner, rec: &mut RunRecorder) -> Result<Vec<Check>> {
    let mut rows = Vec::new();
    let mut wins = 0;
    for i in 0..r.cfg.anomaly_cases {
        let phantom = &r.validation[i % r.validation.len()];
        let lesion = anomaly(r.cfg.anomaly_seed(), i);
        let image = insert_anomaly(&phantom.image, &lesion)?;
        let case = r.case(i, Some(&image), &r.cfg.mask, 0.0)?;
        let ev = r.evaluate(&case, &image, false)?;
        let inside = rasterize_ellipse(image.rows(), &lesion);
        let outside: Vec<bool> = ev.foreground.iter().zip(&inside).map(|(&f, &a)| f && !a).collect();
        let u_in = mean(&masked_values(ev.exact.image(), &inside));
        let u_out = mean(&masked_values(ev.exact.image(), &outside));
        let exceeds = u_in > u_out;
        wins += exceeds as usize;
        r.write_maps(rec, &format!("case_{i:02}"), &image, &ev)?;
        rows.push(vec![
            i.to_string(),
            phantom.id.clone(),
            fmt(u_in),
            fmt(u_out),
            exceeds.to_string(),
        ]);
    }
    rec.write(
        "anomaly.csv",
        csv_string(&["case", "phantom", "mean_uncertainty_inside", "mean_uncertainty_outside", "exceeds"], &rows)
            .as_bytes(),
    )?;
    let cases = r.cfg.anomaly_cases;
    Ok(vec![Check::new(
        "anomaly more uncertain than surrounding tissue",
        cases > 0 && wins * 10 >= cases * 8,
        format!("{wins} of {cases} cases"),
    )])
}

/// Single-pass uncertainty against MC dropout on one validation phantom.
fn exp5(r: &Runner, rec: &mut RunRecorder) -> Result<Vec<Check>> {
    let case = r.case(0, None, &r.cfg.mask, 0.0)?;
    const REPEATS: usize = 5;
    let start = Instant::now();
    let mut pixcue = None;
    for _ in 0..REPEATS {
        let v = forward(&case.y_u, &case.mask, r.params, ForwardMode::Deterministic)?;
        pixcue = Some(exact_variance_map(&v)?);
    }
    let t_pixcue = start.elapsed().as_secs_f64() / REPEATS as f64;
    let pixcue = pixcue.expect("at least one repeat");
    let start = Instant::now();
    let mc = mc_inference(&case.y_u, &case.mask, r.params, &r.cfg.mc)?;
    let t_mc = start.elapsed().as_secs_f64();
    let ratio = t_mc / t_pixcue;
    rec.measure("pixcue_seconds", t_pixcue);
    rec.measure("mc_seconds", t_mc);
    rec.measure("mc_runtime_ratio", ratio);
    rec.measure("mc_passes", r.cfg.mc.passes as f64);

    let fg = foreground_mask(&case.phantom.image, r.cfg.foreground_threshold);
    let joint = sample_joint(pixcue.image(), mc.variance.image(), r.cfg.joint_pixels, r.cfg.joint_seed(), Some(&fg))?;
    let rows: Vec<Vec<String>> = joint
        .iter()
        .map(|&(row, col, a, b)| {
            vec![row.to_string(), col.to_string(), fmt(a), fmt(b), fmt(mc.mean_distribution.image().get(row, col))]
        })
        .collect();
    rec.write(
        "joint.csv",
        csv_string(&["row", "col", "pixcue_exact", "mc_variance", "mc_mean_distribution"], &rows).as_bytes(),
    )?;
    let a: Vec<f64> = joint.iter().map(|p| p.2).collect();
    let b: Vec<f64> = joint.iter().map(|p| p.3).collect();
    let r_joint = pearson(&a, &b)?;
    rec.measure("pearson_pixcue_mc", r_joint);
    let put = |rec: &mut RunRecorder, name: &str, img: &RealImage| {
        rec.write(&format!("{name}.pxi"), &encode_pxi(&PxiData::Real(img.clone())))
    };
    put(rec, "uncertainty_exact", pixcue.image())?;
    put(rec, "uncertainty_mc", mc.variance.image())?;
    put(rec, "uncertainty_mc_meandist", mc.mean_distribution.image())?;

    // Degenerate case: dropout disabled.
    let off = McConfig { dropout_fraction: 0.0, ..r.cfg.mc };
    let off_result = mc_inference(&case.y_u, &case.mask, r.params, &off)?;
    let zero = |m: &UncertaintyMap| m.values().iter().filter(|&&v| v != 0.0).count();
    let (nz_var, nz_mean) = (zero(&off_result.variance), zero(&off_result.mean_distribution));

    Ok(vec![
        Check::new(
            "single-pass uncertainty correlates with MC dropout",
            r_joint > 0.3,
            format!("Pearson r {r_joint:.4} over {} foreground pixels; MC/single-pass runtime {ratio:.1}x", joint.len()),
        ),
        Check::new(
            "MC variance vanishes without dropout",
            nz_var == 0,
            format!("{nz_var} nonzero pixels"),
        ),
        Check::new(
            "MC mean-distribution variance vanishes without dropout",
            nz_mean == 0,
            format!("{nz_mean} nonzero pixels"),
        ),
    ])
}

fn fit_rows(x: &[f64], points: &[(f64, f64, f64, f64)]) -> (Vec<Vec<String>>, Result<FitResult>) {
    let metrics: [(&str, Vec<f64>); 3] = [
        ("nmse", points.iter().map(|p| p.1).collect()),
        ("psnr_db", points.iter().map(|p| p.2).collect()),
        ("ssim", points.iter().map(|p| p.3).collect()),
    ];
    let mut rows = Vec::new();
    let mut nmse_linear = None;
    for (name, y) in &metrics {
        for model in [FitModel::Linear, FitModel::Exponential] {
            let fit = match model {
                FitModel::Linear => linear_fit(x, y),
                FitModel::Exponential => exponential_fit(x, y),
            };
            let label = format!("{model:?}").to_lowercase();
            rows.push(match &fit {
                Ok(f) => vec![
                    name.to_string(),
                    label,
                    fmt(f.coefficients[0]),
                    fmt(f.coefficients[1]),
                    fmt(f.r_squared),
                    String::new(),
                ],
                Err(e) => vec![
                    name.to_string(),
                    label,
                    "nan".into(),
                    "nan".into(),
                    "nan".into(),
                    e.to_string().replace(',', ";"),
                ],
            });
            if nmse_linear.is_none() {
                nmse_linear = Some(fit);
            }
        }
    }
    (rows, nmse_linear.expect("nmse linear fit"))
}

const FIT_HEADER: [&str; 6] = ["metric", "model", "coef_a", "coef_b", "r_squared", "note"];

/// Metric fits against mean uncertainty. Each sweep condition (mask, noise)
/// contributes one point averaged over the validation set; per-image fits
/// are written alongside.
fn exp6(r: &Runner, rec: &mut RunRecorder) -> Result<Vec<Check>> {
    let mut rows = Vec::new();
    let mut per_image = Vec::new();
    let mut per_condition = Vec::new();
    let mut table = Vec::new();
    for spec in [&r.cfg.mask, &r.cfg.stress_mask] {
        for &sigma in &r.cfg.noise_sigmas {
            let mut pts = Vec::new();
            condition(r, rec, spec, sigma, &mut rows, Some(&mut pts))?;
            let avg = |f: fn(&(f64, f64, f64, f64)) -> f64| mean(&pts.iter().map(f).collect::<Vec<_>>());
            let point = (avg(|p| p.0), avg(|p| p.1), avg(|p| p.2), avg(|p| p.3));
            table.push(vec![
                fmt(spec.accel),
                fmt(spec.center_fraction),
                sigma.to_string(),
                fmt(point.0),
                fmt(point.1),
                fmt(point.2),
                fmt(point.3),
            ]);
            per_condition.push(point);
            per_image.extend(pts);
        }
    }
    rec.write("metrics.csv", &metrics_csv(&rows))?;
    rec.write(
        "conditions.csv",
        csv_string(
            &["accel", "center_fraction", "noise_sigma", "mean_uncertainty_pixcue_exact", "mean_nmse", "mean_psnr_db", "mean_ssim"],
            &table,
        )
        .as_bytes(),
    )?;
    let x: Vec<f64> = per_condition.iter().map(|p| p.0).collect();
    let (fit_table, nmse_fit) = fit_rows(&x, &per_condition);
    rec.write("fits.csv", csv_string(&FIT_HEADER, &fit_table).as_bytes())?;
    let xi: Vec<f64> = per_image.iter().map(|p| p.0).collect();
    let (image_table, image_fit) = fit_rows(&xi, &per_image);
    rec.write("fits_per_image.csv", csv_string(&FIT_HEADER, &image_table).as_bytes())?;

    let nmse_fit = nmse_fit.map_err(|e| PixcueError::InvalidArgument(e.to_string()))?;
    let slope = nmse_fit.coefficients[0];
    rec.measure("nmse_linear_slope", slope);
    rec.measure("nmse_linear_r_squared", nmse_fit.r_squared);
    if let Ok(f) = &image_fit {
        rec.measure("nmse_linear_slope_per_image", f.coefficients[0]);
        rec.measure("nmse_linear_r_squared_per_image", f.r_squared);
    }
    Ok(vec![Check::new(
        "NMSE rises with mean uncertainty",
        slope > 0.0,
        format!("slope {slope:.5}, R^2 {:.4} over {} sweep conditions", nmse_fit.r_squared, x.len()),
    )])
}

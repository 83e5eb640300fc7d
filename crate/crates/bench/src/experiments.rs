//! The experiment families behind each subcommand. Everything here returns
//! rows; writing files and plots is the CLI's job.

use std::path::Path;

use pnlk::accel::{ablation, explore_design, pipeline_schedule, pointnet_modules, unroll_candidates};
use pnlk::accel::{Board, CalibrationProfile, LatencyModel, PipelineReport};
use pnlk::data::{load_off, load_off_mesh, make_pair, normalize_unit_cube, sample_surface, Pair, PairSpec};
use pnlk::fixedpoint::{QFormat, QuantizedPointNet};
use pnlk::geometry::{registration_error_with, PointCloud};
use pnlk::icp::icp_register;
use pnlk::lk::{register, RegistrationResult};
use pnlk::pointnet::{global_feature, PointNetParams};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{BenchConfig, Statistic};
use crate::error::{at_path, BenchError, Result};
use crate::record::*;

/// Float and quantized views of one set of weights.
pub struct Networks {
    pub float: PointNetParams<f64>,
    pub quant: QuantizedPointNet,
}

impl Networks {
    pub fn new(params: PointNetParams<f64>, cfg: &BenchConfig) -> Self {
        let quant = QuantizedPointNet::with_mode(&params, cfg.quant.half_width, cfg.quant.accumulator);
        Self { float: params, quant }
    }
}

/// Independent seed for one `(stream, index)` cell of an experiment grid.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(stream);
    rng.set_word_pos(2 * index as u128);
    rng.random()
}

/// Mesh vertices (or a surface sample of `surface` points), normalized to
/// the unit cube.
pub fn load_template(path: &Path, surface: Option<(usize, u64)>) -> Result<PointCloud<f64>> {
    let cloud = match surface {
        Some((n, seed)) => sample_surface(&at_path(path, load_off_mesh(path))?, n, seed)?,
        None => at_path(path, load_off(path))?,
    };
    Ok(normalize_unit_cube(&cloud))
}

pub fn pair_spec(cfg: &BenchConfig, angle_deg: f64, seed: u64) -> PairSpec {
    PairSpec {
        initial_angle_deg: angle_deg,
        translation_bound: cfg.pair.translation_bound,
        seed,
        n_points: cfg.pair.n_points,
        resampling: cfg.pair.resampling,
    }
}

fn run_raw(
    method: Method,
    nets: Option<&Networks>,
    template: &PointCloud<f64>,
    source: &PointCloud<f64>,
    cfg: &BenchConfig,
) -> Result<RegistrationResult<f64>> {
    let need = || BenchError::Usage(format!("{method} needs a weight blob (--weights)"));
    Ok(match method {
        Method::PointnetlkFloat => register(&nets.ok_or_else(need)?.float, template, source, &cfg.lk)?,
        Method::PointnetlkQuant => register(&nets.ok_or_else(need)?.quant, template, source, &cfg.lk)?,
        Method::Icp => icp_register(template, source, &cfg.icp)?,
    })
}

/// One registration of `source` onto `template`. `gt` maps source to
/// template; without it the error columns stay empty.
pub fn run_clouds(
    method: Method,
    nets: Option<&Networks>,
    template: &PointCloud<f64>,
    source: &PointCloud<f64>,
    gt: Option<&pnlk::geometry::RigidTransform<f64>>,
    cfg: &BenchConfig,
) -> Result<RunRecord> {
    let res = run_raw(method, nets, template, source, cfg)?;
    let err = gt.map(|g| registration_error_with(g, &res.transform, cfg.rotation_metric));
    let mut rec = RunRecord {
        method,
        qformat: (method == Method::PointnetlkQuant).then(|| cfg.quant.half_width.half_width()),
        n_points: source.len(),
        angle_deg: None,
        seed: 0,
        rot_error_deg: err.map(|e| e.rotation_deg),
        trans_error: err.map(|e| e.translation),
        iterations: res.iterations_used,
        converged: res.converged,
        total_s: 0.0,
        feature_s: 0.0,
        jacobian_s: 0.0,
        correspondence_s: 0.0,
        solve_s: 0.0,
        transform_s: 0.0,
    };
    rec.set_timings(&res.timings);
    Ok(rec)
}

pub fn run_pair(
    method: Method,
    nets: Option<&Networks>,
    pair: &Pair,
    spec: &PairSpec,
    cfg: &BenchConfig,
) -> Result<RunRecord> {
    let mut rec = run_clouds(method, nets, &pair.template, &pair.source, Some(&pair.gt), cfg)?;
    rec.angle_deg = Some(spec.initial_angle_deg);
    rec.seed = spec.seed;
    Ok(rec)
}

/// Every `(method, angle, model, trial)` registration. The pair seed
/// depends only on `(model, trial)`, so all methods and angles see the
/// same axis, translation and resampling draws.
pub fn sweep_runs(
    templates: &[PointCloud<f64>],
    angles: &[f64],
    methods: &[Method],
    trials: usize,
    seed: u64,
    cfg: &BenchConfig,
    nets: Option<&Networks>,
) -> Result<Vec<(usize, RunRecord)>> {
    if templates.is_empty() {
        return Err(BenchError::Usage("corpus is empty".into()));
    }
    let mut cells = Vec::new();
    for &m in methods {
        for &a in angles {
            for model in 0..templates.len() {
                for trial in 0..trials {
                    cells.push((m, a, model, trial));
                }
            }
        }
    }
    cells
        .into_par_iter()
        .map(|(m, a, model, trial)| {
            let spec = pair_spec(cfg, a, derive_seed(seed, model as u64, trial as u64));
            let pair = make_pair(&templates[model], &spec)?;
            Ok((model, run_pair(m, nets, &pair, &spec, cfg)?))
        })
        .collect()
}

/// Per-model means, then the mean over models.
pub fn aggregate_sweep(runs: &[(usize, RunRecord)], methods: &[Method], angles: &[f64]) -> Vec<SweepRow> {
    let mut rows = Vec::new();
    for &m in methods {
        for &a in angles {
            let cell: Vec<&(usize, RunRecord)> = runs
                .iter()
                .filter(|(_, r)| r.method == m && r.angle_deg == Some(a))
                .collect();
            let mut models: Vec<usize> = cell.iter().map(|(i, _)| *i).collect();
            models.sort_unstable();
            models.dedup();
            let per_model = |f: &dyn Fn(&RunRecord) -> f64| {
                models
                    .iter()
                    .map(|i| mean(cell.iter().filter(|(j, _)| j == i).map(|(_, r)| f(r))))
                    .sum::<f64>()
                    / models.len() as f64
            };
            rows.push(SweepRow {
                method: m,
                angle_deg: a,
                models: models.len(),
                trials: cell.len() / models.len().max(1),
                mean_rot_error_deg: per_model(&|r| r.rot_error_deg.unwrap_or(f64::NAN)),
                mean_trans_error: per_model(&|r| r.trans_error.unwrap_or(f64::NAN)),
                mean_iterations: per_model(&|r| r.iterations as f64),
                converged_frac: per_model(&|r| r.converged as u8 as f64),
            });
        }
    }
    rows
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Least-squares `log t = slope · log N + intercept`.
pub fn loglog_fit(points: &[(f64, f64)]) -> (f64, f64) {
    let logs: Vec<(f64, f64)> = points.iter().map(|(n, t)| (n.ln(), t.ln())).collect();
    let mx = mean(logs.iter().map(|p| p.0));
    let my = mean(logs.iter().map(|p| p.1));
    let sxy: f64 = logs.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = logs.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Wall time per `(method, N)` with every method pinned to its full
/// iteration budget, so iteration counts do not vary with `N`. Runs are
/// sequential on the calling thread.
pub fn scaling(
    base: &pnlk::data::Mesh,
    sizes: &[usize],
    methods: &[Method],
    seed: u64,
    angle_deg: f64,
    cfg: &BenchConfig,
    nets: Option<&Networks>,
) -> Result<(Vec<ScalingRow>, Vec<SlopeRow>)> {
    if sizes.len() < 3 {
        return Err(BenchError::Usage("scaling needs at least three sizes".into()));
    }
    let mut fixed = cfg.clone();
    fixed.lk.convergence_tol = 0.0;
    fixed.icp.mse_change_tol = 0.0;

    let mut rows = Vec::new();
    let mut slopes = Vec::new();
    for &m in methods {
        let mut points = Vec::new();
        for &n in sizes {
            let template = normalize_unit_cube(&sample_surface(base, n, seed)?);
            let mut spec = pair_spec(&fixed, angle_deg, seed);
            spec.n_points = n;
            let pair = make_pair(&template, &spec)?;
            let mut times = Vec::with_capacity(fixed.timing.repetitions);
            let mut iterations = 0;
            for _ in 0..fixed.timing.repetitions {
                let res = run_raw(m, nets, &pair.template, &pair.source, &fixed)?;
                iterations = res.iterations_used;
                times.push(res.timings.total.as_secs_f64());
            }
            let seconds = match fixed.timing.statistic {
                Statistic::Median => median(&mut times),
                Statistic::Mean => mean(times.iter().copied()),
            };
            points.push((n as f64, seconds));
            rows.push(ScalingRow {
                method: m,
                n_points: n,
                iterations,
                seconds,
            });
        }
        let (slope, intercept) = loglog_fit(&points);
        slopes.push(SlopeRow { method: m, slope, intercept });
    }
    Ok((rows, slopes))
}

/// Phase breakdown of one registration. `other` is whatever the named
/// phases do not cover, so shares add up to 100.
pub fn profile(
    method: Method,
    nets: Option<&Networks>,
    pair: &Pair,
    cfg: &BenchConfig,
) -> Result<Vec<PhaseRow>> {
    // Warm-up run so first-touch allocation does not land in any phase.
    run_raw(method, nets, &pair.template, &pair.source, cfg)?;
    let t = run_raw(method, nets, &pair.template, &pair.source, cfg)?.timings;
    let total = t.total.as_secs_f64();
    let named = [
        ("feature", t.feature),
        ("jacobian", t.jacobian),
        ("correspondence", t.correspondence),
        ("solve", t.solve),
        ("transform", t.transform),
    ];
    let mut rows: Vec<PhaseRow> = named
        .iter()
        .map(|(name, d)| PhaseRow {
            phase: name.to_string(),
            seconds: d.as_secs_f64(),
            share_pct: 100.0 * d.as_secs_f64() / total,
        })
        .collect();
    let other = (total - t.phase_sum().as_secs_f64()).max(0.0);
    rows.push(PhaseRow {
        phase: "other".into(),
        seconds: other,
        share_pct: 100.0 * other / total,
    });
    Ok(rows)
}

/// Mean absolute difference between the quantized and float global
/// features, averaged over channels and clouds.
pub fn feature_deviation(
    params: &PointNetParams<f64>,
    net: &QuantizedPointNet,
    clouds: &[PointCloud<f64>],
) -> Result<f64> {
    let mut total = 0.0;
    for c in clouds {
        let reference = global_feature(params, c)?;
        let (q, _) = net.global_feature(c);
        total += mean(reference.values().iter().zip(q.values()).map(|(a, b)| (a - b).abs()));
    }
    Ok(total / clouds.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonotonicityReport {
    /// Feature deviation never grows as `n` increases.
    pub feature_non_increasing: bool,
    /// Rotation error at the widest format does not exceed the narrowest.
    pub widest_not_worse: bool,
}

/// Feature deviation and registration error per `(format, angle)`, with the
/// same pair seeds for every format.
pub fn quant_eval(
    params: &PointNetParams<f64>,
    templates: &[PointCloud<f64>],
    formats: &[QFormat],
    angles: &[f64],
    seed: u64,
    cfg: &BenchConfig,
) -> Result<(Vec<QuantRow>, MonotonicityReport)> {
    if templates.is_empty() {
        return Err(BenchError::Usage("corpus is empty".into()));
    }
    let mut formats = formats.to_vec();
    formats.sort_by_key(|f| f.half_width());
    let mut cells = Vec::new();
    for (fi, _) in formats.iter().enumerate() {
        for (ai, _) in angles.iter().enumerate() {
            for model in 0..templates.len() {
                cells.push((fi, ai, model));
            }
        }
    }
    let nets: Vec<QuantizedPointNet> = formats
        .iter()
        .map(|f| QuantizedPointNet::with_mode(params, *f, cfg.quant.accumulator))
        .collect();
    let results: Vec<(usize, usize, f64, f64, f64, u64)> = cells
        .into_par_iter()
        .map(|(fi, ai, model)| {
            let spec = pair_spec(cfg, angles[ai], derive_seed(seed, model as u64, 0));
            let pair = make_pair(&templates[model], &spec)?;
            let net = &nets[fi];
            let dev = feature_deviation(params, net, std::slice::from_ref(&pair.source))?;
            let (_, stats) = net.global_feature(&pair.source);
            let res = register(net, &pair.template, &pair.source, &cfg.lk)?;
            let e = registration_error_with(&pair.gt, &res.transform, cfg.rotation_metric);
            Ok((fi, ai, dev, e.rotation_deg, e.translation, stats.clamps))
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for (fi, f) in formats.iter().enumerate() {
        for (ai, &a) in angles.iter().enumerate() {
            let cell: Vec<_> = results.iter().filter(|r| r.0 == fi && r.1 == ai).collect();
            rows.push(QuantRow {
                half_width: f.half_width(),
                total_bits: f.total_bits(),
                angle_deg: a,
                models: cell.len(),
                mean_feature_dev: mean(cell.iter().map(|r| r.2)),
                mean_rot_error_deg: mean(cell.iter().map(|r| r.3)),
                mean_trans_error: mean(cell.iter().map(|r| r.4)),
                clamps: cell.iter().map(|r| r.5).sum(),
            });
        }
    }
    let per_format = |f: &dyn Fn(&QuantRow) -> f64| -> Vec<f64> {
        formats
            .iter()
            .map(|q| mean(rows.iter().filter(|r| r.half_width == q.half_width()).map(f)))
            .collect()
    };
    let dev = per_format(&|r| r.mean_feature_dev);
    let rot = per_format(&|r| r.mean_rot_error_deg);
    let report = MonotonicityReport {
        feature_non_increasing: dev.windows(2).all(|w| w[1] <= w[0]),
        widest_not_worse: rot.last() <= rot.first(),
    };
    Ok((rows, report))
}

pub fn module_rows(report: &PipelineReport) -> Vec<ModuleRow> {
    report
        .modules
        .iter()
        .enumerate()
        .map(|(i, m)| ModuleRow {
            module: m.module.clone(),
            unroll: m.unroll,
            cycles: m.cycles,
            latency_us: m.latency_us,
            source: m.source.to_string(),
            bottleneck: i == report.bottleneck,
        })
        .collect()
}

/// The calibrated design under the inter-layer pipeline.
pub fn reference_report(profile: &CalibrationProfile, n_points: usize) -> Result<PipelineReport> {
    let specs = profile.chain(&profile.reference_unrolls()?, LatencyModel::Calibrated)?;
    Ok(pipeline_schedule(&specs, n_points)?)
}

pub fn ablation_rows(profile: &CalibrationProfile, n_points: usize, board: &Board) -> Result<Vec<AblationCsvRow>> {
    let rows = ablation(profile, n_points, board)?;
    let naive = rows[0].report.total_us;
    Ok(rows
        .into_iter()
        .map(|r| {
            let res = r.report.resources.unwrap_or_default();
            let u = r.report.utilization.unwrap_or_default();
            AblationCsvRow {
                design: r.design.to_string(),
                n_points,
                interval_us: r.report.interval_us,
                fill_us: r.report.fill_us,
                total_us: r.report.total_us,
                speedup_vs_naive: naive / r.report.total_us,
                dsp: res.dsp,
                bram: res.bram,
                ff: res.ff,
                lut: res.lut,
                dsp_pct: 100.0 * u.dsp,
                bram_pct: 100.0 * u.bram,
                ff_pct: 100.0 * u.ff,
                lut_pct: 100.0 * u.lut,
            }
        })
        .collect())
}

/// Designs whose unroll factors lie within a factor `2^span` of the
/// calibrated ones, ranked by pipelined latency. Empty when nothing fits.
pub fn explore_rows(
    profile: &CalibrationProfile,
    span: u32,
    board: &Board,
    n_points: usize,
    top: usize,
) -> Result<Vec<ExploreRow>> {
    let reference = profile.reference_unrolls()?;
    let space: Vec<Vec<u32>> = pointnet_modules()
        .iter()
        .zip(&reference)
        .map(|(s, &b)| {
            unroll_candidates(*s)
                .into_iter()
                .filter(|c| {
                    let (lo, hi) = (c.min(&b), c.max(&b));
                    hi / lo <= 1 << span
                })
                .collect()
        })
        .collect();
    let ranked = explore_design(profile, &space, board, n_points, LatencyModel::Calibrated)?;
    Ok(ranked
        .into_iter()
        .take(top)
        .enumerate()
        .map(|(i, d)| {
            let res = d.report.resources.unwrap_or_default();
            ExploreRow {
                rank: i + 1,
                unrolls: d.unrolls.iter().map(u32::to_string).collect::<Vec<_>>().join("-"),
                interval_us: d.report.interval_us,
                total_us: d.report.total_us,
                dsp: res.dsp,
                bram: res.bram,
            }
        })
        .collect())
}

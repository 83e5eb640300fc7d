use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pnlk::accel::{Board, CalibrationProfile};
use pnlk::data::corpus::{list_corpus, shape_mesh};
use pnlk::data::{
    generate_corpus, load_off_mesh, make_pair, read_cloud_csv, read_weights, write_cloud_csv, write_values_csv,
    write_weights, ValueWidth,
};
use pnlk::fixedpoint::{QFormat, SWEEP_HALF_WIDTHS};
use pnlk::geometry::PointCloud;
use pnlk::pointnet::{random_params, PointNetParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::BenchConfig;
use crate::error::{at_path, BenchError, Result};
use crate::experiments::{self, Networks};
use crate::plot::{line_chart, LineChart};
use crate::record::{print_csv, write_csv, Method, RunRecord};

const WEIGHTS_HINT: &str = "generate random weights with `pnlk gen-weights --out weights.pnlk`, \
or export trained ones with the trainer (see trainer/README.md)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum OutputFormat {
    /// CSV tables only.
    Csv,
    /// CSV tables plus SVG charts drawn from them.
    #[default]
    Svg,
}

#[derive(Debug, Parser)]
#[command(name = "pnlk", version, about = "PointNetLK, ICP and accelerator-model benchmarks")]
pub struct Cli {
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = OutputFormat::Svg)]
    pub format: OutputFormat,
    /// TOML file overriding LK, ICP, quantization, timing and pair defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for trial-parallel commands (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Register one pair and print its run record.
    Register(RegisterArgs),
    /// Mean error per method over initial angles.
    SweepAngle(SweepArgs),
    /// Wall time against point count, with fitted log-log slopes.
    Scaling(ScalingArgs),
    /// Phase breakdown of one registration.
    Profile(ProfileArgs),
    /// Quantized-feature deviation and registration error per Q-format.
    QuantEval(QuantArgs),
    /// Accelerator latency and resource model.
    Accel(AccelArgs),
    /// Write a template/source pair and its ground truth as CSV.
    GenPair(GenPairArgs),
    /// Describe a weight blob.
    WeightsInfo(WeightsInfoArgs),
    /// Write a blob of seeded random weights.
    GenWeights(GenWeightsArgs),
    /// Write a corpus of synthetic OFF meshes.
    GenCorpus(GenCorpusArgs),
}

#[derive(Debug, Args)]
pub struct RegisterArgs {
    /// Template cloud: `.off` mesh or `x,y,z` CSV.
    #[arg(long)]
    pub template: PathBuf,
    /// Source cloud. Without it a pair is generated from the template.
    #[arg(long)]
    pub source: Option<PathBuf>,
    #[arg(long, default_value_t = 30.0)]
    pub angle: f64,
    #[arg(long, value_enum, default_value_t = Method::PointnetlkFloat)]
    pub method: Method,
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Half width `n` of the quantized format, overriding the config.
    #[arg(long)]
    pub qbits: Option<u32>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0])]
    pub angles: Vec<f64>,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = Method::ALL)]
    pub methods: Vec<Method>,
    #[arg(long, default_value_t = 1)]
    pub trials: usize,
    #[arg(long)]
    pub weights: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScalingArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [256, 512, 1024, 2048, 4096])]
    pub sizes: Vec<usize>,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [Method::PointnetlkFloat, Method::Icp])]
    pub methods: Vec<Method>,
    /// Mesh to sample; a synthetic torus otherwise.
    #[arg(long)]
    pub mesh: Option<PathBuf>,
    #[arg(long, default_value_t = 30.0)]
    pub angle: f64,
    /// Weight blob; seeded random weights otherwise.
    #[arg(long)]
    pub weights: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    #[arg(long, value_enum, default_value_t = Method::PointnetlkFloat)]
    pub method: Method,
    #[arg(long, default_value_t = 1024)]
    pub n_points: usize,
    #[arg(long)]
    pub mesh: Option<PathBuf>,
    #[arg(long, default_value_t = 30.0)]
    pub angle: f64,
    #[arg(long)]
    pub weights: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct QuantArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = SWEEP_HALF_WIDTHS)]
    pub formats: Vec<u32>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 30.0, 60.0, 90.0])]
    pub angles: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct AccelArgs {
    /// Calibration profile TOML; the shipped ZCU104 profile otherwise.
    #[arg(long)]
    pub profile: Option<PathBuf>,
    #[arg(long, default_value_t = 1024)]
    pub n_points: usize,
    /// zcu104, ultra96v2 or unlimited.
    #[arg(long, default_value = "zcu104")]
    pub board: String,
    /// Also search unroll factors within a factor `2^span` of the profile's.
    #[arg(long)]
    pub explore: bool,
    #[arg(long, default_value_t = 1)]
    pub span: u32,
    #[arg(long, default_value_t = 10)]
    pub top: usize,
}

#[derive(Debug, Args)]
pub struct GenPairArgs {
    #[arg(long)]
    pub template: PathBuf,
    #[arg(long, default_value_t = 30.0)]
    pub angle: f64,
}

#[derive(Debug, Args)]
pub struct WeightsInfoArgs {
    #[arg(long)]
    pub weights: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WidthArg {
    F32,
    F64,
}

#[derive(Debug, Args)]
pub struct GenWeightsArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = WidthArg::F32)]
    pub width: WidthArg,
    /// Record this Q-format half width in the header.
    #[arg(long)]
    pub qbits: Option<u32>,
}

#[derive(Debug, Args)]
pub struct GenCorpusArgs {
    #[arg(long)]
    pub dir: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub count: usize,
}

/// Entry point of the `pnlk` binary.
pub fn run() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli, &mut std::io::stdout().lock()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => BenchConfig::load(p)?,
        None => BenchConfig::default(),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build()
        .map_err(|e| BenchError::Usage(e.to_string()))?;
    let mut buf = Vec::new();
    let res = pool.install(|| dispatch(&cli, cfg, &mut buf));
    out.write_all(&buf).map_err(|e| BenchError::Io("<stdout>".into(), e))?;
    res
}

fn dispatch(cli: &Cli, mut cfg: BenchConfig, out: &mut dyn Write) -> Result<()> {
    let ctx = Ctx { cli, out_dir: &cli.out_dir };
    match &cli.command {
        Command::Register(a) => {
            if let Some(n) = a.qbits {
                cfg.quant.half_width = QFormat::new(n)?;
            }
            let rec = cmd_register(a, cli.seed, &cfg)?;
            print_csv(out, &[rec])
        }
        Command::SweepAngle(a) => ctx.sweep(a, &cfg, out),
        Command::Scaling(a) => ctx.scaling(a, &cfg, out),
        Command::Profile(a) => {
            let rows = cmd_profile(a, cli.seed, &cfg)?;
            let path = ctx.path("profile");
            write_csv(&path, &rows)?;
            print_csv(out, &rows)
        }
        Command::QuantEval(a) => ctx.quant(a, &cfg, out),
        Command::Accel(a) => ctx.accel(a, out),
        Command::GenPair(a) => {
            let template = experiments::load_template(&a.template, None)?;
            let spec = experiments::pair_spec(&cfg, a.angle, cli.seed);
            let pair = make_pair(&template, &spec)?;
            std::fs::create_dir_all(&cli.out_dir).map_err(|e| BenchError::Io(cli.out_dir.clone(), e))?;
            write_cloud_csv(&cli.out_dir.join("template.csv"), &pair.template)?;
            write_cloud_csv(&cli.out_dir.join("source.csv"), &pair.source)?;
            let gt: Vec<f64> = pair.gt.matrix().transpose().iter().copied().collect();
            write_values_csv(&cli.out_dir.join("gt.csv"), &gt)?;
            say(out, &format!("wrote template.csv, source.csv and gt.csv (row-major 4x4) to {}", cli.out_dir.display()))
        }
        Command::WeightsInfo(a) => {
            let (params, header) = at_path(&a.weights, read_weights(&a.weights))?;
            let q = header.qformat.map_or("none".to_string(), |f| f.to_string());
            say(
                out,
                &format!(
                    "version {}.{}\nvalue width {:?}\nqformat {q}\nlayers {}",
                    header.major, header.minor, header.width, header.layers
                ),
            )?;
            for (i, l) in params.layers().iter().enumerate() {
                say(out, &format!("  {i}: {} -> {}", l.in_dim(), l.out_dim()))?;
            }
            Ok(())
        }
        Command::GenWeights(a) => {
            let width = match a.width {
                WidthArg::F32 => ValueWidth::F32,
                WidthArg::F64 => ValueWidth::F64,
            };
            let q = a.qbits.map(QFormat::new).transpose()?;
            if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| BenchError::Io(dir.to_path_buf(), e))?;
            }
            write_weights(&a.out, &random_params(cli.seed), width, q)?;
            say(out, &format!("wrote {}", a.out.display()))
        }
        Command::GenCorpus(a) => {
            let paths = generate_corpus(&a.dir, a.count, cli.seed)?;
            say(out, &format!("wrote {} meshes to {}", paths.len(), a.dir.display()))
        }
    }
}

fn say(out: &mut dyn Write, line: &str) -> Result<()> {
    writeln!(out, "{line}").map_err(|e| BenchError::Io("<stdout>".into(), e))
}

fn load_cloud(path: &Path) -> Result<PointCloud<f64>> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => at_path(path, read_cloud_csv(path)),
        _ => experiments::load_template(path, None),
    }
}

fn required_weights(path: Option<&Path>) -> Result<PointNetParams<f64>> {
    let path = path.ok_or_else(|| BenchError::Usage(format!("missing --weights; {WEIGHTS_HINT}")))?;
    Ok(at_path(path, read_weights(path))?.0)
}

fn optional_weights(path: Option<&Path>, seed: u64) -> Result<PointNetParams<f64>> {
    match path {
        Some(p) => Ok(at_path(p, read_weights(p))?.0),
        None => Ok(random_params(seed)),
    }
}

fn base_mesh(path: Option<&Path>, seed: u64) -> Result<pnlk::data::Mesh> {
    match path {
        Some(p) => at_path(p, load_off_mesh(p)),
        None => Ok(shape_mesh("torus", &mut ChaCha8Rng::seed_from_u64(seed))?),
    }
}

pub fn cmd_register(a: &RegisterArgs, seed: u64, cfg: &BenchConfig) -> Result<RunRecord> {
    let nets = if a.method.needs_weights() {
        Some(Networks::new(required_weights(a.weights.as_deref())?, cfg))
    } else {
        None
    };
    let template = load_cloud(&a.template)?;
    match &a.source {
        Some(src) => {
            let source = load_cloud(src)?;
            let mut rec = experiments::run_clouds(a.method, nets.as_ref(), &template, &source, None, cfg)?;
            rec.seed = seed;
            Ok(rec)
        }
        None => {
            let spec = experiments::pair_spec(cfg, a.angle, seed);
            let pair = make_pair(&template, &spec)?;
            experiments::run_pair(a.method, nets.as_ref(), &pair, &spec, cfg)
        }
    }
}

pub fn cmd_profile(a: &ProfileArgs, seed: u64, cfg: &BenchConfig) -> Result<Vec<crate::record::PhaseRow>> {
    let nets = match a.method {
        Method::Icp => None,
        _ => Some(Networks::new(optional_weights(a.weights.as_deref(), seed)?, cfg)),
    };
    let mesh = base_mesh(a.mesh.as_deref(), seed)?;
    let template = pnlk::data::normalize_unit_cube(&pnlk::data::sample_surface(&mesh, a.n_points, seed)?);
    let mut spec = experiments::pair_spec(cfg, a.angle, seed);
    spec.n_points = a.n_points;
    let pair = make_pair(&template, &spec)?;
    experiments::profile(a.method, nets.as_ref(), &pair, cfg)
}

struct Ctx<'a> {
    cli: &'a Cli,
    out_dir: &'a Path,
}

impl Ctx<'_> {
    fn path(&self, stem: &str) -> PathBuf {
        self.out_dir.join(format!("{stem}.v{}.csv", crate::record::SCHEMA_VERSION))
    }

    fn chart(&self, csv_path: &Path, chart: LineChart, name: &str) -> Result<()> {
        if self.cli.format == OutputFormat::Svg {
            line_chart(csv_path, &self.out_dir.join(format!("{name}.svg")), &chart)?;
        }
        Ok(())
    }

    fn corpus(&self, dir: &Path) -> Result<Vec<PointCloud<f64>>> {
        let paths = at_path(dir, list_corpus(dir))?;
        if paths.is_empty() {
            return Err(BenchError::Usage(format!("no .off meshes in {}", dir.display())));
        }
        paths.iter().map(|p| experiments::load_template(p, None)).collect()
    }

    fn sweep(&self, a: &SweepArgs, cfg: &BenchConfig, out: &mut dyn Write) -> Result<()> {
        let templates = self.corpus(&a.corpus)?;
        let nets = if a.methods.iter().any(|m| m.needs_weights()) {
            Some(Networks::new(required_weights(a.weights.as_deref())?, cfg))
        } else {
            None
        };
        let runs = experiments::sweep_runs(&templates, &a.angles, &a.methods, a.trials, self.cli.seed, cfg, nets.as_ref())?;
        let rows = experiments::aggregate_sweep(&runs, &a.methods, &a.angles);
        let path = self.path("sweep_angle");
        write_csv(&path, &rows)?;
        let records: Vec<RunRecord> = runs.into_iter().map(|(_, r)| r).collect();
        write_csv(&self.path("sweep_angle_runs"), &records)?;
        let caption = "Per-model means over the corpus (each model weighted equally).";
        for (y, name, title) in [
            ("mean_rot_error_deg", "sweep_angle_rot", "Rotation error vs initial angle"),
            ("mean_trans_error", "sweep_angle_trans", "Translation error vs initial angle"),
        ] {
            let chart = LineChart {
                title,
                caption: Some(caption),
                x: "angle_deg",
                y,
                series: "method",
                log_log: false,
            };
            self.chart(&path, chart, name)?;
        }
        print_csv(out, &rows)
    }

    fn scaling(&self, a: &ScalingArgs, cfg: &BenchConfig, out: &mut dyn Write) -> Result<()> {
        let nets = if a.methods.iter().any(|m| m.needs_weights()) {
            Some(Networks::new(optional_weights(a.weights.as_deref(), self.cli.seed)?, cfg))
        } else {
            None
        };
        let mesh = base_mesh(a.mesh.as_deref(), self.cli.seed)?;
        let (rows, slopes) = experiments::scaling(&mesh, &a.sizes, &a.methods, self.cli.seed, a.angle, cfg, nets.as_ref())?;
        let path = self.path("scaling");
        write_csv(&path, &rows)?;
        write_csv(&self.path("scaling_fit"), &slopes)?;
        let chart = LineChart {
            title: "Registration time vs point count",
            caption: None,
            x: "n_points",
            y: "seconds",
            series: "method",
            log_log: true,
        };
        self.chart(&path, chart, "scaling")?;
        print_csv(out, &rows)?;
        for s in &slopes {
            say(out, &format!("# {} log-log slope {:.3}", s.method, s.slope))?;
        }
        Ok(())
    }

    fn quant(&self, a: &QuantArgs, cfg: &BenchConfig, out: &mut dyn Write) -> Result<()> {
        let params = required_weights(a.weights.as_deref())?;
        let templates = self.corpus(&a.corpus)?;
        let formats = a.formats.iter().map(|&n| QFormat::new(n)).collect::<pnlk::Result<Vec<_>>>()?;
        let (rows, report) = experiments::quant_eval(&params, &templates, &formats, &a.angles, self.cli.seed, cfg)?;
        let path = self.path("quant_eval");
        write_csv(&path, &rows)?;
        for (y, name, title) in [
            ("mean_rot_error_deg", "quant_eval_rot", "Rotation error per Q-format"),
            ("mean_feature_dev", "quant_eval_feature", "Global-feature deviation per Q-format"),
        ] {
            let chart = LineChart {
                title,
                caption: Some("Series are initial angles; x is the half width n of a 2n-bit word."),
                x: "half_width",
                y,
                series: "angle_deg",
                log_log: false,
            };
            self.chart(&path, chart, name)?;
        }
        print_csv(out, &rows)?;
        let verdict = |ok: bool| if ok { "yes" } else { "no" };
        say(out, &format!("# feature deviation non-increasing in n: {}", verdict(report.feature_non_increasing)))?;
        say(out, &format!("# widest format rotation error <= narrowest: {}", verdict(report.widest_not_worse)))
    }

    fn accel(&self, a: &AccelArgs, out: &mut dyn Write) -> Result<()> {
        let profile = match &a.profile {
            Some(p) => at_path(p, CalibrationProfile::load(p))?,
            None => CalibrationProfile::shipped(),
        };
        let board = Board::by_name(&a.board)?;
        let report = experiments::reference_report(&profile, a.n_points)?;
        let modules = experiments::module_rows(&report);
        write_csv(&self.path("accel_modules"), &modules)?;
        let ablation = experiments::ablation_rows(&profile, a.n_points, &board)?;
        write_csv(&self.path("accel_ablation"), &ablation)?;

        say(out, &format!("{:<16} {:>6} {:>8} {:>12}  source", "module", "unroll", "cycles", "latency_us"))?;
        for m in &modules {
            let mark = if m.bottleneck { "  <- bottleneck" } else { "" };
            say(
                out,
                &format!("{:<16} {:>6} {:>8} {:>12.2}  {}{mark}", m.module, m.unroll, m.cycles, m.latency_us, m.source),
            )?;
        }
        say(out, "")?;
        for r in &ablation {
            say(
                out,
                &format!(
                    "{:<12} total {:>12.1} us  speedup {:>7.2}x  DSP {:>5.1}%  BRAM {:>5.1}%",
                    r.design, r.total_us, r.speedup_vs_naive, r.dsp_pct, r.bram_pct
                ),
            )?;
        }
        if a.explore {
            let rows = experiments::explore_rows(&profile, a.span, &board, a.n_points, a.top)?;
            write_csv(&self.path("accel_explore"), &rows)?;
            say(out, "")?;
            if rows.is_empty() {
                say(out, &format!("infeasible: no design within span {} fits {}", a.span, board.name))?;
            }
            for r in &rows {
                say(
                    out,
                    &format!("#{:<3} {:<28} interval {:>8.2} us  total {:>10.1} us  DSP {}", r.rank, r.unrolls, r.interval_us, r.total_us, r.dsp),
                )?;
            }
        }
        Ok(())
    }
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::json;

use dwrpca::evaluation::{class_means, confusion, evaluate, grid_search, metrics, write_scores, EvalItem, ImageScore};
use dwrpca::hough::broken_line_maps;
use dwrpca::image::{load_gray, load_mask, save_gray, save_mask, write_atomic};
use dwrpca::optics::{self, OpticsSpec};
use dwrpca::pipeline::{compute_priors, detect, prepare, PipelineConfig, RunReport};
use dwrpca::rpca::{solve, write_trace};
use dwrpca::scan::{detect_over_region, jitter_nodes, plan_s_path, stitch, write_plan, ScanPlan};
use dwrpca::segmentation::segment;
use dwrpca::spectral::fusion_maps;
use dwrpca::synth::{dataset_digest, make_dataset, read_dataset, write_dataset, MeshSpec};
use dwrpca::weights::build_weight_with;
use dwrpca::{Error, GrayImage, MeshType};

#[derive(Parser)]
#[command(name = "dwrpca", version, about = "Prior-weighted low-rank defect detection for metallic-mesh images")]
struct Cli {
    /// Worker threads for batch commands [default: all cores]
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Log more (-v info, -vv debug)
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Detect defects: writes defect/broken/block masks and a run report per image
    Detect {
        #[arg(required = true)]
        images: Vec<PathBuf>,
        #[arg(short, long, default_value = "out")]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Compute and dump both priors, their intermediate maps and the weight map
    Prior {
        image: PathBuf,
        #[arg(short, long, default_value = "out")]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Run the weighted decomposition; writes L/E/N, the raw E matrix and the residual trace
    Decompose {
        image: PathBuf,
        #[arg(short, long, default_value = "out")]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Double-threshold a sparse component stored as CSV (as written by `decompose`)
    Segment {
        sparse: PathBuf,
        #[arg(short, long, default_value = "out")]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Evaluate on a synthetic dataset directory
    Eval {
        dataset: PathBuf,
        #[arg(short, long, default_value = "eval")]
        out: PathBuf,
        /// Score existing predictions `<dir>/<id>.png` instead of running the detector
        #[arg(long)]
        pred: Option<PathBuf>,
        /// Use only the first N images
        #[arg(long)]
        limit: Option<usize>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Exhaustive search over solver weights on a dataset
    GridSearch {
        dataset: PathBuf,
        #[arg(short, long, default_value = "grid")]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0.05,0.08,0.11,0.14,0.17,0.2")]
        lambdas: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0.001,0.002,0.003,0.004,0.005")]
        betas: Vec<f64>,
        #[arg(long)]
        limit: Option<usize>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Generate a synthetic mesh dataset with ground truth
    Synth {
        #[arg(short, long)]
        out: PathBuf,
        #[arg(short, long, default_value_t = 60)]
        n: usize,
        #[arg(long, default_value = "square")]
        mesh_type: MeshType,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Relative proportions broken,block,mixed
        #[arg(long, value_delimiter = ',', default_value = "1,1,1")]
        mix: Vec<f64>,
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        period: Option<usize>,
        #[arg(long)]
        noise_sigma: Option<f64>,
        /// JSON file with a full mesh description; flags above override it
        #[arg(long)]
        mesh_config: Option<PathBuf>,
    },
    /// Plan a serpentine scan and write it as CSV
    ScanPlan {
        #[command(flatten)]
        plan: PlanArgs,
        #[arg(short, long, default_value = "plan.csv")]
        out: PathBuf,
        /// Uniform node jitter amplitude in um
        #[arg(long, default_value_t = 0.0)]
        jitter: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Stitch tiles (given in plan order) into a mosaic; optionally detect on every tile
    Stitch {
        #[arg(required = true)]
        tiles: Vec<PathBuf>,
        #[command(flatten)]
        plan: PlanArgs,
        /// Sample-plane um per pixel
        #[arg(long)]
        pixel_pitch: f64,
        #[arg(short, long, default_value = "mosaic.png")]
        out: PathBuf,
        /// Run detection per tile and write OR-stitched masks into this directory
        #[arg(long)]
        detect: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Print the magnification and sampling report of the optical attachment
    Optics {
        #[arg(long)]
        f_objective: Option<f64>,
        #[arg(long)]
        f_tube: Option<f64>,
        #[arg(long)]
        f_internal: Option<f64>,
        #[arg(long)]
        f_relay: Option<f64>,
        #[arg(long)]
        pixel_size: Option<f64>,
        #[arg(long)]
        screen_to_sensor_ratio: Option<f64>,
        #[arg(long)]
        fov_diameter: Option<f64>,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args)]
struct PlanArgs {
    /// Region width in um
    #[arg(long, default_value_t = 2000.0)]
    width: f64,
    #[arg(long, default_value_t = 2000.0)]
    height: f64,
    #[arg(long, default_value_t = 500.0)]
    step: f64,
    #[arg(long, default_value_t = 800.0)]
    fov: f64,
    /// Seconds per node
    #[arg(long, default_value_t = 2.0)]
    dwell: f64,
}

impl PlanArgs {
    fn plan(&self) -> dwrpca::Result<ScanPlan> {
        plan_s_path((self.width, self.height), self.step, self.fov, self.dwell)
    }
}

/// Detector parameters. Precedence: flag > `--config` file > built-in default.
#[derive(Args, Default)]
struct ConfigArgs {
    /// Flat TOML file of detector parameters
    #[arg(long)]
    config: Option<PathBuf>,
    /// Generic override in TOML value syntax, e.g. `--set k1=0.7`
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    mesh_type: Option<MeshType>,
    /// Treat dark pixels as metal
    #[arg(long)]
    invert: bool,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    /// nuclear | schatten_p_truncated
    #[arg(long)]
    lowrank_mode: Option<String>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    tau: Option<usize>,
    #[arg(long)]
    maxstep: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    intensity_scale: Option<f64>,
    #[arg(long)]
    w_min: Option<f64>,
    /// two_level | graded
    #[arg(long)]
    weight_mode: Option<String>,
    #[arg(long)]
    weight_blur_radius: Option<usize>,
    /// Uniform weights, no priors
    #[arg(long)]
    no_priors: bool,
    #[arg(long, value_delimiter = ',')]
    lowpass_sides: Option<Vec<usize>>,
    #[arg(long)]
    k1: Option<f64>,
    #[arg(long)]
    k2: Option<f64>,
    #[arg(long)]
    k3: Option<f64>,
    #[arg(long)]
    fusion_min_contrast: Option<f64>,
    #[arg(long)]
    fusion_max_density: Option<f64>,
    #[arg(long)]
    fusion_threshold: Option<f64>,
    #[arg(long)]
    rho_resolution: Option<f64>,
    #[arg(long)]
    theta_resolution_deg: Option<f64>,
    #[arg(long)]
    vote_threshold: Option<u32>,
    #[arg(long)]
    radius_min: Option<usize>,
    #[arg(long)]
    radius_max: Option<usize>,
    #[arg(long)]
    dilate_radius: Option<usize>,
    #[arg(long)]
    min_support: Option<f64>,
    #[arg(long)]
    k_sigma: Option<f64>,
    #[arg(long)]
    t1: Option<f64>,
    #[arg(long)]
    t2: Option<f64>,
}

macro_rules! put {
    ($t:expr, $self:ident, $conv:expr; $($field:ident),*) => {
        $(if let Some(v) = &$self.$field { $t.insert(stringify!($field).into(), $conv(v)); })*
    };
}

impl ConfigArgs {
    fn flag_table(&self) -> Result<toml::Table, Failure> {
        let mut t = toml::Table::new();
        let float = |v: &f64| toml::Value::Float(*v);
        let int = |v: &usize| toml::Value::Integer(*v as i64);
        let string = |v: &String| toml::Value::String(v.clone());
        put!(t, self, float; lambda, beta, rho, p, epsilon, intensity_scale, w_min, k1, k2, k3,
             fusion_min_contrast, fusion_max_density, fusion_threshold, rho_resolution,
             theta_resolution_deg, min_support, k_sigma, t1, t2);
        put!(t, self, int; tau, maxstep, weight_blur_radius, radius_min, radius_max, dilate_radius);
        put!(t, self, string; lowrank_mode, weight_mode);
        if let Some(m) = self.mesh_type {
            t.insert("mesh_type".into(), toml::Value::String(m.to_string()));
        }
        if let Some(v) = self.vote_threshold {
            t.insert("vote_threshold".into(), toml::Value::Integer(v.into()));
        }
        if let Some(s) = &self.lowpass_sides {
            t.insert("lowpass_sides".into(), toml::Value::Array(s.iter().map(int).collect()));
        }
        if self.invert {
            t.insert("invert".into(), toml::Value::Boolean(true));
        }
        if self.no_priors {
            t.insert("no_priors".into(), toml::Value::Boolean(true));
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Failure::Usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            let (k, v) = (k.trim(), v.trim());
            let value = format!("v = {v}")
                .parse::<toml::Table>()
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(v.to_string()));
            t.insert(k.to_string(), value);
        }
        Ok(t)
    }

    fn resolve(&self, base: PipelineConfig) -> Result<PipelineConfig, Failure> {
        let mut table = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?
            }
            None => toml::Table::new(),
        };
        table.extend(self.flag_table()?);
        base.with_overrides(table).map_err(Failure::from)
    }

    fn effective(&self) -> Result<PipelineConfig, Failure> {
        let cfg = self.resolve(PipelineConfig::default())?;
        eprintln!("effective config: {}", cfg.effective_json());
        Ok(cfg)
    }
}

enum Failure {
    /// Bad arguments or configuration: exit 2.
    Usage(String),
    /// The run itself failed: exit 1.
    Run(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::InvalidParameter { .. } | Error::NoRedundancy { .. } => Failure::Usage(e.to_string()),
            _ => Failure::Run(e.to_string()),
        }
    }
}

type CmdResult = Result<ExitCode, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("error: --workers must be >= 1");
            return ExitCode::from(2);
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().expect("global pool is set once");
    }
    match run(cli.cmd) {
        Ok(code) => code,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Run(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}

fn run(cmd: Command) -> CmdResult {
    match cmd {
        Command::Detect { images, out, cfg } => cmd_detect(&images, &out, &cfg),
        Command::Prior { image, out, cfg } => cmd_prior(&image, &out, &cfg),
        Command::Decompose { image, out, cfg } => cmd_decompose(&image, &out, &cfg),
        Command::Segment { sparse, out, cfg } => cmd_segment(&sparse, &out, &cfg),
        Command::Eval {
            dataset,
            out,
            pred,
            limit,
            cfg,
        } => cmd_eval(&dataset, &out, pred.as_deref(), limit, &cfg),
        Command::GridSearch {
            dataset,
            out,
            lambdas,
            betas,
            limit,
            cfg,
        } => cmd_grid(&dataset, &out, &lambdas, &betas, limit, &cfg),
        Command::Synth {
            out,
            n,
            mesh_type,
            seed,
            mix,
            size,
            period,
            noise_sigma,
            mesh_config,
        } => {
            let mut mesh = match mesh_config {
                Some(p) => {
                    let text = fs::read_to_string(&p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?;
                    serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?
                }
                None => MeshSpec::for_mesh(mesh_type),
            };
            mesh.image_size = size.unwrap_or(mesh.image_size);
            mesh.period = period.unwrap_or(mesh.period);
            mesh.noise_sigma = noise_sigma.unwrap_or(mesh.noise_sigma);
            cmd_synth(&out, n, &mesh, &mix, seed)
        }
        Command::ScanPlan { plan, out, jitter, seed } => {
            let p = jitter_nodes(&plan.plan()?, jitter, seed);
            write_plan(&p, &out)?;
            println!(
                "{}",
                json!({
                    "nodes": p.nodes.len(),
                    "cols": p.cols,
                    "rows": p.rows,
                    "step_um": p.step,
                    "fov_diameter_um": p.fov_diameter,
                    "overlap_um": p.overlap(),
                    "total_dwell_s": p.total_dwell(),
                    "plan": out,
                })
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Stitch {
            tiles,
            plan,
            pixel_pitch,
            out,
            detect,
            cfg,
        } => cmd_stitch(&tiles, &plan, pixel_pitch, &out, detect.as_deref(), &cfg),
        Command::Optics {
            f_objective,
            f_tube,
            f_internal,
            f_relay,
            pixel_size,
            screen_to_sensor_ratio,
            fov_diameter,
            json,
        } => {
            let d = OpticsSpec::default();
            let spec = OpticsSpec {
                f_objective: f_objective.unwrap_or(d.f_objective),
                f_tube: f_tube.unwrap_or(d.f_tube),
                f_internal: f_internal.unwrap_or(d.f_internal),
                f_relay: f_relay.unwrap_or(d.f_relay),
                pixel_size: pixel_size.unwrap_or(d.pixel_size),
                screen_to_sensor_ratio: screen_to_sensor_ratio.unwrap_or(d.screen_to_sensor_ratio),
                fov_diameter: fov_diameter.unwrap_or(d.fov_diameter),
            };
            let r = optics::report(&spec)?;
            if json {
                println!("{}", json!({ "spec": spec, "report": r }));
            } else {
                println!("{r}");
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn ensure_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::Run(format!("{}: {e}", dir.display())))
}

fn write_json(path: &Path, v: &serde_json::Value) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(v).expect("json values serialize");
    text.push('\n');
    write_atomic(path, text.as_bytes()).map_err(Failure::from)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "image".into())
}

/// Maps a signed layer to [0, 1] with zero at mid-gray.
fn signed_view(img: &GrayImage) -> GrayImage {
    let m = img.data().iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    if m == 0.0 {
        return GrayImage::filled(img.height(), img.width(), 0.5);
    }
    img.map(|v| 0.5 + v / (2.0 * m))
}

fn matrix_csv(img: &GrayImage) -> String {
    let mut s = String::with_capacity(img.len() * 12);
    for y in 0..img.height() {
        for x in 0..img.width() {
            if x > 0 {
                s.push(',');
            }
            s.push_str(&img.get(y, x).to_string());
        }
        s.push('\n');
    }
    s
}

fn read_matrix_csv(path: &Path) -> Result<GrayImage, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Run(format!("{}: {e}", path.display())))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
        let row = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| Failure::Run(format!("{}: line {}: {e}", path.display(), i + 1)))?;
        rows.push(row);
    }
    let h = rows.len();
    let w = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != w) {
        return Err(Failure::Run(format!("{}: ragged rows", path.display())));
    }
    GrayImage::new(h, w, rows.concat()).map_err(Failure::from)
}

fn cmd_detect(images: &[PathBuf], out: &Path, args: &ConfigArgs) -> CmdResult {
    let cfg = args.effective()?;
    ensure_dir(out)?;
    let results: Vec<Result<RunReport, String>> = images
        .par_iter()
        .map(|path| {
            let run = || -> dwrpca::Result<RunReport> {
                let img = load_gray(path)?;
                let d = detect(&img, &cfg)?;
                let name = stem(path);
                save_mask(&d.segmentation.defect_mask, out.join(format!("{name}_defect.png")))?;
                save_mask(&d.segmentation.broken_mask, out.join(format!("{name}_broken.png")))?;
                save_mask(&d.segmentation.block_mask, out.join(format!("{name}_block.png")))?;
                Ok(RunReport::new(path.display().to_string(), &d))
            };
            run().map_err(|e| e.to_string())
        })
        .collect();

    let mut failed = 0;
    let mut entries = Vec::new();
    for (path, r) in images.iter().zip(&results) {
        match r {
            Ok(rep) => {
                println!(
                    "{}: {} defect px ({} broken, {} block), {} iterations",
                    path.display(),
                    rep.defect_pixels,
                    rep.broken_pixels,
                    rep.block_pixels,
                    rep.iterations
                );
                entries.push(json!({ "ok": rep }));
            }
            Err(e) => {
                failed += 1;
                eprintln!("error: {e}");
                entries.push(json!({ "image": path, "error": e }));
            }
        }
    }
    write_json(&out.join("report.json"), &json!({ "config": cfg.effective_json(), "images": entries }))?;
    Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn cmd_prior(path: &Path, out: &Path, args: &ConfigArgs) -> CmdResult {
    let cfg = args.effective()?;
    ensure_dir(out)?;
    let img = prepare(&load_gray(path)?, &cfg);
    let fm = fusion_maps(&img, &cfg.block_prior())?;
    for (i, f) in fm.filtered.iter().enumerate() {
        save_gray(&f.normalized(), out.join(format!("fusion_i{}.png", i + 1)))?;
    }
    save_gray(&fm.fused.normalized(), out.join("fusion_p.png"))?;
    let bm = broken_line_maps(&img, cfg.mesh_type, &cfg.hough())?;
    save_mask(&bm.metal, out.join("metal.png"))?;
    save_gray(&bm.drawn, out.join("drawn.png"))?;
    save_mask(&bm.missing, out.join("missing.png"))?;
    let priors = compute_priors(&img, &cfg)?;
    save_mask(&priors.block, out.join("block_prior.png"))?;
    save_mask(&priors.broken, out.join("broken_prior.png"))?;
    let w = build_weight_with(&priors.block, &priors.broken, cfg.w_min, cfg.weight_mode, cfg.weight_blur_radius)?;
    save_gray(w.as_image(), out.join("weights.png"))?;
    let mut prims = String::new();
    for l in &priors.lines {
        prims.push_str(&format!("{l}\n"));
    }
    for c in &priors.circles {
        prims.push_str(&format!("{c}\n"));
    }
    write_atomic(&out.join("primitives.txt"), prims.as_bytes())?;
    let summary = json!({
        "config": cfg.effective_json(),
        "image": path,
        "block_prior_density": priors.block.density(),
        "broken_prior_density": priors.broken.density(),
        "lines": priors.lines.len(),
        "circles": priors.circles.len(),
    });
    println!("{summary}");
    write_json(&out.join("prior.json"), &summary)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_decompose(path: &Path, out: &Path, args: &ConfigArgs) -> CmdResult {
    let cfg = args.effective()?;
    ensure_dir(out)?;
    let img = prepare(&load_gray(path)?, &cfg);
    let priors = compute_priors(&img, &cfg)?;
    let w = build_weight_with(&priors.block, &priors.broken, cfg.w_min, cfg.weight_mode, cfg.weight_blur_radius)?;
    let d = solve(&img, &w, &cfg.solver())?;
    save_gray(&d.l, out.join("low_rank.png"))?;
    save_gray(&signed_view(&d.e), out.join("sparse.png"))?;
    save_gray(&signed_view(&d.n), out.join("noise.png"))?;
    write_atomic(&out.join("sparse.csv"), matrix_csv(&d.e).as_bytes())?;
    write_trace(&d.trace, out.join("trace.csv"))?;
    let summary = json!({
        "config": cfg.effective_json(),
        "image": path,
        "iterations": d.iterations(),
        "termination": d.termination,
        "final_residual": d.final_residual(),
    });
    println!("{summary}");
    write_json(&out.join("decompose.json"), &summary)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_segment(path: &Path, out: &Path, args: &ConfigArgs) -> CmdResult {
    let cfg = args.effective()?;
    ensure_dir(out)?;
    let e = read_matrix_csv(path)?;
    let s = segment(&e, cfg.thresholds()?)?;
    save_mask(&s.defect_mask, out.join("defect.png"))?;
    save_mask(&s.broken_mask, out.join("broken.png"))?;
    save_mask(&s.block_mask, out.join("block.png"))?;
    let summary = json!({
        "sparse": path,
        "t1": s.t1,
        "t2": s.t2,
        "defect_pixels": s.defect_mask.count_ones(),
        "broken_pixels": s.broken_mask.count_ones(),
        "block_pixels": s.block_mask.count_ones(),
    });
    println!("{summary}");
    write_json(&out.join("segment.json"), &summary)?;
    Ok(ExitCode::SUCCESS)
}

fn load_items(dataset: &Path, limit: Option<usize>) -> Result<(MeshSpec, Vec<EvalItem>), Failure> {
    let (mesh, samples) = read_dataset(dataset)?;
    let n = limit.unwrap_or(samples.len()).min(samples.len());
    Ok((mesh, samples[..n].iter().map(EvalItem::from).collect()))
}

fn print_means(scores: &[ImageScore]) -> serde_json::Value {
    let means = class_means(scores);
    for (k, v) in &means {
        println!("mean f [{k}] = {v:.4}");
    }
    json!(means)
}

fn cmd_eval(dataset: &Path, out: &Path, pred: Option<&Path>, limit: Option<usize>, args: &ConfigArgs) -> CmdResult {
    let (mesh, items) = load_items(dataset, limit)?;
    let cfg = args.resolve(PipelineConfig::for_mesh_spec(&mesh))?;
    eprintln!("effective config: {}", cfg.effective_json());
    ensure_dir(out)?;
    let solver = cfg.solver();
    let results: Vec<dwrpca::Result<ImageScore>> = match pred {
        Some(dir) => items
            .iter()
            .map(|it| {
                let p = load_mask(dir.join(format!("{}.png", it.id)))?;
                Ok(ImageScore {
                    id: it.id.clone(),
                    kind: it.kind,
                    lambda: solver.lambda,
                    beta: solver.beta,
                    report: metrics(confusion(&p, &it.gt)?, 1.0),
                })
            })
            .collect(),
        None => evaluate(&items, &cfg),
    };
    let mut scores = Vec::new();
    let mut failures = Vec::new();
    for (it, r) in items.iter().zip(results) {
        match r {
            Ok(s) => scores.push(s),
            Err(e) => {
                eprintln!("error: {}: {e}", it.id);
                failures.push(json!({ "id": it.id, "error": e.to_string() }));
            }
        }
    }
    write_scores(&scores, out.join("scores.csv"))?;
    let means = print_means(&scores);
    write_json(
        &out.join("summary.json"),
        &json!({ "config": cfg.effective_json(), "images": items.len(), "mean_f": means, "failures": failures }),
    )?;
    Ok(if failures.is_empty() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn cmd_grid(dataset: &Path, out: &Path, lambdas: &[f64], betas: &[f64], limit: Option<usize>, args: &ConfigArgs) -> CmdResult {
    let (mesh, items) = load_items(dataset, limit)?;
    let cfg = args.resolve(PipelineConfig::for_mesh_spec(&mesh))?;
    eprintln!("effective config: {}", cfg.effective_json());
    ensure_dir(out)?;
    let g = grid_search(&items, lambdas, betas, &cfg)?;
    for c in &g.cells {
        match (c.mean_f, &c.error) {
            (Some(f), _) => println!("lambda={:.3} beta={:.4} mean_f={f:.4}", c.lambda, c.beta),
            (None, e) => println!("lambda={:.3} beta={:.4} failed: {}", c.lambda, c.beta, e.as_deref().unwrap_or("?")),
        }
    }
    println!("best: lambda={} beta={} mean_f={:.4}", g.best_lambda, g.best_beta, g.best_mean_f);
    write_scores(&g.rows, out.join("grid_scores.csv"))?;
    write_json(
        &out.join("grid.json"),
        &json!({
            "config": cfg.effective_json(),
            "best_lambda": g.best_lambda,
            "best_beta": g.best_beta,
            "best_mean_f": g.best_mean_f,
            "cells": g.cells,
        }),
    )?;
    let failed = g.cells.iter().any(|c| c.error.is_some());
    Ok(if failed { ExitCode::from(1) } else { ExitCode::SUCCESS })
}

fn cmd_synth(out: &Path, n: usize, mesh: &MeshSpec, mix: &[f64], seed: u64) -> CmdResult {
    let total: f64 = mix.iter().sum();
    if mix.len() != 3 || !(total > 0.0) {
        return Err(Failure::Usage("--mix needs three non-negative weights with a positive sum".into()));
    }
    let mix = (mix[0] / total, mix[1] / total, 1.0 - mix[0] / total - mix[1] / total);
    let samples = make_dataset(n, mesh, mix, seed)?;
    write_dataset(out, mesh, &samples)?;
    println!(
        "{}",
        json!({ "dir": out, "images": samples.len(), "mesh": mesh, "seed": seed, "digest": dataset_digest(&samples) })
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_stitch(
    tiles: &[PathBuf],
    plan_args: &PlanArgs,
    pitch: f64,
    out: &Path,
    detect_dir: Option<&Path>,
    args: &ConfigArgs,
) -> CmdResult {
    let plan = plan_args.plan()?;
    if tiles.len() != plan.nodes.len() {
        return Err(Failure::Usage(format!("{} tiles given for {} plan nodes", tiles.len(), plan.nodes.len())));
    }
    let images = tiles.iter().map(load_gray).collect::<dwrpca::Result<Vec<_>>>()?;
    let mosaic = stitch(&images, &plan, pitch)?;
    save_gray(&mosaic, out)?;
    println!("mosaic {}x{} -> {}", mosaic.width(), mosaic.height(), out.display());
    let Some(dir) = detect_dir else {
        return Ok(ExitCode::SUCCESS);
    };
    let cfg = args.effective()?;
    ensure_dir(dir)?;
    let r = detect_over_region(&images, &plan, pitch, &cfg, None)?;
    save_mask(&r.defect_mask, dir.join("region_defect.png"))?;
    save_mask(&r.broken_mask, dir.join("region_broken.png"))?;
    save_mask(&r.block_mask, dir.join("region_block.png"))?;
    write_json(&dir.join("region.json"), &json!({ "config": cfg.effective_json(), "tiles": r.tiles }))?;
    println!("{} defect px over region, {} failed tiles", r.defect_mask.count_ones(), r.failed_tiles());
    Ok(if r.failed_tiles() == 0 { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

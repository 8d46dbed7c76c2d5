//! Command-line front end: argument parsing and the five subcommands.
//!
//! Every command returns a process exit code: 0 on success, 2 for usage,
//! validation and I/O problems, 3 for numerical failure.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::cnn::{self, CnnConfig};
use crate::energy::{energy, EnergyBreakdown};
use crate::error::{Error, Result};
use crate::gabor::{lift_gabor, GaborSpec};
use crate::io;
use crate::metrics::{evaluate, extract_labels, render_overlay, ClassMatching, EvaluationReport};
use crate::model::{normalize_features, FeatureStack, ImageGrid, SoftLabelField, SolverConfig};
use crate::solver::{primal_dual_segment, Segmentation, SolverTrace};

#[derive(Debug, Parser)]
#[command(name = "liftseg", version, about = "Unsupervised multiphase segmentation with lifted features")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Gabor feature lifting of a grayscale image.
    LiftGabor {
        #[arg(long)]
        input: PathBuf,
        /// JSON file with `{"groups": [[{"theta": .., "omega": ..}, ..], ..]}`.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Feature lifting by a decomposition network trained on the image.
    LiftCnn {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 3)]
        k: usize,
        #[arg(long, default_value_t = 0.25)]
        alpha1: f64,
        #[arg(long, default_value_t = 0.25)]
        alpha2: f64,
        #[arg(long, default_value_t = 2000)]
        iters: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        save_params: Option<PathBuf>,
        /// CSV with columns `iteration,loss`.
        #[arg(long)]
        loss_trace: Option<PathBuf>,
    },
    /// Primal-dual segmentation of a feature stack.
    Segment {
        #[arg(long)]
        features: PathBuf,
        #[arg(long, default_value_t = 0.2, allow_negative_numbers = true)]
        lambda: f64,
        #[arg(long, default_value_t = 3000)]
        max_iter: usize,
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
        /// Starting point of the iteration.
        #[arg(long, value_enum, default_value_t = InitArg::Features)]
        init: InitArg,
        #[arg(long)]
        output_labels: PathBuf,
        #[arg(long)]
        output_soft: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Overlap metrics between two label images.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, value_enum, default_value_t = MatchingArg::Best)]
        matching: MatchingArg,
        #[arg(long)]
        report: PathBuf,
    },
    /// Lifting, segmentation and optional evaluation in one run.
    Pipeline {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        outdir: PathBuf,
        /// Ground-truth label image; overrides `truth` in the config.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitArg {
    /// `u_k = phi_k / max(1, sum_j phi_j)`.
    Features,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MatchingArg {
    Fixed,
    Best,
}

impl From<MatchingArg> for ClassMatching {
    fn from(m: MatchingArg) -> Self {
        match m {
            MatchingArg::Fixed => ClassMatching::Fixed,
            MatchingArg::Best => ClassMatching::BestPermutation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Lifting {
    Gabor,
    Cnn,
}

/// Artifact file names inside the output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineOutputs {
    pub features: String,
    pub soft: String,
    pub labels: String,
    pub overlay: String,
    pub report: String,
}

impl Default for PipelineOutputs {
    fn default() -> Self {
        Self {
            features: "features.fstk".into(),
            soft: "soft.fstk".into(),
            labels: "labels.png".into(),
            overlay: "overlay.png".into(),
            report: "report.json".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub lifting: Lifting,
    #[serde(default)]
    pub gabor_spec: Option<GaborSpec>,
    #[serde(default)]
    pub cnn: Option<CnnConfig>,
    pub solver: SolverConfig,
    /// Ground-truth label image, relative paths resolve against the working directory.
    #[serde(default)]
    pub truth: Option<PathBuf>,
    #[serde(default = "default_matching")]
    pub matching: ClassMatching,
    #[serde(default)]
    pub outputs: PipelineOutputs,
}

fn default_matching() -> ClassMatching {
    ClassMatching::BestPermutation
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)
            .map_err(|e| Error::Validation(format!("malformed pipeline config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match self.lifting {
            Lifting::Gabor => self
                .gabor_spec
                .as_ref()
                .ok_or_else(|| Error::Validation("lifting \"gabor\" needs a gabor_spec".into()))?
                .validate()?,
            Lifting::Cnn => self
                .cnn
                .as_ref()
                .ok_or_else(|| Error::Validation("lifting \"cnn\" needs a cnn section".into()))?
                .validate()?,
        }
        self.solver.validate()?;
        let o = &self.outputs;
        for name in [&o.features, &o.soft, &o.labels, &o.overlay, &o.report] {
            if name.is_empty() || Path::new(name).components().count() != 1 {
                return Err(Error::Validation(format!(
                    "output name {name:?} must be a plain file name"
                )));
            }
        }
        Ok(())
    }
}

/// Segmentation summary written by `segment` and embedded in pipeline reports.
#[derive(Debug, Clone, Serialize)]
pub struct SegmentReport {
    pub config: SolverConfig,
    pub energy: EnergyBreakdown,
    pub trace: SolverTrace,
    pub runtime_seconds: f64,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("liftseg: error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::LiftGabor { input, spec, output } => cmd_lift_gabor(&input, &spec, &output),
        Command::LiftCnn {
            input,
            k,
            alpha1,
            alpha2,
            iters,
            lr,
            seed,
            output,
            save_params,
            loss_trace,
        } => {
            let config = CnnConfig {
                k,
                alpha1,
                alpha2,
                iterations: iters,
                learning_rate: lr,
                seed,
                ..CnnConfig::default()
            };
            cmd_lift_cnn(&input, &config, &output, save_params.as_deref(), loss_trace.as_deref())
        }
        Command::Segment {
            features,
            lambda,
            max_iter,
            tol,
            init,
            output_labels,
            output_soft,
            report,
        } => {
            let config = SolverConfig {
                max_outer_iterations: max_iter,
                tolerance: tol,
                ..SolverConfig::with_lambda(lambda)
            };
            cmd_segment(&features, &config, init, &output_labels, output_soft.as_deref(), report.as_deref())
        }
        Command::Evaluate {
            pred,
            truth,
            matching,
            report,
        } => cmd_evaluate(&pred, &truth, matching.into(), &report),
        Command::Pipeline {
            input,
            config,
            outdir,
            truth,
        } => cmd_pipeline(&input, &config, &outdir, truth.as_deref()),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

fn loss_csv(trace: &[f64]) -> String {
    let mut out = String::from("iteration,loss\n");
    for (i, l) in trace.iter().enumerate() {
        out.push_str(&format!("{i},{l:e}\n"));
    }
    out
}

pub fn cmd_lift_gabor(input: &Path, spec: &Path, output: &Path) -> Result<()> {
    let spec = GaborSpec::from_json(&read_text(spec)?)?;
    let image = io::load_image(input)?;
    let start = Instant::now();
    let features = lift_gabor(&image, &spec)?;
    log::info!(
        "lifted {}x{} image into {} Gabor channels in {:.2?}",
        image.height(),
        image.width(),
        features.channels(),
        start.elapsed()
    );
    io::write_fstk(&features, output)
}

pub fn cmd_lift_cnn(
    input: &Path,
    config: &CnnConfig,
    output: &Path,
    save_params: Option<&Path>,
    loss_trace: Option<&Path>,
) -> Result<()> {
    config.validate()?;
    let image = io::load_image(input)?;
    let trained = train_logged(&image, config)?;
    io::write_fstk(&trained.features, output)?;
    if let Some(path) = save_params {
        let mut bytes = Vec::new();
        cnn::write_params(&trained.params, &mut bytes).expect("in-memory write");
        write_bytes(path, &bytes)?;
    }
    if let Some(path) = loss_trace {
        write_bytes(path, loss_csv(&trained.loss_trace).as_bytes())?;
    }
    Ok(())
}

fn train_logged(image: &ImageGrid, config: &CnnConfig) -> Result<cnn::TrainedDecomposition> {
    let every = (config.iterations / 10).max(1);
    cnn::train_decomposition_from(image, config, cnn::init_params(config), |it, loss| {
        if it % every == 0 {
            log::info!("iteration {it}: loss {:.6e}", loss.total);
        }
    })
}

fn run_segment(features: &FeatureStack, config: &SolverConfig, init: InitArg) -> Result<(Segmentation, SegmentReport)> {
    let phi = normalize_features(features)?;
    let (k, h, w) = phi.dim();
    let zero = SoftLabelField::zeros(k, h, w);
    let u0 = (init == InitArg::Zero).then_some(&zero);
    let start = Instant::now();
    let result = primal_dual_segment(&phi, config, u0)?;
    let runtime_seconds = start.elapsed().as_secs_f64();
    let breakdown = energy(&result.labels, &phi, config.lambda)?;
    log::info!(
        "{} iterations, converged {}, energy {:.6e}",
        result.trace.iterations_run,
        result.trace.converged,
        breakdown.total
    );
    let report = SegmentReport {
        config: config.clone(),
        energy: breakdown,
        trace: result.trace.clone(),
        runtime_seconds,
    };
    Ok((result, report))
}

fn soft_stack(u: &SoftLabelField) -> Result<FeatureStack> {
    FeatureStack::new(u.values().clone())
}

pub fn cmd_segment(
    features: &Path,
    config: &SolverConfig,
    init: InitArg,
    output_labels: &Path,
    output_soft: Option<&Path>,
    report: Option<&Path>,
) -> Result<()> {
    config.validate()?;
    let phi = io::read_fstk(features)?;
    let (result, summary) = run_segment(&phi, config, init)?;
    let labels = extract_labels(&result.labels);
    io::save_label_png(&labels, output_labels)?;
    if let Some(path) = output_soft {
        io::write_fstk(&soft_stack(&result.labels)?, path)?;
    }
    if let Some(path) = report {
        write_json(path, &summary)?;
    }
    Ok(())
}

pub fn cmd_evaluate(pred: &Path, truth: &Path, matching: ClassMatching, report: &Path) -> Result<()> {
    let p = io::load_label_png(pred)?;
    let t = io::load_label_png(truth)?;
    let result = evaluate(&p, &t, matching)?;
    write_json(report, &result)
}

fn ensure_writable_dir(dir: &Path) -> Result<()> {
    let io_err = |e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    };
    fs::create_dir_all(dir).map_err(io_err)?;
    let probe = dir.join(".liftseg-write-probe");
    fs::File::create(&probe)
        .and_then(|mut f| f.write_all(b""))
        .map_err(io_err)?;
    fs::remove_file(&probe).map_err(io_err)
}

#[derive(Debug, Default, Serialize)]
struct PipelineReport {
    lifting: Option<Lifting>,
    input: PathBuf,
    artifacts: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lifting_stage: Option<Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    segment: Option<SegmentReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    evaluation: Option<EvaluationReport>,
    failed_stage: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

pub fn cmd_pipeline(input: &Path, config: &Path, outdir: &Path, truth: Option<&Path>) -> Result<()> {
    let cfg = PipelineConfig::from_json(&read_text(config)?)?;
    ensure_writable_dir(outdir)?;
    let mut report = PipelineReport {
        lifting: Some(cfg.lifting),
        input: input.to_path_buf(),
        ..PipelineReport::default()
    };
    let truth = truth.map(Path::to_path_buf).or_else(|| cfg.truth.clone());
    let outcome = pipeline_stages(input, &cfg, outdir, truth.as_deref(), &mut report);
    if let Err((stage, e)) = &outcome {
        report.failed_stage = Some(stage.to_string());
        report.error = Some(e.to_string());
    }
    report.artifacts.push(cfg.outputs.report.clone());
    write_json(&outdir.join(&cfg.outputs.report), &report)?;
    outcome.map_err(|(_, e)| e)
}

type StageResult<T> = std::result::Result<T, (&'static str, Error)>;

fn stage<T>(name: &'static str, r: Result<T>) -> StageResult<T> {
    r.map_err(|e| (name, e))
}

fn pipeline_stages(
    input: &Path,
    cfg: &PipelineConfig,
    outdir: &Path,
    truth: Option<&Path>,
    report: &mut PipelineReport,
) -> StageResult<()> {
    let out = |name: &str| outdir.join(name);
    let image = stage("input", io::load_image(input))?;
    let truth = match truth {
        Some(path) => Some(stage("input", io::load_label_png(path))?),
        None => None,
    };

    let start = Instant::now();
    let features = match cfg.lifting {
        Lifting::Gabor => {
            let spec = cfg.gabor_spec.as_ref().expect("validated");
            stage("lifting", lift_gabor(&image, spec))?
        }
        Lifting::Cnn => {
            let cnn_cfg = cfg.cnn.as_ref().expect("validated");
            let trained = stage("lifting", train_logged(&image, cnn_cfg))?;
            report.lifting_stage = Some(json!({
                "initial_loss": trained.loss_trace.first(),
                "final_loss": trained.loss_trace.last(),
            }));
            trained.features
        }
    };
    let lifting_info = json!({
        "channels": features.channels(),
        "runtime_seconds": start.elapsed().as_secs_f64(),
    });
    report.lifting_stage = Some(match report.lifting_stage.take() {
        Some(Value::Object(mut extra)) => {
            extra.extend(lifting_info.as_object().expect("object").clone());
            Value::Object(extra)
        }
        _ => lifting_info,
    });
    stage("lifting", io::write_fstk(&features, out(&cfg.outputs.features)))?;
    report.artifacts.push(cfg.outputs.features.clone());

    let (result, summary) = stage("segment", run_segment(&features, &cfg.solver, InitArg::Features))?;
    report.segment = Some(summary);
    let labels = extract_labels(&result.labels);
    stage("segment", soft_stack(&result.labels).and_then(|s| io::write_fstk(&s, out(&cfg.outputs.soft))))?;
    report.artifacts.push(cfg.outputs.soft.clone());
    stage("segment", io::save_label_png(&labels, out(&cfg.outputs.labels)))?;
    report.artifacts.push(cfg.outputs.labels.clone());
    let overlay = stage("overlay", render_overlay(&image, &labels))?;
    stage("overlay", io::save_rgb_png(&overlay, out(&cfg.outputs.overlay)))?;
    report.artifacts.push(cfg.outputs.overlay.clone());

    if let Some(t) = truth {
        report.evaluation = Some(stage("evaluate", evaluate(&labels, &t, cfg.matching))?);
    }
    Ok(())
}

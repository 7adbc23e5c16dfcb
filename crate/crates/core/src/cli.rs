//! The `lohgnet` command line.
//!
//! Exit codes: 0 success, 1 a check failed, 2 usage or input error,
//! 3 numeric failure.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::config::{NetworkConfig, Preset};
use crate::error::{Error, Result};
use crate::gradchecks::{self, Case, Suite};
use crate::horl::HypergraphState;
use crate::metrics::{binarize, BinaryMask, DetectionReport, DEFAULT_MATCH_RADIUS, DEFAULT_THRESHOLD};
use crate::model::{normalize_input, LohgNet};
use crate::numerics::{weights, Precision, Real, Tape, Tensor};
use crate::selftest;
use crate::synth::{self, read_pgm, write_pgm, Pgm, SceneSpec};

pub const EXIT_CHECK_FAILED: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "lohgnet", version, about = "Lorentz/hypergraph infrared small target segmentation toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the invariant suite and print one line per check.
    Selftest {
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Finite-difference gradient checks in 64-bit.
    Gradcheck {
        #[arg(long, value_enum, default_value_t = GradModule::All)]
        module: GradModule,
        /// Parameter elements sampled per tensor in the end-to-end check.
        #[arg(long, default_value_t = 4)]
        samples: usize,
    },
    /// Generate a synthetic dataset.
    Gen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 3)]
        targets: usize,
    },
    /// Train on a generated dataset and write a checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Loss log; defaults to the checkpoint path with `.loss.csv`.
        #[arg(long)]
        log: Option<PathBuf>,
        #[command(flatten)]
        overrides: ConfigArgs,
    },
    /// Predict a probability map (16-bit PGM) and a binary mask.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Binary mask output; defaults to `<out stem>.mask.pgm`.
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
    },
    /// Compare prediction PGMs against ground-truth masks by file name.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Per-image CSV; defaults to the report path with `.csv`.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
        #[arg(long, default_value_t = DEFAULT_MATCH_RADIUS)]
        radius: f64,
    },
    /// Write H, H_s, Dv, De and P_H of the deepest feature map as CSV.
    DumpHypergraph {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GradModule {
    All,
    Primitives,
    Lorentz,
    Euclid,
    Horl,
    E2e,
}

/// Flags that override the JSON config file.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<PresetArg>,
    #[arg(long)]
    pub curvature: Option<f64>,
    #[arg(long)]
    pub input_size: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub hyperedges: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub precision: Option<PrecisionArg>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PresetArg {
    Tiny,
    Full,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PrecisionArg {
    F32,
    F64,
}

impl ConfigArgs {
    /// File first, then flags.
    pub fn resolve(&self) -> Result<NetworkConfig> {
        let mut cfg = match &self.config {
            Some(p) => NetworkConfig::load(p)?,
            None => NetworkConfig::default(),
        };
        if let Some(p) = self.preset {
            cfg.preset = match p {
                PresetArg::Tiny => Preset::Tiny,
                PresetArg::Full => Preset::Full,
            };
        }
        if let Some(k) = self.curvature {
            cfg.curvature = k.try_into()?;
        }
        if let Some(s) = self.input_size {
            cfg.input_size = Some(s);
        }
        if let Some(l) = self.lambda {
            cfg.lambda = l;
        }
        if let Some(m) = self.hyperedges {
            cfg.hyperedges = Some(m);
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(p) = self.precision {
            cfg.precision = match p {
                PrecisionArg::F32 => Precision::F32,
                PrecisionArg::F64 => Precision::F64,
            };
        }
        if let Some(lr) = self.lr {
            cfg.learning_rate = lr;
        }
        if let Some(s) = self.steps {
            cfg.steps = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Outcome of a command that ran to completion.
enum Outcome {
    Ok,
    ChecksFailed,
}

pub fn main_with_args<I, S>(args: I) -> ExitCode
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::ChecksFailed) => ExitCode::from(EXIT_CHECK_FAILED),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { EXIT_NUMERIC } else { EXIT_USAGE })
        }
    }
}

fn run(cmd: Command) -> Result<Outcome> {
    match cmd {
        Command::Selftest { inject_fault } => cmd_selftest(inject_fault),
        Command::Gradcheck { module, samples } => cmd_gradcheck(module, samples),
        Command::Gen {
            out,
            count,
            size,
            seed,
            targets,
        } => {
            cmd_gen(&out, count, size, seed, targets)?;
            Ok(Outcome::Ok)
        }
        Command::Train { data, out, log, overrides } => {
            let cfg = overrides.resolve()?;
            let log = log.unwrap_or_else(|| suffixed(&out, "loss.csv"));
            match cfg.precision {
                Precision::F32 => cmd_train::<f32>(&data, &cfg, &out, &log)?,
                Precision::F64 => cmd_train::<f64>(&data, &cfg, &out, &log)?,
            }
            Ok(Outcome::Ok)
        }
        Command::Infer {
            ckpt,
            image,
            out,
            mask,
            threshold,
        } => {
            let mask = mask.unwrap_or_else(|| suffixed(&out, "mask.pgm"));
            cmd_infer(&ckpt, &image, &out, &mask, threshold)?;
            Ok(Outcome::Ok)
        }
        Command::Eval {
            pred,
            gt,
            report,
            csv,
            threshold,
            radius,
        } => {
            let csv = csv.unwrap_or_else(|| report.with_extension("csv"));
            let r = cmd_eval(&pred, &gt, &report, &csv, threshold, radius)?;
            println!("{}", r.summary());
            Ok(Outcome::Ok)
        }
        Command::DumpHypergraph { ckpt, image, out } => {
            cmd_dump(&ckpt, &image, &out)?;
            Ok(Outcome::Ok)
        }
    }
}

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    path.with_extension(suffix)
}

fn cmd_selftest(inject_fault: bool) -> Result<Outcome> {
    let checks = selftest::run(inject_fault);
    for c in &checks {
        println!("{c}");
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    println!("{} checks, {failed} failed", checks.len());
    Ok(if failed == 0 { Outcome::Ok } else { Outcome::ChecksFailed })
}

pub fn gradcheck_cases(module: GradModule, samples: usize) -> Result<Vec<Case>> {
    use GradModule::*;
    let mut cases = Vec::new();
    if matches!(module, All | Primitives) {
        cases.extend(gradchecks::primitives(false)?);
        cases.push(Case {
            suite: Suite::Primitives,
            name: "conv_relu_gap".into(),
            report: gradchecks::composite_conv_relu_gap()?,
        });
    }
    if matches!(module, All | Lorentz) {
        cases.extend(gradchecks::lorentz()?);
    }
    if matches!(module, All | Euclid) {
        cases.extend(gradchecks::euclid(samples)?);
    }
    if matches!(module, All | Horl) {
        cases.extend(gradchecks::horl()?);
    }
    if matches!(module, All | E2e) {
        cases.extend(gradchecks::e2e(samples)?);
    }
    Ok(cases)
}

fn cmd_gradcheck(module: GradModule, samples: usize) -> Result<Outcome> {
    let cases = gradcheck_cases(module, samples)?;
    for c in &cases {
        let r = &c.report;
        println!(
            "{}  {:<12} {:<24} max rel err {:.3e} (tol {:.0e}, {} elements)",
            if r.passed { "PASS" } else { "FAIL" },
            format!("{:?}", c.suite).to_lowercase(),
            c.name,
            r.max_rel_err,
            r.rel_tol,
            r.checked
        );
    }
    Ok(if cases.iter().all(|c| c.report.passed) {
        Outcome::Ok
    } else {
        Outcome::ChecksFailed
    })
}

pub fn cmd_gen(out: &Path, count: usize, size: usize, seed: u64, targets: usize) -> Result<()> {
    if size == 0 || size % 16 != 0 {
        return Err(Error::Contract(format!("size must be a positive multiple of 16, got {size}")));
    }
    let spec = SceneSpec {
        width: size,
        height: size,
        num_targets: targets,
        seed,
        ..SceneSpec::default()
    };
    synth::write_dataset(out, &spec, count)?;
    println!("wrote {count} scenes to {}", out.display());
    Ok(())
}

fn metadata(cfg: &NetworkConfig, steps: usize) -> serde_json::Value {
    json!({ "config": cfg, "steps": steps })
}

pub fn cmd_train<T: Real>(data: &Path, cfg: &NetworkConfig, out: &Path, log: &Path) -> Result<()> {
    let pairs = synth::read_dataset(data)?;
    if pairs.is_empty() {
        return Err(Error::Contract(format!("{} lists no scenes", data.display())));
    }
    let mut net = LohgNet::<T>::new(cfg)?;
    let mut csv = String::from("step,image,loss\n");
    let data: Vec<(Tensor<T>, Tensor<T>)> = pairs.iter().map(|(i, m)| (i.cast(), m.cast())).collect();
    for step in 0..cfg.steps {
        let idx = step % data.len();
        let loss = net.train_step(&data[idx].0, &data[idx].1, cfg.learning_rate)?;
        let _ = writeln!(csv, "{step},{idx},{loss:.9e}");
    }
    weights::save(out, &net.params, metadata(cfg, cfg.steps))?;
    std::fs::write(log, csv).map_err(|e| Error::io(log, e))?;
    println!("trained {} steps, checkpoint {}", cfg.steps, out.display());
    Ok(())
}

fn checkpoint_config(ckpt: &Path) -> Result<NetworkConfig> {
    let (_, meta) = weights::load::<f64>(ckpt)?;
    let cfg: NetworkConfig = serde_json::from_value(meta.get("config").cloned().unwrap_or_default())
        .map_err(|e| Error::Format {
            offset: 0,
            msg: format!("checkpoint metadata has no usable config: {e}"),
        })?;
    cfg.validate()?;
    Ok(cfg)
}

fn load_net<T: Real>(ckpt: &Path, cfg: &NetworkConfig) -> Result<LohgNet<T>> {
    let (store, _) = weights::load::<T>(ckpt)?;
    let mut net = LohgNet::<T>::new(cfg)?;
    net.load_params(&store)?;
    Ok(net)
}

fn predict<T: Real>(ckpt: &Path, cfg: &NetworkConfig, image: &Tensor<f64>) -> Result<Vec<f64>> {
    let net = load_net::<T>(ckpt, cfg)?;
    Ok(net.predict(&image.cast())?.to_f64().into_data())
}

pub fn cmd_infer(ckpt: &Path, image: &Path, out: &Path, mask: &Path, threshold: f64) -> Result<()> {
    let cfg = checkpoint_config(ckpt)?;
    let pgm = read_pgm(image)?;
    let x = pgm.to_tensor();
    let probs = match cfg.precision {
        Precision::F32 => predict::<f32>(ckpt, &cfg, &x)?,
        Precision::F64 => predict::<f64>(ckpt, &cfg, &x)?,
    };
    let (w, h) = (pgm.width, pgm.height);
    write_pgm(out, &Pgm::from_unit(w, h, &probs, 65535)?)?;
    let t = Tensor::new(&[1, 1, h, w], probs)?;
    let m = binarize(&t, threshold)?;
    write_pgm(mask, &Pgm::from_unit(w, h, &m.to_values(), 255)?)?;
    println!("wrote {} and {}", out.display(), mask.display());
    Ok(())
}

fn pgm_files(dir: &Path) -> Result<Vec<String>> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut names = Vec::new();
    for entry in rd {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.ends_with(".pgm") && !name.ends_with(".mask.pgm") {
            names.push(name);
        }
    }
    names.sort();
    Ok(names)
}

fn load_mask(path: &Path, threshold: f64) -> Result<BinaryMask> {
    binarize(&read_pgm(path)?.to_tensor(), threshold)
}

pub fn cmd_eval(pred: &Path, gt: &Path, report: &Path, csv: &Path, threshold: f64, radius: f64) -> Result<DetectionReport> {
    let names = pgm_files(gt)?;
    if names.is_empty() {
        return Err(Error::Contract(format!("no .pgm files in {}", gt.display())));
    }
    let pairs = names
        .into_iter()
        .map(|n| {
            let p = load_mask(&pred.join(&n), threshold)?;
            let g = load_mask(&gt.join(&n), 0.5)?;
            Ok((n, p, g))
        })
        .collect::<Result<Vec<_>>>()?;
    let r = DetectionReport::evaluate(&pairs, radius)?;
    r.write_json(report)?;
    r.write_csv(csv)?;
    Ok(r)
}

fn dump<T: Real>(ckpt: &Path, cfg: &NetworkConfig, image: &Tensor<f64>, out: &Path) -> Result<()> {
    let net = load_net::<T>(ckpt, cfg)?;
    let mut tape = Tape::new();
    let p = net.params.bind(&mut tape);
    let x = tape.constant(normalize_input(&image.cast::<T>()));
    let fwd = net.forward(&mut tape, &p, x, None)?;
    HypergraphState::from_tape(&tape, &fwd.horl.graphs[0]).write_csv(out)
}

pub fn cmd_dump(ckpt: &Path, image: &Path, out: &Path) -> Result<()> {
    let cfg = checkpoint_config(ckpt)?;
    let x = read_pgm(image)?.to_tensor();
    match cfg.precision {
        Precision::F32 => dump::<f32>(ckpt, &cfg, &x, out)?,
        Precision::F64 => dump::<f64>(ckpt, &cfg, &x, out)?,
    }
    println!("wrote hypergraph CSVs to {}", out.display());
    Ok(())
}

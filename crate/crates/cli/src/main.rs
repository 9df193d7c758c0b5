use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dis2::baselines::Method;
use dis2::critic::{InputSpace, TrainConfig};
use dis2::data::io::{write_labels, write_matrix};
use dis2::data::{load_manifest, ClassifierUnderTest, EmbeddingDataset, ShiftManifest, SplitRole, SplitSpec, DEFAULT_DELTA};
use dis2::harness::{
    estimate_shift, fit_centroid_head, generate_synthetic_shift, loocv_adjust, run_benchmark, run_manifests,
    AdjustmentMode, BenchmarkOutput, EvalOptions, EvaluationRecord, SuiteConfig, SynthConfig,
};
use dis2::reduction::sweep_pcs;
use dis2::shift::ShiftInputs;
use serde_json::json;

const MANIFEST_HOLDOUT_FRACTION: f64 = 0.2;

/// Upper bounds on a classifier's target error under distribution shift,
/// from unlabeled target embeddings.
#[derive(Parser)]
#[command(name = "dis2", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Confidence parameter of the bound [default: the manifest's, else 0.01]
    #[arg(long, global = true)]
    delta: Option<f64>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Fraction carved out of a train split when its holdout role is absent
    /// [default: 0.2 for manifests, 0.5 for the synthetic suite]
    #[arg(long, global = true)]
    holdout_fraction: Option<f64>,
    #[arg(long, global = true, value_enum, default_value_t = Space::Logits)]
    input_space: Space,
    /// Principal components kept with `--input-space pcs` [default: all]
    #[arg(long, global = true)]
    pcs: Option<usize>,
    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Space {
    Features,
    Logits,
    Pcs,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Shift,
    Scale,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic Gaussian shift (splits, head and manifest) to --out
    Synth(SynthArgs),
    /// Dis² bound for each manifest
    Bound {
        #[command(flatten)]
        shifts: ShiftArgs,
        #[command(flatten)]
        critic: CriticArgs,
    },
    /// Baseline and Dis² estimates, one JSON record per method per shift
    Estimate {
        #[command(flatten)]
        shifts: ShiftArgs,
        #[command(flatten)]
        critic: CriticArgs,
        #[command(flatten)]
        methods: MethodArgs,
    },
    /// Bounds on the top d/k principal components for each k
    SweepPcs {
        #[command(flatten)]
        shifts: ShiftArgs,
        #[command(flatten)]
        critic: CriticArgs,
        #[arg(long, value_delimiter = ',', default_values_t = [1, 4, 16, 32, 64, 128])]
        k_list: Vec<usize>,
        /// Keep only records whose validity score reaches this value
        #[arg(long)]
        score_threshold: Option<f64>,
    },
    /// Evaluate estimators against the truth on labeled manifests or on the
    /// seeded synthetic suite
    Evaluate(EvaluateArgs),
    /// Leave-one-group-out adjustment of estimates from evaluation records
    Calibrate {
        /// records.jsonl written by `evaluate`
        records: PathBuf,
        /// Methods to adjust [default: the five baselines]
        #[arg(long, value_delimiter = ',')]
        methods: Vec<Method>,
        #[arg(long, default_value_t = 0.95)]
        alpha: f64,
        #[arg(long, value_enum, default_value_t = Mode::Shift)]
        mode: Mode,
    },
}

#[derive(Args)]
struct ShiftArgs {
    /// Shift manifests
    #[arg(required = true)]
    manifests: Vec<PathBuf>,
    /// Linear head stored as a C×(d+1) matrix (bias last); without it the
    /// manifests must provide logits
    #[arg(long)]
    head: Option<PathBuf>,
}

#[derive(Args)]
struct CriticArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.01, 0.001])]
    learning_rates: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [0, 1, 2])]
    critic_seeds: Vec<u64>,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
}

#[derive(Args)]
struct MethodArgs {
    /// Comma-separated methods [default: all]
    #[arg(long, value_delimiter = ',')]
    methods: Vec<Method>,
    /// Feed raw logits to the baselines instead of temperature-scaled ones
    #[arg(long)]
    no_calibrate: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = 4000)]
    source_count: usize,
    #[arg(long, default_value_t = 4000)]
    target_count: usize,
    #[arg(long, default_value_t = 2.0)]
    separation: f64,
    #[arg(long, default_value_t = 1.0)]
    shift_scale: f64,
    /// Rotation of the target means, in radians
    #[arg(long, default_value_t = 0.0)]
    rotation: f64,
    #[arg(long, default_value_t = 1.0)]
    noise_scale: f64,
    /// Target class proportions [default: uniform]
    #[arg(long, value_delimiter = ',')]
    class_weights: Vec<f64>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Labeled shift manifests; omit to run the synthetic suite
    manifests: Vec<PathBuf>,
    #[arg(long)]
    head: Option<PathBuf>,
    #[command(flatten)]
    critic: CriticArgs,
    #[command(flatten)]
    methods: MethodArgs,
    #[arg(long, default_value_t = 200)]
    shifts: usize,
    #[arg(long, default_value_t = 5)]
    groups: usize,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    /// Source and target samples per synthetic shift, before the holdout split
    #[arg(long, default_value_t = 4000)]
    samples: usize,
    /// Labeled target samples per synthetic shift used only for the truth
    #[arg(long, default_value_t = 20000)]
    truth_samples: usize,
}

/// Errors exit with 1; a run where some shifts failed exits with 2.
enum Outcome {
    Done,
    Partial(usize),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::Partial(n)) => {
            eprintln!("{n} shift(s) failed; see output for details");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {}", chain(&e));
            ExitCode::from(1)
        }
    }
}

/// Context chain joined with ": ", skipping causes already quoted by the
/// message above them.
fn chain(e: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in e.chain() {
        let s = cause.to_string();
        if !msg.ends_with(&s) {
            if !msg.is_empty() {
                msg.push_str(": ");
            }
            msg.push_str(&s);
        }
    }
    msg
}

fn run(cli: Cli) -> Result<Outcome> {
    let g = &cli.global;
    if let Some(d) = g.delta {
        if !(d > 0.0 && d <= 1.0) {
            bail!("--delta must be in (0, 1]");
        }
    }
    if let Some(f) = g.holdout_fraction {
        if !(f > 0.0 && f < 1.0) {
            bail!("--holdout-fraction must be in (0, 1)");
        }
    }
    match &cli.command {
        Command::Synth(args) => synth(g, args),
        Command::Bound { shifts, critic } => bound(g, shifts, critic),
        Command::Estimate { shifts, critic, methods } => estimate(g, shifts, critic, methods),
        Command::SweepPcs {
            shifts,
            critic,
            k_list,
            score_threshold,
        } => sweep(g, shifts, critic, k_list, *score_threshold),
        Command::Evaluate(args) => evaluate(g, args),
        Command::Calibrate {
            records,
            methods,
            alpha,
            mode,
        } => calibrate(g, records, methods, *alpha, *mode),
    }
}

impl Global {
    fn input_space(&self, dim: usize) -> Result<InputSpace> {
        Ok(match self.input_space {
            Space::Features => InputSpace::Features,
            Space::Logits => InputSpace::Logits,
            Space::Pcs => {
                let p = self.pcs.unwrap_or(dim);
                if p == 0 || p > dim {
                    bail!("--pcs must be in 1..={dim}");
                }
                InputSpace::TopPcs { p }
            }
        })
    }

    fn out_dir(&self) -> Result<Option<&Path>> {
        if let Some(dir) = &self.out {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        Ok(self.out.as_deref())
    }
}

impl CriticArgs {
    fn grid(&self) -> Result<Vec<TrainConfig>> {
        let base = TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            ..TrainConfig::default()
        };
        let grid = TrainConfig::grid(&self.learning_rates, &self.critic_seeds, &base);
        if grid.is_empty() {
            bail!("empty critic grid");
        }
        for c in &grid {
            c.validate()?;
        }
        Ok(grid)
    }
}

impl MethodArgs {
    fn list(&self) -> Vec<Method> {
        if self.methods.is_empty() {
            Method::ALL.to_vec()
        } else {
            self.methods.clone()
        }
    }
}

fn classifier(head: Option<&Path>) -> Result<ClassifierUnderTest> {
    Ok(match head {
        Some(p) => ClassifierUnderTest::load_head(p)?,
        None => ClassifierUnderTest::ProvidedLogits,
    })
}

fn load_manifests(paths: &[PathBuf], head: Option<&Path>) -> Result<Vec<ShiftManifest>> {
    let manifests: Vec<ShiftManifest> = paths
        .iter()
        .map(|p| load_manifest(p).with_context(|| format!("manifest {}", p.display())))
        .collect::<Result<_>>()?;
    if head.is_none() {
        for m in &manifests {
            if let Some(s) = m.splits.iter().find(|s| s.logits_path.is_none()) {
                bail!("manifest '{}': split {} has no logits; pass --head", m.name, s.role);
            }
        }
    }
    Ok(manifests)
}

/// Loads every shift up front so that bad inputs fail before any training.
fn load_shifts(g: &Global, args: &ShiftArgs) -> Result<Vec<(ShiftManifest, ShiftInputs)>> {
    let h = classifier(args.head.as_deref())?;
    let fraction = g.holdout_fraction.unwrap_or(MANIFEST_HOLDOUT_FRACTION);
    load_manifests(&args.manifests, args.head.as_deref())?
        .into_iter()
        .map(|m| {
            let inputs = ShiftInputs::from_manifest(&m, h.clone(), fraction, g.seed)
                .with_context(|| format!("shift '{}'", m.name))?;
            Ok((m, inputs))
        })
        .collect()
}

fn write_lines(path: &Path, lines: &[String]) -> Result<()> {
    let mut f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    for l in lines {
        writeln!(f, "{l}")?;
    }
    Ok(())
}

fn finish(failures: usize) -> Outcome {
    if failures == 0 {
        Outcome::Done
    } else {
        Outcome::Partial(failures)
    }
}

fn synth(g: &Global, args: &SynthArgs) -> Result<Outcome> {
    let Some(dir) = g.out_dir()? else {
        bail!("synth needs --out");
    };
    let class_weights = if args.class_weights.is_empty() {
        vec![1.0 / args.classes as f64; args.classes]
    } else {
        args.class_weights.clone()
    };
    let cfg = SynthConfig {
        classes: args.classes,
        dim: args.dim,
        source_count: args.source_count,
        target_count: args.target_count,
        separation: args.separation,
        shift_scale: args.shift_scale,
        shift_direction: None,
        class_weights,
        rotation_angle: args.rotation,
        noise_scale: args.noise_scale,
        mean_seed: g.seed,
        seed: g.seed,
    };
    let (source, target) = generate_synthetic_shift(&cfg)?;
    let head = fit_centroid_head(&source)?;
    head.save_head(&dir.join("head.bin"))?;

    let mut splits = Vec::new();
    for (name, ds, role) in [
        ("source_train", &source, SplitRole::SourceTrain),
        ("target_train", &target, SplitRole::TargetTrain),
    ] {
        splits.push(write_split(dir, name, ds, role)?);
    }
    let manifest = ShiftManifest::new("synthetic", args.dim, args.classes, splits, g.delta.unwrap_or(DEFAULT_DELTA), dir);
    manifest.save(&dir.join("manifest.json"))?;
    fs::write(dir.join("synth.json"), serde_json::to_string_pretty(&cfg)?)?;

    let source_error = dis2::harness::classifier_error(&head, &source)?;
    let target_error = dis2::harness::classifier_error(&head, &target)?;
    println!(
        "wrote {} (head source error {source_error:.4}, target error {target_error:.4})",
        dir.join("manifest.json").display()
    );
    Ok(Outcome::Done)
}

fn write_split(dir: &Path, name: &str, ds: &EmbeddingDataset, role: SplitRole) -> Result<SplitSpec> {
    let features = format!("{name}.features.bin");
    let labels = format!("{name}.labels.bin");
    write_matrix(&dir.join(&features), ds.features())?;
    write_labels(&dir.join(&labels), ds.require_labels()?)?;
    Ok(SplitSpec {
        role,
        features_path: features.into(),
        labels_path: Some(labels.into()),
        logits_path: None,
    })
}

fn bound(g: &Global, args: &ShiftArgs, critic: &CriticArgs) -> Result<Outcome> {
    let grid = critic.grid()?;
    let shifts = load_shifts(g, args)?;
    let out = g.out_dir()?;
    let (mut lines, mut failures) = (Vec::new(), 0);
    for (manifest, inputs) in &shifts {
        let delta = g.delta.unwrap_or(manifest.delta);
        let result = g
            .input_space(inputs.dim())
            .and_then(|space| Ok(inputs.estimate(space, &grid, delta)?));
        match result {
            Ok(o) => {
                println!("{}", o.report.render(&manifest.name));
                lines.push(
                    json!({
                        "shift": manifest.name,
                        "bound": o.report,
                        "validity_score": o.validity_score,
                        "critic_config": o.search.best.config,
                        "holdout_discrepancies": o.search.holdout_discrepancies,
                    })
                    .to_string(),
                );
                if let Some(dir) = out {
                    o.search
                        .best
                        .critic
                        .save(&dir.join(format!("critic-{}.json", manifest.name)), Some(&o.search.best.config))?;
                }
            }
            Err(e) => {
                failures += 1;
                eprintln!("{}: failed: {e:#}", manifest.name);
                lines.push(json!({"shift": manifest.name, "error": format!("{e:#}")}).to_string());
            }
        }
    }
    if let Some(dir) = out {
        write_lines(&dir.join("bounds.jsonl"), &lines)?;
    }
    Ok(finish(failures))
}

fn estimate(g: &Global, args: &ShiftArgs, critic: &CriticArgs, methods: &MethodArgs) -> Result<Outcome> {
    let grid = critic.grid()?;
    let shifts = load_shifts(g, args)?;
    let (mut lines, mut failures) = (Vec::new(), 0);
    for (manifest, inputs) in &shifts {
        let result = g.input_space(inputs.dim()).and_then(|input_space| {
            let options = EvalOptions {
                methods: methods.list(),
                delta: g.delta.unwrap_or(manifest.delta),
                input_space,
                critic_grid: grid.clone(),
                calibrate: !methods.no_calibrate,
                seed: g.seed,
            };
            Ok(estimate_shift(&manifest.name, inputs, &options)?)
        });
        match result {
            Ok(r) => {
                for e in r.estimates {
                    lines.push(
                        json!({
                            "shift": manifest.name,
                            "method": e.method,
                            "predicted_error": e.predicted_error,
                            "temperature": r.temperature,
                            "metadata": e.metadata,
                        })
                        .to_string(),
                    );
                }
            }
            Err(e) => {
                failures += 1;
                eprintln!("{}: failed: {e:#}", manifest.name);
                lines.push(json!({"shift": manifest.name, "error": format!("{e:#}")}).to_string());
            }
        }
    }
    for l in &lines {
        println!("{l}");
    }
    if let Some(dir) = g.out_dir()? {
        write_lines(&dir.join("estimates.jsonl"), &lines)?;
    }
    Ok(finish(failures))
}

fn sweep(
    g: &Global,
    args: &ShiftArgs,
    critic: &CriticArgs,
    k_list: &[usize],
    score_threshold: Option<f64>,
) -> Result<Outcome> {
    let grid = critic.grid()?;
    let shifts = load_shifts(g, args)?;
    let (mut lines, mut failures) = (Vec::new(), 0);
    for (manifest, inputs) in &shifts {
        let delta = g.delta.unwrap_or(manifest.delta);
        match sweep_pcs(inputs, k_list, &grid, score_threshold, delta) {
            Ok(r) => {
                for rec in &r.records {
                    println!(
                        "{} k={} p={}: bound {:.4} validity {:.4}",
                        manifest.name, rec.k, rec.p, rec.bound.bound_with_delta, rec.validity_score
                    );
                }
                if let Some(s) = &r.selected {
                    println!("{}: selected {} bound {:.4}", manifest.name, s.space, s.bound.bound_with_delta);
                }
                lines.push(json!({"shift": manifest.name, "sweep": r}).to_string());
            }
            Err(e) => {
                failures += 1;
                eprintln!("{}: failed: {e:#}", manifest.name);
                lines.push(json!({"shift": manifest.name, "error": e.to_string()}).to_string());
            }
        }
    }
    if let Some(dir) = g.out_dir()? {
        write_lines(&dir.join("sweep.jsonl"), &lines)?;
    }
    Ok(finish(failures))
}

fn evaluate(g: &Global, args: &EvaluateArgs) -> Result<Outcome> {
    let grid = args.critic.grid()?;
    let methods = args.methods.list();
    let output = if args.manifests.is_empty() {
        let suite = SuiteConfig {
            seed: g.seed,
            shift_count: args.shifts,
            groups: args.groups,
            dim: args.dim,
            source_count: args.samples,
            target_count: args.samples,
            truth_count: args.truth_samples,
            holdout_fraction: g.holdout_fraction.unwrap_or(SuiteConfig::default().holdout_fraction),
            input_space: g.input_space(args.dim)?,
            critic_grid: grid,
            calibrate: !args.methods.no_calibrate,
            ..SuiteConfig::default()
        };
        run_benchmark(&suite, &methods, g.delta.unwrap_or(DEFAULT_DELTA))?
    } else {
        let h = classifier(args.head.as_deref())?;
        let manifests = load_manifests(&args.manifests, args.head.as_deref())?;
        let dim = manifests.iter().map(|m| m.dim).min().unwrap_or(0);
        let options = EvalOptions {
            methods,
            delta: g.delta.unwrap_or(DEFAULT_DELTA),
            input_space: g.input_space(dim)?,
            critic_grid: grid,
            calibrate: !args.methods.no_calibrate,
            seed: g.seed,
        };
        let shifts: Vec<_> = manifests.into_iter().map(|m| (m, h.clone())).collect();
        run_manifests(&shifts, &options, g.holdout_fraction.unwrap_or(MANIFEST_HOLDOUT_FRACTION))
    };
    print_summary(&output);
    if let Some(dir) = g.out_dir()? {
        output.write(dir)?;
    }
    Ok(finish(output.failures.len()))
}

fn print_summary(output: &BenchmarkOutput) {
    println!("{} shifts evaluated, {} failed", output.records.len(), output.failures.len());
    for (method, m) in &output.summary.methods {
        println!(
            "{:<14} n={:<4} mae {:.4}  coverage {:.4}  conditional overestimation {:.4}",
            method.name(),
            m.count,
            m.mae,
            m.coverage,
            m.conditional_overestimation
        );
    }
    for f in &output.failures {
        println!("failed {}: {}", f.shift_id, f.error);
    }
}

fn calibrate(g: &Global, path: &Path, methods: &[Method], alpha: f64, mode: Mode) -> Result<Outcome> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        bail!("--alpha must be in (0, 1]");
    }
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let records: Vec<EvaluationRecord> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{} line {}", path.display(), i + 1)))
        .collect::<Result<_>>()?;
    let mode = match mode {
        Mode::Shift => AdjustmentMode::Shift,
        Mode::Scale => AdjustmentMode::Scale,
    };
    let methods = if methods.is_empty() { Method::BASELINES.to_vec() } else { methods.to_vec() };
    let mut reports = Vec::new();
    for method in methods {
        let r = loocv_adjust(&records, method, alpha, mode)?;
        for f in &r.folds {
            println!(
                "{method} held out {}: parameter {:.6}{} training coverage {:.4} held-out coverage {:.4}",
                f.held_out,
                f.params.value,
                if f.params.saturated { " (saturated)" } else { "" },
                f.training_coverage,
                f.held_out_coverage
            );
        }
        println!("{method}: pooled held-out coverage {:.4}", r.held_out_coverage);
        reports.push(r);
    }
    if let Some(dir) = g.out_dir()? {
        fs::write(dir.join("loocv.json"), serde_json::to_string_pretty(&reports)?)?;
    }
    Ok(Outcome::Done)
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;
use uwstab_core::annotations;
use uwstab_core::detmetrics::{self, image_stats};
use uwstab_core::imagecore::{load_image, save_image};
use uwstab_core::pipeline::{self, list_images, Manifest, PipelineConfig, Stage};
use uwstab_core::stabilize::{stabilize, StabilizationReport};
use uwstab_core::{iem, Error};

#[derive(Parser)]
#[command(name = "uwstab", version, about = "Underwater image enhancement, channel stabilization and detection scoring")]
struct Cli {
    /// Pipeline configuration file (TOML)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured worker count
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Default, ValueEnum)]
enum Format {
    #[default]
    Table,
    Machine,
}

#[derive(Subcommand)]
enum Command {
    /// Enhance an image or a directory of images (IEM only)
    Enhance { input: PathBuf, output: PathBuf },
    /// Equalize channel means and print the report
    Stabilize {
        input: PathBuf,
        /// Where to write the stabilized image(s)
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(long)]
        no_restretch: bool,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
    },
    /// Run the configured stages over the input directory
    Pipeline,
    /// Geometric augmentation with annotation rewrite
    Augment {
        input: PathBuf,
        output: PathBuf,
        /// COCO file describing the input images
        #[arg(long)]
        annotations: Option<PathBuf>,
        /// Where to write the rewritten COCO file (default: <output>/annotations.json)
        #[arg(long)]
        annotations_out: Option<PathBuf>,
    },
    /// Channel means and dispersion for every image in a directory
    Stats {
        dir: PathBuf,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
    },
    /// Score detections against COCO ground truth
    Eval {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
    },
}

/// Usage and configuration problems exit with 2, everything else with 1.
enum Failure {
    Usage(anyhow::Error),
    Run(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast_ref::<Error>() {
            Some(Error::Config(_) | Error::InvalidParameter(_)) => Failure::Usage(e),
            _ => Failure::Run(e),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        anyhow::Error::from(e).into()
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn load_config(cli: &Cli) -> Result<Option<PipelineConfig>, Failure> {
    let Some(path) = &cli.config else {
        return Ok(None);
    };
    let mut cfg = PipelineConfig::load(path)
        .with_context(|| format!("cannot use config {}", path.display()))
        .map_err(Failure::Usage)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(workers) = cli.workers {
        cfg.workers = workers;
    }
    Ok(Some(cfg))
}

fn status(failures: usize) -> ExitCode {
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn run(cli: Cli) -> Result<ExitCode, Failure> {
    let cfg = load_config(&cli)?;
    match &cli.command {
        Command::Enhance { input, output } => {
            let iem_cfg = cfg.map(|c| c.iem).unwrap_or_default();
            iem_cfg.validate()?;
            let (_, failed) = for_each_image(input, Some(output), |img| (iem::enhance(img, &iem_cfg), ()))?;
            Ok(status(failed))
        }
        Command::Stabilize { input, output, no_restretch, format } => {
            let restretch = !no_restretch && cfg.is_none_or(|c| c.stabilize.restretch);
            let (reports, failed) = for_each_image(input, output.as_deref(), |img| stabilize(img, restretch))?;
            print_reports(&reports, *format);
            Ok(status(failed))
        }
        Command::Pipeline => {
            let Some(cfg) = cfg else {
                return Err(Failure::Usage(anyhow!("pipeline needs --config <path>")));
            };
            let manifest = pipeline::run(&cfg)?;
            print_manifest_summary(&manifest, &cfg.output_dir);
            Ok(status(manifest.failures.len()))
        }
        Command::Augment { input, output, annotations, annotations_out } => {
            let mut cfg = cfg.unwrap_or_else(|| PipelineConfig::new(input, output));
            cfg.input_dir = input.clone();
            cfg.output_dir = output.clone();
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            if let Some(workers) = cli.workers {
                cfg.workers = workers;
            }
            cfg.stages.retain(|s| s.is_geometric());
            if cfg.stages.is_empty() {
                cfg.stages = vec![Stage::Hflip, Stage::BrokenMirror, Stage::Crop];
            }
            cfg.annotations_in = annotations.clone();
            cfg.annotations_out = annotations
                .as_ref()
                .map(|_| annotations_out.clone().unwrap_or_else(|| output.join("annotations.json")));
            let manifest = pipeline::run(&cfg)?;
            print_manifest_summary(&manifest, output);
            Ok(status(manifest.failures.len()))
        }
        Command::Stats { dir, format } => {
            let mut rows = Vec::new();
            let mut failed = 0;
            for name in list_images(dir)? {
                match load_image(dir.join(&name)) {
                    Ok(img) => rows.push((name, image_stats(&img))),
                    Err(e) => {
                        eprintln!("{name}: {e}");
                        failed += 1;
                    }
                }
            }
            match format {
                Format::Table => {
                    let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max(4);
                    println!("{:<width$}  {:>8}  {:>8}  {:>8}  {:>10}", "file", "mean_r", "mean_g", "mean_b", "dispersion");
                    for (name, s) in &rows {
                        let [r, g, b] = s.stats.means();
                        println!("{name:<width$}  {r:>8.4}  {g:>8.4}  {b:>8.4}  {:>10.6}", s.dispersion);
                    }
                }
                Format::Machine => {
                    let out: Vec<_> = rows
                        .iter()
                        .map(|(name, s)| json!({"file": name, "stats": s.stats, "dispersion": s.dispersion}))
                        .collect();
                    println!("{}", serde_json::to_string_pretty(&out).expect("plain values serialize"));
                }
            }
            Ok(status(failed))
        }
        Command::Eval { gt, pred, format } => {
            let (gt, _) = annotations::load_coco(gt)?;
            let preds = detmetrics::load_detections(pred)?;
            let summary = detmetrics::evaluate(&gt, &preds)?;
            match format {
                Format::Table => print!("{}", summary.to_table()),
                Format::Machine => println!("{}", serde_json::to_string_pretty(&summary).expect("plain values serialize")),
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

/// Applies `f` to one image file or to every image in a directory. Outputs,
/// when requested, are PNG files named after the input. Returns the per-image
/// results and the number of images that could not be processed; a single
/// input file that fails is an error.
fn for_each_image<T>(
    input: &Path,
    output: Option<&Path>,
    mut f: impl FnMut(&uwstab_core::Image) -> (uwstab_core::Image, T),
) -> Result<(Vec<(String, T)>, usize), Failure> {
    let png_name = |name: &str| {
        let stem = Path::new(name).file_stem().map_or_else(|| name.into(), |s| s.to_string_lossy());
        format!("{stem}.png")
    };
    if input.is_file() {
        let name = input.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let (out, value) = f(&load_image(input)?);
        if let Some(output) = output {
            let dest = if output.is_dir() { output.join(png_name(&name)) } else { output.to_path_buf() };
            save_image(&out, dest)?;
        }
        return Ok((vec![(name, value)], 0));
    }
    if !input.is_dir() {
        return Err(Failure::Run(anyhow!("{} does not exist", input.display())));
    }
    if let Some(output) = output {
        std::fs::create_dir_all(output).with_context(|| format!("cannot create {}", output.display()))?;
    }
    let mut results = Vec::new();
    let mut failed = 0;
    for name in list_images(input)? {
        let outcome = load_image(input.join(&name)).and_then(|img| {
            let (out, value) = f(&img);
            if let Some(output) = output {
                save_image(&out, output.join(png_name(&name)))?;
            }
            Ok(value)
        });
        match outcome {
            Ok(value) => results.push((name, value)),
            Err(e) => {
                log::error!("{name}: {e}");
                failed += 1;
            }
        }
    }
    Ok((results, failed))
}

fn print_reports(reports: &[(String, StabilizationReport)], format: Format) {
    match format {
        Format::Table => {
            for (name, r) in reports {
                let s = &r.stats;
                println!("{name}");
                println!("  means    r {:.4}  g {:.4}  b {:.4}  grand {:.4}", s.mean_r, s.mean_g, s.mean_b, s.grand_mean);
                println!("  scales   r {:.4}  g {:.4}  b {:.4}", r.scale_r, r.scale_g, r.scale_b);
                println!("  blue dominant {}  restretch {}  clipped {:.4}", yes_no(r.blue_dominant), yes_no(r.restretch_applied), r.clipped_fraction);
                if r.degenerate_channels.iter().any(|&d| d) {
                    println!("  degenerate channels {:?}", r.degenerate_channels);
                }
            }
        }
        Format::Machine => {
            let out: Vec<_> = reports.iter().map(|(name, r)| json!({"file": name, "report": r})).collect();
            println!("{}", serde_json::to_string_pretty(&out).expect("plain values serialize"));
        }
    }
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

fn print_manifest_summary(manifest: &Manifest, output_dir: &Path) {
    let c = &manifest.counts;
    println!(
        "{} inputs, {} images written, {} failed, {} boxes dropped",
        c.inputs, c.emitted, c.failed, c.dropped_boxes
    );
    println!(
        "mean channel dispersion {:.6} -> {:.6}",
        manifest.dispersion.mean_before, manifest.dispersion.mean_after
    );
    for f in &manifest.failures {
        println!("failed: {}: {}", f.source, f.error);
    }
    println!("manifest: {}", output_dir.join(pipeline::MANIFEST_FILE).display());
}

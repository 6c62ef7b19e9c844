//! Batch processing of an image directory through a configurable stage list.
//!
//! Photometric stages (`iem`, `stabilize`, `sharpen`) rewrite every variant in
//! place. Geometric stages (`hflip`, `broken_mirror`, `crop`) each flip a coin
//! per existing variant and, on success, add a new variant with a suffixed
//! file name; originals are never replaced.
//!
//! All randomness comes from a per-image generator seeded by a stable hash of
//! the global seed and the file name, so output bytes do not depend on the
//! worker count or traversal order.

use std::collections::{BTreeSet, HashMap};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::annotations::{self, Annotation, AnnotationSet, ImageInfo};
use crate::augment::{self, CropRect, TransformRecord};
use crate::detmetrics::image_stats;
use crate::error::{Error, Result};
use crate::iem::{self, IemConfig};
use crate::imagecore::{self, Image};
use crate::stabilize::{self, StabilizationReport};

pub const MANIFEST_FILE: &str = "manifest.json";
const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Iem,
    Stabilize,
    Sharpen,
    Hflip,
    BrokenMirror,
    Crop,
}

impl Stage {
    pub fn is_geometric(self) -> bool {
        matches!(self, Stage::Hflip | Stage::BrokenMirror | Stage::Crop)
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Iem => "iem",
            Stage::Stabilize => "stabilize",
            Stage::Sharpen => "sharpen",
            Stage::Hflip => "hflip",
            Stage::BrokenMirror => "broken_mirror",
            Stage::Crop => "crop",
        }
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "iem" => Stage::Iem,
            "stabilize" => Stage::Stabilize,
            "sharpen" => Stage::Sharpen,
            "hflip" => Stage::Hflip,
            "broken_mirror" => Stage::BrokenMirror,
            "crop" => Stage::Crop,
            other => return Err(Error::Config(format!("unknown stage `{other}`"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilizeConfig {
    pub restretch: bool,
}

impl Default for StabilizeConfig {
    fn default() -> Self {
        StabilizeConfig { restretch: true }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SharpenConfig {
    pub sigma: f64,
    pub amount: f64,
}

impl Default for SharpenConfig {
    fn default() -> Self {
        SharpenConfig {
            sigma: augment::DEFAULT_SIGMA,
            amount: augment::DEFAULT_AMOUNT,
        }
    }
}

/// Per-variant application probabilities of the geometric stages.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub hflip: f64,
    pub broken_mirror: f64,
    pub crop: f64,
    /// Smallest crop side as a fraction of the image side.
    pub crop_min_side: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            hflip: 0.5,
            broken_mirror: 0.5,
            crop: 0.5,
            crop_min_side: 0.5,
        }
    }
}

fn default_stages() -> Vec<Stage> {
    vec![
        Stage::Iem,
        Stage::Stabilize,
        Stage::Sharpen,
        Stage::Hflip,
        Stage::BrokenMirror,
        Stage::Crop,
    ]
}

fn default_workers() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub input_dir: PathBuf,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub annotations_in: Option<PathBuf>,
    #[serde(default)]
    pub annotations_out: Option<PathBuf>,
    #[serde(default = "default_stages")]
    pub stages: Vec<Stage>,
    #[serde(default)]
    pub iem: IemConfig,
    #[serde(default)]
    pub stabilize: StabilizeConfig,
    #[serde(default)]
    pub sharpen: SharpenConfig,
    #[serde(default)]
    pub augment: AugmentConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
}

/// The processing-relevant part of a config, echoed into the manifest.
/// Paths and the worker count are left out so that equivalent runs produce
/// identical manifests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub stages: Vec<Stage>,
    pub iem: IemConfig,
    pub stabilize: StabilizeConfig,
    pub sharpen: SharpenConfig,
    pub augment: AugmentConfig,
}

impl PipelineConfig {
    pub fn new(input_dir: impl Into<PathBuf>, output_dir: impl Into<PathBuf>) -> Self {
        PipelineConfig {
            input_dir: input_dir.into(),
            output_dir: output_dir.into(),
            annotations_in: None,
            annotations_out: None,
            stages: default_stages(),
            iem: IemConfig::default(),
            stabilize: StabilizeConfig::default(),
            sharpen: SharpenConfig::default(),
            augment: AugmentConfig::default(),
            seed: 0,
            workers: 1,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::Config("stage list is empty".into()));
        }
        let unique: BTreeSet<Stage> = self.stages.iter().copied().collect();
        if unique.len() != self.stages.len() {
            return Err(Error::Config("stage list contains duplicates".into()));
        }
        for (name, p) in [
            ("augment.hflip", self.augment.hflip),
            ("augment.broken_mirror", self.augment.broken_mirror),
            ("augment.crop", self.augment.crop),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must be a probability in [0,1], got {p}")));
            }
        }
        if !(self.augment.crop_min_side > 0.0 && self.augment.crop_min_side <= 1.0) {
            return Err(Error::Config(format!(
                "augment.crop_min_side must be in (0,1], got {}",
                self.augment.crop_min_side
            )));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be positive".into()));
        }
        if !(self.sharpen.sigma > 0.0 && self.sharpen.amount >= 0.0) {
            return Err(Error::Config(format!(
                "sharpen needs sigma > 0 and amount >= 0, got ({}, {})",
                self.sharpen.sigma, self.sharpen.amount
            )));
        }
        self.iem.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.annotations_out.is_some() && self.annotations_in.is_none() {
            return Err(Error::Config("annotations_out requires annotations_in".into()));
        }
        Ok(())
    }

    pub fn echo(&self) -> ConfigEcho {
        ConfigEcho {
            stages: self.stages.clone(),
            iem: self.iem,
            stabilize: self.stabilize,
            sharpen: self.sharpen,
            augment: self.augment,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub source: String,
    pub output: String,
    /// Stages actually applied to this output, in order.
    pub stages: Vec<Stage>,
    pub transforms: Vec<TransformRecord>,
    pub stabilization: Option<StabilizationReport>,
    pub dropped_boxes: usize,
    pub dispersion_before: f64,
    pub dispersion_after: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub source: String,
    pub error: String,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub inputs: usize,
    pub emitted: usize,
    pub failed: usize,
    pub dropped_boxes: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DispersionSummary {
    /// Mean channel-mean dispersion over successfully read inputs.
    pub mean_before: f64,
    /// Mean channel-mean dispersion over emitted images.
    pub mean_after: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ConfigEcho,
    pub seed: u64,
    pub counts: Counts,
    pub dispersion: DispersionSummary,
    pub records: Vec<ManifestRecord>,
    pub failures: Vec<Failure>,
}

impl Manifest {
    pub fn has_failures(&self) -> bool {
        !self.failures.is_empty()
    }
}

/// Stable 64-bit seed for one image: the first 8 bytes of
/// SHA-256(seed little-endian ‖ file name).
pub fn image_seed(seed: u64, file_name: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(file_name.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 digest is 32 bytes"))
}

/// Image files directly inside `dir`, as names sorted bytewise.
pub fn list_images(dir: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        let is_image = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
        if is_image && path.is_file() {
            if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
                names.push(name.to_string());
            }
        }
    }
    names.sort();
    Ok(names)
}

fn file_stem(name: &str) -> &str {
    Path::new(name)
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or(name)
}

struct Variant {
    image: Image,
    suffix: String,
    stages: Vec<Stage>,
    transforms: Vec<TransformRecord>,
    stabilization: Option<StabilizationReport>,
    annotations: Vec<Annotation>,
    dropped: usize,
}

struct Emitted {
    record: ManifestRecord,
    width: u32,
    height: u32,
    annotations: Vec<Annotation>,
}

struct ImageResult {
    dispersion_before: f64,
    emitted: Vec<Emitted>,
}

fn draw_transform(stage: Stage, img: &Image, cfg: &AugmentConfig, rng: &mut ChaCha8Rng) -> Result<Option<(Image, TransformRecord)>> {
    let p = match stage {
        Stage::Hflip => cfg.hflip,
        Stage::BrokenMirror => cfg.broken_mirror,
        Stage::Crop => cfg.crop,
        _ => unreachable!("not a geometric stage"),
    };
    if !rng.random_bool(p) {
        return Ok(None);
    }
    let (w, h) = (img.width(), img.height());
    let out = match stage {
        Stage::Hflip => augment::hflip(img),
        Stage::BrokenMirror => {
            let split = if w > 1 { rng.random_range(1..w) } else { 0 };
            augment::broken_mirror(img, split)?
        }
        Stage::Crop => {
            let side = |full: u32, rng: &mut ChaCha8Rng| {
                let frac = rng.random_range(cfg.crop_min_side..=1.0);
                ((frac * f64::from(full)).round() as u32).clamp(1, full)
            };
            let cw = side(w, rng);
            let ch = side(h, rng);
            let x = rng.random_range(0..=w - cw);
            let y = rng.random_range(0..=h - ch);
            augment::crop(img, CropRect { x, y, w: cw, h: ch })?
        }
        _ => unreachable!(),
    };
    Ok(Some(out))
}

fn process_image(
    cfg: &PipelineConfig,
    name: &str,
    annotated: Option<(&ImageInfo, Vec<Annotation>)>,
) -> Result<ImageResult> {
    let image = imagecore::load_image(cfg.input_dir.join(name))?;
    let dispersion_before = image_stats(&image).dispersion;
    let annotations = match annotated {
        Some((info, anns)) => {
            if (info.width, info.height) != (image.width(), image.height()) {
                return Err(Error::DimensionMismatch {
                    image_id: info.id,
                    record_width: image.width(),
                    record_height: image.height(),
                    width: info.width,
                    height: info.height,
                });
            }
            anns
        }
        None => Vec::new(),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(image_seed(cfg.seed, name));
    let mut variants = vec![Variant {
        image,
        suffix: String::new(),
        stages: Vec::new(),
        transforms: Vec::new(),
        stabilization: None,
        annotations,
        dropped: 0,
    }];

    for &stage in &cfg.stages {
        if stage.is_geometric() {
            let existing = variants.len();
            for i in 0..existing {
                let Some((image, rec)) = draw_transform(stage, &variants[i].image, &cfg.augment, &mut rng)? else {
                    continue;
                };
                let parent = &variants[i];
                let (anns, dropped) = annotations::transform_annotations(&parent.annotations, &rec);
                let mut stages = parent.stages.clone();
                stages.push(stage);
                let mut transforms = parent.transforms.clone();
                transforms.push(rec);
                variants.push(Variant {
                    image,
                    suffix: format!("{}_{}", parent.suffix, stage.name()),
                    stages,
                    transforms,
                    stabilization: parent.stabilization.clone(),
                    annotations: anns,
                    dropped: parent.dropped + dropped,
                });
            }
            continue;
        }
        for v in &mut variants {
            match stage {
                Stage::Iem => v.image = iem::enhance(&v.image, &cfg.iem),
                Stage::Stabilize => {
                    let (img, report) = stabilize::stabilize(&v.image, cfg.stabilize.restretch);
                    v.image = img;
                    v.stabilization = Some(report);
                }
                Stage::Sharpen => {
                    v.image = augment::sharpen(&v.image, cfg.sharpen.sigma, cfg.sharpen.amount)?;
                }
                _ => unreachable!(),
            }
            v.stages.push(stage);
        }
    }

    let stem = file_stem(name);
    let mut emitted = Vec::with_capacity(variants.len());
    for v in variants {
        let output = format!("{stem}{}.png", v.suffix);
        imagecore::save_image(&v.image, cfg.output_dir.join(&output))?;
        emitted.push(Emitted {
            record: ManifestRecord {
                source: name.to_string(),
                output,
                stages: v.stages,
                transforms: v.transforms,
                stabilization: v.stabilization,
                dropped_boxes: v.dropped,
                dispersion_before,
                dispersion_after: image_stats(&v.image).dispersion,
            },
            width: v.image.width(),
            height: v.image.height(),
            annotations: v.annotations,
        });
    }
    Ok(ImageResult {
        dispersion_before,
        emitted,
    })
}

/// Builds the output annotation set. Untransformed outputs keep their image
/// and annotation ids; augmented variants get fresh ids above the input maxima.
fn assemble_annotations(source: &AnnotationSet, results: &[(String, Result<ImageResult>)]) -> AnnotationSet {
    let by_name: HashMap<&str, &ImageInfo> = source.images.iter().map(|i| (i.file_name.as_str(), i)).collect();
    let mut next_image = source.images.iter().map(|i| i.id).max().unwrap_or(0) + 1;
    let mut next_ann = source.annotations.iter().map(|a| a.id).max().unwrap_or(0) + 1;
    let mut out = AnnotationSet {
        images: Vec::new(),
        categories: source.categories.clone(),
        annotations: Vec::new(),
        extra: source.extra.clone(),
    };
    for (name, result) in results {
        let (Some(info), Ok(result)) = (by_name.get(name.as_str()), result) else {
            continue;
        };
        for e in &result.emitted {
            let is_base = e.record.transforms.is_empty();
            let image_id = if is_base {
                info.id
            } else {
                next_image += 1;
                next_image - 1
            };
            out.images.push(ImageInfo {
                id: image_id,
                file_name: e.record.output.clone(),
                width: e.width,
                height: e.height,
                extra: info.extra.clone(),
            });
            for a in &e.annotations {
                let mut a = a.clone();
                a.image_id = image_id;
                if !is_base {
                    a.id = next_ann;
                    next_ann += 1;
                }
                out.annotations.push(a);
            }
        }
    }
    out
}

/// Runs the configured stages over every image in `input_dir`.
///
/// Per-image failures are recorded in the manifest and do not stop the run;
/// configuration problems, an empty input directory, and unresolvable
/// annotation references are returned as errors.
pub fn run(cfg: &PipelineConfig) -> Result<Manifest> {
    cfg.validate()?;
    let names = list_images(&cfg.input_dir)?;
    if names.is_empty() {
        return Err(Error::Config(format!("no images found in {}", cfg.input_dir.display())));
    }
    let mut stems = BTreeSet::new();
    for n in &names {
        if !stems.insert(file_stem(n)) {
            return Err(Error::Config(format!("several inputs share the stem `{}`", file_stem(n))));
        }
    }

    let source_set = match &cfg.annotations_in {
        Some(path) => {
            let (set, report) = annotations::load_coco(path)?;
            if report.clamped + report.degenerate_dropped > 0 {
                log::warn!(
                    "{}: clamped {} boxes, dropped {} degenerate boxes",
                    path.display(),
                    report.clamped,
                    report.degenerate_dropped
                );
            }
            for img in &set.images {
                if !cfg.input_dir.join(&img.file_name).is_file() {
                    return Err(Error::Integrity(format!(
                        "annotated image `{}` not found in {}",
                        img.file_name,
                        cfg.input_dir.display()
                    )));
                }
            }
            Some(set)
        }
        None => None,
    };
    let info_by_name: HashMap<&str, &ImageInfo> = source_set
        .iter()
        .flat_map(|s| s.images.iter().map(|i| (i.file_name.as_str(), i)))
        .collect();

    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let results: Vec<(String, Result<ImageResult>)> = pool.install(|| {
        use rayon::prelude::*;
        names
            .par_iter()
            .map(|name| {
                let annotated = source_set.as_ref().and_then(|set| {
                    info_by_name.get(name.as_str()).map(|info| {
                        (*info, set.annotations_for(info.id).cloned().collect::<Vec<_>>())
                    })
                });
                if source_set.is_some() && annotated.is_none() {
                    log::warn!("{name} has no entry in the annotation file");
                }
                (name.clone(), process_image(cfg, name, annotated))
            })
            .collect()
    });

    let mut manifest = Manifest {
        config: cfg.echo(),
        seed: cfg.seed,
        counts: Counts {
            inputs: names.len(),
            ..Counts::default()
        },
        dispersion: DispersionSummary::default(),
        records: Vec::new(),
        failures: Vec::new(),
    };
    let mut before = Vec::new();
    for (name, result) in &results {
        match result {
            Ok(r) => {
                before.push(r.dispersion_before);
                for e in &r.emitted {
                    manifest.counts.dropped_boxes += e.record.dropped_boxes;
                    manifest.records.push(e.record.clone());
                }
            }
            Err(err) => {
                log::error!("{name}: {err}");
                manifest.failures.push(Failure {
                    source: name.clone(),
                    error: err.to_string(),
                });
            }
        }
    }
    manifest.counts.emitted = manifest.records.len();
    manifest.counts.failed = manifest.failures.len();
    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    let after: Vec<f64> = manifest.records.iter().map(|r| r.dispersion_after).collect();
    manifest.dispersion = DispersionSummary {
        mean_before: mean(&before),
        mean_after: mean(&after),
    };

    if let (Some(set), Some(path)) = (&source_set, &cfg.annotations_out) {
        annotations::save_coco(&assemble_annotations(set, &results), path)?;
    }
    write_manifest(&manifest, &cfg.output_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

pub fn write_manifest(manifest: &Manifest, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(BufWriter::new(file), manifest).map_err(|e| Error::io(path, e.into()))
}

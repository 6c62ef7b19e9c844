//! COCO-format ground truth: loading with validation, saving, and replay of
//! geometric transforms onto boxes.
//!
//! Category lists are treated as data; no taxonomy is assumed. Segmentation
//! payloads and unknown fields are carried through untouched on load/save,
//! but any geometric transform drops masks.

use std::collections::{HashMap, HashSet};
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::augment::{TransformKind, TransformRecord};
use crate::bbox::BBox;
use crate::error::{Error, Result};

/// Boxes keeping less than this fraction of their area after a crop are dropped.
pub const CROP_MIN_VISIBLE: f64 = 0.25;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageInfo {
    pub id: u64,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Category {
    pub id: u64,
    pub name: String,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u64,
    pub bbox: BBox,
    #[serde(default)]
    pub area: f64,
    #[serde(default)]
    pub iscrowd: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segmentation: Option<Value>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSet {
    pub images: Vec<ImageInfo>,
    pub categories: Vec<Category>,
    #[serde(default)]
    pub annotations: Vec<Annotation>,
    /// Top-level keys such as `info` and `licenses`.
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    /// Boxes that extended past their image and were clamped.
    pub clamped: usize,
    /// Boxes with no area left inside their image; removed.
    pub degenerate_dropped: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformOutcome {
    pub dropped: usize,
    pub masks_dropped: usize,
}

fn ensure_unique(ids: impl Iterator<Item = u64>, what: &str) -> Result<HashSet<u64>> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(Error::Integrity(format!("duplicate {what} id {id}")));
        }
    }
    Ok(seen)
}

impl AnnotationSet {
    pub fn image(&self, id: u64) -> Option<&ImageInfo> {
        self.images.iter().find(|i| i.id == id)
    }

    pub fn annotations_for(&self, image_id: u64) -> impl Iterator<Item = &Annotation> {
        self.annotations.iter().filter(move |a| a.image_id == image_id)
    }

    /// Checks referential integrity and clamps boxes into their images.
    ///
    /// Dangling or duplicate ids are hard errors. Boxes that still have area
    /// after clamping are kept and counted; the rest are removed and counted.
    pub fn validate(mut self) -> Result<(Self, ValidationReport)> {
        ensure_unique(self.images.iter().map(|i| i.id), "image")?;
        let cats = ensure_unique(self.categories.iter().map(|c| c.id), "category")?;
        ensure_unique(self.annotations.iter().map(|a| a.id), "annotation")?;
        let dims: HashMap<u64, (u32, u32)> = self
            .images
            .iter()
            .map(|i| (i.id, (i.width, i.height)))
            .collect();
        if let Some(img) = self.images.iter().find(|i| i.width == 0 || i.height == 0) {
            return Err(Error::Integrity(format!("image {} has zero dimension", img.id)));
        }

        let mut report = ValidationReport::default();
        let mut kept = Vec::with_capacity(self.annotations.len());
        for mut ann in self.annotations {
            let &(w, h) = dims.get(&ann.image_id).ok_or_else(|| {
                Error::Integrity(format!(
                    "annotation {} references missing image {}",
                    ann.id, ann.image_id
                ))
            })?;
            if !cats.contains(&ann.category_id) {
                return Err(Error::Integrity(format!(
                    "annotation {} references missing category {}",
                    ann.id, ann.category_id
                )));
            }
            let b = ann.bbox;
            if ![b.x, b.y, b.w, b.h].iter().all(|v| v.is_finite()) {
                return Err(Error::Integrity(format!("annotation {} has a non-finite bbox", ann.id)));
            }
            if b.w > 0.0 && b.h > 0.0 && b.within(f64::from(w), f64::from(h)) {
                if ann.area <= 0.0 {
                    ann.area = b.area();
                }
                kept.push(ann);
                continue;
            }
            match b.intersect(&BBox::new(0.0, 0.0, f64::from(w), f64::from(h))) {
                Some(clamped) if b.w > 0.0 && b.h > 0.0 => {
                    report.clamped += 1;
                    ann.bbox = clamped;
                    if ann.area <= 0.0 {
                        ann.area = clamped.area();
                    }
                    kept.push(ann);
                }
                _ => report.degenerate_dropped += 1,
            }
        }
        self.annotations = kept;
        Ok((self, report))
    }
}

pub fn parse_coco(text: &str) -> Result<(AnnotationSet, ValidationReport)> {
    let set: AnnotationSet = serde_json::from_str(text).map_err(|e| Error::MalformedAnnotations {
        path: "<string>".into(),
        message: e.to_string(),
    })?;
    set.validate()
}

pub fn load_coco(path: impl AsRef<Path>) -> Result<(AnnotationSet, ValidationReport)> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let set: AnnotationSet =
        serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::MalformedAnnotations {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    set.validate()
}

pub fn save_coco(set: &AnnotationSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(BufWriter::new(file), set).map_err(|e| Error::io(path, e.into()))
}

/// Maps one image's annotations through a transform.
///
/// Horizontal flips keep every box. Broken mirror keeps a box only when it
/// lies entirely on one side of the split (and flips it vertically). Crop
/// clips boxes to the rectangle and drops those keeping less than
/// [`CROP_MIN_VISIBLE`] of their area. Returns the survivors and the drop count.
pub fn transform_annotations(anns: &[Annotation], rec: &TransformRecord) -> (Vec<Annotation>, usize) {
    let width = f64::from(rec.image_width);
    let height = f64::from(rec.image_height);
    let mut out = Vec::with_capacity(anns.len());
    let mut dropped = 0;
    for ann in anns {
        let b = ann.bbox;
        let mapped = match rec.kind {
            TransformKind::None => Some((b, ann.area)),
            TransformKind::Hflip => Some((BBox::new(width - b.x - b.w, b.y, b.w, b.h), ann.area)),
            TransformKind::BrokenMirror { split_col } => {
                let split = f64::from(split_col);
                (b.right() <= split || b.x >= split)
                    .then(|| (BBox::new(b.x, height - b.y - b.h, b.w, b.h), ann.area))
            }
            TransformKind::Crop { x, y, w, h } => {
                let rect = BBox::new(f64::from(x), f64::from(y), f64::from(w), f64::from(h));
                b.intersect(&rect).and_then(|clip| {
                    let kept = clip.area() / b.area();
                    (kept >= CROP_MIN_VISIBLE).then(|| {
                        let moved = BBox::new(clip.x - rect.x, clip.y - rect.y, clip.w, clip.h);
                        (moved, ann.area * kept)
                    })
                })
            }
        };
        match mapped {
            Some((bbox, area)) => {
                let mut a = ann.clone();
                a.bbox = bbox;
                a.area = area;
                if rec.kind != TransformKind::None {
                    a.segmentation = None;
                }
                out.push(a);
            }
            None => dropped += 1,
        }
    }
    (out, dropped)
}

/// Replays a transform onto the boxes of `image_id`, returning a new set.
pub fn apply_transform(
    set: &AnnotationSet,
    image_id: u64,
    rec: &TransformRecord,
) -> Result<(AnnotationSet, TransformOutcome)> {
    let info = set
        .image(image_id)
        .ok_or_else(|| Error::Integrity(format!("unknown image id {image_id}")))?;
    if (info.width, info.height) != (rec.image_width, rec.image_height) {
        return Err(Error::DimensionMismatch {
            image_id,
            record_width: rec.image_width,
            record_height: rec.image_height,
            width: info.width,
            height: info.height,
        });
    }
    rec.validate()?;

    let mut annotations = Vec::with_capacity(set.annotations.len());
    let mut outcome = TransformOutcome::default();
    for ann in &set.annotations {
        if ann.image_id != image_id {
            annotations.push(ann.clone());
            continue;
        }
        if rec.kind != TransformKind::None && ann.segmentation.is_some() {
            outcome.masks_dropped += 1;
        }
        let (mapped, dropped) = transform_annotations(std::slice::from_ref(ann), rec);
        annotations.extend(mapped);
        outcome.dropped += dropped;
    }
    if outcome.masks_dropped > 0 {
        log::warn!(
            "dropped {} segmentation masks on image {image_id} ({})",
            outcome.masks_dropped,
            rec.name()
        );
    }

    let mut out = AnnotationSet {
        images: set.images.clone(),
        categories: set.categories.clone(),
        annotations,
        extra: set.extra.clone(),
    };
    let (w, h) = rec.output_size();
    if let Some(img) = out.images.iter_mut().find(|i| i.id == image_id) {
        img.width = w;
        img.height = h;
    }
    Ok((out, outcome))
}

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Map;
use uwstab_core::annotations::{Annotation, AnnotationSet, Category, ImageInfo};
use uwstab_core::bbox::BBox;
use uwstab_core::detmetrics::{Detection, DetectionSet};
use uwstab_core::Image;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_image(rng: &mut impl Rng, w: u32, h: u32) -> Image {
    Image::from_fn(w, h, |_, _| rng.random()).unwrap()
}

/// Smooth gradient scene with a blue cast: blue mean well above red.
pub fn blue_cast_image(rng: &mut impl Rng, w: u32, h: u32) -> Image {
    let red_gain = rng.random_range(0.15..0.4);
    let green_gain = rng.random_range(0.4..0.7);
    let blue_gain = rng.random_range(0.75..1.0);
    let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    Image::from_fn(w, h, |x, y| {
        let u = x as f64 / w.max(2) as f64;
        let v = y as f64 / h.max(2) as f64;
        let base = 0.35 + 0.3 * (3.0 * u + phase).sin() * (2.0 * v).cos() + 0.2 * v;
        let noise = rng.random_range(-0.03..0.03);
        let px = |g: f64| (((base + noise) * g).clamp(0.0, 1.0) * 255.0).round() as u8;
        [px(red_gain), px(green_gain), px(blue_gain)]
    })
    .unwrap()
}

/// Straightforward sRGB -> Lab written from the primaries, used as a reference.
pub fn reference_lab(rgb: [u8; 3]) -> [f64; 3] {
    let xyz_of = |x: f64, y: f64| [x / y, 1.0, (1.0 - x - y) / y];
    let prim = [xyz_of(0.64, 0.33), xyz_of(0.30, 0.60), xyz_of(0.15, 0.06)];
    let white = xyz_of(0.3127, 0.3290);
    // solve P s = white with Cramer's rule, P columns = primaries
    let det3 = |m: [[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let p = [
        [prim[0][0], prim[1][0], prim[2][0]],
        [prim[0][1], prim[1][1], prim[2][1]],
        [prim[0][2], prim[1][2], prim[2][2]],
    ];
    let d = det3(p);
    let s: Vec<f64> = (0..3)
        .map(|col| {
            let mut m = p;
            for row in 0..3 {
                m[row][col] = white[row];
            }
            det3(m) / d
        })
        .collect();
    let lin = rgb.map(|c| {
        let c = c as f64 / 255.0;
        if c <= 0.04045 { c / 12.92 } else { ((c + 0.055) / 1.055).powf(2.4) }
    });
    let mut xyz = [0.0; 3];
    let mut wp = [0.0; 3];
    for row in 0..3 {
        for col in 0..3 {
            xyz[row] += p[row][col] * s[col] * lin[col];
            wp[row] += p[row][col] * s[col];
        }
    }
    let f = |t: f64| if t > 0.008856 { t.cbrt() } else { (903.3 * t + 16.0) / 116.0 };
    let (fx, fy, fz) = (f(xyz[0] / wp[0]), f(xyz[1] / wp[1]), f(xyz[2] / wp[2]));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

// ---------------------------------------------------------------------------
// Exhaustive evaluation oracle
// ---------------------------------------------------------------------------

pub struct TinyCase {
    pub gt: AnnotationSet,
    pub preds: DetectionSet,
}

/// Up to 3 images, 5 ground-truth boxes, 5 predictions and 2 classes, on an
/// 8-pixel grid so that IoU ties and all three area buckets occur.
pub fn tiny_case(rng: &mut impl Rng) -> TinyCase {
    let n_images = rng.random_range(1..=3u64);
    let n_classes = rng.random_range(1..=2u64);
    let random_box = |rng: &mut dyn rand::RngCore| {
        let unit = 8.0;
        let x = rng.random_range(0..12) as f64 * unit;
        let y = rng.random_range(0..12) as f64 * unit;
        let w = rng.random_range(1..=14) as f64 * unit;
        let h = rng.random_range(1..=14) as f64 * unit;
        BBox::new(x, y, w, h)
    };
    let images = (1..=n_images)
        .map(|id| ImageInfo { id, file_name: format!("{id}.png"), width: 208, height: 208, extra: Map::new() })
        .collect();
    let categories = (1..=n_classes)
        .map(|id| Category { id, name: format!("c{id}"), extra: Map::new() })
        .collect();
    let n_gt = rng.random_range(0..=5u64);
    let annotations: Vec<Annotation> = (1..=n_gt)
        .map(|id| {
            let bbox = random_box(rng);
            Annotation {
                id,
                image_id: rng.random_range(1..=n_images),
                category_id: rng.random_range(1..=n_classes),
                bbox,
                area: bbox.area(),
                iscrowd: u8::from(rng.random_bool(0.1)),
                segmentation: None,
                extra: Map::new(),
            }
        })
        .collect();
    let n_pred = rng.random_range(0..=5usize);
    let predictions = (0..n_pred)
        .map(|_| {
            // half of the predictions sit near a ground-truth box
            let near: Option<&Annotation> = if annotations.is_empty() || rng.random_bool(0.5) {
                None
            } else {
                Some(&annotations[rng.random_range(0..annotations.len())])
            };
            let (image_id, category_id, bbox) = match near {
                Some(a) => {
                    let mut jitter = |v: f64| (v + rng.random_range(-1..=1) as f64 * 8.0).max(8.0);
                    let b = a.bbox;
                    let bbox = BBox::new(jitter(b.x + 8.0) - 8.0, jitter(b.y + 8.0) - 8.0, jitter(b.w), jitter(b.h));
                    (a.image_id, a.category_id, bbox)
                }
                None => (rng.random_range(1..=n_images), rng.random_range(1..=n_classes), random_box(rng)),
            };
            Detection {
                image_id,
                category_id,
                bbox,
                score: rng.random_range(1..=4) as f64 / 4.0,
            }
        })
        .collect();
    TinyCase {
        gt: AnnotationSet { images, categories, annotations, extra: Map::new() },
        preds: DetectionSet { predictions },
    }
}

fn overlap(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x + a.w).min(b.x + b.w) - a.x.max(b.x);
    let ih = (a.y + a.h).min(b.y + b.h) - a.y.max(b.y);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    inter / (a.w * a.h + b.w * b.h - inter)
}

#[derive(Clone, Copy, PartialEq)]
pub enum Range {
    All,
    Small,
    Medium,
    Large,
}

fn in_range(r: Range, area: f64) -> bool {
    match r {
        Range::All => true,
        Range::Small => area < 1024.0,
        Range::Medium => (1024.0..9216.0).contains(&area),
        Range::Large => area >= 9216.0,
    }
}

/// Whether `assign` (pred -> gt, in rank order) is the greedy assignment:
/// each prediction takes the best still-free candidate, where any in-range
/// candidate beats every out-of-range one, higher IoU beats lower, and the
/// earlier ground truth wins ties; no candidate means no match.
fn is_greedy(assign: &[Option<usize>], ious: &[Vec<f64>], ignore: &[bool], thr: f64) -> bool {
    let mut used = vec![false; ignore.len()];
    for (p, choice) in assign.iter().enumerate() {
        let candidates: Vec<usize> = (0..ignore.len()).filter(|&g| !used[g] && ious[p][g] >= thr).collect();
        let best = candidates.iter().copied().min_by(|&a, &b| {
            ignore[a]
                .cmp(&ignore[b])
                .then(ious[p][b].total_cmp(&ious[p][a]))
                .then(a.cmp(&b))
        });
        if *choice != best {
            return false;
        }
        if let Some(g) = choice {
            used[*g] = true;
        }
    }
    true
}

/// Every injective partial map from predictions to ground truth.
fn all_assignments(n_pred: usize, n_gt: usize) -> Vec<Vec<Option<usize>>> {
    let mut out = vec![Vec::new()];
    for _ in 0..n_pred {
        let mut next = Vec::new();
        for partial in &out {
            next.push([partial.clone(), vec![None]].concat());
            for g in 0..n_gt {
                if !partial.contains(&Some(g)) {
                    next.push([partial.clone(), vec![Some(g)]].concat());
                }
            }
        }
        out = next;
    }
    out
}

/// AP from the PR curve: for each recall level i/100, the best precision over
/// all cut-offs whose recall reaches it.
pub fn pr_curve_ap(tp: &[bool], num_gt: usize) -> f64 {
    let mut total = 0.0;
    for i in 0..=100usize {
        let mut best: f64 = 0.0;
        for cut in 1..=tp.len() {
            let hits = tp[..cut].iter().filter(|&&t| t).count();
            if hits * 100 >= i * num_gt {
                best = best.max(hits as f64 / cut as f64);
            }
        }
        total += best;
    }
    total / 101.0
}

fn oracle_class_ap(case: &TinyCase, cat: u64, range: Range, thr: f64) -> Option<f64> {
    let mut image_ids: Vec<u64> = case.gt.images.iter().map(|i| i.id).collect();
    image_ids.sort();
    let mut scored = Vec::new();
    let mut num_gt = 0;
    for img in image_ids {
        let gts: Vec<&Annotation> = case
            .gt
            .annotations
            .iter()
            .filter(|a| a.image_id == img && a.category_id == cat && a.iscrowd == 0)
            .collect();
        let ignore: Vec<bool> = gts.iter().map(|a| !in_range(range, a.area)).collect();
        num_gt += ignore.iter().filter(|&&i| !i).count();
        let mut preds: Vec<&Detection> = case
            .preds
            .predictions
            .iter()
            .filter(|d| d.image_id == img && d.category_id == cat)
            .collect();
        preds.sort_by(|a, b| b.score.total_cmp(&a.score));
        let ious: Vec<Vec<f64>> = preds.iter().map(|p| gts.iter().map(|g| overlap(&p.bbox, &g.bbox)).collect()).collect();
        let greedy: Vec<Vec<Option<usize>>> = all_assignments(preds.len(), gts.len())
            .into_iter()
            .filter(|a| is_greedy(a, &ious, &ignore, thr))
            .collect();
        assert_eq!(greedy.len(), 1, "greedy assignment must be unique");
        for (p, m) in greedy[0].iter().enumerate() {
            let counted = match m {
                Some(g) => (!ignore[*g]).then_some(true),
                None => in_range(range, preds[p].bbox.area()).then_some(false),
            };
            if let Some(tp) = counted {
                scored.push((preds[p].score, tp));
            }
        }
    }
    if num_gt == 0 {
        return None;
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let tp: Vec<bool> = scored.iter().map(|s| s.1).collect();
    Some(pr_curve_ap(&tp, num_gt))
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    if v.is_empty() {
        None
    } else {
        Some(v.iter().fold(0.0, |s, x| s + x) / v.len() as f64)
    }
}

/// `[ap, ap50, ap75, ap_small, ap_medium, ap_large]`.
pub fn oracle_summary(case: &TinyCase) -> [Option<f64>; 6] {
    let thresholds: Vec<f64> = (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect();
    let mut cats: Vec<u64> = case.gt.categories.iter().map(|c| c.id).collect();
    cats.sort();
    let over_thr = |cat: u64, r: Range| mean(thresholds.iter().map(|&t| oracle_class_ap(case, cat, r, t)));
    let range_mean = |r: Range| mean(cats.iter().map(|&c| over_thr(c, r)));
    [
        range_mean(Range::All),
        mean(cats.iter().map(|&c| oracle_class_ap(case, c, Range::All, 0.5))),
        mean(cats.iter().map(|&c| oracle_class_ap(case, c, Range::All, 0.75))),
        range_mean(Range::Small),
        range_mean(Range::Medium),
        range_mean(Range::Large),
    ]
}

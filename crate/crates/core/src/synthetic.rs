//! Seeded synthetic fixtures: segmentation layouts, textured linear images
//! and targets whose tone mapping depends on the segment label, optionally
//! on the labels around it.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::fc::gamma_lift;
use crate::raster::{DisplayImage, LinearImage, RgbImage, SegmentationMap, NUM_CLASSES};
use crate::rng::{stream_rng, Stream};

#[derive(Clone, Debug)]
pub struct SyntheticPair {
    pub id: String,
    pub linear: LinearImage,
    pub segmentation: SegmentationMap,
    pub reference: DisplayImage,
}

/// Vertical stripes of near-equal width, left to right.
pub fn stripes(width: usize, height: usize, labels: &[u8]) -> Result<SegmentationMap> {
    if labels.is_empty() || labels.len() > width {
        return Err(Error::Usage(format!("cannot cut {width} columns into {} stripes", labels.len())));
    }
    SegmentationMap::from_fn(width, height, |x, _| labels[x * labels.len() / width])
}

/// Nearest-site (Voronoi) map over `sites` random points, each carrying a
/// random label below `labels`.
pub fn voronoi_segmentation<R: Rng + ?Sized>(
    width: usize,
    height: usize,
    sites: usize,
    labels: u8,
    rng: &mut R,
) -> SegmentationMap {
    let labels = labels.clamp(1, NUM_CLASSES as u8);
    let points: Vec<(f64, f64, u8)> = (0..sites.max(1))
        .map(|_| {
            (
                rng.random_range(0.0..width as f64),
                rng.random_range(0.0..height as f64),
                rng.random_range(0..labels),
            )
        })
        .collect();
    SegmentationMap::from_fn(width, height, |x, y| {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        points
            .iter()
            .map(|&(sx, sy, l)| ((sx - px).powi(2) + (sy - py).powi(2), l))
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map_or(0, |(_, l)| l)
    })
    .expect("labels are below the class count")
}

/// Linear image with a random base colour per label, a vertical exposure
/// gradient and mild per-pixel noise. Values stay inside `(0, 1]`.
pub fn textured_image<R: Rng + ?Sized>(seg: &SegmentationMap, rng: &mut R) -> LinearImage {
    let mut bases = BTreeMap::new();
    for label in seg.distinct_labels() {
        let base: [f64; 3] = [rng.random_range(0.1..1.0), rng.random_range(0.1..1.0), rng.random_range(0.1..1.0)];
        bases.insert(label, base);
    }
    let (w, h) = seg.dims();
    let mut pixels = Vec::with_capacity(w * h);
    for y in 0..h {
        let exposure = 0.15 + 0.85 * (y as f64 + 0.5) / h as f64;
        for x in 0..w {
            let base = bases[&seg.get(x, y)];
            pixels.push(base.map(|b| (b * exposure * rng.random_range(0.9..1.0)).clamp(1e-4, 1.0)));
        }
    }
    LinearImage(RgbImage::new(w, h, pixels).expect("w·h pixels"))
}

/// Applies `y = x_γ^e` per channel, `x_γ = x^(1/2.2)`, with the exponent
/// chosen per segment label.
pub fn apply_label_curves(
    img: &LinearImage,
    seg: &SegmentationMap,
    exponent: impl Fn(u8) -> f64,
) -> Result<DisplayImage> {
    if img.dims() != seg.dims() {
        return Err(Error::dim(
            "apply_label_curves",
            (img.height(), img.width()),
            (seg.height(), seg.width()),
        ));
    }
    let pixels = img
        .pixels()
        .iter()
        .zip(seg.labels())
        .map(|(rgb, &l)| {
            let e = exponent(l);
            rgb.map(|v| gamma_lift(v).powf(e))
        })
        .collect();
    Ok(DisplayImage(RgbImage::new(img.width(), img.height(), pixels)?))
}

/// Single 100×100 pair: four stripes whose targets follow different
/// nonlinear curves.
pub fn overfit_pair(seed: u64) -> SyntheticPair {
    let mut rng = stream_rng(seed, Stream::Synthetic);
    let seg = stripes(100, 100, &[0, 2, 5, 7]).expect("valid stripes");
    let linear = textured_image(&seg, &mut rng);
    let reference = apply_label_curves(&linear, &seg, |l| match l {
        0 => 0.6,
        2 => 1.4,
        5 => 2.0,
        _ => 0.8,
    })
    .expect("matching dims");
    SyntheticPair {
        id: format!("overfit-{seed}"),
        linear,
        segmentation: seg,
        reference,
    }
}

/// Labels whose presence next to a segment changes its curve.
pub const TRIGGER_LABELS: [u8; 4] = [0, 1, 2, 3];

/// Curve exponent for a segment with label `label` and neighbouring labels
/// `neighbours`. The same label gets a brightening curve next to a trigger
/// label and a darkening one otherwise.
pub fn neighbourhood_exponent(label: u8, neighbours: &BTreeSet<u8>) -> f64 {
    let own = 0.5 + 0.3 * f64::from(label % 5);
    if neighbours.iter().any(|n| TRIGGER_LABELS.contains(n)) {
        own * 0.5
    } else {
        own * 1.6
    }
}

/// Neighbouring label sets of a stripe layout.
fn stripe_neighbours(labels: &[u8]) -> BTreeMap<u8, BTreeSet<u8>> {
    let mut out: BTreeMap<u8, BTreeSet<u8>> = labels.iter().map(|&l| (l, BTreeSet::new())).collect();
    for w in labels.windows(2) {
        out.entry(w[0]).or_default().insert(w[1]);
        out.entry(w[1]).or_default().insert(w[0]);
    }
    out
}

/// `count` pairs of `size×size` images with 3–5 vertical stripes of distinct
/// labels. Each target segment follows [`neighbourhood_exponent`], so the
/// same label and the same colours map differently depending on what
/// surrounds them.
pub fn neighbourhood_dataset(count: usize, size: usize, seed: u64) -> Vec<SyntheticPair> {
    let mut rng = stream_rng(seed, Stream::Synthetic);
    (0..count)
        .map(|i| {
            let n = rng.random_range(3..=5usize);
            let mut pool: Vec<u8> = (0..NUM_CLASSES as u8).collect();
            pool.shuffle(&mut rng);
            let labels = &pool[..n];
            let seg = stripes(size, size, labels).expect("size exceeds stripe count");
            let linear = textured_image(&seg, &mut rng);
            let neighbours = stripe_neighbours(labels);
            let reference = apply_label_curves(&linear, &seg, |l| neighbourhood_exponent(l, &neighbours[&l]))
                .expect("matching dims");
            SyntheticPair {
                id: format!("synth-{i:03}"),
                linear,
                segmentation: seg,
                reference,
            }
        })
        .collect()
}

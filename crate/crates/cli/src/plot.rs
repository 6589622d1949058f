//! Minimal raster plots: line charts and histograms drawn straight into an
//! RGB buffer, with axis extremes printed in a 3×5 pixel font.

use std::path::Path;

use anyhow::{Context, Result};
use graphtone::metrics::HistogramBin;
use image::{Rgb, RgbImage};

pub const WIDTH: u32 = 640;
pub const HEIGHT: u32 = 400;
const MARGIN: u32 = 40;

pub const BLUE: Rgb<u8> = Rgb([31, 119, 180]);
pub const ORANGE: Rgb<u8> = Rgb([255, 127, 14]);
pub const GREEN: Rgb<u8> = Rgb([44, 160, 44]);
pub const RED: Rgb<u8> = Rgb([214, 39, 40]);
const BLACK: Rgb<u8> = Rgb([0, 0, 0]);
const GRID: Rgb<u8> = Rgb([225, 225, 225]);
const BAND: Rgb<u8> = Rgb([255, 220, 220]);

pub const PALETTE: [Rgb<u8>; 6] = [BLUE, ORANGE, GREEN, RED, Rgb([148, 103, 189]), Rgb([140, 86, 75])];

pub struct Series<'a> {
    pub points: &'a [(f64, f64)],
    pub color: Rgb<u8>,
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        let t = if self.x1 > self.x0 { (x - self.x0) / (self.x1 - self.x0) } else { 0.5 };
        MARGIN as f64 + t * (WIDTH - 2 * MARGIN) as f64
    }

    fn py(&self, y: f64) -> f64 {
        let t = if self.y1 > self.y0 { (y - self.y0) / (self.y1 - self.y0) } else { 0.5 };
        (HEIGHT - MARGIN) as f64 - t * (HEIGHT - 2 * MARGIN) as f64
    }
}

fn canvas() -> RgbImage {
    RgbImage::from_pixel(WIDTH, HEIGHT, Rgb([255, 255, 255]))
}

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

fn line(img: &mut RgbImage, (x0, y0): (f64, f64), (x1, y1): (f64, f64), c: Rgb<u8>) {
    let steps = (x1 - x0).abs().max((y1 - y0).abs()).ceil().max(1.0) as usize;
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        put(img, (x0 + t * (x1 - x0)).round() as i64, (y0 + t * (y1 - y0)).round() as i64, c);
    }
}

fn fill(img: &mut RgbImage, x0: f64, y0: f64, x1: f64, y1: f64, c: Rgb<u8>) {
    let (xa, xb) = (x0.min(x1).round() as i64, x0.max(x1).round() as i64);
    let (ya, yb) = (y0.min(y1).round() as i64, y0.max(y1).round() as i64);
    for y in ya..=yb {
        for x in xa..=xb {
            put(img, x, y, c);
        }
    }
}

fn axes(img: &mut RgbImage, f: &Frame, ylabel: impl Fn(f64) -> String) {
    for k in 0..=4 {
        let y = f.py(f.y0 + (f.y1 - f.y0) * k as f64 / 4.0);
        line(img, (MARGIN as f64, y), ((WIDTH - MARGIN) as f64, y), GRID);
    }
    let (l, r, b, t) = (
        MARGIN as f64,
        (WIDTH - MARGIN) as f64,
        (HEIGHT - MARGIN) as f64,
        MARGIN as f64,
    );
    line(img, (l, b), (r, b), BLACK);
    line(img, (l, b), (l, t), BLACK);
    text(img, 2, MARGIN as i64 - 3, &ylabel(f.y1));
    text(img, 2, (HEIGHT - MARGIN) as i64 - 3, &ylabel(f.y0));
    text(img, MARGIN as i64, (HEIGHT - MARGIN) as i64 + 6, &short(f.x0));
    let right = short(f.x1);
    text(img, (WIDTH - MARGIN) as i64 - 4 * right.len() as i64, (HEIGHT - MARGIN) as i64 + 6, &right);
}

fn short(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-2 {
        format!("{v:.1e}")
    } else if v.fract() == 0.0 {
        format!("{v}")
    } else {
        format!("{v:.3}")
    }
}

fn extent(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    values
        .filter(|v| v.is_finite())
        .fold(None, |acc, v| Some(acc.map_or((v, v), |(a, b): (f64, f64)| (a.min(v), b.max(v)))))
}

/// Line chart of several series. With `log_y` the y axis shows `log10`
/// of positive values; the axis labels stay in linear units.
pub fn line_chart(series: &[Series], log_y: bool) -> RgbImage {
    let ty = |y: f64| if log_y { if y > 0.0 { y.log10() } else { f64::NAN } } else { y };
    let mut img = canvas();
    let all = || series.iter().flat_map(|s| s.points.iter());
    let (Some((x0, x1)), Some((y0, y1))) = (extent(all().map(|p| p.0)), extent(all().map(|p| ty(p.1)))) else {
        return img;
    };
    let f = Frame { x0, x1, y0, y1 };
    axes(&mut img, &f, |v| short(if log_y { 10f64.powf(v) } else { v }));
    for s in series {
        let mut prev: Option<(f64, f64)> = None;
        for &(x, y) in s.points {
            let y = ty(y);
            if !y.is_finite() {
                prev = None;
                continue;
            }
            let p = (f.px(x), f.py(y));
            match prev {
                Some(q) => line(&mut img, q, p, s.color),
                None => put(&mut img, p.0.round() as i64, p.1.round() as i64, s.color),
            }
            prev = Some(p);
        }
    }
    img
}

/// Histogram with the median drawn in red over a shaded confidence band.
pub fn histogram_chart(bins: &[HistogramBin], median: f64, lo: f64, hi: f64) -> RgbImage {
    let mut img = canvas();
    let (Some(first), Some(last)) = (bins.first(), bins.last()) else {
        return img;
    };
    let max = bins.iter().map(|b| b.count).max().unwrap_or(0).max(1) as f64;
    let f = Frame {
        x0: first.lo,
        x1: last.hi,
        y0: 0.0,
        y1: max,
    };
    if lo.is_finite() && hi.is_finite() {
        fill(&mut img, f.px(lo), f.py(0.0), f.px(hi), f.py(max), BAND);
    }
    axes(&mut img, &f, short);
    for b in bins {
        if b.count > 0 {
            fill(&mut img, f.px(b.lo) + 1.0, f.py(b.count as f64), f.px(b.hi) - 1.0, f.py(0.0), BLUE);
        }
    }
    if median.is_finite() {
        let x = f.px(median);
        line(&mut img, (x, f.py(0.0)), (x, f.py(max)), RED);
        line(&mut img, (x + 1.0, f.py(0.0)), (x + 1.0, f.py(max)), RED);
    }
    img
}

pub fn save(img: &RgbImage, path: &Path) -> Result<()> {
    img.save(path).with_context(|| format!("writing {}", path.display()))
}

/// 3×5 glyphs, one row per `u8` (low 3 bits, MSB left).
fn glyph(c: char) -> Option<[u8; 5]> {
    Some(match c {
        '0' => [7, 5, 5, 5, 7],
        '1' => [2, 6, 2, 2, 7],
        '2' => [7, 1, 7, 4, 7],
        '3' => [7, 1, 7, 1, 7],
        '4' => [5, 5, 7, 1, 1],
        '5' => [7, 4, 7, 1, 7],
        '6' => [7, 4, 7, 5, 7],
        '7' => [7, 1, 1, 1, 1],
        '8' => [7, 5, 7, 5, 7],
        '9' => [7, 5, 7, 1, 7],
        '.' => [0, 0, 0, 0, 2],
        '-' => [0, 0, 7, 0, 0],
        '+' => [0, 2, 7, 2, 0],
        'e' => [0, 7, 7, 4, 7],
        'i' => [2, 0, 2, 2, 2],
        'n' => [0, 6, 5, 5, 5],
        'f' => [3, 4, 6, 4, 4],
        _ => return None,
    })
}

fn text(img: &mut RgbImage, x: i64, y: i64, s: &str) {
    for (k, c) in s.chars().enumerate() {
        let Some(rows) = glyph(c) else { continue };
        for (dy, row) in rows.iter().enumerate() {
            for dx in 0..3 {
                if row & (4 >> dx) != 0 {
                    put(img, x + 4 * k as i64 + dx, y + dy as i64, BLACK);
                }
            }
        }
    }
}

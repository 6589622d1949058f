use graphtone::metrics::{hyab, median_ci, ms_ssim, mse, psnr, rgb_to_lab, Transfer};
use graphtone::raster::luma;
use graphtone::rng::{stream_rng, Stream};
use graphtone::RgbImage;
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Straightforward MS-SSIM: explicit 2-D windows, no separable filtering.
fn reference_ms_ssim(a: &RgbImage, b: &RgbImage) -> f64 {
    const WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut window = [[0.0; 11]; 11];
    let mut total = 0.0;
    for (i, row) in window.iter_mut().enumerate() {
        for (j, w) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *w = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
            total += *w;
        }
    }
    let mut pa: Vec<Vec<f64>> = (0..a.height()).map(|y| (0..a.width()).map(|x| luma(a.get(x, y))).collect()).collect();
    let mut pb: Vec<Vec<f64>> = (0..b.height()).map(|y| (0..b.width()).map(|x| luma(b.get(x, y))).collect()).collect();
    let mut score = 1.0;
    for (s, weight) in WEIGHTS.iter().enumerate() {
        let (h, w) = (pa.len(), pa[0].len());
        let (mut ssim_sum, mut cs_sum, mut n) = (0.0, 0.0, 0.0);
        for y in 0..=h - 11 {
            for x in 0..=w - 11 {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let g = window[i][j] / total;
                        let (u, v) = (pa[y + i][x + j], pb[y + i][x + j]);
                        ma += g * u;
                        mb += g * v;
                        saa += g * u * u;
                        sbb += g * v * v;
                        sab += g * u * v;
                    }
                }
                let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
                let cs = (2.0 * cov + c2) / (va + vb + c2);
                ssim_sum += cs * (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
                cs_sum += cs;
                n += 1.0;
            }
        }
        let term = if s == 4 { ssim_sum / n } else { cs_sum / n };
        score *= term.max(0.0).powf(*weight);
        let half = |p: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
            (0..p.len() / 2)
                .map(|y| {
                    (0..p[0].len() / 2)
                        .map(|x| (p[2 * y][2 * x] + p[2 * y][2 * x + 1] + p[2 * y + 1][2 * x] + p[2 * y + 1][2 * x + 1]) / 4.0)
                        .collect()
                })
                .collect()
        };
        pa = half(&pa);
        pb = half(&pb);
    }
    score
}

#[test]
fn ms_ssim_matches_reference_on_256_fixture() {
    let mut rng = stream_rng(5, Stream::Synthetic);
    let a = RgbImage::from_fn(256, 256, |x, y| {
        let base = 0.5 + 0.3 * ((x as f64 / 17.0).sin() * (y as f64 / 23.0).cos());
        [base, base * 0.8 + 0.1, 1.0 - base]
    });
    let b = RgbImage::from_fn(256, 256, |x, y| a.get(x, y).map(|v| (v + rng.random_range(-0.08..0.08)).clamp(0.0, 1.0)));
    let got = ms_ssim(&a, &b).unwrap();
    let want = reference_ms_ssim(&a, &b);
    assert!((got - want).abs() < 1e-4, "{got} vs {want}");
    assert!(got < 1.0 && got > 0.0);
}

/// Display value of a grey with lightness `l`, by inverting the CIELAB and
/// sRGB formulas.
fn grey_for_lightness(l: f64) -> f64 {
    let f = (l + 16.0) / 116.0;
    let y = if f > 6.0 / 29.0 { f.powi(3) } else { 3.0 * (6.0f64 / 29.0).powi(2) * (f - 4.0 / 29.0) };
    if y <= 0.0031308 {
        12.92 * y
    } else {
        1.055 * y.powf(1.0 / 2.4) - 0.055
    }
}

#[test]
fn grey_has_neutral_chroma() {
    for v in [0.05, 0.2, 0.5, 0.9] {
        let lab = rgb_to_lab([v; 3], Transfer::Srgb);
        assert!(lab[1].abs() < 1e-3 && lab[2].abs() < 1e-3, "{lab:?}");
    }
}

#[test]
fn hyab_of_a_pure_lightness_step() {
    let a = RgbImage::filled(16, 16, [grey_for_lightness(50.0); 3]);
    let b = RgbImage::filled(16, 16, [grey_for_lightness(55.0); 3]);
    let d = hyab(&a, &b, Transfer::Srgb).unwrap();
    assert!((d - 5.0).abs() < 0.01, "{d}");
    assert_eq!(d, hyab(&b, &a, Transfer::Srgb).unwrap());
}

#[test]
fn mse_matches_pixel_loop() {
    let mut rng = stream_rng(9, Stream::Synthetic);
    let a = RgbImage::from_fn(13, 7, |_, _| [rng.random(), rng.random(), rng.random()]);
    let b = RgbImage::from_fn(13, 7, |_, _| [rng.random(), rng.random(), rng.random()]);
    let mut total = 0.0;
    for y in 0..7 {
        for x in 0..13 {
            for c in 0..3 {
                total += (a.get(x, y)[c] - b.get(x, y)[c]).powi(2);
            }
        }
    }
    let want = total / (13.0 * 7.0 * 3.0);
    assert!((mse(&a, &b).unwrap() - want).abs() < 1e-15);
    assert!((psnr(&a, &b, 1.0).unwrap() - 10.0 * (1.0 / want).log10()).abs() < 1e-9);
}

#[test]
fn bootstrap_interval_on_normal_scores() {
    let mut rng = stream_rng(12, Stream::Synthetic);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let scores: Vec<f64> = (0..99).map(|_| normal.sample(&mut rng)).collect();
    let mut sorted = scores.clone();
    sorted.sort_by(f64::total_cmp);
    let ci = median_ci(&scores, 0.95, 10_000, 3).unwrap();
    assert_eq!(ci.median, sorted[49]);
    assert!(ci.median.abs() <= 0.3, "{}", ci.median);
    assert!(ci.lo <= ci.median && ci.median <= ci.hi, "{ci:?}");
    assert!(ci.hi - ci.lo > 0.0);
}

#[test]
fn metrics_degrade_monotonically_with_noise() {
    let clean = RgbImage::from_fn(96, 96, |x, y| {
        let t = (x + y) as f64 / 190.0;
        [0.2 + 0.6 * t, 0.5, 0.8 - 0.5 * t]
    });
    let mut last: Option<(f64, f64, f64)> = None;
    for amp in [0.02, 0.06, 0.15] {
        let mut rng = stream_rng(1, Stream::Synthetic);
        let noisy = RgbImage::from_fn(96, 96, |x, y| clean.get(x, y).map(|v| v + rng.random_range(-amp..amp)));
        let scores = (
            psnr(&noisy, &clean, 1.0).unwrap(),
            ms_ssim(&noisy, &clean).unwrap(),
            hyab(&noisy, &clean, Transfer::Srgb).unwrap(),
        );
        if let Some(prev) = last {
            assert!(scores.0 < prev.0 && scores.1 < prev.1 && scores.2 > prev.2, "{prev:?} -> {scores:?}");
        }
        last = Some(scores);
    }
}

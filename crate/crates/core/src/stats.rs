//! Order statistics shared by the feature extractor, filters and reports.

/// Percentile `q ∈ [0, 100]` by linear interpolation between order
/// statistics (rank `q/100 · (n−1)`). Returns `None` for empty input.
pub fn percentile(values: &[f64], q: f64) -> Option<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    percentile_sorted(&sorted, q)
}

pub fn percentile_sorted(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = (q / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    if frac == 0.0 || sorted[lo] == sorted[hi] {
        return Some(sorted[lo]);
    }
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * frac)
}

pub fn median(values: &[f64]) -> Option<f64> {
    percentile(values, 50.0)
}

pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Population variance (divide by `n`). Exactly zero for constant input,
/// whatever its length.
pub fn variance(values: &[f64]) -> Option<f64> {
    let m = mean(values)?;
    if values.iter().all(|&v| v == values[0]) {
        return Some(0.0);
    }
    Some(values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64)
}

pub fn std_dev(values: &[f64]) -> Option<f64> {
    variance(values).map(f64::sqrt)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn odd_and_even_medians() {
        assert_eq!(median(&[0.5, 0.1, 0.3]), Some(0.3));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn percentile_interpolates() {
        let v: Vec<f64> = (0..=10).map(f64::from).collect();
        assert_eq!(percentile(&v, 25.0), Some(2.5));
        assert_eq!(percentile(&v, 100.0), Some(10.0));
    }

    #[test]
    fn population_std() {
        assert_eq!(std_dev(&[0.0, 1.0]), Some(0.5));
        assert_eq!(std_dev(&[3.0]), Some(0.0));
    }
}

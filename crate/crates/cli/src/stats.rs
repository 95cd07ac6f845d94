//! Mean and standard error across seeds.

/// Arithmetic mean; `NaN` for an empty slice.
pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Standard error of the mean using the sample (n−1) standard deviation;
/// zero for fewer than two values.
pub fn stderr(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    (var / n as f64).sqrt()
}

/// Exponentially weighted moving average with `α = 2/(window+1)`, seeded with
/// the first value. A window of 1 returns the input unchanged.
pub fn ewma(xs: &[f64], window: usize) -> Vec<f64> {
    let alpha = 2.0 / (window.max(1) as f64 + 1.0);
    let mut out = Vec::with_capacity(xs.len());
    let mut acc = None;
    for &x in xs {
        let next = match acc {
            None => x,
            Some(prev) => alpha * x + (1.0 - alpha) * prev,
        };
        acc = Some(next);
        out.push(next);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stderr_by_hand() {
        // Sample variance of {1, 3} is 2; stderr = sqrt(2/2) = 1.
        assert_eq!(stderr(&[1.0, 3.0]), 1.0);
        assert_eq!(stderr(&[5.0]), 0.0);
        assert_eq!(stderr(&[2.0, 2.0, 2.0]), 0.0);
    }

    #[test]
    fn ewma_window_three() {
        // α = 0.5.
        assert_eq!(ewma(&[0.0, 4.0, 0.0], 3), vec![0.0, 2.0, 1.0]);
        assert_eq!(ewma(&[1.0, 5.0, -2.0], 1), vec![1.0, 5.0, -2.0]);
    }
}

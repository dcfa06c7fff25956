//! Log-space helpers shared by the exact oracles.

use statrs::function::factorial::ln_factorial;

/// Immutable table of `ln k!` for `k = 0..=max`.
#[derive(Debug, Clone)]
pub struct LogFactorials {
    table: Vec<f64>,
}

impl LogFactorials {
    pub fn new(max: usize) -> Self {
        Self {
            table: (0..=max as u64).map(ln_factorial).collect(),
        }
    }

    pub fn max(&self) -> usize {
        self.table.len() - 1
    }

    /// `ln k!`, falling back to the gamma function beyond the table.
    pub fn get(&self, k: u64) -> f64 {
        self.table
            .get(k as usize)
            .copied()
            .unwrap_or_else(|| ln_factorial(k))
    }

    pub fn ln_choose(&self, n: u64, k: u64) -> f64 {
        self.get(n) - self.get(k) - self.get(n - k)
    }
}

/// `ln Σ exp(x_i)`, stable for large magnitudes; `−∞` for an empty slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// `ln P(Bin(n, p) = k)` given `ln p` and `ln(1 − p)`.
pub fn log_binomial_pmf(table: &LogFactorials, n: u64, k: u64, ln_p: f64, ln_q: f64) -> f64 {
    let a = if k == 0 { 0.0 } else { k as f64 * ln_p };
    let b = if n == k { 0.0 } else { (n - k) as f64 * ln_q };
    table.ln_choose(n, k) + a + b
}

/// `ln P(Poisson(mean) = k)`.
pub fn log_poisson_pmf(table: &LogFactorials, mean: f64, k: u64) -> f64 {
    if mean == 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    -mean + k as f64 * mean.ln() - table.get(k)
}

/// Fourth-order central difference `f'(x)` with step `h`.
pub fn central_derivative(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x - 2.0 * h) - 8.0 * f(x - h) + 8.0 * f(x + h) - f(x + 2.0 * h)) / (12.0 * h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_sum_exp_handles_extremes() {
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert!((log_sum_exp(&[0.0, f64::NEG_INFINITY]) - 0.0).abs() < 1e-15);
    }

    #[test]
    fn factorials_and_pmfs() {
        let t = LogFactorials::new(20);
        assert!((t.get(5) - 120f64.ln()).abs() < 1e-13);
        assert!((t.get(25) - statrs::function::factorial::ln_factorial(25)).abs() < 1e-12);
        let total: f64 = (0..=20).map(|k| log_binomial_pmf(&t, 20, k, 0.3f64.ln(), 0.7f64.ln()).exp()).sum();
        assert!((total - 1.0).abs() < 1e-13);
        assert!((log_poisson_pmf(&t, 1.0, 1) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn central_derivative_is_fourth_order() {
        let d = central_derivative(f64::exp, 1.0, 1e-2);
        assert!((d - 1f64.exp()).abs() < 1e-8);
    }
}

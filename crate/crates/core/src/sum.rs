//! Compensated (Neumaier) summation.
//!
//! Pair sums over n^2 terms mix magnitudes across many decades once the
//! exponent is large; the compensated accumulator keeps the result
//! independent of summation order to ~1 ulp of the total.

#[derive(Debug, Clone, Copy, Default)]
pub struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for NeumaierSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = NeumaierSum::new();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(iter: I) -> f64 {
    iter.into_iter().collect::<NeumaierSum>().value()
}

/// h-weighted inner product `sum_i a_i b_i h_i`.
pub fn dot_h(a: &[f64], b: &[f64], h: &[f64]) -> f64 {
    compensated_sum(a.iter().zip(b).zip(h).map(|((x, y), w)| x * y * w))
}

/// h-weighted norm `sqrt(sum_i a_i^2 h_i)`.
pub fn norm_h(a: &[f64], h: &[f64]) -> f64 {
    dot_h(a, a, h).sqrt()
}

/// h-weighted distance between two nodal vectors.
pub fn dist_h(a: &[f64], b: &[f64], h: &[f64]) -> f64 {
    compensated_sum(a.iter().zip(b).zip(h).map(|((x, y), w)| (x - y) * (x - y) * w)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_cancelled_terms() {
        let xs = [1.0, 1e100, 1.0, -1e100];
        assert_eq!(compensated_sum(xs), 2.0);
        let naive: f64 = xs.iter().sum();
        assert_ne!(naive, 2.0);
    }

    #[test]
    fn weighted_norm() {
        let h = [0.5, 0.5];
        assert!((norm_h(&[3.0, 4.0], &h) - (12.5f64).sqrt()).abs() < 1e-15);
        assert_eq!(dist_h(&[1.0, 1.0], &[1.0, 1.0], &h), 0.0);
    }
}

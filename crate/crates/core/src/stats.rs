//! Numeric helpers: compensated summation and divergences.

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    compensation: f64,
    count: usize,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.compensation += (self.sum - t) + value;
        } else {
            self.compensation += (value - t) + self.sum;
        }
        self.sum = t;
        self.count += 1;
    }

    /// Merges another accumulator into this one.
    pub fn merge(&mut self, other: &KahanSum) {
        let count = self.count + other.count;
        self.add(other.sum);
        self.add(other.compensation);
        self.count = count;
    }

    pub fn sum(&self) -> f64 {
        self.sum + self.compensation
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum() / self.count as f64)
    }
}

impl FromIterator<f64> for KahanSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = KahanSum::new();
        iter.into_iter().for_each(|v| acc.add(v));
        acc
    }
}

/// Jensen-Shannon divergence in bits. Both inputs must be probability
/// vectors of equal length; the result is clamped to `[0, 1]`.
pub fn jensen_shannon(p: &[f64], q: &[f64]) -> f64 {
    debug_assert_eq!(p.len(), q.len());
    let mut acc = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let m = 0.5 * (a + b);
        if a > 0.0 {
            acc += 0.5 * a * (a / m).log2();
        }
        if b > 0.0 {
            acc += 0.5 * b * (b / m).log2();
        }
    }
    acc.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_beats_naive() {
        let mut acc = KahanSum::new();
        acc.add(1.0);
        for _ in 0..10_000 {
            acc.add(1e-16);
        }
        assert!((acc.sum() - (1.0 + 1e-12)).abs() < 1e-20);
        assert_eq!(acc.count(), 10_001);
    }

    #[test]
    fn merge_keeps_counts() {
        let mut a: KahanSum = [1.0, 2.0].into_iter().collect();
        let b: KahanSum = [3.0].into_iter().collect();
        a.merge(&b);
        assert_eq!(a.count(), 3);
        assert_eq!(a.mean(), Some(2.0));
    }

    #[test]
    fn jsd_edge_values() {
        assert_eq!(jensen_shannon(&[0.2, 0.8], &[0.2, 0.8]), 0.0);
        assert_eq!(jensen_shannon(&[1.0, 0.0], &[0.0, 1.0]), 1.0);
    }

    #[test]
    fn jsd_matches_entropy_form() {
        // H(m) - (H(p) + H(q)) / 2 evaluated by hand in bits
        let h = |v: &[f64]| -> f64 {
            v.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.log2()).sum()
        };
        let p = [0.5, 0.5];
        let q = [1.0, 0.0];
        let m = [0.75, 0.25];
        let expected = h(&m) - 0.5 * (h(&p) + h(&q));
        assert!((jensen_shannon(&p, &q) - expected).abs() < 1e-12);
        assert!((expected - 0.311_278_124_459_132_8).abs() < 1e-12);
    }
}

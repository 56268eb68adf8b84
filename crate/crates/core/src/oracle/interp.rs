//! Interpolation used only by the oracle: a Dirichlet-kernel trigonometric
//! interpolant for periodic samples and four-point Lagrange stencils.

use std::f64::consts::PI;

/// Trigonometric interpolant through `K = 2M + 1` equispaced samples
/// `x(t_n)`, `t_n = n T / K`, `n = -M..=M`, evaluated as
/// `sum_n x_n sin(K pi s / T) / (K sin(pi s / T))` with `s = t - t_n`.
#[derive(Debug, Clone)]
pub struct PeriodicInterpolant {
    dim: usize,
    period: f64,
    times: Vec<f64>,
    samples: Vec<f64>,
}

impl PeriodicInterpolant {
    /// `samples` is sample-major with `dim` components per grid point.
    pub fn new(samples: &[f64], dim: usize, period: f64) -> Self {
        let k = samples.len() / dim;
        assert!(k % 2 == 1 && k * dim == samples.len(), "need an odd number of samples");
        let m = (k / 2) as i64;
        let times = (-m..=m).map(|n| n as f64 * period / k as f64).collect();
        Self {
            dim,
            period,
            times,
            samples: samples.to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        let k = self.times.len();
        out.iter_mut().for_each(|v| *v = 0.0);
        for (n, &tn) in self.times.iter().enumerate() {
            let w = dirichlet(t - tn, self.period, k);
            if w == 0.0 {
                continue;
            }
            for c in 0..self.dim {
                out[c] += w * self.samples[n * self.dim + c];
            }
        }
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.eval_into(t, &mut out);
        out
    }
}

fn dirichlet(s: f64, period: f64, k: usize) -> f64 {
    let phase = (s / period).rem_euclid(1.0);
    let den = (PI * phase).sin();
    if den.abs() < 1e-13 {
        return 1.0;
    }
    (k as f64 * PI * phase).sin() / (k as f64 * den)
}

/// Lagrange weights on nodes `0, 1, 2, 3` at position `x`.
pub fn cubic_weights(x: f64) -> [f64; 4] {
    [
        -(x - 1.0) * (x - 2.0) * (x - 3.0) / 6.0,
        x * (x - 2.0) * (x - 3.0) / 2.0,
        -x * (x - 1.0) * (x - 3.0) / 2.0,
        x * (x - 1.0) * (x - 2.0) / 6.0,
    ]
}

/// Weights on nodes `-1, 0, 1, 2` at the midpoint `1/2`.
pub const MIDPOINT: [f64; 4] = [-1.0 / 16.0, 9.0 / 16.0, 9.0 / 16.0, -1.0 / 16.0];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproduces_trig_polynomials() {
        let period = 3.7;
        let k = 11;
        let f = |t: f64| 0.3 + (2.0 * PI * t / period).cos() - 0.5 * (10.0 * PI * t / period).sin();
        let samples: Vec<f64> = (-5..=5).map(|n| f(n as f64 * period / k as f64)).collect();
        let p = PeriodicInterpolant::new(&samples, 1, period);
        for t in [-2.0, 0.0, 0.123, 1.9, 5.5] {
            assert!((p.eval(t)[0] - f(t)).abs() < 1e-12);
        }
        assert!((p.eval(period / k as f64)[0] - samples[6]).abs() < 1e-14);
    }

    #[test]
    fn stencils() {
        let w = cubic_weights(0.5);
        assert_eq!(w, [5.0 / 16.0, 15.0 / 16.0, -5.0 / 16.0, 1.0 / 16.0]);
        let cubic = |x: f64| 1.0 - 2.0 * x + 0.5 * x * x * x;
        let w = cubic_weights(1.3);
        let v: f64 = (0..4).map(|i| w[i] * cubic(i as f64)).sum();
        assert!((v - cubic(1.3)).abs() < 1e-13);
        let m: f64 = (0..4).map(|i| MIDPOINT[i] * cubic(i as f64 - 1.0)).sum();
        assert!((m - cubic(0.5)).abs() < 1e-14);
    }
}

//! Summation helpers shared by the Monte Carlo reductions.
//!
//! All cross-replica and cross-shift reductions in this crate go through
//! deterministic orders (Kahan accumulators or fixed pairwise trees) so that
//! results do not depend on the number of worker threads.

/// Kahan (compensated) accumulator. Terms of widely different magnitude show
/// up in the geometric series of the diffusion constant when the contraction
/// rate is close to 1.
#[derive(Debug, Clone, Copy, Default)]
pub struct Kahan {
    sum: f64,
    comp: f64,
}

impl Kahan {
    pub fn new() -> Self {
        Kahan::default()
    }

    pub fn add(&mut self, x: f64) {
        let y = x - self.comp;
        let t = self.sum + y;
        self.comp = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}

/// Pairwise tree sum over a slice. The reduction order depends only on the
/// slice layout, never on thread scheduling.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        2 => xs[0] + xs[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
        }
    }
}

/// Pairwise tree sum of equal-length vectors, written into `acc`.
pub fn pairwise_sum_vecs(vecs: &[Vec<f64>], acc: &mut [f64]) {
    acc.fill(0.0);
    fn rec(vecs: &[Vec<f64>], out: &mut Vec<f64>) {
        match vecs.len() {
            0 => {}
            1 => out.clone_from(&vecs[0]),
            n => {
                let mid = n / 2;
                let mut right = vec![0.0; out.len()];
                rec(&vecs[..mid], out);
                rec(&vecs[mid..], &mut right);
                for (o, r) in out.iter_mut().zip(&right) {
                    *o += r;
                }
            }
        }
    }
    let mut out = vec![0.0; acc.len()];
    rec(vecs, &mut out);
    acc.copy_from_slice(&out);
}

/// Gauss-Legendre nodes and weights on [-1, 1], cached per order.
///
/// Newton iteration on the Legendre recurrence; standard textbook scheme.
pub fn gauss_legendre(n: usize) -> (&'static [f64], &'static [f64]) {
    use std::collections::HashMap;
    use std::sync::{Mutex, OnceLock};

    // Leaked boxed slices keyed by order; the set of orders used by this
    // crate is tiny and fixed.
    static TABLES: OnceLock<Mutex<HashMap<usize, (&'static [f64], &'static [f64])>>> =
        OnceLock::new();

    let tables = TABLES.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = tables.lock().unwrap();
    if let Some(&(x, w)) = guard.get(&n) {
        return (x, w);
    }

    let mut nodes = vec![0.0_f64; n];
    let mut weights = vec![0.0_f64; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        // Newton stalls at one ulp of oscillation, so cap the iterations.
        for _ in 0..100 {
            // Legendre P_n(x) and its derivative by recurrence.
            let (mut p0, mut p1) = (1.0_f64, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (mut p0, mut p1) = (1.0_f64, x);
        for k in 2..=n {
            let kf = k as f64;
            let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
            p0 = p1;
            p1 = p2;
        }
        let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }

    let x: &'static [f64] = Box::leak(nodes.into_boxed_slice());
    let w: &'static [f64] = Box::leak(weights.into_boxed_slice());
    guard.insert(n, (x, w));
    (x, w)
}

/// Sample mean and (unbiased) standard deviation.
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = pairwise_sum(xs) / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let sq: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&sq) / (n as f64 - 1.0);
    (mean, var.max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kahan_beats_naive_on_geometric_tail() {
        let mut k = Kahan::new();
        for i in 0..2000 {
            k.add(0.999_f64.powi(i));
        }
        let exact = (1.0 - 0.999_f64.powi(2000)) / (1.0 - 0.999);
        assert!((k.value() - exact).abs() < 1e-9);
    }

    #[test]
    fn pairwise_matches_exact_small() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(pairwise_sum(&xs), 15.0);
    }

    #[test]
    fn mean_sd_basic() {
        let (m, s) = mean_sd(&[1.0, 2.0, 3.0]);
        assert!((m - 2.0).abs() < 1e-15);
        assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gauss_legendre_integrates_exactly() {
        for n in [16usize, 32, 64] {
            let (x, w) = gauss_legendre(n);
            assert_eq!(x.len(), n);
            let total: f64 = w.iter().sum();
            assert!((total - 2.0).abs() < 1e-13, "weights sum {total}");
            // exact for polynomials of degree <= 2n-1
            let int_x2: f64 = x.iter().zip(w).map(|(x, w)| w * x * x).sum();
            assert!((int_x2 - 2.0 / 3.0).abs() < 1e-13);
            // near machine accuracy on a trig integrand
            let int_cos: f64 = x.iter().zip(w).map(|(x, w)| w * x.cos()).sum();
            assert!((int_cos - 2.0 * 1.0_f64.sin()).abs() < 1e-12);
        }
    }
}

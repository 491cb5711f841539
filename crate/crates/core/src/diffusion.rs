//! The diffusion constant of the rescaled chain and the contraction
//! certificates that make its series representation valid.
//!
//! For a noise law with mean rotation `r_bar` and a quenched backbone `w`,
//! the per-coordinate variance growth rate is
//!
//! ```text
//! sigma^2 = 1/d + (2/d) sum_{k>=1} E_w <e^d, w_1 r_bar w_2 r_bar ... w_k r_bar e^d>
//! ```
//!
//! with geometric tail control through `rho = ||r_bar||_op < 1`. The
//! expectation over the disorder is evaluated by ergodic averaging over
//! shifted windows of a single realization, which is exactly the quenched
//! reading of the model. Closed forms are provided for the homogeneous
//! scalar case and for iid disorder, and an independent 2D Fourier route
//! lives in [`crate::harmonics`].

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::disorder::DisorderModel;
use crate::error::{Error, Result};
use crate::numeric::{mean_sd, pairwise_sum_vecs, Kahan};
use crate::rotgroup::{MomentMode, RotationLaw};
use crate::smallmat;
use crate::tensor::{op_norm_mat, spectral_radius, LinOp, SubspaceBasis, SubspaceBlock};

/// Margin under 1 required of the certified spectral radii.
pub const PASS_MARGIN: f64 = 1e-9;

/// How to truncate the series.
#[derive(Debug, Clone, Copy)]
pub enum SeriesTruncation {
    /// Fixed number of terms.
    Terms(usize),
    /// Smallest K whose certified geometric tail is below the tolerance.
    TailBelow(f64),
}

/// A certified series evaluation of the diffusion constant.
#[derive(Debug, Clone)]
pub struct DiffusionEstimate {
    pub sigma2: f64,
    pub truncation_k: usize,
    pub tail_bound: f64,
    /// Ergodic-averaging standard error (batch means over shifts); `None`
    /// when the disorder expectation is exact (constant backbone).
    pub mc_se: Option<f64>,
}

impl DiffusionEstimate {
    pub fn to_json(&self) -> Value {
        json!({
            "sigma2": self.sigma2,
            "K": self.truncation_k,
            "tail_bound": self.tail_bound,
            "mc_se": self.mc_se,
        })
    }
}

/// Geometric tail bound `(2/d) rho^(K+1) / (1 - rho)` of the truncated
/// series.
pub fn tail_bound(rho: f64, d: usize, k: usize) -> Result<f64> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::SeriesNotCertified { rho });
    }
    if rho == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 / d as f64 * rho.powi(k as i32 + 1) / (1.0 - rho))
}

fn truncation_for(rho: f64, d: usize, trunc: SeriesTruncation) -> usize {
    match trunc {
        SeriesTruncation::Terms(k) => k,
        SeriesTruncation::TailBelow(tol) => {
            if rho == 0.0 {
                return 0;
            }
            // smallest K with (2/d) rho^(K+1)/(1-rho) <= tol
            let target = tol * d as f64 * (1.0 - rho) / 2.0;
            if target >= rho {
                return 0;
            }
            let k = (target.ln() / rho.ln() - 1.0).ceil();
            k.max(0.0) as usize
        }
    }
}

/// Evaluate the diffusion-constant series for a law with exact mean
/// rotation on a quenched disorder realization.
///
/// The term at lag `k` is the ergodic average over `ergodic_window` shifted
/// windows of `<e^d, w_{l+1} r_bar ... w_{l+k} r_bar e^d>`; the thermal
/// expectation is exact (each thermal rotation integrates to `r_bar` by
/// independence). Terms are accumulated with compensated summation and each
/// is checked against its geometric bound `rho^k`.
pub fn sigma2_series(
    law: &RotationLaw,
    model: &DisorderModel,
    trunc: SeriesTruncation,
    ergodic_window: usize,
) -> Result<DiffusionEstimate> {
    let d = law.dim();
    if model.dim() != d {
        return Err(Error::DimensionMismatch(model.dim(), d));
    }
    if ergodic_window == 0 {
        return Err(Error::InvalidParameter("ergodic window must be >= 1".into()));
    }
    let r_bar = law.r_bar()?;
    let rho = r_bar.op_norm();
    if rho >= 1.0 {
        return Err(Error::SeriesNotCertified { rho });
    }
    let k_max = truncation_for(rho, d, trunc);
    let tail = tail_bound(rho, d, k_max)?;
    let inv_d = 1.0 / d as f64;

    if k_max == 0 {
        return Ok(DiffusionEstimate {
            sigma2: inv_d,
            truncation_k: 0,
            tail_bound: tail,
            mc_se: None,
        });
    }

    // All shifts of a constant backbone coincide.
    let l_total = if model.is_constant() { 1 } else { ergodic_window };

    // Pre-multiply the window by r_bar once: w_j r_bar, row-major flats.
    let n = d * d;
    let omega = model.window_flat(1, l_total + k_max);
    let rb: Vec<f64> = {
        let m = r_bar.matrix();
        let mut flat = vec![0.0; n];
        for i in 0..d {
            for j in 0..d {
                flat[i * d + j] = m[(i, j)];
            }
        }
        flat
    };
    let mut steps = vec![0.0; (l_total + k_max) * n];
    for j in 0..l_total + k_max {
        smallmat::mul(&omega[j * n..(j + 1) * n], &rb, &mut steps[j * n..(j + 1) * n], d);
    }

    // Batched ergodic average: per-k sums within each batch, then a fixed
    // pairwise tree across batches. The batch means of the per-shift
    // partial sums S_l feed the standard error.
    let batch_len = (l_total / 64).clamp(64, 65_536).min(l_total.max(1));
    let n_batches = l_total.div_ceil(batch_len);
    let batch_results: Vec<(Vec<f64>, f64, usize)> = (0..n_batches)
        .into_par_iter()
        .map(|b| {
            let lo = b * batch_len;
            let hi = ((b + 1) * batch_len).min(l_total);
            let mut k_sums = vec![0.0; k_max];
            let mut s_sum = 0.0;
            let mut a = vec![0.0; d];
            let mut a_next = vec![0.0; d];
            for l in lo..hi {
                a.fill(0.0);
                a[d - 1] = 1.0;
                let mut s_l = Kahan::new();
                for k in 1..=k_max {
                    let j = l + k - 1; // w_{l+k} r_bar
                    smallmat::vec_mat(&a, &steps[j * n..(j + 1) * n], &mut a_next, d);
                    std::mem::swap(&mut a, &mut a_next);
                    let term = a[d - 1];
                    k_sums[k - 1] += term;
                    s_l.add(term);
                }
                s_sum += s_l.value();
            }
            (k_sums, s_sum, hi - lo)
        })
        .collect();

    let mut t_sums = vec![0.0; k_max];
    let k_vecs: Vec<Vec<f64>> = batch_results.iter().map(|(v, _, _)| v.clone()).collect();
    pairwise_sum_vecs(&k_vecs, &mut t_sums);

    let mut series = Kahan::new();
    for (k, sum) in t_sums.iter().enumerate() {
        let t_k = sum / l_total as f64;
        // each averaged term obeys |t_k| <= rho^k
        let bound = rho.powi(k as i32 + 1) * (1.0 + 1e-9) + 1e-300;
        assert!(
            t_k.abs() <= bound,
            "series term {} = {t_k} exceeds geometric bound {bound}",
            k + 1
        );
        series.add(t_k);
    }
    let sigma2 = inv_d + 2.0 * inv_d * series.value();

    let mc_se = if model.is_constant() || n_batches < 2 {
        None
    } else {
        let batch_means: Vec<f64> =
            batch_results.iter().map(|(_, s, len)| s / *len as f64).collect();
        let (_, sd) = mean_sd(&batch_means);
        Some(2.0 * inv_d * sd / (n_batches as f64).sqrt())
    };

    Ok(DiffusionEstimate { sigma2, truncation_k: k_max, tail_bound: tail, mc_se })
}

/// Closed form for iid disorder:
/// `sigma^2 = 1/d + (2/d) <e^d, wbar rbar (I - wbar rbar)^{-1} e^d>`,
/// evaluated by solving the linear system.
pub fn sigma2_iid_closed(r_bar: &LinOp, omega_bar: &LinOp) -> Result<f64> {
    let d = r_bar.dim();
    if omega_bar.dim() != d {
        return Err(Error::DimensionMismatch(omega_bar.dim(), d));
    }
    let rho = r_bar.op_norm();
    if rho >= 1.0 {
        return Err(Error::SeriesNotCertified { rho });
    }
    let m = omega_bar.matrix() * r_bar.matrix();
    let mut ed = DVector::zeros(d);
    ed[d - 1] = 1.0;
    let rhs = &m * &ed;
    let sys = DMatrix::identity(d, d) - &m;
    let x = sys
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::InvalidParameter("(I - wbar rbar) is numerically singular".into()))?;
    Ok(1.0 / d as f64 + 2.0 / d as f64 * x[d - 1])
}

/// Homogeneous scalar case `r_bar = c I`: `1/d + 2c/(d(1-c))`.
pub fn sigma2_c_identity(c: f64, d: usize) -> Result<f64> {
    if c.abs() >= 1.0 {
        return Err(Error::InvalidParameter(format!("|c| = {} must be < 1", c.abs())));
    }
    if d < 2 {
        return Err(Error::InvalidParameter("dimension must be >= 2".into()));
    }
    Ok(1.0 / d as f64 + 2.0 * c / (d as f64 * (1.0 - c)))
}

/// Verdict of the contraction certificate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HypothesisVerdict {
    Pass,
    Fail,
    /// Monte Carlo moment uncertainty straddles the pass gate.
    Inconclusive,
}

/// Norms of the doubled powers of one contraction matrix.
#[derive(Debug, Clone)]
pub struct PowerEntry {
    pub m: usize,
    /// `||r_bar^m||_op^(1/m)`
    pub mean_root: f64,
    /// `||(E[r (x) r]|_{H_s^0})^m||_op^(1/m)`
    pub second_root: f64,
}

/// Numeric certificate for the exponential-contraction hypothesis: operator
/// norms of the first moment and of the second moment restricted to the
/// traceless symmetric block, their submultiplicative power roots, and
/// spectral radii (eigenvalue point estimates plus certified bounds; only
/// the certified bounds gate the verdict).
#[derive(Debug, Clone)]
pub struct HypothesisReport {
    pub rho1: f64,
    pub rho2: f64,
    pub generalized: Vec<PowerEntry>,
    pub sp1_point: f64,
    pub sp2_point: f64,
    pub sp1_certified: f64,
    pub sp2_certified: f64,
    pub rho1_uncertainty: Option<f64>,
    pub rho2_uncertainty: Option<f64>,
    pub verdict: HypothesisVerdict,
    pub pass: bool,
}

impl HypothesisReport {
    pub fn to_json(&self) -> Value {
        json!({
            "rho1": self.rho1,
            "rho2": self.rho2,
            "generalized": self.generalized.iter().map(|p| {
                json!({"m": p.m, "mean_root": p.mean_root, "second_root": p.second_root})
            }).collect::<Vec<_>>(),
            "spectral_radius": {
                "mean": {"point": self.sp1_point, "certified": self.sp1_certified},
                "second": {"point": self.sp2_point, "certified": self.sp2_certified},
            },
            "rho1_uncertainty": self.rho1_uncertainty,
            "rho2_uncertainty": self.rho2_uncertainty,
            "verdict": match self.verdict {
                HypothesisVerdict::Pass => "pass",
                HypothesisVerdict::Fail => "fail",
                HypothesisVerdict::Inconclusive => "inconclusive",
            },
            "pass": self.pass,
        })
    }
}

/// Contraction certificate from exact law moments, doubling powers up to
/// `max_power`.
pub fn check_hypothesis(law: &RotationLaw, max_power: usize) -> Result<HypothesisReport> {
    let moments = law.moments(MomentMode::Exact)?;
    let basis = SubspaceBasis::new(law.dim());
    let a2 = moments.second.restrict(&basis, SubspaceBlock::SymTraceless, false)?;
    Ok(build_report(moments.r_bar.matrix(), &a2, max_power, None, None))
}

/// Contraction certificate from Monte Carlo moments. The uncertainties are
/// conservative 3-sigma balls in Hilbert-Schmidt norm; when they straddle
/// the pass gate the verdict is `Inconclusive` rather than a hard error.
pub fn check_hypothesis_mc(
    law: &RotationLaw,
    max_power: usize,
    samples: usize,
    seed: u64,
) -> Result<HypothesisReport> {
    let moments = law.moments(MomentMode::MonteCarlo { samples, seed })?;
    let basis = SubspaceBasis::new(law.dim());
    // Sampling noise leaks across blocks, so take the compression.
    let a2 = moments.second.restrict(&basis, SubspaceBlock::SymTraceless, true)?;
    let u1 = moments.r_bar_se.as_ref().map(|se| 3.0 * se.norm());
    let u2 = moments.second_se.as_ref().map(|se| 3.0 * se.norm());
    Ok(build_report(moments.r_bar.matrix(), &a2, max_power, u1, u2))
}

fn build_report(
    a1: &DMatrix<f64>,
    a2: &DMatrix<f64>,
    max_power: usize,
    u1: Option<f64>,
    u2: Option<f64>,
) -> HypothesisReport {
    let rho1 = op_norm_mat(a1);
    let rho2 = op_norm_mat(a2);
    let sp1 = spectral_radius(a1, max_power);
    let sp2 = spectral_radius(a2, max_power);

    let mut generalized = Vec::new();
    for (i, &(m, r1)) in sp1.power_norms.iter().enumerate() {
        let r2 = sp2.power_norms.get(i).map(|&(_, r)| r).unwrap_or(0.0);
        generalized.push(PowerEntry { m, mean_root: r1, second_root: r2 });
    }

    let gate = 1.0 - PASS_MARGIN;
    let verdict = match (u1, u2) {
        (None, None) => {
            if sp1.certified_upper <= gate && sp2.certified_upper <= gate {
                HypothesisVerdict::Pass
            } else {
                HypothesisVerdict::Fail
            }
        }
        (u1, u2) => {
            let (u1, u2) = (u1.unwrap_or(0.0), u2.unwrap_or(0.0));
            if sp1.certified_upper + u1 <= gate && sp2.certified_upper + u2 <= gate {
                HypothesisVerdict::Pass
            } else if sp1.certified_upper - u1 > gate || sp2.certified_upper - u2 > gate {
                HypothesisVerdict::Fail
            } else {
                HypothesisVerdict::Inconclusive
            }
        }
    };

    HypothesisReport {
        rho1,
        rho2,
        generalized,
        sp1_point: sp1.point,
        sp2_point: sp2.point,
        sp1_certified: sp1.certified_upper,
        sp2_certified: sp2.certified_upper,
        rho1_uncertainty: u1,
        rho2_uncertainty: u2,
        verdict,
        pass: verdict == HypothesisVerdict::Pass,
    }
}

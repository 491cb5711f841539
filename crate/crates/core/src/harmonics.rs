//! Fourier analysis on the rotation groups: measure spectra on SO(2),
//! character spectra for conjugation-invariant laws on SO(3), the mixing
//! constant `h`, total-variation decay bounds, explicit TV computation on
//! the circle, and an independent 2D route to the diffusion constant.
//!
//! On SO(2) the irreducible representations are `exp(i m theta)`, so the
//! transform of a law is the coefficient sequence `q_m`. On SO(3) only the
//! conjugation-invariant case is covered: there the transform is scalar on
//! each irreducible block (`c_l` times the identity, by Schur), and the
//! scalars come from the characters
//! `chi_l(theta) = 1 + 2 sum_{j<=l} cos(j theta)` of dimension `2l + 1`.
//!
//! Tail certification: the supremum behind `h` and the spectral sums behind
//! the TV bounds run over infinitely many representations, so every
//! spectrum carries an optional decaying envelope (`|q_m| <= c/m^p`, or
//! `|c_l| <= c/(2l+1)`). Laws without one (atoms, dirac) are reported with
//! an explicitly uncertified tail.

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde_json::{json, Value};

use crate::diffusion::DiffusionEstimate;
use crate::disorder::DisorderModel;
use crate::error::{Error, Result};
use crate::numeric::{mean_sd, pairwise_sum_vecs, Kahan};
use crate::rotgroup::{AngleDensity, AxisLaw, LawKind, RotationLaw};

/// Decaying envelope `|coeff_m| <= c / m^power` for all m >= 1.
#[derive(Debug, Clone, Copy)]
pub struct Envelope {
    pub c: f64,
    pub power: u32,
}

/// Exact coefficient generator, used to extend certified sums past the
/// materialized range.
#[derive(Debug, Clone, Copy)]
enum WindowGen {
    Window { a: f64, b: f64 },
}

impl WindowGen {
    fn coeff(&self, m: i64) -> Complex64 {
        match self {
            WindowGen::Window { a, b } => window_coeff(*a, *b, m),
        }
    }
}

fn window_coeff(a: f64, b: f64, m: i64) -> Complex64 {
    if m == 0 {
        return Complex64::new(1.0, 0.0);
    }
    let mf = m as f64;
    let num = Complex64::new(0.0, mf * b).exp() - Complex64::new(0.0, mf * a).exp();
    num / Complex64::new(0.0, mf * (b - a))
}

/// Fourier coefficients `q_m = E exp(i m theta)` of an SO(2) law,
/// `m = -m_max ..= m_max`.
#[derive(Debug, Clone)]
pub struct CircleSpectrum {
    m_max: usize,
    /// index `m + m_max`
    coeffs: Vec<Complex64>,
    envelope: Option<Envelope>,
    generator: Option<WindowGen>,
}

impl CircleSpectrum {
    pub fn m_max(&self) -> usize {
        self.m_max
    }

    pub fn coeff(&self, m: i64) -> Complex64 {
        if m.unsigned_abs() as usize <= self.m_max {
            return self.coeffs[(m + self.m_max as i64) as usize];
        }
        match self.generator {
            Some(g) => g.coeff(m),
            None => panic!("coefficient {m} beyond computed range"),
        }
    }

    /// Largest index with an exactly evaluable coefficient.
    fn exact_range(&self) -> usize {
        if self.generator.is_some() {
            EXTENDED_RANGE
        } else {
            self.m_max
        }
    }

    pub fn envelope(&self) -> Option<Envelope> {
        self.envelope
    }

    /// JSON array of `[re, im]` pairs for `m = -m_max ..= m_max`.
    pub fn to_json(&self) -> Value {
        json!({
            "m_max": self.m_max,
            "coeffs": self.coeffs.iter().map(|c| json!([c.re, c.im])).collect::<Vec<_>>(),
        })
    }
}

/// How far certified sums may extend past `m_max` using the generator.
const EXTENDED_RANGE: usize = 2_000_000;

/// Fourier coefficients of an SO(2) law.
///
/// Window laws get the exact `(e^{imb} - e^{ima}) / (im(b-a))` coefficients
/// plus the `|q_m| <= 2/(m(b-a))` envelope; atomic laws get exponential
/// sums and no envelope.
pub fn so2_spectrum(law: &RotationLaw, m_max: usize) -> Result<CircleSpectrum> {
    if law.dim() != 2 {
        return Err(Error::Unsupported(format!(
            "so2 spectrum needs a d=2 law, got d={}",
            law.dim()
        )));
    }
    let (coeff_fn, envelope, generator): (Box<dyn Fn(i64) -> Complex64>, _, _) = match law.kind() {
        LawKind::Haar => (
            Box::new(|m: i64| {
                if m == 0 {
                    Complex64::new(1.0, 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                }
            }),
            Some(Envelope { c: 0.0, power: 1 }),
            None,
        ),
        LawKind::So2Window { a, b } => {
            let (a, b) = (*a, *b);
            (
                Box::new(move |m| window_coeff(a, b, m)),
                Some(Envelope { c: 2.0 / (b - a), power: 1 }),
                Some(WindowGen::Window { a, b }),
            )
        }
        LawKind::So2Atoms { angles, weights } => {
            let (angles, weights) = (angles.clone(), weights.clone());
            (
                Box::new(move |m| {
                    angles
                        .iter()
                        .zip(&weights)
                        .map(|(t, w)| Complex64::new(0.0, m as f64 * t).exp() * *w)
                        .sum()
                }),
                None,
                None,
            )
        }
        LawKind::Dirac { rotation } => {
            let theta = rotation.angle_2d()?;
            (Box::new(move |m| Complex64::new(0.0, m as f64 * theta).exp()), None, None)
        }
        _ => {
            return Err(Error::Unsupported(
                "so2 spectrum requires a law with known angle density or atoms".into(),
            ))
        }
    };

    let mm = m_max as i64;
    let coeffs: Vec<Complex64> = (-mm..=mm).map(&coeff_fn).collect();
    debug_assert!((coeffs[m_max] - Complex64::new(1.0, 0.0)).norm() < 1e-14);
    debug_assert!(coeffs.iter().all(|c| c.norm() <= 1.0 + 1e-12));
    Ok(CircleSpectrum { m_max, coeffs, envelope, generator })
}

/// Character coefficients `c_l` of a conjugation-invariant SO(3) law,
/// `l = 0 ..= l_max`; the transform on the `(2l+1)`-dimensional block is
/// `c_l` times the identity.
#[derive(Debug, Clone)]
pub struct CharacterSpectrum {
    l_max: usize,
    coeffs: Vec<f64>,
    envelope: Option<Envelope>,
}

impl CharacterSpectrum {
    pub fn l_max(&self) -> usize {
        self.l_max
    }

    pub fn coeff(&self, l: usize) -> f64 {
        self.coeffs[l]
    }

    pub fn envelope(&self) -> Option<Envelope> {
        self.envelope
    }

    pub fn to_json(&self) -> Value {
        json!({
            "l_max": self.l_max,
            "coeffs": self.coeffs.clone(),
            "dims": (0..=self.l_max).map(|l| 2 * l + 1).collect::<Vec<_>>(),
        })
    }
}

/// Character spectrum of a conjugation-invariant law on SO(3).
///
/// Accepted inputs: the conjugation-invariant law kind (angle density), an
/// axis-angle law with uniform axis (conjugation invariant by construction),
/// Haar, and the Dirac mass at the identity (angle distribution
/// `delta_0`, giving `c_l = 1`). Anything else errors, pointing at the d=2
/// route or Monte Carlo.
pub fn so3_char_spectrum(law: &RotationLaw, l_max: usize) -> Result<CharacterSpectrum> {
    if law.dim() != 3 {
        return Err(Error::Unsupported(format!(
            "character spectrum needs a d=3 law, got d={}",
            law.dim()
        )));
    }
    let coeffs = match law.kind() {
        LawKind::Haar => {
            let mut c = vec![0.0; l_max + 1];
            c[0] = 1.0;
            return Ok(CharacterSpectrum {
                l_max,
                coeffs: c,
                envelope: Some(Envelope { c: 0.0, power: 1 }),
            });
        }
        LawKind::So3ConjInvariant { density } => char_coeffs_from_moments(
            |j| density.mean_cos(j),
            l_max,
        ),
        LawKind::So3AxisAngle { axis: AxisLaw::UniformSphere, angle } => {
            char_coeffs_from_moments(|j| angle.mean_trig(j).0, l_max)
        }
        LawKind::Dirac { rotation } => {
            let d = (rotation.matrix() - nalgebra::DMatrix::identity(3, 3)).norm();
            if d > 1e-12 {
                return Err(Error::Unsupported(
                    "dirac law is conjugation invariant only at the identity; \
                     use the d=2 route or Monte Carlo"
                        .into(),
                ));
            }
            // chi_l(0) = 2l + 1
            vec![1.0; l_max + 1]
        }
        _ => {
            return Err(Error::Unsupported(
                "law is not conjugation invariant; use the d=2 route or Monte Carlo".into(),
            ))
        }
    };
    debug_assert!((coeffs[0] - 1.0).abs() < 1e-12);
    debug_assert!(coeffs.iter().all(|c| c.abs() <= 1.0 + 1e-12));

    let envelope = char_envelope(law);
    Ok(CharacterSpectrum { l_max, coeffs, envelope })
}

/// `c_l (2l+1) = E chi_l = 1 + 2 sum_{j<=l} E cos(j theta)`, via running
/// cosine moments.
fn char_coeffs_from_moments(mean_cos: impl Fn(u32) -> f64, l_max: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(l_max + 1);
    let mut acc = 1.0;
    out.push(1.0);
    for l in 1..=l_max {
        acc += 2.0 * mean_cos(l as u32);
        out.push(acc / (2 * l + 1) as f64);
    }
    out
}

/// `|chi_l(theta)| <= 1/|sin(theta/2)|` gives `|c_l| <= C/(2l+1)` with
/// `C = E[1/sin(theta/2)]`, finite when the angle density stays away from
/// the identity angle (0 and 2*pi). The uniform full-circle density has the
/// exact coefficients `1/(2l+1)`, hence `C = 1`.
fn char_envelope(law: &RotationLaw) -> Option<Envelope> {
    let density_envelope = |density: &AngleDensity| -> Option<Envelope> {
        match density {
            AngleDensity::UniformFullCircle => Some(Envelope { c: 1.0, power: 1 }),
            AngleDensity::Window { lo, hi } => {
                if *lo <= 1e-9 || *hi >= 2.0 * std::f64::consts::PI - 1e-9 {
                    return None;
                }
                // (2/(hi-lo)) [ln tan(theta/4)]_lo^hi
                let c = 2.0 / (hi - lo) * ((hi / 4.0).tan().ln() - (lo / 4.0).tan().ln());
                Some(Envelope { c, power: 1 })
            }
            AngleDensity::Table { thetas, values } => {
                let tau = 2.0 * std::f64::consts::PI;
                let supported: Vec<usize> =
                    (0..values.len()).filter(|&i| values[i] > 0.0).collect();
                let (first, last) = (*supported.first()?, *supported.last()?);
                if thetas[first] <= 1e-6 || thetas[last] >= tau - 1e-6 {
                    return None;
                }
                let c = density.integrate(|t| 1.0 / (t / 2.0).sin().abs());
                c.is_finite().then_some(Envelope { c, power: 1 })
            }
        }
    };
    match law.kind() {
        LawKind::Haar => Some(Envelope { c: 0.0, power: 1 }),
        LawKind::So3ConjInvariant { density } => density_envelope(density),
        _ => None,
    }
}

/// The mixing constant: supremum of the transform's operator norm over
/// nontrivial representations, with an enclosure when an envelope certifies
/// the tail.
#[derive(Debug, Clone, Copy)]
pub struct MixingConstant {
    pub h: f64,
    /// Upper slack of the enclosure `[h, h + slack]`; `None` when the tail
    /// is uncertified (no decaying envelope, e.g. atomic laws).
    pub tail_slack: Option<f64>,
    pub certified: bool,
}

/// `h = sup_{m != 0} |q_m|` on SO(2).
pub fn mixing_h_so2(spectrum: &CircleSpectrum) -> MixingConstant {
    let mut h = 0.0_f64;
    for m in 1..=spectrum.m_max as i64 {
        h = h.max(spectrum.coeff(m).norm()).max(spectrum.coeff(-m).norm());
    }
    finish_mixing_h(h, spectrum.envelope, spectrum.m_max)
}

/// `h = sup_{l >= 1} |c_l|` in the conjugation-invariant SO(3) case.
pub fn mixing_h_char(spectrum: &CharacterSpectrum) -> MixingConstant {
    let mut h = 0.0_f64;
    for l in 1..=spectrum.l_max {
        h = h.max(spectrum.coeff(l).abs());
    }
    let env = spectrum.envelope.map(|e| Envelope { c: e.c / 2.0, power: e.power });
    // c/(2l+1) <= (c/2)/l, reuse the 1/m^p tail form
    finish_mixing_h(h, env, spectrum.l_max)
}

fn finish_mixing_h(h: f64, envelope: Option<Envelope>, range: usize) -> MixingConstant {
    match envelope {
        Some(env) => {
            let tail_sup = env.c / ((range + 1) as f64).powi(env.power as i32);
            MixingConstant { h, tail_slack: Some((tail_sup - h).max(0.0)), certified: true }
        }
        None => MixingConstant { h, tail_slack: None, certified: false },
    }
}

/// Certified bound on the worst-case distance from equidistribution after
/// `k` convolution steps:
/// `bound(k)^2 = sum_{alpha != 0} d_alpha ||Q(alpha)||_hs^2 ||Q(alpha)||_op^(2(k-1))`,
/// which reads `sum_{m != 0} |q_m|^(2k)` on SO(2) and
/// `sum_{l >= 1} (2l+1)^2 |c_l|^(2k)` for conjugation-invariant SO(3) laws.
/// The quenched distance itself satisfies `E(k) = 2 sup_n TV <= bound(k)`.
pub fn mixing_bound_so2(spectrum: &CircleSpectrum, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidParameter("mixing bound needs k >= 1".into()));
    }
    let env = spectrum
        .envelope
        .ok_or(Error::NoL2Density { k })?;
    if env.c == 0.0 {
        return Ok(0.0);
    }
    let limit = spectrum.exact_range();
    let mut sum = Kahan::new();
    let mut tail;
    let mut m = 0usize;
    loop {
        m += 1;
        let q2k = spectrum.coeff(m as i64).norm().powi(2 * k as i32)
            + spectrum.coeff(-(m as i64)).norm().powi(2 * k as i32);
        sum.add(q2k);
        tail = so2_tail(env, k, m);
        if tail <= 1e-9 * sum.value().max(1e-12) || m >= limit {
            break;
        }
    }
    Ok((sum.value() + tail).sqrt())
}

/// `2 integral_M^inf (c/x^p)^(2k) dx`, a bound on the two-sided tail.
/// Evaluated in log space: `c^(2k)` alone overflows long before the tail
/// stops being a perfectly ordinary small number.
fn so2_tail(env: Envelope, k: usize, m: usize) -> f64 {
    if env.c == 0.0 {
        return 0.0;
    }
    let e = 2.0 * env.power as f64 * k as f64;
    let log_tail = 2.0_f64.ln() + 2.0 * k as f64 * env.c.ln() + (1.0 - e) * (m as f64).ln()
        - (e - 1.0).ln();
    log_tail.exp()
}

pub fn mixing_bound_char(spectrum: &CharacterSpectrum, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidParameter("mixing bound needs k >= 1".into()));
    }
    let env = spectrum.envelope.ok_or(Error::NoL2Density { k })?;
    if env.c == 0.0 {
        return Ok(0.0);
    }
    // summand tail ~ C^(2k) (2l+1)^(2-2k): the sum diverges at k = 1, the
    // law itself need not have an L2 density before a few convolutions.
    if 2 * k <= 3 {
        return Err(Error::NoL2Density { k });
    }
    let mut sum = Kahan::new();
    for l in 1..=spectrum.l_max {
        let d = (2 * l + 1) as f64;
        sum.add(d * d * spectrum.coeff(l).abs().powi(2 * k as i32));
    }
    // integral tail in log space: sum_{l>L} C^{2k} (2l+1)^{2-2k}
    let kf = k as f64;
    let log_tail = 2.0 * kf * env.c.ln()
        + (3.0 - 2.0 * kf) * ((2 * spectrum.l_max + 1) as f64).ln()
        - (2.0 * (2.0 * kf - 3.0)).ln();
    Ok((sum.value() + log_tail.exp()).sqrt())
}

/// L2 norm of the density with respect to Haar, certified through the
/// spectral sum at k = 1; `None` when no L2 density can be certified.
pub fn l2_density_norm_so2(spectrum: &CircleSpectrum) -> Option<f64> {
    mixing_bound_so2(spectrum, 1).ok().map(|s| (1.0 + s * s).sqrt())
}

pub fn l2_density_norm_char(spectrum: &CharacterSpectrum) -> Option<f64> {
    match spectrum.envelope {
        Some(env) if env.c == 0.0 => Some(1.0),
        // with a 1/(2l+1) envelope the k=1 sum cannot be certified finite
        _ => None,
    }
}

/// Mixing report: the constant, the L2 norm when certified, the first
/// horizon at which the spectral sum converges, and the bound table.
#[derive(Debug, Clone)]
pub struct MixingReport {
    pub h: MixingConstant,
    pub l2_density_norm: Option<f64>,
    /// Smallest k with a certified finite bound (1 when the law itself has
    /// an L2 density).
    pub n0: Option<usize>,
    pub bounds: Vec<(usize, Option<f64>)>,
}

impl MixingReport {
    pub fn to_json(&self) -> Value {
        json!({
            "h": self.h.h,
            "h_tail_slack": self.h.tail_slack,
            "h_certified": self.h.certified,
            "l2_norm": self.l2_density_norm,
            "n0": self.n0,
            "bounds": self.bounds.iter().map(|(k, b)| json!([k, b])).collect::<Vec<_>>(),
        })
    }
}

pub enum Spectrum<'a> {
    Circle(&'a CircleSpectrum),
    Character(&'a CharacterSpectrum),
}

pub fn mixing_report(spectrum: &Spectrum<'_>, ks: &[usize]) -> MixingReport {
    let (h, l2, bound): (MixingConstant, Option<f64>, Box<dyn Fn(usize) -> Result<f64>>) =
        match spectrum {
            Spectrum::Circle(s) => (
                mixing_h_so2(s),
                l2_density_norm_so2(s),
                Box::new(move |k| mixing_bound_so2(s, k)),
            ),
            Spectrum::Character(s) => (
                mixing_h_char(s),
                l2_density_norm_char(s),
                Box::new(move |k| mixing_bound_char(s, k)),
            ),
        };
    let n0 = (1..=16).find(|k| bound(*k).is_ok());
    let bounds = ks.iter().map(|&k| (k, bound(k).ok())).collect();
    MixingReport { h, l2_density_norm: l2, n0, bounds }
}

/// Total-variation distance to Haar of the quenched k-step law on SO(2).
#[derive(Debug, Clone, Copy)]
pub struct TvEstimate {
    pub tv: f64,
    /// Certified L1 bound on the spectral truncation error.
    pub truncation_bound: f64,
    /// Difference between the two finest reconstruction grids; an estimate
    /// of the quadrature error, not a certified bound.
    pub grid_error: f64,
    pub m_used: usize,
}

/// TV distance between the law of `w_{n+1} r_{n+1} ... w_{n+k} r_{n+k}` and
/// Haar on SO(2), from the convolution spectrum
/// `e^{i m (g_1 + ... + g_k)} q_m^k`.
///
/// The density is reconstructed from the truncated Fourier series on a
/// uniform grid (inverse FFT) and integrated by the rectangle rule; the
/// spectral cutoff is chosen so the certified L1 tail drops below 1e-6
/// where the envelope allows, and is reported either way.
pub fn tv_to_haar_so2(
    spectrum: &CircleSpectrum,
    omega_angles: &[f64],
    k: usize,
) -> Result<TvEstimate> {
    if k == 0 {
        return Err(Error::InvalidParameter("tv horizon must be >= 1".into()));
    }
    if omega_angles.len() < k {
        return Err(Error::InvalidParameter(format!(
            "need at least k = {k} backbone angles, got {}",
            omega_angles.len()
        )));
    }
    let env = spectrum.envelope.ok_or(Error::NoL2Density { k })?;

    // cutoff: smallest power of two with certified tail below target
    const M_CAP: usize = 1 << 18;
    let target = 1e-6;
    let mut m_used = 64usize.min(spectrum.exact_range());
    while so2_tail(env, k, m_used).sqrt() > target && m_used * 2 <= M_CAP.min(spectrum.exact_range())
    {
        m_used *= 2;
    }
    let truncation_bound = so2_tail(env, k, m_used).sqrt();

    let phase: f64 = omega_angles[..k].iter().sum();
    let coeff = |m: i64| -> Complex64 {
        let q = spectrum.coeff(m);
        // |q|^k e^{i k arg(q)} e^{i m phase}
        q.powu(k as u32) * Complex64::new(0.0, m as f64 * phase).exp()
    };

    let tv_on_grid = |grid: usize| -> f64 {
        let mut buf = vec![Complex64::new(0.0, 0.0); grid];
        buf[0] = Complex64::new(1.0, 0.0);
        for m in 1..=m_used {
            let c = coeff(m as i64);
            buf[m] = c;
            buf[grid - m] = c.conj();
        }
        FftPlanner::new().plan_fft_forward(grid).process(&mut buf);
        let sum: f64 = buf.iter().map(|f| (f.re - 1.0).abs()).sum();
        0.5 * sum / grid as f64
    };

    let grid = (4 * m_used).next_power_of_two().max(1 << 16);
    let coarse = tv_on_grid(grid / 2);
    let tv = tv_on_grid(grid);
    Ok(TvEstimate { tv, truncation_bound, grid_error: (tv - coarse).abs(), m_used })
}

/// Disorder input of the 2D diffusion oracle.
pub enum AngleDisorder<'a> {
    /// No backbone: all disorder angles are zero.
    Homogeneous,
    /// iid angles with known characteristic value `E exp(i gamma)`;
    /// the expectation over the backbone is then exact.
    IidCharacter(Complex64),
    /// Ergodic averaging of one realization over shifted windows.
    Ergodic { model: &'a DisorderModel, shifts: usize },
}

/// Independent 2D evaluation of the diffusion constant,
/// `sigma^2 = 1/2 + sum_{n>=1} |q_1|^n E cos(G_n + n arg q_1)`, with the
/// backbone angle sums `G_n` handled per [`AngleDisorder`] mode.
pub fn sigma2_oracle_2d(
    spectrum: &CircleSpectrum,
    disorder: &AngleDisorder<'_>,
    tail_tolerance: f64,
    max_terms: usize,
) -> Result<DiffusionEstimate> {
    let q1 = spectrum.coeff(1);
    let r = q1.norm();
    if r >= 1.0 {
        return Err(Error::SeriesNotCertified { rho: r });
    }
    if r == 0.0 {
        return Ok(DiffusionEstimate { sigma2: 0.5, truncation_k: 0, tail_bound: 0.0, mc_se: None });
    }
    let theta_bar = q1.arg();
    // |q1|^(K+1)/(1-|q1|) <= tol
    let k_max = {
        let target = tail_tolerance * (1.0 - r);
        let k = if target >= r { 0 } else { (target.ln() / r.ln() - 1.0).ceil() as usize };
        k.min(max_terms)
    };
    let tail = r.powi(k_max as i32 + 1) / (1.0 - r);

    let powers: Vec<f64> = (1..=k_max).map(|n| r.powi(n as i32)).collect();
    let mut series = Kahan::new();
    let mut mc_se = None;
    match disorder {
        AngleDisorder::Homogeneous => {
            for n in 1..=k_max {
                series.add(powers[n - 1] * (theta_bar * n as f64).cos());
            }
        }
        AngleDisorder::IidCharacter(z) => {
            // E cos(G_n + n theta_bar) = Re[(z e^{i theta_bar})^n]
            let step = z * Complex64::new(0.0, theta_bar).exp();
            let mut w = Complex64::new(1.0, 0.0);
            for n in 1..=k_max {
                w *= step;
                series.add(powers[n - 1] * w.re);
            }
        }
        AngleDisorder::Ergodic { model, shifts } => {
            if model.dim() != 2 {
                return Err(Error::DimensionMismatch(model.dim(), 2));
            }
            if *shifts == 0 {
                return Err(Error::InvalidParameter("ergodic oracle needs shifts >= 1".into()));
            }
            let l_total = if model.is_constant() { 1 } else { *shifts };
            let flat = model.window_flat(1, l_total + k_max);
            let angles: Vec<f64> =
                (0..l_total + k_max).map(|j| flat[j * 4 + 2].atan2(flat[j * 4])).collect();

            let batch_len = (l_total / 64).clamp(64, 65_536).min(l_total.max(1));
            let n_batches = l_total.div_ceil(batch_len);
            let results: Vec<(Vec<f64>, f64, usize)> = (0..n_batches)
                .into_par_iter()
                .map(|b| {
                    let lo = b * batch_len;
                    let hi = ((b + 1) * batch_len).min(l_total);
                    let mut sums = vec![0.0; k_max];
                    let mut s_sum = 0.0;
                    for l in lo..hi {
                        let mut gamma = 0.0;
                        let mut s_l = Kahan::new();
                        for n in 1..=k_max {
                            gamma += angles[l + n - 1];
                            let term = powers[n - 1] * (gamma + theta_bar * n as f64).cos();
                            sums[n - 1] += term;
                            s_l.add(term);
                        }
                        s_sum += s_l.value();
                    }
                    (sums, s_sum, hi - lo)
                })
                .collect();
            let mut totals = vec![0.0; k_max];
            let vecs: Vec<Vec<f64>> = results.iter().map(|(v, _, _)| v.clone()).collect();
            pairwise_sum_vecs(&vecs, &mut totals);
            for t in &totals {
                series.add(t / l_total as f64);
            }
            if !model.is_constant() && n_batches >= 2 {
                let means: Vec<f64> = results.iter().map(|(_, s, n)| s / *n as f64).collect();
                let (_, sd) = mean_sd(&means);
                mc_se = Some(sd / (n_batches as f64).sqrt());
            }
        }
    }

    Ok(DiffusionEstimate {
        sigma2: 0.5 + series.value(),
        truncation_k: k_max,
        tail_bound: tail,
        mc_se,
    })
}

/// Bound on the norm of the uncentered drift: `|E Z_N| <= |q_1|/(1-|q_1|)`
/// for every N and every backbone.
pub fn drift_bound_2d(spectrum: &CircleSpectrum) -> Result<f64> {
    let r = spectrum.coeff(1).norm();
    if r >= 1.0 {
        return Err(Error::SeriesNotCertified { rho: r });
    }
    Ok(r / (1.0 - r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{sigma2_iid_closed, sigma2_series, SeriesTruncation};
    use crate::numeric::gauss_legendre;
    use crate::rotgroup::Rotation;
    use std::f64::consts::PI;

    fn window_law() -> RotationLaw {
        RotationLaw::so2_window(-PI / 10.0, PI / 10.0).unwrap()
    }

    fn window_spectrum(m_max: usize) -> CircleSpectrum {
        so2_spectrum(&window_law(), m_max).unwrap()
    }

    #[test]
    fn so2_spectrum_examples() {
        let haar = so2_spectrum(&RotationLaw::haar(2).unwrap(), 16).unwrap();
        for m in 1..=16 {
            assert_eq!(haar.coeff(m).norm(), 0.0);
        }

        let s = window_spectrum(8);
        let a = PI / 10.0;
        assert!((s.coeff(1).re - a.sin() / a).abs() < 1e-14);
        assert!((s.coeff(2).re - (2.0 * a).sin() / (2.0 * a)).abs() < 1e-14);
        assert!(s.coeff(1).im.abs() < 1e-15);
        assert!((s.coeff(1).re - 0.983632).abs() < 5e-7);
        assert!((s.coeff(2).re - 0.935489).abs() < 5e-7);

        let delta = so2_spectrum(&RotationLaw::dirac(Rotation::identity(2)).unwrap(), 8).unwrap();
        for m in -8..=8 {
            assert!((delta.coeff(m) - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        }

        assert!(so2_spectrum(&RotationLaw::haar(3).unwrap(), 4).is_err());
    }

    #[test]
    fn so2_spectrum_symmetry_invariants() {
        let law = RotationLaw::so2_window(0.1, 0.9).unwrap();
        let s = so2_spectrum(&law, 32).unwrap();
        assert!((s.coeff(0) - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        for m in 1..=32 {
            assert!((s.coeff(-m) - s.coeff(m).conj()).norm() < 1e-14);
            assert!(s.coeff(m).norm() <= 1.0 + 1e-14);
        }
    }

    #[test]
    fn convolution_spectrum_matches_self_convolved_density() {
        // Q*Q of the uniform window is the triangle density on (-2a, 2a);
        // its coefficients, via quadrature, must equal q_m^2.
        let a = PI / 10.0;
        let s = window_spectrum(8);
        let (nodes, weights) = gauss_legendre(64);
        // integrate e^{imx} (2a - |x|)/(4a^2) separately over each smooth
        // half of the triangle
        let half_integral = |m: i64, lo: f64, hi: f64| {
            let mid = 0.5 * (hi + lo);
            let scale = 0.5 * (hi - lo);
            let mut acc = Complex64::new(0.0, 0.0);
            for (x, w) in nodes.iter().zip(weights) {
                let t = mid + scale * x;
                let dens = (2.0 * a - t.abs()) / (4.0 * a * a);
                acc += Complex64::new(0.0, m as f64 * t).exp() * dens * w * scale;
            }
            acc
        };
        for m in 1..=8i64 {
            let acc = half_integral(m, -2.0 * a, 0.0) + half_integral(m, 0.0, 2.0 * a);
            let q2 = s.coeff(m) * s.coeff(m);
            assert!((acc - q2).norm() < 1e-12, "m={m}: {acc} vs {q2}");
        }
    }

    #[test]
    fn parseval_for_the_window_density() {
        // ||f||_2^2 = 10 for the pi/10 window (density 10 on Haar mass 1/10)
        let s = window_spectrum(64);
        let mut sum = Kahan::new();
        sum.add(1.0);
        let mm = 40_000_000i64;
        let a = PI / 10.0;
        for m in 1..=mm {
            let q = (m as f64 * a).sin() / (m as f64 * a);
            sum.add(2.0 * q * q);
        }
        let env = s.envelope.unwrap();
        let tail = so2_tail(env, 1, mm as usize);
        assert!((sum.value() + tail - 10.0).abs() < 1e-6, "{}", sum.value() + tail);
        // and the certified l2 norm agrees
        let l2 = l2_density_norm_so2(&s).unwrap();
        assert!((l2 * l2 - 10.0).abs() < 2e-4, "l2^2 = {}", l2 * l2);
    }

    #[test]
    fn char_spectrum_examples() {
        let dirac = RotationLaw::dirac(Rotation::identity(3)).unwrap();
        let s = so3_char_spectrum(&dirac, 6).unwrap();
        for l in 0..=6 {
            assert!((s.coeff(l) - 1.0).abs() < 1e-15);
        }

        let uniform =
            RotationLaw::so3_conjugation_invariant(AngleDensity::UniformFullCircle).unwrap();
        let s = so3_char_spectrum(&uniform, 12).unwrap();
        for l in 1..=12 {
            assert!(
                (s.coeff(l) - 1.0 / (2 * l + 1) as f64).abs() < 1e-12,
                "c_{l} = {}",
                s.coeff(l)
            );
        }
        assert_eq!(s.coeff(0), 1.0);

        let off_identity = RotationLaw::dirac(
            Rotation::from_axis_angle(&[0.0, 0.0, 1.0], 1.0).unwrap(),
        )
        .unwrap();
        assert!(so3_char_spectrum(&off_identity, 4).is_err());
    }

    #[test]
    fn mixing_h_examples() {
        let s = window_spectrum(64);
        let h = mixing_h_so2(&s);
        let a = PI / 10.0;
        assert!((h.h - a.sin() / a).abs() < 1e-14, "attained at m = 1");
        assert!(h.certified);
        assert_eq!(h.tail_slack, Some(0.0));

        let haar = so2_spectrum(&RotationLaw::haar(2).unwrap(), 16).unwrap();
        let h = mixing_h_so2(&haar);
        assert_eq!(h.h, 0.0);
        assert!(h.certified);

        let dirac = so2_spectrum(&RotationLaw::dirac(Rotation::rotation_2d(1.0)).unwrap(), 16)
            .unwrap();
        let h = mixing_h_so2(&dirac);
        assert!((h.h - 1.0).abs() < 1e-12);
        assert!(!h.certified);
    }

    #[test]
    fn mixing_h_char_for_shipped_conjugation_invariant_laws() {
        let uniform =
            RotationLaw::so3_conjugation_invariant(AngleDensity::UniformFullCircle).unwrap();
        let s = so3_char_spectrum(&uniform, 64).unwrap();
        let h = mixing_h_char(&s);
        assert!((h.h - 1.0 / 3.0).abs() < 1e-12);
        assert!(h.certified);
        assert!(h.h + h.tail_slack.unwrap() < 1.0);

        let window = RotationLaw::so3_conjugation_invariant(AngleDensity::Window {
            lo: 0.4,
            hi: 2.8,
        })
        .unwrap();
        let s = so3_char_spectrum(&window, 128).unwrap();
        let h = mixing_h_char(&s);
        assert!(h.certified);
        assert!(h.h < 1.0 && h.h + h.tail_slack.unwrap() < 1.0, "h = {:?}", h);
    }

    #[test]
    fn mixing_bound_examples() {
        let haar = so2_spectrum(&RotationLaw::haar(2).unwrap(), 16).unwrap();
        for k in [1usize, 3, 10] {
            assert_eq!(mixing_bound_so2(&haar, k).unwrap(), 0.0);
        }

        let s = window_spectrum(65_536);
        let h = mixing_h_so2(&s).h;
        // bound(k) <= sqrt(||f||_2^2 - 1) h^(k-1) = 3 h^(k-1)
        for k in [1usize, 2, 10, 100, 300, 500] {
            let b = mixing_bound_so2(&s, k).unwrap();
            assert!(
                b <= 3.0 * h.powi(k as i32 - 1) * (1.0 + 1e-5),
                "k={k}: {b} vs {}",
                3.0 * h.powi(k as i32 - 1)
            );
        }
        let b300 = mixing_bound_so2(&s, 300).unwrap();
        assert!(3.0 * h.powi(299) < 0.0216, "{}", 3.0 * h.powi(299));
        assert!(b300 <= 0.0216);

        // atoms have no envelope: divergent
        let atoms = so2_spectrum(
            &RotationLaw::so2_atoms(vec![PI / 2.0, -PI / 2.0], vec![0.5, 0.5]).unwrap(),
            16,
        )
        .unwrap();
        assert!(matches!(mixing_bound_so2(&atoms, 3), Err(Error::NoL2Density { .. })));
    }

    #[test]
    fn mixing_bound_char_uniform_angle() {
        let uniform =
            RotationLaw::so3_conjugation_invariant(AngleDensity::UniformFullCircle).unwrap();
        let s = so3_char_spectrum(&uniform, 4096).unwrap();
        // k = 1: the law itself has no L2 density (sum of (2l+1)^2 c_l^2 = sum 1)
        assert!(matches!(mixing_bound_char(&s, 1), Err(Error::NoL2Density { k: 1 })));
        // k = 2: sum (2l+1)^(-2) converges
        let b = mixing_bound_char(&s, 2).unwrap();
        let exact: f64 = (1..100_000u64).map(|l| ((2 * l + 1) as f64).powi(-2)).sum::<f64>();
        assert!((b * b - exact).abs() < 1e-4, "b^2 = {} vs {exact}", b * b);

        let report = mixing_report(&Spectrum::Character(&s), &[1, 2, 3]);
        assert_eq!(report.n0, Some(2));
        assert!(report.l2_density_norm.is_none());
        assert!(report.bounds[0].1.is_none());
        assert!(report.bounds[1].1.is_some());
    }

    #[test]
    fn tv_examples() {
        let haar = so2_spectrum(&RotationLaw::haar(2).unwrap(), 16).unwrap();
        let est = tv_to_haar_so2(&haar, &[0.3], 1).unwrap();
        assert!(est.tv < 1e-12);

        // k = 1: the window density is 10 on an arc of Haar mass 1/10,
        // so TV = (1/2)(9 * 1/10 + 1 * 9/10) = 0.9 exactly.
        let s = window_spectrum(4096);
        let est = tv_to_haar_so2(&s, &[0.7], 1).unwrap();
        assert!(
            (est.tv - 0.9).abs() <= est.truncation_bound + 1e-3,
            "tv = {} (+- {})",
            est.tv,
            est.truncation_bound
        );

        // quenched phases only rotate the density: TV is backbone-free up
        // to grid discretization of the shifted jump
        let est2 = tv_to_haar_so2(&s, &[-2.1], 1).unwrap();
        assert!((est.tv - est2.tv).abs() < 2e-4, "{} vs {}", est.tv, est2.tv);
    }

    #[test]
    fn tv_is_nonincreasing_and_below_half_bound() {
        let s = window_spectrum(65_536);
        let omega: Vec<f64> = (0..40).map(|i| 0.1 * i as f64).collect();
        let mut prev = f64::INFINITY;
        for k in 1..=40 {
            let est = tv_to_haar_so2(&s, &omega, k).unwrap();
            let bound = mixing_bound_so2(&s, k).unwrap();
            assert!(
                est.tv <= bound / 2.0 + est.truncation_bound + 1e-9,
                "k={k}: tv {} vs bound/2 {}",
                est.tv,
                bound / 2.0
            );
            assert!(est.tv <= prev + est.truncation_bound + 1e-9, "k={k}");
            prev = est.tv;
        }
    }

    #[test]
    fn oracle_homogeneous_matches_geometric_series() {
        let s = window_spectrum(64);
        let est =
            sigma2_oracle_2d(&s, &AngleDisorder::Homogeneous, 1e-10, 100_000).unwrap();
        let a = PI / 10.0;
        let q1 = a.sin() / a;
        let expect = 0.5 + q1 / (1.0 - q1);
        assert!((est.sigma2 - expect).abs() <= est.tail_bound + 1e-10);
        assert!((expect - 60.593487).abs() < 1e-5, "sigma2 = {expect}");
    }

    #[test]
    fn oracle_vanishing_first_coefficient() {
        let atoms =
            RotationLaw::so2_atoms(vec![PI / 2.0, -PI / 2.0], vec![0.5, 0.5]).unwrap();
        let s = so2_spectrum(&atoms, 8).unwrap();
        assert!(s.coeff(1).norm() < 1e-15);
        let est = sigma2_oracle_2d(&s, &AngleDisorder::Homogeneous, 1e-10, 1000).unwrap();
        assert_eq!(est.sigma2, 0.5);
    }

    #[test]
    fn oracle_iid_matches_resolvent_closed_form() {
        let s = window_spectrum(64);
        let z = Complex64::new((PI / 4.0).cos(), 0.0); // E e^{i gamma}, atoms +-pi/4
        let est = sigma2_oracle_2d(&s, &AngleDisorder::IidCharacter(z), 1e-12, 200_000).unwrap();

        let law = window_law();
        let disorder = RotationLaw::so2_atoms(vec![PI / 4.0, -PI / 4.0], vec![0.5, 0.5]).unwrap();
        let closed = sigma2_iid_closed(law.r_bar().unwrap(), disorder.r_bar().unwrap()).unwrap();
        assert!(
            (est.sigma2 - closed).abs() <= est.tail_bound + 1e-10,
            "oracle {} vs closed {closed}",
            est.sigma2
        );
    }

    #[test]
    fn oracle_ergodic_agrees_with_series_route() {
        let law = window_law();
        let disorder_law =
            RotationLaw::so2_atoms(vec![PI / 4.0, -PI / 4.0], vec![0.5, 0.5]).unwrap();
        let model = crate::disorder::DisorderModel::iid(disorder_law, 4242);
        let s = so2_spectrum(&law, 64).unwrap();

        let oracle = sigma2_oracle_2d(
            &s,
            &AngleDisorder::Ergodic { model: &model, shifts: 30_000 },
            1e-8,
            100_000,
        )
        .unwrap();
        let series = sigma2_series(&law, &model, SeriesTruncation::TailBelow(1e-8), 30_000).unwrap();

        // same realization and same shift set: the two routes evaluate the
        // same ergodic average through different algebra
        let se = oracle.mc_se.unwrap().hypot(series.mc_se.unwrap());
        assert!(
            (oracle.sigma2 - series.sigma2).abs()
                <= oracle.tail_bound + series.tail_bound + 3.0 * se,
            "oracle {} vs series {}",
            oracle.sigma2,
            series.sigma2
        );
    }

    #[test]
    fn drift_bound_values() {
        let haar = so2_spectrum(&RotationLaw::haar(2).unwrap(), 8).unwrap();
        assert_eq!(drift_bound_2d(&haar).unwrap(), 0.0);

        let s = window_spectrum(8);
        let b = drift_bound_2d(&s).unwrap();
        assert!((b - 60.093487).abs() < 1e-5, "drift bound {b}");

        let dirac = so2_spectrum(&RotationLaw::dirac(Rotation::rotation_2d(0.5)).unwrap(), 8)
            .unwrap();
        assert!(drift_bound_2d(&dirac).is_err());
    }

    #[test]
    fn all_nontrivial_window_coefficients_stay_below_one() {
        // dense-support consistency: |q_m| < 1 for every computed m >= 1
        let s = window_spectrum(4096);
        for m in 1..=4096i64 {
            assert!(s.coeff(m).norm() < 1.0);
        }
    }
}

//! Flat row-major d x d kernels for the simulation hot loops.
//!
//! The public types wrap `nalgebra` matrices, which is convenient for the
//! spectral routines but too heavy for 1e8-step chain updates. These helpers
//! operate on plain slices (`row*d + col` layout) with no allocation.

/// out = a * b, all d x d row-major. `out` must not alias `a` or `b`.
#[inline]
pub fn mul(a: &[f64], b: &[f64], out: &mut [f64], d: usize) {
    debug_assert!(a.len() == d * d && b.len() == d * d && out.len() == d * d);
    for i in 0..d {
        let ar = &a[i * d..(i + 1) * d];
        let or = &mut out[i * d..(i + 1) * d];
        or.fill(0.0);
        for (k, &aik) in ar.iter().enumerate() {
            let br = &b[k * d..(k + 1) * d];
            for (o, &bkj) in or.iter_mut().zip(br) {
                *o += aik * bkj;
            }
        }
    }
}

/// Row-vector update: out^T = a^T * m.
#[inline]
pub fn vec_mat(a: &[f64], m: &[f64], out: &mut [f64], d: usize) {
    debug_assert!(a.len() == d && m.len() == d * d && out.len() == d);
    out.fill(0.0);
    for (k, &ak) in a.iter().enumerate() {
        let mr = &m[k * d..(k + 1) * d];
        for (o, &mkj) in out.iter_mut().zip(mr) {
            *o += ak * mkj;
        }
    }
}

/// Frobenius norm of (m^T m - I): orthonormality drift of a near-rotation.
pub fn orthonormality_drift(m: &[f64], d: usize) -> f64 {
    let mut acc = 0.0;
    for i in 0..d {
        for j in i..d {
            let mut dot = 0.0;
            for k in 0..d {
                dot += m[k * d + i] * m[k * d + j];
            }
            let dev = if i == j { dot - 1.0 } else { dot };
            acc += if i == j { dev * dev } else { 2.0 * dev * dev };
        }
    }
    acc.sqrt()
}

/// In-place modified Gram-Schmidt on the columns, two passes for stability.
/// On a near-orthogonal input this restores orthonormality to ~1e-15.
pub fn mgs_orthonormalize(m: &mut [f64], d: usize) {
    for j in 0..d {
        for _pass in 0..2 {
            for i in 0..j {
                let mut dot = 0.0;
                for r in 0..d {
                    dot += m[r * d + i] * m[r * d + j];
                }
                for r in 0..d {
                    m[r * d + j] -= dot * m[r * d + i];
                }
            }
        }
        let mut norm = 0.0;
        for r in 0..d {
            norm += m[r * d + j] * m[r * d + j];
        }
        let norm = norm.sqrt();
        for r in 0..d {
            m[r * d + j] /= norm;
        }
    }
}

/// Determinant by LU with partial pivoting; clobbers `scratch`.
pub fn det(m: &[f64], scratch: &mut [f64], d: usize) -> f64 {
    scratch.copy_from_slice(m);
    let a = scratch;
    let mut det = 1.0;
    for c in 0..d {
        let mut piv = c;
        for r in c + 1..d {
            if a[r * d + c].abs() > a[piv * d + c].abs() {
                piv = r;
            }
        }
        if a[piv * d + c] == 0.0 {
            return 0.0;
        }
        if piv != c {
            for j in 0..d {
                a.swap(c * d + j, piv * d + j);
            }
            det = -det;
        }
        det *= a[c * d + c];
        for r in c + 1..d {
            let f = a[r * d + c] / a[c * d + c];
            for j in c..d {
                a[r * d + j] -= f * a[c * d + j];
            }
        }
    }
    det
}

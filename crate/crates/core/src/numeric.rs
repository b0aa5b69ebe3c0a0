//! Small numerical helpers shared by the transform code.

use crate::error::{PollError, Result};
use num_complex::Complex64;

pub type C64 = Complex64;

pub fn re(x: f64) -> C64 {
    C64::new(x, 0.0)
}

/// exp(z) - 1 without cancellation near 0.
pub fn expm1(z: C64) -> C64 {
    if z.im == 0.0 {
        return re(z.re.exp_m1());
    }
    if z.norm() < 1e-3 {
        // Horner on the Taylor series, error below |z|^8/8!
        let mut acc = re(1.0 / 5040.0);
        for k in (1..=6).rev() {
            acc = acc * z + 1.0 / factorial(k);
        }
        acc * z
    } else {
        z.exp() - 1.0
    }
}

/// ln(1 + z) without cancellation near 0.
pub fn ln1p(z: C64) -> C64 {
    if z.im == 0.0 && z.re > -1.0 {
        return re(z.re.ln_1p());
    }
    if z.norm() < 1e-3 {
        let mut acc = C64::new(0.0, 0.0);
        for k in (1..=8).rev() {
            let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
            acc = acc * z + sign / k as f64;
        }
        acc * z
    } else {
        (z + 1.0).ln()
    }
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|x| x as f64).product()
}

/// Derivative estimate together with an error estimate from the
/// extrapolation tableau.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

pub const FD_STEPS: [f64; 3] = [1e-3, 5e-4, 2.5e-4];

/// First or second derivative of `f` at `x0` by central differences on the
/// three standard steps followed by two levels of Richardson extrapolation.
/// `f0` is the known value at the base point (used for the second derivative).
pub fn derivative<F>(f: F, x0: f64, f0: f64, order: u32) -> Result<Estimate>
where
    F: Fn(f64) -> Result<f64>,
{
    derivative_with_steps(f, x0, f0, order, FD_STEPS)
}

pub fn derivative_with_steps<F>(
    f: F,
    x0: f64,
    f0: f64,
    order: u32,
    steps: [f64; 3],
) -> Result<Estimate>
where
    F: Fn(f64) -> Result<f64>,
{
    let (v, e) = richardson(|x| f(x).map(re), x0, re(f0), order, steps)?;
    Ok(Estimate { value: v.re, error: e })
}

/// Complex-valued counterpart of [`derivative`]; the error is the modulus of
/// the last tableau correction.
pub fn derivative_complex<F>(f: F, x0: f64, f0: C64, order: u32) -> Result<(C64, f64)>
where
    F: Fn(f64) -> Result<C64>,
{
    richardson(f, x0, f0, order, FD_STEPS)
}

fn richardson<F>(f: F, x0: f64, f0: C64, order: u32, steps: [f64; 3]) -> Result<(C64, f64)>
where
    F: Fn(f64) -> Result<C64>,
{
    let mut d = [re(0.0); 3];
    for (slot, &h) in d.iter_mut().zip(steps.iter()) {
        let up = f(x0 + h)?;
        let dn = f(x0 - h)?;
        *slot = match order {
            1 => (up - dn) / (2.0 * h),
            2 => (up - f0 * 2.0 + dn) / (h * h),
            _ => return Err(PollError::OutOfRange(format!("derivative order {order}"))),
        };
    }
    // steps halve, leading error term is h^2
    let r1a = (d[1] * 4.0 - d[0]) / 3.0;
    let r1b = (d[2] * 4.0 - d[1]) / 3.0;
    let r2 = (r1b * 16.0 - r1a) / 15.0;
    if !(r2.re.is_finite() && r2.im.is_finite()) {
        return Err(PollError::NoConvergence {
            what: "finite-difference derivative",
            iterations: 3,
        });
    }
    Ok((r2, (r2 - r1b).norm()))
}

/// Solve `a x = b` in the least-squares sense via SVD and return the solution
/// together with the numerical rank and the condition number of the retained
/// spectrum.
pub fn lstsq(
    a: nalgebra::DMatrix<f64>,
    b: nalgebra::DVector<f64>,
) -> Result<(nalgebra::DVector<f64>, usize, f64)> {
    let cols = a.ncols();
    let svd = reliable_svd(&a)?;
    let smax = svd.singular_values.max();
    let eps = smax * 1e-11 * (cols.max(1) as f64);
    let rank = svd.singular_values.iter().filter(|&&s| s > eps).count();
    let smin = svd
        .singular_values
        .iter()
        .copied()
        .filter(|&s| s > eps)
        .fold(f64::INFINITY, f64::min);
    let solve = |rhs: &nalgebra::DVector<f64>| {
        svd.solve(rhs, eps).map_err(|e| PollError::Singular(e.to_string()))
    };
    let mut x = solve(&b)?;
    // a few rounds of iterative refinement
    let mut best = (&b - &a * &x).amax();
    for _ in 0..4 {
        let r = &b - &a * &x;
        let cand = &x + solve(&r)?;
        let res = (&b - &a * &cand).amax();
        if res < best {
            x = cand;
            best = res;
        } else {
            break;
        }
    }
    Ok((x, rank, smax / smin))
}

/// nalgebra's SVD occasionally stops with singular vectors that reconstruct
/// the matrix to only ~1e-3, depending on the threshold. Try a few thresholds
/// on the matrix and its transpose and keep the most accurate factorization.
fn reliable_svd(a: &nalgebra::DMatrix<f64>) -> Result<nalgebra::SVD<f64, nalgebra::Dyn, nalgebra::Dyn>> {
    let scale = a.amax().max(f64::MIN_POSITIVE);
    let mut best: Option<(f64, nalgebra::SVD<f64, nalgebra::Dyn, nalgebra::Dyn>)> = None;
    for transpose in [false, true] {
        for eps in [f64::EPSILON, 1e-25, 1e-20] {
            let cand = if transpose {
                a.transpose().try_svd(true, true, eps, 1_000_000).map(|s| nalgebra::SVD {
                    u: s.v_t.map(|v| v.transpose()),
                    v_t: s.u.map(|u| u.transpose()),
                    singular_values: s.singular_values,
                })
            } else {
                a.clone().try_svd(true, true, eps, 1_000_000)
            };
            let Some(svd) = cand else { continue };
            let Ok(rec) = svd.clone().recompose() else { continue };
            let err = (rec - a).amax() / scale;
            if err < 1e-13 {
                return Ok(svd);
            }
            if best.as_ref().is_none_or(|(e, _)| err < *e) {
                best = Some((err, svd));
            }
        }
    }
    best.map(|(_, s)| s).ok_or(PollError::NoConvergence {
        what: "singular value decomposition",
        iterations: 1_000_000,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expm1_matches_direct_away_from_zero() {
        let z = C64::new(0.3, -0.2);
        assert!((expm1(z) - (z.exp() - 1.0)).norm() < 1e-15);
        let small = C64::new(1e-6, 2e-6);
        let want = small + small * small / 2.0 + small * small * small / 6.0;
        assert!((expm1(small) - want).norm() < 1e-22);
    }

    #[test]
    fn ln1p_inverts_expm1() {
        for z in [C64::new(1e-5, 1e-4), C64::new(0.2, 0.1), re(-0.5)] {
            assert!((expm1(ln1p(z)) - z).norm() < 1e-14);
        }
    }

    #[test]
    fn richardson_second_derivative_of_exp() {
        let d = derivative(|x| Ok((-x).exp()), 0.0, 1.0, 2).unwrap();
        assert!((d.value - 1.0).abs() < 1e-9);
        let d1 = derivative(|x| Ok((-2.0 * x).exp()), 0.0, 1.0, 1).unwrap();
        assert!((d1.value + 2.0).abs() < 1e-10);
    }
}

//! Small numerical kernels shared by the modules: a fallible Brent solver,
//! adaptive wrappers around the `quadrature` rules, least squares and grids.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RootError<E> {
    #[error("endpoints do not bracket a root: f({lo}) = {flo}, f({hi}) = {fhi}")]
    NotBracketed { lo: f64, hi: f64, flo: f64, fhi: f64 },
    #[error("iteration limit {0} reached")]
    IterationLimit(usize),
    #[error(transparent)]
    Eval(E),
}

/// Stopping rule for [`brent`]: stop when `|f| <= ftol` or the bracket is
/// narrower than `xtol`.
#[derive(Debug, Clone, Copy)]
pub struct RootTol {
    pub ftol: f64,
    pub xtol: f64,
    pub max_iter: usize,
}

impl Default for RootTol {
    fn default() -> Self {
        Self { ftol: 0.0, xtol: 0.0, max_iter: 200 }
    }
}

/// Result of a bracketed solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Root {
    pub x: f64,
    pub fx: f64,
    /// Final bracket, ordered.
    pub bracket: (f64, f64),
    pub iterations: usize,
}

/// Brent's method: bisection safeguarded inverse quadratic interpolation.
///
/// `f` may fail; the first error aborts the search. `fa` and `fb` may be
/// supplied when the caller already evaluated the endpoints.
pub fn brent<E, F>(mut f: F, a: f64, b: f64, known: Option<(f64, f64)>, tol: RootTol) -> Result<Root, RootError<E>>
where
    F: FnMut(f64) -> Result<f64, E>,
{
    let (mut fa, mut fb) = match known {
        Some(v) => v,
        None => (f(a).map_err(RootError::Eval)?, f(b).map_err(RootError::Eval)?),
    };
    let (mut a, mut b) = (a, b);
    if fa == 0.0 {
        return Ok(Root { x: a, fx: 0.0, bracket: (a, a), iterations: 0 });
    }
    if fb == 0.0 {
        return Ok(Root { x: b, fx: 0.0, bracket: (b, b), iterations: 0 });
    }
    if fa.signum() == fb.signum() || !fa.is_finite() || !fb.is_finite() {
        return Err(RootError::NotBracketed { lo: a, hi: b, flo: fa, fhi: fb });
    }
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;
    for iter in 1..=tol.max_iter {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let eps_x = 2.0 * f64::EPSILON * b.abs() + 0.5 * tol.xtol;
        let m = 0.5 * (c - b);
        if fb.abs() <= tol.ftol || m.abs() <= eps_x {
            let bracket = if b < c { (b, c) } else { (c, b) };
            return Ok(Root { x: b, fx: fb, bracket, iterations: iter });
        }
        if e.abs() >= eps_x && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                let qa = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * m * qa * (qa - r) - (b - a) * (r - 1.0));
                q = (qa - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (eps_x * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = m;
            }
        } else {
            d = m;
            e = m;
        }
        a = b;
        fa = fb;
        b += if d.abs() > eps_x { d } else { eps_x.copysign(m) };
        fb = f(b).map_err(RootError::Eval)?;
    }
    Err(RootError::IterationLimit(tol.max_iter))
}

/// Adaptive Clenshaw–Curtis: the `quadrature` rule caps its node count, so
/// intervals that miss the target are bisected.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64) -> f64 {
    fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        let out = quadrature::clenshaw_curtis::integrate(f, a, b, tol);
        if out.error_estimate <= tol || depth == 0 {
            return out.integral;
        }
        let mid = 0.5 * (a + b);
        rec(f, a, mid, 0.5 * tol, depth - 1) + rec(f, mid, b, 0.5 * tol, depth - 1)
    }
    if a == b {
        return 0.0;
    }
    rec(&f, a, b, abs_tol, 24)
}

/// Tanh–sinh quadrature for integrable endpoint singularities.
///
/// Each half of `[a, b]` is mapped by `x = end ± h u^2`, which turns
/// inverse square-root endpoint behavior into a smooth integrand before the
/// double-exponential rule sees it. Independent of [`integrate`], so the two
/// serve as cross-checks.
pub fn integrate_singular<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64) -> f64 {
    fn rec<G: Fn(f64) -> f64>(g: &G, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        let out = quadrature::double_exponential::integrate(g, a, b, tol);
        if out.error_estimate <= tol || depth == 0 {
            return out.integral;
        }
        let mid = 0.5 * (a + b);
        rec(g, a, mid, 0.5 * tol, depth - 1) + rec(g, mid, b, 0.5 * tol, depth - 1)
    }
    if a == b {
        return 0.0;
    }
    let h = 0.5 * (b - a);
    let left = |u: f64| if u == 0.0 { 0.0 } else { f(a + h * u * u) * 2.0 * h * u };
    let right = |u: f64| if u == 0.0 { 0.0 } else { f(b - h * u * u) * 2.0 * h * u };
    rec(&left, 0.0, 1.0, 0.5 * abs_tol, 16) + rec(&right, 0.0, 1.0, 0.5 * abs_tol, 16)
}

/// Linear least squares `min |A c - y|` through an SVD.
/// Returns the coefficients and the residual vector.
pub fn least_squares(rows: &[Vec<f64>], y: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
    let n = rows.len();
    let k = rows.first()?.len();
    if n < k || y.len() != n || rows.iter().flatten().chain(y).any(|v| !v.is_finite()) {
        return None;
    }
    // Column scaling keeps monomial designs well conditioned.
    let mut scale = vec![0.0_f64; k];
    for row in rows {
        for (s, v) in scale.iter_mut().zip(row) {
            *s = s.max(v.abs());
        }
    }
    for s in &mut scale {
        if *s == 0.0 {
            *s = 1.0;
        }
    }
    let a = DMatrix::from_fn(n, k, |i, j| rows[i][j] / scale[j]);
    let rhs = DVector::from_column_slice(y);
    let svd = a.clone().svd(true, true);
    let sol = svd.solve(&rhs, 1e-14).ok()?;
    let resid = &a * &sol - &rhs;
    let coeffs = sol.iter().zip(&scale).map(|(c, s)| c / s).collect();
    Some((coeffs, resid.iter().copied().collect()))
}

/// Ordinary least-squares line with its coefficient of determination.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Line {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn fit_line(xs: &[f64], ys: &[f64]) -> Option<Line> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs.iter().zip(ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let r_squared = if syy == 0.0 { 1.0 } else { (1.0 - ss_res / syy).clamp(0.0, 1.0) };
    Some(Line { slope, intercept, r_squared })
}

/// Geometric grid from `lo` to `hi` (both included) whose ratio does not
/// exceed `max_ratio` and which has at least `min_points` points.
pub fn geometric_grid(lo: f64, hi: f64, max_ratio: f64, min_points: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi > lo && max_ratio > 1.0);
    let span = (hi / lo).ln();
    let by_ratio = (span / max_ratio.ln()).ceil() as usize + 1;
    let n = by_ratio.max(min_points).max(2);
    let step = span / (n - 1) as f64;
    let mut grid: Vec<f64> = (0..n).map(|i| lo * (step * i as f64).exp()).collect();
    grid[0] = lo;
    grid[n - 1] = hi;
    grid
}

/// `count` logarithmically spaced samples strictly inside `(lo, hi)`.
pub fn log_samples(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (1..=count).map(|i| (a + (b - a) * i as f64 / (count + 1) as f64).exp()).collect()
}

pub fn sign(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

//! Central finite-difference gradient checking (run in `f64`).

/// Relative error with denominator `max(|a|, |n|, 1e-8)`, maximized over
/// coordinates.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-8))
        .fold(0.0, f64::max)
}

/// Central-difference derivative of `f` along coordinate `i` of `x`.
pub fn numeric_partial(f: &mut impl FnMut(&[f64]) -> f64, x: &mut [f64], i: usize, h: f64) -> f64 {
    let orig = x[i];
    x[i] = orig + h;
    let plus = f(x);
    x[i] = orig - h;
    let minus = f(x);
    x[i] = orig;
    (plus - minus) / (2.0 * h)
}

/// Richardson-extrapolated central difference, `(4 D(h) - D(2h)) / 3`.
///
/// Truncation error is `O(h^4)` instead of `O(h^2)`, so a larger `h` can be
/// used and rounding noise shrinks accordingly. Deep compositions at `f64`
/// need this to resolve coordinates whose gradient is near `1e-6`.
pub fn richardson_partial(f: &mut impl FnMut(&[f64]) -> f64, x: &mut [f64], i: usize, h: f64) -> f64 {
    let d1 = numeric_partial(f, x, i, h);
    let d2 = numeric_partial(f, x, i, 2.0 * h);
    (4.0 * d1 - d2) / 3.0
}

/// Second Richardson level over steps `h`, `2h`, `4h`: `(16 R(h) - R(2h)) / 15`
/// where `R` is [`richardson_partial`]. Truncation error is `O(h^6)`, which
/// allows steps large enough that forward-pass rounding stays near `1e-13`
/// absolute for outputs of order one.
pub fn richardson2_partial(f: &mut impl FnMut(&[f64]) -> f64, x: &mut [f64], i: usize, h: f64) -> f64 {
    let d1 = numeric_partial(f, x, i, h);
    let d2 = numeric_partial(f, x, i, 2.0 * h);
    let d4 = numeric_partial(f, x, i, 4.0 * h);
    let r1 = (4.0 * d1 - d2) / 3.0;
    let r2 = (4.0 * d2 - d4) / 3.0;
    (16.0 * r1 - r2) / 15.0
}

/// Finite-difference stencil used by [`grad_check_with`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stencil {
    Central,
    Richardson,
    Richardson2,
}

/// Compares `analytic` against central differences of `f` at `x0` over every
/// coordinate and returns the max relative error.
pub fn grad_check(mut f: impl FnMut(&[f64]) -> f64, x0: &[f64], analytic: &[f64], h: f64) -> f64 {
    assert_eq!(x0.len(), analytic.len());
    let mut x = x0.to_vec();
    let numeric: Vec<f64> = (0..x.len()).map(|i| numeric_partial(&mut f, &mut x, i, h)).collect();
    max_relative_error(analytic, &numeric)
}

/// Same as [`grad_check`] restricted to the listed coordinates.
pub fn grad_check_at(
    mut f: impl FnMut(&[f64]) -> f64,
    x0: &[f64],
    analytic: &[f64],
    coords: &[usize],
    h: f64,
) -> f64 {
    let mut x = x0.to_vec();
    let (a, n): (Vec<f64>, Vec<f64>) = coords
        .iter()
        .map(|&i| (analytic[i], numeric_partial(&mut f, &mut x, i, h)))
        .unzip();
    max_relative_error(&a, &n)
}

/// [`grad_check_at`] with a selectable stencil.
pub fn grad_check_with(
    mut f: impl FnMut(&[f64]) -> f64,
    x0: &[f64],
    analytic: &[f64],
    coords: &[usize],
    h: f64,
    stencil: Stencil,
) -> f64 {
    let mut x = x0.to_vec();
    let (a, n): (Vec<f64>, Vec<f64>) = coords
        .iter()
        .map(|&i| {
            let num = match stencil {
                Stencil::Central => numeric_partial(&mut f, &mut x, i, h),
                Stencil::Richardson => richardson_partial(&mut f, &mut x, i, h),
                Stencil::Richardson2 => richardson2_partial(&mut f, &mut x, i, h),
            };
            (analytic[i], num)
        })
        .unzip();
    max_relative_error(&a, &n)
}

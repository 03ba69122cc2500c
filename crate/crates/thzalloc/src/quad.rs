//! Adaptive Simpson quadrature with interval bisection.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum QuadError {
    #[error("quadrature did not reach tolerance within depth {max_depth}")]
    MaxDepth { max_depth: usize },
    #[error("invalid integration interval [{a}, {b}]")]
    BadInterval { a: f64, b: f64 },
}

fn simpson(fa: f64, fm: f64, fb: f64, h: f64) -> f64 {
    h / 6.0 * (fa + 4.0 * fm + fb)
}

/// Integrates `f` over `[a, b]` to the given relative tolerance.
pub fn adaptive_simpson(
    f: impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    rel_tol: f64,
    max_depth: usize,
) -> Result<f64, QuadError> {
    if !(b > a) || !a.is_finite() || !b.is_finite() {
        return Err(QuadError::BadInterval { a, b });
    }
    let m = 0.5 * (a + b);
    let fa = f(a);
    let fm = f(m);
    let fb = f(b);
    let whole = simpson(fa, fm, fb, b - a);
    // absolute tolerance budget anchored to the first coarse estimate
    let scale = whole.abs().max(1e-300);
    let mut ctx = Ctx { f, max_depth, hit_depth: false };
    let v = ctx.recurse(a, b, fa, fm, fb, whole, rel_tol * scale, 0);
    if ctx.hit_depth {
        return Err(QuadError::MaxDepth { max_depth });
    }
    Ok(v)
}

struct Ctx<F: Fn(f64) -> f64> {
    f: F,
    max_depth: usize,
    hit_depth: bool,
}

impl<F: Fn(f64) -> f64> Ctx<F> {
    #[allow(clippy::too_many_arguments)]
    fn recurse(&mut self, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, eps: f64, depth: usize) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = (self.f)(lm);
        let frm = (self.f)(rm);
        let left = simpson(fa, flm, fm, m - a);
        let right = simpson(fm, frm, fb, b - m);
        let delta = left + right - whole;
        if delta.abs() <= 15.0 * eps {
            return left + right + delta / 15.0;
        }
        if depth >= self.max_depth {
            self.hit_depth = true;
            return left + right + delta / 15.0;
        }
        self.recurse(a, m, fa, flm, fm, left, 0.5 * eps, depth + 1)
            + self.recurse(m, b, fm, frm, fb, right, 0.5 * eps, depth + 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_polynomial_exactly() {
        // Simpson is exact for cubics
        let v = adaptive_simpson(|x| x * x * x - 2.0 * x + 1.0, 0.0, 2.0, 1e-10, 40).unwrap();
        assert!((v - (4.0 - 4.0 + 2.0)).abs() < 1e-12);
    }

    #[test]
    fn integrates_exponential_to_tolerance() {
        let v = adaptive_simpson(f64::exp, 0.0, 5.0, 1e-10, 40).unwrap();
        let truth = 5f64.exp() - 1.0;
        assert!((v - truth).abs() / truth < 1e-9);
    }

    #[test]
    fn rejects_empty_interval() {
        assert!(adaptive_simpson(|x| x, 1.0, 1.0, 1e-8, 40).is_err());
    }

    #[test]
    fn reports_depth_exhaustion() {
        // near-singular integrand with an absurdly tight budget and depth 2
        let res = adaptive_simpson(|x: f64| (x.abs() + 1e-12).sqrt().recip(), 0.0, 1.0, 1e-14, 2);
        assert!(matches!(res, Err(QuadError::MaxDepth { .. })));
    }
}

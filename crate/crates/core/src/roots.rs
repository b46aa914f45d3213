//! Scalar root finding used by the scan-time solvers.

/// Real roots of `a·t² + b·t + c`, ascending. A zero leading coefficient degrades to the linear case.
pub fn quadratic_roots(a: f64, b: f64, c: f64) -> Vec<f64> {
    if a == 0.0 {
        if b == 0.0 {
            return Vec::new();
        }
        return vec![-c / b];
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return Vec::new();
    }
    // cancellation-free form: q/a and c/q
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    if q == 0.0 {
        // b = 0 and c = 0
        return vec![0.0];
    }
    let (r1, r2) = (q / a, c / q);
    if r1 <= r2 {
        vec![r1, r2]
    } else {
        vec![r2, r1]
    }
}

/// The root of `a·t² + b·t + c` that tends to `−c/b` as `a → 0`.
pub fn continuous_quadratic_root(a: f64, b: f64, c: f64) -> Option<f64> {
    if a == 0.0 {
        return (b != 0.0).then(|| -c / b);
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return None;
    }
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    if q == 0.0 {
        return Some(0.0);
    }
    Some(c / q)
}

/// Bisection on a sign-changing bracket. Runs until the bracket stops shrinking.
pub fn bisect<F>(f: F, mut lo: f64, mut hi: f64, mut f_lo: f64) -> f64
where
    F: Fn(f64) -> f64,
{
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let f_mid = f(mid);
        if f_mid == 0.0 {
            return mid;
        }
        if (f_mid < 0.0) == (f_lo < 0.0) {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Roots of `f` on `[lo, hi]` found by sampling `samples` sub-intervals and bisecting each
/// sign change. Points where `f` is undefined (`None`) break brackets.
pub fn bracketed_roots<F>(f: F, lo: f64, hi: f64, samples: usize, max_roots: usize) -> Vec<f64>
where
    F: Fn(f64) -> Option<f64>,
{
    let samples = samples.max(1);
    let step = (hi - lo) / samples as f64;
    let mut roots = Vec::new();
    let mut prev: Option<(f64, f64)> = None;
    for i in 0..=samples {
        let t = if i == samples { hi } else { lo + step * i as f64 };
        let value = f(t);
        if let Some(ft) = value {
            if ft == 0.0 {
                roots.push(t);
            } else if let Some((tp, fp)) = prev {
                if fp != 0.0 && (fp < 0.0) != (ft < 0.0) {
                    roots.push(bisect(|s| f(s).unwrap_or(f64::NAN), tp, t, fp));
                }
            }
            if roots.len() >= max_roots {
                break;
            }
        }
        prev = value.map(|ft| (t, ft));
    }
    roots
}

/// Root of `f` near `guess`: the bracket `guess ± step` is doubled until it changes sign.
pub fn root_near<F>(f: F, guess: f64, step: f64) -> Option<f64>
where
    F: Fn(f64) -> f64,
{
    let f0 = f(guess);
    if f0 == 0.0 {
        return Some(guess);
    }
    let mut delta = step.abs().max(f64::MIN_POSITIVE);
    for _ in 0..64 {
        for (lo, hi) in [(guess - delta, guess), (guess, guess + delta)] {
            let (flo, fhi) = (f(lo), f(hi));
            if flo.is_finite() && fhi.is_finite() && (flo < 0.0) != (fhi < 0.0) {
                return Some(bisect(&f, lo, hi, flo));
            }
        }
        delta *= 2.0;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_cases() {
        let r = quadratic_roots(1.0, -3.0, 2.0);
        assert_eq!(r, vec![1.0, 2.0]);
        assert!(quadratic_roots(1.0, 0.0, 1.0).is_empty());
        assert_eq!(quadratic_roots(0.0, 2.0, -1.0), vec![0.5]);
        assert!(quadratic_roots(0.0, 0.0, 1.0).is_empty());
        // 10t² + 10t − 0.1
        let r = quadratic_roots(10.0, 10.0, -0.1);
        assert!((r[1] - 0.009_901_951_359_278_5).abs() < 1e-15);
    }

    #[test]
    fn tiny_leading_coefficient_is_stable() {
        let t = continuous_quadratic_root(1e-20, 1.0, -0.5).unwrap();
        assert!((t - 0.5).abs() < 1e-15);
        let r = quadratic_roots(1e-20, 1.0, -0.5);
        assert!(r.iter().any(|x| (x - 0.5).abs() < 1e-15));
    }

    #[test]
    fn expands_bracket_around_guess() {
        let r = root_near(|t: f64| t.powi(3) - 2.0, 0.0, 1e-3).unwrap();
        assert!((r - 2f64.cbrt()).abs() < 1e-14);
        assert!(root_near(|t: f64| t * t + 1.0, 0.0, 1.0).is_none());
    }

    #[test]
    fn bracketing_finds_roots_in_order() {
        let f = |t: f64| Some((t - 0.25) * (t - 0.75));
        let r = bracketed_roots(f, 0.0, 1.0, 7, 4);
        assert_eq!(r.len(), 2);
        assert!((r[0] - 0.25).abs() < 1e-15 && (r[1] - 0.75).abs() < 1e-15);
        let first = bracketed_roots(f, 0.0, 1.0, 7, 1);
        assert_eq!(first.len(), 1);
    }
}

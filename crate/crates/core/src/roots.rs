//! Scalar root bracketing, bisection and golden-section search.

/// Bisection on `[lo, hi]`, which must bracket a sign change of `f`.
///
/// Runs until the bracket is no wider than `xtol` or cannot be split any
/// further in floating point, then returns whichever end has the smaller
/// `|f|`. With `xtol = 0` the result is the best double available.
pub fn bisect<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, xtol: f64) -> f64 {
    let (mut a, mut b) = (lo, hi);
    let (mut fa, mut fb) = (f(a), f(b));
    if fa == 0.0 {
        return a;
    }
    if fb == 0.0 {
        return b;
    }
    debug_assert!(fa.signum() != fb.signum(), "bisect called without a bracket");
    loop {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b || (b - a) <= xtol {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if fm.signum() == fa.signum() {
            a = mid;
            fa = fm;
        } else {
            b = mid;
            fb = fm;
        }
    }
    if fa.abs() <= fb.abs() {
        a
    } else {
        b
    }
}

/// Samples `f` at `n + 1` equally spaced points of `[lo, hi]`.
pub fn scan<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, n: usize) -> Vec<(f64, f64)> {
    let n = n.max(1);
    (0..=n)
        .map(|i| {
            let x = if i == n {
                hi
            } else {
                lo + (hi - lo) * i as f64 / n as f64
            };
            (x, f(x))
        })
        .collect()
}

/// Sub-intervals of a scan across which the sampled sign changes. An exact
/// zero at an interior sample is reported as a degenerate bracket.
pub fn sign_changes(samples: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for (i, w) in samples.windows(2).enumerate() {
        let ((xa, fa), (xb, fb)) = (w[0], w[1]);
        if fa == 0.0 && i > 0 {
            out.push((xa, xa));
        } else if fa * fb < 0.0 {
            out.push((xa, xb));
        }
    }
    out
}

/// Finds every sign change of `f` on `[lo, hi]` by a uniform scan with
/// `n` sub-intervals, refining each by bisection.
pub fn all_roots<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, n: usize) -> (Vec<f64>, Vec<(f64, f64)>) {
    let samples = scan(&f, lo, hi, n);
    let roots = sign_changes(&samples)
        .into_iter()
        .map(|(a, b)| if a == b { a } else { bisect(&f, a, b, 0.0) })
        .collect();
    (roots, samples)
}

const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// Golden-section minimisation of a unimodal `f` on `[a, b]`, stopping when
/// the bracket is narrower than `rel_tol * max(|x|, abs_floor)`.
pub fn golden_section<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64, abs_floor: f64) -> (f64, f64) {
    let (mut a, mut b) = (a, b);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..500 {
        let mid = 0.5 * (a + b);
        if (b - a) <= rel_tol * mid.abs().max(abs_floor) {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bisect_sqrt2() {
        let x = bisect(|x| x * x - 2.0, 0.0, 2.0, 0.0);
        assert!((x - 2f64.sqrt()).abs() < 4.0 * f64::EPSILON);
    }

    #[test]
    fn bisect_respects_xtol() {
        let x = bisect(|x| x - 0.3, 0.0, 1.0, 1e-3);
        assert!((x - 0.3).abs() < 1e-3);
    }

    #[test]
    fn scan_finds_all_cubic_roots() {
        let (roots, samples) = all_roots(|x| (x - 0.5) * (x - 1.5) * (x - 2.5), 0.0, 3.0, 64);
        assert_eq!(samples.len(), 65);
        assert_eq!(roots.len(), 3);
        for (r, e) in roots.iter().zip([0.5, 1.5, 2.5]) {
            assert!((r - e).abs() < 1e-12);
        }
    }

    #[test]
    fn golden_section_parabola() {
        let (x, fx) = golden_section(|x| (x - 1.234).powi(2) + 0.5, 0.0, 5.0, 1e-10, 1.0);
        assert!((x - 1.234).abs() < 1e-8);
        assert!((fx - 0.5).abs() < 1e-15);
    }
}

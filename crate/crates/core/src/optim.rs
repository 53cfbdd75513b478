//! One-dimensional root finding and minimization used by the planner.

/// Bisection on a predicate that is `true` on one side of a single
/// switch point inside `[lo, hi]`. `pred(lo)` and `pred(hi)` must differ.
/// Returns the bracket `(a, b)` with `b − a ≤ tol`, where `pred(a) == pred(lo)`.
pub fn bisect_predicate(mut pred: impl FnMut(f64) -> bool, lo: f64, hi: f64, tol: f64) -> (f64, f64) {
    let side = pred(lo);
    debug_assert_ne!(side, pred(hi));
    let (mut a, mut b) = (lo, hi);
    for _ in 0..400 {
        if b - a <= tol {
            break;
        }
        let mid = 0.5 * (a + b);
        if pred(mid) == side {
            a = mid;
        } else {
            b = mid;
        }
    }
    (a, b)
}

/// Root of a continuous function with a sign change on `[lo, hi]`.
pub fn bisect_root(mut f: impl FnMut(f64) -> f64, lo: f64, hi: f64, xtol: f64, ftol: f64) -> f64 {
    let (mut a, mut b) = (lo, hi);
    let fa = f(a);
    if fa == 0.0 {
        return a;
    }
    let neg_at_a = fa < 0.0;
    for _ in 0..400 {
        let mid = 0.5 * (a + b);
        let fm = f(mid);
        if fm.abs() <= ftol || (b - a) <= xtol {
            return mid;
        }
        if (fm < 0.0) == neg_at_a {
            a = mid;
        } else {
            b = mid;
        }
    }
    0.5 * (a + b)
}

/// Golden-section search for a minimum of `f` on `[a, b]`, stopping once the
/// bracket is narrower than `tol`. Returns `(x_min, f_min)`.
pub fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while (b - a).abs() > tol {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2);
        }
    }
    let x = 0.5 * (a + b);
    let fx = f(x);
    [(x1, f1), (x2, f2), (x, fx)]
        .into_iter()
        .fold((x, fx), |best, cand| if cand.1 < best.1 { cand } else { best })
}

/// Minimizes `f` over `[lo, hi]`: a uniform scan of `points` nodes picks the
/// best bracket, golden-section refines it to `tol`.
pub fn scan_then_golden(f: impl Fn(f64) -> f64, lo: f64, hi: f64, points: usize, tol: f64) -> (f64, f64) {
    assert!(points >= 3 && hi > lo);
    let step = (hi - lo) / (points - 1) as f64;
    let (best_idx, _) = (0..points)
        .map(|k| (k, f(lo + step * k as f64)))
        .fold((0, f64::INFINITY), |acc, (k, v)| if v < acc.1 { (k, v) } else { acc });
    let a = lo + step * best_idx.saturating_sub(1) as f64;
    let b = (lo + step * (best_idx + 1) as f64).min(hi);
    golden_section(f, a, b, tol)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_finds_parabola_minimum() {
        let (x, fx) = golden_section(|x| (x - 1.3).powi(2) + 2.0, -5.0, 5.0, 1e-9);
        assert!((x - 1.3).abs() < 1e-6);
        assert!((fx - 2.0).abs() < 1e-12);
    }

    #[test]
    fn golden_handles_boundary_minimum() {
        let (x, _) = golden_section(|x| x, 2.0, 3.0, 1e-8);
        assert!((x - 2.0).abs() < 1e-7);
    }

    #[test]
    fn scan_escapes_local_minimum() {
        let f = |x: f64| (3.0 * x).sin() + 0.1 * x;
        let (x, _) = scan_then_golden(f, 0.0, 10.0, 200, 1e-8);
        // global minimum of sin(3x) + 0.1x on [0, 10] sits near 3π/6 − small shift
        let brute = (0..1_000_000)
            .map(|k| k as f64 * 1e-5)
            .min_by(|a, b| f(*a).partial_cmp(&f(*b)).unwrap())
            .unwrap();
        assert!((x - brute).abs() < 1e-4, "{x} vs {brute}");
    }

    #[test]
    fn bisect_predicate_and_root() {
        let (a, b) = bisect_predicate(|x| x < 0.7, 0.0, 1.0, 1e-10);
        assert!(a < 0.7 && b >= 0.7 && b - a <= 1e-10);
        let r = bisect_root(|x| x * x - 2.0, 0.0, 2.0, 1e-14, 0.0);
        assert!((r - 2f64.sqrt()).abs() < 1e-12);
    }
}

//! One-dimensional maximization of concave functions.

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Outcome of a golden-section run.
#[derive(Debug, Clone, Copy)]
pub struct GoldenResult {
    /// Best argument seen, including the two bracket ends.
    pub argmax: f64,
    pub max: f64,
    /// Final bracket.
    pub lo: f64,
    pub hi: f64,
    pub evaluations: usize,
}

/// Golden-section search for the maximum of a concave `f` on `[lo, hi]`.
///
/// The best value over every evaluation is returned, so shrinking the bracket
/// never loses a better point found earlier.
pub fn golden_max<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, tol: f64) -> GoldenResult {
    let (mut a, mut b) = (lo, hi);
    let fa = f(a);
    let fb = f(b);
    let mut evaluations = 2;
    let (mut best_x, mut best_f) = if fb > fa { (b, fb) } else { (a, fa) };
    if b - a <= tol {
        return GoldenResult { argmax: best_x, max: best_f, lo: a, hi: b, evaluations };
    }
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    evaluations += 2;
    for (x, fx) in [(x1, f1), (x2, f2)] {
        if fx > best_f {
            best_x = x;
            best_f = fx;
        }
    }
    while b - a > tol && evaluations < 10_000 {
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2);
            if f2 > best_f {
                best_x = x2;
                best_f = f2;
            }
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1);
            if f1 > best_f {
                best_x = x1;
                best_f = f1;
            }
        }
        evaluations += 1;
        if !(x1 < x2) {
            // bracket collapsed below floating-point resolution
            break;
        }
    }
    GoldenResult { argmax: best_x, max: best_f, lo: a, hi: b, evaluations }
}

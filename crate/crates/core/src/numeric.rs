//! Error-free transformations for dot products over UTM-magnitude values.

/// Knuth's TwoSum: `a + b = s + e` exactly.
#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let e = (a - (s - bb)) + (b - bb);
    (s, e)
}

/// `a * b = p + e` exactly (needs a correctly rounded fma).
#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

/// Compensated `Σ a_i b_i + c` (Ogita–Rump–Oishi Dot2), as accurate as if
/// computed in twice the working precision and rounded once.
pub(crate) fn dot_plus(a: &[f64], b: &[f64], c: f64) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut s = c;
    let mut err = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        let (p, ep) = two_prod(x, y);
        let (s2, es) = two_sum(s, p);
        s = s2;
        err += ep + es;
    }
    s + err
}

/// Compensated `M x + c` for a 3×3 matrix.
pub(crate) fn affine3(m: &crate::Mat3, x: &crate::Vec3, c: &crate::Vec3) -> crate::Vec3 {
    let xs = [x.x, x.y, x.z];
    crate::Vec3::from_fn(|r, _| {
        let row = [m[(r, 0)], m[(r, 1)], m[(r, 2)]];
        dot_plus(&row, &xs, c[r])
    })
}

/// Compensated mean of a sequence.
pub(crate) fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let mut s = 0.0;
    let mut err = 0.0;
    let mut n = 0usize;
    for v in values {
        let (s2, e) = two_sum(s, v);
        s = s2;
        err += e;
        n += 1;
    }
    (s + err) / n as f64
}

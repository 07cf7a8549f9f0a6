//! Flat-slice linear algebra for the hand-written networks. Weights live in
//! row-major `&[f64]` views into a single parameter vector, which keeps the
//! optimizer, serialization, and gradient checking trivially aligned.

/// `out = W x` for row-major `w` of shape `rows x cols`.
pub fn matvec(w: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    assert_eq!(w.len(), rows * cols, "weight slice shape");
    assert_eq!(x.len(), cols, "input length");
    assert_eq!(out.len(), rows, "output length");
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        *o = dot(row, x);
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Rank-1 gradient accumulation `gw += g x^T` into a row-major slice of
/// shape `g.len() x x.len()`. Zero entries of `g` skip a row of work; the
/// dropped multiplications are exact zeros.
pub fn outer_acc(gw: &mut [f64], g: &[f64], x: &[f64]) {
    assert_eq!(gw.len(), g.len() * x.len(), "gradient slice shape");
    for (r, &gr) in g.iter().enumerate() {
        if gr == 0.0 {
            continue;
        }
        let row = &mut gw[r * x.len()..(r + 1) * x.len()];
        for (w, &xv) in row.iter_mut().zip(x) {
            *w += gr * xv;
        }
    }
}

/// `v += a` elementwise.
pub fn add_assign(v: &mut [f64], a: &[f64]) {
    debug_assert_eq!(v.len(), a.len());
    for (x, &y) in v.iter_mut().zip(a) {
        *x += y;
    }
}

/// Fills a slice with Uniform(-scale, scale) draws in index order.
pub fn uniform_fill<R: rand::Rng>(slice: &mut [f64], scale: f64, rng: &mut R) {
    for v in slice.iter_mut() {
        *v = rng.random_range(-scale..scale);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matvec_matches_hand_computation() {
        let w = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let x = [1.0, 0.0, -1.0];
        let mut out = [0.0; 2];
        matvec(&w, 2, 3, &x, &mut out);
        assert_eq!(out, [-2.0, -2.0]);
    }

    #[test]
    #[should_panic(expected = "weight slice shape")]
    fn matvec_rejects_bad_shape() {
        let mut out = [0.0; 2];
        matvec(&[1.0; 5], 2, 3, &[1.0; 3], &mut out);
    }

    #[test]
    fn outer_acc_accumulates() {
        let mut gw = [1.0; 6];
        outer_acc(&mut gw, &[2.0, 0.0], &[1.0, 2.0, 3.0]);
        assert_eq!(gw, [3.0, 5.0, 7.0, 1.0, 1.0, 1.0]);
        outer_acc(&mut gw, &[0.0, 1.0], &[1.0, 1.0, 1.0]);
        assert_eq!(gw, [3.0, 5.0, 7.0, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn uniform_fill_respects_scale_and_seed() {
        use crate::rng::{stream, StreamRole};
        let mut a = vec![0.0; 100];
        let mut b = vec![0.0; 100];
        uniform_fill(&mut a, 0.25, &mut stream(3, StreamRole::TeacherTrain));
        uniform_fill(&mut b, 0.25, &mut stream(3, StreamRole::TeacherTrain));
        assert_eq!(a, b);
        assert!(a.iter().all(|v| v.abs() < 0.25));
        assert!(a.iter().any(|v| v.abs() > 0.01));
    }
}

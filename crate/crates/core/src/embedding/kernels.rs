//! Dense kernels shared by projection, retrieval and compaction.
//!
//! All reductions accumulate in `f64` with a fixed lane layout so results do
//! not depend on how callers split work across threads.

const LANES: usize = 16;

#[inline]
fn fold_lanes(l: [f64; LANES]) -> f64 {
    let mut v = l;
    let mut width = LANES;
    while width > 1 {
        width /= 2;
        for k in 0..width {
            v[k] += v[k + width];
        }
    }
    v[0]
}

/// `acc + a·b`, fused where the target has FMA.
#[inline(always)]
fn madd(acc: f64, a: f64, b: f64) -> f64 {
    #[cfg(target_feature = "fma")]
    {
        a.mul_add(b, acc)
    }
    #[cfg(not(target_feature = "fma"))]
    {
        acc + a * b
    }
}

/// Dot product of an `f32` storage row with an `f64` query.
#[inline]
pub fn dot_f32_f64(a: &[f32], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut lanes = [0f64; LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let (ta, tb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..LANES {
            lanes[k] = madd(lanes[k], f64::from(x[k]), y[k]);
        }
    }
    let mut tail = 0.0;
    for (x, y) in ta.iter().zip(tb) {
        tail += f64::from(*x) * y;
    }
    fold_lanes(lanes) + tail
}

#[inline]
pub fn dot_f32(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut lanes = [0f64; LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let (ta, tb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..LANES {
            lanes[k] = madd(lanes[k], f64::from(x[k]), f64::from(y[k]));
        }
    }
    let mut tail = 0.0;
    for (x, y) in ta.iter().zip(tb) {
        tail += f64::from(*x) * f64::from(*y);
    }
    fold_lanes(lanes) + tail
}

#[inline]
pub fn dot_f64(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut lanes = [0f64; LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let (ta, tb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..LANES {
            lanes[k] = madd(lanes[k], x[k], y[k]);
        }
    }
    let mut tail = 0.0;
    for (x, y) in ta.iter().zip(tb) {
        tail += x * y;
    }
    fold_lanes(lanes) + tail
}

/// `acc += alpha * row`
#[inline]
pub fn axpy_f32(acc: &mut [f64], alpha: f64, row: &[f32]) {
    debug_assert_eq!(acc.len(), row.len());
    for (a, x) in acc.iter_mut().zip(row) {
        *a = madd(*a, alpha, f64::from(*x));
    }
}

/// Pairwise (tree) summation in index order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if xs.len() <= BLOCK {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// ℓ2 norm with pairwise-summed squares.
pub fn l2_norm(xs: &[f64]) -> f64 {
    let squares: Vec<f64> = xs.iter().map(|x| x * x).collect();
    pairwise_sum(&squares).sqrt()
}

/// Index of the maximum value; lowest index wins ties.
pub fn argmax(xs: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &x) in xs.iter().enumerate() {
        match best {
            Some((_, b)) if x <= b => {}
            _ => best = Some((i, x)),
        }
    }
    best.map(|(i, _)| i)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dots_agree_across_precisions() {
        let a: Vec<f32> = (0..37).map(|i| (i as f32 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..37).map(|i| (i as f64 * 0.11).cos()).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| f64::from(*x) * y).sum();
        assert!((dot_f32_f64(&a, &b) - naive).abs() < 1e-12);
        let a64: Vec<f64> = a.iter().map(|&x| f64::from(x)).collect();
        assert!((dot_f64(&a64, &b) - naive).abs() < 1e-12);
        let b32: Vec<f32> = b.iter().map(|&x| x as f32).collect();
        let naive32: f64 = a.iter().zip(&b32).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum();
        assert!((dot_f32(&a, &b32) - naive32).abs() < 1e-12);
    }

    #[test]
    fn pairwise_sum_matches_sequential() {
        let xs: Vec<f64> = (1..=1000).map(f64::from).collect();
        assert_eq!(pairwise_sum(&xs), 500_500.0);
        assert_eq!(pairwise_sum(&[]), 0.0);
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[0.1, 0.5, 0.5, 0.2]), Some(1));
        assert_eq!(argmax(&[]), None);
        assert_eq!(argmax(&[-1.0]), Some(0));
    }
}

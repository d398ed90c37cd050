//! Raw slice kernels shared by the tape's forward and backward passes.
//!
//! All matrices are row-major. Output buffers are accumulated into (`+=`),
//! never overwritten, so callers zero them when they need a fresh product.

use super::Real;

/// `c[m×n] += a[m×k] · b[k×n]`
pub fn matmul_acc<F: Real>(a: &[F], b: &[F], c: &mut [F], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (t, &av) in a_row.iter().enumerate() {
            if av == F::zero() {
                continue;
            }
            let b_row = &b[t * n..(t + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv = *cv + av * bv;
            }
        }
    }
}

/// `c[m×n] += a[m×k] · b[n×k]ᵀ`
pub fn matmul_bt_acc<F: Real>(a: &[F], b: &[F], c: &mut [F], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            c[i * n + j] = c[i * n + j] + dot(a_row, b_row);
        }
    }
}

/// `c[k×n] += a[m×k]ᵀ · b[m×n]`
pub fn matmul_at_acc<F: Real>(a: &[F], b: &[F], c: &mut [F], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(c.len(), k * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * n..(i + 1) * n];
        for (t, &av) in a_row.iter().enumerate() {
            if av == F::zero() {
                continue;
            }
            let c_row = &mut c[t * n..(t + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv = *cv + av * bv;
            }
        }
    }
}

pub fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    // Four independent accumulators let the compiler vectorize the f32 case.
    let mut acc = [F::zero(); 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let o = c * 4;
        acc[0] = acc[0] + a[o] * b[o];
        acc[1] = acc[1] + a[o + 1] * b[o + 1];
        acc[2] = acc[2] + a[o + 2] * b[o + 2];
        acc[3] = acc[3] + a[o + 3] * b[o + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for o in chunks * 4..a.len() {
        s = s + a[o] * b[o];
    }
    s
}

/// Numerically stabilized softmax over each row of width `n`, written into `out`.
/// With `causal`, row `i` only sees columns `0..=i + offset`; hidden columns get 0.
pub fn softmax_rows<F: Real>(x: &[F], out: &mut [F], n: usize, causal: Option<usize>) {
    if n == 0 {
        return;
    }
    for (i, (xr, yr)) in x.chunks_exact(n).zip(out.chunks_exact_mut(n)).enumerate() {
        let visible = match causal {
            Some(offset) => (i + offset + 1).min(n),
            None => n,
        };
        let max = xr[..visible].iter().fold(F::neg_infinity(), |m, &v| m.max(v));
        let mut sum = F::zero();
        for (y, &v) in yr[..visible].iter_mut().zip(&xr[..visible]) {
            *y = (v - max).exp();
            sum = sum + *y;
        }
        for y in &mut yr[..visible] {
            *y = *y / sum;
        }
        for y in &mut yr[visible..] {
            *y = F::zero();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for t in 0..k {
                    c[i * n + j] += a[i * k + t] * b[t * n + j];
                }
            }
        }
        c
    }

    fn transpose(x: &[f64], r: usize, c: usize) -> Vec<f64> {
        let mut t = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                t[j * r + i] = x[i * c + j];
            }
        }
        t
    }

    #[test]
    fn transposed_variants_agree_with_plain_product() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let want = naive(&a, &b, m, k, n);

        let mut c = vec![0.0; m * n];
        matmul_bt_acc(&a, &transpose(&b, k, n), &mut c, m, k, n);
        for (x, y) in c.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }

        let mut c = vec![0.0; m * n];
        matmul_at_acc(&transpose(&a, m, k), &b, &mut c, k, m, n);
        for (x, y) in c.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn causal_softmax_hides_future() {
        let x = [1.0f64, 2.0, 3.0, 1.0, 2.0, 3.0];
        let mut y = [0.0; 6];
        softmax_rows(&x, &mut y, 3, Some(0));
        assert_eq!(y[0], 1.0);
        assert_eq!(&y[1..3], &[0.0, 0.0]);
        assert!((y[3] + y[4] - 1.0).abs() < 1e-12);
        assert_eq!(y[5], 0.0);
    }
}

//! Plain loops for the dense kernels. Reductions always run left to right so
//! results are bit-identical from run to run.

use super::tensor::Real;

/// `out[m,n] (+)= a[m,k] * b[k,n]`, accumulating in row-axpy form.
pub fn gemm<S: Real>(
    a: &[S],
    b: &[S],
    out: &mut [S],
    m: usize,
    k: usize,
    n: usize,
    accumulate: bool,
) {
    if !accumulate {
        out.iter_mut().for_each(|x| *x = S::zero());
    }
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &av) in a_row.iter().enumerate() {
            if av == S::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// `out[k,n] += a[m,k]^T * b[m,n]`.
pub fn gemm_tn_acc<S: Real>(a: &[S], b: &[S], out: &mut [S], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let b_row = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == S::zero() {
                continue;
            }
            let out_row = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

pub fn transpose<S: Real>(a: &[S], rows: usize, cols: usize) -> Vec<S> {
    let mut out = vec![S::zero(); a.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

pub fn gelu<S: Real>(x: S) -> S {
    let c = S::lit((2.0 / std::f64::consts::PI).sqrt());
    let inner = c * (x + S::lit(0.044715) * x * x * x);
    S::lit(0.5) * x * (S::one() + inner.tanh())
}

pub fn gelu_grad<S: Real>(x: S) -> S {
    let c = S::lit((2.0 / std::f64::consts::PI).sqrt());
    let inner = c * (x + S::lit(0.044715) * x * x * x);
    let t = inner.tanh();
    let dinner = c * (S::one() + S::lit(3.0 * 0.044715) * x * x);
    S::lit(0.5) * (S::one() + t) + S::lit(0.5) * x * (S::one() - t * t) * dinner
}

/// Iterates over the lanes of a `rows x cols` matrix along `axis`: rows for
/// axis 1, columns for axis 0. Yields `(start, stride, len)`.
pub fn lanes(rows: usize, cols: usize, axis: usize) -> impl Iterator<Item = (usize, usize, usize)> {
    let (count, step, stride, len) = if axis == 1 {
        (rows, cols, 1, cols)
    } else {
        (cols, 1, cols, rows)
    };
    (0..count).map(move |l| (l * step, stride, len))
}

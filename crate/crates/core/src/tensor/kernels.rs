//! Numeric kernels shared by the tape's forward and backward passes.

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

/// `tanh` through a single `exp`; absolute error stays near one ulp of 1.
#[inline]
fn tanh_exp(z: f64) -> f64 {
    let e = (-2.0 * z.abs()).exp();
    ((1.0 - e) / (1.0 + e)).copysign(z)
}

/// Tanh-approximation GELU and its derivative.
#[inline]
pub fn gelu_with_grad(x: f64) -> (f64, f64) {
    let t = tanh_exp(GELU_K * (x + GELU_C * x * x * x));
    let y = 0.5 * x * (1.0 + t);
    let dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_C * x * x);
    (y, dy)
}

/// Tanh-approximation GELU.
pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + tanh_exp(GELU_K * (x + GELU_C * x * x * x)))
}

pub fn gelu_scalar_grad(x: f64) -> f64 {
    gelu_with_grad(x).1
}

/// Row-major matrix operand described by its strides, so transposed views
/// cost nothing.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a> {
    pub data: &'a [f64],
    pub row_stride: isize,
    pub col_stride: isize,
}

impl<'a> MatRef<'a> {
    pub fn rows_major(data: &'a [f64], cols: usize) -> Self {
        Self { data, row_stride: cols as isize, col_stride: 1 }
    }

    /// Transposed view of a row-major `[rows, cols]` buffer.
    pub fn transposed(data: &'a [f64], cols: usize) -> Self {
        Self { data, row_stride: 1, col_stride: cols as isize }
    }
}

/// `out[m×n] = beta·out + a[m×k]·b[k×n]`, `out` row-major.
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: MatRef, b: MatRef, beta: f64, out: &mut [f64]) {
    assert_eq!(out.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        out.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    // SAFETY: every operand buffer covers the index range implied by its
    // dimensions and strides; checked by the callers' shape validation and
    // the debug assertions below.
    debug_assert!(a.data.len() >= m * k);
    debug_assert!(b.data.len() >= k * n);
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.row_stride,
            a.col_stride,
            b.data.as_ptr(),
            b.row_stride,
            b.col_stride,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Freshly allocated `a[m×k]·b[k×n]`, row-major.
pub(crate) fn gemm_new(m: usize, k: usize, n: usize, a: MatRef, b: MatRef) -> Vec<f64> {
    if m == 0 || n == 0 || k == 0 {
        return vec![0.0; m * n];
    }
    debug_assert!(a.data.len() >= m * k);
    debug_assert!(b.data.len() >= k * n);
    let mut out = Vec::with_capacity(m * n);
    // SAFETY: as in `gemm`; with beta = 0 dgemm only writes the output, so
    // every element of the reserved capacity is initialized before `set_len`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.row_stride,
            a.col_stride,
            b.data.as_ptr(),
            b.row_stride,
            b.col_stride,
            0.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
        out.set_len(m * n);
    }
    out
}

/// How a broadcast operand's elements map onto the output's flat index.
#[derive(Debug, Clone)]
pub(crate) enum BroadcastIndex {
    Same,
    Scalar,
    /// Operand equals the trailing dimensions of the output.
    Suffix(usize),
    General(Vec<usize>),
}

impl BroadcastIndex {
    #[inline]
    pub fn map(&self, i: usize) -> usize {
        match self {
            BroadcastIndex::Same => i,
            BroadcastIndex::Scalar => 0,
            BroadcastIndex::Suffix(n) => i % n,
            BroadcastIndex::General(idx) => idx[i],
        }
    }
}

/// Numpy-style broadcast of two shapes.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Index map from `out` positions into an operand of shape `src`, which must
/// broadcast to `out`.
pub(crate) fn broadcast_index(src: &[usize], out: &[usize]) -> BroadcastIndex {
    let src_n: usize = src.iter().product();
    let out_n: usize = out.iter().product();
    if src_n == out_n {
        return BroadcastIndex::Same;
    }
    if src_n == 1 {
        return BroadcastIndex::Scalar;
    }
    let trimmed: Vec<usize> = src.iter().copied().skip_while(|&d| d == 1).collect();
    if out.ends_with(&trimmed) {
        return BroadcastIndex::Suffix(src_n);
    }
    let rank = out.len();
    let offset = rank - src.len();
    // Strides of src aligned to the output rank, zero on broadcast axes.
    let mut strides = vec![0usize; rank];
    let mut acc = 1;
    for i in (0..src.len()).rev() {
        if src[i] != 1 {
            strides[i + offset] = acc;
        }
        acc *= src[i];
    }
    let mut idx = Vec::with_capacity(out_n);
    let mut counter = vec![0usize; rank];
    let mut pos = 0usize;
    for _ in 0..out_n {
        idx.push(pos);
        for ax in (0..rank).rev() {
            counter[ax] += 1;
            pos += strides[ax];
            if counter[ax] < out[ax] {
                break;
            }
            pos -= strides[ax] * counter[ax];
            counter[ax] = 0;
        }
    }
    BroadcastIndex::General(idx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_reference_points() {
        assert_eq!(gelu_scalar(0.0), 0.0);
        let g = gelu_scalar(10.0);
        assert!((9.999..=10.0).contains(&g));
        assert!(gelu_scalar(-10.0).abs() < 1e-10);
    }

    #[test]
    fn tanh_through_exp_matches_std() {
        for i in -4000..=4000 {
            let z = i as f64 * 0.005;
            assert!((tanh_exp(z) - z.tanh()).abs() <= 4e-16, "z = {z}");
        }
        assert_eq!(tanh_exp(1e3), 1.0);
        assert_eq!(tanh_exp(-1e3), -1.0);
    }

    #[test]
    fn gemm_transposed_views() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut out = [0.0; 4];
        gemm(2, 2, 2, MatRef::rows_major(&a, 2), MatRef::rows_major(&b, 2), 0.0, &mut out);
        assert_eq!(out, [19.0, 22.0, 43.0, 50.0]);
        // a^T b
        gemm(2, 2, 2, MatRef::transposed(&a, 2), MatRef::rows_major(&b, 2), 0.0, &mut out);
        assert_eq!(out, [26.0, 30.0, 38.0, 44.0]);
        let fresh = gemm_new(2, 2, 2, MatRef::transposed(&a, 2), MatRef::rows_major(&b, 2));
        assert_eq!(fresh, out);
        assert_eq!(gemm_new(2, 0, 3, MatRef::rows_major(&[], 0), MatRef::rows_major(&[], 3)), vec![0.0; 6]);
    }

    #[test]
    fn broadcast_maps() {
        assert_eq!(broadcast_shape(&[3, 1], &[2, 3, 4]), Some(vec![2, 3, 4]));
        assert_eq!(broadcast_shape(&[3], &[2, 4]), None);
        let idx = broadcast_index(&[3, 1], &[2, 3, 2]);
        let mapped: Vec<usize> = (0..12).map(|i| idx.map(i)).collect();
        assert_eq!(mapped, vec![0, 0, 1, 1, 2, 2, 0, 0, 1, 1, 2, 2]);
        let idx = broadcast_index(&[1, 4], &[3, 4]);
        assert_eq!(idx.map(5), 1);
    }
}

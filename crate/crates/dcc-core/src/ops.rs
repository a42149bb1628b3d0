//! Numeric kernels with hand-derived gradients. Summation order is fixed in
//! every kernel (sequential over the index ranges shown), which makes traces
//! bit-reproducible and lets the cache-equivalence tests compare runs exactly.

use crate::tensor::{Scalar, Tensor, TensorError};

fn check_2d<T: Scalar>(t: &Tensor<T>, op: &'static str) -> Result<(usize, usize), TensorError> {
    match t.shape() {
        [m, n] => Ok((*m, *n)),
        other => Err(TensorError::ShapeMismatch {
            op,
            lhs: other.to_vec(),
            rhs: vec![],
        }),
    }
}

/// C[m×n] = A[m×k] · B[k×n].
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    let (m, ka) = check_2d(a, "matmul")?;
    let (kb, n) = check_2d(b, "matmul")?;
    if ka != kb {
        return Err(TensorError::ShapeMismatch {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let mut c = Tensor::zeros(&[m, n]);
    matmul_into(a.data(), b.data(), c.data_mut(), m, ka, n);
    Ok(c)
}

/// C += A·B over raw row-major slices. i-k-j loop order: the inner loop runs
/// over contiguous rows of B and C and vectorizes.
pub fn matmul_into<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (kk, &aik) in a_row.iter().enumerate() {
            if aik == T::zero() {
                continue;
            }
            let b_row = &b[kk * n..(kk + 1) * n];
            for (cj, &bj) in c_row.iter_mut().zip(b_row) {
                *cj += aik * bj;
            }
        }
    }
}

/// C += A·Bᵀ where A is [m×k], B is [n×k]; inner loop is a dot product over
/// two contiguous rows.
pub fn matmul_nt_into<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (j, cj) in c_row.iter_mut().enumerate() {
            let b_row = &b[j * k..(j + 1) * k];
            *cj += dot(a_row, b_row);
        }
    }
}

/// C += Aᵀ·B where A is [m×k], B is [m×n], C is [k×n].
pub fn matmul_tn_into<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(c.len(), k * n);
    for l in 0..m {
        let a_row = &a[l * k..(l + 1) * k];
        let b_row = &b[l * n..(l + 1) * n];
        for (i, &ali) in a_row.iter().enumerate() {
            if ali == T::zero() {
                continue;
            }
            let c_row = &mut c[i * n..(i + 1) * n];
            for (cj, &bj) in c_row.iter_mut().zip(b_row) {
                *cj += ali * bj;
            }
        }
    }
}

/// Dot product with eight fixed accumulator lanes. The lane structure is a
/// fixed summation order (independent of vector width or thread count), so
/// results stay bit-reproducible while the lanes vectorize.
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    const LANES: usize = 8;
    let mut acc = [T::zero(); LANES];
    let chunks = a.len() / LANES;
    for i in 0..chunks {
        let off = i * LANES;
        for l in 0..LANES {
            acc[l] += a[off + l] * b[off + l];
        }
    }
    let mut tail = T::zero();
    for i in chunks * LANES..a.len() {
        tail += a[i] * b[i];
    }
    let mut sum = T::zero();
    for l in 0..LANES {
        sum += acc[l];
    }
    sum + tail
}

/// Gradients of C = A·B given dC: (dA, dB) = (dC·Bᵀ, Aᵀ·dC).
pub fn matmul_backward<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    dc: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>), TensorError> {
    let (m, k) = check_2d(a, "matmul_backward")?;
    let (_, n) = check_2d(b, "matmul_backward")?;
    let (dm, dn) = check_2d(dc, "matmul_backward")?;
    if dm != m || dn != n {
        return Err(TensorError::ShapeMismatch {
            op: "matmul_backward",
            lhs: dc.shape().to_vec(),
            rhs: vec![m, n],
        });
    }
    let mut da = Tensor::zeros(&[m, k]);
    let mut db = Tensor::zeros(&[k, n]);
    matmul_nt_into(dc.data(), b.data(), da.data_mut(), m, n, k);
    matmul_tn_into(a.data(), dc.data(), db.data_mut(), m, k, n);
    Ok((da, db))
}

/// Numerically stable softmax over a slice, in place (max subtraction).
pub fn softmax_in_place<T: Scalar>(xs: &mut [T]) {
    let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x /= sum;
    }
}

/// Row-wise softmax of a 2-D tensor.
pub fn softmax_rows<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut out = x.clone();
    let n = out.cols();
    if n == 0 {
        return out;
    }
    for i in 0..out.rows() {
        softmax_in_place(out.row_mut(i));
    }
    out
}

/// dX for Y = softmax_rows(X): dx = (dy − ⟨dy, y⟩) ⊙ y per row.
pub fn softmax_rows_backward<T: Scalar>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = dy.clone();
    for i in 0..y.rows() {
        softmax_backward_row(y.row(i), dx.row_mut(i));
    }
    dx
}

/// In-place row variant used by the attention backward pass; `d` holds dy on
/// entry and dx on exit.
pub fn softmax_backward_row<T: Scalar>(y: &[T], d: &mut [T]) {
    let inner = dot(d, y);
    for (dj, &yj) in d.iter_mut().zip(y) {
        *dj = (*dj - inner) * yj;
    }
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// tanh-form GELU.
pub fn gelu<T: Scalar>(x: T) -> T {
    let c = T::from_f64(0.797_884_560_802_865_4); // sqrt(2/pi)
    let k = T::from_f64(0.044715);
    let half = T::from_f64(0.5);
    half * x * (T::one() + (c * (x + k * x * x * x)).tanh())
}

/// Analytic derivative of the tanh-form GELU.
pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::from_f64(0.797_884_560_802_865_4);
    let k = T::from_f64(0.044715);
    let half = T::from_f64(0.5);
    let three = T::from_f64(3.0);
    let u = c * (x + k * x * x * x);
    let t = u.tanh();
    let du = c * (T::one() + three * k * x * x);
    half * (T::one() + t) + half * x * (T::one() - t * t) * du
}

/// Per-row normalization stash for the backward pass: normalized values and
/// reciprocal standard deviation.
pub struct LayerNormStash<T> {
    pub normalized: Tensor<T>,
    pub rstd: Vec<T>,
}

/// y = gain ⊙ (x − mean)/sqrt(var + eps) + bias along the last axis.
pub fn layer_norm<T: Scalar>(
    x: &Tensor<T>,
    gain: &[T],
    bias: &[T],
    eps: T,
) -> (Tensor<T>, LayerNormStash<T>) {
    let d = x.cols();
    assert_eq!(gain.len(), d, "layer_norm gain length");
    assert_eq!(bias.len(), d, "layer_norm bias length");
    let rows = x.rows();
    let mut out = Tensor::zeros(x.shape());
    let mut normalized = Tensor::zeros(x.shape());
    let mut rstd = Vec::with_capacity(rows);
    let inv_d = T::one() / T::from_f64(d as f64);
    for i in 0..rows {
        let xr = x.row(i);
        let mut mean = T::zero();
        for &v in xr {
            mean += v;
        }
        mean *= inv_d;
        let mut var = T::zero();
        for &v in xr {
            let c = v - mean;
            var += c * c;
        }
        var *= inv_d;
        let r = T::one() / (var + eps).sqrt();
        rstd.push(r);
        let nr = normalized.row_mut(i);
        for (n, &v) in nr.iter_mut().zip(xr) {
            *n = (v - mean) * r;
        }
        let or = out.row_mut(i);
        for j in 0..d {
            or[j] = gain[j] * nr[j] + bias[j];
        }
    }
    (out, LayerNormStash { normalized, rstd })
}

/// Backward for layer_norm. Accumulates dgain/dbias, returns dx.
pub fn layer_norm_backward<T: Scalar>(
    stash: &LayerNormStash<T>,
    gain: &[T],
    dy: &Tensor<T>,
    dgain: &mut [T],
    dbias: &mut [T],
) -> Tensor<T> {
    let d = dy.cols();
    let inv_d = T::one() / T::from_f64(d as f64);
    let mut dx = Tensor::zeros(dy.shape());
    for i in 0..dy.rows() {
        let dyr = dy.row(i);
        let nr = stash.normalized.row(i);
        for j in 0..d {
            dgain[j] += dyr[j] * nr[j];
            dbias[j] += dyr[j];
        }
        // dL/dn = dy ⊙ gain; dx = (dn − mean(dn) − n ⊙ mean(dn ⊙ n)) · rstd
        let mut mean_dn = T::zero();
        let mut mean_dn_n = T::zero();
        for j in 0..d {
            let dn = dyr[j] * gain[j];
            mean_dn += dn;
            mean_dn_n += dn * nr[j];
        }
        mean_dn *= inv_d;
        mean_dn_n *= inv_d;
        let r = stash.rstd[i];
        let dxr = dx.row_mut(i);
        for j in 0..d {
            let dn = dyr[j] * gain[j];
            dxr[j] = (dn - mean_dn - nr[j] * mean_dn_n) * r;
        }
    }
    dx
}

/// Mean negative log-softmax probability of the targets.
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, targets: &[usize]) -> Result<T, TensorError> {
    let (rows, vocab) = check_2d(logits, "cross_entropy")?;
    assert_eq!(rows, targets.len(), "cross_entropy row/target count");
    let mut total = T::zero();
    for (i, &t) in targets.iter().enumerate() {
        if t >= vocab {
            return Err(TensorError::TargetOutOfRange { id: t, vocab });
        }
        let row = logits.row(i);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for &v in row {
            sum += (v - max).exp();
        }
        total += sum.ln() + max - row[t];
    }
    Ok(total / T::from_f64(rows as f64))
}

/// dlogits for the mean cross-entropy: (softmax − onehot)/rows.
pub fn cross_entropy_backward<T: Scalar>(
    logits: &Tensor<T>,
    targets: &[usize],
) -> Result<Tensor<T>, TensorError> {
    let (rows, vocab) = check_2d(logits, "cross_entropy")?;
    let inv = T::one() / T::from_f64(rows as f64);
    let mut d = logits.clone();
    for (i, &t) in targets.iter().enumerate() {
        if t >= vocab {
            return Err(TensorError::TargetOutOfRange { id: t, vocab });
        }
        let row = d.row_mut(i);
        softmax_in_place(row);
        row[t] -= T::one();
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    /// Central finite difference of a scalar-valued function with respect to
    /// every coordinate of `x`, compared against the analytic gradient.
    fn assert_fd_matches<F>(x: &Tensor<f64>, analytic: &Tensor<f64>, f: F, tol: f64)
    where
        F: Fn(&Tensor<f64>) -> f64,
    {
        let eps = 1e-3;
        for i in 0..x.numel() {
            let mut plus = x.clone();
            plus.data_mut()[i] += eps;
            let mut minus = x.clone();
            minus.data_mut()[i] -= eps;
            let fd = (f(&plus) - f(&minus)) / (2.0 * eps);
            let an = analytic.data()[i];
            let denom = fd.abs().max(an.abs()).max(1e-8);
            assert!(
                (fd - an).abs() / denom < tol,
                "coord {i}: fd={fd}, analytic={an}"
            );
        }
    }

    #[test]
    fn matmul_identity() {
        let i2 = Tensor::from_rows(&[vec![1.0f32, 0.0], vec![0.0, 1.0]]).unwrap();
        let a = Tensor::from_rows(&[vec![1.0f32, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(matmul(&i2, &a).unwrap(), a);
    }

    #[test]
    fn matmul_hand_case() {
        let a = Tensor::from_rows(&[vec![1.0f32, 2.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![3.0f32], vec![4.0]]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_error_reports_both_shapes() {
        let a = Tensor::<f32>::zeros(&[2, 3]);
        let b = Tensor::<f32>::zeros(&[4, 2]);
        let err = matmul(&a, &b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
    }

    #[test]
    fn matmul_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = rand_tensor(&mut rng, &[8, 8]);
        let b = rand_tensor(&mut rng, &[8, 8]);
        let w = rand_tensor(&mut rng, &[8, 8]); // cotangent: L = sum(C ⊙ W)
        let (da, db) = matmul_backward(&a, &b, &w).unwrap();
        let loss_a = |t: &Tensor<f64>| {
            let c = matmul(t, &b).unwrap();
            dot(c.data(), w.data())
        };
        let loss_b = |t: &Tensor<f64>| {
            let c = matmul(&a, t).unwrap();
            dot(c.data(), w.data())
        };
        assert_fd_matches(&a, &da, loss_a, 1e-6);
        assert_fd_matches(&b, &db, loss_b, 1e-6);
    }

    #[test]
    fn softmax_symmetry_and_saturation() {
        let x = Tensor::from_rows(&[vec![0.0f64, 0.0], vec![1000.0, 0.0]]).unwrap();
        let y = softmax_rows(&x);
        assert!((y.row(0)[0] - 0.5).abs() < 1e-12);
        assert!((y.row(1)[0] - 1.0).abs() < 1e-12);
        assert!(y.row(1)[1] < 1e-12);
    }

    #[test]
    fn softmax_direct_evaluation() {
        let x = Tensor::from_rows(&[vec![1.0f64, 2.0, 3.0]]).unwrap();
        let y = softmax_rows(&x);
        let expect = [0.09003057, 0.24472847, 0.66524096];
        for (a, e) in y.data().iter().zip(expect) {
            assert!((a - e).abs() < 1e-4);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one_over_extreme_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let n = rng.gen_range(1..9);
            let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-1e4..1e4)).collect();
            let x = Tensor::from_vec(&[1, n], data).unwrap();
            let y = softmax_rows(&x);
            let sum: f64 = y.data().iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
            assert!(y.data().iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn softmax_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_tensor(&mut rng, &[4, 6]);
        let w = rand_tensor(&mut rng, &[4, 6]);
        let y = softmax_rows(&x);
        let dx = softmax_rows_backward(&y, &w);
        let loss = |t: &Tensor<f64>| {
            let y = softmax_rows(t);
            dot(y.data(), w.data())
        };
        assert_fd_matches(&x, &dx, loss, 1e-4);
    }

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!((sigmoid(1.0f64) - 0.731058).abs() < 1e-5);
        let eps = 1.0 - sigmoid(50.0f64);
        assert!(eps < 1e-20, "eps={eps}");
        assert!(sigmoid(-3.0f64) < sigmoid(-2.0f64));
    }

    #[test]
    fn gelu_gradient_matches_finite_differences() {
        for x in [-2.5f64, -1.0, -0.1, 0.0, 0.3, 1.7] {
            let eps = 1e-4;
            let fd = (gelu(x + eps) - gelu(x - eps)) / (2.0 * eps);
            let an = gelu_grad(x);
            assert!((fd - an).abs() < 1e-7, "x={x}: fd={fd} an={an}");
        }
    }

    #[test]
    fn layer_norm_constant_row_is_zero() {
        let x = Tensor::from_rows(&[vec![3.0f64; 8]]).unwrap();
        let gain = vec![1.0; 8];
        let bias = vec![0.0; 8];
        let (y, _) = layer_norm(&x, &gain, &bias, 1e-5);
        assert!(y.data().iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn layer_norm_already_normalized_row() {
        let x = Tensor::from_rows(&[vec![1.0f64, -1.0]]).unwrap();
        let (y, _) = layer_norm(&x, &[1.0, 1.0], &[0.0, 0.0], 1e-12);
        assert!((y.data()[0] - 1.0).abs() < 1e-6);
        assert!((y.data()[1] + 1.0).abs() < 1e-6);
    }

    #[test]
    fn layer_norm_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = rand_tensor(&mut rng, &[4, 8]);
        let w = rand_tensor(&mut rng, &[4, 8]);
        let gain: Vec<f64> = (0..8).map(|_| rng.gen_range(0.5..1.5)).collect();
        let bias: Vec<f64> = (0..8).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let (_, stash) = layer_norm(&x, &gain, &bias, 1e-5);
        let mut dgain = vec![0.0; 8];
        let mut dbias = vec![0.0; 8];
        let dx = layer_norm_backward(&stash, &gain, &w, &mut dgain, &mut dbias);
        let loss = |t: &Tensor<f64>| {
            let (y, _) = layer_norm(t, &gain, &bias, 1e-5);
            dot(y.data(), w.data())
        };
        assert_fd_matches(&x, &dx, loss, 1e-5);
    }

    #[test]
    fn cross_entropy_uniform_and_saturated() {
        let v = 512;
        let logits = Tensor::<f64>::zeros(&[1, v]);
        let loss = cross_entropy(&logits, &[17]).unwrap();
        assert!((loss - (v as f64).ln()).abs() < 1e-4);

        let mut hot = Tensor::<f64>::zeros(&[1, v]);
        hot.data_mut()[3] = 50.0;
        let loss = cross_entropy(&hot, &[3]).unwrap();
        assert!(loss < 1e-9);
    }

    #[test]
    fn cross_entropy_target_out_of_range() {
        let logits = Tensor::<f64>::zeros(&[1, 4]);
        let err = cross_entropy(&logits, &[4]).unwrap_err();
        assert!(matches!(err, TensorError::TargetOutOfRange { .. }));
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = rand_tensor(&mut rng, &[3, 7]);
        let targets = vec![2usize, 0, 6];
        let dx = cross_entropy_backward(&x, &targets).unwrap();
        let loss = |t: &Tensor<f64>| cross_entropy(t, &targets).unwrap();
        assert_fd_matches(&x, &dx, loss, 1e-5);
    }
}

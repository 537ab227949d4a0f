//! Row-wise numeric kernels shared by the tape and the incremental
//! inference path. Each output row depends only on the matching input row,
//! so evaluating one row in isolation reproduces the batched result bit for bit.

pub const RMS_EPS: f32 = 1e-5;

/// Dot product with a fixed eight-lane accumulation order.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f32; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let ra = ca.remainder();
    let rb = cb.remainder();
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0f32;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// `out[row] = a_row · B` for one row of A. `b` is k×m row-major.
#[inline]
pub fn vec_mat(a_row: &[f32], b: &[f32], m: usize, out: &mut [f32]) {
    out.fill(0.0);
    for (p, &av) in a_row.iter().enumerate() {
        if av == 0.0 {
            continue;
        }
        let b_row = &b[p * m..(p + 1) * m];
        for (o, &bv) in out.iter_mut().zip(b_row) {
            *o += av * bv;
        }
    }
}

/// C = A·B with A n×k, B k×m.
pub fn matmul(a: &[f32], b: &[f32], n: usize, k: usize, m: usize) -> Vec<f32> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        vec_mat(&a[i * k..(i + 1) * k], b, m, &mut out[i * m..(i + 1) * m]);
    }
    out
}

/// C = A·Bᵀ with A n×k, B m×k.
pub fn matmul_t(a: &[f32], b: &[f32], n: usize, k: usize, m: usize) -> Vec<f32> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..m {
            out[i * m + j] = dot(a_row, &b[j * k..(j + 1) * k]);
        }
    }
    out
}

/// acc += Aᵀ·C with A n×k, C n×m, acc k×m.
pub fn add_matmul_tn(a: &[f32], c: &[f32], n: usize, k: usize, m: usize, acc: &mut [f32]) {
    for i in 0..n {
        let c_row = &c[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let acc_row = &mut acc[p * m..(p + 1) * m];
            for (o, &cv) in acc_row.iter_mut().zip(c_row) {
                *o += av * cv;
            }
        }
    }
}

pub fn softmax_row(x: &[f32], out: &mut [f32]) {
    let max = x.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f32;
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v - max).exp();
        sum += *o;
    }
    let inv = 1.0 / sum;
    for o in out.iter_mut() {
        *o *= inv;
    }
}

pub fn log_softmax_row(x: &[f32], out: &mut [f32]) {
    let max = x.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f32;
    for &v in x {
        sum += (v - max).exp();
    }
    let lse = max + sum.ln();
    for (o, &v) in out.iter_mut().zip(x) {
        *o = v - lse;
    }
}

/// Parameter-free RMS normalisation; returns the inverse RMS.
pub fn rms_norm_row(x: &[f32], out: &mut [f32]) -> f32 {
    let ms = x.iter().map(|v| v * v).sum::<f32>() / x.len() as f32;
    let inv = 1.0 / (ms + RMS_EPS).sqrt();
    for (o, &v) in out.iter_mut().zip(x) {
        *o = v * inv;
    }
    inv
}

//! Parameter storage and the dense kernels everything else is built on.
//!
//! Parameters are stored as 32-bit floats (the checkpoint format) but all
//! arithmetic runs in f64: each parameter keeps an f64 mirror of its f32
//! data, refreshed on every write, and forward/backward read only the
//! mirror. Gradients, optimizer state, and activations are f64 throughout.

/// One named parameter tensor.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub dims: Vec<usize>,
    v32: Vec<f32>,
    v64: Vec<f64>,
}

impl Param {
    pub fn zeros(name: impl Into<String>, dims: Vec<usize>) -> Param {
        let len = dims.iter().product();
        Param { name: name.into(), dims, v32: vec![0.0; len], v64: vec![0.0; len] }
    }

    pub fn len(&self) -> usize {
        self.v32.len()
    }

    /// Compute view; always equals the f32 data promoted to f64.
    pub fn w(&self) -> &[f64] {
        &self.v64
    }

    pub fn w32(&self) -> &[f32] {
        &self.v32
    }

    pub fn get(&self, i: usize) -> f64 {
        self.v64[i]
    }

    /// Writes one element, rounding through f32 storage.
    pub fn set(&mut self, i: usize, x: f64) {
        self.v32[i] = x as f32;
        self.v64[i] = self.v32[i] as f64;
    }

    pub fn fill_from_f32(&mut self, data: &[f32]) {
        assert_eq!(data.len(), self.v32.len(), "{}: size mismatch", self.name);
        self.v32.copy_from_slice(data);
        for (d, &s) in self.v64.iter_mut().zip(data) {
            *d = s as f64;
        }
    }
}

/// y[m,n] += x[m,k] @ w[k,n]
pub fn matmul_acc(y: &mut [f64], x: &[f64], w: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(y.len(), m * n);
    debug_assert_eq!(x.len(), m * k);
    debug_assert_eq!(w.len(), k * n);
    for i in 0..m {
        let yrow = &mut y[i * n..(i + 1) * n];
        let xrow = &x[i * k..(i + 1) * k];
        for (kk, &a) in xrow.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            let wrow = &w[kk * n..(kk + 1) * n];
            for (yj, &wj) in yrow.iter_mut().zip(wrow) {
                *yj += a * wj;
            }
        }
    }
}

/// y[m,n] += x[m,k] @ w[n,k]^T  (w stored row-major as [n,k])
pub fn matmul_bt_acc(y: &mut [f64], x: &[f64], w: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(y.len(), m * n);
    debug_assert_eq!(x.len(), m * k);
    debug_assert_eq!(w.len(), n * k);
    for i in 0..m {
        let xrow = &x[i * k..(i + 1) * k];
        let yrow = &mut y[i * n..(i + 1) * n];
        for (j, yj) in yrow.iter_mut().enumerate() {
            let wrow = &w[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (xa, wa) in xrow.iter().zip(wrow) {
                acc += xa * wa;
            }
            *yj += acc;
        }
    }
}

/// dw[k,n] += x[m,k]^T @ dy[m,n]
pub fn matmul_at_acc(dw: &mut [f64], x: &[f64], dy: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(dw.len(), k * n);
    debug_assert_eq!(x.len(), m * k);
    debug_assert_eq!(dy.len(), m * n);
    for i in 0..m {
        let xrow = &x[i * k..(i + 1) * k];
        let dyrow = &dy[i * n..(i + 1) * n];
        for (kk, &a) in xrow.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            let drow = &mut dw[kk * n..(kk + 1) * n];
            for (dj, &gj) in drow.iter_mut().zip(dyrow) {
                *dj += a * gj;
            }
        }
    }
}

/// Softmax of one score row where only `allowed` entries participate;
/// disallowed entries come out as exactly zero.
pub fn softmax_row(scores: &mut [f64], allowed: impl Fn(usize) -> bool) {
    let mut max = f64::NEG_INFINITY;
    for (j, &s) in scores.iter().enumerate() {
        if allowed(j) && s > max {
            max = s;
        }
    }
    let mut sum = 0.0;
    for (j, s) in scores.iter_mut().enumerate() {
        if allowed(j) {
            *s = (*s - max).exp();
            sum += *s;
        } else {
            *s = 0.0;
        }
    }
    for s in scores.iter_mut() {
        *s /= sum;
    }
}

/// In-place log-softmax of a full row.
pub fn log_softmax_row(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for &x in row.iter() {
        sum += (x - max).exp();
    }
    let log_z = max + sum.ln();
    for x in row.iter_mut() {
        *x -= log_z;
    }
}

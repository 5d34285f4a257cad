//! Dense layers with batched forward/backward on row-major sample matrices.

use rand::Rng;

/// Affine layer `y = W x + b`, `W` stored `out × in` row major.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    /// Kaiming-uniform weights for ReLU fan-in, zero bias.
    pub fn kaiming(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / in_dim as f64).sqrt();
        let mut layer = Self::zeros(in_dim, out_dim);
        for w in &mut layer.weight {
            *w = rng.random_range(-bound..bound);
        }
        layer
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.in_dim, self.out_dim)
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    /// `y[n × out] = x[n × in] Wᵀ + b`.
    pub fn forward(&self, x: &[f64], n: usize) -> Vec<f64> {
        debug_assert_eq!(x.len(), n * self.in_dim);
        let mut y = Vec::with_capacity(n * self.out_dim);
        for _ in 0..n {
            y.extend_from_slice(&self.bias);
        }
        if n == 0 {
            return y;
        }
        unsafe {
            matrixmultiply::dgemm(
                n,
                self.in_dim,
                self.out_dim,
                1.0,
                x.as_ptr(),
                self.in_dim as isize,
                1,
                self.weight.as_ptr(),
                1,
                self.in_dim as isize,
                1.0,
                y.as_mut_ptr(),
                self.out_dim as isize,
                1,
            );
        }
        y
    }

    /// Accumulate `dW += dyᵀ x`, `db += Σ dy` into `grad`; return `dx = dy W` when asked.
    pub fn backward(&self, x: &[f64], dy: &[f64], n: usize, grad: &mut Dense, want_dx: bool) -> Option<Vec<f64>> {
        debug_assert_eq!(dy.len(), n * self.out_dim);
        if n == 0 {
            return want_dx.then(Vec::new);
        }
        unsafe {
            matrixmultiply::dgemm(
                self.out_dim,
                n,
                self.in_dim,
                1.0,
                dy.as_ptr(),
                1,
                self.out_dim as isize,
                x.as_ptr(),
                self.in_dim as isize,
                1,
                1.0,
                grad.weight.as_mut_ptr(),
                self.in_dim as isize,
                1,
            );
        }
        for row in dy.chunks_exact(self.out_dim) {
            for (b, d) in grad.bias.iter_mut().zip(row) {
                *b += d;
            }
        }
        if !want_dx {
            return None;
        }
        let mut dx = vec![0.0; n * self.in_dim];
        unsafe {
            matrixmultiply::dgemm(
                n,
                self.out_dim,
                self.in_dim,
                1.0,
                dy.as_ptr(),
                self.out_dim as isize,
                1,
                self.weight.as_ptr(),
                self.in_dim as isize,
                1,
                0.0,
                dx.as_mut_ptr(),
                self.in_dim as isize,
                1,
            );
        }
        Some(dx)
    }
}

pub fn relu_inplace(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// Zero gradient entries whose post-ReLU activation is not positive.
pub fn relu_backward(activation: &[f64], grad: &mut [f64]) {
    for (g, a) in grad.iter_mut().zip(activation) {
        if *a <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Row-wise concatenation of two sample matrices.
pub fn concat_rows(a: &[f64], a_dim: usize, b: &[f64], b_dim: usize, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * (a_dim + b_dim));
    for i in 0..n {
        out.extend_from_slice(&a[i * a_dim..(i + 1) * a_dim]);
        out.extend_from_slice(&b[i * b_dim..(i + 1) * b_dim]);
    }
    out
}

/// Keep only columns `[from, from + width)` of each row.
pub fn slice_cols(m: &[f64], dim: usize, from: usize, width: usize) -> Vec<f64> {
    m.chunks_exact(dim).flat_map(|r| r[from..from + width].iter().copied()).collect()
}

/// A bundle of parameter tensors in a fixed order.
pub trait Params {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn param_len(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn flatten(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Overwrite all tensors from a flat buffer in [`Params::tensors`] order.
    fn assign(&mut self, flat: &[f64]) -> crate::Result<()> {
        if flat.len() != self.param_len() {
            return Err(crate::Error::Format(format!(
                "parameter blob has {} values, expected {}",
                flat.len(),
                self.param_len()
            )));
        }
        let mut rest = flat;
        for t in self.tensors_mut() {
            let (head, tail) = rest.split_at(t.len());
            t.copy_from_slice(head);
            rest = tail;
        }
        Ok(())
    }
}

impl Params for Dense {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![&self.weight, &self.bias]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.weight, &mut self.bias]
    }
}

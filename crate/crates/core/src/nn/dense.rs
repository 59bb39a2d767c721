use super::linalg::gemm;

/// A fully connected layer whose weights live in a shared flat parameter
/// vector: an `in_dim x out_dim` row-major weight block at `offset`, then
/// `out_dim` biases.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub offset: usize,
}

impl Linear {
    pub fn param_count(in_dim: usize, out_dim: usize) -> usize {
        in_dim * out_dim + out_dim
    }

    pub fn end(&self) -> usize {
        self.offset + Self::param_count(self.in_dim, self.out_dim)
    }

    fn weights<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        &params[self.offset..self.offset + self.in_dim * self.out_dim]
    }

    fn bias<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        &params[self.offset + self.in_dim * self.out_dim..self.end()]
    }

    /// `y = x W + b` for `n` rows.
    pub fn forward(&self, params: &[f64], x: &[f64], n: usize) -> Vec<f64> {
        let mut y = Vec::with_capacity(n * self.out_dim);
        let b = self.bias(params);
        for _ in 0..n {
            y.extend_from_slice(b);
        }
        gemm(n, self.in_dim, self.out_dim, x, false, self.weights(params), false, 1.0, &mut y);
        y
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx` when
    /// requested.
    pub fn backward(&self, params: &[f64], x: &[f64], dy: &[f64], n: usize, grad: &mut [f64], want_dx: bool) -> Option<Vec<f64>> {
        let wlen = self.in_dim * self.out_dim;
        let (gw, gb) = grad[self.offset..self.end()].split_at_mut(wlen);
        gemm(self.in_dim, n, self.out_dim, x, true, dy, false, 1.0, gw);
        for row in dy.chunks_exact(self.out_dim) {
            for (g, d) in gb.iter_mut().zip(row) {
                *g += d;
            }
        }
        want_dx.then(|| {
            let mut dx = vec![0.0; n * self.in_dim];
            gemm(n, self.out_dim, self.in_dim, dy, false, self.weights(params), true, 0.0, &mut dx);
            dx
        })
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

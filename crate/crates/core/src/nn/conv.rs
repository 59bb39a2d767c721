use super::linalg::gemm;

/// 3x3 convolution, stride 1, zero padding 1, on `h x w x channels` images.
/// Weights are a `(9 * cin) x cout` block at `offset` (row index
/// `(ky * 3 + kx) * cin + c`), followed by `cout` biases.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv3x3 {
    pub cin: usize,
    pub cout: usize,
    pub offset: usize,
}

impl Conv3x3 {
    pub fn param_count(cin: usize, cout: usize) -> usize {
        9 * cin * cout + cout
    }

    pub fn end(&self) -> usize {
        self.offset + Self::param_count(self.cin, self.cout)
    }

    fn weights<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        &params[self.offset..self.offset + 9 * self.cin * self.cout]
    }

    /// Returns `(output, im2col buffer)`; the buffer is what `backward` needs.
    pub fn forward(&self, params: &[f64], x: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
        let cols = im2col(x, h, w, self.cin);
        let bias = &params[self.offset + 9 * self.cin * self.cout..self.end()];
        let mut y = Vec::with_capacity(h * w * self.cout);
        for _ in 0..h * w {
            y.extend_from_slice(bias);
        }
        gemm(h * w, 9 * self.cin, self.cout, &cols, false, self.weights(params), false, 1.0, &mut y);
        (y, cols)
    }

    /// Accumulates weight gradients when `grad` is given and returns `dL/dx`
    /// when requested.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        params: &[f64],
        cols: &[f64],
        dy: &[f64],
        h: usize,
        w: usize,
        grad: Option<&mut [f64]>,
        want_dx: bool,
    ) -> Option<Vec<f64>> {
        let k = 9 * self.cin;
        if let Some(grad) = grad {
            let (gw, gb) = grad[self.offset..self.end()].split_at_mut(k * self.cout);
            gemm(k, h * w, self.cout, cols, true, dy, false, 1.0, gw);
            for row in dy.chunks_exact(self.cout) {
                for (g, d) in gb.iter_mut().zip(row) {
                    *g += d;
                }
            }
        }
        want_dx.then(|| {
            let mut dcols = vec![0.0; h * w * k];
            gemm(h * w, self.cout, k, dy, false, self.weights(params), true, 0.0, &mut dcols);
            col2im(&dcols, h, w, self.cin)
        })
    }
}

fn im2col(x: &[f64], h: usize, w: usize, c: usize) -> Vec<f64> {
    let k = 9 * c;
    let mut cols = vec![0.0; h * w * k];
    for y in 0..h {
        for xx in 0..w {
            let row = &mut cols[(y * w + xx) * k..(y * w + xx + 1) * k];
            for ky in 0..3 {
                let sy = y as isize + ky as isize - 1;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for kx in 0..3 {
                    let sx = xx as isize + kx as isize - 1;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    let src = (sy as usize * w + sx as usize) * c;
                    let dst = (ky * 3 + kx) * c;
                    row[dst..dst + c].copy_from_slice(&x[src..src + c]);
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], h: usize, w: usize, c: usize) -> Vec<f64> {
    let k = 9 * c;
    let mut x = vec![0.0; h * w * c];
    for y in 0..h {
        for xx in 0..w {
            let row = &cols[(y * w + xx) * k..(y * w + xx + 1) * k];
            for ky in 0..3 {
                let sy = y as isize + ky as isize - 1;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for kx in 0..3 {
                    let sx = xx as isize + kx as isize - 1;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    let dst = (sy as usize * w + sx as usize) * c;
                    let src = (ky * 3 + kx) * c;
                    for ch in 0..c {
                        x[dst + ch] += row[src + ch];
                    }
                }
            }
        }
    }
    x
}

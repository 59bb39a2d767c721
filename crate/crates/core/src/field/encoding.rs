use std::f64::consts::PI;

/// Output width of [`positional_encode`] for `n_frequencies` octaves.
pub const fn encoded_dim(n_frequencies: usize) -> usize {
    3 + 6 * n_frequencies
}

/// `[x, sin(2^0 pi x), cos(2^0 pi x), ..., sin(2^(L-1) pi x), cos(2^(L-1) pi x)]`,
/// each term a 3-vector, written into `out`.
pub fn positional_encode_into(x: [f64; 3], n_frequencies: usize, out: &mut [f64]) {
    debug_assert_eq!(out.len(), encoded_dim(n_frequencies));
    out[..3].copy_from_slice(&x);
    let mut freq = PI;
    for l in 0..n_frequencies {
        let base = 3 + 6 * l;
        for k in 0..3 {
            let (s, c) = (freq * x[k]).sin_cos();
            out[base + k] = s;
            out[base + 3 + k] = c;
        }
        freq *= 2.0;
    }
}

pub fn positional_encode(x: [f64; 3], n_frequencies: usize) -> Vec<f64> {
    let mut out = vec![0.0; encoded_dim(n_frequencies)];
    positional_encode_into(x, n_frequencies, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_octaves_is_identity() {
        assert_eq!(positional_encode([0.5, -1.0, 2.0], 0), vec![0.5, -1.0, 2.0]);
    }

    #[test]
    fn origin_encodes_to_zero_sines_unit_cosines() {
        let e = positional_encode([0.0; 3], 4);
        for l in 0..4 {
            assert_eq!(&e[3 + 6 * l..6 + 6 * l], &[0.0; 3]);
            assert_eq!(&e[6 + 6 * l..9 + 6 * l], &[1.0; 3]);
        }
    }

    #[test]
    fn dimension_formula() {
        assert_eq!(encoded_dim(6), 39);
        assert_eq!(positional_encode([0.1, 0.2, 0.3], 6).len(), 39);
        assert_eq!(encoded_dim(10), 63);
    }

    #[test]
    fn octave_terms() {
        let x = [0.3, -0.2, 0.7];
        let e = positional_encode(x, 3);
        for l in 0..3 {
            let f = 2f64.powi(l as i32) * PI;
            for k in 0..3 {
                assert!((e[3 + 6 * l + k] - (f * x[k]).sin()).abs() < 1e-12);
                assert!((e[6 + 6 * l + k] - (f * x[k]).cos()).abs() < 1e-12);
            }
        }
    }
}

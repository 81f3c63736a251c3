//! Fixed separable linear resampling between grids.

/// `rows x cols` operator along one axis, stored as sparse rows.
#[derive(Debug, Clone)]
pub(crate) struct AxisOp {
    cols: usize,
    by_row: Vec<Vec<(usize, f64)>>,
}

impl AxisOp {
    fn from_dense(rows: usize, cols: usize, m: &[f64]) -> Self {
        let by_row = (0..rows).map(|r| (0..cols).filter(|&c| m[r * cols + c] != 0.0).map(|c| (c, m[r * cols + c])).collect()).collect();
        Self { cols, by_row }
    }

    /// Average over `n_in` cells into `n_out` bins. Bin `b` covers
    /// `[floor(b n_in / n_out), ceil((b + 1) n_in / n_out))`.
    pub(crate) fn average(n_in: usize, n_out: usize) -> Self {
        let mut m = vec![0.0; n_out * n_in];
        for b in 0..n_out {
            let lo = b * n_in / n_out;
            let hi = ((b + 1) * n_in).div_ceil(n_out).max(lo + 1);
            let w = 1.0 / (hi - lo) as f64;
            for c in lo..hi {
                m[b * n_in + c] = w;
            }
        }
        Self::from_dense(n_out, n_in, &m)
    }

    #[cfg(test)]
    fn entry(&self, r: usize, c: usize) -> f64 {
        self.by_row[r].iter().find(|(k, _)| *k == c).map_or(0.0, |(_, w)| *w)
    }
}

/// Tensor product of three axis operators acting on row-major `(h, w, d)` grids.
#[derive(Debug, Clone)]
pub(crate) struct Separable {
    axes: [AxisOp; 3],
}

impl Separable {
    pub(crate) fn new(axes: [AxisOp; 3]) -> Self {
        Self { axes }
    }

    pub(crate) fn input_dims(&self) -> [usize; 3] {
        self.axes.each_ref().map(|a| a.cols)
    }

    pub(crate) fn apply(&self, src: &[f64]) -> Vec<f64> {
        let mut dims = self.input_dims();
        let (a, next) = contract(src, dims, 0, &self.axes[0]);
        dims = next;
        let (b, next) = contract(&a, dims, 1, &self.axes[1]);
        dims = next;
        contract(&b, dims, 2, &self.axes[2]).0
    }
}

fn contract(src: &[f64], dims: [usize; 3], axis: usize, op: &AxisOp) -> (Vec<f64>, [usize; 3]) {
    let (taps, n_in) = (&op.by_row, op.cols);
    let n_out = taps.len();
    debug_assert_eq!(dims[axis], n_in);
    let outer: usize = dims[..axis].iter().product();
    let inner: usize = dims[axis + 1..].iter().product();
    let mut out_dims = dims;
    out_dims[axis] = n_out;
    let mut out = vec![0.0; outer * n_out * inner];
    if inner == 1 {
        for o in 0..outer {
            let s = &src[o * n_in..(o + 1) * n_in];
            for (r, row) in taps.iter().enumerate() {
                out[o * n_out + r] = row.iter().map(|&(c, w)| w * s[c]).sum();
            }
        }
        return (out, out_dims);
    }
    for o in 0..outer {
        let s_base = o * n_in * inner;
        let d_base = o * n_out * inner;
        for (r, row) in taps.iter().enumerate() {
            let dst = &mut out[d_base + r * inner..d_base + (r + 1) * inner];
            for &(c, w) in row {
                let s = &src[s_base + c * inner..s_base + (c + 1) * inner];
                for (d, v) in dst.iter_mut().zip(s) {
                    *d += w * v;
                }
            }
        }
    }
    (out, out_dims)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn average_rows_sum_to_one() {
        for (n_in, n_out) in [(16, 4), (5, 4), (3, 4), (4, 1), (48, 4)] {
            let a = AxisOp::average(n_in, n_out);
            for r in 0..n_out {
                let s: f64 = (0..n_in).map(|c| a.entry(r, c)).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn block_average_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let op = Separable::new([AxisOp::average(4, 2), AxisOp::average(4, 2), AxisOp::average(4, 2)]);
        let x: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = op.apply(&x);
        let mut direct = 0.0;
        for h in 0..2 {
            for w in 0..2 {
                for d in 0..2 {
                    direct += x[h * 16 + w * 4 + d];
                }
            }
        }
        assert!((y[0] - direct / 8.0).abs() < 1e-12);
    }
}

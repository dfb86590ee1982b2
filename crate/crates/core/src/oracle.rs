//! Reference implementations kept deliberately literal. They back the
//! property tests and the `selftest` command, and never share code paths
//! with the optimized routines they check.

use crate::appearance::TrainingSample;

pub use crate::cost_volume::cost_volume_oracle;

/// Explicit normal equations `(G, b)` of the filter-learning objective,
/// built column by column from the definition of same-padded convolution.
pub fn dense_filter_system(samples: &[TrainingSample<f64>], lambda: f64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let d = samples[0].features.channels();
    let n_unknowns = 9 * d;
    let mut g = vec![vec![0.0; n_unknowns]; n_unknowns];
    let mut b = vec![0.0; n_unknowns];
    for s in samples {
        let x = &s.features;
        let (w, h) = (x.width() as isize, x.height() as isize);
        // design matrix rows: one per output cell
        let mut rows = Vec::with_capacity((w * h) as usize);
        for y in 0..h {
            for xx in 0..w {
                let mut row = vec![0.0; n_unknowns];
                for ky in 0..3isize {
                    for kx in 0..3isize {
                        let (sx, sy) = (xx + kx - 1, y + ky - 1);
                        if sx < 0 || sy < 0 || sx >= w || sy >= h {
                            continue;
                        }
                        for c in 0..d {
                            row[((ky * 3 + kx) as usize) * d + c] =
                                x.get(crate::grid::Cell::new(sx as usize, sy as usize), c);
                        }
                    }
                }
                rows.push(row);
            }
        }
        for (row, &label) in rows.iter().zip(s.label.as_slice()) {
            for i in 0..n_unknowns {
                b[i] += row[i] * label;
                for j in 0..n_unknowns {
                    g[i][j] += row[i] * row[j];
                }
            }
        }
    }
    let n = samples.len() as f64;
    for i in 0..n_unknowns {
        b[i] /= n;
        for j in 0..n_unknowns {
            g[i][j] /= n;
        }
        g[i][i] += lambda * lambda;
    }
    (g, b)
}

/// Gaussian elimination with partial pivoting. `None` if singular.
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    Some(x)
}

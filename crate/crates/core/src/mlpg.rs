//! Delta features and maximum likelihood parameter generation.
//!
//! MLPG solves, per output dimension, (W' S^-1 W) c = W' S^-1 mu where W
//! stacks the static/delta/delta-delta regression windows and S holds the
//! per-stream variances. The normal matrix is symmetric positive definite
//! with half-bandwidth 2, so a banded Cholesky factorization is used.

use crate::error::{Result, SvsError};

/// Regression windows: static, delta, delta-delta. Boundary frames use
/// edge replication.
pub const STATIC_WINDOW: (&[f64], isize) = (&[1.0], 0);
pub const DELTA_WINDOW: (&[f64], isize) = (&[-0.5, 0.0, 0.5], -1);
pub const DELTA2_WINDOW: (&[f64], isize) = (&[1.0, -2.0, 1.0], -1);

pub fn windows() -> [(&'static [f64], isize); 3] {
    [STATIC_WINDOW, DELTA_WINDOW, DELTA2_WINDOW]
}

fn clamp_idx(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

fn apply_window(x: &[f64], win: (&[f64], isize)) -> Vec<f64> {
    let (coeffs, off0) = win;
    let n = x.len();
    (0..n as isize)
        .map(|t| {
            coeffs
                .iter()
                .enumerate()
                .map(|(j, &c)| c * x[clamp_idx(t + off0 + j as isize, n)])
                .sum()
        })
        .collect()
}

/// Delta and delta-delta sequences of a static trajectory.
pub fn compute_deltas(statics: &[f64]) -> (Vec<f64>, Vec<f64>) {
    (
        apply_window(statics, DELTA_WINDOW),
        apply_window(statics, DELTA2_WINDOW),
    )
}

/// Dense T x T window matrix with edge replication folded into the
/// boundary rows. `W * c` reproduces `apply_window` exactly.
pub fn window_matrix(win: (&[f64], isize), n: usize) -> Vec<Vec<f64>> {
    let (coeffs, off0) = win;
    let mut w = vec![vec![0.0; n]; n];
    for t in 0..n as isize {
        for (j, &c) in coeffs.iter().enumerate() {
            w[t as usize][clamp_idx(t + off0 + j as isize, n)] += c;
        }
    }
    w
}

const BAND: usize = 2;

/// Symmetric banded matrix stored as `rows x (BAND+1)` lower bands:
/// `a[i][d]` = A[i][i-d].
struct BandedSpd {
    n: usize,
    a: Vec<[f64; BAND + 1]>,
}

impl BandedSpd {
    fn zeros(n: usize) -> Self {
        BandedSpd {
            n,
            a: vec![[0.0; BAND + 1]; n],
        }
    }

    fn add(&mut self, i: usize, j: usize, v: f64) {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        let d = hi - lo;
        debug_assert!(d <= BAND);
        self.a[hi][d] += v;
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        let d = hi - lo;
        if d > BAND {
            0.0
        } else {
            self.a[hi][d]
        }
    }

    /// Banded Cholesky A = L L' then two triangular solves.
    fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.n;
        let mut l = vec![[0.0; BAND + 1]; n];
        for i in 0..n {
            let j0 = i.saturating_sub(BAND);
            for j in j0..=i {
                let mut s = self.get(i, j);
                let k0 = j.saturating_sub(BAND).max(i.saturating_sub(BAND));
                for k in k0..j {
                    s -= l[i][i - k] * l[j][j - k];
                }
                if j == i {
                    if s <= 0.0 {
                        return Err(SvsError::Numeric(
                            "MLPG normal matrix not positive definite".into(),
                        ));
                    }
                    l[i][0] = s.sqrt();
                } else {
                    l[i][i - j] = s / l[j][0];
                }
            }
        }
        // L y = b
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut s = b[i];
            let j0 = i.saturating_sub(BAND);
            for j in j0..i {
                s -= l[i][i - j] * y[j];
            }
            y[i] = s / l[i][0];
        }
        // L' c = y
        let mut c = vec![0.0; n];
        for i in (0..n).rev() {
            let mut s = y[i];
            for j in (i + 1)..(i + BAND + 1).min(n) {
                s -= l[j][j - i] * c[j];
            }
            c[i] = s / l[i][0];
        }
        Ok(c)
    }
}

/// Smoothed static trajectory for one dimension.
///
/// `means[s]` is the predicted mean sequence of stream s (static, delta,
/// delta-delta); `variances[s]` the global variance of that stream.
pub fn mlpg(means: &[Vec<f64>; 3], variances: &[f64; 3]) -> Result<Vec<f64>> {
    let n = means[0].len();
    if means[1].len() != n || means[2].len() != n {
        return Err(SvsError::shape("mlpg", "stream length mismatch"));
    }
    if variances.iter().any(|&v| v <= 0.0) {
        return Err(SvsError::Domain("MLPG variances must be positive".into()));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut a = BandedSpd::zeros(n);
    let mut b = vec![0.0; n];
    for (s, win) in windows().iter().enumerate() {
        let prec = 1.0 / variances[s];
        let (coeffs, off0) = *win;
        for t in 0..n as isize {
            // Fold edge replication into effective column coefficients.
            let mut cols: Vec<(usize, f64)> = Vec::with_capacity(coeffs.len());
            for (j, &cv) in coeffs.iter().enumerate() {
                if cv == 0.0 {
                    continue;
                }
                let c = clamp_idx(t + off0 + j as isize, n);
                match cols.iter_mut().find(|(ci, _)| *ci == c) {
                    Some((_, acc)) => *acc += cv,
                    None => cols.push((c, cv)),
                }
            }
            for &(ci, cv) in &cols {
                b[ci] += prec * cv * means[s][t as usize];
                for &(cj, cw) in &cols {
                    if cj <= ci {
                        a.add(ci, cj, prec * cv * cw);
                    }
                }
            }
        }
    }
    a.solve(&b)
}

/// Dense least-squares oracle: solve (sum_s prec_s W_s' W_s) c = rhs by
/// Gaussian elimination with partial pivoting.
pub fn mlpg_dense(means: &[Vec<f64>; 3], variances: &[f64; 3]) -> Vec<f64> {
    let n = means[0].len();
    let mut a = vec![vec![0.0; n]; n];
    let mut b = vec![0.0; n];
    for (s, win) in windows().iter().enumerate() {
        let w = window_matrix(*win, n);
        let prec = 1.0 / variances[s];
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    a[j][k] += prec * w[i][j] * w[i][k];
                }
                b[j] += prec * w[i][j] * means[s][i];
            }
        }
    }
    // Gaussian elimination.
    let mut aug: Vec<Vec<f64>> = a
        .iter()
        .zip(&b)
        .map(|(row, &bv)| {
            let mut r = row.clone();
            r.push(bv);
            r
        })
        .collect();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| aug[i][col].abs().partial_cmp(&aug[j][col].abs()).unwrap())
            .unwrap();
        aug.swap(col, piv);
        let p = aug[col][col];
        for r in (col + 1)..n {
            let f = aug[r][col] / p;
            for c in col..=n {
                aug[r][c] -= f * aug[col][c];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let mut s = aug[r][n];
        for c in (r + 1)..n {
            s -= aug[r][c] * x[c];
        }
        x[r] = s / aug[r][r];
    }
    x
}

//! Data-parallel helpers with a sequential fallback.
//!
//! Every reduction runs in a fixed order inside one task, so results are
//! bitwise identical whichever mode runs them.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exec {
    #[default]
    Parallel,
    Sequential,
}

impl Exec {
    /// `Parallel` only when the crate is built with the `parallel` feature.
    pub fn effective(self) -> Exec {
        if cfg!(feature = "parallel") {
            self
        } else {
            Exec::Sequential
        }
    }
}

/// `(0..len).map(f)` collected in index order.
pub fn map_indexed<T, F>(exec: Exec, len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec.effective() {
        #[cfg(feature = "parallel")]
        Exec::Parallel => {
            use rayon::prelude::*;
            (0..len).into_par_iter().map(f).collect()
        }
        _ => (0..len).map(f).collect(),
    }
}

/// Runs `f` inside a dedicated pool of `workers` threads; `None` keeps the
/// global pool. Without the `parallel` feature `f` simply runs inline.
pub fn with_workers<R, F>(workers: Option<usize>, f: F) -> crate::Result<R>
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    match workers {
        #[cfg(feature = "parallel")]
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k.max(1))
            .build()
            .map(|pool| pool.install(f))
            .map_err(|e| crate::Error::Config(format!("cannot build a pool of {k} workers: {e}"))),
        _ => Ok(f()),
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for k in 0..chunks {
        for l in 0..4 {
            acc[l] += a[4 * k + l] * b[4 * k + l];
        }
    }
    let mut tail = 0.0;
    for k in 4 * chunks..a.len() {
        tail += a[k] * b[k];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `mᵀ v`, one column dot product per output entry.
pub fn col_dots(exec: Exec, m: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    assert_eq!(m.nrows(), v.len(), "dimension mismatch in col_dots");
    let rows = m.nrows();
    let data = m.as_slice();
    map_indexed(exec, m.ncols(), |j| dot(&data[j * rows..(j + 1) * rows], v))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree_bitwise() {
        let m = DMatrix::from_fn(37, 11, |i, j| ((i * 7 + j * 3) as f64).sin());
        let v: Vec<f64> = (0..37).map(|i| (i as f64 * 0.3).cos()).collect();
        let a = col_dots(Exec::Parallel, &m, &v);
        let b = col_dots(Exec::Sequential, &m, &v);
        assert_eq!(a, b);
        let direct = m.transpose() * nalgebra::DVector::from_column_slice(&v);
        for (x, y) in a.iter().zip(direct.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

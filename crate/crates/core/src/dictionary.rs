//! Dictionaries of unit-norm basis vectors.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An `n x m` dictionary whose columns have unit l2 norm.
///
/// `column_norms` keeps the norms of the raw columns so that coefficients can
/// be mapped back to the unnormalized scale if needed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dictionary {
    matrix: DMatrix<f64>,
    column_norms: Vec<f64>,
    cluster_map: Option<Vec<usize>>,
}

impl Dictionary {
    /// Normalizes every column of `raw` to unit length.
    pub fn new(raw: DMatrix<f64>) -> Result<Self> {
        let (n, m) = raw.shape();
        if n == 0 || m == 0 {
            return Err(Error::Dimension(format!("dictionary must be non-empty, got {n}x{m}")));
        }
        let mut matrix = raw;
        let mut column_norms = Vec::with_capacity(m);
        for j in 0..m {
            let norm = matrix.column(j).norm();
            if !(norm > 0.0) || !norm.is_finite() {
                return Err(Error::Dimension(format!("column {j} has zero or non-finite norm")));
            }
            matrix.column_mut(j).unscale_mut(norm);
            column_norms.push(norm);
        }
        Ok(Self { matrix, column_norms, cluster_map: None })
    }

    /// Attaches a cluster id to each column. Ids must form `0..k` with every id used.
    pub fn with_clusters(mut self, cluster_map: Vec<usize>) -> Result<Self> {
        if cluster_map.len() != self.ncols() {
            return Err(Error::Dimension(format!(
                "cluster map has {} entries for {} columns",
                cluster_map.len(),
                self.ncols()
            )));
        }
        let k = cluster_map.iter().max().map_or(0, |&c| c + 1);
        let mut seen = vec![false; k];
        for &c in &cluster_map {
            seen[c] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Config("cluster ids must be contiguous from 0".into()));
        }
        self.cluster_map = Some(cluster_map);
        Ok(self)
    }

    /// Seeded iid Gaussian dictionary with normalized columns.
    pub fn gaussian<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Result<Self> {
        let raw = DMatrix::from_fn(n, m, |_, _| rng.sample::<f64, _>(StandardNormal));
        Self::new(raw)
    }

    pub fn identity(n: usize) -> Self {
        Self::new(DMatrix::identity(n, n)).expect("identity columns are unit norm")
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn column_norms(&self) -> &[f64] {
        &self.column_norms
    }

    pub fn cluster_map(&self) -> Option<&[usize]> {
        self.cluster_map.as_deref()
    }

    /// Column indices grouped by cluster id.
    pub fn clusters(&self) -> Option<Vec<Vec<usize>>> {
        let map = self.cluster_map.as_ref()?;
        let k = map.iter().max().map_or(0, |&c| c + 1);
        let mut groups = vec![Vec::new(); k];
        for (j, &c) in map.iter().enumerate() {
            groups[c].push(j);
        }
        Some(groups)
    }

    pub fn nrows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.matrix.ncols()
    }

    pub(crate) fn check_signal(&self, y: &DVector<f64>) -> Result<()> {
        if y.len() != self.nrows() {
            return Err(Error::Dimension(format!(
                "signal has length {} but dictionary has {} rows",
                y.len(),
                self.nrows()
            )));
        }
        Ok(())
    }

    pub(crate) fn check_coefficients(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.ncols() {
            return Err(Error::Dimension(format!(
                "coefficient vector has length {} but dictionary has {} columns",
                x.len(),
                self.ncols()
            )));
        }
        Ok(())
    }
}

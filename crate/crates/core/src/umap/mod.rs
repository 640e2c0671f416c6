//! UMAP: exact kNN graph → fuzzy simplicial set → SGD layout, with
//! out-of-sample placement of new points against a frozen embedding.
//!
//! Fitting processes rows in a canonical order (sorted by a content hash of
//! each row), so permuting the input rows permutes the embedding rows
//! identically.

mod curve;
mod graph;
mod layout;
mod quality;

pub use curve::{fit_ab, fit_residual, kernel};
pub(crate) use graph::nearest;
pub use graph::{
    fuzzy_simplicial_set, fuzzy_union, knn_graph, membership, smooth_knn_calibrate, FuzzyGraph, Metric, NeighborGraph,
};
pub use layout::{optimize_embedding, random_init, spectral_init, Init, LayoutParams};
pub use quality::trustworthiness;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{rng, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UmapParams {
    pub n_neighbors: usize,
    pub n_components: usize,
    pub min_dist: f64,
    pub spread: f64,
    pub n_epochs: usize,
    pub learning_rate: f64,
    pub negative_sample_rate: usize,
    pub init: Init,
    pub transform_epochs: usize,
    pub seed: u64,
}

impl Default for UmapParams {
    fn default() -> Self {
        Self {
            n_neighbors: 15,
            n_components: 2,
            min_dist: 0.1,
            spread: 1.0,
            n_epochs: 300,
            learning_rate: 1.0,
            negative_sample_rate: 5,
            init: Init::Spectral,
            transform_epochs: 30,
            seed: 0,
        }
    }
}

/// Fitted embedding plus the training data needed to place new points.
#[derive(Debug, Clone, PartialEq)]
pub struct UmapModel {
    params: UmapParams,
    a: f64,
    b: f64,
    k: usize,
    train: Array2<f64>,
    embedding: Array2<f64>,
    init_used: Init,
}

fn canonical_order(x: &Array2<f64>) -> Vec<usize> {
    let keys: Vec<u64> = x.rows().into_iter().map(|r| rng::row_key(r.iter().copied())).collect();
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    order.sort_by_key(|&i| (keys[i], i));
    order
}

impl UmapModel {
    /// Fits on the rows of `x`. `n_neighbors` is capped at `n − 1`.
    pub fn fit(x: &Array2<f64>, params: &UmapParams) -> Result<UmapModel> {
        let n = x.nrows();
        if n < 10 {
            return Err(Error::invalid(format!("UMAP needs at least 10 points, got {n}")));
        }
        if params.n_neighbors < 2 {
            return Err(Error::invalid("n_neighbors must be at least 2"));
        }
        let k = params.n_neighbors.min(n - 1);
        let (a, b) = fit_ab(params.min_dist, params.spread)?;

        let order = canonical_order(x);
        let canonical = x.select(ndarray::Axis(0), &order);
        let fg = fuzzy_simplicial_set(&knn_graph(&canonical, k)?);
        let layout = LayoutParams {
            n_components: params.n_components,
            n_epochs: params.n_epochs,
            learning_rate: params.learning_rate,
            negative_sample_rate: params.negative_sample_rate,
            a,
            b,
            seed: params.seed,
        };
        let (emb_c, init_used) = optimize_embedding(&fg, params.init, &layout)?;
        let mut embedding = Array2::zeros(emb_c.dim());
        for (c, &i) in order.iter().enumerate() {
            embedding.row_mut(i).assign(&emb_c.row(c));
        }
        Ok(UmapModel { params: *params, a, b, k, train: x.to_owned(), embedding, init_used })
    }

    pub fn embedding(&self) -> &Array2<f64> {
        &self.embedding
    }

    pub fn params(&self) -> &UmapParams {
        &self.params
    }

    pub fn ab(&self) -> (f64, f64) {
        (self.a, self.b)
    }

    pub fn init_used(&self) -> Init {
        self.init_used
    }

    pub fn train_data(&self) -> &Array2<f64> {
        &self.train
    }

    /// Embeds new rows against the frozen training embedding.
    ///
    /// Each row starts at the membership-weighted mean of its `k` nearest
    /// training points' embeddings and is refined for `transform_epochs`
    /// epochs at a quarter of the fitting learning rate. Rows are independent
    /// and seeded by content, so the result does not depend on batch
    /// composition or order.
    pub fn transform(&self, x_new: &Array2<f64>) -> Result<Array2<f64>> {
        if x_new.ncols() != self.train.ncols() {
            return Err(Error::DimensionMismatch { expected: self.train.ncols(), found: x_new.ncols() });
        }
        if x_new.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite feature value".into()));
        }
        let layout = LayoutParams {
            n_components: self.params.n_components,
            n_epochs: self.params.transform_epochs,
            learning_rate: self.params.learning_rate / 4.0,
            negative_sample_rate: self.params.negative_sample_rate,
            a: self.a,
            b: self.b,
            seed: self.params.seed,
        };
        let train = self.train.as_standard_layout();
        let rows: Vec<Vec<f64>> = (0..x_new.nrows())
            .into_par_iter()
            .map(|i| {
                let q = x_new.row(i).to_vec();
                let near = graph::nearest(train.view(), &q, self.k, None);
                let dists: Vec<f64> = near.iter().map(|n| n.1).collect();
                let (rho, sigma) = smooth_knn_calibrate(&dists, self.k);
                let neighbors: Vec<(usize, f64)> = near.iter().map(|&(j, d)| (j, membership(d, rho, sigma))).collect();
                layout::place_point(&self.embedding, &neighbors, &layout, rng::row_key(q))
            })
            .collect();
        let mut out = Array2::zeros((x_new.nrows(), self.params.n_components));
        for (i, r) in rows.iter().enumerate() {
            for (c, v) in r.iter().enumerate() {
                out[[i, c]] = *v;
            }
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("transformed coordinates are non-finite".into()));
        }
        Ok(out)
    }
}

/// Test rows embedded either against a frozen training fit or by refitting
/// on train ∪ test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TestMapping {
    #[default]
    Transform,
    Refit,
}

/// Train and test embeddings under the chosen mapping.
pub fn embed_split(
    train: &Array2<f64>,
    test: &Array2<f64>,
    params: &UmapParams,
    mapping: TestMapping,
) -> Result<(Array2<f64>, Array2<f64>)> {
    match mapping {
        TestMapping::Transform => {
            let model = UmapModel::fit(train, params)?;
            let test_e = model.transform(test)?;
            Ok((model.embedding.clone(), test_e))
        }
        TestMapping::Refit => {
            let all = ndarray::concatenate(ndarray::Axis(0), &[train.view(), test.view()])
                .map_err(|e| Error::invalid(e.to_string()))?;
            let model = UmapModel::fit(&all, params)?;
            let n = train.nrows();
            let e = model.embedding();
            Ok((e.slice(ndarray::s![..n, ..]).to_owned(), e.slice(ndarray::s![n.., ..]).to_owned()))
        }
    }
}

/// Embedding rows with their labels, for export.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub points: Array2<f64>,
    pub labels: Vec<usize>,
}

impl Embedding {
    pub fn new(points: Array2<f64>, labels: Vec<usize>) -> Result<Embedding> {
        if points.nrows() != labels.len() {
            return Err(Error::DimensionMismatch { expected: points.nrows(), found: labels.len() });
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite embedding coordinate".into()));
        }
        Ok(Embedding { points, labels })
    }

    /// Rows `x,y,label,participant,split`; further dimensions are appended as `c2, c3, ...`.
    pub fn to_csv(&self, participant: &str, split: &str, with_header: bool) -> String {
        let d = self.points.ncols();
        let mut out = String::new();
        if with_header {
            out.push_str("x,y");
            for c in 2..d {
                out.push_str(&format!(",c{c}"));
            }
            out.push_str(",label,participant,split\n");
        }
        for (row, label) in self.points.rows().into_iter().zip(&self.labels) {
            let x = row.first().copied().unwrap_or(0.0);
            let y = row.get(1).copied().unwrap_or(0.0);
            out.push_str(&format!("{x:.6},{y:.6}"));
            for c in 2..d {
                out.push_str(&format!(",{:.6}", row[c]));
            }
            out.push_str(&format!(",{label},{participant},{split}\n"));
        }
        out
    }
}

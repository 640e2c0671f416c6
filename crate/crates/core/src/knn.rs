//! KNN scoring of embeddings, per-participant evaluation tables and the
//! screening correlation between KNN scores and supervised accuracy.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{epoch_features_mean, EpochSet, SplitPair};
use crate::umap::{embed_split, nearest, Embedding, TestMapping, UmapParams};
use crate::{rng, stats, Error, Result};

pub const DEFAULT_K: usize = 4;
pub const DEFAULT_SCREEN_THRESHOLD: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    #[default]
    Uniform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnnModel {
    points: Array2<f64>,
    labels: Vec<usize>,
    k: usize,
    weighting: Weighting,
}

pub fn knn_fit(points: &Array2<f64>, labels: &[usize], k: usize) -> Result<KnnModel> {
    let m = points.nrows();
    if labels.len() != m {
        return Err(Error::DimensionMismatch { expected: m, found: labels.len() });
    }
    if k == 0 || k >= m {
        return Err(Error::invalid(format!("KNN needs 0 < k < m, got k={k}, m={m}")));
    }
    Ok(KnnModel {
        points: points.as_standard_layout().into_owned(),
        labels: labels.to_vec(),
        k,
        weighting: Weighting::Uniform,
    })
}

impl KnnModel {
    pub fn n_references(&self) -> usize {
        self.points.nrows()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn weighting(&self) -> Weighting {
        self.weighting
    }

    /// Majority vote of the `k` nearest references; ties go to the smallest class.
    pub fn predict(&self, points: &Array2<f64>) -> Result<Vec<usize>> {
        if points.ncols() != self.points.ncols() {
            return Err(Error::DimensionMismatch { expected: self.points.ncols(), found: points.ncols() });
        }
        let n_classes = self.labels.iter().max().map_or(0, |m| m + 1);
        Ok((0..points.nrows())
            .into_par_iter()
            .map(|i| {
                let q = points.row(i).to_vec();
                let mut votes = vec![0usize; n_classes];
                for (j, _) in nearest(self.points.view(), &q, self.k, None) {
                    votes[self.labels[j]] += 1;
                }
                let best = votes.iter().copied().max().unwrap_or(0);
                votes.iter().position(|&v| v == best).unwrap_or(0)
            })
            .collect())
    }
}

/// Fraction of `points` whose predicted class equals `labels`.
pub fn knn_score(model: &KnnModel, points: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    if labels.len() != points.nrows() {
        return Err(Error::DimensionMismatch { expected: points.nrows(), found: labels.len() });
    }
    if labels.is_empty() {
        return Err(Error::invalid("cannot score an empty set"));
    }
    let pred = model.predict(points)?;
    let correct = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / labels.len() as f64)
}

/// How an epoch set becomes one feature row per epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    /// Time-mean of every channel.
    #[default]
    ChannelMean,
    /// All samples of all channels, time-major.
    Flatten,
}

pub fn epoch_features(epochs: &EpochSet, kind: FeatureKind) -> Array2<f64> {
    match kind {
        FeatureKind::ChannelMean => epoch_features_mean(epochs),
        FeatureKind::Flatten => {
            let (n, t, c) = epochs.data().dim();
            let flat = epochs.data().as_standard_layout();
            Array2::from_shape_fn((n, t * c), |(i, f)| flat[[i, f / c, f % c]] as f64)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KnnEvalConfig {
    pub umap: UmapParams,
    pub k: usize,
    pub mapping: TestMapping,
    pub features: FeatureKind,
}

impl Default for KnnEvalConfig {
    fn default() -> Self {
        Self {
            umap: UmapParams::default(),
            k: DEFAULT_K,
            mapping: TestMapping::Transform,
            features: FeatureKind::ChannelMean,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariantScores {
    pub train: f64,
    pub test: f64,
}

/// Scores plus the embeddings they were computed on.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantResult {
    pub scores: VariantScores,
    pub train: Embedding,
    pub test: Embedding,
}

/// UMAP on train features, test mapped per `cfg.mapping`, KNN fitted on the
/// train embedding and scored on both embeddings.
pub fn evaluate_split(split: &SplitPair, cfg: &KnnEvalConfig, seed: u64) -> Result<VariantResult> {
    let xtr = epoch_features(&split.train, cfg.features);
    let xte = epoch_features(&split.test, cfg.features);
    let params = UmapParams { seed, ..cfg.umap };
    let (etr, ete) = embed_split(&xtr, &xte, &params, cfg.mapping)?;
    let model = knn_fit(&etr, split.train.labels(), cfg.k)?;
    let scores = VariantScores {
        train: knn_score(&model, &etr, split.train.labels())?,
        test: knn_score(&model, &ete, split.test.labels())?,
    };
    Ok(VariantResult {
        scores,
        train: Embedding::new(etr, split.train.labels().to_vec())?,
        test: Embedding::new(ete, split.test.labels().to_vec())?,
    })
}

/// One participant's data: envelope-preprocessed and raw splits.
#[derive(Debug, Clone)]
pub struct ParticipantData {
    pub participant_id: String,
    pub processed: Option<SplitPair>,
    pub unprocessed: Option<SplitPair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRow {
    pub participant_id: String,
    pub processed: Option<VariantScores>,
    pub unprocessed: Option<VariantScores>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationTable {
    pub rows: Vec<EvaluationRow>,
}

fn fmt_cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_default()
}

impl EvaluationTable {
    fn column(&self, f: impl Fn(&EvaluationRow) -> Option<f64>) -> Option<f64> {
        let vals: Vec<f64> = self.rows.iter().filter_map(f).collect();
        (!vals.is_empty()).then(|| stats::mean(&vals))
    }

    /// Column means over participants that have the variant.
    pub fn averages(&self) -> [Option<f64>; 4] {
        [
            self.column(|r| r.processed.map(|s| s.train)),
            self.column(|r| r.processed.map(|s| s.test)),
            self.column(|r| r.unprocessed.map(|s| s.train)),
            self.column(|r| r.unprocessed.map(|s| s.test)),
        ]
    }

    /// Rows keyed by participant index, then the `Avg` row; 4 decimals.
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from(",Preprocessed Train,Preprocessed Test,No Preprocessed Train,No Preprocessed Test\n");
        for (i, r) in self.rows.iter().enumerate() {
            out.push_str(&format!(
                "{i},{},{},{},{}\n",
                fmt_cell(r.processed.map(|s| s.train)),
                fmt_cell(r.processed.map(|s| s.test)),
                fmt_cell(r.unprocessed.map(|s| s.train)),
                fmt_cell(r.unprocessed.map(|s| s.test)),
            ));
        }
        let avg = self.averages();
        out.push_str(&format!(
            "Avg,{},{},{},{}\n",
            fmt_cell(avg[0]),
            fmt_cell(avg[1]),
            fmt_cell(avg[2]),
            fmt_cell(avg[3])
        ));
        out
    }
}

#[derive(Debug, Clone)]
pub struct ParticipantEvaluation {
    pub participant_id: String,
    pub processed: Option<VariantResult>,
    pub unprocessed: Option<VariantResult>,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub table: EvaluationTable,
    pub participants: Vec<ParticipantEvaluation>,
}

/// Evaluates every participant; rows keep input order. The UMAP seed of
/// participant `i` and variant `v` is derived from `(seed, i, v)`.
pub fn evaluate_participants(data: &[ParticipantData], cfg: &KnnEvalConfig, seed: u64) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::invalid("no participants to evaluate"));
    }
    if let Some(p) = data.iter().find(|p| p.processed.is_none() && p.unprocessed.is_none()) {
        return Err(Error::invalid(format!("participant {} has no data", p.participant_id)));
    }
    let run = |i: usize, v: u64, split: &Option<SplitPair>| -> Result<Option<VariantResult>> {
        split.as_ref().map(|s| evaluate_split(s, cfg, rng::derive(seed, &[i as u64, v]))).transpose()
    };
    let participants: Vec<ParticipantEvaluation> = data
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            Ok(ParticipantEvaluation {
                participant_id: p.participant_id.clone(),
                processed: run(i, 0, &p.processed)?,
                unprocessed: run(i, 1, &p.unprocessed)?,
            })
        })
        .collect::<Result<_>>()?;
    let rows = participants
        .iter()
        .map(|p| EvaluationRow {
            participant_id: p.participant_id.clone(),
            processed: p.processed.as_ref().map(|r| r.scores),
            unprocessed: p.unprocessed.as_ref().map(|r| r.scores),
        })
        .collect();
    Ok(Evaluation { table: EvaluationTable { rows }, participants })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    #[serde(rename = "screen-in")]
    ScreenIn,
    #[serde(rename = "screen-out")]
    ScreenOut,
}

impl Verdict {
    pub fn for_score(knn_test_score: f64, threshold: f64) -> Verdict {
        if knn_test_score >= threshold {
            Verdict::ScreenIn
        } else {
            Verdict::ScreenOut
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningEntry {
    pub participant_id: String,
    pub knn_test_score: f64,
    pub dl_test_accuracy: f64,
    pub dl_architecture: String,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningReport {
    pub entries: Vec<ScreeningEntry>,
    pub spearman_rho: f64,
    pub threshold: f64,
}

/// Spearman correlation of KNN test scores with supervised test accuracy,
/// plus a verdict per participant.
pub fn screening_report(
    participant_ids: &[String],
    knn_scores: &[f64],
    dl_accuracies: &[f64],
    dl_architecture: &str,
    threshold: f64,
) -> Result<ScreeningReport> {
    let n = knn_scores.len();
    if dl_accuracies.len() != n || participant_ids.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: dl_accuracies.len().min(participant_ids.len()) });
    }
    if n < 3 {
        return Err(Error::invalid(format!("screening correlation: n ≥ 3 required, got {n}")));
    }
    let entries = (0..n)
        .map(|i| ScreeningEntry {
            participant_id: participant_ids[i].clone(),
            knn_test_score: knn_scores[i],
            dl_test_accuracy: dl_accuracies[i],
            dl_architecture: dl_architecture.to_string(),
            verdict: Verdict::for_score(knn_scores[i], threshold),
        })
        .collect();
    Ok(ScreeningReport { entries, spearman_rho: stats::spearman(knn_scores, dl_accuracies), threshold })
}

/// [`screening_report`] with participants named by index and the default threshold.
pub fn screening_correlation(knn_scores: &[f64], dl_accuracies: &[f64]) -> Result<ScreeningReport> {
    let ids: Vec<String> = (0..knn_scores.len()).map(|i| i.to_string()).collect();
    screening_report(&ids, knn_scores, dl_accuracies, "", DEFAULT_SCREEN_THRESHOLD)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn two_blobs(seed: u64, n: usize) -> (Array2<f64>, Vec<usize>) {
        let mut r = rng::stream(seed, &[]);
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let x = Array2::from_shape_fn((n, 2), |(i, _)| labels[i] as f64 * 50.0 + r.random_range(-1.0..1.0));
        (x, labels)
    }

    #[test]
    fn fit_stores_references() {
        let (x, y) = two_blobs(1, 10);
        assert_eq!(knn_fit(&x, &y, 4).unwrap().n_references(), 10);
        let (x8, y8) = two_blobs(1, 8);
        assert!(knn_fit(&x8, &y8, 10).is_err());
        let dup = Array2::from_elem((6, 2), 1.0);
        assert_eq!(knn_fit(&dup, &[0, 0, 0, 1, 1, 1], 4).unwrap().n_references(), 6);
    }

    #[test]
    fn separable_training_set_scores_one() {
        let (x, y) = two_blobs(2, 40);
        let m = knn_fit(&x, &y, 4).unwrap();
        assert_eq!(knn_score(&m, &x, &y).unwrap(), 1.0);
    }

    #[test]
    fn tie_goes_to_smallest_class() {
        let x = Array2::from_shape_vec((5, 1), vec![-1.0, 1.0, -2.0, 2.0, 100.0]).unwrap();
        let m = knn_fit(&x, &[1, 0, 1, 0, 1], 4).unwrap();
        assert_eq!(m.predict(&Array2::zeros((1, 1))).unwrap(), vec![0]);
    }

    #[test]
    fn random_labels_score_near_chance() {
        let mut r = rng::stream(4, &[]);
        let x = Array2::from_shape_fn((2000, 2), |_| r.random_range(0.0..1.0));
        let y: Vec<usize> = (0..2000).map(|_| r.random_range(0..2)).collect();
        let q = Array2::from_shape_fn((2000, 2), |_| r.random_range(0.0..1.0));
        let yq: Vec<usize> = (0..2000).map(|_| r.random_range(0..2)).collect();
        let m = knn_fit(&x, &y, 4).unwrap();
        let acc = knn_score(&m, &q, &yq).unwrap();
        assert!((acc - 0.5).abs() <= 0.1, "{acc}");
    }

    #[test]
    fn dimension_mismatch() {
        let (x, y) = two_blobs(1, 10);
        let m = knn_fit(&x, &y, 3).unwrap();
        assert!(knn_score(&m, &Array2::zeros((2, 3)), &[0, 1]).is_err());
    }

    #[test]
    fn table_csv_and_averages() {
        let t = EvaluationTable {
            rows: vec![
                EvaluationRow {
                    participant_id: "a".into(),
                    processed: Some(VariantScores { train: 1.0, test: 0.5 }),
                    unprocessed: Some(VariantScores { train: 0.9, test: 0.8 }),
                },
                EvaluationRow {
                    participant_id: "b".into(),
                    processed: Some(VariantScores { train: 0.8, test: 0.7 }),
                    unprocessed: Some(VariantScores { train: 0.7, test: 0.6 }),
                },
            ],
        };
        let avg = t.averages();
        assert!((avg[0].unwrap() - 0.9).abs() < 1e-12);
        assert!((avg[3].unwrap() - 0.7).abs() < 1e-12);
        assert_eq!(
            t.to_csv(),
            ",Preprocessed Train,Preprocessed Test,No Preprocessed Train,No Preprocessed Test\n\
             0,1.0000,0.5000,0.9000,0.8000\n\
             1,0.8000,0.7000,0.7000,0.6000\n\
             Avg,0.9000,0.6000,0.8000,0.7000\n"
        );
    }

    #[test]
    fn screening_rankings() {
        let a = [0.5, 0.7, 0.9, 1.0];
        assert_eq!(screening_correlation(&a, &a).unwrap().spearman_rho, 1.0);
        let rev = [1.0, 0.9, 0.7, 0.5];
        assert_eq!(screening_correlation(&a, &rev).unwrap().spearman_rho, -1.0);
        let err = screening_correlation(&[0.5], &[0.5]).unwrap_err();
        assert!(err.to_string().contains("n ≥ 3 required"));
        assert!(screening_correlation(&[0.5, 0.6, 0.7], &[0.5, 0.6]).is_err());
    }

    #[test]
    fn low_knn_participant_screens_out() {
        let knn = [0.8919, 0.8108, 0.5405, 0.9730];
        let dl = [0.95, 0.90, 0.68, 0.98];
        let report = screening_correlation(&knn, &dl).unwrap();
        assert_eq!(report.entries[2].verdict, Verdict::ScreenOut);
        assert_eq!(report.entries[1].verdict, Verdict::ScreenIn);
        let json = serde_json::to_string(&report.entries[2]).unwrap();
        assert!(json.contains(r#""screen-out""#));
    }

    fn random_cloud(seed: u64, n: usize) -> (Array2<f64>, Vec<usize>) {
        let mut r = rng::stream(seed, &[]);
        let x = Array2::from_shape_fn((n, 2), |_| r.random_range(-5.0..5.0));
        let y = (0..n).map(|_| r.random_range(0..3)).collect();
        (x, y)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn k1_on_own_references_is_perfect(seed in any::<u64>(), n in 5usize..60) {
            let (x, y) = random_cloud(seed, n);
            let m = knn_fit(&x, &y, 1).unwrap();
            prop_assert_eq!(knn_score(&m, &x, &y).unwrap(), 1.0);
        }

        #[test]
        fn rigid_motion_invariance(seed in any::<u64>(), angle in 0.0f64..std::f64::consts::TAU, dx in -10.0f64..10.0) {
            let (x, y) = random_cloud(seed, 40);
            let (q, yq) = random_cloud(seed ^ 1, 30);
            let (s, c) = angle.sin_cos();
            let move_pts = |p: &Array2<f64>| Array2::from_shape_fn(p.dim(), |(i, d)| {
                if d == 0 { c * p[[i, 0]] - s * p[[i, 1]] + dx } else { s * p[[i, 0]] + c * p[[i, 1]] - dx }
            });
            let a = knn_score(&knn_fit(&x, &y, 4).unwrap(), &q, &yq).unwrap();
            let b = knn_score(&knn_fit(&move_pts(&x), &y, 4).unwrap(), &move_pts(&q), &yq).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn spearman_self_and_reverse(v in proptest::collection::vec(-100.0f64..100.0, 3..30)) {
            let r = stats::spearman(&v, &v);
            let distinct = v.iter().any(|x| *x != v[0]);
            if distinct {
                prop_assert!((r - 1.0).abs() < 1e-12);
                let rev: Vec<f64> = v.iter().map(|x| -x).collect();
                prop_assert!((stats::spearman(&v, &rev) + 1.0).abs() < 1e-12);
            }
        }
    }
}

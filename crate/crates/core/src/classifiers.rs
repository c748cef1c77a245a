//! The evaluation and fitness classifiers: brute-force KNN, Gaussian naive
//! Bayes, and a linear SVM trained by stochastic subgradient descent.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::boosting::argmax_lowest;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng::{self, streams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    Knn,
    GaussianNb,
    LinearSvm,
}

impl ClassifierKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ClassifierKind::Knn => "knn",
            ClassifierKind::GaussianNb => "gaussian_nb",
            ClassifierKind::LinearSvm => "linear_svm",
        }
    }
}

impl std::fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ClassifierKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "knn" => Ok(ClassifierKind::Knn),
            "gaussian_nb" | "nb" => Ok(ClassifierKind::GaussianNb),
            "linear_svm" | "svm" => Ok(ClassifierKind::LinearSvm),
            other => Err(Error::Config(format!("unknown classifier `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub kind: ClassifierKind,
    pub knn_k: usize,
    pub svm_c: f64,
    pub svm_epochs: usize,
    pub nb_var_smoothing: f64,
    pub seed: u64,
}

impl ClassifierSpec {
    pub fn new(kind: ClassifierKind) -> Self {
        ClassifierSpec {
            kind,
            knn_k: 5,
            svm_c: 1.0,
            svm_epochs: 200,
            nb_var_smoothing: 1e-9,
            seed: 0,
        }
    }

    pub fn knn(k: usize) -> Self {
        ClassifierSpec {
            knn_k: k,
            ..Self::new(ClassifierKind::Knn)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.knn_k == 0 {
            return Err(Error::Config("knn_k must be >= 1".into()));
        }
        if !(self.svm_c > 0.0 && self.svm_c.is_finite()) {
            return Err(Error::Config("svm_c must be positive".into()));
        }
        if self.svm_epochs == 0 {
            return Err(Error::Config("svm_epochs must be >= 1".into()));
        }
        if self.nb_var_smoothing.is_nan() || self.nb_var_smoothing < 0.0 {
            return Err(Error::Config("nb_var_smoothing must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainedClassifier {
    Knn(Knn),
    GaussianNb(GaussianNb),
    LinearSvm(LinearSvm),
}

/// Trains a classifier on the rows of `x` with labels in `0..n_classes`.
/// Classes absent from `y` are never predicted.
pub fn fit(
    spec: &ClassifierSpec,
    x: ArrayView2<'_, f64>,
    y: &[usize],
    n_classes: usize,
) -> Result<TrainedClassifier> {
    spec.validate()?;
    let m = x.nrows();
    if m == 0 {
        return Err(Error::validation("cannot train on zero samples"));
    }
    if y.len() != m {
        return Err(Error::validation(format!("{} labels for {m} samples", y.len())));
    }
    if let Some(&bad) = y.iter().find(|&&c| c >= n_classes) {
        return Err(Error::validation(format!("label {bad} >= class count {n_classes}")));
    }
    Ok(match spec.kind {
        ClassifierKind::Knn => {
            if spec.knn_k > m {
                return Err(Error::validation(format!(
                    "knn_k = {} exceeds {m} training samples",
                    spec.knn_k
                )));
            }
            TrainedClassifier::Knn(Knn::fit(x, y, spec.knn_k, n_classes))
        }
        ClassifierKind::GaussianNb => {
            TrainedClassifier::GaussianNb(GaussianNb::fit(x, y, n_classes, spec.nb_var_smoothing))
        }
        ClassifierKind::LinearSvm => TrainedClassifier::LinearSvm(LinearSvm::fit(x, y, n_classes, spec)),
    })
}

pub fn train(spec: &ClassifierSpec, ds: &Dataset) -> Result<TrainedClassifier> {
    fit(spec, ds.values(), ds.labels(), ds.n_classes())
}

impl TrainedClassifier {
    pub fn n_genes(&self) -> usize {
        match self {
            TrainedClassifier::Knn(m) => m.x.ncols(),
            TrainedClassifier::GaussianNb(m) => m.means.ncols(),
            TrainedClassifier::LinearSvm(m) => m.weights.ncols(),
        }
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
        if x.ncols() != self.n_genes() {
            return Err(Error::validation(format!(
                "classifier trained on {} genes, data has {}",
                self.n_genes(),
                x.ncols()
            )));
        }
        Ok(x.rows()
            .into_iter()
            .map(|row| match self {
                TrainedClassifier::Knn(m) => m.predict_row(row),
                TrainedClassifier::GaussianNb(m) => m.predict_row(row),
                TrainedClassifier::LinearSvm(m) => m.predict_row(row),
            })
            .collect())
    }

    pub fn predict_dataset(&self, ds: &Dataset) -> Result<Vec<usize>> {
        self.predict(ds.values())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Knn {
    x: Array2<f64>,
    y: Vec<usize>,
    k: usize,
    n_classes: usize,
}

impl Knn {
    fn fit(x: ArrayView2<'_, f64>, y: &[usize], k: usize, n_classes: usize) -> Self {
        Knn {
            x: x.to_owned(),
            y: y.to_vec(),
            k,
            n_classes,
        }
    }

    /// Majority vote over the k nearest training rows (distance ties to the
    /// lower training index). A vote tie goes to the tied class whose nearest
    /// member ranks first.
    pub fn predict_row(&self, q: ArrayView1<'_, f64>) -> usize {
        let mut dist: Vec<(f64, usize)> = self
            .x
            .rows()
            .into_iter()
            .enumerate()
            .map(|(i, r)| (sq_dist(r, q), i))
            .collect();
        let k = self.k.min(dist.len());
        let by_dist = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < dist.len() {
            dist.select_nth_unstable_by(k - 1, by_dist);
            dist.truncate(k);
        }
        dist.sort_unstable_by(by_dist);
        vote(dist.iter().map(|&(_, i)| self.y[i]), self.n_classes)
    }
}

/// Majority label among neighbours given nearest-first.
pub(crate) fn vote(neighbours: impl Iterator<Item = usize>, n_classes: usize) -> usize {
    let mut counts = vec![0usize; n_classes];
    let mut first_seen = vec![usize::MAX; n_classes];
    for (pos, c) in neighbours.enumerate() {
        counts[c] += 1;
        if first_seen[c] == usize::MAX {
            first_seen[c] = pos;
        }
    }
    (0..n_classes)
        .max_by(|&a, &b| {
            counts[a]
                .cmp(&counts[b])
                .then(first_seen[b].cmp(&first_seen[a]))
                .then(b.cmp(&a))
        })
        .unwrap_or(0)
}

fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianNb {
    /// Log prior per class; `-inf` for classes unseen in training.
    pub log_priors: Vec<f64>,
    /// Class × gene.
    pub means: Array2<f64>,
    pub variances: Array2<f64>,
    pub var_floor: f64,
}

impl GaussianNb {
    fn fit(x: ArrayView2<'_, f64>, y: &[usize], n_classes: usize, smoothing: f64) -> Self {
        let (m, n) = x.dim();
        let mut counts = vec![0usize; n_classes];
        let mut means = Array2::zeros((n_classes, n));
        for (row, &c) in x.rows().into_iter().zip(y) {
            counts[c] += 1;
            let mut mu = means.row_mut(c);
            mu += &row;
        }
        for (c, &cnt) in counts.iter().enumerate() {
            if cnt > 0 {
                means.row_mut(c).mapv_inplace(|v| v / cnt as f64);
            }
        }
        let mut variances = Array2::zeros((n_classes, n));
        for (row, &c) in x.rows().into_iter().zip(y) {
            let d = &row - &means.row(c);
            let mut var = variances.row_mut(c);
            var += &(&d * &d);
        }
        for (c, &cnt) in counts.iter().enumerate() {
            if cnt > 0 {
                variances.row_mut(c).mapv_inplace(|v| v / cnt as f64);
            }
        }

        let pooled_max = x
            .var_axis(Axis(0), 0.0)
            .iter()
            .copied()
            .fold(0.0f64, f64::max);
        let floor = smoothing * pooled_max;
        // Degenerate data (all genes constant, or zero smoothing) still needs
        // a positive variance.
        let var_floor = if floor > 0.0 { floor } else { 1e-9 };
        variances.mapv_inplace(|v| v.max(var_floor));

        let log_priors = counts
            .iter()
            .map(|&c| {
                if c == 0 {
                    f64::NEG_INFINITY
                } else {
                    (c as f64 / m as f64).ln()
                }
            })
            .collect();
        GaussianNb {
            log_priors,
            means,
            variances,
            var_floor,
        }
    }

    pub fn log_joint(&self, q: ArrayView1<'_, f64>) -> Vec<f64> {
        const LN_2PI: f64 = 1.837_877_066_409_345_5;
        self.log_priors
            .iter()
            .enumerate()
            .map(|(c, &lp)| {
                if lp == f64::NEG_INFINITY {
                    return lp;
                }
                let ll: f64 = q
                    .iter()
                    .zip(self.means.row(c))
                    .zip(self.variances.row(c))
                    .map(|((&v, &mu), &var)| -0.5 * (LN_2PI + var.ln() + (v - mu).powi(2) / var))
                    .sum();
                lp + ll
            })
            .collect()
    }

    fn predict_row(&self, q: ArrayView1<'_, f64>) -> usize {
        argmax_lowest(&self.log_joint(q))
    }
}

/// One-vs-rest linear SVMs (a single machine for two classes), trained on
/// the primal hinge objective `Σ hinge + ‖w‖²/(2C)` with step `1/(λt)`,
/// `λ = 1/(C·m)`. The bias is learned as the weight of a constant input.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSvm {
    /// Machine × gene.
    pub weights: Array2<f64>,
    pub biases: Vec<f64>,
    n_classes: usize,
}

impl LinearSvm {
    fn fit(x: ArrayView2<'_, f64>, y: &[usize], n_classes: usize, spec: &ClassifierSpec) -> Self {
        let n = x.ncols();
        let machines = if n_classes <= 2 { 1 } else { n_classes };
        let mut weights = Array2::zeros((machines, n));
        let mut biases = vec![0.0; machines];
        for (k, bias) in biases.iter_mut().enumerate() {
            let positive = if machines == 1 { 1 } else { k };
            let signs: Vec<f64> = y
                .iter()
                .map(|&c| if c == positive { 1.0 } else { -1.0 })
                .collect();
            let mut rng = rng::stream(spec.seed, streams::SVM + k as u64);
            let (w, b) = pegasos(x, &signs, spec.svm_c, spec.svm_epochs, &mut rng);
            weights.row_mut(k).assign(&w);
            *bias = b;
        }
        LinearSvm {
            weights,
            biases,
            n_classes,
        }
    }

    pub fn scores(&self, q: ArrayView1<'_, f64>) -> Vec<f64> {
        self.weights
            .rows()
            .into_iter()
            .zip(&self.biases)
            .map(|(w, b)| w.dot(&q) + b)
            .collect()
    }

    fn predict_row(&self, q: ArrayView1<'_, f64>) -> usize {
        let s = self.scores(q);
        if s.len() == 1 {
            usize::from(s[0] > 0.0)
        } else {
            argmax_lowest(&s[..self.n_classes])
        }
    }
}

fn pegasos(
    x: ArrayView2<'_, f64>,
    signs: &[f64],
    c: f64,
    epochs: usize,
    rng: &mut rng::Rng,
) -> (Array1<f64>, f64) {
    let (m, n) = x.dim();
    let lambda = 1.0 / (c * m as f64);
    let radius = 1.0 / lambda.sqrt();
    let mut w = Array1::<f64>::zeros(n);
    let mut b = 0.0;
    let mut order: Vec<usize> = (0..m).collect();
    let mut t = 0usize;
    for _ in 0..epochs {
        order.shuffle(rng);
        for &i in &order {
            t += 1;
            let eta = 1.0 / (lambda * t as f64);
            let row = x.row(i);
            let margin = signs[i] * (w.dot(&row) + b);
            let shrink = 1.0 - eta * lambda;
            w.mapv_inplace(|v| v * shrink);
            b *= shrink;
            if margin < 1.0 {
                w.scaled_add(eta * signs[i], &row);
                b += eta * signs[i];
            }
            let norm = (w.dot(&w) + b * b).sqrt();
            if norm > radius {
                let s = radius / norm;
                w.mapv_inplace(|v| v * s);
                b *= s;
            }
        }
    }
    (w, b)
}

//! Gradient-boosted regression trees with a regularized second-order objective.
//!
//! Each round fits one tree per output to the first and second derivatives of
//! the loss at the current raw prediction. For a leaf holding gradient sum `G`
//! and hessian sum `H` the per-leaf objective is `G·w + ½(H+λ)·w²`, minimized at
//! `w* = −G/(H+λ)`; a split is scored by how much it lowers the summed optimum,
//! minus the per-leaf penalty `γ`. Split finding is exact: every midpoint
//! between consecutive distinct values of every gene is tried.
//!
//! The summed split gain per gene is the importance used for stage-one
//! selection.

use ndarray::{ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng::{self, streams};

/// Hessian floor; keeps leaf weights finite when the logistic saturates.
pub const MIN_HESSIAN: f64 = 1e-16;

/// Relative tolerance under which two gains count as tied, and under which a
/// gain counts as non-positive. Scaled by `max(1, G²/(H+λ))` of the node.
pub const GAIN_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    /// `½(y − ŷ)²`
    Squared,
    /// Binary cross-entropy on the raw (log-odds) score.
    #[default]
    Logistic,
}

impl std::str::FromStr for Loss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "squared" => Ok(Loss::Squared),
            "logistic" => Ok(Loss::Logistic),
            other => Err(Error::Config(format!("unknown loss `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostParams {
    pub n_estimators: usize,
    pub max_depth: usize,
    pub subsample: f64,
    pub learning_rate: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub loss: Loss,
    pub seed: u64,
}

impl Default for BoostParams {
    fn default() -> Self {
        BoostParams {
            n_estimators: 100,
            max_depth: 3,
            subsample: 0.75,
            learning_rate: 0.3,
            lambda: 1.0,
            gamma: 0.0,
            loss: Loss::Logistic,
            seed: 0,
        }
    }
}

impl BoostParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_estimators == 0 {
            return bad("n_estimators must be >= 1");
        }
        if self.max_depth == 0 {
            return bad("max_depth must be >= 1");
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return bad("subsample must lie in (0, 1]");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be >= 0");
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad("gamma must be >= 0");
        }
        Ok(())
    }
}

fn sigmoid(r: f64) -> f64 {
    if r >= 0.0 {
        1.0 / (1.0 + (-r).exp())
    } else {
        let e = r.exp();
        e / (1.0 + e)
    }
}

/// First and second derivative of the loss with respect to the raw prediction.
pub fn grad_hess(loss: Loss, y: f64, raw: f64) -> (f64, f64) {
    match loss {
        Loss::Squared => (raw - y, 1.0),
        Loss::Logistic => {
            let p = sigmoid(raw);
            (p - y, (p * (1.0 - p)).max(MIN_HESSIAN))
        }
    }
}

/// Optimal weight `−G/(H+λ)` of a leaf.
pub fn leaf_weight(grad_sum: f64, hess_sum: f64, lambda: f64) -> Result<f64> {
    let denom = hess_sum + lambda;
    if denom == 0.0 {
        return Err(Error::DegenerateLeaf);
    }
    Ok(-grad_sum / denom)
}

/// `G²/(H+λ)`: twice the objective reduction of a single optimal leaf.
fn leaf_score(g: f64, h: f64, lambda: f64) -> f64 {
    let denom = h + lambda;
    if denom == 0.0 {
        0.0
    } else {
        g * g / denom
    }
}

/// Objective reduction from splitting a leaf into two, minus `gamma`.
pub fn split_gain(gl: f64, hl: f64, gr: f64, hr: f64, lambda: f64, gamma: f64) -> f64 {
    0.5 * (leaf_score(gl, hl, lambda) + leaf_score(gr, hr, lambda)
        - leaf_score(gl + gr, hl + hr, lambda))
        - gamma
}

/// Threshold between two consecutive distinct sorted values. Samples with
/// `x < threshold` go left.
pub fn midpoint(lo: f64, hi: f64) -> f64 {
    let mid = lo + (hi - lo) / 2.0;
    if mid > lo {
        mid
    } else {
        hi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Node {
    Leaf {
        weight: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        gain: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

impl Node {
    fn eval(&self, x: ArrayView1<'_, f64>) -> f64 {
        let mut node = self;
        loop {
            match node {
                Node::Leaf { weight } => return *weight,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    node = if x[*feature] < *threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Node::Leaf { .. } => 0,
            Node::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn n_leaves(&self) -> usize {
        match self {
            Node::Leaf { .. } => 1,
            Node::Split { left, right, .. } => left.n_leaves() + right.n_leaves(),
        }
    }

    /// Visits every split as `(feature, gain)`.
    pub fn for_each_split(&self, f: &mut impl FnMut(usize, f64)) {
        if let Node::Split {
            feature,
            gain,
            left,
            right,
            ..
        } = self
        {
            f(*feature, *gain);
            left.for_each_split(f);
            right.for_each_split(f);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub root: Node,
}

impl Tree {
    /// Unscaled leaf weight reached by `x`.
    pub fn eval(&self, x: ArrayView1<'_, f64>) -> f64 {
        self.root.eval(x)
    }
}

/// What the ensemble is fit to.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Regression(Vec<f64>),
    Classes { labels: Vec<usize>, n_classes: usize },
}

impl Targets {
    fn len(&self) -> usize {
        match self {
            Targets::Regression(y) => y.len(),
            Targets::Classes { labels, .. } => labels.len(),
        }
    }

    fn task(&self) -> Task {
        match self {
            Targets::Regression(_) => Task::Regression,
            Targets::Classes { n_classes, .. } if *n_classes <= 2 => Task::Binary,
            Targets::Classes { n_classes, .. } => Task::Multiclass {
                n_classes: *n_classes,
            },
        }
    }

    /// One target vector per output: the raw target, the 0/1 label, or one
    /// indicator per class.
    fn outputs(&self) -> Vec<Vec<f64>> {
        match self {
            Targets::Regression(y) => vec![y.clone()],
            Targets::Classes { labels, n_classes } if *n_classes <= 2 => {
                vec![labels.iter().map(|&c| c as f64).collect()]
            }
            Targets::Classes { labels, n_classes } => (0..*n_classes)
                .map(|k| labels.iter().map(|&c| f64::from(c == k)).collect())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Task {
    Regression,
    Binary,
    Multiclass { n_classes: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedEnsemble {
    /// `trees[round][output]`.
    pub trees: Vec<Vec<Tree>>,
    /// Initial raw prediction per output.
    pub base_scores: Vec<f64>,
    pub params: BoostParams,
    pub n_genes: usize,
    pub task: Task,
}

fn base_score(loss: Loss, y: &[f64]) -> f64 {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    match loss {
        Loss::Squared => mean,
        Loss::Logistic => {
            let p = mean.clamp(1e-12, 1.0 - 1e-12);
            (p / (1.0 - p)).ln()
        }
    }
}

/// Fits an ensemble on a raw sample matrix.
pub fn fit(x: ArrayView2<'_, f64>, targets: &Targets, params: &BoostParams) -> Result<BoostedEnsemble> {
    params.validate()?;
    let (m, n) = x.dim();
    if m == 0 || n == 0 {
        return Err(Error::validation("cannot fit on an empty matrix"));
    }
    if targets.len() != m {
        return Err(Error::validation(format!(
            "{} targets for {m} samples",
            targets.len()
        )));
    }
    if x.iter().any(|v| v.is_nan()) {
        return Err(Error::validation("matrix contains NaN"));
    }
    if let (Targets::Regression(_), Loss::Logistic) = (targets, params.loss) {
        return Err(Error::Config("logistic loss needs class targets".into()));
    }
    if let Targets::Regression(y) = targets {
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("regression target is not finite"));
        }
    }

    let outputs = targets.outputs();
    let base_scores: Vec<f64> = outputs.iter().map(|y| base_score(params.loss, y)).collect();
    let mut raw: Vec<Vec<f64>> = base_scores.iter().map(|&b| vec![b; m]).collect();

    // (row, value) per gene in ascending value order, stored contiguously so
    // the split scan does not stride through the row-major matrix.
    let presorted: Vec<Vec<(usize, f64)>> = (0..n)
        .map(|f| {
            let col = x.column(f);
            let mut idx: Vec<(usize, f64)> = col.iter().copied().enumerate().collect();
            idx.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            idx
        })
        .collect();

    let n_rows = ((params.subsample * m as f64).round() as usize).clamp(1, m);
    let mut rng = rng::stream(params.seed, streams::BOOST);
    let mut grower = Grower {
        x,
        presorted: &presorted,
        grad: vec![0.0; m],
        hess: vec![0.0; m],
        in_node: vec![false; m],
        params,
    };

    let mut trees = Vec::with_capacity(params.n_estimators);
    for _ in 0..params.n_estimators {
        let rows: Vec<usize> = if n_rows == m {
            (0..m).collect()
        } else {
            let mut r = rand::seq::index::sample(&mut rng, m, n_rows).into_vec();
            r.sort_unstable();
            r
        };
        let mut round = Vec::with_capacity(outputs.len());
        for (y, pred) in outputs.iter().zip(raw.iter_mut()) {
            for i in 0..m {
                let (g, h) = grad_hess(params.loss, y[i], pred[i]);
                grower.grad[i] = g;
                grower.hess[i] = h;
            }
            let tree = Tree {
                root: grower.grow(&rows, 0)?,
            };
            for (i, p) in pred.iter_mut().enumerate() {
                *p += params.learning_rate * tree.eval(x.row(i));
            }
            round.push(tree);
        }
        trees.push(round);
    }

    Ok(BoostedEnsemble {
        trees,
        base_scores,
        params: params.clone(),
        n_genes: n,
        task: targets.task(),
    })
}

/// Fits a classifier ensemble to the dataset's labels.
pub fn fit_dataset(ds: &Dataset, params: &BoostParams) -> Result<BoostedEnsemble> {
    if ds.has_nan() {
        return Err(Error::validation("dataset contains NaN"));
    }
    let targets = Targets::Classes {
        labels: ds.labels().to_vec(),
        n_classes: ds.n_classes(),
    };
    fit(ds.values(), &targets, params)
}

struct Grower<'a> {
    x: ArrayView2<'a, f64>,
    presorted: &'a [Vec<(usize, f64)>],
    grad: Vec<f64>,
    hess: Vec<f64>,
    in_node: Vec<bool>,
    params: &'a BoostParams,
}

struct Candidate {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl Grower<'_> {
    fn grow(&mut self, rows: &[usize], depth: usize) -> Result<Node> {
        let lambda = self.params.lambda;
        let g: f64 = rows.iter().map(|&r| self.grad[r]).sum();
        let h: f64 = rows.iter().map(|&r| self.hess[r]).sum();
        let leaf = || leaf_weight(g, h, lambda).map(|weight| Node::Leaf { weight });

        if depth >= self.params.max_depth || rows.len() < 2 {
            return leaf();
        }
        let tol = GAIN_TOLERANCE * leaf_score(g, h, lambda).max(1.0);
        let Some(best) = self.best_split(rows, g, h, tol) else {
            return leaf();
        };

        let (left, right): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&r| self.x[[r, best.feature]] < best.threshold);
        Ok(Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            gain: best.gain,
            left: Box::new(self.grow(&left, depth + 1)?),
            right: Box::new(self.grow(&right, depth + 1)?),
        })
    }

    /// Highest-gain split, scanning genes then thresholds in ascending order
    /// and keeping the earlier candidate on ties.
    fn best_split(&mut self, rows: &[usize], g: f64, h: f64, tol: f64) -> Option<Candidate> {
        let (lambda, gamma) = (self.params.lambda, self.params.gamma);
        for &r in rows {
            self.in_node[r] = true;
        }
        let mut best: Option<Candidate> = None;
        for (feature, order) in self.presorted.iter().enumerate() {
            let (mut gl, mut hl) = (0.0, 0.0);
            let mut prev: Option<f64> = None;
            for &(r, v) in order.iter().filter(|p| self.in_node[p.0]) {
                if let Some(p) = prev {
                    if v > p {
                        let gain = split_gain(gl, hl, g - gl, h - hl, lambda, gamma);
                        let better = match &best {
                            None => gain > tol,
                            Some(b) => gain > b.gain + tol,
                        };
                        if better {
                            best = Some(Candidate {
                                feature,
                                threshold: midpoint(p, v),
                                gain,
                            });
                        }
                    }
                }
                gl += self.grad[r];
                hl += self.hess[r];
                prev = Some(v);
            }
        }
        for &r in rows {
            self.in_node[r] = false;
        }
        best
    }
}

impl BoostedEnsemble {
    pub fn n_outputs(&self) -> usize {
        self.base_scores.len()
    }

    fn check_width(&self, x: &ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.n_genes {
            return Err(Error::validation(format!(
                "model expects {} genes, data has {}",
                self.n_genes,
                x.ncols()
            )));
        }
        Ok(())
    }

    /// Raw additive score of one sample for each output.
    pub fn raw_row(&self, x: ArrayView1<'_, f64>) -> Vec<f64> {
        let eta = self.params.learning_rate;
        let mut raw = self.base_scores.clone();
        for round in &self.trees {
            for (k, tree) in round.iter().enumerate() {
                raw[k] += eta * tree.eval(x);
            }
        }
        raw
    }

    /// Real-valued predictions (output 0) for regression models.
    pub fn predict_values(&self, x: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        self.check_width(&x)?;
        Ok(x.rows().into_iter().map(|r| self.raw_row(r)[0]).collect())
    }

    /// Class predictions. Binary: class 1 only when the score is strictly
    /// past the decision point, so exact ties go to class 0. Multiclass:
    /// argmax of one-vs-rest scores, ties to the lowest class.
    pub fn predict_classes(&self, x: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
        self.check_width(&x)?;
        if self.task == Task::Regression {
            return Err(Error::validation("regression model cannot predict classes"));
        }
        Ok(x.rows()
            .into_iter()
            .map(|r| {
                let raw = self.raw_row(r);
                if raw.len() == 1 {
                    let positive = match self.params.loss {
                        Loss::Logistic => sigmoid(raw[0]) > 0.5,
                        Loss::Squared => raw[0] > 0.5,
                    };
                    usize::from(positive)
                } else {
                    argmax_lowest(&raw)
                }
            })
            .collect())
    }

    pub fn importances(&self) -> ImportanceReport {
        let mut total_gain = vec![0.0; self.n_genes];
        let mut split_count = vec![0usize; self.n_genes];
        for tree in self.trees.iter().flatten() {
            tree.root.for_each_split(&mut |f, gain| {
                total_gain[f] += gain;
                split_count[f] += 1;
            });
        }
        ImportanceReport::new(total_gain, split_count)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

pub(crate) fn argmax_lowest(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in v.iter().enumerate().skip(1) {
        if s > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub total_gain: Vec<f64>,
    pub split_count: Vec<usize>,
    /// Genes by descending gain, ascending index on ties.
    pub ranking: Vec<usize>,
}

impl ImportanceReport {
    pub fn new(total_gain: Vec<f64>, split_count: Vec<usize>) -> Self {
        let mut ranking: Vec<usize> = (0..total_gain.len()).collect();
        ranking.sort_by(|&a, &b| total_gain[b].total_cmp(&total_gain[a]).then(a.cmp(&b)));
        ImportanceReport {
            total_gain,
            split_count,
            ranking,
        }
    }

    /// Genes with strictly positive gain, ascending.
    pub fn select_nonzero(&self) -> Result<Vec<usize>> {
        let genes: Vec<usize> = self
            .total_gain
            .iter()
            .enumerate()
            .filter(|(_, &g)| g > 0.0)
            .map(|(i, _)| i)
            .collect();
        if genes.is_empty() {
            return Err(Error::EmptyStageOne);
        }
        Ok(genes)
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W, gene_ids: &[String]) -> std::result::Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["rank", "gene_index", "gene_id", "total_gain", "split_count"])?;
        for (rank, &g) in self.ranking.iter().enumerate() {
            w.write_record([
                (rank + 1).to_string(),
                g.to_string(),
                gene_ids.get(g).cloned().unwrap_or_default(),
                self.total_gain[g].to_string(),
                self.split_count[g].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

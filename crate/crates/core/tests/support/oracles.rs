//! Independent reference computations used to check the library.
//!
//! Nothing in here calls the code path it checks: trees are grown by
//! re-enumerating every split from raw sums, derivatives come from finite
//! differences of the loss itself, Wilcoxon p-values from walking all sign
//! assignments, and so on.

#![allow(dead_code, clippy::needless_range_loop)]

use genesel::boosting::{BoostedEnsemble, Node};

/// Simple splittable generator so oracles do not depend on the library's RNG setup.
pub struct Lcg(u64);

impl Lcg {
    pub fn new(seed: u64) -> Self {
        Lcg(seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self
            .0
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        let mut x = self.0;
        x ^= x >> 33;
        x = x.wrapping_mul(0xff51afd7ed558ccd);
        x ^= x >> 33;
        x
    }

    /// Uniform in [0, 1).
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }
}

// ---------------------------------------------------------------------------
// Losses

pub fn squared_loss(y: f64, r: f64) -> f64 {
    0.5 * (y - r) * (y - r)
}

pub fn logistic_loss(y: f64, r: f64) -> f64 {
    // softplus(r) - y·r, evaluated stably.
    let softplus = if r > 0.0 { r + (-r).exp().ln_1p() } else { r.exp().ln_1p() };
    softplus - y * r
}

pub fn central_first(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

pub fn central_second(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h)
}

// ---------------------------------------------------------------------------
// Second-order objective

/// Minimizes `G·w + ½(H+λ)·w²` by golden-section search; returns (w, value).
pub fn minimize_leaf_quadratic(g: f64, h: f64, lambda: f64) -> (f64, f64) {
    let f = |w: f64| g * w + 0.5 * (h + lambda) * w * w;
    let bound = 10.0 * (g.abs() / (h + lambda) + 1.0);
    let (mut a, mut b) = (-bound, bound);
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let c = b - phi * (b - a);
        let d = a + phi * (b - a);
        if f(c) < f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    let w = (a + b) / 2.0;
    (w, f(w))
}

/// Regularized second-order objective of a set of leaves, each given by its
/// per-sample (g, h) pairs, at numerically minimized weights.
pub fn leaves_objective(leaves: &[Vec<(f64, f64)>], lambda: f64, gamma: f64) -> f64 {
    let mut total = gamma * leaves.len() as f64;
    for leaf in leaves {
        let g: f64 = leaf.iter().map(|p| p.0).sum();
        let h: f64 = leaf.iter().map(|p| p.1).sum();
        let (w, _) = minimize_leaf_quadratic(g, h, lambda);
        total += leaf.iter().map(|&(gi, hi)| gi * w + 0.5 * hi * w * w).sum::<f64>();
        total += 0.5 * lambda * w * w;
    }
    total
}

// ---------------------------------------------------------------------------
// Exhaustive tree growth (squared loss)

#[derive(Debug, Clone)]
pub enum OracleNode {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: Box<OracleNode>,
        right: Box<OracleNode>,
    },
}

impl OracleNode {
    fn eval(&self, x: &[f64]) -> f64 {
        match self {
            OracleNode::Leaf(w) => *w,
            OracleNode::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                if x[*feature] < *threshold {
                    left.eval(x)
                } else {
                    right.eval(x)
                }
            }
        }
    }
}

pub struct OracleParams {
    pub n_estimators: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub gamma: f64,
}

/// Grows a squared-loss ensemble by brute force: at every node every
/// (feature, distinct-value midpoint) is scored from freshly summed
/// gradients. Ties (within the documented tolerance) keep the lower feature,
/// then the lower threshold.
pub fn oracle_ensemble(x: &[Vec<f64>], y: &[f64], p: &OracleParams) -> (f64, Vec<OracleNode>) {
    let m = y.len();
    let base = y.iter().sum::<f64>() / m as f64;
    let mut pred = vec![base; m];
    let mut trees = Vec::new();
    for _ in 0..p.n_estimators {
        let g: Vec<f64> = (0..m).map(|i| pred[i] - y[i]).collect();
        let h = vec![1.0; m];
        let rows: Vec<usize> = (0..m).collect();
        let tree = oracle_grow(x, &g, &h, &rows, 0, p);
        for i in 0..m {
            pred[i] += p.learning_rate * tree.eval(&x[i]);
        }
        trees.push(tree);
    }
    (base, trees)
}

fn oracle_grow(x: &[Vec<f64>], g: &[f64], h: &[f64], rows: &[usize], depth: usize, p: &OracleParams) -> OracleNode {
    let sum = |idx: &[usize], v: &[f64]| idx.iter().map(|&i| v[i]).sum::<f64>();
    let (gs, hs) = (sum(rows, g), sum(rows, h));
    let leaf = OracleNode::Leaf(-gs / (hs + p.lambda));
    if depth >= p.max_depth || rows.len() < 2 {
        return leaf;
    }
    let parent = gs * gs / (hs + p.lambda);
    let tol = 1e-12 * parent.max(1.0);
    let n = x[0].len();
    let mut best: Option<(usize, f64, f64)> = None;
    for f in 0..n {
        let mut vals: Vec<f64> = rows.iter().map(|&i| x[i][f]).collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        for w in vals.windows(2) {
            let t = (w[0] + w[1]) / 2.0;
            let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x[i][f] < t);
            let (gl, hl, gr, hr) = (sum(&l, g), sum(&l, h), sum(&r, g), sum(&r, h));
            let gain = 0.5 * (gl * gl / (hl + p.lambda) + gr * gr / (hr + p.lambda) - parent) - p.gamma;
            let better = match best {
                None => gain > tol,
                Some((_, _, bg)) => gain > bg + tol,
            };
            if better {
                best = Some((f, t, gain));
            }
        }
    }
    match best {
        None => leaf,
        Some((feature, threshold, _)) => {
            let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x[i][feature] < threshold);
            OracleNode::Split {
                feature,
                threshold,
                left: Box::new(oracle_grow(x, g, h, &l, depth + 1, p)),
                right: Box::new(oracle_grow(x, g, h, &r, depth + 1, p)),
            }
        }
    }
}

/// Compares structure exactly and numbers within `tol`; returns a diff message.
pub fn compare_trees(model: &Node, oracle: &OracleNode, tol: f64) -> Result<(), String> {
    match (model, oracle) {
        (Node::Leaf { weight }, OracleNode::Leaf(w)) => {
            if (weight - w).abs() <= tol {
                Ok(())
            } else {
                Err(format!("leaf weight {weight} vs oracle {w}"))
            }
        }
        (
            Node::Split {
                feature,
                threshold,
                left,
                right,
                ..
            },
            OracleNode::Split {
                feature: of,
                threshold: ot,
                left: ol,
                right: or,
            },
        ) => {
            if feature != of {
                return Err(format!("split feature {feature} vs oracle {of}"));
            }
            if (threshold - ot).abs() > tol {
                return Err(format!("threshold {threshold} vs oracle {ot}"));
            }
            compare_trees(left, ol, tol)?;
            compare_trees(right, or, tol)
        }
        (a, b) => Err(format!("shape mismatch: {a:?} vs {b:?}")),
    }
}

pub fn compare_ensemble(model: &BoostedEnsemble, base: f64, oracle: &[OracleNode], tol: f64) -> Result<(), String> {
    if (model.base_scores[0] - base).abs() > tol {
        return Err(format!("base score {} vs {base}", model.base_scores[0]));
    }
    if model.trees.len() != oracle.len() {
        return Err(format!("{} rounds vs {}", model.trees.len(), oracle.len()));
    }
    for (round, (t, o)) in model.trees.iter().zip(oracle).enumerate() {
        compare_trees(&t[0].root, o, tol).map_err(|e| format!("round {round}: {e}"))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Metrics on a binary confusion matrix, straight from the definitions

pub struct BinaryCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

fn div0(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a / b
    }
}

/// (accuracy, macro precision, macro recall, macro F) with class 1 positive
/// and class 0 scored as the mirrored problem.
pub fn binary_macro_metrics(c: &BinaryCounts) -> (f64, f64, f64, f64) {
    let (tp, fp, fn_, tn) = (c.tp as f64, c.fp as f64, c.fn_ as f64, c.tn as f64);
    let acc = (tp + tn) / (tp + fp + tn + fn_);
    let p1 = div0(tp, tp + fp);
    let r1 = div0(tp, tp + fn_);
    let f1 = div0(2.0 * p1 * r1, p1 + r1);
    let p0 = div0(tn, tn + fn_);
    let r0 = div0(tn, tn + fp);
    let f0 = div0(2.0 * p0 * r0, p0 + r0);
    (acc, (p0 + p1) / 2.0, (r0 + r1) / 2.0, (f0 + f1) / 2.0)
}

// ---------------------------------------------------------------------------
// Wilcoxon by walking every sign assignment

/// Two-sided exact p for tie-free, zero-free differences, by visiting all
/// 2^n sign patterns of the ranks 1..n.
pub fn wilcoxon_enumerated(d: &[f64]) -> f64 {
    let n = d.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| d[a].abs().total_cmp(&d[b].abs()));
    let mut rank = vec![0u64; n];
    for (r, &i) in idx.iter().enumerate() {
        rank[i] = r as u64 + 1;
    }
    let total: u64 = rank.iter().sum();
    let w_plus: u64 = (0..n).filter(|&i| d[i] > 0.0).map(|i| rank[i]).sum();
    let w = w_plus.min(total - w_plus);
    let mut at_or_below = 0u64;
    for mask in 0u64..(1u64 << n) {
        let s: u64 = (0..n).filter(|&i| mask >> i & 1 == 1).map(|i| rank[i]).sum();
        if s <= w {
            at_or_below += 1;
        }
    }
    (2.0 * at_or_below as f64 / (1u64 << n) as f64).min(1.0)
}

// ---------------------------------------------------------------------------
// KNN by full sort

pub fn knn_brute(train: &[Vec<f64>], labels: &[usize], q: &[f64], k: usize, n_classes: usize) -> usize {
    let mut d: Vec<(f64, usize)> = train
        .iter()
        .enumerate()
        .map(|(i, t)| (t.iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt(), i))
        .collect();
    d.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let mut votes = vec![0usize; n_classes];
    let mut first = vec![usize::MAX; n_classes];
    for (pos, &(_, i)) in d.iter().take(k).enumerate() {
        votes[labels[i]] += 1;
        first[labels[i]] = first[labels[i]].min(pos);
    }
    let top = *votes.iter().max().unwrap();
    (0..n_classes)
        .filter(|&c| votes[c] == top)
        .min_by_key(|&c| (first[c], c))
        .unwrap()
}

/// Leave-one-out 1-NN accuracy over the given columns.
pub fn loo_1nn_accuracy(x: &[Vec<f64>], labels: &[usize], cols: &[usize]) -> f64 {
    let m = x.len();
    let mut correct = 0;
    for i in 0..m {
        let mut best = (f64::INFINITY, usize::MAX);
        for j in (0..m).filter(|&j| j != i) {
            let d: f64 = cols.iter().map(|&c| (x[i][c] - x[j][c]).powi(2)).sum();
            if d < best.0 {
                best = (d, j);
            }
        }
        if labels[best.1] == labels[i] {
            correct += 1;
        }
    }
    correct as f64 / m as f64
}

// ---------------------------------------------------------------------------
// KNN imputation from pairwise partial distances

pub fn impute_brute(values: &[Vec<Option<f64>>], k: usize) -> Vec<Vec<f64>> {
    let m = values.len();
    let n = values[0].len();
    let dist = |a: usize, b: usize| {
        let both: Vec<usize> = (0..n)
            .filter(|&j| values[a][j].is_some() && values[b][j].is_some())
            .collect();
        if both.is_empty() {
            return f64::INFINITY;
        }
        let sq: f64 = both
            .iter()
            .map(|&j| (values[a][j].unwrap() - values[b][j].unwrap()).powi(2))
            .sum();
        (sq * n as f64 / both.len() as f64).sqrt()
    };
    let mut out = vec![vec![0.0; n]; m];
    for i in 0..m {
        for j in 0..n {
            out[i][j] = match values[i][j] {
                Some(v) => v,
                None => {
                    let mut cands: Vec<(f64, usize)> = (0..m)
                        .filter(|&o| o != i && values[o][j].is_some())
                        .map(|o| (dist(i, o), o))
                        .filter(|p| p.0.is_finite())
                        .collect();
                    cands.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
                    let picked: Vec<f64> = cands.iter().take(k).map(|&(_, o)| values[o][j].unwrap()).collect();
                    if picked.is_empty() {
                        let obs: Vec<f64> = (0..m).filter_map(|o| values[o][j]).collect();
                        obs.iter().sum::<f64>() / obs.len() as f64
                    } else {
                        picked.iter().sum::<f64>() / picked.len() as f64
                    }
                }
            };
        }
    }
    out
}

// ---------------------------------------------------------------------------
// A six-gene search problem small enough to enumerate

/// Genes 1 and 4 jointly encode the class as an XOR of two tight clusters;
/// neither separates it alone and the other four genes are uniform noise.
pub fn xor_toy(seed: u64) -> genesel::Dataset {
    let mut rng = Lcg::new(seed);
    let m = 40;
    let mut values = ndarray::Array2::zeros((m, 6));
    let mut labels = Vec::with_capacity(m);
    for i in 0..m {
        let (a, b) = ((i / 2) % 2, i % 2);
        for j in 0..6 {
            values[[i, j]] = rng.unit();
        }
        values[[i, 1]] = a as f64 + rng.range(-0.05, 0.05);
        values[[i, 4]] = b as f64 + rng.range(-0.05, 0.05);
        labels.push(a ^ b);
    }
    let ids = (0..6).map(|j| format!("t{j}")).collect();
    genesel::Dataset::new("xor-toy", values, labels, ids, vec!["even".into(), "odd".into()]).unwrap()
}

/// Every nonempty subset scored with the library's fitness and ordered by
/// (fitness desc, size asc, sorted indices asc). Returns the ranked list.
pub fn enumerate_subsets(ds: &genesel::Dataset, cfg: &genesel::GaConfig) -> Vec<(Vec<usize>, f64)> {
    let n = ds.n_genes();
    let mut all: Vec<(Vec<usize>, f64)> = (1u32..(1 << n))
        .map(|mask| {
            let set: Vec<usize> = (0..n).filter(|&j| mask >> j & 1 == 1).collect();
            let mut c = genesel::Chromosome::from_indices(n, &set);
            let f = genesel::ga::fitness(&mut c, ds, cfg).unwrap();
            (set, f)
        })
        .collect();
    all.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap()
            .then(a.0.len().cmp(&b.0.len()))
            .then(a.0.cmp(&b.0))
    });
    all
}

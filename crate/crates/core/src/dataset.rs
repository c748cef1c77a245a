//! Tabular expression data: loading, imputation, scaling and fold planning.

use std::collections::{BTreeSet, HashMap};
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, streams};

/// Samples × genes expression matrix with class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    values: Array2<f64>,
    labels: Vec<usize>,
    gene_ids: Vec<String>,
    class_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        values: Array2<f64>,
        labels: Vec<usize>,
        gene_ids: Vec<String>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        let (m, n) = values.dim();
        if m == 0 || n == 0 {
            return Err(Error::validation(format!("empty matrix ({m}x{n})")));
        }
        if labels.len() != m {
            return Err(Error::validation(format!(
                "{} labels for {m} samples",
                labels.len()
            )));
        }
        if gene_ids.len() != n {
            return Err(Error::validation(format!(
                "{} gene ids for {n} genes",
                gene_ids.len()
            )));
        }
        let c = class_names.len();
        if c < 2 {
            return Err(Error::validation(format!(
                "need at least 2 classes, found {c}"
            )));
        }
        let mut seen = vec![false; c];
        for (i, &y) in labels.iter().enumerate() {
            if y >= c {
                return Err(Error::validation(format!(
                    "sample {i} has label {y} but only {c} classes exist"
                )));
            }
            seen[y] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::validation(format!(
                "class {missing} ({}) has no samples",
                class_names[missing]
            )));
        }
        Ok(Dataset {
            name: name.into(),
            values,
            labels,
            gene_ids,
            class_names,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn gene_ids(&self) -> &[String] {
        &self.gene_ids
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn n_samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_genes(&self) -> usize {
        self.values.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn has_nan(&self) -> bool {
        self.values.iter().any(|v| v.is_nan())
    }

    /// Column slice onto `genes`, which must be nonempty and strictly increasing.
    pub fn project(&self, genes: &[usize]) -> Result<Dataset> {
        check_subset(genes, self.n_genes())?;
        let values = self.values.select(Axis(1), genes);
        let gene_ids = genes.iter().map(|&g| self.gene_ids[g].clone()).collect();
        Ok(Dataset {
            name: self.name.clone(),
            values,
            labels: self.labels.clone(),
            gene_ids,
            class_names: self.class_names.clone(),
        })
    }

    /// Row subset, in the given order. Fails if a class loses all its samples.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Dataset> {
        if let Some(&bad) = rows.iter().find(|&&r| r >= self.n_samples()) {
            return Err(Error::validation(format!("row {bad} out of bounds")));
        }
        let values = self.values.select(Axis(0), rows);
        let labels = rows.iter().map(|&r| self.labels[r]).collect();
        Dataset::new(
            self.name.clone(),
            values,
            labels,
            self.gene_ids.clone(),
            self.class_names.clone(),
        )
    }

    fn with_values(&self, values: Array2<f64>) -> Dataset {
        debug_assert_eq!(values.dim(), self.values.dim());
        Dataset {
            values,
            ..self.clone()
        }
    }

    /// Writes the dataset as CSV with the label in the last column.
    /// Cells in `mask` are written as `missing_token`.
    pub fn write_csv<W: Write>(
        &self,
        out: W,
        mask: Option<&MissingMask>,
        missing_token: &str,
    ) -> std::result::Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<&str> = self.gene_ids.iter().map(String::as_str).collect();
        header.push("class");
        w.write_record(&header)?;
        let mut record = Vec::with_capacity(self.n_genes() + 1);
        for (i, row) in self.values.rows().into_iter().enumerate() {
            record.clear();
            for (j, v) in row.iter().enumerate() {
                if mask.is_some_and(|m| m.contains(i, j)) {
                    record.push(missing_token.to_string());
                } else {
                    record.push(v.to_string());
                }
            }
            record.push(self.class_names[self.labels[i]].clone());
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn check_subset(genes: &[usize], n: usize) -> Result<()> {
    if genes.is_empty() {
        return Err(Error::validation("gene subset is empty"));
    }
    for w in genes.windows(2) {
        if w[0] == w[1] {
            return Err(Error::validation(format!("duplicate gene index {}", w[0])));
        }
        if w[0] > w[1] {
            return Err(Error::validation("gene subset is not sorted ascending"));
        }
    }
    let last = *genes.last().unwrap();
    if last >= n {
        return Err(Error::validation(format!(
            "gene index {last} out of bounds for {n} genes"
        )));
    }
    Ok(())
}

/// Cells that were missing in the source file.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MissingMask {
    cells: BTreeSet<(usize, usize)>,
}

impl MissingMask {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, row: usize, col: usize) {
        self.cells.insert((row, col));
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        self.cells.contains(&(row, col))
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.cells.iter().copied()
    }
}

impl FromIterator<(usize, usize)> for MissingMask {
    fn from_iter<I: IntoIterator<Item = (usize, usize)>>(iter: I) -> Self {
        MissingMask {
            cells: iter.into_iter().collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelColumn {
    First,
    #[default]
    Last,
}

impl std::str::FromStr for LabelColumn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "first" => Ok(LabelColumn::First),
            "last" => Ok(LabelColumn::Last),
            other => Err(Error::Config(format!(
                "label column must be `first` or `last`, got `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub label_column: LabelColumn,
    /// Token marking a missing cell, in addition to the empty string.
    pub missing_token: String,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            label_column: LabelColumn::Last,
            missing_token: "NA".to_string(),
        }
    }
}

/// Loads a CSV with a header row of gene ids plus a label column.
///
/// Missing cells are zero-filled and reported in the returned mask. Class
/// labels are mapped to indices in order of first appearance.
pub fn load_csv(path: impl AsRef<Path>, opts: &LoadOptions) -> Result<(Dataset, MissingMask)> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_csv(file, &name, opts).map_err(|e| match e {
        Error::Parse { line, message, .. } => Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        },
        other => other,
    })
}

/// Same as [`load_csv`] over any reader.
pub fn read_csv<R: std::io::Read>(
    reader: R,
    name: &str,
    opts: &LoadOptions,
) -> Result<(Dataset, MissingMask)> {
    let parse_err = |line: u64, message: String| Error::Parse {
        path: name.into(),
        line,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    let width = header.len();
    if width < 2 {
        return Err(parse_err(
            1,
            "header needs at least one gene column and a label column".into(),
        ));
    }
    let label_at = match opts.label_column {
        LabelColumn::First => 0,
        LabelColumn::Last => width - 1,
    };
    let gene_ids: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != label_at)
        .map(|(_, h)| h.trim().to_string())
        .collect();
    let n = gene_ids.len();

    let mut flat = Vec::new();
    let mut labels = Vec::new();
    let mut class_names: Vec<String> = Vec::new();
    let mut class_index: HashMap<String, usize> = HashMap::new();
    let mut mask = MissingMask::new();

    for (row, record) in rdr.records().enumerate() {
        let line = row as u64 + 2;
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(line);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(line);
        if record.len() != width {
            return Err(parse_err(
                line,
                format!("expected {width} fields, found {}", record.len()),
            ));
        }
        let mut col = 0;
        for (j, cell) in record.iter().enumerate() {
            let cell = cell.trim();
            if j == label_at {
                let next = class_names.len();
                let idx = *class_index.entry(cell.to_string()).or_insert_with(|| {
                    class_names.push(cell.to_string());
                    next
                });
                labels.push(idx);
                continue;
            }
            if cell.is_empty() || cell == opts.missing_token {
                mask.insert(row, col);
                flat.push(0.0);
            } else {
                let v: f64 = cell.parse().map_err(|_| {
                    parse_err(
                        line,
                        format!("non-numeric value `{cell}` in column `{}`", gene_ids[col]),
                    )
                })?;
                flat.push(v);
            }
            col += 1;
        }
    }
    let m = labels.len();
    if class_names.len() < 2 {
        return Err(Error::validation(format!(
            "{name}: found {} class(es); need at least 2",
            class_names.len()
        )));
    }
    let values = Array2::from_shape_vec((m, n), flat).expect("row widths checked");
    let ds = Dataset::new(name, values, labels, gene_ids, class_names)?;
    Ok((ds, mask))
}

/// Replaces missing cells with the mean of that gene over the nearest samples.
///
/// Distance between two samples is Euclidean over the genes observed in both,
/// scaled up by the inverse of the fraction of genes used. Only samples that
/// observed the gene being imputed are candidate neighbours; when none exist
/// the observed column mean is used.
pub fn impute_knn(ds: &Dataset, mask: &MissingMask, n_neighbors: usize) -> Result<Dataset> {
    if n_neighbors == 0 {
        return Err(Error::validation("n_neighbors must be at least 1"));
    }
    if mask.is_empty() {
        return Ok(ds.clone());
    }
    let (m, n) = ds.values.dim();
    let mut observed = Array2::from_elem((m, n), true);
    for (i, j) in mask.iter() {
        if i >= m || j >= n {
            return Err(Error::validation(format!(
                "missing cell ({i}, {j}) out of bounds"
            )));
        }
        observed[[i, j]] = false;
    }

    let mut col_mean = vec![0.0; n];
    for j in 0..n {
        let (sum, count) = (0..m)
            .filter(|&i| observed[[i, j]])
            .fold((0.0, 0usize), |(s, c), i| (s + ds.values[[i, j]], c + 1));
        if count == 0 {
            return Err(Error::validation(format!(
                "gene `{}` has no observed values",
                ds.gene_ids[j]
            )));
        }
        col_mean[j] = sum / count as f64;
    }

    let rows_with_missing: BTreeSet<usize> = mask.iter().map(|(i, _)| i).collect();
    let mut out = ds.values.clone();
    for &i in &rows_with_missing {
        let dist: Vec<f64> = (0..m)
            .map(|k| {
                if k == i {
                    f64::INFINITY
                } else {
                    partial_distance(&ds.values, &observed, i, k)
                }
            })
            .collect();
        let mut order: Vec<usize> = (0..m).filter(|&k| dist[k].is_finite()).collect();
        order.sort_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(a.cmp(&b)));

        for j in (0..n).filter(|&j| !observed[[i, j]]) {
            let donors: Vec<f64> = order
                .iter()
                .filter(|&&k| observed[[k, j]])
                .take(n_neighbors)
                .map(|&k| ds.values[[k, j]])
                .collect();
            out[[i, j]] = if donors.is_empty() {
                col_mean[j]
            } else {
                donors.iter().sum::<f64>() / donors.len() as f64
            };
        }
    }
    Ok(ds.with_values(out))
}

fn partial_distance(values: &Array2<f64>, observed: &Array2<bool>, a: usize, b: usize) -> f64 {
    let n = values.ncols();
    let mut sq = 0.0;
    let mut used = 0usize;
    for j in 0..n {
        if observed[[a, j]] && observed[[b, j]] {
            let d = values[[a, j]] - values[[b, j]];
            sq += d * d;
            used += 1;
        }
    }
    if used == 0 {
        f64::INFINITY
    } else {
        (sq * n as f64 / used as f64).sqrt()
    }
}

/// Per-gene min-max statistics, replayable on held-out data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMaxScaler {
    pub fn fit(x: ArrayView2<'_, f64>) -> Self {
        let n = x.ncols();
        let mut min = vec![f64::INFINITY; n];
        let mut max = vec![f64::NEG_INFINITY; n];
        for row in x.rows() {
            for (j, &v) in row.iter().enumerate() {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        MinMaxScaler { min, max }
    }

    /// Constant columns map to 0. Held-out values outside the fitted range
    /// fall outside [0, 1].
    pub fn transform(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                let span = self.max[j] - self.min[j];
                *v = if span > 0.0 {
                    (*v - self.min[j]) / span
                } else {
                    0.0
                };
            }
        }
        out
    }

    pub fn transform_dataset(&self, ds: &Dataset) -> Dataset {
        ds.with_values(self.transform(ds.values()))
    }
}

/// Scales every gene to [0, 1] using statistics of `ds` itself.
pub fn normalize_minmax(ds: &Dataset) -> Dataset {
    MinMaxScaler::fit(ds.values()).transform_dataset(ds)
}

/// Repeated stratified k-fold assignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub rounds: usize,
    pub seed: u64,
    /// `assignments[round][fold]` holds sorted test indices.
    pub assignments: Vec<Vec<Vec<usize>>>,
    n_samples: usize,
}

/// One train/test split of a [`FoldPlan`].
#[derive(Debug, Clone)]
pub struct Split<'a> {
    pub round: usize,
    pub fold: usize,
    pub train: Vec<usize>,
    pub test: &'a [usize],
}

impl FoldPlan {
    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn splits(&self) -> Vec<Split<'_>> {
        let mut out = Vec::with_capacity(self.k * self.rounds);
        for (round, folds) in self.assignments.iter().enumerate() {
            let mut fold_of = vec![0usize; self.n_samples];
            for (f, idx) in folds.iter().enumerate() {
                for &i in idx {
                    fold_of[i] = f;
                }
            }
            for (fold, test) in folds.iter().enumerate() {
                let train = (0..self.n_samples).filter(|&i| fold_of[i] != fold).collect();
                out.push(Split {
                    round,
                    fold,
                    train,
                    test,
                });
            }
        }
        out
    }
}

/// Builds `rounds` stratified `k`-fold partitions of the samples.
///
/// Each class is shuffled and dealt round-robin across folds, continuing
/// from the fold where the previous class stopped so fold sizes stay within
/// one of each other. Shuffling depends only on `seed` and the round index.
pub fn make_folds(labels: &[usize], k: usize, rounds: usize, seed: u64) -> Result<FoldPlan> {
    make_folds_in_stream(labels, k, rounds, seed, streams::FOLDS)
}

/// [`make_folds`] drawing from a different random stream, for fold plans that
/// must not coincide with the outer ones under the same seed.
pub(crate) fn make_folds_in_stream(
    labels: &[usize],
    k: usize,
    rounds: usize,
    seed: u64,
    stream: u64,
) -> Result<FoldPlan> {
    let m = labels.len();
    if k < 2 {
        return Err(Error::validation(format!("fold count must be >= 2, got {k}")));
    }
    if k > m {
        return Err(Error::validation(format!(
            "fold count {k} exceeds sample count {m}"
        )));
    }
    let n_classes = labels.iter().max().map_or(0, |&c| c + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &y) in labels.iter().enumerate() {
        by_class[y].push(i);
    }

    let mut assignments = Vec::with_capacity(rounds);
    for round in 0..rounds {
        let mut rng = rng::stream(seed, stream + round as u64);
        let mut folds: Vec<Vec<usize>> = vec![Vec::new(); k];
        let mut next = 0usize;
        for members in &by_class {
            let mut members = members.clone();
            members.shuffle(&mut rng);
            for i in members {
                folds[next].push(i);
                next = (next + 1) % k;
            }
        }
        for f in &mut folds {
            f.sort_unstable();
        }
        assignments.push(folds);
    }
    Ok(FoldPlan {
        k,
        rounds,
        seed,
        assignments,
        n_samples: m,
    })
}

//! End-to-end selection runs: boosted ranking, genetic search, evaluation.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::boosting::{self, BoostParams, ImportanceReport};
use crate::classifiers::{self, ClassifierKind, ClassifierSpec};
use crate::dataset::{make_folds, Dataset, MinMaxScaler};
use crate::error::{Error, Result};
use crate::ga::{self, GaConfig, GaTrace};
use crate::metrics::{confusion, cross_validate, metrics, CvSummary, FoldResult, SkippedFold};
use crate::stats::{wilcoxon_signed_rank, WilcoxonOptions, WilcoxonResult};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    /// Select on the full dataset, then cross-validate the selected genes.
    #[default]
    Paper,
    /// Re-run both stages inside every outer training fold.
    Nested,
}

impl std::str::FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Protocol::Paper),
            "nested" => Ok(Protocol::Nested),
            other => Err(Error::Config(format!(
                "protocol must be `paper` or `nested`, got `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub boost: BoostParams,
    pub ga: GaConfig,
    pub eval_classifiers: Vec<ClassifierSpec>,
    pub cv_k: usize,
    pub cv_rounds: usize,
    pub protocol: Protocol,
    pub impute_neighbors: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            boost: BoostParams::default(),
            ga: GaConfig::default(),
            eval_classifiers: vec![
                ClassifierSpec::new(ClassifierKind::LinearSvm),
                ClassifierSpec::new(ClassifierKind::GaussianNb),
            ],
            cv_k: 10,
            cv_rounds: 10,
            protocol: Protocol::Paper,
            impute_neighbors: 5,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    /// Uses `seed` for every stochastic component.
    pub fn seeded(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.boost.seed = seed;
        self.ga.seed = seed;
        for c in &mut self.eval_classifiers {
            c.seed = seed;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.boost.validate()?;
        self.ga.validate()?;
        for c in &self.eval_classifiers {
            c.validate()?;
        }
        if self.eval_classifiers.is_empty() {
            return Err(Error::Config("no evaluation classifiers".into()));
        }
        if self.cv_k < 2 {
            return Err(Error::Config("cv_k must be >= 2".into()));
        }
        if self.cv_rounds == 0 {
            return Err(Error::Config("cv_rounds must be >= 1".into()));
        }
        if self.impute_neighbors == 0 {
            return Err(Error::Config("impute_neighbors must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedGene {
    pub index: usize,
    pub id: String,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectedGene {
    pub index: usize,
    pub id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierEvaluation {
    pub classifier: ClassifierKind,
    pub summary: CvSummary,
}

/// Wall-clock seconds per stage, rounded to milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageRuntimes {
    pub stage1: f64,
    pub stage2: f64,
    pub evaluation: f64,
}

/// Selection sizes inside one outer fold of the nested protocol.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NestedFold {
    pub round: usize,
    pub fold: usize,
    pub n_stage1: usize,
    pub n_final: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub schema_version: u32,
    pub dataset: String,
    pub n_samples: usize,
    pub n_genes: usize,
    pub n_classes: usize,
    pub protocol: Protocol,
    /// Genes with positive boosting gain, ascending by index.
    pub stage1_genes: Vec<RankedGene>,
    pub n_stage1: usize,
    pub final_genes: Vec<SelectedGene>,
    pub final_fitness: f64,
    pub evaluation: Vec<ClassifierEvaluation>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub nested_folds: Vec<NestedFold>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runtimes: Option<StageRuntimes>,
    pub config: PipelineConfig,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl PipelineReport {
    pub fn final_indices(&self) -> Vec<usize> {
        self.final_genes.iter().map(|g| g.index).collect()
    }

    pub fn stage1_indices(&self) -> Vec<usize> {
        self.stage1_genes.iter().map(|g| g.index).collect()
    }

    pub fn summary_for(&self, kind: ClassifierKind) -> Option<&CvSummary> {
        self.evaluation
            .iter()
            .find(|e| e.classifier == kind)
            .map(|e| &e.summary)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let report: PipelineReport = serde_json::from_str(s)?;
        if report.schema_version != SCHEMA_VERSION {
            return Err(Error::validation(format!(
                "unsupported report schema version {}",
                report.schema_version
            )));
        }
        Ok(report)
    }

    /// Gene-count funnel, per-classifier metrics and stage runtimes as
    /// markdown tables.
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "## {} ({} protocol)\n", self.dataset, protocol_name(self.protocol));
        let _ = writeln!(out, "| Dataset | Samples | Classes | All genes | Stage 1 | Final |");
        let _ = writeln!(out, "|---|---:|---:|---:|---:|---:|");
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} |\n",
            self.dataset,
            self.n_samples,
            self.n_classes,
            self.n_genes,
            self.n_stage1,
            self.final_genes.len()
        );
        let _ = writeln!(out, "| Classifier | Accuracy | Precision | Recall | F-score |");
        let _ = writeln!(out, "|---|---|---|---|---|");
        for e in &self.evaluation {
            let s = &e.summary;
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {} |",
                e.classifier,
                s.accuracy.percent(),
                s.precision.percent(),
                s.recall.percent(),
                s.f_score.percent()
            );
        }
        if let Some(rt) = &self.runtimes {
            let _ = writeln!(out, "\n| Stage 1 (s) | Stage 2 (s) | Evaluation (s) |");
            let _ = writeln!(out, "|---:|---:|---:|");
            let _ = writeln!(out, "| {:.3} | {:.3} | {:.3} |", rt.stage1, rt.stage2, rt.evaluation);
        }
        let ids: Vec<&str> = self.final_genes.iter().map(|g| g.id.as_str()).collect();
        let _ = writeln!(out, "\nSelected genes: {}", ids.join(", "));
        for note in &self.notes {
            let _ = writeln!(out, "\n> {note}");
        }
        out
    }
}

fn protocol_name(p: Protocol) -> &'static str {
    match p {
        Protocol::Paper => "paper",
        Protocol::Nested => "nested",
    }
}

/// Result of a pipeline run: the report plus the winning GA trace of the
/// full-data selection.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub report: PipelineReport,
    pub trace: GaTrace,
    pub importance: ImportanceReport,
}

/// Stage one: fit the ensemble and keep genes with positive total gain.
pub fn stage_one(ds: &Dataset, params: &BoostParams) -> Result<(ImportanceReport, Vec<usize>)> {
    let model = boosting::fit_dataset(ds, params)?;
    let importance = model.importances();
    let genes = importance.select_nonzero()?;
    Ok((importance, genes))
}

pub struct StageTwo {
    pub genes: Vec<usize>,
    pub fitness: f64,
    pub trace: GaTrace,
}

/// Stage two: genetic search over the stage-one genes.
pub fn stage_two(ds: &Dataset, stage1_genes: &[usize], cfg: &GaConfig) -> Result<StageTwo> {
    let reduced = ds.project(stage1_genes)?;
    let (best, trace) = ga::evolve(&reduced, cfg)?;
    Ok(StageTwo {
        genes: ga::decode(&best, stage1_genes)?,
        fitness: best.fitness().unwrap_or(0.0),
        trace,
    })
}

fn seconds(start: Instant) -> f64 {
    (start.elapsed().as_secs_f64() * 1000.0).round() / 1000.0
}

/// Runs both selection stages and the cross-validated evaluation.
///
/// The dataset must already be imputed and scaled.
pub fn run_pipeline(ds: &Dataset, cfg: &PipelineConfig) -> Result<PipelineRun> {
    cfg.validate()?;
    if ds.has_nan() {
        return Err(Error::validation("dataset contains NaN; impute first"));
    }

    let t = Instant::now();
    let (importance, stage1) = stage_one(ds, &cfg.boost)?;
    let mut stage1_time = seconds(t);

    let t = Instant::now();
    let two = stage_two(ds, &stage1, &cfg.ga)?;
    let mut stage2_time = seconds(t);

    let plan = make_folds(ds.labels(), cfg.cv_k, cfg.cv_rounds, cfg.seed)?;
    let t = Instant::now();
    let mut nested_folds = Vec::new();
    let mut nested_selection_time = 0.0;
    let evaluation = match cfg.protocol {
        Protocol::Paper => cfg
            .eval_classifiers
            .iter()
            .map(|spec| {
                Ok(ClassifierEvaluation {
                    classifier: spec.kind,
                    summary: cross_validate(&two.genes, ds, spec, &plan)?,
                })
            })
            .collect::<Result<Vec<_>>>()?,
        Protocol::Nested => {
            let nested = run_nested(ds, cfg, &plan)?;
            stage1_time += nested.stage1_time;
            stage2_time += nested.stage2_time;
            nested_selection_time = nested.stage1_time + nested.stage2_time;
            nested_folds = nested.folds;
            nested.evaluation
        }
    };
    let evaluation_time = (seconds(t) - nested_selection_time).max(0.0);

    let gene_ids = ds.gene_ids();
    let report = PipelineReport {
        schema_version: SCHEMA_VERSION,
        dataset: ds.name().to_string(),
        n_samples: ds.n_samples(),
        n_genes: ds.n_genes(),
        n_classes: ds.n_classes(),
        protocol: cfg.protocol,
        stage1_genes: stage1
            .iter()
            .map(|&g| RankedGene {
                index: g,
                id: gene_ids[g].clone(),
                gain: importance.total_gain[g],
            })
            .collect(),
        n_stage1: stage1.len(),
        final_genes: two
            .genes
            .iter()
            .map(|&g| SelectedGene {
                index: g,
                id: gene_ids[g].clone(),
            })
            .collect(),
        final_fitness: two.fitness,
        evaluation,
        nested_folds,
        runtimes: Some(StageRuntimes {
            stage1: stage1_time,
            stage2: stage2_time,
            evaluation: (evaluation_time * 1000.0).round() / 1000.0,
        }),
        config: cfg.clone(),
        notes: Vec::new(),
    };
    Ok(PipelineRun {
        report,
        trace: two.trace,
        importance,
    })
}

struct NestedOutcome {
    evaluation: Vec<ClassifierEvaluation>,
    folds: Vec<NestedFold>,
    stage1_time: f64,
    stage2_time: f64,
}

/// Outer folds are processed sequentially; inside each, both stages run on
/// the training part only, rescaled with training-part statistics.
fn run_nested(ds: &Dataset, cfg: &PipelineConfig, plan: &crate::dataset::FoldPlan) -> Result<NestedOutcome> {
    let n_clf = cfg.eval_classifiers.len();
    let mut results: Vec<Vec<FoldResult>> = vec![Vec::new(); n_clf];
    let mut skipped: Vec<SkippedFold> = Vec::new();
    let mut folds = Vec::new();
    let (mut stage1_time, mut stage2_time) = (0.0, 0.0);
    let c = ds.n_classes();

    for split in plan.splits() {
        let skip = |reason: String| SkippedFold {
            round: split.round,
            fold: split.fold,
            reason,
        };
        let train = match ds.select_rows(&split.train) {
            Ok(t) => t,
            Err(e) => {
                skipped.push(skip(e.to_string()));
                continue;
            }
        };
        let scaler = MinMaxScaler::fit(train.values());
        let train = scaler.transform_dataset(&train);
        let test_x = scaler.transform(ds.values().select(ndarray::Axis(0), split.test).view());
        let test_y: Vec<usize> = split.test.iter().map(|&i| ds.labels()[i]).collect();

        let t = Instant::now();
        let stage1 = match stage_one(&train, &cfg.boost) {
            Ok((_, g)) => g,
            Err(Error::EmptyStageOne) => {
                skipped.push(skip("stage 1 selected no genes".into()));
                continue;
            }
            Err(e) => return Err(e),
        };
        stage1_time += seconds(t);
        let t = Instant::now();
        let two = stage_two(&train, &stage1, &cfg.ga)?;
        stage2_time += seconds(t);
        folds.push(NestedFold {
            round: split.round,
            fold: split.fold,
            n_stage1: stage1.len(),
            n_final: two.genes.len(),
        });

        let train_sel = train.project(&two.genes)?;
        let test_sel = test_x.select(ndarray::Axis(1), &two.genes);
        for (k, spec) in cfg.eval_classifiers.iter().enumerate() {
            let mut spec = spec.clone();
            spec.knn_k = spec.knn_k.min(train_sel.n_samples());
            let model = classifiers::train(&spec, &train_sel)?;
            let pred = model.predict(test_sel.view())?;
            let cm = confusion(&test_y, &pred, c)?;
            results[k].push(FoldResult {
                round: split.round,
                fold: split.fold,
                n_test: test_y.len(),
                n_correct: cm.trace() as usize,
                metrics: metrics(&cm)?,
            });
        }
    }

    let evaluation = cfg
        .eval_classifiers
        .iter()
        .zip(results)
        .map(|(spec, r)| {
            Ok(ClassifierEvaluation {
                classifier: spec.kind,
                summary: CvSummary::from_folds(r, skipped.clone())?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NestedOutcome {
        evaluation,
        folds,
        stage1_time,
        stage2_time,
    })
}

/// Wilcoxon test over per-dataset mean accuracies of two methods.
pub fn compare_reports(a: &[CvSummary], b: &[CvSummary], opts: &WilcoxonOptions) -> Result<WilcoxonResult> {
    if a.len() != b.len() {
        return Err(Error::validation(format!(
            "report lists are misaligned ({} vs {} datasets)",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 5 {
        return Err(Error::validation(format!(
            "need at least 5 paired datasets, got {}",
            a.len()
        )));
    }
    let xa: Vec<f64> = a.iter().map(|s| s.accuracy.mean).collect();
    let xb: Vec<f64> = b.iter().map(|s| s.accuracy.mean).collect();
    wilcoxon_signed_rank(&xa, &xb, opts)
}

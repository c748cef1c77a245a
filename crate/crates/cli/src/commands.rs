use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use genesel::dataset::{impute_knn, load_csv, make_folds, normalize_minmax};
use genesel::metrics::cross_validate;
use genesel::pipeline::{compare_reports, run_pipeline, stage_one, stage_two};
use genesel::synth::generate_synth;
use genesel::{
    ClassifierKind, ClassifierSpec, CvSummary, Dataset, LoadOptions, PipelineConfig, PipelineReport,
    SynthSpec, WilcoxonOptions, WilcoxonResult,
};
use serde::Serialize;

use crate::output::{emit, write_atomic};
use crate::settings::ConfigFile;
use crate::{
    BoostArgs, CompareArgs, DataArgs, EvalArgs, EvaluateArgs, Failure, GaArgs, RankArgs, RankFormat,
    SelectArgs, SynthArgs, TraceArgs,
};

fn csv_failure(e: impl std::fmt::Display) -> Failure {
    Failure::io(format!("cannot write CSV: {e}"))
}

/// A loaded, imputed and min-max scaled dataset.
struct Prepared {
    ds: Dataset,
    notes: Vec<String>,
    impute_neighbors: usize,
    seed: u64,
}

fn prepare(args: &DataArgs, file: &ConfigFile) -> Result<Prepared, Failure> {
    let mut opts = LoadOptions::default();
    file.apply(&mut opts.label_column, args.label_column, "label-column")?;
    file.apply(&mut opts.missing_token, args.missing_token.clone(), "missing-token")?;
    let mut k = PipelineConfig::default().impute_neighbors;
    file.apply(&mut k, args.impute_neighbors, "impute-neighbors")?;
    if k == 0 {
        return Err(Failure::invalid("impute-neighbors must be >= 1"));
    }
    let seed = file.pick(args.seed, "seed")?.unwrap_or(0);

    let (raw, mask) = load_csv(&args.data, &opts)?;
    let mut notes = Vec::new();
    let ds = if mask.is_empty() {
        raw
    } else {
        notes.push(format!(
            "{} missing cells were filled from the {k} nearest samples of the whole dataset",
            mask.len()
        ));
        impute_knn(&raw, &mask, k)?
    };
    notes.push("min-max scaling used statistics of the whole dataset".into());
    Ok(Prepared {
        ds: normalize_minmax(&ds),
        notes,
        impute_neighbors: k,
        seed,
    })
}

fn parse_classifiers(list: &str, knn_k: usize, seed: u64) -> Result<Vec<ClassifierSpec>, Failure> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            let kind: ClassifierKind = s.parse().map_err(|e: genesel::Error| Failure::invalid(e.to_string()))?;
            Ok(ClassifierSpec {
                knn_k,
                seed,
                ..ClassifierSpec::new(kind)
            })
        })
        .collect()
}

fn apply_boost(cfg: &mut PipelineConfig, a: &BoostArgs, f: &ConfigFile) -> Result<(), Failure> {
    let b = &mut cfg.boost;
    f.apply(&mut b.n_estimators, a.trees, "trees")?;
    f.apply(&mut b.max_depth, a.max_depth, "max-depth")?;
    f.apply(&mut b.subsample, a.subsample, "subsample")?;
    f.apply(&mut b.learning_rate, a.eta, "eta")?;
    f.apply(&mut b.lambda, a.lambda, "lambda")?;
    f.apply(&mut b.gamma, a.gamma, "gamma")
}

fn apply_ga(cfg: &mut PipelineConfig, a: &GaArgs, f: &ConfigFile) -> Result<(), Failure> {
    let g = &mut cfg.ga;
    f.apply(&mut g.population_size, a.pop, "pop")?;
    f.apply(&mut g.iterations, a.gens, "gens")?;
    f.apply(&mut g.crossover_prob, a.cx_prob, "cx-prob")?;
    f.apply(&mut g.mutation_prob, a.mut_prob, "mut-prob")?;
    f.apply(&mut g.tournament_size, a.tournament, "tournament")?;
    f.apply(&mut g.elitism_count, a.elitism, "elitism")?;
    f.apply(&mut g.restarts, a.restarts, "restarts")?;
    f.apply(&mut g.fitness_folds, a.fitness_folds, "fitness-folds")
}

fn apply_eval(cfg: &mut PipelineConfig, a: &EvalArgs, f: &ConfigFile) -> Result<(), Failure> {
    f.apply(&mut cfg.ga.fitness_knn_k, a.knn_k, "knn-k")?;
    f.apply(&mut cfg.cv_k, a.cv_k, "cv-k")?;
    f.apply(&mut cfg.cv_rounds, a.cv_rounds, "cv-rounds")?;
    if let Some(list) = f.pick(a.classifiers.clone(), "classifiers")? {
        cfg.eval_classifiers = parse_classifiers(&list, cfg.ga.fitness_knn_k, cfg.seed)?;
    } else {
        for c in &mut cfg.eval_classifiers {
            c.knn_k = cfg.ga.fitness_knn_k;
        }
    }
    Ok(())
}

/// Builds the full configuration in precedence order flag > file > default.
fn pipeline_config(
    prep: &Prepared,
    file: &ConfigFile,
    boost: &BoostArgs,
    ga: &GaArgs,
    eval: &EvalArgs,
    protocol: Option<genesel::Protocol>,
) -> Result<PipelineConfig, Failure> {
    let mut cfg = PipelineConfig::default().seeded(prep.seed);
    cfg.impute_neighbors = prep.impute_neighbors;
    file.apply(&mut cfg.protocol, protocol, "protocol")?;
    apply_boost(&mut cfg, boost, file)?;
    apply_ga(&mut cfg, ga, file)?;
    apply_eval(&mut cfg, eval, file)?;
    cfg.validate()?;
    Ok(cfg)
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>, Failure> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Failure::invalid(e.to_string()))?;
    s.push('\n');
    Ok(s.into_bytes())
}

pub fn synth(a: SynthArgs) -> Result<(), Failure> {
    let spec = SynthSpec {
        n_samples: a.samples,
        n_genes: a.genes,
        n_informative: a.informative,
        n_classes: a.classes,
        noise_sigma: a.sigma,
        missing_fraction: a.missing,
        seed: a.seed,
    };
    let data = generate_synth(&spec)?;
    let mut buf = Vec::new();
    data.dataset
        .write_csv(&mut buf, Some(&data.mask), &a.missing_token)
        .map_err(csv_failure)?;
    write_atomic(&a.out, &buf)?;
    if let Some(path) = &a.truth_out {
        let ids: Vec<&str> = data
            .informative
            .iter()
            .map(|&g| data.dataset.gene_ids()[g].as_str())
            .collect();
        let truth = serde_json::json!({
            "spec": spec,
            "informative": data.informative,
            "informative_ids": ids,
        });
        write_atomic(path, &to_json(&truth)?)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct RankedRow<'a> {
    rank: usize,
    index: usize,
    id: &'a str,
    gain: f64,
    split_count: usize,
}

pub fn rank(a: RankArgs) -> Result<(), Failure> {
    let file = ConfigFile::load(a.data.config.as_deref())?;
    let prep = prepare(&a.data, &file)?;
    let mut cfg = PipelineConfig::default().seeded(prep.seed);
    apply_boost(&mut cfg, &a.boost, &file)?;
    cfg.boost.validate()?;
    let model = genesel::boosting::fit_dataset(&prep.ds, &cfg.boost)?;
    let imp = model.importances();
    let ids = prep.ds.gene_ids();
    let bytes = match a.format {
        RankFormat::Csv => {
            let mut buf = Vec::new();
            imp.write_csv(&mut buf, ids).map_err(csv_failure)?;
            buf
        }
        RankFormat::Json => {
            let genes: Vec<RankedRow> = imp
                .ranking
                .iter()
                .enumerate()
                .map(|(r, &g)| RankedRow {
                    rank: r + 1,
                    index: g,
                    id: &ids[g],
                    gain: imp.total_gain[g],
                    split_count: imp.split_count[g],
                })
                .collect();
            let n_selected = imp.total_gain.iter().filter(|&&g| g > 0.0).count();
            to_json(&serde_json::json!({
                "schema_version": genesel::pipeline::SCHEMA_VERSION,
                "dataset": prep.ds.name(),
                "n_samples": prep.ds.n_samples(),
                "n_genes": prep.ds.n_genes(),
                "n_selected": n_selected,
                "params": cfg.boost,
                "genes": genes,
                "notes": prep.notes,
            }))?
        }
    };
    if imp.total_gain.iter().all(|&g| g <= 0.0) {
        eprintln!("warning: no gene has positive gain; the labels may be independent of the data");
    }
    emit(a.out.as_deref(), &bytes)
}

pub fn select(a: SelectArgs) -> Result<(), Failure> {
    let file = ConfigFile::load(a.data.config.as_deref())?;
    let prep = prepare(&a.data, &file)?;
    let cfg = pipeline_config(&prep, &file, &a.boost, &a.ga, &a.eval, a.protocol)?;
    let run = run_pipeline(&prep.ds, &cfg)?;
    let mut report = run.report;
    report.notes.extend(prep.notes.iter().cloned());
    let markdown = report.to_markdown();
    if !a.record_timings {
        report.runtimes = None;
    }
    let json = report.to_json()?;
    emit(a.out.as_deref(), json.as_bytes())?;
    if let Some(path) = &a.trace_out {
        let mut buf = Vec::new();
        run.trace.write_csv(&mut buf).map_err(csv_failure)?;
        write_atomic(path, &buf)?;
    }
    match (&a.markdown_out, &a.out) {
        (Some(path), _) => write_atomic(path, markdown.as_bytes())?,
        (None, Some(_)) => print!("{markdown}"),
        (None, None) => {}
    }
    Ok(())
}

/// Reads a gene subset as indices or ids, or takes the final genes of a report.
fn read_subset(path: &Path, ds: &Dataset) -> Result<Vec<usize>, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::io(format!("cannot read {}: {e}", path.display())))?;
    let mut genes: Vec<usize> = if text.trim_start().starts_with('{') {
        let report = PipelineReport::from_json(&text)?;
        if report.n_genes != ds.n_genes() {
            return Err(Failure::invalid(format!(
                "report was made on {} genes, dataset has {}",
                report.n_genes,
                ds.n_genes()
            )));
        }
        report.final_indices()
    } else {
        let by_id: BTreeMap<&str, usize> = ds.gene_ids().iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        text.split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| {
                by_id
                    .get(t)
                    .copied()
                    .or_else(|| t.parse::<usize>().ok().filter(|&i| i < ds.n_genes()))
                    .ok_or_else(|| Failure::invalid(format!("`{t}` is neither a gene id nor a valid index")))
            })
            .collect::<Result<_, _>>()?
    };
    genes.sort_unstable();
    genes.dedup();
    if genes.is_empty() {
        return Err(Failure::invalid(format!("{} lists no genes", path.display())));
    }
    Ok(genes)
}

fn metrics_table(rows: &[(ClassifierKind, &CvSummary)]) -> String {
    let mut out = String::from("| Classifier | Accuracy | Precision | Recall | F-score |\n|---|---|---|---|---|\n");
    for (kind, s) in rows {
        let _ = writeln!(
            out,
            "| {kind} | {} | {} | {} | {} |",
            s.accuracy.percent(),
            s.precision.percent(),
            s.recall.percent(),
            s.f_score.percent()
        );
    }
    out
}

pub fn evaluate(a: EvaluateArgs) -> Result<(), Failure> {
    let file = ConfigFile::load(a.data.config.as_deref())?;
    let prep = prepare(&a.data, &file)?;
    let cfg = pipeline_config(&prep, &file, &BoostArgs::default(), &GaArgs::default(), &a.eval, None)?;
    let genes = read_subset(&a.genes, &prep.ds)?;
    let plan = make_folds(prep.ds.labels(), cfg.cv_k, cfg.cv_rounds, cfg.seed)?;
    let mut evaluation = Vec::new();
    for spec in &cfg.eval_classifiers {
        evaluation.push((spec.kind, cross_validate(&genes, &prep.ds, spec, &plan)?));
    }
    let ids: Vec<&str> = genes.iter().map(|&g| prep.ds.gene_ids()[g].as_str()).collect();
    let json = serde_json::json!({
        "schema_version": genesel::pipeline::SCHEMA_VERSION,
        "dataset": prep.ds.name(),
        "genes": genes,
        "gene_ids": ids,
        "cv_k": cfg.cv_k,
        "cv_rounds": cfg.cv_rounds,
        "seed": cfg.seed,
        "evaluation": evaluation.iter().map(|(k, s)| serde_json::json!({"classifier": k, "summary": s})).collect::<Vec<_>>(),
        "notes": prep.notes,
    });
    emit(a.out.as_deref(), &to_json(&json)?)?;
    if a.out.is_some() {
        let rows: Vec<(ClassifierKind, &CvSummary)> = evaluation.iter().map(|(k, s)| (*k, s)).collect();
        print!("{}", metrics_table(&rows));
    }
    Ok(())
}

fn load_report_dir(dir: &Path) -> Result<BTreeMap<String, PipelineReport>, Failure> {
    let entries = std::fs::read_dir(dir).map_err(|e| Failure::io(format!("cannot read {}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut reports = BTreeMap::new();
    for p in paths {
        let text = std::fs::read_to_string(&p).map_err(|e| Failure::io(format!("cannot read {}: {e}", p.display())))?;
        let r = PipelineReport::from_json(&text).map_err(|e| Failure::invalid(format!("{}: {e}", p.display())))?;
        if let Some(prev) = reports.insert(r.dataset.clone(), r) {
            return Err(Failure::invalid(format!(
                "{} holds two reports for dataset `{}`",
                dir.display(),
                prev.dataset
            )));
        }
    }
    Ok(reports)
}

#[derive(Serialize)]
struct Comparison {
    classifier: ClassifierKind,
    datasets: Vec<String>,
    mean_accuracy_a: f64,
    mean_accuracy_b: f64,
    result: WilcoxonResult,
}

pub fn compare(a: CompareArgs) -> Result<(), Failure> {
    let ra = load_report_dir(&a.a)?;
    let rb = load_report_dir(&a.b)?;
    if !ra.keys().eq(rb.keys()) {
        let only_a: Vec<&String> = ra.keys().filter(|k| !rb.contains_key(*k)).collect();
        let only_b: Vec<&String> = rb.keys().filter(|k| !ra.contains_key(*k)).collect();
        return Err(Failure::invalid(format!(
            "report directories cover different datasets (only in a: {only_a:?}; only in b: {only_b:?})"
        )));
    }
    let opts = WilcoxonOptions {
        zero_policy: a.zero_policy.into(),
        alpha: a.alpha,
        ..Default::default()
    };
    let datasets: Vec<String> = ra.keys().cloned().collect();
    let first = ra.values().next().ok_or_else(|| Failure::invalid(format!("no reports in {}", a.a.display())))?;

    let mut results = Vec::new();
    for e in &first.evaluation {
        let kind = e.classifier;
        let pick = |m: &BTreeMap<String, PipelineReport>| -> Option<Vec<CvSummary>> {
            m.values().map(|r| r.summary_for(kind).cloned()).collect()
        };
        let (Some(sa), Some(sb)) = (pick(&ra), pick(&rb)) else {
            continue;
        };
        let result = compare_reports(&sa, &sb, &opts)?;
        let mean = |v: &[CvSummary]| v.iter().map(|s| s.accuracy.mean).sum::<f64>() / v.len() as f64;
        results.push(Comparison {
            classifier: kind,
            datasets: datasets.clone(),
            mean_accuracy_a: mean(&sa),
            mean_accuracy_b: mean(&sb),
            result,
        });
    }
    if results.is_empty() {
        return Err(Failure::invalid("no classifier was evaluated in every report"));
    }

    let mut table = String::from(
        "| Classifier | Datasets | Mean acc. A | Mean acc. B | W+ | W- | p-value | Method | Verdict |\n\
         |---|---:|---:|---:|---:|---:|---:|---|---|\n",
    );
    for c in &results {
        let r = &c.result;
        let verdict = if r.degenerate {
            "no difference"
        } else if r.significant {
            "significant"
        } else {
            "not significant"
        };
        let method = match r.method {
            genesel::WilcoxonMethod::Exact => "exact",
            genesel::WilcoxonMethod::NormalApprox => "normal",
        };
        let _ = writeln!(
            table,
            "| {} | {} | {:.2} | {:.2} | {} | {} | {:.6} | {method} | {verdict} |",
            c.classifier,
            c.datasets.len(),
            100.0 * c.mean_accuracy_a,
            100.0 * c.mean_accuracy_b,
            r.w_plus,
            r.w_minus,
            r.p_value
        );
    }
    print!("{table}");
    if let Some(path) = &a.out {
        write_atomic(path, &to_json(&results)?)?;
    }
    Ok(())
}

pub fn trace(a: TraceArgs) -> Result<(), Failure> {
    let file = ConfigFile::load(a.data.config.as_deref())?;
    let prep = prepare(&a.data, &file)?;
    let eval = EvalArgs {
        knn_k: a.knn_k,
        ..Default::default()
    };
    let cfg = pipeline_config(&prep, &file, &a.boost, &a.ga, &eval, None)?;
    let (_, stage1) = stage_one(&prep.ds, &cfg.boost)?;
    let two = stage_two(&prep.ds, &stage1, &cfg.ga)?;
    let mut buf = Vec::new();
    two.trace.write_csv(&mut buf).map_err(csv_failure)?;
    emit(a.out.as_deref(), &buf)
}

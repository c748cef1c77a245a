//! Genetic wrapper search over binary gene masks.
//!
//! A chromosome's fitness is the cross-validated KNN accuracy of the data
//! restricted to its set bits. Smaller masks win ties everywhere an ordering
//! is needed (tournaments, elitism, the returned best), which is how the
//! second objective, few genes, enters the search.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::io::Write;

use ndarray::Array2;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifiers::vote;
use crate::dataset::{make_folds_in_stream, Dataset};
use crate::error::{Error, Result};
use crate::rng::{self, streams, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaConfig {
    pub population_size: usize,
    /// Number of generations after the initial population.
    pub iterations: usize,
    pub crossover_prob: f64,
    pub mutation_prob: f64,
    pub tournament_size: usize,
    pub elitism_count: usize,
    pub fitness_knn_k: usize,
    pub fitness_folds: usize,
    /// Independent runs; the best result over all of them is kept.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            population_size: 100,
            iterations: 50,
            crossover_prob: 0.8,
            mutation_prob: 0.01,
            tournament_size: 2,
            elitism_count: 1,
            fitness_knn_k: 5,
            fitness_folds: 5,
            restarts: 1,
            seed: 0,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.population_size < 2 {
            return bad("population_size must be >= 2");
        }
        if !(0.0..=1.0).contains(&self.crossover_prob) {
            return bad("crossover_prob must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.mutation_prob) {
            return bad("mutation_prob must lie in [0, 1]");
        }
        if self.tournament_size == 0 || self.tournament_size > self.population_size {
            return bad("tournament_size must lie in [1, population_size]");
        }
        if self.elitism_count >= self.population_size {
            return bad("elitism_count must be < population_size");
        }
        if self.fitness_knn_k == 0 {
            return bad("fitness_knn_k must be >= 1");
        }
        if self.fitness_folds < 2 {
            return bad("fitness_folds must be >= 2");
        }
        if self.restarts == 0 {
            return bad("restarts must be >= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chromosome {
    bits: Vec<bool>,
    #[serde(skip)]
    cached_fitness: Option<f64>,
}

impl Chromosome {
    pub fn new(bits: Vec<bool>) -> Self {
        Chromosome {
            bits,
            cached_fitness: None,
        }
    }

    pub fn from_indices(len: usize, set: &[usize]) -> Self {
        let mut bits = vec![false; len];
        for &i in set {
            bits[i] = true;
        }
        Self::new(bits)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn n_selected(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn selected(&self) -> Vec<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn fitness(&self) -> Option<f64> {
        self.cached_fitness
    }

    fn invalidate(&mut self) {
        self.cached_fitness = None;
    }

    /// Sets one uniformly chosen bit if none is set.
    fn repair(&mut self, rng: &mut Rng) {
        if !self.bits.is_empty() && !self.bits.contains(&true) {
            let i = rng.random_range(0..self.bits.len());
            self.bits[i] = true;
        }
    }

    fn fitness_or_min(&self) -> f64 {
        self.cached_fitness.unwrap_or(f64::NEG_INFINITY)
    }
}

/// Preference order: higher fitness, then fewer genes, then the
/// lexicographically smaller list of selected indices. `Less` means better.
pub fn preference(a: &Chromosome, b: &Chromosome) -> Ordering {
    b.fitness_or_min()
        .total_cmp(&a.fitness_or_min())
        .then(a.n_selected().cmp(&b.n_selected()))
        .then_with(|| a.selected().cmp(&b.selected()))
}

/// Ranking inside one population: fitness, size, then position.
fn rank_in_population(pop: &[Chromosome], a: usize, b: usize) -> Ordering {
    pop[b]
        .fitness_or_min()
        .total_cmp(&pop[a].fitness_or_min())
        .then(pop[a].n_selected().cmp(&pop[b].n_selected()))
        .then(a.cmp(&b))
}

pub fn init_population(n_prime: usize, cfg: &GaConfig, rng: &mut Rng) -> Vec<Chromosome> {
    (0..cfg.population_size)
        .map(|_| {
            let mut c = Chromosome::new((0..n_prime).map(|_| rng.random_bool(0.5)).collect());
            c.repair(rng);
            c
        })
        .collect()
}

/// Cross-validated KNN accuracy of gene masks over a fixed dataset, memoized
/// by mask.
pub struct FitnessEvaluator {
    x: Array2<f64>,
    labels: Vec<usize>,
    n_classes: usize,
    folds: Vec<(Vec<usize>, Vec<usize>)>,
    k: usize,
    cache: HashMap<Vec<bool>, f64>,
}

impl FitnessEvaluator {
    /// Internal folds come from `cfg.seed` on a stream of their own. With
    /// fewer samples than `fitness_folds` this is leave-one-out.
    pub fn new(ds: &Dataset, cfg: &GaConfig) -> Result<Self> {
        let m = ds.n_samples();
        if m < 2 {
            return Err(Error::validation("fitness needs at least 2 samples"));
        }
        let k_folds = cfg.fitness_folds.min(m);
        let plan = make_folds_in_stream(ds.labels(), k_folds, 1, cfg.seed, streams::GA_FITNESS_FOLDS)?;
        let folds = plan
            .splits()
            .into_iter()
            .map(|s| (s.train, s.test.to_vec()))
            .collect();
        Ok(FitnessEvaluator {
            x: ds.values().as_standard_layout().into_owned(),
            labels: ds.labels().to_vec(),
            n_classes: ds.n_classes(),
            folds,
            k: cfg.fitness_knn_k,
            cache: HashMap::new(),
        })
    }

    pub fn n_genes(&self) -> usize {
        self.x.ncols()
    }

    /// Mean fold accuracy of KNN on the genes set in `bits`.
    pub fn score(&self, bits: &[bool]) -> f64 {
        let genes: Vec<usize> = bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| i)
            .collect();
        let data = self.x.as_slice().expect("standard layout");
        let n = self.x.ncols();
        let row = |i: usize| &data[i * n..(i + 1) * n];

        let mut total = 0.0;
        let mut dist: Vec<(f64, usize)> = Vec::new();
        for (train, test) in &self.folds {
            let k = self.k.min(train.len());
            let mut correct = 0usize;
            for &q in test {
                let qr = row(q);
                dist.clear();
                dist.extend(train.iter().map(|&t| {
                    let tr = row(t);
                    let d: f64 = genes.iter().map(|&g| (qr[g] - tr[g]) * (qr[g] - tr[g])).sum();
                    (d, t)
                }));
                let by = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
                if k < dist.len() {
                    dist.select_nth_unstable_by(k - 1, by);
                    dist.truncate(k);
                }
                dist.sort_unstable_by(by);
                let predicted = vote(dist.iter().map(|&(_, t)| self.labels[t]), self.n_classes);
                if predicted == self.labels[q] {
                    correct += 1;
                }
            }
            total += correct as f64 / test.len() as f64;
        }
        total / self.folds.len() as f64
    }

    /// Fills the fitness of every chromosome, scoring unseen masks in parallel.
    pub fn evaluate(&mut self, pop: &mut [Chromosome]) {
        let mut pending: Vec<Vec<bool>> = pop
            .iter()
            .filter(|c| c.cached_fitness.is_none() && !self.cache.contains_key(&c.bits))
            .map(|c| c.bits.clone())
            .collect();
        pending.sort();
        pending.dedup();
        let scores: Vec<f64> = pending.par_iter().map(|b| self.score(b)).collect();
        self.cache.extend(pending.into_iter().zip(scores));
        for c in pop.iter_mut() {
            if c.cached_fitness.is_none() {
                c.cached_fitness = Some(self.cache[&c.bits]);
            }
        }
    }

    pub fn evaluations(&self) -> usize {
        self.cache.len()
    }
}

/// Scores one chromosome against `ds` and caches the value on it.
pub fn fitness(chrom: &mut Chromosome, ds: &Dataset, cfg: &GaConfig) -> Result<f64> {
    if let Some(f) = chrom.cached_fitness {
        return Ok(f);
    }
    if chrom.len() != ds.n_genes() {
        return Err(Error::validation(format!(
            "chromosome length {} does not match {} genes",
            chrom.len(),
            ds.n_genes()
        )));
    }
    if chrom.n_selected() == 0 {
        return Err(Error::validation("chromosome selects no genes"));
    }
    let eval = FitnessEvaluator::new(ds, cfg)?;
    let f = eval.score(&chrom.bits);
    chrom.cached_fitness = Some(f);
    Ok(f)
}

/// Best of `tournament_size` individuals drawn with replacement.
pub fn tournament_select(pop: &[Chromosome], cfg: &GaConfig, rng: &mut Rng) -> Chromosome {
    assert!(!pop.is_empty(), "tournament on empty population");
    let mut best = rng.random_range(0..pop.len());
    for _ in 1..cfg.tournament_size {
        let i = rng.random_range(0..pop.len());
        if rank_in_population(pop, i, best) == Ordering::Less {
            best = i;
        }
    }
    pop[best].clone()
}

/// With probability `crossover_prob`, swaps each locus with probability ½.
pub fn uniform_crossover(
    a: &Chromosome,
    b: &Chromosome,
    cfg: &GaConfig,
    rng: &mut Rng,
) -> (Chromosome, Chromosome) {
    assert_eq!(a.len(), b.len(), "crossover of unequal chromosomes");
    let mut c1 = a.clone();
    let mut c2 = b.clone();
    if rng.random_bool(cfg.crossover_prob) {
        for i in 0..a.len() {
            if rng.random_bool(0.5) {
                std::mem::swap(&mut c1.bits[i], &mut c2.bits[i]);
            }
        }
    }
    c1.repair(rng);
    c2.repair(rng);
    c1.invalidate();
    c2.invalidate();
    (c1, c2)
}

/// Flips each bit independently with probability `mutation_prob`.
pub fn mutate(c: &Chromosome, cfg: &GaConfig, rng: &mut Rng) -> Chromosome {
    let mut out = c.clone();
    for b in out.bits.iter_mut() {
        if rng.random_bool(cfg.mutation_prob) {
            *b = !*b;
        }
    }
    out.repair(rng);
    out.invalidate();
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: usize,
    pub best_fitness: f64,
    pub mean_fitness: f64,
    pub best_size: usize,
}

/// Per-generation statistics of the winning run; generation 0 is the
/// initial population.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GaTrace {
    pub generations: Vec<GenerationStats>,
}

impl GaTrace {
    fn record(&mut self, generation: usize, pop: &[Chromosome]) {
        let best = (0..pop.len())
            .min_by(|&a, &b| rank_in_population(pop, a, b))
            .expect("nonempty population");
        let mean = pop.iter().map(Chromosome::fitness_or_min).sum::<f64>() / pop.len() as f64;
        self.generations.push(GenerationStats {
            generation,
            best_fitness: pop[best].fitness_or_min(),
            mean_fitness: mean,
            best_size: pop[best].n_selected(),
        });
    }

    pub fn write_csv<W: Write>(&self, out: W) -> std::result::Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["generation", "best_fitness", "mean_fitness", "best_size"])?;
        for g in &self.generations {
            w.write_record([
                g.generation.to_string(),
                g.best_fitness.to_string(),
                g.mean_fitness.to_string(),
                g.best_size.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs the generational loop on the stage-one dataset and returns the best
/// chromosome ever evaluated.
pub fn evolve(ds: &Dataset, cfg: &GaConfig) -> Result<(Chromosome, GaTrace)> {
    cfg.validate()?;
    let mut evaluator = FitnessEvaluator::new(ds, cfg)?;
    let n_prime = ds.n_genes();
    let mut winner: Option<(Chromosome, GaTrace)> = None;

    for restart in 0..cfg.restarts {
        let mut rng = rng::stream(cfg.seed, streams::GA + restart as u64);
        let mut pop = init_population(n_prime, cfg, &mut rng);
        evaluator.evaluate(&mut pop);
        let mut trace = GaTrace::default();
        trace.record(0, &pop);
        let mut best = best_of(&pop).clone();

        for generation in 1..=cfg.iterations {
            let mut order: Vec<usize> = (0..pop.len()).collect();
            order.sort_by(|&a, &b| rank_in_population(&pop, a, b));
            let mut next: Vec<Chromosome> = order[..cfg.elitism_count]
                .iter()
                .map(|&i| pop[i].clone())
                .collect();
            while next.len() < cfg.population_size {
                let a = tournament_select(&pop, cfg, &mut rng);
                let b = tournament_select(&pop, cfg, &mut rng);
                let (c1, c2) = uniform_crossover(&a, &b, cfg, &mut rng);
                next.push(mutate(&c1, cfg, &mut rng));
                if next.len() < cfg.population_size {
                    next.push(mutate(&c2, cfg, &mut rng));
                }
            }
            pop = next;
            evaluator.evaluate(&mut pop);
            trace.record(generation, &pop);
            let gen_best = best_of(&pop);
            if preference(gen_best, &best) == Ordering::Less {
                best = gen_best.clone();
            }
        }

        let replace = match &winner {
            None => true,
            Some((w, _)) => preference(&best, w) == Ordering::Less,
        };
        if replace {
            winner = Some((best, trace));
        }
    }
    Ok(winner.expect("at least one restart"))
}

fn best_of(pop: &[Chromosome]) -> &Chromosome {
    pop.iter()
        .min_by(|a, b| preference(a, b))
        .expect("nonempty population")
}

/// Maps the set bits back to original gene indices.
pub fn decode(best: &Chromosome, stage1_genes: &[usize]) -> Result<Vec<usize>> {
    if best.len() != stage1_genes.len() {
        return Err(Error::validation(format!(
            "chromosome length {} vs {} stage-one genes",
            best.len(),
            stage1_genes.len()
        )));
    }
    Ok(best.selected().into_iter().map(|i| stage1_genes[i]).collect())
}

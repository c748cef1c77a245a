//! Synthetic expression data with a known set of informative genes.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, MissingMask};
use crate::error::{Error, Result};
use crate::rng::{self, streams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_samples: usize,
    pub n_genes: usize,
    pub n_informative: usize,
    pub n_classes: usize,
    pub noise_sigma: f64,
    pub missing_fraction: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_samples: 60,
            n_genes: 500,
            n_informative: 10,
            n_classes: 2,
            noise_sigma: 0.5,
            missing_fraction: 0.0,
            seed: 42,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.n_classes));
        }
        if self.n_samples < self.n_classes {
            return bad("fewer samples than classes".into());
        }
        if self.n_genes == 0 || self.n_informative > self.n_genes {
            return bad(format!(
                "n_informative ({}) must not exceed n_genes ({})",
                self.n_informative, self.n_genes
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be >= 0".into());
        }
        if !(0.0..1.0).contains(&self.missing_fraction) {
            return bad("missing_fraction must lie in [0, 1)".into());
        }
        Ok(())
    }

    /// Distance between consecutive class means on an informative gene.
    pub fn class_step(&self) -> f64 {
        (2.0 * self.noise_sigma).max(1.0)
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    /// Masked cells are zero-filled, as after loading.
    pub dataset: Dataset,
    pub mask: MissingMask,
    /// Ground-truth informative genes, ascending.
    pub informative: Vec<usize>,
}

/// Balanced classes; informative genes shift their mean by
/// [`SynthSpec::class_step`] per class index (with a random sign per gene);
/// every gene gets a random baseline plus Gaussian noise.
pub fn generate_synth(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let (m, n, c) = (spec.n_samples, spec.n_genes, spec.n_classes);
    let mut rng = rng::stream(spec.seed, streams::SYNTH);

    let mut labels: Vec<usize> = (0..m).map(|i| i % c).collect();
    labels.shuffle(&mut rng);

    let mut informative = rand::seq::index::sample(&mut rng, n, spec.n_informative).into_vec();
    informative.sort_unstable();
    let mut shift = vec![0.0; n];
    for &g in &informative {
        shift[g] = if rng.random_bool(0.5) { 1.0 } else { -1.0 } * spec.class_step();
    }
    let baseline: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..5.0)).collect();
    let noise = Normal::new(0.0, spec.noise_sigma).expect("sigma validated");

    let mut values = Array2::zeros((m, n));
    for i in 0..m {
        for j in 0..n {
            values[[i, j]] = baseline[j] + shift[j] * labels[i] as f64 + noise.sample(&mut rng);
        }
    }

    let n_missing = (spec.missing_fraction * (m * n) as f64).round() as usize;
    let mask: MissingMask = rand::seq::index::sample(&mut rng, m * n, n_missing)
        .into_iter()
        .map(|cell| (cell / n, cell % n))
        .collect();
    for (i, j) in mask.iter() {
        values[[i, j]] = 0.0;
    }

    let width = (n.max(2) - 1).to_string().len();
    let gene_ids = (0..n).map(|j| format!("g{j:0width$}")).collect();
    let class_names = (0..c).map(|k| format!("class{k}")).collect();
    let dataset = Dataset::new("synth", values, labels, gene_ids, class_names)?;
    Ok(SynthData {
        dataset,
        mask,
        informative,
    })
}

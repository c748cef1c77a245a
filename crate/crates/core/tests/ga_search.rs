mod support;

use genesel::ga::{self, evolve, mutate, uniform_crossover};
use genesel::rng;
use genesel::{Chromosome, GaConfig};
use rand::Rng as _;
use support::oracles;

fn toy_config(seed: u64) -> GaConfig {
    GaConfig {
        population_size: 20,
        iterations: 30,
        seed,
        ..Default::default()
    }
}

#[test]
fn toy_has_a_unique_optimum() {
    let ds = oracles::xor_toy(3);
    let ranked = oracles::enumerate_subsets(&ds, &toy_config(0));
    assert_eq!(ranked.len(), 63);
    assert_eq!(ranked[0].0, vec![1, 4]);
    let (top, second) = (&ranked[0], &ranked[1]);
    assert!(top.1 > second.1 || top.0.len() < second.0.len());
    // Neither informative gene is enough alone.
    for (set, f) in &ranked {
        if set.len() == 1 {
            assert!(*f < 0.8, "{set:?} scored {f}");
        }
    }
}

#[test]
fn evolve_finds_the_enumerated_optimum() {
    let ds = oracles::xor_toy(3);
    let optimum = oracles::enumerate_subsets(&ds, &toy_config(0))[0].0.clone();
    let mut hits = 0;
    for seed in 0..10 {
        let (best, trace) = evolve(&ds, &toy_config(seed)).unwrap();
        if best.selected() == optimum {
            hits += 1;
        }
        let bests: Vec<f64> = trace.generations.iter().map(|g| g.best_fitness).collect();
        assert!(bests.windows(2).all(|w| w[1] >= w[0]), "seed {seed}: {bests:?}");
        assert_eq!(trace.generations.len(), 31);
    }
    assert!(hits >= 9, "optimum found in {hits}/10 runs");
}

#[test]
fn evolve_is_reproducible() {
    let ds = oracles::xor_toy(8);
    let a = evolve(&ds, &toy_config(4)).unwrap();
    let b = evolve(&ds, &toy_config(4)).unwrap();
    assert_eq!(a.0.bits(), b.0.bits());
    assert_eq!(a.1, b.1);
}

fn random_chromosome(r: &mut rng::Rng, n: usize) -> Chromosome {
    let mut bits: Vec<bool> = (0..n).map(|_| r.random_bool(0.4)).collect();
    if !bits.contains(&true) {
        bits[r.random_range(0..n)] = true;
    }
    Chromosome::new(bits)
}

#[test]
fn crossover_conserves_each_locus() {
    let mut r = rng::seeded(17);
    let cfg = GaConfig { crossover_prob: 0.8, ..Default::default() };
    for _ in 0..10_000 {
        let n = r.random_range(1..40);
        let a = random_chromosome(&mut r, n);
        let b = random_chromosome(&mut r, n);
        let (c1, c2) = uniform_crossover(&a, &b, &cfg, &mut r);
        assert!(c1.n_selected() > 0 && c2.n_selected() > 0);
        let repaired = a.n_selected() + b.n_selected() != c1.n_selected() + c2.n_selected();
        for i in 0..n {
            let parents = (a.bits()[i] as u8) + (b.bits()[i] as u8);
            let children = (c1.bits()[i] as u8) + (c2.bits()[i] as u8);
            // Only the single bit set by repairing an empty child may differ.
            if !repaired {
                assert_eq!(parents, children);
            } else {
                assert!(children == parents || children == parents + 1);
            }
        }
        if repaired {
            assert!(c1.n_selected() == 1 || c2.n_selected() == 1);
        }
    }
}

#[test]
fn mutation_extremes_are_deterministic() {
    let mut r = rng::seeded(23);
    let never = GaConfig { mutation_prob: 0.0, ..Default::default() };
    let always = GaConfig { mutation_prob: 1.0, ..Default::default() };
    for _ in 0..10_000 {
        let n = r.random_range(1..40);
        let c = random_chromosome(&mut r, n);
        assert_eq!(mutate(&c, &never, &mut r).bits(), c.bits());
        let flipped = mutate(&c, &always, &mut r);
        if c.n_selected() < n {
            let expected: Vec<bool> = c.bits().iter().map(|b| !b).collect();
            assert_eq!(flipped.bits(), &expected[..]);
        } else {
            // The complement is empty, so exactly one bit comes back.
            assert_eq!(flipped.n_selected(), 1);
        }
    }
}

#[test]
fn operators_never_produce_an_empty_mask() {
    let mut r = rng::seeded(29);
    let cfg = GaConfig { mutation_prob: 0.5, crossover_prob: 1.0, ..Default::default() };
    for _ in 0..10_000 {
        let n = r.random_range(1..6);
        let a = random_chromosome(&mut r, n);
        let b = random_chromosome(&mut r, n);
        let (c1, c2) = uniform_crossover(&a, &b, &cfg, &mut r);
        assert!(c1.n_selected() > 0 && c2.n_selected() > 0);
        assert!(mutate(&c1, &cfg, &mut r).n_selected() > 0);
        assert!(mutate(&c2, &cfg, &mut r).n_selected() > 0);
    }
    let pop = ga::init_population(3, &GaConfig { population_size: 500, ..Default::default() }, &mut r);
    assert!(pop.iter().all(|c| c.n_selected() > 0));
}

#[test]
fn decode_maps_back_to_stage_one_indices() {
    let c = Chromosome::from_indices(4, &[0, 3]);
    assert_eq!(ga::decode(&c, &[2, 7, 11, 40]).unwrap(), vec![2, 40]);
    assert!(ga::decode(&c, &[1, 2]).is_err());
}

//! Test-set selection: a genetic algorithm over candidate subsets under a
//! cardinality window.
//!
//! The search works on a precomputed failure matrix (candidate x system
//! misclassification bits), so fitness evaluation is pure bit counting and
//! never touches an encoder. Selected subsets are scored by how well their
//! per-system failure rates track a reference robustness vector, plus
//! potency/spread regularization; lower is better.
//!
//! GA shape: tournament selection (size 3), uniform crossover, binomial
//! bit-flip mutation, cardinality repair to the window, two elites. All
//! randomness comes from one sequential stream, so runs are reproducible
//! bit-for-bit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generate::Pool;
use crate::numerics::{pearson, RngStream};
use crate::siamese::{Meter, SiameseSystem};

fn word_count(bits: usize) -> usize {
    bits.div_ceil(64)
}

fn get_bit(mask: &[u64], i: usize) -> bool {
    mask[i / 64] >> (i % 64) & 1 == 1
}

fn set_bit(mask: &mut [u64], i: usize) {
    mask[i / 64] |= 1 << (i % 64);
}

fn clear_bit(mask: &mut [u64], i: usize) {
    mask[i / 64] &= !(1 << (i % 64));
}

fn flip_bit(mask: &mut [u64], i: usize) {
    mask[i / 64] ^= 1 << (i % 64);
}

fn popcount(mask: &[u64]) -> usize {
    mask.iter().map(|w| w.count_ones() as usize).sum()
}

fn ones(mask: &[u64], n: usize) -> Vec<usize> {
    (0..n).filter(|&i| get_bit(mask, i)).collect()
}

/// Misclassification bits for every (candidate, system) combination.
#[derive(Clone, Debug)]
pub struct FailureMatrix {
    pub candidates: usize,
    pub systems: Vec<String>,
    /// One candidate-indexed bitset per system.
    bits: Vec<Vec<u64>>,
}

impl FailureMatrix {
    /// Evaluates the whole pool against each system: forward passes only.
    pub fn build(
        pool: &Pool,
        systems: &[&SiameseSystem],
        pairs: &crate::dataset::PairSet,
        meter: &Meter,
    ) -> Result<Self> {
        if systems.is_empty() {
            return Err(Error::Domain("failure matrix needs systems".into()));
        }
        if pool.pair_count != pairs.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} pairs", pool.pair_count),
                actual: format!("{}", pairs.len()),
            });
        }
        use rayon::prelude::*;
        let bits: Result<Vec<Vec<u64>>> = systems
            .par_iter()
            .map(|sys| {
                let mut row = vec![0u64; word_count(pool.candidates.len())];
                // Candidates arrive grouped by pair, so one embedding cache
                // entry suffices. The meter still counts one forward per
                // comparison.
                let mut cached: Option<(usize, Vec<f64>)> = None;
                for (ci, c) in pool.candidates.iter().enumerate() {
                    let z_beta = match &cached {
                        Some((p, z)) if *p == c.pair => z.clone(),
                        _ => {
                            let z = sys.encode(pairs.beta(c.pair))?;
                            cached = Some((c.pair, z.clone()));
                            z
                        }
                    };
                    let img = pool.scheme.apply(pairs.alpha(c.pair), &c.params)?;
                    if sys.predict_vs_embedding(&img, &z_beta, meter)? != c.label {
                        set_bit(&mut row, ci);
                    }
                }
                Ok(row)
            })
            .collect();
        Ok(Self {
            candidates: pool.candidates.len(),
            systems: systems.iter().map(|s| s.id.clone()).collect(),
            bits: bits?,
        })
    }

    /// Direct construction from explicit bits, rows indexed by candidate.
    pub fn from_bools(rows: &[Vec<bool>], systems: Vec<String>) -> Result<Self> {
        if rows.is_empty() || rows.iter().any(|r| r.len() != systems.len()) {
            return Err(Error::ShapeMismatch {
                expected: format!("{} columns per row", systems.len()),
                actual: "ragged or empty rows".into(),
            });
        }
        let mut bits = vec![vec![0u64; word_count(rows.len())]; systems.len()];
        for (ci, row) in rows.iter().enumerate() {
            for (si, &b) in row.iter().enumerate() {
                if b {
                    set_bit(&mut bits[si], ci);
                }
            }
        }
        Ok(Self {
            candidates: rows.len(),
            systems,
            bits,
        })
    }

    pub fn misclassified(&self, system: usize, candidate: usize) -> bool {
        get_bit(&self.bits[system], candidate)
    }

    /// Misclassified candidates within the selection mask, per system.
    pub fn selected_counts(&self, mask: &[u64]) -> Vec<u64> {
        self.bits
            .iter()
            .map(|row| {
                row.iter()
                    .zip(mask)
                    .map(|(a, b)| (a & b).count_ones() as u64)
                    .sum()
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Correlate normalized failure rates with the reference and reward
    /// potent, spread-out rates: J = rho - l1 * (mean + l2 * std).
    NormalizedRates,
    /// Correlate raw failure counts with the reference:
    /// J = rho + l1 * (mean - l2 * std).
    RawCounts,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GaConfig {
    pub population: usize,
    pub generations: usize,
    pub crossover_rate: f64,
    /// Per-bit flip probability; None means 1/dimension.
    pub mutation_rate: Option<f64>,
    pub elitism: usize,
    pub tournament: usize,
    pub k_min_frac: f64,
    pub k_max_frac: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub objective: Objective,
    pub seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population: 64,
            generations: 1000,
            crossover_rate: 0.9,
            mutation_rate: None,
            elitism: 2,
            tournament: 3,
            k_min_frac: 0.02,
            k_max_frac: 0.05,
            lambda1: 0.5,
            lambda2: 0.5,
            objective: Objective::NormalizedRates,
            seed: 0,
        }
    }
}

impl GaConfig {
    fn validate(&self) -> Result<()> {
        if self.population < 4 || self.generations == 0 {
            return Err(Error::Config("ga needs population >= 4, generations >= 1".into()));
        }
        if self.elitism >= self.population || self.tournament == 0 {
            return Err(Error::Config("ga elitism/tournament out of range".into()));
        }
        if !(0.0..=1.0).contains(&self.crossover_rate) {
            return Err(Error::Config("ga crossover rate outside [0, 1]".into()));
        }
        if !(self.k_min_frac > 0.0 && self.k_max_frac >= self.k_min_frac && self.k_max_frac < 1.0)
        {
            return Err(Error::Config("ga cardinality window malformed".into()));
        }
        Ok(())
    }

    /// Cardinality window in absolute counts; at least 2 members.
    pub fn window(&self, dim: usize) -> Result<(usize, usize)> {
        let k_min = ((dim as f64 * self.k_min_frac).ceil() as usize).max(2);
        let k_max = (dim as f64 * self.k_max_frac).floor() as usize;
        if k_max < k_min || k_max > dim {
            return Err(Error::Infeasible(format!(
                "cardinality window [{k_min}, {k_max}] infeasible for pool size {dim}"
            )));
        }
        Ok((k_min, k_max))
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Subset objective; lower is better. Degenerate correlations (constant
/// rates or constant reference) poison the individual with +infinity
/// instead of failing the run.
pub fn fitness(matrix: &FailureMatrix, r_ref: &[f64], mask: &[u64], cfg: &GaConfig) -> f64 {
    let counts = matrix.selected_counts(mask);
    let k = popcount(mask) as f64;
    match cfg.objective {
        Objective::NormalizedRates => {
            let rates: Vec<f64> = counts.iter().map(|&c| c as f64 / k).collect();
            match pearson(&rates, r_ref) {
                Ok(rho) => {
                    let (mean, std) = mean_std(&rates);
                    rho - cfg.lambda1 * (mean + cfg.lambda2 * std)
                }
                Err(_) => f64::INFINITY,
            }
        }
        Objective::RawCounts => {
            let counts: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
            match pearson(&counts, r_ref) {
                Ok(rho) => {
                    let (mean, std) = mean_std(&counts);
                    rho + cfg.lambda1 * (mean - cfg.lambda2 * std)
                }
                Err(_) => f64::INFINITY,
            }
        }
    }
}

fn repair(mask: &mut [u64], dim: usize, k_min: usize, k_max: usize, rng: &mut RngStream) {
    let mut k = popcount(mask);
    if k > k_max {
        let mut set = ones(mask, dim);
        while k > k_max {
            let pick = rng.below(set.len());
            clear_bit(mask, set.swap_remove(pick));
            k -= 1;
        }
    }
    while k < k_min {
        let i = rng.below(dim);
        if !get_bit(mask, i) {
            set_bit(mask, i);
            k += 1;
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Selection {
    pub selected: Vec<usize>,
    pub fitness: f64,
    /// Best fitness so far, one entry per generation; non-increasing.
    pub trace: Vec<f64>,
    pub counts: Vec<u64>,
    pub rates: Vec<f64>,
    pub k: usize,
}

/// Evolves a candidate subset minimizing `fitness` under the cardinality
/// window. Reproducible for a fixed config and seed.
pub fn ga_select(matrix: &FailureMatrix, r_ref: &[f64], cfg: &GaConfig) -> Result<Selection> {
    cfg.validate()?;
    let dim = matrix.candidates;
    if dim == 0 {
        return Err(Error::Domain("empty failure matrix".into()));
    }
    if r_ref.len() != matrix.systems.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} reference entries", matrix.systems.len()),
            actual: format!("{}", r_ref.len()),
        });
    }
    let (k_min, k_max) = cfg.window(dim)?;
    let words = word_count(dim);
    let mutation = cfg.mutation_rate.unwrap_or(1.0 / dim as f64);
    let mut rng = RngStream::root(cfg.seed);

    let mut pop: Vec<Vec<u64>> = (0..cfg.population)
        .map(|_| {
            let k = k_min + rng.below(k_max - k_min + 1);
            let mut mask = vec![0u64; words];
            for i in rng.distinct_below(k, dim) {
                set_bit(&mut mask, i);
            }
            mask
        })
        .collect();

    let mut best_mask = pop[0].clone();
    let mut best_fit = f64::INFINITY;
    let mut trace = Vec::with_capacity(cfg.generations);

    for _ in 0..cfg.generations {
        let fits: Vec<f64> = pop.iter().map(|m| fitness(matrix, r_ref, m, cfg)).collect();
        let mut order: Vec<usize> = (0..pop.len()).collect();
        order.sort_by(|&a, &b| fits[a].total_cmp(&fits[b]).then(a.cmp(&b)));
        if fits[order[0]] < best_fit {
            best_fit = fits[order[0]];
            best_mask = pop[order[0]].clone();
        }
        trace.push(best_fit);

        let mut next: Vec<Vec<u64>> = order[..cfg.elitism]
            .iter()
            .map(|&i| pop[i].clone())
            .collect();
        let tourney = |rng: &mut RngStream| -> usize {
            let mut best = rng.below(pop.len());
            for _ in 1..cfg.tournament {
                let i = rng.below(pop.len());
                if fits[i].total_cmp(&fits[best]).then(i.cmp(&best)).is_lt() {
                    best = i;
                }
            }
            best
        };
        while next.len() < cfg.population {
            let a = tourney(&mut rng);
            let mut child = if rng.chance(cfg.crossover_rate) {
                let b = tourney(&mut rng);
                let mut c = vec![0u64; words];
                for w in 0..words {
                    let m = rng.next_u64();
                    c[w] = (pop[a][w] & m) | (pop[b][w] & !m);
                }
                // Mask off bits beyond the dimension introduced by crossover
                // words (none: parents have none set there).
                c
            } else {
                pop[a].clone()
            };
            let flips = rng.binomial(dim as u64, mutation) as usize;
            for i in rng.distinct_below(flips.min(dim), dim) {
                flip_bit(&mut child, i);
            }
            repair(&mut child, dim, k_min, k_max, &mut rng);
            next.push(child);
        }
        pop = next;
    }
    // Account for the final generation's offspring.
    for m in &pop {
        let f = fitness(matrix, r_ref, m, cfg);
        if f < best_fit {
            best_fit = f;
            best_mask = m.clone();
        }
    }

    let counts = matrix.selected_counts(&best_mask);
    let k = popcount(&best_mask);
    let rates = counts.iter().map(|&c| c as f64 / k as f64).collect();
    Ok(Selection {
        selected: ones(&best_mask, dim),
        fitness: best_fit,
        trace,
        counts,
        rates,
        k,
    })
}

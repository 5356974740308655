//! Candidate generation: gradient refinement of perturbation parameters
//! against accessible source systems.
//!
//! Each (pair, source) run starts from random feasible parameters and takes
//! plain projected gradient steps that push the margin toward the wrong side
//! for the pair's label. Every time the running loss (2y-1)*margin reaches a
//! new strict minimum, the parameters evaluated at that iteration are
//! emitted as a candidate, so each run yields a strictly decreasing loss
//! sequence: early candidates are mild, late ones are the strongest
//! misclassifiers the run found.
//!
//! Pools store parameters plus bookkeeping only; perturbed images are
//! rebuilt on demand through the scheme, which keeps pool files small and
//! makes every stored candidate re-checkable.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::artifact;
use crate::dataset::PairSet;
use crate::error::{Error, Result};
use crate::numerics::{blob, RngStream};
use crate::perturb::Scheme;
use crate::siamese::{Meter, SiameseSystem};

pub const POOL_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GenConfig {
    pub iterations: usize,
    pub step_size: f64,
    pub seed: u64,
}

impl GenConfig {
    fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("generation needs iterations >= 1".into()));
        }
        if !(self.step_size > 0.0) {
            return Err(Error::Config("generation step size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Candidate {
    /// Index into the generation pair set.
    pub pair: usize,
    /// Index into the pool's source list.
    pub source: usize,
    pub label: bool,
    /// (2y-1) * margin on the source system when the candidate was accepted.
    pub loss: f64,
    #[serde(skip)]
    pub params: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Pool {
    pub scheme: Scheme,
    pub sources: Vec<String>,
    pub pair_count: usize,
    pub candidates: Vec<Candidate>,
}

/// Runs the refinement for every (pair, source) combination. Pairs run in
/// parallel on per-run seed substreams; candidate order is by pair, then
/// source, then acceptance order.
pub fn generate_pool(
    systems: &[&SiameseSystem],
    scheme: &Scheme,
    pairs: &PairSet,
    cfg: &GenConfig,
    meter: &Meter,
) -> Result<Pool> {
    cfg.validate()?;
    if systems.is_empty() {
        return Err(Error::Domain("no source systems".into()));
    }
    if pairs.is_empty() {
        return Err(Error::Domain("no generation pairs".into()));
    }
    let n_src = systems.len();
    let runs: Result<Vec<Vec<Candidate>>> = (0..pairs.len() * n_src)
        .into_par_iter()
        .map(|run| {
            let pair = run / n_src;
            let source = run % n_src;
            let mut rng = RngStream::substream(cfg.seed, run as u64);
            refine_run(
                systems[source],
                scheme,
                pairs,
                pair,
                source,
                cfg,
                meter,
                &mut rng,
            )
        })
        .collect();
    let candidates = runs?.into_iter().flatten().collect();
    Ok(Pool {
        scheme: scheme.clone(),
        sources: systems.iter().map(|s| s.id.clone()).collect(),
        pair_count: pairs.len(),
        candidates,
    })
}

#[allow(clippy::too_many_arguments)]
fn refine_run(
    sys: &SiameseSystem,
    scheme: &Scheme,
    pairs: &PairSet,
    pair: usize,
    source: usize,
    cfg: &GenConfig,
    meter: &Meter,
    rng: &mut RngStream,
) -> Result<Vec<Candidate>> {
    let x = pairs.alpha(pair);
    let label = pairs.label(pair);
    let sign = if label { 1.0 } else { -1.0 };
    let z_beta = sys.encode(pairs.beta(pair))?;
    let mut params = scheme.random_params(rng);
    // Margins live in [-1, 1], so 1 upper-bounds the loss: the first
    // evaluation below 1 is always accepted.
    let mut best = 1.0f64;
    let mut out = Vec::new();
    for _ in 0..cfg.iterations {
        let candidate = scheme.apply(x, &params)?;
        let (t, img_grad) = sys.backward_margin_vs_embedding(&candidate, &z_beta, meter)?;
        let loss = sign * t;
        if loss < best {
            out.push(Candidate {
                pair,
                source,
                label,
                loss,
                params: params.clone(),
            });
            best = loss;
        }
        let g = scheme.param_grad(x, &params, &img_grad)?;
        for (p, gi) in params.iter_mut().zip(&g) {
            *p -= cfg.step_size * sign * gi;
        }
        scheme.project(&mut params);
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PoolStats {
    pub candidates: usize,
    pub runs: usize,
    pub mean_per_run: f64,
    pub min_per_run: usize,
    pub max_per_run: usize,
    pub loss_min: f64,
    pub loss_max: f64,
}

pub fn pool_stats(pool: &Pool) -> PoolStats {
    let runs = pool.pair_count * pool.sources.len();
    let mut per_run = vec![0usize; runs];
    let mut loss_min = f64::INFINITY;
    let mut loss_max = f64::NEG_INFINITY;
    for c in &pool.candidates {
        per_run[c.pair * pool.sources.len() + c.source] += 1;
        loss_min = loss_min.min(c.loss);
        loss_max = loss_max.max(c.loss);
    }
    PoolStats {
        candidates: pool.candidates.len(),
        runs,
        mean_per_run: pool.candidates.len() as f64 / runs as f64,
        min_per_run: per_run.iter().copied().min().unwrap_or(0),
        max_per_run: per_run.iter().copied().max().unwrap_or(0),
        loss_min,
        loss_max,
    }
}

/// Largest |stored loss - recomputed loss| across the pool; exercises the
/// full apply-and-evaluate path against the stored bookkeeping.
pub fn max_loss_deviation(
    pool: &Pool,
    systems: &[&SiameseSystem],
    pairs: &PairSet,
    meter: &Meter,
) -> Result<f64> {
    let devs: Result<Vec<f64>> = pool
        .candidates
        .par_iter()
        .map(|c| {
            let sys = systems
                .iter()
                .find(|s| s.id == pool.sources[c.source])
                .ok_or_else(|| {
                    Error::Domain(format!("source {} not supplied", pool.sources[c.source]))
                })?;
            let img = pool.scheme.apply(pairs.alpha(c.pair), &c.params)?;
            let sign = if c.label { 1.0 } else { -1.0 };
            let t = sys.margin(&img, pairs.beta(c.pair), meter)?;
            Ok((sign * t - c.loss).abs())
        })
        .collect();
    Ok(devs?.into_iter().fold(0.0, f64::max))
}

#[derive(Serialize, Deserialize)]
struct PoolManifest {
    format_version: u32,
    scheme: Scheme,
    sources: Vec<String>,
    pair_count: usize,
    candidates: Vec<Candidate>,
    params_sha256: String,
}

/// Writes pool.json + params.rbt under `dir`.
pub fn save_pool(dir: &Path, pool: &Pool) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| crate::error::io_err(dir, e))?;
    let rows: Vec<&[f64]> = pool.candidates.iter().map(|c| c.params.as_slice()).collect();
    let bytes = blob::encode(&[pool.scheme.param_len()], &rows)?;
    std::fs::write(dir.join("params.rbt"), &bytes).map_err(|e| crate::error::io_err(dir, e))?;
    let manifest = PoolManifest {
        format_version: POOL_FORMAT_VERSION,
        scheme: pool.scheme.clone(),
        sources: pool.sources.clone(),
        pair_count: pool.pair_count,
        candidates: pool.candidates.clone(),
        params_sha256: artifact::sha256_hex(&bytes),
    };
    artifact::write_json(&dir.join("pool.json"), &manifest)
}

pub fn load_pool(dir: &Path) -> Result<Pool> {
    let manifest: PoolManifest = artifact::read_json(&dir.join("pool.json"))?;
    if manifest.format_version != POOL_FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            what: "pool.json".into(),
            found: manifest.format_version,
            supported: POOL_FORMAT_VERSION,
        });
    }
    let ppath = dir.join("params.rbt");
    let bytes = std::fs::read(&ppath).map_err(|e| crate::error::io_err(&ppath, e))?;
    if artifact::sha256_hex(&bytes) != manifest.params_sha256 {
        return Err(Error::ChecksumMismatch(ppath.display().to_string()));
    }
    let decoded = blob::decode(&bytes, "params.rbt")?;
    if decoded.rows.len() != manifest.candidates.len() {
        return Err(Error::Format {
            what: "params.rbt".into(),
            detail: format!(
                "{} parameter rows for {} candidates",
                decoded.rows.len(),
                manifest.candidates.len()
            ),
        });
    }
    let mut candidates = manifest.candidates;
    for (c, row) in candidates.iter_mut().zip(decoded.rows) {
        c.params = row;
    }
    Ok(Pool {
        scheme: manifest.scheme,
        sources: manifest.sources,
        pair_count: manifest.pair_count,
        candidates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{make_pairs, make_prototypes, make_triplets};
    use crate::siamese::{
        calibrate_threshold, init_system, train, Activation, ArchDescriptor, TrainConfig,
    };

    fn trained_pair() -> (Vec<SiameseSystem>, PairSet) {
        let ids = make_prototypes(5, 12, 201).unwrap();
        let triplets = make_triplets(&ids, 96, 0.05, 202).unwrap();
        let cal = make_pairs(&ids, 40, 0.5, 0.05, 203).unwrap();
        let mut systems = Vec::new();
        for (i, widths) in [vec![24usize, 12], vec![32, 16]].iter().enumerate() {
            let arch = ArchDescriptor {
                name: format!("src{i}"),
                smoothing_kernel: 1,
                widths: widths.clone(),
                activation: Activation::Tanh,
                weight_scale: 1.0,
                noise_aug_sigma: 0.0,
            };
            let (mut sys, _) = train(
                &arch,
                &[12, 12],
                &triplets,
                &TrainConfig {
                    epochs: 4,
                    lr: 0.05,
                    triplet_margin: 0.2,
                    seed: 210 + i as u64,
                },
            )
            .unwrap();
            calibrate_threshold(&mut sys, &cal, &Meter::new()).unwrap();
            systems.push(sys);
        }
        let pairs = make_pairs(&ids, 12, 0.5, 0.05, 204).unwrap();
        (systems, pairs)
    }

    fn gen_cfg(seed: u64) -> GenConfig {
        GenConfig {
            iterations: 40,
            step_size: 0.5,
            seed,
        }
    }

    #[test]
    fn losses_strictly_decrease_within_each_run() {
        let (systems, pairs) = trained_pair();
        let refs: Vec<&SiameseSystem> = systems.iter().collect();
        let scheme = Scheme::l2("l2", 12, 1.0).unwrap();
        let pool =
            generate_pool(&refs, &scheme, &pairs, &gen_cfg(220), &Meter::new()).unwrap();
        assert!(!pool.candidates.is_empty());
        let mut last: Option<(usize, usize, f64)> = None;
        for c in &pool.candidates {
            if let Some((p, s, l)) = last {
                if p == c.pair && s == c.source {
                    assert!(c.loss < l, "loss {} did not drop below {l}", c.loss);
                }
            }
            last = Some((c.pair, c.source, c.loss));
        }
        let stats = pool_stats(&pool);
        assert_eq!(stats.runs, pairs.len() * 2);
        assert!(stats.max_per_run <= 40);
        assert!(stats.loss_min >= -1.0 - 1e-9 && stats.loss_max <= 1.0 + 1e-9);
    }

    #[test]
    fn constant_encoder_yields_at_most_one_candidate_per_run() {
        // Zero weights with a fixed bias embed every image identically, so
        // the margin gradient vanishes and the loss never improves after the
        // first acceptance.
        let ids = make_prototypes(4, 10, 230).unwrap();
        let pairs = make_pairs(&ids, 8, 0.5, 0.05, 231).unwrap();
        let arch = ArchDescriptor {
            name: "flat".into(),
            smoothing_kernel: 1,
            widths: vec![6],
            activation: Activation::Relu,
            weight_scale: 1.0,
            noise_aug_sigma: 0.0,
        };
        let mut sys = init_system(&arch, &[10, 10], 232).unwrap();
        sys.layers[0].w.iter_mut().for_each(|v| *v = 0.0);
        sys.layers[0]
            .b
            .iter_mut()
            .enumerate()
            .for_each(|(i, v)| *v = 1.0 + i as f64);
        let scheme = Scheme::linf("linf", 10, 0.1).unwrap();
        let pool = generate_pool(&[&sys], &scheme, &pairs, &gen_cfg(233), &Meter::new()).unwrap();
        let stats = pool_stats(&pool);
        assert!(
            stats.max_per_run <= 1,
            "flat margin accepted {} candidates in one run",
            stats.max_per_run
        );
    }

    #[test]
    fn generation_is_deterministic_and_meter_is_exact() {
        let (systems, pairs) = trained_pair();
        let refs: Vec<&SiameseSystem> = systems.iter().collect();
        let scheme = Scheme::illumination("il", 12, 0.2).unwrap();
        let meter = Meter::new();
        let p1 = generate_pool(&refs, &scheme, &pairs, &gen_cfg(240), &meter).unwrap();
        // One margin + gradient evaluation per iteration per run.
        let evals = (pairs.len() * refs.len() * 40) as u64;
        assert_eq!(meter.forward_count(), evals);
        assert_eq!(meter.backward_count(), evals);
        let p2 = generate_pool(&refs, &scheme, &pairs, &gen_cfg(240), &Meter::new()).unwrap();
        assert_eq!(p1.candidates.len(), p2.candidates.len());
        for (a, b) in p1.candidates.iter().zip(&p2.candidates) {
            assert_eq!(a.pair, b.pair);
            assert_eq!(a.source, b.source);
            assert_eq!(a.loss, b.loss);
            assert_eq!(a.params, b.params);
        }
    }

    #[test]
    fn candidates_stay_inside_their_family() {
        let (systems, pairs) = trained_pair();
        let refs: Vec<&SiameseSystem> = systems.iter().collect();
        for scheme in [
            Scheme::l2("l2", 12, 0.8).unwrap(),
            Scheme::patch("patch", 12, 0.05).unwrap(),
            Scheme::radial("radial", 12, 0.25).unwrap(),
        ] {
            let pool =
                generate_pool(&refs, &scheme, &pairs, &gen_cfg(250), &Meter::new()).unwrap();
            for c in &pool.candidates {
                let img = scheme.apply(pairs.alpha(c.pair), &c.params).unwrap();
                assert!(
                    scheme.within(pairs.alpha(c.pair), &img).unwrap(),
                    "{}: candidate escaped the family",
                    scheme.name
                );
            }
        }
    }

    #[test]
    fn pool_round_trip_and_integrity() {
        let (systems, pairs) = trained_pair();
        let refs: Vec<&SiameseSystem> = systems.iter().collect();
        let scheme = Scheme::linf("linf", 12, 0.12).unwrap();
        let pool = generate_pool(&refs, &scheme, &pairs, &gen_cfg(260), &Meter::new()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_pool(dir.path(), &pool).unwrap();
        let back = load_pool(dir.path()).unwrap();
        assert_eq!(back.candidates.len(), pool.candidates.len());
        assert_eq!(back.sources, pool.sources);
        // Stored losses survive the f32 parameter round trip.
        let dev = max_loss_deviation(&back, &refs, &pairs, &Meter::new()).unwrap();
        assert!(dev < 1e-5, "loss deviation {dev}");

        // One corrupted payload byte must be caught.
        let ppath = dir.path().join("params.rbt");
        let mut bytes = std::fs::read(&ppath).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0x01;
        std::fs::write(&ppath, &bytes).unwrap();
        assert!(matches!(
            load_pool(dir.path()),
            Err(Error::ChecksumMismatch(_))
        ));
    }
}

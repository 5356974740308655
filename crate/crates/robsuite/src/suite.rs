//! Frozen test suites: self-contained sets of verification cases that score
//! an unseen system in one forward-only pass.
//!
//! A suite bundles, per scheme, the perturbed probe images together with
//! their originals, reference images, and labels, so evaluation needs
//! nothing but the suite directory and a verifier. Members are stored f32;
//! assembly re-anchors every member to its f32-rounded original (shrinking
//! Lp deviations slightly and re-applying parametric transforms), so stored
//! members still satisfy their scheme's membership check after the storage
//! round trip.
//!
//! Scoring is label-based: robustness is the fraction of members the system
//! still verifies correctly. A prediction-consistency diagnostic (agreement
//! between the perturbed and original prediction) is reported alongside; it
//! reuses the per-pair original embeddings, so it costs no extra forwards.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};
use std::path::Path;

use crate::artifact;
use crate::dataset::PairSet;
use crate::error::{Error, Result};
use crate::generate::Pool;
use crate::numerics::{blob, clip01, norm_p, RealArray, RngStream};
use crate::perturb::{Scheme, SchemeKind};
use crate::siamese::{Meter, SiameseSystem};

pub const SUITE_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct TestSet {
    pub name: String,
    pub scheme: Scheme,
    pub labels: Vec<bool>,
    /// Generation pair index per member; provenance only.
    pub pair_ids: Vec<usize>,
    pub originals: Vec<RealArray>,
    pub perturbed: Vec<RealArray>,
    pub betas: Vec<RealArray>,
}

impl TestSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct TestSuite {
    pub seed: u64,
    pub sets: Vec<TestSet>,
}

impl TestSuite {
    pub fn total_members(&self) -> usize {
        self.sets.iter().map(|s| s.len()).sum()
    }
}

/// One selected pool slice destined to become a suite set.
pub struct SetSpec<'a> {
    pub pool: &'a Pool,
    pub selected: &'a [usize],
}

fn roundtrip_f32(x: &RealArray) -> RealArray {
    let data = x.data().iter().map(|&v| (v as f32) as f64).collect();
    RealArray::new(data, x.shape().to_vec()).expect("f32 round trip preserves finiteness")
}

fn valid_set_name(name: &str) -> bool {
    !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

/// Re-anchors one selected candidate to the f32-rounded original so the
/// stored pair survives storage and still passes membership.
fn materialize_member(
    scheme: &Scheme,
    x: &RealArray,
    params: &[f64],
) -> Result<(RealArray, RealArray)> {
    let x32 = roundtrip_f32(x);
    let perturbed = match scheme.kind {
        SchemeKind::L2 | SchemeKind::LInf => {
            // Deviation from the stored original, shrunk just inside the
            // budget to leave headroom for the member's own f32 rounding.
            let raw = scheme.apply(x, params)?;
            let mut delta: Vec<f64> = raw
                .data()
                .iter()
                .zip(x32.data())
                .map(|(a, b)| a - b)
                .collect();
            let p = if scheme.kind == SchemeKind::L2 { 2.0 } else { f64::INFINITY };
            let target = scheme.epsilon * (1.0 - 1e-6);
            let norm = norm_p(&delta, p)?;
            if norm > target {
                if p == 2.0 {
                    let s = target / norm;
                    delta.iter_mut().for_each(|d| *d *= s);
                } else {
                    delta.iter_mut().for_each(|d| *d = d.clamp(-target, target));
                }
            }
            let data = x32
                .data()
                .iter()
                .zip(&delta)
                .map(|(a, d)| clip01(a + d))
                .collect();
            RealArray::new(data, x.shape().to_vec())?
        }
        // Parametric families: re-apply on the f32 original; recovery then
        // only has to absorb one rounding of the output.
        _ => scheme.apply(&x32, params)?,
    };
    Ok((x32, roundtrip_f32(&perturbed)))
}

/// Builds the frozen suite from selected pool candidates. Duplicate
/// (pair, parameters) selections collapse to one member; member order is
/// shuffled per set on a substream of `seed`. Set names must be unique and
/// filesystem-safe.
pub fn assemble(specs: &[SetSpec], pairs: &PairSet, seed: u64) -> Result<TestSuite> {
    if specs.is_empty() {
        return Err(Error::Domain("no sets to assemble".into()));
    }
    let mut names = HashSet::new();
    let mut sets = Vec::with_capacity(specs.len());
    for (set_idx, spec) in specs.iter().enumerate() {
        let scheme = &spec.pool.scheme;
        if !valid_set_name(&scheme.name) {
            return Err(Error::Config(format!(
                "set name {:?} is not filesystem-safe",
                scheme.name
            )));
        }
        if !names.insert(scheme.name.clone()) {
            return Err(Error::Config(format!("duplicate set name {:?}", scheme.name)));
        }
        if spec.pool.pair_count != pairs.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} pairs", spec.pool.pair_count),
                actual: format!("{}", pairs.len()),
            });
        }
        let mut seen = HashSet::new();
        let mut members = Vec::with_capacity(spec.selected.len());
        for &ci in spec.selected {
            let c = spec
                .pool
                .candidates
                .get(ci)
                .ok_or_else(|| Error::Domain(format!("candidate index {ci} out of range")))?;
            let key: (usize, Vec<u32>) = (
                c.pair,
                c.params.iter().map(|&p| (p as f32).to_bits()).collect(),
            );
            if seen.insert(key) {
                members.push(c);
            }
        }
        let mut order: Vec<usize> = (0..members.len()).collect();
        RngStream::substream(seed, set_idx as u64).shuffle(&mut order);

        let mut labels = Vec::with_capacity(members.len());
        let mut pair_ids = Vec::with_capacity(members.len());
        let mut originals = Vec::with_capacity(members.len());
        let mut perturbed = Vec::with_capacity(members.len());
        let mut betas = Vec::with_capacity(members.len());
        for &mi in &order {
            let c = members[mi];
            let (x32, xp32) = materialize_member(scheme, pairs.alpha(c.pair), &c.params)?;
            labels.push(c.label);
            pair_ids.push(c.pair);
            originals.push(x32);
            perturbed.push(xp32);
            betas.push(roundtrip_f32(pairs.beta(c.pair)));
        }
        sets.push(TestSet {
            name: scheme.name.clone(),
            scheme: scheme.clone(),
            labels,
            pair_ids,
            originals,
            perturbed,
            betas,
        });
    }
    Ok(TestSuite { seed, sets })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SetEvaluation {
    pub name: String,
    pub size: usize,
    /// Members where the prediction disagreed with the label.
    pub mismatches: usize,
    /// 1 - mismatches / size.
    pub robustness: f64,
    /// Fraction of members whose perturbed prediction matches the
    /// prediction on the unperturbed original. Diagnostic only.
    pub prediction_consistency: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SuiteEvaluation {
    pub system: String,
    pub sets: Vec<SetEvaluation>,
    /// Unweighted mean of per-set robustness.
    pub mean_robustness: f64,
}

/// Encodes each distinct array once. Byte-identical inputs map to the same
/// embedding, so members that share an original or reference image (one per
/// generation pair) reuse it. Returns the unique embeddings plus each
/// member's index into them.
fn unique_embeddings(
    sys: &SiameseSystem,
    arrays: &[RealArray],
    meter: &Meter,
) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut reps = Vec::new();
    let mut member_of = Vec::with_capacity(arrays.len());
    for (i, a) in arrays.iter().enumerate() {
        let key: Vec<u64> = a.data().iter().map(|v| v.to_bits()).collect();
        let next = reps.len();
        let id = *seen.entry(key).or_insert_with(|| {
            reps.push(i);
            next
        });
        member_of.push(id);
    }
    let embeds: Result<Vec<Vec<f64>>> = reps
        .par_iter()
        .map(|&i| {
            meter.add_forward(1);
            sys.encode(&arrays[i])
        })
        .collect();
    Ok((embeds?, member_of))
}

/// Scores one system on one set: one forward per member plus one per distinct
/// original and reference image, no gradients.
pub fn evaluate_set(sys: &SiameseSystem, set: &TestSet, meter: &Meter) -> Result<SetEvaluation> {
    if set.is_empty() {
        return Err(Error::Domain(format!("set {} is empty", set.name)));
    }
    let (z_betas, beta_of) = unique_embeddings(sys, &set.betas, meter)?;
    let (z_origs, orig_of) = unique_embeddings(sys, &set.originals, meter)?;
    let results: Result<Vec<(bool, bool)>> = (0..set.len())
        .into_par_iter()
        .map(|i| {
            let z_beta = &z_betas[beta_of[i]];
            let on_perturbed = sys.predict_vs_embedding(&set.perturbed[i], z_beta, meter)?;
            let on_original = crate::numerics::dot(&z_origs[orig_of[i]], z_beta)? > sys.kappa;
            Ok((on_perturbed != set.labels[i], on_perturbed == on_original))
        })
        .collect();
    let results = results?;
    let mismatches = results.iter().filter(|r| r.0).count();
    let consistent = results.iter().filter(|r| r.1).count();
    Ok(SetEvaluation {
        name: set.name.clone(),
        size: set.len(),
        mismatches,
        robustness: 1.0 - mismatches as f64 / set.len() as f64,
        prediction_consistency: consistent as f64 / set.len() as f64,
    })
}

pub fn evaluate_suite(
    sys: &SiameseSystem,
    suite: &TestSuite,
    meter: &Meter,
) -> Result<SuiteEvaluation> {
    let sets: Result<Vec<SetEvaluation>> = suite
        .sets
        .iter()
        .map(|s| evaluate_set(sys, s, meter))
        .collect();
    let sets = sets?;
    let mean = sets.iter().map(|s| s.robustness).sum::<f64>() / sets.len() as f64;
    Ok(SuiteEvaluation {
        system: sys.id.clone(),
        sets,
        mean_robustness: mean,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SetVerification {
    pub name: String,
    pub size: usize,
    /// Members that failed the scheme membership check.
    pub violations: usize,
    pub first_violation: Option<usize>,
}

/// Audits every stored member against its scheme's membership check.
pub fn verify_suite(suite: &TestSuite) -> Result<Vec<SetVerification>> {
    suite
        .sets
        .iter()
        .map(|set| {
            let flags: Result<Vec<bool>> = (0..set.len())
                .into_par_iter()
                .map(|i| Ok(!set.scheme.within(&set.originals[i], &set.perturbed[i])?))
                .collect();
            let flags = flags?;
            Ok(SetVerification {
                name: set.name.clone(),
                size: set.len(),
                violations: flags.iter().filter(|&&v| v).count(),
                first_violation: flags.iter().position(|&v| v),
            })
        })
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct BlobRef {
    file: String,
    sha256: String,
}

#[derive(Serialize, Deserialize)]
struct SetManifest {
    name: String,
    scheme: Scheme,
    labels: Vec<bool>,
    pair_ids: Vec<usize>,
    originals: BlobRef,
    perturbed: BlobRef,
    betas: BlobRef,
}

#[derive(Serialize, Deserialize)]
struct SuiteManifest {
    format_version: u32,
    seed: u64,
    sets: Vec<SetManifest>,
}

fn write_blob(dir: &Path, file: &str, side: usize, images: &[RealArray]) -> Result<BlobRef> {
    let rows: Vec<&[f64]> = images.iter().map(|x| x.data()).collect();
    let bytes = blob::encode(&[side, side], &rows)?;
    let path = dir.join(file);
    std::fs::write(&path, &bytes).map_err(|e| crate::error::io_err(&path, e))?;
    Ok(BlobRef {
        file: file.into(),
        sha256: artifact::sha256_hex(&bytes),
    })
}

fn read_blob(dir: &Path, blob_ref: &BlobRef, expect: usize, side: usize) -> Result<Vec<RealArray>> {
    let path = dir.join(&blob_ref.file);
    let bytes = std::fs::read(&path).map_err(|e| crate::error::io_err(&path, e))?;
    if artifact::sha256_hex(&bytes) != blob_ref.sha256 {
        return Err(Error::ChecksumMismatch(path.display().to_string()));
    }
    let decoded = blob::decode(&bytes, &blob_ref.file)?;
    if decoded.rows.len() != expect || decoded.shape != [side, side] {
        return Err(Error::Format {
            what: blob_ref.file.clone(),
            detail: format!(
                "expected {expect} images of side {side}, found {} of shape {:?}",
                decoded.rows.len(),
                decoded.shape
            ),
        });
    }
    decoded
        .rows
        .into_iter()
        .map(|r| RealArray::new(r, vec![side, side]))
        .collect()
}

/// Writes suite.json plus three image blobs per set under `dir`.
pub fn save_suite(dir: &Path, suite: &TestSuite) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| crate::error::io_err(dir, e))?;
    let mut sets = Vec::with_capacity(suite.sets.len());
    for set in &suite.sets {
        let side = set.scheme.side;
        sets.push(SetManifest {
            name: set.name.clone(),
            scheme: set.scheme.clone(),
            labels: set.labels.clone(),
            pair_ids: set.pair_ids.clone(),
            originals: write_blob(dir, &format!("{}.originals.rbt", set.name), side, &set.originals)?,
            perturbed: write_blob(dir, &format!("{}.perturbed.rbt", set.name), side, &set.perturbed)?,
            betas: write_blob(dir, &format!("{}.betas.rbt", set.name), side, &set.betas)?,
        });
    }
    let manifest = SuiteManifest {
        format_version: SUITE_FORMAT_VERSION,
        seed: suite.seed,
        sets,
    };
    artifact::write_json(&dir.join("suite.json"), &manifest)
}

pub fn load_suite(dir: &Path) -> Result<TestSuite> {
    let manifest: SuiteManifest = artifact::read_json(&dir.join("suite.json"))?;
    if manifest.format_version != SUITE_FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            what: "suite.json".into(),
            found: manifest.format_version,
            supported: SUITE_FORMAT_VERSION,
        });
    }
    let mut sets = Vec::with_capacity(manifest.sets.len());
    for m in manifest.sets {
        let n = m.labels.len();
        if m.pair_ids.len() != n {
            return Err(Error::Format {
                what: "suite.json".into(),
                detail: format!("set {}: {} pair ids for {n} labels", m.name, m.pair_ids.len()),
            });
        }
        let side = m.scheme.side;
        sets.push(TestSet {
            originals: read_blob(dir, &m.originals, n, side)?,
            perturbed: read_blob(dir, &m.perturbed, n, side)?,
            betas: read_blob(dir, &m.betas, n, side)?,
            name: m.name,
            scheme: m.scheme,
            labels: m.labels,
            pair_ids: m.pair_ids,
        });
    }
    Ok(TestSuite {
        seed: manifest.seed,
        sets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{make_pairs, make_prototypes};
    use crate::generate::Candidate;
    use crate::siamese::{init_system, Activation, ArchDescriptor};
    use approx::assert_abs_diff_eq;

    fn make_env(side: usize) -> PairSet {
        let ids = make_prototypes(5, side, 301).unwrap();
        make_pairs(&ids, 10, 0.5, 0.05, 302).unwrap()
    }

    fn pool_for(scheme: Scheme, pairs: &PairSet, seed: u64, per_pair: usize) -> Pool {
        // Synthetic pool: random feasible params, loss bookkeeping unused
        // by assembly.
        let mut rng = RngStream::root(seed);
        let mut candidates = Vec::new();
        for pair in 0..pairs.len() {
            for _ in 0..per_pair {
                candidates.push(Candidate {
                    pair,
                    source: 0,
                    label: pairs.label(pair),
                    loss: 0.0,
                    params: scheme.random_params(&mut rng),
                });
            }
        }
        Pool {
            scheme,
            sources: vec!["src0".into()],
            pair_count: pairs.len(),
            candidates,
        }
    }

    fn identity_system(side: usize) -> SiameseSystem {
        let n = side * side;
        let arch = ArchDescriptor {
            name: "ident".into(),
            smoothing_kernel: 1,
            widths: vec![n],
            activation: Activation::Relu,
            weight_scale: 1.0,
            noise_aug_sigma: 0.0,
        };
        let mut sys = init_system(&arch, &[side, side], 0).unwrap();
        sys.layers[0].w.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            sys.layers[0].w[i * n + i] = 1.0;
        }
        sys
    }

    fn all_family_specs(pairs: &PairSet, side: usize) -> Vec<Pool> {
        vec![
            pool_for(Scheme::l2("l2", side, 0.8).unwrap(), pairs, 310, 4),
            pool_for(Scheme::linf("linf", side, 0.08).unwrap(), pairs, 311, 4),
            pool_for(Scheme::illumination("illum", side, 0.15).unwrap(), pairs, 312, 4),
            pool_for(Scheme::patch("patch", side, 0.05).unwrap(), pairs, 313, 4),
            pool_for(Scheme::radial("radial", side, 0.2).unwrap(), pairs, 314, 4),
        ]
    }

    #[test]
    fn every_stored_member_passes_membership_after_f32() {
        let side = 12;
        let pairs = make_env(side);
        let pools = all_family_specs(&pairs, side);
        let selected: Vec<Vec<usize>> = pools
            .iter()
            .map(|p| (0..p.candidates.len()).collect())
            .collect();
        let specs: Vec<SetSpec> = pools
            .iter()
            .zip(&selected)
            .map(|(pool, sel)| SetSpec { pool, selected: sel })
            .collect();
        let suite = assemble(&specs, &pairs, 320).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_suite(dir.path(), &suite).unwrap();
        let loaded = load_suite(dir.path()).unwrap();
        for v in verify_suite(&loaded).unwrap() {
            assert_eq!(
                v.violations, 0,
                "set {} has {} membership violations (first at {:?})",
                v.name, v.violations, v.first_violation
            );
        }
    }

    #[test]
    fn assembly_dedups_and_shuffles_deterministically() {
        let side = 10;
        let pairs = make_env(side);
        let scheme = Scheme::linf("linf", side, 0.1).unwrap();
        let mut pool = pool_for(scheme, &pairs, 330, 2);
        // Duplicate the first candidate exactly.
        let dup = pool.candidates[0].clone();
        pool.candidates.push(dup);
        let all: Vec<usize> = (0..pool.candidates.len()).collect();
        let suite = assemble(
            &[SetSpec { pool: &pool, selected: &all }],
            &pairs,
            331,
        )
        .unwrap();
        assert_eq!(suite.sets[0].len(), pool.candidates.len() - 1, "dedup failed");
        let again = assemble(
            &[SetSpec { pool: &pool, selected: &all }],
            &pairs,
            331,
        )
        .unwrap();
        for (a, b) in suite.sets[0].perturbed.iter().zip(&again.sets[0].perturbed) {
            assert_eq!(a.data(), b.data());
        }
        // Duplicate set names are rejected.
        let err = assemble(
            &[
                SetSpec { pool: &pool, selected: &all },
                SetSpec { pool: &pool, selected: &all },
            ],
            &pairs,
            331,
        );
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn evaluation_matches_hand_count_and_stays_forward_only() {
        let side = 8;
        // Hand-built set on the identity encoder: orthogonal pairs have
        // margin 0 (predicted negative), identical pairs margin 1.
        let sys = identity_system(side);
        let e = |i: usize| {
            let mut v = vec![0.0; side * side];
            v[i] = 1.0;
            RealArray::new(v, vec![side, side]).unwrap()
        };
        let scheme = Scheme::l2("l2", side, 0.5).unwrap();
        let set = TestSet {
            name: "hand".into(),
            scheme: scheme.clone(),
            // Member 0: perturbed == beta, margin 1 > 0, label true: correct.
            // Member 1: perturbed orthogonal to beta, margin 0, label true:
            // mismatch. Member 2: same geometry, label false: correct.
            labels: vec![true, true, false],
            pair_ids: vec![0, 1, 2],
            originals: vec![e(0), e(1), e(2)],
            perturbed: vec![e(5), e(1), e(2)],
            betas: vec![e(5), e(3), e(4)],
        };
        let meter = Meter::new();
        let eval = evaluate_set(&sys, &set, &meter).unwrap();
        assert_eq!(eval.mismatches, 1);
        assert_abs_diff_eq!(eval.robustness, 2.0 / 3.0, epsilon = 1e-15);
        // Member 0 changed prediction (original e0 vs beta e5 is negative,
        // perturbed e5 vs e5 positive); members 1 and 2 kept theirs.
        assert_abs_diff_eq!(eval.prediction_consistency, 2.0 / 3.0, epsilon = 1e-15);
        // All arrays distinct here: 3 perturbed + 3 originals + 3 betas.
        assert_eq!(meter.forward_count(), 9);
        assert_eq!(meter.backward_count(), 0, "evaluation must be forward-only");

        // Members sharing an original and beta reuse their embeddings.
        let shared = TestSet {
            name: "shared".into(),
            scheme,
            labels: vec![true, true, true],
            pair_ids: vec![0, 0, 0],
            originals: vec![e(0), e(0), e(0)],
            perturbed: vec![e(5), e(1), e(2)],
            betas: vec![e(7), e(7), e(7)],
        };
        let meter = Meter::new();
        let eval = evaluate_set(&sys, &shared, &meter).unwrap();
        assert_eq!(eval.mismatches, 3, "orthogonal pairs all break label true");
        assert_eq!(meter.forward_count(), 5, "3 perturbed + 1 original + 1 beta");
        assert_eq!(meter.backward_count(), 0);
    }

    #[test]
    fn save_load_is_byte_stable_and_integrity_gated() {
        let side = 10;
        let pairs = make_env(side);
        let pool = pool_for(Scheme::l2("l2", side, 0.6).unwrap(), &pairs, 340, 3);
        let all: Vec<usize> = (0..pool.candidates.len()).collect();
        let suite = assemble(&[SetSpec { pool: &pool, selected: &all }], &pairs, 341).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_suite(dir.path(), &suite).unwrap();
        let manifest1 = std::fs::read(dir.path().join("suite.json")).unwrap();
        let blob1 = std::fs::read(dir.path().join("l2.perturbed.rbt")).unwrap();
        let loaded = load_suite(dir.path()).unwrap();
        save_suite(dir.path(), &loaded).unwrap();
        assert_eq!(manifest1, std::fs::read(dir.path().join("suite.json")).unwrap());
        assert_eq!(blob1, std::fs::read(dir.path().join("l2.perturbed.rbt")).unwrap());

        // Flip one payload byte: checksum mismatch.
        let path = dir.path().join("l2.perturbed.rbt");
        let mut bytes = std::fs::read(&path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0x40;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_suite(dir.path()), Err(Error::ChecksumMismatch(_))));
        bytes[last] ^= 0x40;
        std::fs::write(&path, &bytes).unwrap();

        // Unsupported version.
        let mpath = dir.path().join("suite.json");
        let text = std::fs::read_to_string(&mpath).unwrap();
        std::fs::write(&mpath, text.replace("\"format_version\": 1", "\"format_version\": 7"))
            .unwrap();
        assert!(matches!(load_suite(dir.path()), Err(Error::VersionMismatch { .. })));
    }

    #[test]
    fn verification_flags_tampered_members() {
        let side = 10;
        let pairs = make_env(side);
        let pool = pool_for(Scheme::linf("linf", side, 0.05).unwrap(), &pairs, 350, 2);
        let all: Vec<usize> = (0..pool.candidates.len()).collect();
        let mut suite = assemble(&[SetSpec { pool: &pool, selected: &all }], &pairs, 351).unwrap();
        let clean = verify_suite(&suite).unwrap();
        assert_eq!(clean[0].violations, 0);
        // Push one pixel far outside the budget.
        let bad = {
            let set = &suite.sets[0];
            let mut data = set.perturbed[2].data().to_vec();
            data[0] = clip01(data[0] + 0.5);
            RealArray::new(data, vec![side, side]).unwrap()
        };
        suite.sets[0].perturbed[2] = bad;
        let flagged = verify_suite(&suite).unwrap();
        assert_eq!(flagged[0].violations, 1);
        assert_eq!(flagged[0].first_violation, Some(2));
    }

    #[test]
    fn suite_evaluation_aggregates_means() {
        let side = 10;
        let pairs = make_env(side);
        let pools = all_family_specs(&pairs, side);
        let selected: Vec<Vec<usize>> = pools
            .iter()
            .map(|p| (0..p.candidates.len()).collect())
            .collect();
        let specs: Vec<SetSpec> = pools
            .iter()
            .zip(&selected)
            .map(|(pool, sel)| SetSpec { pool, selected: sel })
            .collect();
        let suite = assemble(&specs, &pairs, 360).unwrap();
        let sys = identity_system(side);
        let eval = evaluate_suite(&sys, &suite, &Meter::new()).unwrap();
        assert_eq!(eval.sets.len(), 5);
        let mean = eval.sets.iter().map(|s| s.robustness).sum::<f64>() / 5.0;
        assert_abs_diff_eq!(eval.mean_robustness, mean, epsilon = 1e-15);
        for s in &eval.sets {
            assert!((0.0..=1.0).contains(&s.robustness));
        }
    }
}

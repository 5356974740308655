//! Procedural verification dataset: deterministic "blob face" identity
//! prototypes, noisy samples, and labeled verification pairs.
//!
//! Prototypes are drawn from per-identity RNG substreams: an oval face on a
//! flat background, two eye blobs, a mouth bar, a low-frequency texture, and
//! seeded per-pixel grain, all parameterized by the identity index. The same
//! (count, side, seed) triple always produces bit-identical prototypes.
//!
//! Pairs reference images by index so originals can be deduplicated all the
//! way into serialized suites. A pair is positive iff both images sample the
//! same identity.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::artifact;
use crate::error::{Error, Result};
use crate::numerics::{blob, clip01, RealArray, RngStream};

pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Identity {
    pub id: usize,
    /// side x side prototype, entries in [0, 1].
    pub prototype: RealArray,
}

/// Materialized pair view handed to verification systems.
#[derive(Clone, Debug)]
pub struct VerificationPair {
    pub x_alpha: RealArray,
    pub x_beta: RealArray,
    pub y: bool,
}

/// Pair as stored: indices into the shared image table plus provenance.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct PairRef {
    pub alpha: usize,
    pub beta: usize,
    pub y: bool,
    pub alpha_identity: usize,
    pub beta_identity: usize,
}

/// A labeled pair set over a shared image table.
#[derive(Clone, Debug)]
pub struct PairSet {
    pub side: usize,
    pub images: Vec<RealArray>,
    pub pairs: Vec<PairRef>,
}

impl PairSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn alpha(&self, i: usize) -> &RealArray {
        &self.images[self.pairs[i].alpha]
    }

    pub fn beta(&self, i: usize) -> &RealArray {
        &self.images[self.pairs[i].beta]
    }

    pub fn label(&self, i: usize) -> bool {
        self.pairs[i].y
    }

    pub fn pair(&self, i: usize) -> VerificationPair {
        VerificationPair {
            x_alpha: self.alpha(i).clone(),
            x_beta: self.beta(i).clone(),
            y: self.label(i),
        }
    }

    /// Restriction to a subset of pair indices; the image table is shared
    /// unchanged so stored indices stay valid.
    pub fn subset(&self, indices: &[usize]) -> PairSet {
        PairSet {
            side: self.side,
            images: self.images.clone(),
            pairs: indices.iter().map(|&i| self.pairs[i]).collect(),
        }
    }
}

/// Training triplet for encoder fitting.
#[derive(Clone, Debug)]
pub struct Triplet {
    pub anchor: RealArray,
    pub positive: RealArray,
    pub negative: RealArray,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub identities: usize,
    pub side: usize,
    pub pairs: usize,
    pub pos_ratio: f64,
    pub sigma: f64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            identities: 16,
            side: 16,
            pairs: 512,
            pos_ratio: 0.5,
            sigma: 0.05,
            seed: 101,
        }
    }
}

fn smooth01(t: f64) -> f64 {
    // Soft half-pixel edge: linear ramp clamped to [0, 1].
    (t * 2.0).clamp(0.0, 1.0)
}

/// Deterministic prototypes for `count` identities on a side x side grid.
pub fn make_prototypes(count: usize, side: usize, seed: u64) -> Result<Vec<Identity>> {
    if count == 0 {
        return Err(Error::Domain("identity count must be positive".into()));
    }
    if side < 8 {
        return Err(Error::Domain(format!(
            "side {side} too small for face geometry, need >= 8"
        )));
    }
    let s = side as f64;
    let mut identities = Vec::with_capacity(count);
    for id in 0..count {
        let mut rng = RngStream::substream(seed, id as u64);
        let base = rng.range(0.10, 0.30);
        let face = rng.range(0.55, 0.85);
        let cy = s * rng.range(0.48, 0.56);
        let cx = s * rng.range(0.46, 0.54);
        let ry = s * rng.range(0.30, 0.42);
        let rx = s * rng.range(0.26, 0.38);
        let eye_row = cy - ry * rng.range(0.28, 0.48);
        let eye_dx = rx * rng.range(0.38, 0.62);
        let eye_r = (s * rng.range(0.05, 0.10)).max(0.8);
        let eye_v = rng.range(0.02, 0.25);
        let mouth_row = cy + ry * rng.range(0.35, 0.60);
        let mouth_half = rx * rng.range(0.35, 0.65);
        let mouth_th = (s * rng.range(0.04, 0.09)).max(0.7);
        let mouth_v = rng.range(0.05, 0.35);
        let tex_amp = rng.range(0.02, 0.06);
        let tex_fu = rng.range(0.5, 2.5) / s;
        let tex_fv = rng.range(0.5, 2.5) / s;
        let ph_u = rng.uniform();
        let ph_v = rng.uniform();
        let grain = rng.range(0.01, 0.03);

        let mut data = Vec::with_capacity(side * side);
        for r in 0..side {
            for c in 0..side {
                let rf = r as f64;
                let cf = c as f64;
                let d = ((rf - cy) / ry).powi(2) + ((cf - cx) / rx).powi(2);
                let mut v = base + (face - base) * smooth01(1.0 - d);
                for sign in [-1.0, 1.0] {
                    let ex = cx + sign * eye_dx;
                    let de = ((rf - eye_row).powi(2) + (cf - ex).powi(2)) / (eye_r * eye_r);
                    let m = smooth01(1.0 - de);
                    v += (eye_v - v) * m;
                }
                let mm = smooth01(1.0 - (rf - mouth_row).abs() / mouth_th)
                    * smooth01(1.0 - (cf - cx).abs() / mouth_half);
                v += (mouth_v - v) * mm;
                let tau = std::f64::consts::TAU;
                v += tex_amp
                    * (tau * (tex_fu * rf + ph_u)).sin()
                    * (tau * (tex_fv * cf + ph_v)).sin();
                v += grain * (rng.uniform() * 2.0 - 1.0);
                data.push(clip01(v));
            }
        }
        identities.push(Identity {
            id,
            prototype: RealArray::new(data, vec![side, side])?,
        });
    }
    // Prototypes must be pairwise distinct or verification is ill-posed.
    for i in 0..identities.len() {
        for j in (i + 1)..identities.len() {
            let d: f64 = identities[i]
                .prototype
                .data()
                .iter()
                .zip(identities[j].prototype.data())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            if d < 1e-6 {
                return Err(Error::Degenerate(format!(
                    "prototype collision between identities {i} and {j}"
                )));
            }
        }
    }
    Ok(identities)
}

/// Prototype plus clipped Gaussian pixel noise. `sigma = 0` returns the
/// prototype exactly.
pub fn sample_image(identity: &Identity, sigma: f64, rng: &mut RngStream) -> Result<RealArray> {
    if sigma < 0.0 {
        return Err(Error::Domain(format!("sigma {sigma} must be >= 0")));
    }
    let data: Vec<f64> = identity
        .prototype
        .data()
        .iter()
        .map(|&p| clip01(p + sigma * rng.normal(0.0, 1.0)))
        .collect();
    RealArray::new(data, identity.prototype.shape().to_vec())
}

/// Labeled pair set: ceil(count * pos_ratio) positive pairs, the rest
/// negative, deterministically shuffled.
pub fn make_pairs(
    identities: &[Identity],
    count: usize,
    pos_ratio: f64,
    sigma: f64,
    seed: u64,
) -> Result<PairSet> {
    if count < 2 {
        return Err(Error::Domain(format!("pair count {count} too small, need >= 2")));
    }
    if !(0.0..=1.0).contains(&pos_ratio) {
        return Err(Error::Domain(format!("pos_ratio {pos_ratio} outside [0, 1]")));
    }
    if identities.is_empty() {
        return Err(Error::Domain("no identities".into()));
    }
    let n_pos = ((count as f64) * pos_ratio).ceil() as usize;
    let n_pos = n_pos.min(count);
    let n_neg = count - n_pos;
    if n_neg > 0 && identities.len() < 2 {
        return Err(Error::Domain(
            "negative pairs need at least 2 identities".into(),
        ));
    }
    let side = identities[0].prototype.shape()[0];
    let mut rng = RngStream::root(seed);
    let mut images = Vec::with_capacity(2 * count);
    let mut pairs = Vec::with_capacity(count);
    let push_image = |img: RealArray, images: &mut Vec<RealArray>| -> usize {
        images.push(img);
        images.len() - 1
    };
    for _ in 0..n_pos {
        let id = rng.below(identities.len());
        let a = push_image(sample_image(&identities[id], sigma, &mut rng)?, &mut images);
        let b = push_image(sample_image(&identities[id], sigma, &mut rng)?, &mut images);
        pairs.push(PairRef {
            alpha: a,
            beta: b,
            y: true,
            alpha_identity: id,
            beta_identity: id,
        });
    }
    for _ in 0..n_neg {
        let i = rng.below(identities.len());
        let mut j = rng.below(identities.len() - 1);
        if j >= i {
            j += 1;
        }
        let a = push_image(sample_image(&identities[i], sigma, &mut rng)?, &mut images);
        let b = push_image(sample_image(&identities[j], sigma, &mut rng)?, &mut images);
        pairs.push(PairRef {
            alpha: a,
            beta: b,
            y: false,
            alpha_identity: i,
            beta_identity: j,
        });
    }
    rng.shuffle(&mut pairs);
    Ok(PairSet { side, images, pairs })
}

/// Training triplets: anchor/positive from one identity, negative from
/// another, all freshly sampled.
pub fn make_triplets(
    identities: &[Identity],
    count: usize,
    sigma: f64,
    seed: u64,
) -> Result<Vec<Triplet>> {
    if identities.len() < 2 {
        return Err(Error::Domain("triplets need at least 2 identities".into()));
    }
    let mut rng = RngStream::root(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let a = rng.below(identities.len());
        let mut b = rng.below(identities.len() - 1);
        if b >= a {
            b += 1;
        }
        out.push(Triplet {
            anchor: sample_image(&identities[a], sigma, &mut rng)?,
            positive: sample_image(&identities[a], sigma, &mut rng)?,
            negative: sample_image(&identities[b], sigma, &mut rng)?,
        });
    }
    Ok(out)
}

/// Fully built dataset with its generation parameters.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub identities: Vec<Identity>,
    pub set: PairSet,
}

/// Generates the dataset described by `config`.
pub fn build(config: &DatasetConfig) -> Result<Dataset> {
    let identities = make_prototypes(config.identities, config.side, config.seed)?;
    let set = make_pairs(
        &identities,
        config.pairs,
        config.pos_ratio,
        config.sigma,
        // Pair sampling gets its own substream so prototype and pair draws
        // cannot alias.
        config.seed ^ 0x9e37_79b9_7f4a_7c15,
    )?;
    Ok(Dataset {
        config: config.clone(),
        identities,
        set,
    })
}

#[derive(Serialize, Deserialize)]
struct BlobRef {
    file: String,
    sha256: String,
}

#[derive(Serialize, Deserialize)]
struct DatasetManifest {
    format_version: u32,
    config: DatasetConfig,
    prototypes: BlobRef,
    images: BlobRef,
    pairs: Vec<PairRef>,
}

/// Writes dataset.json plus prototypes.rbt and images.rbt under `dir`.
pub fn save(dir: &Path, ds: &Dataset) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| crate::error::io_err(dir, e))?;
    let shape = [ds.config.side, ds.config.side];
    let proto_rows: Vec<&[f64]> = ds.identities.iter().map(|i| i.prototype.data()).collect();
    let proto_bytes = blob::encode(&shape, &proto_rows)?;
    let image_rows: Vec<&[f64]> = ds.set.images.iter().map(|i| i.data()).collect();
    let image_bytes = blob::encode(&shape, &image_rows)?;
    std::fs::write(dir.join("prototypes.rbt"), &proto_bytes)
        .map_err(|e| crate::error::io_err(dir, e))?;
    std::fs::write(dir.join("images.rbt"), &image_bytes)
        .map_err(|e| crate::error::io_err(dir, e))?;
    let manifest = DatasetManifest {
        format_version: DATASET_FORMAT_VERSION,
        config: ds.config.clone(),
        prototypes: BlobRef {
            file: "prototypes.rbt".into(),
            sha256: artifact::sha256_hex(&proto_bytes),
        },
        images: BlobRef {
            file: "images.rbt".into(),
            sha256: artifact::sha256_hex(&image_bytes),
        },
        pairs: ds.set.pairs.clone(),
    };
    artifact::write_json(&dir.join("dataset.json"), &manifest)
}

/// Loads and verifies a saved dataset. Values round-trip through f32.
pub fn load(dir: &Path) -> Result<Dataset> {
    let manifest: DatasetManifest = artifact::read_json(&dir.join("dataset.json"))?;
    if manifest.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            what: "dataset.json".into(),
            found: manifest.format_version,
            supported: DATASET_FORMAT_VERSION,
        });
    }
    let read_checked = |r: &BlobRef| -> Result<Vec<RealArray>> {
        let path = dir.join(&r.file);
        let bytes = std::fs::read(&path).map_err(|e| crate::error::io_err(&path, e))?;
        if artifact::sha256_hex(&bytes) != r.sha256 {
            return Err(Error::ChecksumMismatch(path.display().to_string()));
        }
        let b = blob::decode(&bytes, &r.file)?;
        b.rows
            .into_iter()
            .map(|row| RealArray::new(row, b.shape.clone()))
            .collect()
    };
    let protos = read_checked(&manifest.prototypes)?;
    let images = read_checked(&manifest.images)?;
    if protos.len() != manifest.config.identities {
        return Err(Error::ShapeMismatch {
            expected: format!("{} prototypes", manifest.config.identities),
            actual: format!("{}", protos.len()),
        });
    }
    let identities = protos
        .into_iter()
        .enumerate()
        .map(|(id, prototype)| Identity { id, prototype })
        .collect();
    Ok(Dataset {
        set: PairSet {
            side: manifest.config.side,
            images,
            pairs: manifest.pairs,
        },
        config: manifest.config,
        identities,
    })
}

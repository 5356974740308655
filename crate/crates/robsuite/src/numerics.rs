//! Numeric kernels, deterministic RNG streams, and the RBT1 tensor blob
//! format shared by every other module.
//!
//! Invariants enforced here:
//! - `RealArray` entries are finite and `shape` product equals the buffer
//!   length (checked at construction).
//! - All internal math runs in f64; serialized tensors are f32 (RBT1).
//! - `RngStream` wraps ChaCha8, a counter-based generator with a documented,
//!   portable output sequence: identical seeds yield bit-identical streams on
//!   every platform. Worker streams derive from a root seed by index.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major f64 buffer with an explicit shape.
#[derive(Clone, Debug, PartialEq)]
pub struct RealArray {
    data: Vec<f64>,
    shape: Vec<usize>,
}

impl RealArray {
    /// Builds an array, validating that every entry is finite and the shape
    /// product matches the buffer length.
    pub fn new(data: Vec<f64>, shape: Vec<usize>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{shape:?} ({expected} elements)"),
                actual: format!("{} elements", data.len()),
            });
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("array entry {bad}")));
        }
        Ok(Self { data, shape })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            data: vec![0.0; n],
            shape: shape.to_vec(),
        }
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access to the buffer. The caller must keep entries finite.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rows of a 2-d array.
    pub fn rows(&self) -> usize {
        debug_assert_eq!(self.shape.len(), 2);
        self.shape[0]
    }

    /// Columns of a 2-d array.
    pub fn cols(&self) -> usize {
        debug_assert_eq!(self.shape.len(), 2);
        self.shape[1]
    }

    /// Element of a 2-d array.
    pub fn at2(&self, r: usize, c: usize) -> f64 {
        debug_assert_eq!(self.shape.len(), 2);
        self.data[r * self.shape[1] + c]
    }
}

/// Deterministic RNG stream: ChaCha8 seeded from a root seed, with
/// independent substreams selected by index.
#[derive(Clone, Debug)]
pub struct RngStream {
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn root(seed: u64) -> Self {
        Self::substream(seed, 0)
    }

    /// Substream `index` of root `seed`. Distinct indices give independent,
    /// reproducible streams; parallel workers each take their own index.
    pub fn substream(seed: u64, index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index);
        Self { rng }
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform in [lo, hi).
    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal scaled to `mean` and `sd`.
    pub fn normal(&mut self, mean: f64, sd: f64) -> f64 {
        let z: f64 = StandardNormal.sample(&mut self.rng);
        mean + sd * z
    }

    /// Uniform integer in [0, n).
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        self.rng.random_range(0..n)
    }

    pub fn chance(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Binomial(n, p) draw.
    pub fn binomial(&mut self, n: u64, p: f64) -> u64 {
        debug_assert!((0.0..=1.0).contains(&p));
        rand_distr::Binomial::new(n, p)
            .expect("validated binomial parameters")
            .sample(&mut self.rng)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.random::<u64>()
    }

    /// Fisher-Yates shuffle driven by this stream.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }

    /// `k` distinct indices from [0, n), in draw order.
    pub fn distinct_below(&mut self, k: usize, n: usize) -> Vec<usize> {
        debug_assert!(k <= n);
        // Floyd's algorithm: O(k) memory, no full permutation.
        let mut seen = std::collections::HashSet::with_capacity(k);
        let mut out = Vec::with_capacity(k);
        for j in (n - k)..n {
            let t = self.below(j + 1);
            let pick = if seen.contains(&t) { j } else { t };
            seen.insert(pick);
            out.push(pick);
        }
        out
    }
}

/// Dot product; lengths must match.
pub fn dot(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{}", a.len()),
            actual: format!("{}", b.len()),
        });
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).sum())
}

/// Lp norm for p >= 1, or the max norm when `p` is positive infinity.
pub fn norm_p(x: &[f64], p: f64) -> Result<f64> {
    if p.is_infinite() && p > 0.0 {
        return Ok(x.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    }
    if !(p >= 1.0) || p.is_nan() {
        return Err(Error::Domain(format!("norm order p = {p}, need p >= 1")));
    }
    if p == 1.0 {
        return Ok(x.iter().map(|v| v.abs()).sum());
    }
    if p == 2.0 {
        return Ok(x.iter().map(|v| v * v).sum::<f64>().sqrt());
    }
    Ok(x.iter()
        .map(|v| v.abs().powf(p))
        .sum::<f64>()
        .powf(1.0 / p))
}

/// Pearson correlation via centered sums. Constant input is an error, never
/// silently zero: a selection objective must not treat it as signal.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{}", a.len()),
            actual: format!("{}", b.len()),
        });
    }
    if a.len() < 2 {
        return Err(Error::Degenerate(format!(
            "pearson needs at least 2 points, got {}",
            a.len()
        )));
    }
    let constant = |s: &[f64]| s.iter().all(|v| *v == s[0]);
    if constant(a) || constant(b) {
        return Err(Error::Degenerate("pearson over constant series".into()));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        let dx = x - ma;
        let dy = y - mb;
        cov += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::Degenerate("pearson over constant series".into()));
    }
    Ok(cov / (va * vb).sqrt())
}

/// Bilinear sample of a 2-d array at continuous coordinates, plus analytic
/// partial derivatives with respect to the coordinates.
#[derive(Clone, Copy, Debug)]
pub struct BilinearSample {
    pub value: f64,
    /// d value / d u (row coordinate); 0 outside the valid range (border clamp).
    pub du: f64,
    /// d value / d v (column coordinate); 0 outside the valid range.
    pub dv: f64,
}

/// Samples `img` at row coordinate `u`, column coordinate `v`. Coordinates
/// are clamped to the border; clamped directions get zero derivative.
pub fn bilinear_sample(img: &RealArray, u: f64, v: f64) -> BilinearSample {
    debug_assert_eq!(img.shape().len(), 2);
    let h = img.rows();
    let w = img.cols();
    let u_max = (h - 1) as f64;
    let v_max = (w - 1) as f64;
    let u_in = (0.0..=u_max).contains(&u);
    let v_in = (0.0..=v_max).contains(&v);
    let uc = u.clamp(0.0, u_max);
    let vc = v.clamp(0.0, v_max);
    let r0 = if h > 1 { (uc.floor() as usize).min(h - 2) } else { 0 };
    let c0 = if w > 1 { (vc.floor() as usize).min(w - 2) } else { 0 };
    let fu = uc - r0 as f64;
    let fv = vc - c0 as f64;
    let r1 = (r0 + 1).min(h - 1);
    let c1 = (c0 + 1).min(w - 1);
    let p00 = img.at2(r0, c0);
    let p01 = img.at2(r0, c1);
    let p10 = img.at2(r1, c0);
    let p11 = img.at2(r1, c1);
    let value = (1.0 - fu) * ((1.0 - fv) * p00 + fv * p01) + fu * ((1.0 - fv) * p10 + fv * p11);
    let du = if u_in && h > 1 {
        (1.0 - fv) * (p10 - p00) + fv * (p11 - p01)
    } else {
        0.0
    };
    let dv = if v_in && w > 1 {
        (1.0 - fu) * (p01 - p00) + fu * (p11 - p10)
    } else {
        0.0
    };
    BilinearSample { value, du, dv }
}

/// Central-difference check of an analytic gradient. Returns the maximum over
/// coordinates of |central - analytic| / (|analytic| + 1e-8).
pub fn finite_diff_check<F, G>(f: F, grad_f: G, x: &[f64], h: f64) -> f64
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    let analytic = grad_f(x);
    debug_assert_eq!(analytic.len(), x.len());
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let fp = f(&probe);
        probe[i] = x[i] - h;
        let fm = f(&probe);
        probe[i] = x[i];
        let central = (fp - fm) / (2.0 * h);
        let err = (central - analytic[i]).abs() / (analytic[i].abs() + 1e-8);
        worst = worst.max(err);
    }
    worst
}

/// RBT1 tensor blobs: `RBT1` magic, u32 LE header length, UTF-8 JSON header
/// `{"count":N,"dtype":"f32","shape":[...]}` with sorted keys, then `count`
/// row-major little-endian f32 tensors of the given shape.
pub mod blob {
    use super::*;
    use std::path::Path;

    pub const MAGIC: [u8; 4] = *b"RBT1";

    #[derive(Serialize, Deserialize)]
    struct Header {
        count: usize,
        dtype: String,
        shape: Vec<usize>,
    }

    /// Decoded blob: declared shape plus one f64 row per stored tensor.
    pub struct Blob {
        pub shape: Vec<usize>,
        pub rows: Vec<Vec<f64>>,
    }

    /// Encodes tensors (all of `shape`) into blob bytes. Values are cast to
    /// f32; the f64 -> f32 -> f64 round trip is idempotent, which keeps
    /// repeated save/load cycles byte-identical.
    pub fn encode(shape: &[usize], rows: &[&[f64]]) -> Result<Vec<u8>> {
        let per: usize = shape.iter().product();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != per {
                return Err(Error::ShapeMismatch {
                    expected: format!("{per} elements per tensor"),
                    actual: format!("{} elements in tensor {i}", row.len()),
                });
            }
        }
        let header = Header {
            count: rows.len(),
            dtype: "f32".into(),
            shape: shape.to_vec(),
        };
        // Through Value so object keys serialize sorted.
        let header_json = serde_json::to_string(&serde_json::to_value(&header)?)?;
        let header_bytes = header_json.as_bytes();
        let mut out = Vec::with_capacity(8 + header_bytes.len() + 4 * per * rows.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&(header_bytes.len() as u32).to_le_bytes());
        out.extend_from_slice(header_bytes);
        for row in rows {
            for v in row.iter() {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    /// Decodes blob bytes. `what` names the blob in error messages.
    pub fn decode(bytes: &[u8], what: &str) -> Result<Blob> {
        let fmt = |detail: &str| Error::Format {
            what: what.to_string(),
            detail: detail.to_string(),
        };
        if bytes.len() < 8 {
            return Err(Error::Truncated {
                what: what.to_string(),
                expected: 8,
                actual: bytes.len(),
            });
        }
        if bytes[0..4] != MAGIC {
            return Err(fmt("bad magic, expected RBT1"));
        }
        let header_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        if bytes.len() < 8 + header_len {
            return Err(Error::Truncated {
                what: what.to_string(),
                expected: 8 + header_len,
                actual: bytes.len(),
            });
        }
        let header: Header = serde_json::from_slice(&bytes[8..8 + header_len])
            .map_err(|e| fmt(&format!("bad header json: {e}")))?;
        if header.dtype != "f32" {
            return Err(fmt(&format!("unsupported dtype {}", header.dtype)));
        }
        let per: usize = header.shape.iter().product();
        let expected = 8 + header_len + 4 * per * header.count;
        if bytes.len() < expected {
            return Err(Error::Truncated {
                what: what.to_string(),
                expected,
                actual: bytes.len(),
            });
        }
        if bytes.len() > expected {
            return Err(fmt(&format!(
                "trailing bytes: {} past declared payload",
                bytes.len() - expected
            )));
        }
        let mut rows = Vec::with_capacity(header.count);
        let mut off = 8 + header_len;
        for _ in 0..header.count {
            let mut row = Vec::with_capacity(per);
            for _ in 0..per {
                let v = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!("{what}: stored value {v}")));
                }
                row.push(v as f64);
                off += 4;
            }
            rows.push(row);
        }
        Ok(Blob {
            shape: header.shape,
            rows,
        })
    }

    pub fn write(path: &Path, shape: &[usize], rows: &[&[f64]]) -> Result<()> {
        let bytes = encode(shape, rows)?;
        std::fs::write(path, bytes).map_err(|e| crate::error::io_err(path, e))
    }

    pub fn read(path: &Path) -> Result<Blob> {
        let bytes = std::fs::read(path).map_err(|e| crate::error::io_err(path, e))?;
        decode(&bytes, &path.display().to_string())
    }

    /// Reads a blob and returns its tensors as `RealArray`s.
    pub fn read_arrays(path: &Path) -> Result<Vec<RealArray>> {
        let blob = read(path)?;
        blob.rows
            .into_iter()
            .map(|row| RealArray::new(row, blob.shape.clone()))
            .collect()
    }
}

pub fn clip01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

//! Synthetic generators, IDX ingestion, plain-text and binary point files,
//! and train/validation splitting.

use std::f64::consts::PI;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{shape_err, Error, Result};
use crate::rng::{self, tag};
use crate::tensor::Tensor;

/// A named point set with an optional train/validation split.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub data: Tensor,
    pub labels: Option<Vec<u8>>,
    /// Mode centers of synthetic mixtures, one per row.
    pub centers: Option<Tensor>,
    /// `(height, width)` for image data.
    pub image_shape: Option<(usize, usize)>,
    pub train_idx: Vec<usize>,
    pub val_idx: Vec<usize>,
}

impl Dataset {
    /// Wraps `data` with every row in the training split.
    pub fn new(name: impl Into<String>, data: Tensor) -> Result<Self> {
        if data.ndim() != 2 {
            return shape_err(format!("dataset must be n × D, got {:?}", data.shape()));
        }
        if !data.is_finite() {
            return Err(Error::Format("dataset contains non-finite values".into()));
        }
        let n = data.rows();
        Ok(Self {
            name: name.into(),
            data,
            labels: None,
            centers: None,
            image_shape: None,
            train_idx: (0..n).collect(),
            val_idx: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.data.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.data.cols()
    }

    pub fn train(&self) -> Tensor {
        self.data.select_rows(&self.train_idx).expect("valid indices")
    }

    /// Validation rows, or the training rows when no split was made.
    pub fn validation(&self) -> Tensor {
        if self.val_idx.is_empty() {
            self.train()
        } else {
            self.data.select_rows(&self.val_idx).expect("valid indices")
        }
    }

    /// FNV-1a hash of the raw data bits.
    pub fn fingerprint(&self) -> u64 {
        fingerprint(self.data.data())
    }
}

pub(crate) fn fingerprint(values: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        for b in v.to_bits().to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

/// Equal-weight mixture of `k_modes` isotropic Gaussians centered at angles
/// `2πj/k` on a circle of the given radius.
pub fn gaussian_ring(k_modes: usize, radius: f64, std: f64, n: usize, seed: u64) -> Result<Dataset> {
    if k_modes == 0 {
        return Err(Error::InvalidArgument("gaussian_ring needs k_modes ≥ 1".into()));
    }
    if !(std >= 0.0) {
        return Err(Error::InvalidArgument(format!("negative std {std}")));
    }
    let centers: Vec<[f64; 2]> = (0..k_modes)
        .map(|j| {
            let a = 2.0 * PI * j as f64 / k_modes as f64;
            [radius * a.cos(), radius * a.sin()]
        })
        .collect();
    let mut r = rng::stream(seed, tag::DATA);
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let j = r.gen_range(0..k_modes);
        let ex: f64 = StandardNormal.sample(&mut r);
        let ey: f64 = StandardNormal.sample(&mut r);
        data.push(centers[j][0] + std * ex);
        data.push(centers[j][1] + std * ey);
        labels.push((j % 256) as u8);
    }
    let mut ds = Dataset::new("ring", Tensor::matrix(n, 2, data)?)?;
    ds.labels = Some(labels);
    ds.centers = Some(Tensor::matrix(k_modes, 2, centers.concat())?);
    Ok(ds)
}

/// Two interleaved half circles: the upper arc `(cos t, sin t)` and the lower
/// arc `(1 − cos t, 0.5 − sin t)` for `t ∈ [0, π]`, plus Gaussian noise.
pub fn two_moons(n: usize, noise_std: f64, seed: u64) -> Result<Dataset> {
    let mut r = rng::stream(seed, tag::DATA);
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let t = r.gen_range(0.0..=PI);
        let upper = i % 2 == 0;
        let (x, y) = if upper {
            (t.cos(), t.sin())
        } else {
            (1.0 - t.cos(), 0.5 - t.sin())
        };
        let ex: f64 = StandardNormal.sample(&mut r);
        let ey: f64 = StandardNormal.sample(&mut r);
        data.push(x + noise_std * ex);
        data.push(y + noise_std * ey);
        labels.push(u8::from(!upper));
    }
    let mut ds = Dataset::new("moons", Tensor::matrix(n, 2, data)?)?;
    ds.labels = Some(labels);
    Ok(ds)
}

/// Uniform points on the "black" cells of a `grid × grid` board of unit
/// cells spanning `[−grid/2, grid/2]²`. Cell `(i, j)` is black when `i + j`
/// is even.
pub fn checkerboard(n: usize, grid: usize, seed: u64) -> Result<Dataset> {
    if grid == 0 {
        return Err(Error::InvalidArgument("checkerboard needs grid ≥ 1".into()));
    }
    let cells: Vec<(usize, usize)> = (0..grid)
        .flat_map(|i| (0..grid).map(move |j| (i, j)))
        .filter(|(i, j)| (i + j) % 2 == 0)
        .collect();
    let half = grid as f64 / 2.0;
    let mut r = rng::stream(seed, tag::DATA);
    let mut data = Vec::with_capacity(2 * n);
    for _ in 0..n {
        let (i, j) = cells[r.gen_range(0..cells.len())];
        data.push(i as f64 + r.gen::<f64>() - half);
        data.push(j as f64 + r.gen::<f64>() - half);
    }
    Dataset::new("checkerboard", Tensor::matrix(n, 2, data)?)
}

/// Random `dim × dim` orthogonal matrix (Gram–Schmidt on Gaussian columns).
pub fn random_rotation(dim: usize, seed: u64) -> Tensor {
    let mut r = rng::stream(seed, tag::PROJECTION);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(dim);
    while basis.len() < dim {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut r)).collect();
        for _ in 0..2 {
            for b in &basis {
                let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    Tensor::matrix(dim, dim, basis.concat()).expect("dim × dim")
}

/// Zero-pads every point to `dim` coordinates and applies a fixed random
/// rotation. Mode centers are mapped the same way.
pub fn embed_rotated(ds: &Dataset, dim: usize, seed: u64) -> Result<Dataset> {
    if dim < ds.dim() {
        return Err(Error::InvalidArgument(format!(
            "cannot embed {}-dimensional data into {dim} dimensions",
            ds.dim()
        )));
    }
    let rot = random_rotation(dim, seed);
    let lift = |t: &Tensor| -> Result<Tensor> {
        let mut padded = Tensor::zeros(&[t.rows(), dim]);
        for i in 0..t.rows() {
            padded.row_mut(i)[..t.cols()].copy_from_slice(t.row(i));
        }
        padded.matmul(&rot)
    };
    let mut out = ds.clone();
    out.name = format!("{}{dim}", ds.name);
    out.data = lift(&ds.data)?;
    out.centers = ds.centers.as_ref().map(lift).transpose()?;
    out.image_shape = None;
    Ok(out)
}

/// Seeded shuffle split; `round(fraction · n)` rows go to validation.
pub fn split(ds: &Dataset, validation_fraction: f64, seed: u64) -> Result<Dataset> {
    if !(validation_fraction > 0.0 && validation_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "validation fraction must be in (0, 1), got {validation_fraction}"
        )));
    }
    let n = ds.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, tag::SPLIT));
    let n_val = (validation_fraction * n as f64).round() as usize;
    let mut out = ds.clone();
    out.val_idx = idx[..n_val].to_vec();
    out.train_idx = idx[n_val..].to_vec();
    Ok(out)
}

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

/// Reads an IDX image file (and optionally its label file). Gzipped files are
/// recognized by their magic bytes. Pixels are scaled to `[0, 1]`; `limit`
/// keeps only the first records.
pub fn load_idx(images: &Path, labels: Option<&Path>, limit: Option<usize>) -> Result<Dataset> {
    let bytes = read_maybe_gz(images)?;
    let (dims, body) = parse_idx(&bytes, IDX_IMAGES)?;
    let [n, h, w] = dims[..] else {
        return Err(Error::Format(format!("image file has {} dimensions, expected 3", dims.len())));
    };
    let keep = limit.map_or(n, |l| l.min(n));
    let px = h * w;
    let data = body[..keep * px].iter().map(|&b| f64::from(b) / 255.0).collect();
    let mut ds = Dataset::new("mnist", Tensor::matrix(keep, px, data)?)?;
    ds.image_shape = Some((h, w));
    if let Some(path) = labels {
        let bytes = read_maybe_gz(path)?;
        let (ldims, lbody) = parse_idx(&bytes, IDX_LABELS)?;
        if ldims.len() != 1 || ldims[0] != n {
            return Err(Error::Format(format!(
                "label file holds {ldims:?} records for {n} images"
            )));
        }
        ds.labels = Some(lbody[..keep].to_vec());
    }
    Ok(ds)
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Splits an IDX byte stream into its dimension sizes and payload.
pub fn parse_idx(bytes: &[u8], expected_magic: u32) -> Result<(Vec<usize>, &[u8])> {
    if bytes.len() < 4 {
        return Err(Error::Length("IDX file shorter than its magic number".into()));
    }
    let magic = u32::from_be_bytes(bytes[..4].try_into().unwrap());
    if magic != expected_magic {
        return Err(Error::Format(format!(
            "IDX magic {magic:#010x}, expected {expected_magic:#010x}"
        )));
    }
    let ndims = (magic & 0xff) as usize;
    let header = 4 + 4 * ndims;
    if bytes.len() < header {
        return Err(Error::Length("IDX header truncated".into()));
    }
    let dims: Vec<usize> = (0..ndims)
        .map(|i| u32::from_be_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize)
        .collect();
    let need: usize = dims.iter().product();
    let body = &bytes[header..];
    if body.len() < need {
        return Err(Error::Length(format!(
            "IDX payload has {} bytes, header promises {need}",
            body.len()
        )));
    }
    Ok((dims, &body[..need]))
}

/// Writes one point per line, coordinates separated by commas, each in the
/// shortest decimal form that parses back to the same value.
pub fn write_csv(path: &Path, data: &Tensor) -> Result<()> {
    let mut out = String::new();
    for row in data.iter_rows() {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&format!("{v:?}"));
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Tensor> {
    let text = fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Format(format!(
                    "{}:{}: {} columns, expected {}",
                    path.display(),
                    lineno + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Format(format!("{}: no points", path.display())));
    }
    Tensor::from_rows(&rows)
}

const LCWB_MAGIC: &[u8; 4] = b"LCWB";

/// Raw binary points: magic `LCWB`, `u32` n, `u32` D, `u32` reserved, then
/// `n · D` little-endian `f32` values, row-major.
pub fn write_lcwb(path: &Path, data: &Tensor) -> Result<()> {
    let (n, d) = (data.rows(), data.cols());
    let mut buf = Vec::with_capacity(16 + 4 * n * d);
    buf.extend_from_slice(LCWB_MAGIC);
    buf.extend_from_slice(&(n as u32).to_le_bytes());
    buf.extend_from_slice(&(d as u32).to_le_bytes());
    buf.extend_from_slice(&0u32.to_le_bytes());
    for v in data.data() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn read_lcwb(path: &Path) -> Result<Tensor> {
    let buf = fs::read(path)?;
    if buf.len() < 16 {
        return Err(Error::Length(format!("{}: header truncated", path.display())));
    }
    if &buf[..4] != LCWB_MAGIC {
        return Err(Error::Format(format!("{}: not an LCWB file", path.display())));
    }
    let word = |i: usize| u32::from_le_bytes(buf[4 * i..4 * i + 4].try_into().unwrap()) as usize;
    let (n, d) = (word(1), word(2));
    let body = &buf[16..];
    if body.len() != 4 * n * d {
        return Err(Error::Length(format!(
            "{}: {} payload bytes for {n} × {d} points",
            path.display(),
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    Tensor::matrix(n, d, data)
}

/// Reads points by extension: `.csv` as text, anything else as LCWB.
pub fn read_points(path: &Path) -> Result<Tensor> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => read_csv(path),
        _ => read_lcwb(path),
    }
}

//! Synthetic dataset generators and the IDX image ingestion pipeline.

use crate::scalar::Scalar;
use ndarray::{s, Array1, Array2, Array3, ArrayView1, ArrayView2, Axis, Order};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

/// Paired (condition, target) rows; the empirical joint one experiment
/// trains on.
#[derive(Clone, Debug)]
pub struct DatasetSplit<S: Scalar> {
    pub conditions: Array2<S>,
    pub targets: Array2<S>,
    pub name: String,
}

impl<S: Scalar> DatasetSplit<S> {
    pub fn new(conditions: Array2<S>, targets: Array2<S>, name: impl Into<String>) -> Self {
        assert_eq!(conditions.nrows(), targets.nrows(), "row count mismatch");
        assert!(
            conditions.iter().chain(targets.iter()).all(|v| !v.is_nan()),
            "dataset contains NaN"
        );
        DatasetSplit { conditions, targets, name: name.into() }
    }

    pub fn len(&self) -> usize {
        self.conditions.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn nx(&self) -> usize {
        self.conditions.ncols()
    }

    pub fn ny(&self) -> usize {
        self.targets.ncols()
    }

    /// CSV export: header `x0..x{Nx-1},y0..y{Ny-1}`, one datum per line,
    /// decimal with 9 significant digits.
    pub fn export_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        let header: Vec<String> = (0..self.nx())
            .map(|i| format!("x{i}"))
            .chain((0..self.ny()).map(|i| format!("y{i}")))
            .collect();
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.len() {
            let row: Vec<String> = self
                .conditions
                .row(i)
                .iter()
                .chain(self.targets.row(i).iter())
                .map(|v| format!("{:.8e}", v.to_f64_c()))
                .collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// One condition interval of the piecewise toy generator: conditions are
/// uniform on `[low, high)` and targets scatter around `modes`.
#[derive(Clone, Debug)]
pub struct Interval<S: Scalar> {
    pub low: S,
    pub high: S,
    pub modes: Vec<S>,
}

/// Geometry of the 1-D one-to-many toy dataset. The default reproduces a
/// staircase with mode counts 1/3/1/2 and abrupt changes at the interval
/// boundaries.
#[derive(Clone, Debug)]
pub struct ToySpec<S: Scalar> {
    pub intervals: Vec<Interval<S>>,
    pub sigma: S,
    pub samples_per_interval: usize,
}

impl<S: Scalar> ToySpec<S> {
    pub fn new(intervals: Vec<Interval<S>>, sigma: S, samples_per_interval: usize) -> Self {
        assert!(!intervals.is_empty());
        assert!(sigma >= S::zero());
        assert!(samples_per_interval >= 1);
        for w in intervals.windows(2) {
            assert!(w[0].high <= w[1].low, "intervals must be disjoint and ordered");
        }
        for iv in &intervals {
            assert!(iv.low < iv.high, "empty interval");
            assert!(!iv.modes.is_empty(), "interval without modes");
        }
        ToySpec { intervals, sigma, samples_per_interval }
    }

    /// The interval containing `x`. Half-open `[low, high)` except the last
    /// interval, which includes its upper end.
    pub fn interval_of(&self, x: S) -> Option<&Interval<S>> {
        let last = self.intervals.len() - 1;
        self.intervals.iter().enumerate().find_map(|(i, iv)| {
            let inside = x >= iv.low && (x < iv.high || (i == last && x == iv.high));
            inside.then_some(iv)
        })
    }
}

impl<S: Scalar> Default for ToySpec<S> {
    fn default() -> Self {
        let m = |v: &[f64]| v.iter().map(|&x| S::c(x)).collect();
        ToySpec::new(
            vec![
                Interval { low: S::c(0.0), high: S::c(1.0), modes: m(&[0.5]) },
                Interval { low: S::c(1.0), high: S::c(2.0), modes: m(&[0.2, 0.5, 0.8]) },
                Interval { low: S::c(2.0), high: S::c(3.0), modes: m(&[0.5]) },
                Interval { low: S::c(3.0), high: S::c(4.0), modes: m(&[0.25, 0.75]) },
            ],
            S::c(0.02),
            250,
        )
    }
}

/// Four 2-D Gaussians at (±2, ±2) with σ = 0.1, class-balanced; the
/// condition is the constant scalar 0 (an unconditional model in CLVM
/// clothing). `n` must be a multiple of 4 so the balance is exact.
pub fn gen_four_gaussians<S: Scalar>(n: usize, seed: u64) -> DatasetSplit<S> {
    assert!(n >= 4 && n % 4 == 0, "n must be a positive multiple of 4");
    let means = [(2.0, 2.0), (2.0, -2.0), (-2.0, 2.0), (-2.0, -2.0)];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma = S::c(0.1);
    let mut targets = Array2::zeros((n, 2));
    for i in 0..n {
        let (mx, my) = means[i % 4];
        targets[[i, 0]] = S::c(mx) + sigma * S::standard_normal(&mut rng);
        targets[[i, 1]] = S::c(my) + sigma * S::standard_normal(&mut rng);
    }
    DatasetSplit::new(Array2::zeros((n, 1)), targets, "four_gaussians")
}

/// Piecewise 1-D one-to-many data: condition uniform per interval, target a
/// uniformly chosen mode plus Gaussian noise clipped at ±6σ (so the
/// "targets stay within the mode bands" property is literally true).
pub fn gen_toy_structured<S: Scalar>(spec: &ToySpec<S>, seed: u64) -> DatasetSplit<S> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.intervals.len() * spec.samples_per_interval;
    let mut conditions = Array2::zeros((n, 1));
    let mut targets = Array2::zeros((n, 1));
    let six = S::c(6.0);
    let mut i = 0;
    for iv in &spec.intervals {
        for _ in 0..spec.samples_per_interval {
            let u = S::uniform_01(&mut rng);
            conditions[[i, 0]] = iv.low + (iv.high - iv.low) * u;
            let mode = iv.modes[rng.random_range(0..iv.modes.len())];
            let noise = (spec.sigma * S::standard_normal(&mut rng))
                .max(-six * spec.sigma)
                .min(six * spec.sigma);
            targets[[i, 0]] = mode + noise;
            i += 1;
        }
    }
    DatasetSplit::new(conditions, targets, "toy_structured")
}

/// Errors from IDX ingestion.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("idx format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },
}

fn idx_need(bytes: &[u8], upto: usize) -> Result<(), DataError> {
    if bytes.len() < upto {
        return Err(DataError::Format {
            offset: bytes.len(),
            message: format!("file truncated: have {} bytes, need {upto}", bytes.len()),
        });
    }
    Ok(())
}

fn idx_magic(bytes: &[u8], type_byte: u8, rank: u8) -> Result<(), DataError> {
    idx_need(bytes, 4)?;
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(DataError::Format { offset: 0, message: "first two magic bytes must be zero".into() });
    }
    if bytes[2] != type_byte {
        return Err(DataError::Format {
            offset: 2,
            message: format!("type byte {:#04x}, expected {type_byte:#04x} (unsigned byte)", bytes[2]),
        });
    }
    if bytes[3] != rank {
        return Err(DataError::Format {
            offset: 3,
            message: format!("rank {}, expected {rank}", bytes[3]),
        });
    }
    Ok(())
}

fn idx_dim(bytes: &[u8], at: usize) -> Result<usize, DataError> {
    idx_need(bytes, at + 4)?;
    Ok(u32::from_be_bytes(bytes[at..at + 4].try_into().unwrap()) as usize)
}

/// Read an IDX rank-3 unsigned-byte file (images). Big-endian dimension
/// header; values 0–255.
pub fn load_idx(path: &Path) -> Result<Array3<u8>, DataError> {
    let bytes = std::fs::read(path)?;
    idx_magic(&bytes, 0x08, 3)?;
    let count = idx_dim(&bytes, 4)?;
    let rows = idx_dim(&bytes, 8)?;
    let cols = idx_dim(&bytes, 12)?;
    let need = 16 + count * rows * cols;
    idx_need(&bytes, need)?;
    Ok(Array3::from_shape_vec((count, rows, cols), bytes[16..need].to_vec()).unwrap())
}

/// Read an IDX rank-1 unsigned-byte file (labels).
pub fn load_idx_labels(path: &Path) -> Result<Vec<u8>, DataError> {
    let bytes = std::fs::read(path)?;
    idx_magic(&bytes, 0x08, 1)?;
    let count = idx_dim(&bytes, 4)?;
    idx_need(&bytes, 8 + count)?;
    Ok(bytes[8..8 + count].to_vec())
}

/// Write images in the IDX rank-3 format `load_idx` reads.
pub fn write_idx_images(path: &Path, images: &Array3<u8>) -> std::io::Result<()> {
    let (n, r, c) = images.dim();
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(&[0, 0, 0x08, 3])?;
    for d in [n, r, c] {
        w.write_all(&(d as u32).to_be_bytes())?;
    }
    let std_layout = images.as_standard_layout();
    w.write_all(std_layout.as_slice().unwrap())
}

/// Write labels in the IDX rank-1 format `load_idx_labels` reads.
pub fn write_idx_labels(path: &Path, labels: &[u8]) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(&[0, 0, 0x08, 1])?;
    w.write_all(&(labels.len() as u32).to_be_bytes())?;
    w.write_all(labels)
}

/// Binarization mode for grayscale images.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinarizeMode {
    /// `pixel ≥ threshold·255 → 1`.
    Fixed,
    /// Per-pixel Bernoulli(pixel/255), seeded.
    Stochastic,
}

/// Binarize 0–255 images to {0, 1}.
pub fn binarize(images: &Array3<u8>, threshold: f64, seed: u64, mode: BinarizeMode) -> Array3<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match mode {
        BinarizeMode::Fixed => {
            let cut = threshold * 255.0;
            images.mapv(|p| u8::from(p as f64 >= cut))
        }
        BinarizeMode::Stochastic => {
            images.mapv(|p| u8::from(rng.random_range(0.0..1.0) < p as f64 / 255.0))
        }
    }
}

/// Split a binary 28×28 image into the paper's condition/target parts:
/// condition = bottom 10 rows (flattened 280), target = top 18 rows
/// (flattened 504). Stacking target over condition reconstructs the image.
pub fn split_condition_target<S: Scalar>(image: &ArrayView2<S>) -> (Array1<S>, Array1<S>) {
    assert_eq!(image.dim(), (28, 28), "expected a 28x28 image");
    assert!(
        image.iter().all(|&v| v == S::zero() || v == S::one()),
        "image entries must be 0 or 1"
    );
    let condition = image.slice(s![18..28, ..]).flatten().to_owned();
    let target = image.slice(s![0..18, ..]).flatten().to_owned();
    (condition, target)
}

/// Inverse of [`split_condition_target`]: target rows on top, condition
/// rows below.
pub fn assemble_image<S: Scalar>(target: ArrayView1<'_, S>, condition: ArrayView1<'_, S>) -> Array2<S> {
    assert_eq!(target.len(), 18 * 28, "target width");
    assert_eq!(condition.len(), 10 * 28, "condition width");
    // `to_shape` copies when a view's strides rule out an in-place reshape,
    // so rows of any batch layout are accepted.
    let top = target.to_shape(((18, 28), Order::RowMajor)).unwrap();
    let bottom = condition.to_shape(((10, 28), Order::RowMajor)).unwrap();
    ndarray::concatenate![Axis(0), top.view(), bottom.view()]
}

/// Build a condition/target dataset from a stack of binary 28×28 images.
pub fn split_images<S: Scalar>(binary: &Array3<u8>, name: impl Into<String>) -> DatasetSplit<S> {
    let n = binary.dim().0;
    let mut conditions = Array2::zeros((n, 280));
    let mut targets = Array2::zeros((n, 504));
    for i in 0..n {
        let img = binary.index_axis(Axis(0), i).mapv(|v| S::c(v as f64));
        let (c, t) = split_condition_target(&img.view());
        conditions.row_mut(i).assign(&c);
        targets.row_mut(i).assign(&t);
    }
    DatasetSplit::new(conditions, targets, name)
}

/// 5×7 bitmap font for the procedural digit corpus, one row of 5 bits per
/// line, top to bottom.
const DIGIT_FONT: [[u8; 7]; 10] = [
    [0b01110, 0b10001, 0b10011, 0b10101, 0b11001, 0b10001, 0b01110], // 0
    [0b00100, 0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110], // 1
    [0b01110, 0b10001, 0b00001, 0b00010, 0b00100, 0b01000, 0b11111], // 2
    [0b11111, 0b00010, 0b00100, 0b00010, 0b00001, 0b10001, 0b01110], // 3
    [0b00010, 0b00110, 0b01010, 0b10010, 0b11111, 0b00010, 0b00010], // 4
    [0b11111, 0b10000, 0b11110, 0b00001, 0b00001, 0b10001, 0b01110], // 5
    [0b00110, 0b01000, 0b10000, 0b11110, 0b10001, 0b10001, 0b01110], // 6
    [0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b01000, 0b01000], // 7
    [0b01110, 0b10001, 0b10001, 0b01110, 0b10001, 0b10001, 0b01110], // 8
    [0b01110, 0b10001, 0b10001, 0b01111, 0b00001, 0b00010, 0b01100], // 9
];

/// Procedurally rendered digit images in the MNIST container shape:
/// 28×28 grayscale, labels 0–9, class-balanced, deterministic in the seed.
/// Glyphs are a 5×7 font scaled ×3 with random position jitter, random
/// stroke intensity, and light pixel noise. Serves as a self-contained
/// stand-in corpus when no real IDX files are available.
pub fn synthetic_digits(n: usize, seed: u64) -> (Array3<u8>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Array3::zeros((n, 28, 28));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let digit = (i % 10) as u8;
        labels.push(digit);
        // 15×21 glyph inside 28×28: jitter keeps it fully visible.
        let ox = rng.random_range(0..=13usize);
        let oy = rng.random_range(0..=7usize);
        let ink: u8 = rng.random_range(180..=255);
        let mut img = images.index_axis_mut(Axis(0), i);
        for (gy, rowbits) in DIGIT_FONT[digit as usize].iter().enumerate() {
            for gx in 0..5 {
                if rowbits >> (4 - gx) & 1 == 1 {
                    for dy in 0..3 {
                        for dx in 0..3 {
                            img[[oy + gy * 3 + dy, ox + gx * 3 + dx]] = ink;
                        }
                    }
                }
            }
        }
        for px in img.iter_mut() {
            if rng.random_range(0.0..1.0) < 0.02 {
                *px = rng.random_range(0..=255u8);
            }
        }
    }
    (images, labels)
}

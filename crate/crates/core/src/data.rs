//! Datasets: MNIST IDX files, train/valid/test splits, and a synthetic set
//! of noisy 8×8 glyphs used when no IDX files are supplied.

use std::fs;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{invalid, Error, Result};
use crate::sampling::Rng;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

/// `N` items of dimension `D`, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    items: Vec<f64>,
    dim: usize,
    /// Image extents when the items are images, for writing them back.
    image_dims: Option<(usize, usize)>,
    splits: Option<Vec<Split>>,
    pub provenance: String,
}

impl Dataset {
    pub fn new(items: Vec<f64>, dim: usize, provenance: impl Into<String>) -> Result<Self> {
        if dim == 0 || items.len() % dim != 0 {
            return Err(invalid(format!("{} values do not form items of dimension {dim}", items.len())));
        }
        if items.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(invalid("dataset values must lie in [0, 1]"));
        }
        Ok(Self {
            items,
            dim,
            image_dims: None,
            splits: None,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.items.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn item(&self, i: usize) -> &[f64] {
        &self.items[i * self.dim..(i + 1) * self.dim]
    }

    pub fn splits(&self) -> Option<&[Split]> {
        self.splits.as_deref()
    }

    /// Indices of the items in `split`, in dataset order.
    pub fn indices(&self, split: Split) -> Vec<usize> {
        match &self.splits {
            Some(s) => (0..self.len()).filter(|&i| s[i] == split).collect(),
            None if split == Split::Train => (0..self.len()).collect(),
            None => Vec::new(),
        }
    }

    /// Stacks the chosen items into a `len×D` matrix.
    pub fn batch(&self, indices: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.item(i));
        }
        Tensor::matrix(indices.len(), self.dim, data).unwrap()
    }

    /// Thresholds every value at 0.5 into `{0, 1}`.
    pub fn binarized(&self) -> Self {
        let mut out = self.clone();
        out.items.iter_mut().for_each(|v| *v = if *v >= 0.5 { 1.0 } else { 0.0 });
        out
    }
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Idx("truncated header".into()))
}

/// Parses an IDX image container held in memory.
pub fn parse_idx_images(bytes: &[u8], limit: Option<usize>) -> Result<Dataset> {
    let magic = read_u32(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Idx(format!("bad magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}")));
    }
    let count = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    if rows == 0 || cols == 0 {
        return Err(Error::Idx(format!("degenerate image size {rows}x{cols}")));
    }
    let dim = rows * cols;
    let payload = &bytes[16..];
    if payload.len() != count * dim {
        return Err(Error::Idx(format!(
            "{count} images of {rows}x{cols} need {} payload bytes, found {}",
            count * dim,
            payload.len()
        )));
    }
    let keep = limit.map_or(count, |l| l.min(count));
    let items = payload[..keep * dim].iter().map(|&b| b as f64 / 255.0).collect();
    let mut ds = Dataset::new(items, dim, "mnist-idx")?;
    ds.image_dims = Some((rows, cols));
    Ok(ds)
}

pub fn load_idx(path: &Path, limit: Option<usize>) -> Result<Dataset> {
    let bytes = fs::read(path)?;
    let mut ds = parse_idx_images(&bytes, limit)?;
    ds.provenance = format!("idx:{}", path.display());
    Ok(ds)
}

/// Parses an IDX label file. Labels are not used by the unsupervised models.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = read_u32(bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Idx(format!("bad magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}")));
    }
    let count = read_u32(bytes, 4)? as usize;
    let payload = &bytes[8..];
    if payload.len() != count {
        return Err(Error::Idx(format!("{count} labels declared, {} present", payload.len())));
    }
    Ok(payload.to_vec())
}

/// Serializes an image dataset back into IDX bytes.
pub fn encode_idx_images(ds: &Dataset) -> Result<Vec<u8>> {
    let (rows, cols) = ds
        .image_dims
        .ok_or_else(|| invalid("dataset carries no image dimensions"))?;
    let mut out = Vec::with_capacity(16 + ds.items.len());
    for v in [IDX_IMAGES_MAGIC, ds.len() as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend(ds.items.iter().map(|v| (v * 255.0).round() as u8));
    Ok(out)
}

/// Random split with sizes proportional to `ratio`.
///
/// Sizes are `⌊N r_i / Σr⌋` with the leftover items handed to the splits
/// with the largest fractional parts, so each is within one item of exact.
pub fn split(ds: &Dataset, ratio: [f64; 3], rng: &mut Rng) -> Result<Dataset> {
    if ratio.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) || ratio.iter().sum::<f64>() <= 0.0 {
        return Err(invalid(format!("split ratios must be nonnegative with positive sum, got {ratio:?}")));
    }
    let n = ds.len();
    let total: f64 = ratio.iter().sum();
    let exact: Vec<f64> = ratio.iter().map(|r| n as f64 * r / total).collect();
    let mut sizes: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..3).filter(|&i| ratio[i] > 0.0).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
    let mut left = n - sizes.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        sizes[i] += 1;
        left -= 1;
    }
    let mut perm: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut perm);
    let mut labels = vec![Split::Train; n];
    for (pos, &i) in perm.iter().enumerate() {
        labels[i] = if pos < sizes[0] {
            Split::Train
        } else if pos < sizes[0] + sizes[1] {
            Split::Valid
        } else {
            Split::Test
        };
    }
    let mut out = ds.clone();
    out.splits = Some(labels);
    Ok(out)
}

const GLYPHS: [[&str; 8]; 10] = [
    [
        "..####..", ".#....#.", "#......#", "#......#", "#......#", "#......#", ".#....#.", "..####..",
    ],
    [
        "...##...", "..###...", ".#.##...", "...##...", "...##...", "...##...", "...##...", ".######.",
    ],
    [
        "..####..", ".#....#.", "......#.", ".....#..", "....#...", "...#....", "..#.....", ".######.",
    ],
    [
        ".#####..", "......#.", "......#.", "..####..", "......#.", "......#.", "......#.", ".#####..",
    ],
    [
        "....##..", "...#.#..", "..#..#..", ".#...#..", "#######.", ".....#..", ".....#..", ".....#..",
    ],
    [
        ".######.", ".#......", ".#......", ".#####..", "......#.", "......#.", ".#....#.", "..####..",
    ],
    [
        "...###..", "..#.....", ".#......", ".#####..", ".#....#.", ".#....#.", ".#....#.", "..####..",
    ],
    [
        ".######.", "......#.", ".....#..", "....#...", "...#....", "...#....", "...#....", "...#....",
    ],
    [
        "..####..", ".#....#.", ".#....#.", "..####..", ".#....#.", ".#....#.", ".#....#.", "..####..",
    ],
    [
        "..####..", ".#....#.", ".#....#.", "..#####.", "......#.", "......#.", ".....#..", "..###...",
    ],
];

pub const GLYPH_DIM: usize = 64;

/// The built-in 8×8 prototypes as `{0, 1}` vectors.
pub fn glyph_prototypes() -> Vec<Vec<f64>> {
    GLYPHS
        .iter()
        .map(|g| g.iter().flat_map(|row| row.chars().map(|c| if c == '#' { 1.0 } else { 0.0 })).collect())
        .collect()
}

/// `per_class` copies of every prototype, each pixel flipped independently
/// with probability `noise`. Items are interleaved by class.
pub fn synth_grid_digits(per_class: usize, noise: f64, rng: &mut Rng) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&noise) {
        return Err(invalid(format!("flip probability must be in [0, 1], got {noise}")));
    }
    let protos = glyph_prototypes();
    let mut items = Vec::with_capacity(per_class * protos.len() * GLYPH_DIM);
    for _ in 0..per_class {
        for p in &protos {
            items.extend(p.iter().map(|&v| if rng.uniform() < noise { 1.0 - v } else { v }));
        }
    }
    let mut ds = Dataset::new(items, GLYPH_DIM, format!("synthetic-glyphs(noise={noise})"))?;
    ds.image_dims = Some((8, 8));
    Ok(ds)
}

//! MNIST ingestion: IDX parsing and serialization, and train/validation/test
//! splits.
//!
//! IDX layout: a big-endian `u32` magic `0x0000_TTNN` (`TT` = element type,
//! `NN` = number of dimensions), then one big-endian `u32` per dimension,
//! then the payload. Only unsigned-byte tensors (`TT = 0x08`) are supported:
//! magic 2051 (`0x803`) for image stacks and 2049 (`0x801`) for label vectors.
//!
//! Error offsets point at the first offending byte; for a truncated payload
//! that is the end of the input, i.e. the first missing byte.

use std::fmt;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;

use crate::error::{Error, Result};
use crate::rng::{Purpose, RngStream};
use crate::tensor::Matrix;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const IMAGE_SIDE: usize = 28;
pub const PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;
pub const CLASSES: usize = 10;

const UBYTE: u8 = 0x08;

/// An unsigned-byte IDX tensor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxTensor {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

impl IdxTensor {
    pub fn magic(&self) -> u32 {
        (u32::from(UBYTE) << 8) | self.dims.len() as u32
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 4 * self.dims.len() + self.data.len());
        out.extend_from_slice(&self.magic().to_be_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_be_bytes());
        }
        out.extend_from_slice(&self.data);
        out
    }
}

fn idx_err(offset: usize, reason: impl Into<String>) -> Error {
    Error::Idx {
        offset,
        reason: reason.into(),
    }
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| idx_err(bytes.len(), "truncated header"))
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxTensor> {
    let magic = be_u32(bytes, 0)?;
    if magic >> 16 != 0 {
        return Err(idx_err(0, format!("bad magic {magic:#010x}")));
    }
    let ty = (magic >> 8) as u8;
    if ty != UBYTE {
        return Err(idx_err(2, format!("unsupported element type {ty:#04x}")));
    }
    let ndims = (magic & 0xff) as usize;
    if ndims == 0 {
        return Err(idx_err(3, "zero dimensions"));
    }
    let mut dims = Vec::with_capacity(ndims);
    let mut total: usize = 1;
    for k in 0..ndims {
        let offset = 4 + 4 * k;
        let d = be_u32(bytes, offset)? as usize;
        total = total
            .checked_mul(d)
            .ok_or_else(|| idx_err(offset, "dimension product overflows"))?;
        dims.push(d);
    }
    let start = 4 + 4 * ndims;
    let available = bytes.len() - start;
    if available < total {
        return Err(idx_err(
            bytes.len(),
            format!("payload truncated: need {total} bytes, have {available}"),
        ));
    }
    if available > total {
        return Err(idx_err(
            start + total,
            format!("{} trailing bytes", available - total),
        ));
    }
    Ok(IdxTensor {
        dims,
        data: bytes[start..].to_vec(),
    })
}

/// Reads a file, transparently inflating gzip input.
pub fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

pub fn read_idx_file(path: &Path) -> Result<IdxTensor> {
    parse_idx(&read_maybe_gz(path)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitTag {
    Train,
    Validation,
    Test,
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitTag::Train => "train",
            SplitTag::Validation => "validation",
            SplitTag::Test => "test",
        })
    }
}

/// Images as an `n x 784` matrix in `[0, 1]` with their labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Matrix,
    pub labels: Vec<usize>,
    pub split: SplitTag,
}

impl Dataset {
    pub fn new(images: Matrix, labels: Vec<usize>, split: SplitTag) -> Result<Self> {
        if images.rows() != labels.len() {
            return Err(Error::invalid(format!(
                "{} images but {} labels",
                images.rows(),
                labels.len()
            )));
        }
        if images.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("pixel values must lie in [0, 1]"));
        }
        Ok(Dataset {
            images,
            labels,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Rows `indices` in order (repeats allowed), keeping the split tag.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            images: self.images.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            split: self.split,
        }
    }
}

fn images_to_matrix(t: &IdxTensor, rows: std::ops::Range<usize>) -> Matrix {
    let data = t.data[rows.start * PIXELS..rows.end * PIXELS]
        .iter()
        .map(|&b| f64::from(b) / 255.0)
        .collect();
    Matrix::new(rows.len(), PIXELS, data).expect("sized by construction")
}

fn check_pair(images: &IdxTensor, labels: &IdxTensor) -> Result<usize> {
    if images.dims.len() != 3 || images.dims[1] != IMAGE_SIDE || images.dims[2] != IMAGE_SIDE {
        return Err(Error::invalid(format!(
            "expected n x 28 x 28 images, got {:?}",
            images.dims
        )));
    }
    if labels.dims.len() != 1 {
        return Err(Error::invalid(format!(
            "expected a label vector, got {:?}",
            labels.dims
        )));
    }
    if images.dims[0] != labels.dims[0] {
        return Err(Error::invalid(format!(
            "{} images but {} labels",
            images.dims[0], labels.dims[0]
        )));
    }
    if let Some(pos) = labels.data.iter().position(|&l| usize::from(l) >= CLASSES) {
        return Err(idx_err(
            8 + pos,
            format!("label {} outside [0, 9]", labels.data[pos]),
        ));
    }
    Ok(labels.dims[0])
}

/// Builds a dataset from parsed image and label tensors.
pub fn dataset_from_idx(
    images: &IdxTensor,
    labels: &IdxTensor,
    split: SplitTag,
) -> Result<Dataset> {
    let n = check_pair(images, labels)?;
    Dataset::new(
        images_to_matrix(images, 0..n),
        labels.data.iter().map(|&l| usize::from(l)).collect(),
        split,
    )
}

/// File locations of the four standard MNIST files.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MnistPaths {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

impl MnistPaths {
    /// Standard file names inside `dir`, preferring `*.gz` when present.
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        let pick = |stem: &str| {
            let gz = dir.join(format!("{stem}.gz"));
            if gz.exists() {
                gz
            } else {
                dir.join(stem)
            }
        };
        MnistPaths {
            train_images: pick("train-images-idx3-ubyte"),
            train_labels: pick("train-labels-idx1-ubyte"),
            test_images: pick("t10k-images-idx3-ubyte"),
            test_labels: pick("t10k-labels-idx1-ubyte"),
        }
    }

    pub fn all_exist(&self) -> bool {
        [
            &self.train_images,
            &self.train_labels,
            &self.test_images,
            &self.test_labels,
        ]
        .iter()
        .all(|p| p.exists())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitSizes {
    pub train: usize,
    pub validation: usize,
    /// `None` takes the whole test file.
    pub test: Option<usize>,
}

impl SplitSizes {
    /// 50000 / 10000 / full test file.
    pub fn full() -> Self {
        SplitSizes {
            train: 50_000,
            validation: 10_000,
            test: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

/// Order of training-file examples used by the split.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SplitOrder {
    /// First `train` examples, then the next `validation`.
    #[default]
    FileOrder,
    /// Same prefix rule after a seeded permutation of the training file.
    Shuffled(u64),
}

/// Contiguous split of the training file into train and validation, plus a
/// prefix of the test file. Pixels are scaled by 1/255.
pub fn split_tensors(
    train_images: &IdxTensor,
    train_labels: &IdxTensor,
    test_images: &IdxTensor,
    test_labels: &IdxTensor,
    sizes: SplitSizes,
    order: SplitOrder,
) -> Result<Splits> {
    let n = check_pair(train_images, train_labels)?;
    let n_test = check_pair(test_images, test_labels)?;
    let needed = sizes
        .train
        .checked_add(sizes.validation)
        .ok_or_else(|| Error::invalid("split size overflow"))?;
    if needed > n {
        return Err(Error::invalid(format!(
            "requested {} train + {} validation examples, file has {n}",
            sizes.train, sizes.validation
        )));
    }
    let test_n = sizes.test.unwrap_or(n_test);
    if test_n > n_test {
        return Err(Error::invalid(format!(
            "requested {test_n} test examples, file has {n_test}"
        )));
    }
    let full = dataset_from_idx(train_images, train_labels, SplitTag::Train)?;
    let mut order_idx: Vec<usize> = (0..n).collect();
    if let SplitOrder::Shuffled(seed) = order {
        RngStream::for_purpose(seed, Purpose::Split, 0).shuffle(&mut order_idx);
    }
    let train = full.subset(&order_idx[..sizes.train]);
    let mut validation = full.subset(&order_idx[sizes.train..needed]);
    validation.split = SplitTag::Validation;
    let test = Dataset::new(
        images_to_matrix(test_images, 0..test_n),
        test_labels.data[..test_n]
            .iter()
            .map(|&l| usize::from(l))
            .collect(),
        SplitTag::Test,
    )?;
    Ok(Splits {
        train,
        validation,
        test,
    })
}

pub fn load_splits(paths: &MnistPaths, sizes: SplitSizes, order: SplitOrder) -> Result<Splits> {
    split_tensors(
        &read_idx_file(&paths.train_images)?,
        &read_idx_file(&paths.train_labels)?,
        &read_idx_file(&paths.test_images)?,
        &read_idx_file(&paths.test_labels)?,
        sizes,
        order,
    )
}

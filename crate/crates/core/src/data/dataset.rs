use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::array::DenseArray;
use crate::data::idx::{read_idx, IMAGE_MAGIC};
use crate::error::{Error, Result};

/// Affine rescaling `y = (x − offset) / scale`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Normalization {
    pub offset: f64,
    pub scale: f64,
}

impl Normalization {
    pub const IDENTITY: Self = Self {
        offset: 0.0,
        scale: 1.0,
    };

    /// Maps bytes `0..=255` onto `[0, 1]`.
    pub const UNIT_BYTES: Self = Self {
        offset: 0.0,
        scale: 255.0,
    };

    /// Maps bytes `0..=255` onto `[−1, 1]`.
    pub const SIGNED_BYTES: Self = Self {
        offset: 127.5,
        scale: 127.5,
    };

    pub fn new(offset: f64, scale: f64) -> Result<Self> {
        if scale == 0.0 || !scale.is_finite() || !offset.is_finite() {
            return Err(Error::Parameter(format!(
                "normalization needs a finite nonzero scale, got ({offset}, {scale})"
            )));
        }
        Ok(Self { offset, scale })
    }

    pub fn normalize(&self, x: f64) -> f64 {
        (x - self.offset) / self.scale
    }

    pub fn denormalize(&self, y: f64) -> f64 {
        y * self.scale + self.offset
    }

    pub fn normalize_array(&self, a: &DenseArray) -> DenseArray {
        a.map(|v| self.normalize(v))
    }

    pub fn denormalize_array(&self, a: &DenseArray) -> DenseArray {
        a.map(|v| self.denormalize(v))
    }
}

/// Disjoint train / validation / test partitions of one dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitDataset {
    pub train: DenseArray,
    pub validation: DenseArray,
    pub test: DenseArray,
    pub provenance: String,
    pub normalization: Normalization,
    /// `(height, width)` when rows are flattened grayscale images.
    pub image_shape: Option<(usize, usize)>,
}

impl SplitDataset {
    pub fn dim(&self) -> usize {
        self.train.row_len()
    }

    /// Keeps at most the first `n` rows of each partition.
    pub fn truncated(&self, train: usize, validation: usize, test: usize) -> Self {
        let cut = |a: &DenseArray, n: usize| a.slice_rows(0, n.min(a.rows()));
        Self {
            train: cut(&self.train, train),
            validation: cut(&self.validation, validation),
            test: cut(&self.test, test),
            ..self.clone()
        }
    }

    /// Shuffles `rows` with `seed` and carves validation and test partitions
    /// off the end.
    pub fn split(
        rows: &DenseArray,
        validation: usize,
        test: usize,
        seed: u64,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        let n = rows.rows();
        if validation + test >= n {
            return Err(Error::Parameter(format!(
                "cannot hold out {validation} + {test} of {n} rows"
            )));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let train_end = n - validation - test;
        Ok(Self {
            train: rows.select_rows(&order[..train_end]),
            validation: rows.select_rows(&order[train_end..train_end + validation]),
            test: rows.select_rows(&order[train_end + validation..]),
            provenance: provenance.into(),
            normalization: Normalization::IDENTITY,
            image_shape: None,
        })
    }
}

/// Default number of training-file images held out for validation.
pub const MNIST_VALIDATION: usize = 10_000;

/// Loads MNIST from `train-images-idx3-ubyte` and `t10k-images-idx3-ubyte`
/// in `dir`. Pixels are scaled to `[0, 1]`; the last 10,000 training images
/// form the validation partition.
pub fn mnist_load(dir: &Path) -> Result<SplitDataset> {
    let train = load_idx_images(&dir.join("train-images-idx3-ubyte"))?;
    let test = load_idx_images(&dir.join("t10k-images-idx3-ubyte"))?;
    if train.1 != test.1 {
        return Err(Error::Format {
            kind: "IDX",
            detail: format!("train images {:?} and test images {:?} differ in size", train.1, test.1),
        });
    }
    let rows = train.0.rows();
    if rows <= MNIST_VALIDATION {
        return Err(Error::Format {
            kind: "IDX",
            detail: format!("{rows} training images is too few for a validation split"),
        });
    }
    let cut = rows - MNIST_VALIDATION;
    Ok(SplitDataset {
        validation: train.0.slice_rows(cut, rows),
        train: train.0.slice_rows(0, cut),
        test: test.0,
        provenance: format!("mnist:{}", dir.display()),
        normalization: Normalization::UNIT_BYTES,
        image_shape: Some(train.1),
    })
}

/// Reads an IDX image file as `[n × (h·w)]` values in `[0, 1]`.
pub fn load_idx_images(path: &Path) -> Result<(DenseArray, (usize, usize))> {
    let idx = read_idx(path, IMAGE_MAGIC)?;
    let [n, h, w] = idx.dims[..] else {
        return Err(Error::Format {
            kind: "IDX",
            detail: format!("{}: image file of rank {}", path.display(), idx.dims.len()),
        });
    };
    let norm = Normalization::UNIT_BYTES;
    let data = idx.bytes.iter().map(|&b| norm.normalize(f64::from(b))).collect();
    Ok((DenseArray::new(vec![n, h * w], data)?, (h, w)))
}

/// Loads every binary PGM (`P5`, maxval 255) in `dir`, sorted by file name.
/// All images must share one size.
pub fn load_pgm_folder(dir: &Path, normalization: Normalization) -> Result<(DenseArray, (usize, usize))> {
    let mut paths: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Format {
            kind: "PGM",
            detail: format!("no .pgm files in {}", dir.display()),
        });
    }
    let mut size = None;
    let mut data = Vec::new();
    for path in &paths {
        let (w, h, pixels) = parse_pgm(&fs::read(path)?).map_err(|detail| Error::Format {
            kind: "PGM",
            detail: format!("{}: {detail}", path.display()),
        })?;
        if *size.get_or_insert((h, w)) != (h, w) {
            return Err(Error::Format {
                kind: "PGM",
                detail: format!("{} is {w}×{h}, expected {:?}", path.display(), size),
            });
        }
        data.extend(pixels.iter().map(|&p| normalization.normalize(f64::from(p))));
    }
    let (h, w) = size.unwrap();
    Ok((DenseArray::new(vec![paths.len(), h * w], data)?, (h, w)))
}

fn parse_pgm(buf: &[u8]) -> std::result::Result<(usize, usize, Vec<u8>), String> {
    let mut pos = 0;
    let mut token = || -> std::result::Result<String, String> {
        loop {
            while pos < buf.len() && buf[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < buf.len() && buf[pos] == b'#' {
                while pos < buf.len() && buf[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < buf.len() && !buf[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("header truncated".into());
        }
        Ok(String::from_utf8_lossy(&buf[start..pos]).into_owned())
    };
    if token()? != "P5" {
        return Err("not a binary PGM".into());
    }
    let mut num =
        |what: &str| -> std::result::Result<usize, String> { token()?.parse().map_err(|_| format!("bad {what}")) };
    let (w, h, maxval) = (num("width")?, num("height")?, num("maxval")?);
    if maxval != 255 {
        return Err(format!("maxval {maxval}, only 255 is supported"));
    }
    let start = pos + 1;
    let pixels = buf.get(start..start + w * h).ok_or("pixel data truncated")?;
    Ok((w, h, pixels.to_vec()))
}

/// One epoch of shuffled mini-batches over the rows of `data`. The final
/// batch may be short.
pub struct BatchIter<'a> {
    data: &'a DenseArray,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl<'a> BatchIter<'a> {
    pub fn new(data: &'a DenseArray, batch_size: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::with_rng(data, batch_size, &mut rng)
    }

    fn with_rng(data: &'a DenseArray, batch_size: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Parameter("batch size must be at least 1".into()));
        }
        let mut order: Vec<usize> = (0..data.rows()).collect();
        order.shuffle(rng);
        Ok(Self {
            data,
            order,
            batch_size,
            pos: 0,
        })
    }
}

impl Iterator for BatchIter<'_> {
    type Item = DenseArray;

    fn next(&mut self) -> Option<DenseArray> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let batch = self.data.select_rows(&self.order[self.pos..end]);
        self.pos = end;
        Some(batch)
    }
}

/// Endless sequence of epochs, each reshuffled from one seeded stream.
pub struct BatchStream<'a> {
    data: &'a DenseArray,
    batch_size: usize,
    rng: ChaCha8Rng,
    epoch: BatchIter<'a>,
}

impl<'a> BatchStream<'a> {
    pub fn new(data: &'a DenseArray, batch_size: usize, seed: u64) -> Result<Self> {
        if data.rows() == 0 {
            return Err(Error::Contract("cannot batch an empty partition".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let epoch = BatchIter::with_rng(data, batch_size, &mut rng)?;
        Ok(Self {
            data,
            batch_size,
            rng,
            epoch,
        })
    }

    pub fn next_batch(&mut self) -> DenseArray {
        match self.epoch.next() {
            Some(batch) => batch,
            None => {
                self.epoch = BatchIter::with_rng(self.data, self.batch_size, &mut self.rng)
                    .expect("batch size already validated");
                self.epoch.next().expect("nonempty partition")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::idx::encode_idx;
    use proptest::prelude::*;

    fn indexed(n: usize) -> DenseArray {
        DenseArray::new(vec![n, 1], (0..n).map(|i| i as f64).collect()).unwrap()
    }

    #[test]
    fn batch_sizes_cover_epoch_once() {
        let data = indexed(10);
        let batches: Vec<_> = BatchIter::new(&data, 3, 5).unwrap().collect();
        let sizes: Vec<usize> = batches.iter().map(|b| b.rows()).collect();
        assert_eq!(sizes, vec![3, 3, 3, 1]);
        let mut seen: Vec<f64> = batches.iter().flat_map(|b| b.data().to_vec()).collect();
        seen.sort_by(f64::total_cmp);
        assert_eq!(seen, (0..10).map(|i| i as f64).collect::<Vec<_>>());
        let again: Vec<_> = BatchIter::new(&data, 3, 5).unwrap().collect();
        assert_eq!(batches, again);
        assert!(BatchIter::new(&data, 0, 5).is_err());
    }

    #[test]
    fn stream_wraps_epochs() {
        let data = indexed(5);
        let mut stream = BatchStream::new(&data, 2, 1).unwrap();
        let sizes: Vec<usize> = (0..6).map(|_| stream.next_batch().rows()).collect();
        assert_eq!(sizes, vec![2, 2, 1, 2, 2, 1]);
    }

    #[test]
    fn split_is_disjoint_and_complete() {
        let data = indexed(20);
        let split = SplitDataset::split(&data, 4, 5, 9, "test").unwrap();
        assert_eq!(
            (split.train.rows(), split.validation.rows(), split.test.rows()),
            (11, 4, 5)
        );
        let mut all: Vec<f64> = [&split.train, &split.validation, &split.test]
            .iter()
            .flat_map(|a| a.data().to_vec())
            .collect();
        all.sort_by(f64::total_cmp);
        all.dedup();
        assert_eq!(all.len(), 20);
        assert!(SplitDataset::split(&data, 10, 10, 9, "test").is_err());
    }

    #[test]
    fn byte_scaling_endpoints() {
        let n = Normalization::UNIT_BYTES;
        assert_eq!(n.normalize(255.0), 1.0);
        assert_eq!(n.normalize(0.0), 0.0);
        let s = Normalization::SIGNED_BYTES;
        assert_eq!((s.normalize(0.0), s.normalize(255.0)), (-1.0, 1.0));
    }

    #[test]
    fn mnist_files_load_and_truncation_fails_cleanly() {
        let dir = tempfile::tempdir().unwrap();
        let n_train = MNIST_VALIDATION + 2;
        let mut pixels = vec![0u8; n_train * 4];
        pixels[0] = 255;
        std::fs::write(
            dir.path().join("train-images-idx3-ubyte"),
            encode_idx(IMAGE_MAGIC, &[n_train, 2, 2], &pixels),
        )
        .unwrap();
        std::fs::write(
            dir.path().join("t10k-images-idx3-ubyte"),
            encode_idx(IMAGE_MAGIC, &[3, 2, 2], &[7u8; 12]),
        )
        .unwrap();
        let ds = mnist_load(dir.path()).unwrap();
        assert_eq!(ds.train.shape(), &[2, 4]);
        assert_eq!(ds.validation.rows(), MNIST_VALIDATION);
        assert_eq!(ds.test.rows(), 3);
        assert_eq!(ds.train.get(&[0, 0]), 1.0);
        assert_eq!(ds.image_shape, Some((2, 2)));

        let full = encode_idx(IMAGE_MAGIC, &[3, 2, 2], &[7u8; 12]);
        std::fs::write(dir.path().join("t10k-images-idx3-ubyte"), &full[..full.len() - 3]).unwrap();
        assert!(matches!(mnist_load(dir.path()), Err(Error::Format { .. })));
    }

    #[test]
    fn pgm_folder_loads() {
        let dir = tempfile::tempdir().unwrap();
        for (name, px) in [("a.pgm", 0u8), ("b.pgm", 255u8)] {
            let mut buf = b"P5\n# comment\n3 2\n255\n".to_vec();
            buf.extend(std::iter::repeat_n(px, 6));
            std::fs::write(dir.path().join(name), buf).unwrap();
        }
        let (data, shape) = load_pgm_folder(dir.path(), Normalization::SIGNED_BYTES).unwrap();
        assert_eq!(shape, (2, 3));
        assert_eq!(data.row(0), &[-1.0; 6]);
        assert_eq!(data.row(1), &[1.0; 6]);
    }

    proptest! {
        #[test]
        fn power_of_two_scaling_round_trips_exactly(x in -1e6f64..1e6, e in -20i32..20) {
            let n = Normalization::new(0.0, 2f64.powi(e)).unwrap();
            prop_assert_eq!(n.denormalize(n.normalize(x)).to_bits(), x.to_bits());
        }

        #[test]
        fn general_scaling_round_trips_closely(x in -1e3f64..1e3, offset in -100f64..100.0, scale in 0.01f64..300.0) {
            let n = Normalization::new(offset, scale).unwrap();
            let back = n.denormalize(n.normalize(x));
            prop_assert!((back - x).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }
}

//! The `MOODEMB1` token-embedding interchange format.
//!
//! Layout (all integers little-endian `u32`, floats little-endian `f32`):
//!
//! ```text
//! "MOODEMB1"
//! n_images tokens_per_image dim grid_h grid_w space_tag flags
//! metadata_len  metadata (UTF-8, key=value lines)
//! payload: n_images * tokens_per_image * dim floats, row-major
//! ```
//!
//! `flags` bit 0 marks a class token stored after the grid tokens of every
//! image. A grid of `0 x 0` declares a token set with no spatial layout
//! (e.g. text tokens or synthetic point clouds).

use std::fs;
use std::path::Path;

use ndarray::{s, Array2, Array3, ArrayView2};

use super::bytes::{checked_bytes, ByteReader, ByteWriter};
use crate::error::{Error, Result};

pub const EMBEDDING_MAGIC: &[u8; 8] = b"MOODEMB1";

const FLAG_CLASS_TOKEN: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpaceTag {
    /// Source space the encoder reads from.
    V,
    /// Target space the decoder reconstructs.
    W,
    Other,
}

impl SpaceTag {
    fn code(self) -> u32 {
        match self {
            SpaceTag::V => 0,
            SpaceTag::W => 1,
            SpaceTag::Other => 2,
        }
    }

    fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(SpaceTag::V),
            1 => Ok(SpaceTag::W),
            2 => Ok(SpaceTag::Other),
            c => Err(Error::InvalidMetadata(format!("unknown space tag {c}"))),
        }
    }
}

/// A stack of per-image token features, `n_images x tokens_per_image x dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenEmbeddingSet {
    data: Array3<f32>,
    pub space: SpaceTag,
    grid_h: u32,
    grid_w: u32,
    class_token: bool,
    /// Free-form `key=value` lines (backbone, preprocessing, provenance).
    pub metadata: String,
}

impl TokenEmbeddingSet {
    pub fn new(
        data: Array3<f32>,
        space: SpaceTag,
        grid: (u32, u32),
        class_token: bool,
        metadata: impl Into<String>,
    ) -> Result<Self> {
        let set = Self {
            data,
            space,
            grid_h: grid.0,
            grid_w: grid.1,
            class_token,
            metadata: metadata.into(),
        };
        set.validate()?;
        Ok(set)
    }

    /// Token set without spatial layout.
    pub fn ungridded(data: Array3<f32>, space: SpaceTag) -> Result<Self> {
        Self::new(data, space, (0, 0), false, "")
    }

    /// Build from an `(n_images * tokens) x dim` matrix of f64 rows.
    pub fn from_rows(
        rows: ArrayView2<'_, f64>,
        n_images: usize,
        space: SpaceTag,
        grid: (u32, u32),
        class_token: bool,
    ) -> Result<Self> {
        if n_images == 0 || rows.nrows() % n_images != 0 {
            return Err(Error::Shape(format!(
                "{} rows cannot be split into {n_images} images",
                rows.nrows()
            )));
        }
        let t = rows.nrows() / n_images;
        let data = Array3::from_shape_fn((n_images, t, rows.ncols()), |(i, j, d)| {
            rows[[i * t + j, d]] as f32
        });
        Self::new(data, space, grid, class_token, "")
    }

    pub fn validate(&self) -> Result<()> {
        let (n, t, d) = self.data.dim();
        if n == 0 {
            return Err(Error::Shape("n_images must be at least 1".into()));
        }
        if d == 0 {
            return Err(Error::Shape("dim must be positive".into()));
        }
        if t == 0 {
            return Err(Error::Shape("tokens_per_image must be positive".into()));
        }
        if self.has_grid() {
            let expected = self.grid_h as usize * self.grid_w as usize + self.class_token as usize;
            if expected != t {
                return Err(Error::Shape(format!(
                    "tokens_per_image {t} does not match grid {}x{}{}",
                    self.grid_h,
                    self.grid_w,
                    if self.class_token { " + class token" } else { "" }
                )));
            }
        } else if self.grid_h != 0 || self.grid_w != 0 {
            return Err(Error::Shape("grid must have both sides positive or both zero".into()));
        }
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: None });
        }
        Ok(())
    }

    pub fn n_images(&self) -> usize {
        self.data.dim().0
    }

    pub fn tokens_per_image(&self) -> usize {
        self.data.dim().1
    }

    pub fn dim(&self) -> usize {
        self.data.dim().2
    }

    pub fn grid(&self) -> (u32, u32) {
        (self.grid_h, self.grid_w)
    }

    pub fn has_grid(&self) -> bool {
        self.grid_h > 0 && self.grid_w > 0
    }

    pub fn has_class_token(&self) -> bool {
        self.class_token
    }

    pub fn data(&self) -> &Array3<f32> {
        &self.data
    }

    pub fn total_tokens(&self) -> usize {
        self.n_images() * self.tokens_per_image()
    }

    /// Value of the first `key=value` metadata line with this key.
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.lines().find_map(|line| {
            let (k, v) = line.split_once('=')?;
            (k.trim() == key).then(|| v.trim())
        })
    }

    pub fn source_tag(&self) -> Option<&str> {
        self.meta("source")
    }

    pub fn with_meta(mut self, key: &str, value: &str) -> Self {
        if !self.metadata.is_empty() && !self.metadata.ends_with('\n') {
            self.metadata.push('\n');
        }
        self.metadata.push_str(key);
        self.metadata.push('=');
        self.metadata.push_str(value);
        self
    }

    /// Tokens of one image as f64 rows.
    pub fn image(&self, index: usize) -> Result<Array2<f64>> {
        if index >= self.n_images() {
            return Err(Error::InvalidArgument(format!(
                "image index {index} out of range (n_images = {})",
                self.n_images()
            )));
        }
        Ok(self.data.slice(s![index, .., ..]).mapv(f64::from))
    }

    /// All tokens as `(n_images * tokens_per_image) x dim` f64 rows.
    pub fn rows(&self) -> Array2<f64> {
        let (n, t, d) = self.data.dim();
        self.data
            .mapv(f64::from)
            .into_shape_with_order((n * t, d))
            .expect("contiguous")
    }

    /// Tokens selected for training: all tokens, or grid tokens only when
    /// class tokens are excluded.
    pub fn training_rows(&self, include_class_tokens: bool) -> Array2<f64> {
        if !self.class_token || include_class_tokens {
            return self.rows();
        }
        let (n, t, d) = self.data.dim();
        let keep = t - 1;
        let mut out = Array2::zeros((n * keep, d));
        for i in 0..n {
            out.slice_mut(s![i * keep..(i + 1) * keep, ..])
                .assign(&self.data.slice(s![i, ..keep, ..]).mapv(f64::from));
        }
        out
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let (n, t, d) = self.data.dim();
        let mut w = ByteWriter::new();
        w.bytes(EMBEDDING_MAGIC);
        for v in [n, t, d] {
            w.u32(u32::try_from(v).map_err(|_| Error::Shape("dimension exceeds u32".into()))?);
        }
        w.u32(self.grid_h);
        w.u32(self.grid_w);
        w.u32(self.space.code());
        w.u32(if self.class_token { FLAG_CLASS_TOKEN } else { 0 });
        w.string(&self.metadata)?;
        for v in self.data.iter() {
            w.f32(*v);
        }
        Ok(w.into_inner())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let magic = r.take(8).map_err(|_| Error::UnrecognizedFormat {
            expected: "MOODEMB1",
        })?;
        if magic != EMBEDDING_MAGIC {
            return Err(Error::UnrecognizedFormat {
                expected: "MOODEMB1",
            });
        }
        let n = r.u32()? as usize;
        let t = r.u32()? as usize;
        let d = r.u32()? as usize;
        let grid_h = r.u32()?;
        let grid_w = r.u32()?;
        let space = SpaceTag::from_code(r.u32()?)?;
        let flags = r.u32()?;
        if flags & !FLAG_CLASS_TOKEN != 0 {
            return Err(Error::InvalidMetadata(format!("unknown flags {flags:#x}")));
        }
        let metadata = r.string()?;

        let count = n
            .checked_mul(t)
            .and_then(|x| x.checked_mul(d))
            .ok_or_else(|| Error::Shape("declared size overflows".into()))?;
        let expected = checked_bytes(count, 4)?;
        if r.remaining() < expected {
            return Err(Error::TruncatedPayload {
                expected,
                found: r.remaining(),
            });
        }
        let payload = r.take(expected)?;
        r.finish()?;
        let values: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let data = Array3::from_shape_vec((n, t, d), values)
            .map_err(|e| Error::Shape(e.to_string()))?;
        Self::new(data, space, (grid_h, grid_w), flags & FLAG_CLASS_TOKEN != 0, metadata)
    }
}

pub fn write_embeddings(set: &TokenEmbeddingSet, path: impl AsRef<Path>) -> Result<()> {
    let bytes = set.to_bytes()?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<TokenEmbeddingSet> {
    let bytes = fs::read(path)?;
    TokenEmbeddingSet::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use proptest::prelude::*;

    fn zeros_set() -> TokenEmbeddingSet {
        TokenEmbeddingSet::new(Array3::zeros((1, 4, 2)), SpaceTag::V, (2, 2), false, "").unwrap()
    }

    #[test]
    fn zero_payload_layout() {
        let bytes = zeros_set().to_bytes().unwrap();
        let header = 8 + 7 * 4 + 4;
        assert_eq!(bytes.len(), header + 32);
        assert_eq!(&bytes[..8], b"MOODEMB1");
        assert!(bytes[header..].iter().all(|b| *b == 0));
        // n_images, tokens, dim
        assert_eq!(&bytes[8..20], &[1, 0, 0, 0, 4, 0, 0, 0, 2, 0, 0, 0]);
    }

    #[test]
    fn nan_payload_refused() {
        let mut data = Array3::zeros((1, 4, 2));
        data[[0, 1, 1]] = f32::NAN;
        let err = TokenEmbeddingSet::new(data, SpaceTag::V, (2, 2), false, "").unwrap_err();
        assert!(err.to_string().contains("non-finite data"), "{err}");
    }

    #[test]
    fn bad_magic() {
        let mut bytes = zeros_set().to_bytes().unwrap();
        bytes[..8].copy_from_slice(b"XXXX0000");
        let err = TokenEmbeddingSet::from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("unrecognized format"), "{err}");
    }

    #[test]
    fn truncated_payload() {
        // Header declares 100 floats, payload carries 50.
        let set = TokenEmbeddingSet::ungridded(Array3::ones((1, 10, 10)), SpaceTag::W).unwrap();
        let bytes = set.to_bytes().unwrap();
        let cut = bytes.len() - 50 * 4;
        let err = TokenEmbeddingSet::from_bytes(&bytes[..cut]).unwrap_err();
        assert!(err.to_string().contains("truncated payload"), "{err}");
    }

    #[test]
    fn grid_mismatch_rejected() {
        let err =
            TokenEmbeddingSet::new(Array3::zeros((1, 5, 2)), SpaceTag::V, (2, 2), false, "");
        assert!(err.is_err());
        let ok = TokenEmbeddingSet::new(Array3::zeros((1, 5, 2)), SpaceTag::V, (2, 2), true, "");
        assert!(ok.is_ok());
    }

    #[test]
    fn class_tokens_dropped_on_request() {
        let data = Array3::from_shape_fn((2, 5, 1), |(i, j, _)| (i * 10 + j) as f32);
        let set = TokenEmbeddingSet::new(data, SpaceTag::V, (2, 2), true, "").unwrap();
        assert_eq!(set.training_rows(true).nrows(), 10);
        let rows = set.training_rows(false);
        assert_eq!(rows.nrows(), 8);
        assert_eq!(rows[[4, 0]], 10.0);
    }

    #[test]
    fn metadata_lookup() {
        let set = zeros_set().with_meta("source", "dino-vits16").with_meta("prep", "224px");
        assert_eq!(set.source_tag(), Some("dino-vits16"));
        assert_eq!(set.meta("prep"), Some("224px"));
        assert_eq!(set.meta("missing"), None);
    }

    proptest! {
        #[test]
        fn bytes_round_trip(
            n in 1usize..3,
            t in 1usize..6,
            d in 1usize..4,
            seed in any::<u64>(),
            meta in "[a-z=\n]{0,20}",
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let data = Array3::from_shape_simple_fn((n, t, d), || rng.random_range(-1e6f32..1e6));
            let set = TokenEmbeddingSet::new(data, SpaceTag::Other, (0, 0), false, meta).unwrap();
            let back = TokenEmbeddingSet::from_bytes(&set.to_bytes().unwrap()).unwrap();
            prop_assert_eq!(&back, &set);
            let a: Vec<u32> = set.data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = back.data().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }
}

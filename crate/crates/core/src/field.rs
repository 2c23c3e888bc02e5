//! Spatio-temporal fields and the `FLD1` file format.
//!
//! A field holds `m` frames of `n1 x n2` pixels. Values are stored
//! frame-major and, inside a frame, row-major (row index varies slowest), so
//! pixel `(i, j)` of frame `t` lives at `t * n1 * n2 + i * n2 + j`. Every other
//! module relies on this single ordering.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"FLD1";
const HEADER_LEN: usize = 16;

/// Grid shape of a field: `n1` rows, `n2` columns, `m` frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub n1: usize,
    pub n2: usize,
    pub m: usize,
}

impl Dims {
    pub fn new(n1: usize, n2: usize, m: usize) -> Self {
        Dims { n1, n2, m }
    }

    /// Pixels per frame.
    pub fn frame_len(&self) -> usize {
        self.n1 * self.n2
    }

    pub fn len(&self) -> usize {
        self.n1 * self.n2 * self.m
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    dims: Dims,
    values: Vec<f64>,
}

impl Field {
    /// Builds a field from values in canonical order.
    pub fn new(n1: usize, n2: usize, m: usize, values: Vec<f64>) -> Result<Self> {
        if n1 == 0 || n2 == 0 || m == 0 {
            return Err(Error::dim(format!("field dimensions must be positive, got {n1}x{n2}x{m}")));
        }
        let dims = Dims::new(n1, n2, m);
        if values.len() != dims.len() {
            return Err(Error::dim(format!(
                "expected {} values for a {n1}x{n2}x{m} field, got {}",
                dims.len(),
                values.len()
            )));
        }
        Ok(Field { dims, values })
    }

    pub fn zeros(n1: usize, n2: usize, m: usize) -> Result<Self> {
        Field::new(n1, n2, m, vec![0.0; n1 * n2 * m])
    }

    /// Inverse of [`Field::vectorize`].
    pub fn reshape(vec: &[f64], n1: usize, n2: usize, m: usize) -> Result<Self> {
        Field::new(n1, n2, m, vec.to_vec())
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn n1(&self) -> usize {
        self.dims.n1
    }

    pub fn n2(&self) -> usize {
        self.dims.n2
    }

    pub fn m(&self) -> usize {
        self.dims.m
    }

    /// Pixels per frame (`N` in the snapshot-matrix view).
    pub fn frame_len(&self) -> usize {
        self.dims.frame_len()
    }

    /// The stacked-snapshot vector `(x_1; ...; x_M)`.
    pub fn vectorize(&self) -> Vec<f64> {
        self.values.clone()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let n = self.frame_len();
        &self.values[t * n..(t + 1) * n]
    }

    pub fn get(&self, i: usize, j: usize, t: usize) -> f64 {
        self.values[t * self.frame_len() + i * self.dims.n2 + j]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Smallest and largest value.
    pub fn range(&self) -> (f64, f64) {
        self.values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Serializes to `FLD1` bytes.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * self.values.len());
        out.extend_from_slice(MAGIC);
        for d in [self.dims.n1, self.dims.n2, self.dims.m] {
            let d = u32::try_from(d).map_err(|_| Error::Format(format!("dimension {d} does not fit in 32 bits")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    /// Parses `FLD1` bytes. Rejects a wrong magic, any payload length other
    /// than exactly `n1*n2*m` values, and non-finite values.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format(format!("file too short for header ({} bytes)", bytes.len())));
        }
        if &bytes[0..4] != MAGIC {
            return Err(Error::Format(format!("bad magic {:?}", &bytes[0..4])));
        }
        let read_u32 = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
        let (n1, n2, m) = (read_u32(4), read_u32(8), read_u32(12));
        if n1 == 0 || n2 == 0 || m == 0 {
            return Err(Error::Format(format!("header declares empty field {n1}x{n2}x{m}")));
        }
        let count = n1
            .checked_mul(n2)
            .and_then(|v| v.checked_mul(m))
            .ok_or_else(|| Error::Format("header dimensions overflow".into()))?;
        let payload = &bytes[HEADER_LEN..];
        if payload.len() != count * 8 {
            return Err(Error::Format(format!(
                "header declares {n1}x{n2}x{m} ({count} values) but payload holds {} bytes",
                payload.len()
            )));
        }
        let mut values = Vec::with_capacity(count);
        for (k, chunk) in payload.chunks_exact(8).enumerate() {
            let v = f64::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::Format(format!("non-finite value at index {k}")));
            }
            values.push(v);
        }
        Field::new(n1, n2, m, values)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut w = BufWriter::new(fs::File::create(path)?);
        w.write_all(&bytes)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = fs::read(path)?;
        Field::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn vectorize_two_frames() {
        let f = Field::new(1, 1, 2, vec![3.0, 5.0]).unwrap();
        assert_eq!(f.vectorize(), vec![3.0, 5.0]);
        assert_eq!(f.frame(0), &[3.0]);
        assert_eq!(f.frame(1), &[5.0]);
    }

    #[test]
    fn row_major_inside_frame() {
        // rows (1,2) and (3,4)
        let f = Field::new(2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(f.get(0, 1, 0), 2.0);
        assert_eq!(f.get(1, 0, 0), 3.0);
        assert_eq!(f.vectorize(), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn reshape_length_mismatch() {
        let err = Field::reshape(&[0.0; 7], 2, 2, 2).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }

    #[test]
    fn bad_magic_rejected() {
        let mut bytes = Field::zeros(2, 2, 2).unwrap().to_bytes().unwrap();
        bytes[0..4].copy_from_slice(b"FLD2");
        assert!(matches!(Field::from_bytes(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_payload_rejected() {
        let bytes = Field::zeros(2, 2, 2).unwrap().to_bytes().unwrap();
        let short = &bytes[..bytes.len() - 8];
        assert!(matches!(Field::from_bytes(short), Err(Error::Format(_))));
        let mut long = bytes.clone();
        long.extend_from_slice(&[0u8; 8]);
        assert!(matches!(Field::from_bytes(&long), Err(Error::Format(_))));
    }

    #[test]
    fn non_finite_rejected() {
        let mut bytes = Field::zeros(1, 1, 2).unwrap().to_bytes().unwrap();
        bytes[16..24].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(matches!(Field::from_bytes(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn header_layout() {
        let f = Field::new(1, 2, 3, (0..6).map(f64::from).collect()).unwrap();
        let bytes = f.to_bytes().unwrap();
        assert_eq!(&bytes[0..4], b"FLD1");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &3u32.to_le_bytes());
        assert_eq!(&bytes[16 + 8 * 5..], &5.0f64.to_le_bytes());
        assert_eq!(bytes.len(), 16 + 48);
    }

    #[test]
    fn save_load_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.fld");
        let values: Vec<f64> = (0..256).map(|k| (k as f64 * 0.37).sin() * 1e-3).collect();
        let f = Field::new(8, 8, 4, values).unwrap();
        f.save(&path).unwrap();
        let g = Field::load(&path).unwrap();
        assert_eq!(
            f.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            g.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    proptest! {
        #[test]
        fn reshape_vectorize_roundtrip(n1 in 1usize..5, n2 in 1usize..5, m in 1usize..5, seed in any::<u64>()) {
            let len = n1 * n2 * m;
            let values: Vec<f64> = (0..len).map(|k| ((k as u64).wrapping_mul(seed | 1) % 1000) as f64 - 500.0).collect();
            let f = Field::reshape(&values, n1, n2, m).unwrap();
            prop_assert_eq!(f.vectorize(), values.clone());
            let g = Field::reshape(&f.vectorize(), n1, n2, m).unwrap();
            prop_assert_eq!(g, f);
        }

        #[test]
        fn bytes_roundtrip_bit_exact(values in proptest::collection::vec(-1e300f64..1e300, 12)) {
            let f = Field::new(2, 3, 2, values).unwrap();
            let g = Field::from_bytes(&f.to_bytes().unwrap()).unwrap();
            for (a, b) in f.values().iter().zip(g.values()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}

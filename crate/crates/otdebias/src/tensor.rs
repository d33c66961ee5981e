//! Dense row-major `f64` arrays and the `NDT1` on-disk format.
//!
//! Every image, feature map, and sequence in this crate is a [`Tensor`].
//! Constructors reject non-finite values, so downstream numeric code can
//! assume finiteness without re-checking.

use crate::error::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;

/// Dense array with explicit shape, elements stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Constant-filled tensor. Every extent must be at least 1.
    pub fn new(shape: &[usize], fill: f64) -> Result<Self> {
        validate_shape(shape)?;
        if !fill.is_finite() {
            return Err(Error::data(format!("non-finite fill value {fill}")));
        }
        let len = shape.iter().product();
        Ok(Tensor {
            shape: shape.to_vec(),
            data: vec![fill; len],
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Tensor::new(shape, 0.0)
    }

    /// Wrap an existing buffer. Fails on shape/length mismatch or non-finite data.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        validate_shape(shape)?;
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::shape(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                len,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::data(format!("non-finite element {bad}")));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Internal constructor for values produced by already-validated arithmetic.
    pub(crate) fn from_vec_unchecked(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Row-major offset of a multi-index.
    pub fn flatten_index(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.shape.len() {
            return Err(Error::shape(format!(
                "index rank {} vs tensor rank {}",
                index.len(),
                self.shape.len()
            )));
        }
        let mut flat = 0usize;
        for (i, (&ix, &ext)) in index.iter().zip(&self.shape).enumerate() {
            if ix >= ext {
                return Err(Error::shape(format!(
                    "index {ix} out of range for axis {i} (extent {ext})"
                )));
            }
            flat = flat * ext + ix;
        }
        Ok(flat)
    }

    /// Inverse of [`flatten_index`](Self::flatten_index).
    pub fn unflatten_index(&self, mut flat: usize) -> Result<Vec<usize>> {
        if flat >= self.data.len() {
            return Err(Error::shape(format!(
                "flat index {flat} out of range ({} elements)",
                self.data.len()
            )));
        }
        let mut index = vec![0usize; self.shape.len()];
        for (slot, &ext) in index.iter_mut().zip(&self.shape).rev() {
            *slot = flat % ext;
            flat /= ext;
        }
        Ok(index)
    }

    pub fn get(&self, index: &[usize]) -> Result<f64> {
        Ok(self.data[self.flatten_index(index)?])
    }

    pub(crate) fn set(&mut self, index: &[usize], value: f64) -> Result<()> {
        let flat = self.flatten_index(index)?;
        self.data[flat] = value;
        Ok(())
    }

    /// Serialize into the raw `NDT1` container.
    ///
    /// Layout: 4-byte magic `NDT1`, little-endian `u32` header length, UTF-8
    /// JSON header `{"dtype":"f64","shape":[...]}`, then little-endian `f64`
    /// payload. The payload is written byte-exact, so a round-trip preserves
    /// every bit.
    pub fn write_ndt<W: Write>(&self, mut out: W) -> Result<()> {
        let header = format!(
            "{{\"dtype\":\"f64\",\"shape\":{}}}",
            serde_json::to_string(&self.shape)?
        );
        out.write_all(b"NDT1")?;
        out.write_all(&(header.len() as u32).to_le_bytes())?;
        out.write_all(header.as_bytes())?;
        for v in &self.data {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_ndt<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != b"NDT1" {
            return Err(Error::Data(format!("bad NDT1 magic {magic:?}")));
        }
        let mut len_bytes = [0u8; 4];
        input.read_exact(&mut len_bytes)?;
        let header_len = u32::from_le_bytes(len_bytes) as usize;
        let mut header = vec![0u8; header_len];
        input.read_exact(&mut header)?;
        let header: NdtHeader = serde_json::from_slice(&header)?;
        if header.dtype != "f64" {
            return Err(Error::Data(format!("unsupported dtype {}", header.dtype)));
        }
        validate_shape(&header.shape)?;
        let len: usize = header.shape.iter().product();
        let mut data = Vec::with_capacity(len);
        let mut buf = [0u8; 8];
        for _ in 0..len {
            input.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        // Bit-exactness matters more than the finiteness contract here, but an
        // NDT1 file produced by this crate never contains non-finite values.
        Tensor::from_vec(&header.shape, data)
    }

    pub fn save_ndt(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_ndt(std::io::BufWriter::new(file))
    }

    pub fn load_ndt(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Tensor::read_ndt(std::io::BufReader::new(file))
    }
}

#[derive(serde::Deserialize)]
struct NdtHeader {
    dtype: String,
    shape: Vec<usize>,
}

fn validate_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() {
        return Err(Error::shape("empty shape"));
    }
    if shape.iter().any(|&e| e == 0) {
        return Err(Error::shape(format!("zero extent in shape {shape:?}")));
    }
    Ok(())
}

//! `MDT1` tensor container.
//!
//! Layout, all integers little-endian:
//!
//! | offset | size      | field                                   |
//! |--------|-----------|-----------------------------------------|
//! | 0      | 4         | magic `MDT1`                            |
//! | 4      | 1         | dtype: 0 f32, 1 f64, 2 c64, 3 i32       |
//! | 5      | 4         | ndim (u32)                              |
//! | 9      | 4 * ndim  | dims (u32 each, all nonzero)            |
//! | ...    | elem*Πdims| row-major payload                       |
//!
//! `c64` is a complex number with two f64 parts, stored re then im.

use std::path::Path;

use ndarray::{Array2, ArrayD, IxDyn};
use num_complex::Complex64;

use super::atomic_write;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MDT1";
const HEADER: usize = 9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    F32 = 0,
    F64 = 1,
    C64 = 2,
    I32 = 3,
}

impl DType {
    pub fn element_size(self) -> usize {
        match self {
            DType::F32 | DType::I32 => 4,
            DType::F64 => 8,
            DType::C64 => 16,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            2 => Some(DType::C64),
            3 => Some(DType::I32),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    C64(Vec<Complex64>),
    I32(Vec<i32>),
}

impl TensorData {
    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
            TensorData::C64(_) => DType::C64,
            TensorData::I32(_) => DType::I32,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
            TensorData::C64(v) => v.len(),
            TensorData::I32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: TensorData,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: TensorData) -> Result<Self> {
        let t = Tensor { dims, data };
        t.check()?;
        Ok(t)
    }

    fn check(&self) -> Result<()> {
        if self.dims.is_empty() || self.dims.contains(&0) {
            return Err(Error::Format(format!("dims {:?} must be non-empty and nonzero", self.dims)));
        }
        if self.dims.iter().any(|&d| d > u32::MAX as usize) {
            return Err(Error::Format("dimension exceeds u32".into()));
        }
        let count = self
            .dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Format("element count overflows".into()))?;
        if count != self.data.len() {
            return Err(Error::Format(format!(
                "dims {:?} hold {count} elements, data has {}",
                self.dims,
                self.data.len()
            )));
        }
        Ok(())
    }

    pub fn from_f64(a: &Array2<f64>) -> Self {
        let (r, c) = a.dim();
        Tensor {
            dims: vec![r, c],
            data: TensorData::F64(a.iter().copied().collect()),
        }
    }

    pub fn from_f64_dyn(a: &ArrayD<f64>) -> Self {
        Tensor {
            dims: a.shape().to_vec(),
            data: TensorData::F64(a.iter().copied().collect()),
        }
    }

    pub fn from_c64(a: &Array2<Complex64>) -> Self {
        let (r, c) = a.dim();
        Tensor {
            dims: vec![r, c],
            data: TensorData::C64(a.iter().copied().collect()),
        }
    }

    pub fn to_f64(&self) -> Result<Array2<f64>> {
        match (&self.data, self.dims.as_slice()) {
            (TensorData::F64(v), &[r, c]) => Ok(Array2::from_shape_vec((r, c), v.clone())
                .expect("shape checked on construction")),
            _ => Err(Error::Format(format!(
                "expected 2-D f64 tensor, found {:?} {:?}",
                self.data.dtype(),
                self.dims
            ))),
        }
    }

    pub fn to_f64_dyn(&self) -> Result<ArrayD<f64>> {
        match &self.data {
            TensorData::F64(v) => Ok(ArrayD::from_shape_vec(IxDyn(&self.dims), v.clone())
                .expect("shape checked on construction")),
            other => Err(Error::Format(format!("expected f64 tensor, found {:?}", other.dtype()))),
        }
    }

    pub fn to_c64(&self) -> Result<Array2<Complex64>> {
        match (&self.data, self.dims.as_slice()) {
            (TensorData::C64(v), &[r, c]) => Ok(Array2::from_shape_vec((r, c), v.clone())
                .expect("shape checked on construction")),
            _ => Err(Error::Format(format!(
                "expected 2-D c64 tensor, found {:?} {:?}",
                self.data.dtype(),
                self.dims
            ))),
        }
    }
}

pub fn encode(t: &Tensor) -> Result<Vec<u8>> {
    t.check()?;
    let dtype = t.data.dtype();
    let mut out =
        Vec::with_capacity(HEADER + 4 * t.dims.len() + dtype.element_size() * t.data.len());
    out.extend_from_slice(MAGIC);
    out.push(dtype as u8);
    out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
    for &d in &t.dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    match &t.data {
        TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        TensorData::C64(v) => v.iter().for_each(|x| {
            out.extend_from_slice(&x.re.to_le_bytes());
            out.extend_from_slice(&x.im.to_le_bytes());
        }),
        TensorData::I32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < HEADER {
        return Err(Error::Format(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let dtype = DType::from_code(bytes[4])
        .ok_or_else(|| Error::Format(format!("unknown dtype code {}", bytes[4])))?;
    let ndim = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    if ndim == 0 {
        return Err(Error::Format("ndim is zero".into()));
    }
    let dims_end = ndim
        .checked_mul(4)
        .and_then(|n| n.checked_add(HEADER))
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| Error::Format("truncated dimension list".into()))?;
    let dims: Vec<usize> = bytes[HEADER..dims_end]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    if dims.contains(&0) {
        return Err(Error::Format("zero-length dimension".into()));
    }
    let count = dims
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| Error::Format("element count overflows".into()))?;
    let payload = &bytes[dims_end..];
    let expected = count
        .checked_mul(dtype.element_size())
        .ok_or_else(|| Error::Format("payload size overflows".into()))?;
    if payload.len() != expected {
        return Err(Error::Format(format!(
            "payload is {} bytes, header declares {expected}",
            payload.len()
        )));
    }
    let data = match dtype {
        DType::F32 => TensorData::F32(
            payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
        DType::F64 => TensorData::F64(
            payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
        DType::C64 => TensorData::C64(
            payload
                .chunks_exact(16)
                .map(|c| {
                    Complex64::new(
                        f64::from_le_bytes(c[..8].try_into().unwrap()),
                        f64::from_le_bytes(c[8..].try_into().unwrap()),
                    )
                })
                .collect(),
        ),
        DType::I32 => TensorData::I32(
            payload
                .chunks_exact(4)
                .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
    };
    Ok(Tensor { dims, data })
}

pub fn save_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let bytes = encode(t)?;
    atomic_write(path.as_ref(), &bytes)
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_f32_layout() {
        let t = Tensor::new(vec![2, 2], TensorData::F32(vec![1.0, 0.0, 0.0, 1.0])).unwrap();
        let bytes = encode(&t).unwrap();
        assert_eq!(bytes.len(), 4 + 1 + 4 + 8 + 16);
        assert_eq!(&bytes[..4], b"MDT1");
        assert_eq!(bytes[4], 0);
        assert_eq!(&bytes[5..9], &[2, 0, 0, 0]);
        assert_eq!(&bytes[9..17], &[2, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(&bytes[17..21], &[0x00, 0x00, 0x80, 0x3F]);
        assert_eq!(&bytes[21..25], &[0, 0, 0, 0]);
    }

    #[test]
    fn zero_dims_rejected() {
        assert!(Tensor::new(vec![0, 3], TensorData::F64(vec![])).is_err());
        assert!(Tensor::new(vec![], TensorData::F64(vec![1.0])).is_err());
        let bad = Tensor {
            dims: vec![2, 0],
            data: TensorData::I32(vec![]),
        };
        assert!(matches!(encode(&bad), Err(Error::Format(_))));
    }

    #[test]
    fn bad_magic_and_dtype() {
        let t = Tensor::new(vec![1], TensorData::I32(vec![7])).unwrap();
        let mut bytes = encode(&t).unwrap();
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(Error::Format(_))));
        let mut bytes = encode(&t).unwrap();
        bytes[4] = 9;
        assert!(matches!(decode(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let t = Tensor::new(vec![3], TensorData::F64(vec![1.0, 2.0, 3.0])).unwrap();
        let mut bytes = encode(&t).unwrap();
        bytes.push(0);
        assert!(matches!(decode(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn huge_declared_dims_do_not_allocate() {
        let mut bytes = b"MDT1".to_vec();
        bytes.push(1);
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&u32::MAX.to_le_bytes());
        bytes.extend_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(decode(&bytes), Err(Error::Format(_))));
        let mut bytes = b"MDT1".to_vec();
        bytes.push(1);
        bytes.extend_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(decode(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let a = Array2::from_shape_fn((3, 4), |(i, j)| i as f64 * 10.0 + j as f64);
        let p = dir.path().join("a.mdt");
        save_tensor(&p, &Tensor::from_f64(&a)).unwrap();
        assert_eq!(load_tensor(&p).unwrap().to_f64().unwrap(), a);
    }
}

use std::fmt;

use serde::{Deserialize, Serialize};

/// Element type of a [`Tensor`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
    I64,
}

impl DType {
    pub fn as_str(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::F64 => "f64",
            DType::I64 => "i64",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "f32" => Some(DType::F32),
            "f64" => Some(DType::F64),
            "i64" => Some(DType::I64),
            _ => None,
        }
    }

    pub fn is_float(self) -> bool {
        matches!(self, DType::F32 | DType::F64)
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Flat row-major element storage.
///
/// Equality compares floats by bit pattern, so `NaN == NaN` and `0.0 != -0.0`.
/// That matches the canonical text encoding, where those values are distinct.
#[derive(Clone, Debug)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    I64(Vec<i64>),
}

impl TensorData {
    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
            TensorData::I64(_) => DType::I64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
            TensorData::I64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match self {
            TensorData::F32(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<&[f64]> {
        match self {
            TensorData::F64(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_i64(&self) -> Option<&[i64]> {
        match self {
            TensorData::I64(v) => Some(v),
            _ => None,
        }
    }

    pub fn zeros(dtype: DType, len: usize) -> Self {
        match dtype {
            DType::F32 => TensorData::F32(vec![0.0; len]),
            DType::F64 => TensorData::F64(vec![0.0; len]),
            DType::I64 => TensorData::I64(vec![0; len]),
        }
    }

    /// Values widened to f64, for comparisons and reporting.
    pub fn to_f64_vec(&self) -> Vec<f64> {
        match self {
            TensorData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            TensorData::F64(v) => v.clone(),
            TensorData::I64(v) => v.iter().map(|&x| x as f64).collect(),
        }
    }
}

impl PartialEq for TensorData {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (TensorData::F32(a), TensorData::F32(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            (TensorData::F64(a), TensorData::F64(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            (TensorData::I64(a), TensorData::I64(b)) => a == b,
            _ => false,
        }
    }
}

impl Eq for TensorData {}

/// Number of elements described by `shape`; `None` on overflow.
/// The empty shape is a scalar and holds one element.
pub fn element_count(shape: &[usize]) -> Option<usize> {
    shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
}

/// A named dense array. Graph inputs and outputs carry no data; initializers
/// and runtime values always do.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tensor {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub data: Option<TensorData>,
}

impl Tensor {
    pub fn spec(name: impl Into<String>, dtype: DType, shape: Vec<usize>) -> Self {
        Tensor { name: name.into(), dtype, shape, data: None }
    }

    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: TensorData) -> Self {
        Tensor { name: name.into(), dtype: data.dtype(), shape, data: Some(data) }
    }

    pub fn f32(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Self {
        Self::new(name, shape, TensorData::F32(data))
    }

    pub fn f64(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Self {
        Self::new(name, shape, TensorData::F64(data))
    }

    pub fn i64(name: impl Into<String>, shape: Vec<usize>, data: Vec<i64>) -> Self {
        Self::new(name, shape, TensorData::I64(data))
    }

    pub fn zeros(name: impl Into<String>, dtype: DType, shape: Vec<usize>) -> Option<Self> {
        let len = element_count(&shape)?;
        Some(Self::new(name, shape, TensorData::zeros(dtype, len)))
    }

    /// The same tensor without its data.
    pub fn to_spec(&self) -> Tensor {
        Tensor::spec(self.name.clone(), self.dtype, self.shape.clone())
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn element_count(&self) -> Option<usize> {
        element_count(&self.shape)
    }

    /// Checks the per-tensor invariants: non-empty name, data matching dtype,
    /// and element count matching the shape.
    pub fn check(&self) -> Result<(), String> {
        if self.name.is_empty() {
            return Err("tensor name is empty".to_string());
        }
        if let Some(data) = &self.data {
            if data.dtype() != self.dtype {
                return Err(format!(
                    "tensor {} declares dtype {} but holds {} data",
                    self.name,
                    self.dtype,
                    data.dtype()
                ));
            }
            match element_count(&self.shape) {
                Some(n) if n == data.len() => {}
                Some(n) => {
                    return Err(format!(
                        "tensor {} has shape {:?} ({} elements) but {} data values",
                        self.name,
                        self.shape,
                        n,
                        data.len()
                    ))
                }
                None => return Err(format!("tensor {} shape {:?} overflows", self.name, self.shape)),
            }
        }
        Ok(())
    }
}

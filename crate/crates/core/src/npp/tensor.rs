use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum TensorError {
    #[error("shape {shape:?} needs {expected} values, got {found}")]
    Size {
        shape: Vec<usize>,
        expected: usize,
        found: usize,
    },
    #[error("mask has {found} entries, tensor has {expected}")]
    MaskSize { expected: usize, found: usize },
    #[error("non-finite value at observed position {index}")]
    NonFinite { index: usize },
}

/// Dense real tensor with an optional observation mask (`true` = observed).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub mask: Option<Vec<bool>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Tensor, TensorError> {
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(TensorError::Size {
                shape,
                expected,
                found: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { index });
        }
        Ok(Tensor {
            shape,
            values,
            mask: None,
        })
    }

    pub fn vector(values: Vec<f64>) -> Tensor {
        let n = values.len();
        Tensor::new(vec![n], values).expect("finite vector")
    }

    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Tensor, TensorError> {
        if mask.len() != self.values.len() {
            return Err(TensorError::MaskSize {
                expected: self.values.len(),
                found: mask.len(),
            });
        }
        self.mask = Some(mask);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn observed(&self, i: usize) -> bool {
        self.mask.as_ref().is_none_or(|m| m[i])
    }

    pub fn missing_count(&self) -> usize {
        self.mask
            .as_ref()
            .map_or(0, |m| m.iter().filter(|&&o| !o).count())
    }
}

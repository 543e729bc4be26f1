use crate::error::{Error, Result};
use crate::image::{Field, Image};

/// Dense row-major `f64` tensor, either `[batch, channels, height, width]`
/// or `[batch, features]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch(format!("shape {shape:?} needs {n} values, got {}", data.len())));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self { shape: shape.to_vec(), data: vec![value; shape.iter().product()] }
    }

    pub fn scalar(value: f64) -> Self {
        Self { shape: vec![1], data: vec![value] }
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

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// `(batch, channels, height, width)` of a 4-d tensor.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [b, c, h, w] => Ok((b, c, h, w)),
            _ => Err(Error::ShapeMismatch(format!("expected a 4-d tensor, got {:?}", self.shape))),
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::ShapeMismatch(format!("cannot reshape {:?} to {shape:?}", self.shape)));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Stacks RGB images into `[B, 3, H, W]`.
    pub fn from_images(images: &[&Image]) -> Result<Self> {
        let first = images.first().ok_or_else(|| Error::ShapeMismatch("empty image batch".into()))?;
        let (h, w) = first.dims();
        let mut data = Vec::with_capacity(images.len() * 3 * h * w);
        for img in images {
            if img.dims() != (h, w) {
                return Err(Error::DimensionMismatch("images in a batch must share dimensions".into()));
            }
            for c in 0..3 {
                data.extend(img.data().chunks_exact(3).map(|p| p[c]));
            }
        }
        Tensor::new(vec![images.len(), 3, h, w], data)
    }

    /// Stacks single-channel fields into `[B, 1, H, W]`.
    pub fn from_fields(fields: &[&Field]) -> Result<Self> {
        let first = fields.first().ok_or_else(|| Error::ShapeMismatch("empty field batch".into()))?;
        let (h, w) = first.dims();
        let mut data = Vec::with_capacity(fields.len() * h * w);
        for f in fields {
            if f.dims() != (h, w) {
                return Err(Error::DimensionMismatch("fields in a batch must share dimensions".into()));
            }
            data.extend_from_slice(f.data());
        }
        Tensor::new(vec![fields.len(), 1, h, w], data)
    }

    /// Batch item `b` of a `[B, 3, H, W]` tensor as a clamped RGB image.
    pub fn to_image(&self, b: usize) -> Result<Image> {
        let (_, c, h, w) = self.dims4()?;
        if c != 3 {
            return Err(Error::ShapeMismatch(format!("expected 3 channels, got {c}")));
        }
        let plane = h * w;
        let base = b * 3 * plane;
        let mut data = Vec::with_capacity(3 * plane);
        for p in 0..plane {
            for ch in 0..3 {
                data.push(self.data[base + ch * plane + p]);
            }
        }
        Image::from_clamped(h, w, data)
    }

    /// Batch item `b` of a `[B, 1, H, W]` tensor as a clamped field.
    pub fn to_field(&self, b: usize) -> Result<Field> {
        let (_, c, h, w) = self.dims4()?;
        if c != 1 {
            return Err(Error::ShapeMismatch(format!("expected 1 channel, got {c}")));
        }
        let plane = h * w;
        Field::from_clamped(h, w, self.data[b * plane..(b + 1) * plane].to_vec())
    }
}

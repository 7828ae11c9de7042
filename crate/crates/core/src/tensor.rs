use crate::error::{Error, Result};

/// Dense rank-4 array in (batch, channel, height, width) row-major order,
/// with an optional gradient buffer of the same extent.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: [usize; 4],
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn zeros(shape: [usize; 4]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; len],
            grad: None,
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if data.len() != len {
            return Err(Error::ShapeMismatch(format!(
                "data length {} does not match shape {:?} (expected {})",
                data.len(),
                shape,
                len
            )));
        }
        Ok(Tensor {
            shape,
            data,
            grad: None,
        })
    }

    pub fn full(shape: [usize; 4], value: f64) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; len],
            grad: None,
        }
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn height(&self) -> usize {
        self.shape[2]
    }

    pub fn width(&self) -> usize {
        self.shape[3]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.shape[1] + c) * self.shape[2] + h) * self.shape[3] + w
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> f64 {
        self.data[self.index(n, c, h, w)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, value: f64) {
        let i = self.index(n, c, h, w);
        self.data[i] = value;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// One (n, c) feature plane as a contiguous slice of h*w values.
    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let hw = self.shape[2] * self.shape[3];
        let start = (n * self.shape[1] + c) * hw;
        &self.data[start..start + hw]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [f64] {
        let hw = self.shape[2] * self.shape[3];
        let start = (n * self.shape[1] + c) * hw;
        &mut self.data[start..start + hw]
    }

    /// Allocates (or keeps) the gradient buffer, zero-filled.
    pub fn zero_grad(&mut self) {
        match &mut self.grad {
            Some(g) => g.fill(0.0),
            None => self.grad = Some(vec![0.0; self.data.len()]),
        }
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut [f64]> {
        self.grad.as_deref_mut()
    }

    /// Adds `delta` elementwise into the gradient buffer, allocating it
    /// on first use.
    pub fn accumulate_grad(&mut self, delta: &[f64]) -> Result<()> {
        if delta.len() != self.data.len() {
            return Err(Error::ShapeMismatch(format!(
                "gradient length {} does not match tensor length {}",
                delta.len(),
                self.data.len()
            )));
        }
        if self.grad.is_none() {
            self.grad = Some(vec![0.0; self.data.len()]);
        }
        let g = self.grad.as_mut().unwrap();
        for (gi, di) in g.iter_mut().zip(delta) {
            *gi += di;
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

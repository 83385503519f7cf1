//! Batch × channel × height × width feature tensors.

use crate::error::{CdsaError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4 {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn new(n: usize, c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * c * h * w {
            return Err(CdsaError::arg(format!(
                "tensor data length {} does not match {n}x{c}x{h}x{w}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(CdsaError::Validation(format!("non-finite tensor value at index {i}")));
        }
        Ok(Self { n, c, h, w, data })
    }

    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self::filled(n, c, h, w, 0.0)
    }

    pub fn filled(n: usize, c: usize, h: usize, w: usize, v: f64) -> Self {
        Self { n, c, h, w, data: vec![v; n * c * h * w] }
    }

    pub fn from_fn(
        n: usize,
        c: usize,
        h: usize,
        w: usize,
        mut f: impl FnMut(usize, usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(n * c * h * w);
        for b in 0..n {
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        data.push(f(b, ch, y, x));
                    }
                }
            }
        }
        Self { n, c, h, w, data }
    }

    /// `(n, c, h, w)`
    #[inline]
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.n, self.c, self.h, self.w)
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn index(&self, b: usize, ch: usize, y: usize, x: usize) -> usize {
        ((b * self.c + ch) * self.h + y) * self.w + x
    }

    #[inline]
    pub fn get(&self, b: usize, ch: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(b, ch, y, x)]
    }

    #[inline]
    pub fn set(&mut self, b: usize, ch: usize, y: usize, x: usize, v: f64) {
        let i = self.index(b, ch, y, x);
        self.data[i] = v;
    }
}

//! Shape-tagged dense arrays of arithmetic shares.

use crate::engine::Engine;
use crate::{Error, Result};

/// A dense tensor of shares with a shape tag. All elements carry the
/// engine's fixed-point precision.
pub struct ShareTensor<E: Engine> {
    pub data: E::AVec,
    pub shape: Vec<usize>,
}

impl<E: Engine> Clone for ShareTensor<E> {
    fn clone(&self) -> Self {
        ShareTensor {
            data: self.data.clone(),
            shape: self.shape.clone(),
        }
    }
}

impl<E: Engine> ShareTensor<E> {
    pub fn new(data: E::AVec, shape: Vec<usize>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if E::alen(&data) != expect {
            return Err(Error::Shape(format!(
                "tensor data length {} does not match shape {:?}",
                E::alen(&data),
                shape
            )));
        }
        Ok(ShareTensor { data, shape })
    }

    pub fn len(&self) -> usize {
        E::alen(&self.data)
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if self.len() != expect {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn zeros(e: &E, shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        let data = e.constant(&vec![<E::R as crate::ring::Ring>::ZERO; n]);
        ShareTensor { data, shape }
    }
}

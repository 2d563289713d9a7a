use std::cell::OnceCell;
use std::rc::Rc;

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Fixed linear map `y = M x` stored in compressed-row form.
///
/// Used for resampling-style image transforms (flips, shifts, bilinear
/// warps) whose adjoint is needed for backpropagation.
#[derive(Debug)]
pub struct SparseMap<T: Element> {
    in_shape: Vec<usize>,
    out_shape: Vec<usize>,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<T>,
    transpose: OnceCell<Rc<SparseMap<T>>>,
}

/// Row-by-row builder for [`SparseMap`].
pub struct SparseBuilder<T: Element> {
    in_shape: Vec<usize>,
    out_shape: Vec<usize>,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<T>,
}

impl<T: Element> SparseBuilder<T> {
    pub fn new(in_shape: &[usize], out_shape: &[usize]) -> Self {
        SparseBuilder {
            in_shape: in_shape.to_vec(),
            out_shape: out_shape.to_vec(),
            indptr: vec![0],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Append the next output row as `(input index, weight)` taps.
    pub fn push_row(&mut self, taps: impl IntoIterator<Item = (usize, T)>) {
        for (i, v) in taps {
            self.indices.push(i);
            self.values.push(v);
        }
        self.indptr.push(self.indices.len());
    }

    pub fn build(self) -> Result<SparseMap<T>> {
        let rows: usize = self.out_shape.iter().product();
        let cols: usize = self.in_shape.iter().product();
        if self.indptr.len() != rows + 1 {
            return Err(TensorError::invalid(
                "sparse_map",
                format!("{} rows for output of {rows}", self.indptr.len() - 1),
            ));
        }
        if self.indices.iter().any(|&i| i >= cols) {
            return Err(TensorError::invalid("sparse_map", "column index out of range"));
        }
        Ok(SparseMap {
            in_shape: self.in_shape,
            out_shape: self.out_shape,
            indptr: self.indptr,
            indices: self.indices,
            values: self.values,
            transpose: OnceCell::new(),
        })
    }
}

impl<T: Element> SparseMap<T> {
    pub fn in_shape(&self) -> &[usize] {
        &self.in_shape
    }

    pub fn out_shape(&self) -> &[usize] {
        &self.out_shape
    }

    pub fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.shape() != self.in_shape.as_slice() {
            return Err(TensorError::shape(
                "sparse_map",
                format!("{:?}", self.in_shape),
                x.shape(),
            ));
        }
        let xd = x.data();
        let rows = self.indptr.len() - 1;
        let mut out = Vec::with_capacity(rows);
        for r in 0..rows {
            let mut acc = T::zero();
            for j in self.indptr[r]..self.indptr[r + 1] {
                acc = acc + self.values[j] * xd[self.indices[j]];
            }
            out.push(acc);
        }
        Tensor::new(&self.out_shape, out)
    }

    /// The adjoint map, computed once and cached.
    pub fn transpose(&self) -> Rc<SparseMap<T>> {
        Rc::clone(self.transpose.get_or_init(|| {
            let cols: usize = self.in_shape.iter().product();
            let mut rows_of: Vec<Vec<(usize, T)>> = vec![Vec::new(); cols];
            for r in 0..self.indptr.len() - 1 {
                for j in self.indptr[r]..self.indptr[r + 1] {
                    rows_of[self.indices[j]].push((r, self.values[j]));
                }
            }
            let mut b = SparseBuilder::new(&self.out_shape, &self.in_shape);
            for taps in rows_of {
                b.push_row(taps);
            }
            Rc::new(b.build().expect("transpose of a valid map is valid"))
        }))
    }
}

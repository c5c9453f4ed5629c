use crate::error::{shape_err, Result};
use crate::numerics::Scalar;

/// NCHW tensor over a scalar field.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4<S = f64> {
    dims: [usize; 4],
    data: Vec<S>,
}

impl<S: Scalar> Tensor4<S> {
    pub fn new(dims: [usize; 4], data: Vec<S>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return shape_err(format!("tensor dims must be >= 1, got {dims:?}"));
        }
        if data.len() != dims.iter().product::<usize>() {
            return shape_err(format!(
                "tensor data length {} does not match {dims:?}",
                data.len()
            ));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: [usize; 4]) -> Self {
        Self {
            dims,
            data: vec![S::zero(); dims.iter().product()],
        }
    }

    pub fn from_fn(dims: [usize; 4], mut f: impl FnMut([usize; 4]) -> S) -> Self {
        let mut data = Vec::with_capacity(dims.iter().product());
        for n in 0..dims[0] {
            for c in 0..dims[1] {
                for h in 0..dims[2] {
                    for w in 0..dims[3] {
                        data.push(f([n, c, h, w]));
                    }
                }
            }
        }
        Self { dims, data }
    }

    #[inline]
    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }
    #[inline]
    pub fn n(&self) -> usize {
        self.dims[0]
    }
    #[inline]
    pub fn c(&self) -> usize {
        self.dims[1]
    }
    #[inline]
    pub fn h(&self) -> usize {
        self.dims[2]
    }
    #[inline]
    pub fn w(&self) -> usize {
        self.dims[3]
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[S] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.dims[1] + c) * self.dims[2] + h) * self.dims[3] + w
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> &S {
        &self.data[self.index(n, c, h, w)]
    }

    /// Slice holding one `(n, c)` plane.
    pub fn plane(&self, n: usize, c: usize) -> &[S] {
        let hw = self.dims[2] * self.dims[3];
        let start = (n * self.dims[1] + c) * hw;
        &self.data[start..start + hw]
    }

    pub fn map<T: Scalar>(&self, f: impl Fn(&S) -> T) -> Tensor4<T> {
        Tensor4 {
            dims: self.dims,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn to_f64(&self) -> Tensor4<f64> {
        self.map(Scalar::as_f64)
    }

    pub fn reshape(self, dims: [usize; 4]) -> Result<Self> {
        Self::new(dims, self.data)
    }

    /// Items `start..start+count` along the batch axis.
    pub fn batch_slice(&self, start: usize, count: usize) -> Result<Self> {
        if count == 0 || start + count > self.dims[0] {
            return shape_err(format!(
                "batch slice {start}..{} out of {}",
                start + count,
                self.dims[0]
            ));
        }
        let item = self.dims[1] * self.dims[2] * self.dims[3];
        Self::new(
            [count, self.dims[1], self.dims[2], self.dims[3]],
            self.data[start * item..(start + count) * item].to_vec(),
        )
    }

    /// Gathers the listed batch items into a new tensor.
    pub fn gather(&self, items: &[usize]) -> Result<Self> {
        let item = self.dims[1] * self.dims[2] * self.dims[3];
        let mut data = Vec::with_capacity(items.len() * item);
        for &i in items {
            if i >= self.dims[0] {
                return shape_err(format!("batch index {i} out of {}", self.dims[0]));
            }
            data.extend_from_slice(&self.data[i * item..(i + 1) * item]);
        }
        Self::new([items.len(), self.dims[1], self.dims[2], self.dims[3]], data)
    }
}

impl Tensor4<f64> {
    pub fn max_abs(&self) -> f64 {
        max_abs(&self.data)
    }

    pub fn round_f32(&mut self) {
        crate::numerics::Precision::F32.apply_slice(&mut self.data);
    }
}

pub fn max_abs(data: &[f64]) -> f64 {
    data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Maximum of `|a - b| / max(|b|, floor)` over all elements.
pub fn max_rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / y.abs().max(floor))
        .fold(0.0, f64::max)
}

/// `‖a - b‖₂ / ‖b‖₂`, or the absolute error norm when `b` is zero.
pub fn rel_l2_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    if den == 0.0 {
        num.sqrt()
    } else {
        (num / den).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes() {
        assert!(Tensor4::<f64>::new([1, 1, 2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor4::<f64>::new([1, 0, 2, 2], vec![]).is_err());
    }

    #[test]
    fn nchw_indexing() {
        let t = Tensor4::from_fn([2, 3, 4, 5], |[n, c, h, w]| (n * 1000 + c * 100 + h * 10 + w) as f64);
        assert_eq!(*t.at(1, 2, 3, 4), 1234.0);
        assert_eq!(t.plane(1, 1)[0], 1100.0);
        let g = t.gather(&[1]).unwrap();
        assert_eq!(*g.at(0, 0, 0, 1), 1001.0);
    }
}

use crate::error::{shape_err, Result};
use crate::numerics::Scalar;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat<S = f64> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> Mat<S> {
    pub fn new(rows: usize, cols: usize, data: Vec<S>) -> Result<Self> {
        if data.len() != rows * cols {
            return shape_err(format!(
                "matrix data length {} does not match {}x{}",
                data.len(),
                rows,
                cols
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![S::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = S::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> S) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<S>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return shape_err("ragged rows");
        }
        Ok(Self {
            rows: r,
            cols: c,
            data: rows.iter().flatten().cloned().collect(),
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
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
    pub fn get(&self, i: usize, j: usize) -> &S {
        &self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: S) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[S] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i).clone())
    }

    pub fn scale(&self, k: &S) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v.clone() * k.clone()).collect(),
        }
    }

    pub fn map<T: Scalar>(&self, f: impl Fn(&S) -> T) -> Mat<T> {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn to_f64(&self) -> Mat<f64> {
        self.map(Scalar::as_f64)
    }
}

/// Standard matrix product `a · b` in the scalar field of the inputs.
pub fn gemm<S: Scalar>(a: &Mat<S>, b: &Mat<S>) -> Result<Mat<S>> {
    if a.cols != b.rows {
        return shape_err(format!(
            "gemm: {}x{} times {}x{}",
            a.rows, a.cols, b.rows, b.cols
        ));
    }
    let mut out = Mat::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let orow: &mut [S] = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for k in 0..a.cols {
            let aik = &a.data[i * a.cols + k];
            if aik.is_exact_zero() {
                continue;
            }
            let brow = &b.data[k * b.cols..(k + 1) * b.cols];
            for (o, bkj) in orow.iter_mut().zip(brow) {
                *o = o.clone() + aik.clone() * bkj.clone();
            }
        }
    }
    Ok(out)
}

/// `m · x · mᵀ`, the shape of every transform in the Winograd pipeline.
pub fn sandwich<S: Scalar>(m: &Mat<S>, x: &Mat<S>) -> Result<Mat<S>> {
    if m.cols != x.rows || x.rows != x.cols {
        return shape_err(format!(
            "sandwich: {}x{} around {}x{}",
            m.rows, m.cols, x.rows, x.cols
        ));
    }
    let mut out = Mat::zeros(m.rows, m.rows);
    let mut scratch = vec![S::zero(); m.rows * x.cols];
    sandwich_into(m.data(), m.rows, m.cols, x.data(), &mut scratch, &mut out.data);
    Ok(out)
}

/// Slice form of [`sandwich`]: `m` is `rows x inner`, `x` is `inner x inner`,
/// `out` is `rows x rows`. `scratch` must hold `rows * inner` values.
#[inline]
pub fn sandwich_into<S: Scalar>(
    m: &[S],
    rows: usize,
    inner: usize,
    x: &[S],
    scratch: &mut [S],
    out: &mut [S],
) {
    // scratch = m · x
    for i in 0..rows {
        for j in 0..inner {
            let mut acc = S::zero();
            for k in 0..inner {
                let mik = &m[i * inner + k];
                if mik.is_exact_zero() {
                    continue;
                }
                acc = acc + mik.clone() * x[k * inner + j].clone();
            }
            scratch[i * inner + j] = acc;
        }
    }
    // out = scratch · mᵀ
    for i in 0..rows {
        for j in 0..rows {
            let mut acc = S::zero();
            for k in 0..inner {
                let mjk = &m[j * inner + k];
                if mjk.is_exact_zero() {
                    continue;
                }
                acc = acc + scratch[i * inner + k].clone() * mjk.clone();
            }
            out[i * rows + j] = acc;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{rat, Rational};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn m(rows: &[&[f64]]) -> Mat<f64> {
        Mat::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn gemm_identity_and_projector() {
        let x = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(gemm(&Mat::identity(2), &x).unwrap(), x);
        let p = m(&[&[1.0, 0.0], &[0.0, 0.0]]);
        let y = m(&[&[5.0, 6.0], &[7.0, 8.0]]);
        assert_eq!(gemm(&p, &y).unwrap(), m(&[&[5.0, 6.0], &[0.0, 0.0]]));
    }

    #[test]
    fn gemm_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Mat::from_fn(3, 4, |_, _| rng.random_range(-1.0..1.0));
        let b = Mat::from_fn(4, 2, |_, _| rng.random_range(-1.0..1.0));
        let c = gemm(&a, &b).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let mut s = 0.0;
                for k in 0..4 {
                    s += a.get(i, k) * b.get(k, j);
                }
                assert!((c.get(i, j) - s).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn gemm_rejects_mismatch() {
        let a: Mat<f64> = Mat::zeros(2, 3);
        assert!(gemm(&a, &a).is_err());
    }

    #[test]
    fn sandwich_identity_and_scaling() {
        let x = m(&[&[1.0, -2.0], &[0.5, 4.0]]);
        assert_eq!(sandwich(&Mat::identity(2), &x).unwrap(), x);
        let two = Mat::<f64>::identity(2).scale(&2.0);
        assert_eq!(sandwich(&two, &x).unwrap(), x.scale(&4.0));
    }

    #[test]
    fn sandwich_is_two_gemms_exactly_in_rationals() {
        let bt = Mat::from_rows(&[
            vec![rat(1, 1), rat(0, 1), rat(-1, 1), rat(0, 1)],
            vec![rat(0, 1), rat(1, 1), rat(1, 1), rat(0, 1)],
            vec![rat(0, 1), rat(-1, 1), rat(1, 1), rat(0, 1)],
            vec![rat(0, 1), rat(1, 1), rat(0, 1), rat(-1, 1)],
        ])
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let d: Mat<Rational> = Mat::from_fn(4, 4, |_, _| rat(rng.random_range(-9..=9), 1));
        let direct = sandwich(&bt, &d).unwrap();
        let composed = gemm(&gemm(&bt, &d).unwrap(), &bt.transpose()).unwrap();
        assert_eq!(direct, composed);
    }
}

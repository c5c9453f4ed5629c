use num_traits::{One, Zero};

use crate::error::{shape_err, Error, Result};
use crate::numerics::{Mat, Rational, Scalar};
use crate::transforms::PolyPoints;

/// Transformation triple for F(m×m, r×r): filter transform `G`
/// ((m+r-1)×r), input transform `Bᵀ` ((m+r-1)×(m+r-1)) and output transform
/// `Aᵀ` (m×(m+r-1)).
#[derive(Debug, Clone, PartialEq)]
pub struct WinogradTransform<S = Rational> {
    pub m: usize,
    pub r: usize,
    pub g: Mat<S>,
    pub bt: Mat<S>,
    pub at: Mat<S>,
    pub points: PolyPoints,
    pub learnable: bool,
}

impl<S: Scalar> WinogradTransform<S> {
    /// Tile edge `m + r - 1`.
    #[inline]
    pub fn tile(&self) -> usize {
        self.m + self.r - 1
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.tile();
        let ok = (self.g.rows(), self.g.cols()) == (n, self.r)
            && (self.bt.rows(), self.bt.cols()) == (n, n)
            && (self.at.rows(), self.at.cols()) == (self.m, n);
        if !ok {
            return shape_err(format!(
                "transform shapes G {}x{}, Bt {}x{}, At {}x{} do not fit F({}, {})",
                self.g.rows(),
                self.g.cols(),
                self.bt.rows(),
                self.bt.cols(),
                self.at.rows(),
                self.at.cols(),
                self.m,
                self.r
            ));
        }
        Ok(())
    }

    pub fn cast<T: Scalar>(&self, f: impl Fn(&S) -> T + Copy) -> WinogradTransform<T> {
        WinogradTransform {
            m: self.m,
            r: self.r,
            g: self.g.map(f),
            bt: self.bt.map(f),
            at: self.at.map(f),
            points: self.points.clone(),
            learnable: self.learnable,
        }
    }

    pub fn to_f64(&self) -> WinogradTransform<f64> {
        self.cast(Scalar::as_f64)
    }

    /// 1D filtering: `Aᵀ[(G g) ⊙ (Bᵀ d)]`, producing `m` outputs.
    pub fn apply_1d(&self, d: &[S], g: &[S]) -> Result<Vec<S>> {
        let n = self.tile();
        if d.len() != n || g.len() != self.r {
            return shape_err(format!(
                "1D filter needs {} inputs and {} taps, got {} and {}",
                n,
                self.r,
                d.len(),
                g.len()
            ));
        }
        let prod: Vec<S> = (0..n)
            .map(|j| {
                let u = dot(self.g.row(j), g);
                let v = dot(self.bt.row(j), d);
                u * v
            })
            .collect();
        Ok((0..self.m).map(|i| dot(self.at.row(i), &prod)).collect())
    }
}

fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter()
        .zip(b)
        .filter(|(x, _)| !x.is_exact_zero())
        .fold(S::zero(), |acc, (x, y)| acc + x.clone() * y.clone())
}

/// Coefficients (ascending powers) of `∏ (x - a)` over `roots`.
fn poly_from_roots(roots: &[&Rational]) -> Vec<Rational> {
    let mut coeffs = vec![Rational::one()];
    for a in roots {
        let mut next = vec![Rational::zero(); coeffs.len() + 1];
        for (i, c) in coeffs.iter().enumerate() {
            next[i + 1] += c;
            next[i] -= c * *a;
        }
        coeffs = next;
    }
    coeffs
}

fn pow(a: &Rational, k: usize) -> Rational {
    (0..k).fold(Rational::one(), |acc, _| acc * a)
}

/// Cook-Toom construction of the F(m, r) filtering algorithm.
///
/// Linear convolution of an `m`-term signal with an `r`-tap filter is
/// evaluated at the points (`E` matrices) and recovered by Lagrange
/// interpolation (`C`), with infinity contributing the leading coefficient.
/// Correlation is the transpose of that algorithm, which gives
/// `Aᵀ = E_mᵀ`, `G = E_r`, `Bᵀ = Cᵀ`. The Lagrange denominators are moved
/// from `Bᵀ` into `G`, so integer points give an integer `Bᵀ`.
pub fn cook_toom_1d(m: usize, r: usize, points: &PolyPoints) -> Result<WinogradTransform> {
    if m < 1 || r < 2 {
        return Err(Error::Construction(format!(
            "F({m}, {r}) needs m >= 1 and r >= 2"
        )));
    }
    let n = m + r - 1;
    if points.count() != n {
        return shape_err(format!(
            "F({m}, {r}) needs {n} points, got {}",
            points.count()
        ));
    }
    let pts = PolyPoints::new(points.finite.clone(), points.infinity)?;
    let finite = &pts.finite;
    let nf = finite.len();

    let mut g = Mat::<Rational>::zeros(n, r);
    let mut bt = Mat::<Rational>::zeros(n, n);
    let mut at = Mat::<Rational>::zeros(m, n);

    for (j, a) in finite.iter().enumerate() {
        let others: Vec<&Rational> = finite.iter().enumerate().filter(|(l, _)| *l != j).map(|(_, b)| b).collect();
        let denom = others.iter().fold(Rational::one(), |acc, b| acc * (a - *b));
        for k in 0..r {
            g.set(j, k, pow(a, k) / &denom);
        }
        for (i, c) in poly_from_roots(&others).into_iter().enumerate() {
            bt.set(j, i, c);
        }
        for i in 0..m {
            at.set(i, j, pow(a, i));
        }
    }
    if pts.infinity {
        let j = nf;
        g.set(j, r - 1, Rational::one());
        let all: Vec<&Rational> = finite.iter().collect();
        for (i, c) in poly_from_roots(&all).into_iter().enumerate() {
            bt.set(j, i, c);
        }
        at.set(m - 1, j, Rational::one());
    }

    Ok(WinogradTransform {
        m,
        r,
        g,
        bt,
        at,
        points: pts,
        learnable: false,
    })
}

/// Cook-Toom construction with the shipped default points.
pub fn default_transform(m: usize, r: usize) -> Result<WinogradTransform> {
    cook_toom_1d(m, r, &crate::transforms::default_points(m, r)?)
}

/// Hadamard-stage multiplications per tile per channel pair: `(m+r-1)²`.
pub fn hadamard_mults_per_tile(m: usize, r: usize) -> usize {
    (m + r - 1) * (m + r - 1)
}

/// Multiplications per output of the Hadamard stage, `((m+r-1)/m)²`, exact.
pub fn mults_per_output(m: usize, r: usize) -> Rational {
    crate::numerics::rat(hadamard_mults_per_tile(m, r) as i64, (m * m) as i64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rat;
    use crate::transforms::{default_points, leading_points};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct correlation over rationals, the oracle for every construction.
    fn correlate(d: &[Rational], g: &[Rational], m: usize) -> Vec<Rational> {
        (0..m)
            .map(|i| (0..g.len()).fold(Rational::zero(), |acc, k| acc + &d[i + k] * &g[k]))
            .collect()
    }

    fn check_exact(tf: &WinogradTransform, trials: usize, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = tf.tile();
        for _ in 0..trials {
            let d: Vec<Rational> = (0..n).map(|_| rat(rng.random_range(-50..=50), 1)).collect();
            let g: Vec<Rational> = (0..tf.r).map(|_| rat(rng.random_range(-50..=50), 1)).collect();
            assert_eq!(tf.apply_1d(&d, &g).unwrap(), correlate(&d, &g, tf.m));
        }
    }

    #[test]
    fn f2_shapes_and_entries() {
        let tf = default_transform(2, 3).unwrap();
        assert_eq!((tf.g.rows(), tf.g.cols()), (4, 3));
        assert_eq!((tf.bt.rows(), tf.bt.cols()), (4, 4));
        assert_eq!((tf.at.rows(), tf.at.cols()), (2, 4));
        // the familiar F(2,3) output transform
        let at: Vec<Rational> = [1, 1, 1, 0, 0, 1, -1, 1].iter().map(|v| rat(*v, 1)).collect();
        assert_eq!(tf.at.data(), at.as_slice());
        tf.validate().unwrap();
    }

    #[test]
    fn minimal_f1_2_is_direct() {
        let tf = cook_toom_1d(1, 2, &PolyPoints::new(vec![rat(0, 1)], true).unwrap()).unwrap();
        check_exact(&tf, 200, 1);
    }

    #[test]
    fn every_default_config_is_exact() {
        for (m, r) in crate::transforms::SUPPORTED {
            let tf = default_transform(m, r).unwrap();
            check_exact(&tf, 1000, (m * 10 + r) as u64);
        }
    }

    #[test]
    fn construction_without_infinity() {
        let pts = PolyPoints::new(vec![rat(0, 1), rat(1, 1), rat(-1, 1), rat(2, 1)], false).unwrap();
        let tf = cook_toom_1d(2, 3, &pts).unwrap();
        check_exact(&tf, 200, 5);
    }

    #[test]
    fn larger_nonstandard_sizes() {
        for (m, r) in [(3, 3), (8, 3), (3, 2), (5, 4)] {
            let tf = cook_toom_1d(m, r, &leading_points(m + r - 2)).unwrap();
            check_exact(&tf, 100, 9);
        }
    }

    #[test]
    fn permuting_points_keeps_outputs() {
        let mut pts = default_points(4, 3).unwrap();
        let a = cook_toom_1d(4, 3, &pts).unwrap();
        pts.finite.reverse();
        let b = cook_toom_1d(4, 3, &pts).unwrap();
        assert_ne!(a.g, b.g);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let d: Vec<Rational> = (0..6).map(|_| rat(rng.random_range(-9..=9), 1)).collect();
            let g: Vec<Rational> = (0..3).map(|_| rat(rng.random_range(-9..=9), 1)).collect();
            assert_eq!(a.apply_1d(&d, &g).unwrap(), b.apply_1d(&d, &g).unwrap());
        }
    }

    #[test]
    fn construction_errors() {
        let dup = PolyPoints {
            finite: vec![rat(0, 1), rat(0, 1), rat(1, 1)],
            infinity: true,
        };
        assert!(matches!(cook_toom_1d(2, 3, &dup), Err(Error::Construction(_))));
        let short = PolyPoints::new(vec![rat(0, 1)], true).unwrap();
        assert!(matches!(cook_toom_1d(2, 3, &short), Err(Error::Shape(_))));
        assert!(cook_toom_1d(2, 1, &short).is_err());
    }

    #[test]
    fn multiplication_bookkeeping() {
        assert_eq!(hadamard_mults_per_tile(2, 3), 16);
        assert_eq!(mults_per_output(2, 3), rat(4, 1));
        assert_eq!(mults_per_output(4, 3), rat(9, 4));
    }
}

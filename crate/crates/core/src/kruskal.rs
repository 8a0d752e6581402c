//! Kruskal tensors `[λ; A_1, …, A_d]` and the Gram-matrix algebra CP-ALS needs.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{DenseTensor, Matrix, Shape};

/// An `I_k × R` factor matrix, row-major so that `A(i, j..j+F)` is contiguous.
pub type FactorMatrix = Matrix;

#[derive(Clone, Debug, PartialEq)]
pub struct KruskalTensor {
    lambda: Vec<f64>,
    factors: Vec<FactorMatrix>,
}

impl KruskalTensor {
    pub fn new(lambda: Vec<f64>, factors: Vec<FactorMatrix>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::Shape("a Kruskal tensor needs at least one factor".into()));
        }
        let rank = lambda.len();
        for (k, f) in factors.iter().enumerate() {
            if f.cols() != rank {
                return Err(Error::Shape(format!(
                    "factor {k} has {} columns, expected {rank}",
                    f.cols()
                )));
            }
            if f.rows() == 0 {
                return Err(Error::Shape(format!("factor {k} has no rows")));
            }
            if f.data().iter().any(|x| !x.is_finite()) {
                return Err(Error::Input(format!("factor {k} has non-finite entries")));
            }
        }
        if lambda.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::Input("weights must be finite and nonnegative".into()));
        }
        Ok(KruskalTensor { lambda, factors })
    }

    /// Unit weights and factor entries drawn i.i.d. from `[0, 1)`, factor by
    /// factor in row-major order.
    pub fn random<R: Rng + ?Sized>(dims: &[usize], rank: usize, rng: &mut R) -> Result<Self> {
        let factors = dims
            .iter()
            .map(|&n| Matrix::from_fn(n, rank, |_, _| rng.random::<f64>()))
            .collect();
        KruskalTensor::new(vec![1.0; rank], factors)
    }

    pub fn rank(&self) -> usize {
        self.lambda.len()
    }

    pub fn ndims(&self) -> usize {
        self.factors.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.factors.iter().map(Matrix::rows).collect()
    }

    pub fn shape(&self) -> Result<Shape> {
        Shape::new(self.dims())
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn factors(&self) -> &[FactorMatrix] {
        &self.factors
    }

    pub fn factor(&self, mode: usize) -> &FactorMatrix {
        &self.factors[mode]
    }

    pub fn into_parts(self) -> (Vec<f64>, Vec<FactorMatrix>) {
        (self.lambda, self.factors)
    }

    /// Same factors with every weight set to one.
    pub fn with_unit_weights(&self) -> KruskalTensor {
        KruskalTensor { lambda: vec![1.0; self.rank()], factors: self.factors.clone() }
    }

    /// Replaces the weights, keeping the factors.
    pub fn set_weights(&mut self, lambda: Vec<f64>) -> Result<()> {
        if lambda.len() != self.rank() {
            return Err(Error::Shape(format!("{} weights for rank {}", lambda.len(), self.rank())));
        }
        if lambda.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::Input("weights must be finite and nonnegative".into()));
        }
        self.lambda = lambda;
        Ok(())
    }

    /// Replaces factor `mode` with a matrix of the same shape.
    pub fn set_factor(&mut self, mode: usize, factor: FactorMatrix) -> Result<()> {
        if mode >= self.ndims() {
            return Err(Error::Mode { mode, ndims: self.ndims() });
        }
        let old = &self.factors[mode];
        if (factor.rows(), factor.cols()) != (old.rows(), old.cols()) {
            return Err(Error::Shape(format!(
                "factor {mode} must be {}x{}, got {}x{}",
                old.rows(),
                old.cols(),
                factor.rows(),
                factor.cols()
            )));
        }
        if factor.data().iter().any(|x| !x.is_finite()) {
            return Err(Error::Input(format!("factor {mode} has non-finite entries")));
        }
        self.factors[mode] = factor;
        Ok(())
    }

    /// Checks that the factor row counts match `shape`.
    pub fn check_shape(&self, shape: &Shape) -> Result<()> {
        if self.dims() != shape.dims() {
            return Err(Error::Shape(format!(
                "Kruskal tensor of shape {:?} does not match tensor of shape {:?}",
                self.dims(),
                shape.dims()
            )));
        }
        Ok(())
    }

    /// Densifies `Σ_j λ_j a_j⁽¹⁾ ∘ … ∘ a_j⁽ᵈ⁾`.
    pub fn full(&self) -> Result<DenseTensor> {
        let shape = self.shape()?;
        let rank = self.rank();
        let mut prod = vec![0.0; rank];
        Ok(DenseTensor::from_fn(shape, |coords| {
            prod.copy_from_slice(&self.lambda);
            for (f, &i) in self.factors.iter().zip(coords) {
                prod.iter_mut().zip(f.row(i)).for_each(|(p, a)| *p *= a);
            }
            prod.iter().sum()
        }))
    }

    /// `Γ⁽ᵏ⁾ = ⊛_{m≠k} A_mᵀ A_m`.
    pub fn hadamard_gram(&self, mode: usize) -> Result<Matrix> {
        if mode >= self.ndims() {
            return Err(Error::Mode { mode, ndims: self.ndims() });
        }
        let mut acc = Matrix::filled(self.rank(), self.rank(), 1.0);
        for (m, f) in self.factors.iter().enumerate() {
            if m != mode {
                acc = acc.hadamard(&gram(f))?;
            }
        }
        Ok(acc)
    }

    /// `⟨Y, M⟩ = Σ_{n,j} G(n, j)·A_k(n, j)` where `g` is the mode-k MTTKRP of
    /// `y` against this tensor with the weights applied.
    pub fn inner(&self, y: &DenseTensor, mode: usize, g: &Matrix) -> Result<f64> {
        self.check_shape(y.shape())?;
        if mode >= self.ndims() {
            return Err(Error::Mode { mode, ndims: self.ndims() });
        }
        let a = &self.factors[mode];
        if (g.rows(), g.cols()) != (a.rows(), a.cols()) {
            return Err(Error::Shape(format!(
                "MTTKRP result is {}x{}, factor {mode} is {}x{}",
                g.rows(),
                g.cols(),
                a.rows(),
                a.cols()
            )));
        }
        Ok(g.data().iter().zip(a.data()).map(|(x, y)| x * y).sum())
    }

    /// `‖M‖²_F = λᵀ (⊛_m A_mᵀ A_m) λ`.
    pub fn norm_squared(&self) -> f64 {
        let r = self.rank();
        let mut acc = Matrix::filled(r, r, 1.0);
        for f in &self.factors {
            acc = acc.hadamard(&gram(f)).expect("square Gram matrices");
        }
        let mut total = 0.0;
        for i in 0..r {
            for j in 0..r {
                total += self.lambda[i] * acc.get(i, j) * self.lambda[j];
            }
        }
        total
    }

    /// Rescales every factor column to unit 2-norm and absorbs the scales into
    /// λ. A zero column is left as is and its weight becomes zero.
    pub fn normalize_columns(&self) -> KruskalTensor {
        let mut out = self.clone();
        for f in &mut out.factors {
            for j in 0..f.cols() {
                let norm = (0..f.rows()).map(|i| f.get(i, j).powi(2)).sum::<f64>().sqrt();
                if norm > 0.0 {
                    out.lambda[j] *= norm;
                    for i in 0..f.rows() {
                        f.set(i, j, f.get(i, j) / norm);
                    }
                } else {
                    out.lambda[j] = 0.0;
                }
            }
        }
        out
    }

    /// Text export: `KTEN R d`, the weights, then each factor as `I_k R`
    /// followed by one row per line, all with 17 significant digits.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "KTEN {} {}", self.rank(), self.ndims());
        let _ = writeln!(s, "{}", join_values(&self.lambda));
        for f in &self.factors {
            let _ = writeln!(s, "{} {}", f.rows(), f.cols());
            for i in 0..f.rows() {
                let _ = writeln!(s, "{}", join_values(f.row(i)));
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<KruskalTensor> {
        let mut tokens = text.split_whitespace();
        let mut next = |what: &str| {
            tokens
                .next()
                .ok_or_else(|| Error::Format(format!("KTEN text ends before {what}")))
        };
        if next("magic")? != "KTEN" {
            return Err(Error::Format("missing KTEN header".into()));
        }
        let rank = parse_usize(next("rank")?)?;
        let d = parse_usize(next("mode count")?)?;
        let mut lambda = Vec::with_capacity(rank);
        for _ in 0..rank {
            lambda.push(parse_f64(next("weights")?)?);
        }
        let mut factors = Vec::with_capacity(d);
        for k in 0..d {
            let rows = parse_usize(next("factor rows")?)?;
            let cols = parse_usize(next("factor columns")?)?;
            if cols != rank {
                return Err(Error::Format(format!("factor {k} declares {cols} columns, rank is {rank}")));
            }
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                data.push(parse_f64(next("factor values")?)?);
            }
            factors.push(Matrix::new(rows, cols, data)?);
        }
        if tokens.next().is_some() {
            return Err(Error::Format("trailing tokens after KTEN data".into()));
        }
        KruskalTensor::new(lambda, factors)
    }

    pub fn save_text(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load_text(path: impl AsRef<Path>) -> Result<KruskalTensor> {
        KruskalTensor::from_text(&fs::read_to_string(path)?)
    }
}

/// `AᵀA`, computed on the upper triangle and mirrored so it is exactly symmetric.
pub fn gram(a: &Matrix) -> Matrix {
    let r = a.cols();
    let mut g = Matrix::zeros(r, r);
    for i in 0..a.rows() {
        let row = a.row(i);
        for p in 0..r {
            let x = row[p];
            for q in p..r {
                g.data_mut()[p * r + q] += x * row[q];
            }
        }
    }
    for p in 0..r {
        for q in 0..p {
            let v = g.get(q, p);
            g.set(p, q, v);
        }
    }
    g
}

fn join_values(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:.16e}")).collect::<Vec<_>>().join(" ")
}

fn parse_usize(s: &str) -> Result<usize> {
    s.parse().map_err(|_| Error::Format(format!("expected an integer, found {s:?}")))
}

fn parse_f64(s: &str) -> Result<f64> {
    s.parse().map_err(|_| Error::Format(format!("expected a number, found {s:?}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn naive_gram(a: &Matrix) -> Matrix {
        a.transpose().matmul(a).unwrap()
    }

    fn rel_diff(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
    }

    #[test]
    fn full_of_constant_rank_one() {
        let ones = |n| Matrix::filled(n, 1, 1.0);
        let m = KruskalTensor::new(vec![2.5], vec![ones(2), ones(3), ones(4)]).unwrap();
        assert!(m.full().unwrap().data().iter().all(|&x| x == 2.5));
    }

    #[test]
    fn full_two_way_is_scaled_matrix_product() {
        let mut r = rng(1);
        let mut m = KruskalTensor::random(&[4, 3], 2, &mut r).unwrap();
        m.lambda = vec![0.5, 3.0];
        let mut a = m.factor(0).clone();
        a.scale_columns(m.lambda());
        let expected = a.matmul(&m.factor(1).transpose()).unwrap();
        let full = m.full().unwrap();
        for i in 0..4 {
            for j in 0..3 {
                assert!((full.at(&[i, j]) - expected.get(i, j)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn full_matches_triple_loop() {
        let mut r = rng(2);
        let mut m = KruskalTensor::random(&[2, 2, 2], 2, &mut r).unwrap();
        m.lambda = vec![1.5, 0.25];
        let full = m.full().unwrap();
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    let mut v = 0.0;
                    for c in 0..2 {
                        v += m.lambda[c]
                            * m.factor(0).get(i, c)
                            * m.factor(1).get(j, c)
                            * m.factor(2).get(k, c);
                    }
                    assert!((full.at(&[i, j, k]) - v).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn gram_examples() {
        assert_eq!(gram(&Matrix::identity(3)), Matrix::identity(3));
        assert_eq!(gram(&Matrix::filled(5, 3, 1.0)), Matrix::filled(3, 3, 5.0));
        let a = Matrix::new(3, 2, vec![1.0, -2.0, 0.5, 4.0, 3.0, 0.25]).unwrap();
        let g = gram(&a);
        assert!(g.distance(&naive_gram(&a)).unwrap() < 1e-14);
        assert_eq!(g.get(0, 1).to_bits(), g.get(1, 0).to_bits());
    }

    #[test]
    fn hadamard_gram_examples() {
        let mut r = rng(3);
        let m = KruskalTensor::random(&[3, 4], 3, &mut r).unwrap();
        assert_eq!(m.hadamard_gram(0).unwrap(), Matrix::filled(3, 3, 1.0).hadamard(&gram(m.factor(1))).unwrap());

        let ones = |n| Matrix::filled(n, 2, 1.0);
        let m = KruskalTensor::new(vec![1.0; 2], vec![ones(2), ones(3), ones(5)]).unwrap();
        assert_eq!(m.hadamard_gram(1).unwrap(), Matrix::filled(2, 2, 10.0));

        let m = KruskalTensor::random(&[3, 2, 4], 3, &mut r).unwrap();
        let expected = naive_gram(m.factor(0)).hadamard(&naive_gram(m.factor(2))).unwrap();
        assert!(m.hadamard_gram(1).unwrap().distance(&expected).unwrap() < 1e-14);
        assert!(matches!(m.hadamard_gram(3), Err(Error::Mode { .. })));
    }

    #[test]
    fn norm_squared_examples() {
        let unit = Matrix::new(2, 1, vec![0.6, 0.8]).unwrap();
        let m = KruskalTensor::new(vec![2.0], vec![unit.clone(), unit.clone(), unit]).unwrap();
        assert!((m.norm_squared() - 4.0).abs() < 1e-14);

        let mut r = rng(4);
        let mut m = KruskalTensor::random(&[2, 3, 2], 2, &mut r).unwrap();
        m.lambda = vec![0.7, 1.3];
        assert!(rel_diff(m.norm_squared(), m.full().unwrap().norm_squared()) < 1e-12);

        m.lambda = vec![0.0, 0.0];
        assert_eq!(m.norm_squared(), 0.0);
    }

    #[test]
    fn inner_examples() {
        let mut r = rng(5);
        let m = KruskalTensor::random(&[3, 4, 2], 2, &mut r).unwrap();
        let y = DenseTensor::random_uniform(m.shape().unwrap(), &mut r);

        // G by the element-wise definition, weights folded in.
        let mut g = Matrix::zeros(4, 2);
        for i in 0..3 {
            for j in 0..4 {
                for k in 0..2 {
                    for c in 0..2 {
                        let v = m.lambda()[c] * y.at(&[i, j, k]) * m.factor(0).get(i, c) * m.factor(2).get(k, c);
                        g.set(j, c, g.get(j, c) + v);
                    }
                }
            }
        }
        let dense: f64 = y.data().iter().zip(m.full().unwrap().data()).map(|(a, b)| a * b).sum();
        assert!(rel_diff(m.inner(&y, 1, &g).unwrap(), dense) < 1e-13);

        let zero = KruskalTensor::new(vec![0.0; 2], m.factors().to_vec()).unwrap();
        assert_eq!(zero.inner(&y, 1, &Matrix::zeros(4, 2)).unwrap(), 0.0);
        assert!(m.inner(&y, 1, &Matrix::zeros(3, 2)).is_err());
    }

    #[test]
    fn normalize_examples() {
        let unit = Matrix::new(2, 1, vec![0.6, 0.8]).unwrap();
        let m = KruskalTensor::new(vec![1.5], vec![unit.clone(), unit]).unwrap();
        assert_eq!(m.normalize_columns().lambda(), &[1.5]);

        let m = KruskalTensor::new(vec![2.0], vec![Matrix::new(2, 1, vec![3.0, 4.0]).unwrap()]).unwrap();
        let n = m.normalize_columns();
        assert_eq!(n.lambda(), &[10.0]);
        assert!((n.factor(0).get(0, 0) - 0.6).abs() < 1e-15);
        assert!((n.factor(0).get(1, 0) - 0.8).abs() < 1e-15);

        let z = KruskalTensor::new(vec![2.0, 1.0], vec![Matrix::new(2, 2, vec![0.0, 1.0, 0.0, 1.0]).unwrap()]).unwrap();
        let n = z.normalize_columns();
        assert_eq!(n.lambda()[0], 0.0);
        assert_eq!(n.factor(0).column(0), vec![0.0, 0.0]);
        assert!(n.lambda().iter().all(|x| x.is_finite()));
    }

    #[test]
    fn normalize_preserves_full() {
        let mut r = rng(6);
        for _ in 0..20 {
            let mut m = KruskalTensor::random(&[3, 2, 4], 3, &mut r).unwrap();
            m.lambda = (0..3).map(|_| r.random::<f64>() * 4.0).collect();
            let before = m.full().unwrap();
            let after = m.normalize_columns().full().unwrap();
            let diff: f64 = before.data().iter().zip(after.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!(diff <= 1e-13 * before.norm());
        }
    }

    #[test]
    fn hadamard_gram_is_positive_semidefinite() {
        let mut r = rng(7);
        for _ in 0..50 {
            let m = KruskalTensor::random(&[2, 3, 1, 4], 5, &mut r).unwrap();
            for k in 0..4 {
                let g = m.hadamard_gram(k).unwrap();
                let na = nalgebra::DMatrix::from_row_slice(5, 5, g.data());
                let floor = -1e-10 * g.frobenius_norm();
                assert!(na.symmetric_eigenvalues().iter().all(|&e| e >= floor));
            }
        }
    }

    #[test]
    fn text_round_trip() {
        let mut r = rng(8);
        let mut m = KruskalTensor::random(&[3, 1, 2], 2, &mut r).unwrap();
        m.lambda = vec![1.0 / 3.0, 7.25];
        let text = m.to_text();
        assert!(text.starts_with("KTEN 2 3\n"));
        assert_eq!(KruskalTensor::from_text(&text).unwrap(), m);
        assert!(KruskalTensor::from_text("KTEN 2 1\n1 2\n").is_err());
        assert!(KruskalTensor::from_text("NOPE").is_err());
    }

    #[test]
    fn rejects_inconsistent_parts() {
        assert!(KruskalTensor::new(vec![1.0], vec![Matrix::zeros(2, 2)]).is_err());
        assert!(KruskalTensor::new(vec![-1.0], vec![Matrix::zeros(2, 1)]).is_err());
        assert!(KruskalTensor::new(vec![1.0], vec![Matrix::filled(2, 1, f64::NAN)]).is_err());
        assert!(KruskalTensor::new(vec![], vec![]).is_err());
    }
}

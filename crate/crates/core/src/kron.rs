//! Kronecker matrix-vector products.
//!
//! Vectors over `Ξ₀ × … × Ξ_{d-1}` are stored lexicographically with axis 0
//! slowest. `matricize(v, shape, k)` returns the matrix whose rows run over
//! axis `k` and whose columns run over the remaining axes in lexicographic
//! order; `vectorize` inverts it.

use nalgebra::DMatrix;

use crate::error::{check_len, KpmeError, Result};

/// Limit on entries of a materialized Kronecker product.
pub const DENSE_KRON_LIMIT: u128 = 10_000_000;

pub fn matricize(v: &[f64], shape: &[usize], k: usize) -> Result<DMatrix<f64>> {
    if k >= shape.len() {
        return Err(KpmeError::invalid(format!("axis {k} out of range for {} axes", shape.len())));
    }
    let n: usize = shape.iter().product();
    check_len("matricize input", n, v.len())?;
    let rows = shape[k];
    let cols = n.checked_div(rows).unwrap_or(0);
    let inner: usize = shape[k + 1..].iter().product();
    Ok(DMatrix::from_fn(rows, cols, |r, c| {
        let (hi, lo) = (c / inner.max(1), c % inner.max(1));
        v[(hi * rows + r) * inner + lo]
    }))
}

pub fn vectorize(m: &DMatrix<f64>, k: usize, shape: &[usize]) -> Result<Vec<f64>> {
    if k >= shape.len() {
        return Err(KpmeError::invalid(format!("axis {k} out of range for {} axes", shape.len())));
    }
    let n: usize = shape.iter().product();
    check_len("vectorize rows", shape[k], m.nrows())?;
    check_len("vectorize entries", n, m.len())?;
    let rows = shape[k];
    let inner: usize = shape[k + 1..].iter().product();
    let mut v = vec![0.0; n];
    for c in 0..m.ncols() {
        let (hi, lo) = (c / inner.max(1), c % inner.max(1));
        for r in 0..rows {
            v[(hi * rows + r) * inner + lo] = m[(r, c)];
        }
    }
    Ok(v)
}

/// One factor of a Kronecker operand, dense or as a product `U V`.
#[derive(Clone, Debug, PartialEq)]
pub enum KronFactor {
    Dense(DMatrix<f64>),
    Factored { u: DMatrix<f64>, v: DMatrix<f64> },
}

impl KronFactor {
    pub fn factored(u: DMatrix<f64>, v: DMatrix<f64>) -> Result<Self> {
        check_len("factored operand inner dimension", u.ncols(), v.nrows())?;
        Ok(KronFactor::Factored { u, v })
    }

    pub fn nrows(&self) -> usize {
        match self {
            KronFactor::Dense(a) => a.nrows(),
            KronFactor::Factored { u, .. } => u.nrows(),
        }
    }

    pub fn ncols(&self) -> usize {
        match self {
            KronFactor::Dense(a) => a.ncols(),
            KronFactor::Factored { v, .. } => v.ncols(),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            KronFactor::Dense(a) => a.clone(),
            KronFactor::Factored { u, v } => u * v,
        }
    }

    /// Multiplies applied to a block with `cols` columns.
    fn multiplies(&self, cols: usize) -> u128 {
        let cols = cols as u128;
        match self {
            KronFactor::Dense(a) => a.nrows() as u128 * a.ncols() as u128 * cols,
            KronFactor::Factored { u, v } => (v.nrows() as u128 * v.ncols() as u128 + u.nrows() as u128 * u.ncols() as u128) * cols,
        }
    }

    fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            KronFactor::Dense(a) => a * x,
            KronFactor::Factored { u, v } => u * (v * x),
        }
    }
}

/// `A⁽⁰⁾ ⊗ A⁽¹⁾ ⊗ … ⊗ A⁽ᵈ⁻¹⁾`.
#[derive(Clone, Debug, PartialEq)]
pub struct KronOperand {
    factors: Vec<KronFactor>,
}

impl KronOperand {
    pub fn new(factors: Vec<KronFactor>) -> Result<Self> {
        if factors.is_empty() {
            return Err(KpmeError::invalid("a Kronecker operand needs at least one factor"));
        }
        Ok(Self { factors })
    }

    pub fn dense(factors: Vec<DMatrix<f64>>) -> Result<Self> {
        Self::new(factors.into_iter().map(KronFactor::Dense).collect())
    }

    pub fn factors(&self) -> &[KronFactor] {
        &self.factors
    }

    pub fn input_shape(&self) -> Vec<usize> {
        self.factors.iter().map(KronFactor::ncols).collect()
    }

    pub fn output_shape(&self) -> Vec<usize> {
        self.factors.iter().map(KronFactor::nrows).collect()
    }
}

pub fn kron_dense(op: &KronOperand) -> Result<DMatrix<f64>> {
    let rows: u128 = op.output_shape().iter().map(|&n| n as u128).product();
    let cols: u128 = op.input_shape().iter().map(|&n| n as u128).product();
    if rows * cols > DENSE_KRON_LIMIT {
        return Err(KpmeError::GuardExceeded {
            what: "dense Kronecker product",
            size: rows * cols,
            limit: DENSE_KRON_LIMIT,
        });
    }
    let mut acc = DMatrix::from_element(1, 1, 1.0);
    for f in op.factors() {
        acc = acc.kronecker(&f.to_dense());
    }
    Ok(acc)
}

pub fn kron_matvec_dense(op: &KronOperand, q: &[f64]) -> Result<Vec<f64>> {
    let a = kron_dense(op)?;
    check_len("Kronecker input", a.ncols(), q.len())?;
    Ok((a * nalgebra::DVector::from_column_slice(q)).as_slice().to_vec())
}

/// Shuffle product: for `p = d-1, …, 0`, unfold along axis `p`, multiply by
/// `A⁽ᵖ⁾`, fold back. Returns the result and the number of scalar multiplies.
pub fn kron_matvec_shuffle_counted(op: &KronOperand, q: &[f64]) -> Result<(Vec<f64>, u128)> {
    let mut shape = op.input_shape();
    check_len("Kronecker input", shape.iter().product(), q.len())?;
    let mut count = 0u128;
    let mut x = q.to_vec();
    for (p, f) in op.factors().iter().enumerate().rev() {
        let m = matricize(&x, &shape, p)?;
        count += f.multiplies(m.ncols());
        let y = f.apply(&m);
        shape[p] = f.nrows();
        x = vectorize(&y, p, &shape)?;
    }
    Ok((x, count))
}

pub fn kron_matvec_shuffle(op: &KronOperand, q: &[f64]) -> Result<Vec<f64>> {
    kron_matvec_shuffle_counted(op, q).map(|(x, _)| x)
}

/// Multiply count of the shuffle product:
/// `Σ_p M_p N_p Π_{k<p} N_k Π_{k>p} M_k` for dense factors, with `M_p N_p`
/// replaced by `R_p (M_p + N_p)` for factored ones.
pub fn op_count_estimate(op: &KronOperand) -> u128 {
    let (n, m) = (op.input_shape(), op.output_shape());
    op.factors()
        .iter()
        .enumerate()
        .map(|(p, f)| {
            let before: u128 = n[..p].iter().map(|&v| v as u128).product();
            let after: u128 = m[p + 1..].iter().map(|&v| v as u128).product();
            f.multiplies(1) * before * after
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn random_matrix(rng: &mut impl Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
        if den == 0.0 {
            num
        } else {
            num / den
        }
    }

    #[test]
    fn matricize_small_case() {
        let v = [0.0, 1.0, 10.0, 11.0]; // v_ij = 10 i + j
        let m = matricize(&v, &[2, 2], 1).unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[0.0, 10.0, 1.0, 11.0]));
        let m = matricize(&v, &[4], 0).unwrap();
        assert_eq!(m.as_slice(), &v);
    }

    #[test]
    fn matricize_rows_follow_axis() {
        let shape = [3, 4, 5];
        let v: Vec<f64> = (0..60).map(|i| i as f64).collect();
        for k in 0..3 {
            let m = matricize(&v, &shape, k).unwrap();
            assert_eq!(m.nrows(), shape[k]);
            assert_eq!(vectorize(&m, k, &shape).unwrap(), v);
        }
        // entry (i1; (i0, i2)) of the axis-1 unfolding
        let m = matricize(&v, &shape, 1).unwrap();
        assert_eq!(m[(2, 1 * 5 + 3)], (1 * 20 + 2 * 5 + 3) as f64);
        assert!(matricize(&v, &shape, 3).is_err());
        assert!(matricize(&v[1..], &shape, 0).is_err());
    }

    #[test]
    fn identities_and_definition() {
        let i2 = DMatrix::<f64>::identity(2, 2);
        let op = KronOperand::dense(vec![i2.clone(), i2.clone()]).unwrap();
        assert_eq!(kron_dense(&op).unwrap(), DMatrix::identity(4, 4));
        let q = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(kron_matvec_shuffle(&op, &q).unwrap(), q.to_vec());

        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = DMatrix::from_row_slice(2, 2, &[0.5, -1.0, 7.0, 0.25]);
        let k = kron_dense(&KronOperand::dense(vec![a.clone(), b.clone()]).unwrap()).unwrap();
        for (i0, i1, j0, j1) in (0..16).map(|t| (t >> 3 & 1, t >> 2 & 1, t >> 1 & 1, t & 1)) {
            assert_eq!(k[(2 * i0 + i1, 2 * j0 + j1)], a[(i0, j0)] * b[(i1, j1)]);
        }
    }

    #[test]
    fn single_factor_is_a_matvec() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let a = random_matrix(&mut rng, 3, 5);
        let q: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let op = KronOperand::dense(vec![a.clone()]).unwrap();
        let expected = &a * nalgebra::DVector::from_column_slice(&q);
        assert!(rel_err(&kron_matvec_shuffle(&op, &q).unwrap(), expected.as_slice()) < 1e-15);
    }

    #[test]
    fn rectangular_three_factor_case() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let op = KronOperand::dense(vec![
            random_matrix(&mut rng, 4, 3),
            random_matrix(&mut rng, 5, 2),
            random_matrix(&mut rng, 3, 6),
        ])
        .unwrap();
        let q: Vec<f64> = (0..36).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let fast = kron_matvec_shuffle(&op, &q).unwrap();
        assert_eq!(fast.len(), 60);
        assert!(rel_err(&fast, &kron_matvec_dense(&op, &q).unwrap()) <= 1e-12);
    }

    #[test]
    fn counts() {
        let l = 4;
        let sq = |rng: &mut rand_chacha::ChaCha8Rng| random_matrix(rng, l, l);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let op = KronOperand::dense(vec![sq(&mut rng), sq(&mut rng), sq(&mut rng)]).unwrap();
        assert_eq!(op_count_estimate(&op), 768);
        let (_, counted) = kron_matvec_shuffle_counted(&op, &vec![1.0; 64]).unwrap();
        assert_eq!(counted, 768);
        let op = KronOperand::dense(vec![random_matrix(&mut rng, 7, 7)]).unwrap();
        assert_eq!(op_count_estimate(&op), 49);

        let op = KronOperand::dense(vec![
            random_matrix(&mut rng, 4, 3),
            random_matrix(&mut rng, 5, 2),
            random_matrix(&mut rng, 3, 6),
        ])
        .unwrap();
        let (_, counted) = kron_matvec_shuffle_counted(&op, &vec![1.0; 36]).unwrap();
        assert_eq!(counted, op_count_estimate(&op));
    }

    #[test]
    fn dense_guard() {
        let big = DMatrix::<f64>::identity(100, 100);
        let op = KronOperand::dense(vec![big.clone(), big.clone(), big]).unwrap();
        assert!(matches!(kron_dense(&op), Err(KpmeError::GuardExceeded { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn shuffle_matches_dense(seed in any::<u64>(), dims in prop::collection::vec((1usize..7, 1usize..7, 0usize..3), 1..4)) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            // third component: 0 dense, 1 factored, 2 factored with rank 1
            let factors: Vec<KronFactor> = dims.iter().map(|&(r, c, kind)| match kind {
                0 => KronFactor::Dense(random_matrix(&mut rng, r, c)),
                k => {
                    let rank = if k == 1 { rng.gen_range(1..7) } else { 1 };
                    KronFactor::factored(random_matrix(&mut rng, r, rank), random_matrix(&mut rng, rank, c)).unwrap()
                }
            }).collect();
            let op = KronOperand::new(factors.clone()).unwrap();
            let n: usize = op.input_shape().iter().product();
            let q: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let fast = kron_matvec_shuffle(&op, &q).unwrap();
            prop_assert!(rel_err(&fast, &kron_matvec_dense(&op, &q).unwrap()) <= 1e-12);
            let dense_op = KronOperand::dense(factors.iter().map(KronFactor::to_dense).collect()).unwrap();
            prop_assert!(rel_err(&fast, &kron_matvec_shuffle(&dense_op, &q).unwrap()) <= 1e-12);
        }
    }
}

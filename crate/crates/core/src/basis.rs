//! Tensor-product B-spline basis over the state grid.
//!
//! Every coordinate except the previous-choice one gets a clamped B-spline
//! basis on `[0, q - 1]`; the categorical previous-choice coordinate is
//! crossed in as three indicator columns. Basis values are tabulated at the
//! integer grid points when the basis is built.

use crate::error::{Error, Result};
use crate::linalg::{cholesky_solve, SquareMatrix};
use crate::logit::ValueFunction;
use crate::model::{ModelSpec, State, MAX_DIMS, N_ACTIONS};
use crate::scalar::Scalar;

/// Approximation weights `w`, one per basis function.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightVector<F>(pub Vec<F>);

impl<F: Scalar> WeightVector<F> {
    pub fn zeros(k: usize) -> Self {
        WeightVector(vec![F::zero(); k])
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.0.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[F] {
        &self.0
    }

    pub fn max_abs(&self) -> F {
        self.0.iter().fold(F::zero(), |m, v| m.max(v.abs()))
    }

    /// Euclidean distance to `other`.
    pub fn distance(&self, other: &Self) -> F {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<F>()
            .sqrt()
    }
}

/// Univariate spline basis with values tabulated on `0..q`.
#[derive(Clone, Debug)]
pub struct Spline1d<F> {
    knots: Vec<F>,
    degree: usize,
    n_basis: usize,
    starts: Vec<u32>,
    table: Vec<F>,
}

impl<F: Scalar> Spline1d<F> {
    /// Clamped basis for coordinates `0..q`.
    ///
    /// For `degree >= 1`, `breakpoints` equally spaced breakpoints span
    /// `[0, q-1]` and the basis has `breakpoints + degree - 1` functions.
    /// For `degree == 0`, `breakpoints` equal cells partition `[-1/2, q-1/2]`,
    /// so `breakpoints == q` gives one indicator per grid value.
    pub fn clamped(q: u32, breakpoints: usize, degree: usize) -> Result<Self> {
        let knots = if degree == 0 {
            if breakpoints < 1 {
                return Err(Error::InvalidBasis("need at least one cell".into()));
            }
            let lo = -0.5;
            let width = q as f64 / breakpoints as f64;
            (0..=breakpoints).map(|i| F::of(lo + width * i as f64)).collect::<Vec<_>>()
        } else {
            if q < 2 {
                return Err(Error::InvalidBasis(format!(
                    "degenerate coordinate range 0..{q} for a degree-{degree} spline"
                )));
            }
            if breakpoints < degree + 1 {
                return Err(Error::InvalidBasis(format!(
                    "{breakpoints} knots per dimension is fewer than degree + 1 = {}",
                    degree + 1
                )));
            }
            let hi = (q - 1) as f64;
            let bp: Vec<F> = (0..breakpoints)
                .map(|i| F::of(hi * i as f64 / (breakpoints - 1) as f64))
                .collect();
            let mut knots = vec![bp[0]; degree];
            knots.extend_from_slice(&bp);
            knots.extend(std::iter::repeat_n(bp[breakpoints - 1], degree));
            knots
        };
        let n_basis = knots.len() - degree - 1;
        let mut spline = Spline1d {
            knots,
            degree,
            n_basis,
            starts: Vec::with_capacity(q as usize),
            table: Vec::with_capacity(q as usize * (degree + 1)),
        };
        for x in 0..q {
            let (start, vals) = spline.eval(F::of(x as f64));
            spline.starts.push(start as u32);
            spline.table.extend_from_slice(&vals);
        }
        Ok(spline)
    }

    #[inline]
    pub fn n_basis(&self) -> usize {
        self.n_basis
    }

    #[inline]
    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn knots(&self) -> &[F] {
        &self.knots
    }

    fn span(&self, x: F) -> usize {
        let d = self.degree;
        let n = self.n_basis;
        if x >= self.knots[n] {
            return n - 1;
        }
        if x <= self.knots[d] {
            return d;
        }
        let (mut lo, mut hi) = (d, n);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if x < self.knots[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo
    }

    /// Nonzero basis values at `x`: the index of the first one and `degree + 1` values.
    pub fn eval(&self, x: F) -> (usize, Vec<F>) {
        let d = self.degree;
        let span = self.span(x);
        let mut n = vec![F::zero(); d + 1];
        let mut left = vec![F::zero(); d + 1];
        let mut right = vec![F::zero(); d + 1];
        n[0] = F::one();
        for j in 1..=d {
            left[j] = x - self.knots[span + 1 - j];
            right[j] = self.knots[span + j] - x;
            let mut saved = F::zero();
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = if denom == F::zero() { F::zero() } else { n[r] / denom };
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        (span - d, n)
    }

    #[inline]
    fn at(&self, x: u32) -> (usize, &[F]) {
        let w = self.degree + 1;
        let i = x as usize;
        (self.starts[i] as usize, &self.table[i * w..(i + 1) * w])
    }
}

/// Sparse basis row: indices and values of the nonzero entries.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseRow<F> {
    pub indices: Vec<usize>,
    pub values: Vec<F>,
}

/// Tensor-product spline basis crossed with previous-choice indicators.
#[derive(Clone, Debug)]
pub struct BasisSet<F> {
    splines: Vec<(usize, Spline1d<F>)>,
    strides: Vec<usize>,
    dim_sizes: Vec<u32>,
    choice_dim: usize,
    k: usize,
    degree: usize,
    knots_per_dim: usize,
    ridge: bool,
}

/// Builds the basis over every non-categorical coordinate.
pub fn build_basis<F: Scalar>(model: &ModelSpec, knots_per_dim: usize, degree: usize) -> Result<BasisSet<F>> {
    BasisSet::build(model, knots_per_dim, degree)
}

impl<F: Scalar> BasisSet<F> {
    pub fn build(model: &ModelSpec, knots_per_dim: usize, degree: usize) -> Result<Self> {
        Self::build_excluding(model, knots_per_dim, degree, &[])
    }

    /// Basis that ignores the coordinates in `excluded` (e.g. age for per-period fits).
    pub fn build_excluding(
        model: &ModelSpec,
        knots_per_dim: usize,
        degree: usize,
        excluded: &[usize],
    ) -> Result<Self> {
        let choice_dim = model.last_choice_dim();
        let mut splines = Vec::new();
        for (j, &q) in model.dim_sizes().iter().enumerate() {
            if j == choice_dim || excluded.contains(&j) {
                continue;
            }
            splines.push((j, Spline1d::clamped(q, knots_per_dim, degree)?));
        }
        let mut strides = vec![N_ACTIONS; splines.len()];
        for d in (0..splines.len().saturating_sub(1)).rev() {
            strides[d] = strides[d + 1] * splines[d + 1].1.n_basis();
        }
        let k = splines.iter().map(|(_, s)| s.n_basis()).product::<usize>() * N_ACTIONS;
        Ok(BasisSet {
            splines,
            strides,
            dim_sizes: model.dim_sizes().to_vec(),
            choice_dim,
            k,
            degree,
            knots_per_dim,
            ridge: true,
        })
    }

    /// Enables or disables the ridge fallback in [`BasisSet::project`].
    pub fn with_ridge(mut self, ridge: bool) -> Self {
        self.ridge = ridge;
        self
    }

    /// Number of basis functions `k`.
    #[inline]
    pub fn len(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.k == 0
    }

    #[inline]
    pub fn degree(&self) -> usize {
        self.degree
    }

    #[inline]
    pub fn knots_per_dim(&self) -> usize {
        self.knots_per_dim
    }

    #[inline]
    pub fn ridge(&self) -> bool {
        self.ridge
    }

    pub fn spline_dims(&self) -> impl Iterator<Item = (usize, &Spline1d<F>)> {
        self.splines.iter().map(|(j, s)| (*j, s))
    }

    fn check(&self, s: &State) -> Result<()> {
        let c = s.coords();
        if c.len() != self.dim_sizes.len() || c.iter().zip(&self.dim_sizes).any(|(&x, &q)| x >= q) {
            return Err(Error::StateOutOfRange(format!("{c:?} outside the basis grid")));
        }
        Ok(())
    }

    /// Calls `f(index, value)` for each locally supported basis function.
    #[inline]
    pub fn for_each_nonzero(&self, s: &State, mut f: impl FnMut(usize, F)) {
        let mut rows: [(usize, &[F]); MAX_DIMS] = [(0, &[]); MAX_DIMS];
        for (d, (j, spline)) in self.splines.iter().enumerate() {
            rows[d] = spline.at(s.coord(*j));
        }
        let base = s.coord(self.choice_dim) as usize;
        self.walk(&rows[..self.splines.len()], 0, base, F::one(), &mut f);
    }

    #[inline]
    fn walk(&self, rows: &[(usize, &[F])], depth: usize, index: usize, prod: F, f: &mut impl FnMut(usize, F)) {
        if depth == rows.len() {
            f(index, prod);
            return;
        }
        let (start, vals) = rows[depth];
        let stride = self.strides[depth];
        for (o, &v) in vals.iter().enumerate() {
            if v != F::zero() {
                self.walk(rows, depth + 1, index + (start + o) * stride, prod * v, f);
            }
        }
    }

    /// Dense `φ(s)` of length `k`.
    pub fn evaluate(&self, s: &State) -> Result<Vec<F>> {
        self.check(s)?;
        let mut out = vec![F::zero(); self.k];
        self.for_each_nonzero(s, |i, v| out[i] = v);
        Ok(out)
    }

    pub fn evaluate_sparse(&self, s: &State) -> Result<SparseRow<F>> {
        self.check(s)?;
        let mut row = SparseRow::default();
        self.for_each_nonzero(s, |i, v| {
            row.indices.push(i);
            row.values.push(v);
        });
        Ok(row)
    }

    /// `φ(s)ᵀ w` over the local support.
    #[inline]
    pub fn dot(&self, s: &State, w: &[F]) -> F {
        let mut acc = F::zero();
        self.for_each_nonzero(s, |i, v| acc = acc + v * w[i]);
        acc
    }

    /// `w += alpha φ(s)`; returns the largest updated `|w_i|`.
    #[inline]
    pub fn axpy(&self, s: &State, alpha: F, w: &mut [F]) -> F {
        let mut peak = F::zero();
        self.for_each_nonzero(s, |i, v| {
            w[i] = w[i] + alpha * v;
            peak = peak.max(w[i].abs());
        });
        peak
    }

    /// Least-squares weights minimizing `Σ (φ(s_i)ᵀ w − y_i)²`.
    pub fn project(&self, states: &[State], targets: &[F]) -> Result<WeightVector<F>> {
        self.project_detailed(states, targets).map(|p| p.weights)
    }

    pub fn project_detailed(&self, states: &[State], targets: &[F]) -> Result<Projection<F>> {
        if states.len() != targets.len() {
            return Err(Error::InvalidBasis(format!(
                "{} states but {} targets",
                states.len(),
                targets.len()
            )));
        }
        if states.is_empty() {
            return Err(Error::Empty("projection needs sample states"));
        }
        let mut normal = SquareMatrix::zeros(self.k);
        let mut rhs = vec![F::zero(); self.k];
        let mut row = SparseRow::default();
        for (s, &y) in states.iter().zip(targets) {
            self.check(s)?;
            row.indices.clear();
            row.values.clear();
            self.for_each_nonzero(s, |i, v| {
                row.indices.push(i);
                row.values.push(v);
            });
            for (a, (&i, &vi)) in row.indices.iter().zip(&row.values).enumerate() {
                rhs[i] = rhs[i] + vi * y;
                for (&j, &vj) in row.indices[a..].iter().zip(&row.values[a..]) {
                    normal.add_to(i, j, vi * vj);
                    if i != j {
                        normal.add_to(j, i, vi * vj);
                    }
                }
            }
        }
        let tol = F::of(1e-12);
        let (weights, ridge) = match cholesky_solve(&normal, &rhs, tol) {
            Ok(w) => (w, None),
            Err(Error::Singular(msg)) => {
                if !self.ridge {
                    return Err(Error::Singular(format!("rank-deficient design without ridge: {msg}")));
                }
                let lambda = F::of(1e-8) * normal.trace() / F::of(self.k as f64);
                let mut reg = normal.clone();
                reg.add_diagonal(lambda);
                (cholesky_solve(&reg, &rhs, F::zero())?, Some(lambda))
            }
            Err(e) => return Err(e),
        };
        let residual_norm = states
            .iter()
            .zip(targets)
            .map(|(s, &y)| {
                let r = self.dot(s, &weights) - y;
                r * r
            })
            .sum::<F>()
            .sqrt();
        Ok(Projection {
            weights: WeightVector(weights),
            ridge,
            residual_norm,
        })
    }
}

/// Result of a least-squares projection.
#[derive(Clone, Debug)]
pub struct Projection<F> {
    pub weights: WeightVector<F>,
    /// Ridge penalty used when the normal matrix was near-singular.
    pub ridge: Option<F>,
    pub residual_norm: F,
}

/// `V̂(s) = φ(s)ᵀ w` as a [`ValueFunction`].
#[derive(Clone, Copy, Debug)]
pub struct LinearValue<'a, F> {
    pub basis: &'a BasisSet<F>,
    pub weights: &'a [F],
}

impl<'a, F: Scalar> LinearValue<'a, F> {
    pub fn new(basis: &'a BasisSet<F>, weights: &'a WeightVector<F>) -> Self {
        LinearValue {
            basis,
            weights: weights.as_slice(),
        }
    }
}

impl<F: Scalar> ValueFunction<F> for LinearValue<'_, F> {
    #[inline]
    fn value(&self, s: &State) -> F {
        self.basis.dot(s, self.weights)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_career_model;
    use proptest::prelude::*;

    #[test]
    fn basis_sizes() {
        let m = build_career_model(4, 10, 0.95).unwrap();
        let b = build_basis::<f64>(&m, 5, 3).unwrap();
        assert_eq!(b.len(), 7 * 7 * 7 * 3);
        let m3 = build_career_model(3, 20, 0.95).unwrap();
        assert_eq!(build_basis::<f64>(&m3, 5, 3).unwrap().len(), 147);
        let m_small = build_career_model(3, 5, 0.95).unwrap();
        let ind = build_basis::<f64>(&m_small, 5, 0).unwrap();
        assert_eq!(ind.len(), m_small.n_states());
    }

    #[test]
    fn clamped_count_formula_and_partition_of_unity() {
        for (q, knots, deg) in [(10u32, 5usize, 3usize), (30, 5, 3), (20, 4, 2), (7, 2, 1), (9, 9, 0)] {
            let s = Spline1d::<f64>::clamped(q, knots, deg).unwrap();
            let expected = if deg == 0 { knots } else { knots + deg - 1 };
            assert_eq!(s.n_basis(), expected);
            for x in 0..q {
                let (_, v) = s.eval(x as f64);
                assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(v.iter().all(|&b| (0.0..=1.0 + 1e-15).contains(&b)));
            }
        }
    }

    #[test]
    fn rejects_degenerate_inputs() {
        assert!(Spline1d::<f64>::clamped(1, 5, 3).is_err());
        assert!(Spline1d::<f64>::clamped(10, 3, 3).is_err());
        assert!(Spline1d::<f64>::clamped(10, 0, 0).is_err());
    }

    #[test]
    fn full_basis_partition_of_unity_and_support() {
        let m = build_career_model(4, 10, 0.95).unwrap();
        let b = build_basis::<f64>(&m, 5, 3).unwrap();
        for s in m.states() {
            let row = b.evaluate_sparse(&s).unwrap();
            let total: f64 = row.values.iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
            assert!(row.indices.len() <= 64);
            assert!(row.values.iter().all(|&v| v > 0.0 && v <= 1.0));
        }
    }

    #[test]
    fn clamped_corner_is_a_single_function() {
        let m = build_career_model(4, 10, 0.95).unwrap();
        let b = build_basis::<f64>(&m, 5, 3).unwrap();
        let corner = m.state(&[0, 0, 0, 1]).unwrap();
        let row = b.evaluate_sparse(&corner).unwrap();
        assert_eq!(row.indices, vec![1]);
        assert_eq!(row.values, vec![1.0]);
        let far = m.state(&[9, 9, 9, 2]).unwrap();
        let row = b.evaluate_sparse(&far).unwrap();
        assert_eq!(row.indices, vec![b.len() - 1]);
        assert_eq!(row.values, vec![1.0]);
    }

    #[test]
    fn local_support_changes_locally() {
        let m = build_career_model(4, 10, 0.95).unwrap();
        let b = build_basis::<f64>(&m, 5, 3).unwrap();
        let s = m.state(&[4, 3, 2, 0]).unwrap();
        let t = m.state(&[4, 4, 2, 0]).unwrap();
        let rs = b.evaluate_sparse(&s).unwrap();
        let rt = b.evaluate_sparse(&t).unwrap();
        let ds = b.evaluate(&s).unwrap();
        let dt = b.evaluate(&t).unwrap();
        for i in 0..b.len() {
            if ds[i] != dt[i] {
                assert!(rs.indices.contains(&i) || rt.indices.contains(&i));
            }
        }
    }

    #[test]
    fn evaluate_rejects_foreign_state() {
        let big = build_career_model(4, 12, 0.95).unwrap();
        let small = build_career_model(4, 10, 0.95).unwrap();
        let b = build_basis::<f64>(&small, 5, 3).unwrap();
        let s = big.state(&[11, 0, 0, 0]).unwrap();
        assert!(b.evaluate(&s).is_err());
    }

    #[test]
    fn dense_and_sparse_dot_agree() {
        let m = build_career_model(4, 10, 0.95).unwrap();
        let b = build_basis::<f64>(&m, 5, 3).unwrap();
        let w: Vec<f64> = (0..b.len()).map(|i| ((i * 37) % 17) as f64 - 8.0).collect();
        for s in m.states().step_by(7) {
            let dense: f64 = b.evaluate(&s).unwrap().iter().zip(&w).map(|(a, c)| a * c).sum();
            assert!((dense - b.dot(&s, &w)).abs() < 1e-12);
        }
        let zero = WeightVector::<f64>::zeros(b.len());
        let s = m.state(&[3, 3, 3, 1]).unwrap();
        assert_eq!(LinearValue::new(&b, &zero).value(&s), 0.0);
        let j = b.evaluate_sparse(&s).unwrap().indices[0];
        let mut e = WeightVector::<f64>::zeros(b.len());
        e.0[j] = 1.0;
        assert_eq!(LinearValue::new(&b, &e).value(&s), b.evaluate(&s).unwrap()[j]);
    }

    #[test]
    fn projection_recovers_representable_targets() {
        let m = build_career_model(3, 10, 0.95).unwrap();
        let b = build_basis::<f64>(&m, 5, 3).unwrap();
        let w0: Vec<f64> = (0..b.len()).map(|i| (i as f64 * 0.37).sin() * 10.0).collect();
        let states: Vec<State> = m.states().collect();
        let y: Vec<f64> = states.iter().map(|s| b.dot(s, &w0)).collect();
        let p = b.project_detailed(&states, &y).unwrap();
        assert!(p.ridge.is_none());
        assert!(p.residual_norm < 1e-8);
        for (a, c) in p.weights.0.iter().zip(&w0) {
            assert!((a - c).abs() < 1e-6);
        }
        let fitted: Vec<f64> = states.iter().map(|s| b.dot(s, &p.weights.0)).collect();
        let again = b.project(&states, &fitted).unwrap();
        for s in &states {
            assert!((b.dot(s, &again.0) - b.dot(s, &p.weights.0)).abs() < 1e-8);
        }
    }

    #[test]
    fn projection_of_constant_is_constant() {
        let m = build_career_model(4, 8, 0.95).unwrap();
        let b = build_basis::<f64>(&m, 4, 3).unwrap();
        let states: Vec<State> = m.states().filter(|s| (s.index() * 7919) % 5 != 0).collect();
        let y = vec![4.25; states.len()];
        let w = b.project(&states, &y).unwrap();
        for s in m.states() {
            assert!((b.dot(&s, &w.0) - 4.25).abs() < 1e-6);
        }
    }

    #[test]
    fn residual_non_increasing_on_nested_bases() {
        let m = build_career_model(3, 9, 0.95).unwrap();
        let states: Vec<State> = m.states().collect();
        let y: Vec<f64> = states
            .iter()
            .map(|s| ((s.coord(0) as f64) * 0.7).sin() * 5.0 + (s.coord(1) as f64).powi(2) * 0.3 + s.coord(2) as f64)
            .collect();
        // Breakpoints {0,4,8} ⊂ {0,2,4,6,8} ⊂ {0,1,...,8}.
        let mut last = f64::INFINITY;
        for knots in [3, 5, 9] {
            let b = build_basis::<f64>(&m, knots, 2).unwrap();
            let r = b.project_detailed(&states, &y).unwrap().residual_norm;
            assert!(r <= last + 1e-9, "knots {knots}: {r} > {last}");
            last = r;
        }
    }

    #[test]
    fn rank_deficient_projection_needs_ridge() {
        let m = build_career_model(3, 10, 0.95).unwrap();
        let states: Vec<State> = m.states().take(20).collect();
        let y = vec![1.0; states.len()];
        let strict = build_basis::<f64>(&m, 5, 3).unwrap().with_ridge(false);
        assert!(matches!(strict.project(&states, &y), Err(Error::Singular(_))));
        let ridged = build_basis::<f64>(&m, 5, 3).unwrap();
        let p = ridged.project_detailed(&states, &y).unwrap();
        assert!(p.ridge.is_some());
        assert!(p.residual_norm < 1e-4);
    }

    #[test]
    fn excluding_age_shrinks_the_basis() {
        let m = build_career_model(4, 10, 0.95).unwrap();
        let b = BasisSet::<f64>::build_excluding(&m, 5, 3, &[0]).unwrap();
        assert_eq!(b.len(), 7 * 7 * 3);
        let s = m.state(&[2, 3, 4, 1]).unwrap();
        let t = m.state(&[7, 3, 4, 1]).unwrap();
        assert_eq!(b.evaluate(&s).unwrap(), b.evaluate(&t).unwrap());
    }

    #[test]
    fn f32_basis_partition() {
        let m = build_career_model(4, 10, 0.95).unwrap();
        let b = build_basis::<f32>(&m, 5, 3).unwrap();
        for s in m.states().step_by(11) {
            let total: f32 = b.evaluate_sparse(&s).unwrap().values.iter().sum();
            assert!((total - 1.0).abs() < 1e-5);
        }
    }

    proptest! {
        #[test]
        fn partition_of_unity_off_grid(x in 0.0f64..29.0, knots in 4usize..9, deg in 1usize..4) {
            prop_assume!(knots > deg);
            let s = Spline1d::<f64>::clamped(30, knots, deg).unwrap();
            let (_, v) = s.eval(x);
            prop_assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

//! Teacher functions, input sampling and the uniform law on the l1 sphere.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};

/// Tolerance on `||w||_1 = 1` for sphere directions.
pub const L1_SPHERE_TOL: f64 = 1e-12;

pub fn relu(t: f64) -> f64 {
    t.max(0.0)
}

/// A real-valued function of a `d`-dimensional input.
pub trait Predictor {
    fn input_dim(&self) -> usize;

    /// Evaluates at `x`, assuming `x.len() == input_dim()`.
    fn predict_unchecked(&self, x: &[f64]) -> f64;

    fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "input point",
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(self.predict_unchecked(x))
    }

    /// Evaluates at every column of `xs` (a `d x N` matrix).
    fn predict_columns(&self, xs: &DMatrix<f64>) -> Result<DVector<f64>> {
        if xs.nrows() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "input matrix rows",
                expected: self.input_dim(),
                got: xs.nrows(),
            });
        }
        Ok(DVector::from_iterator(
            xs.ncols(),
            xs.column_iter().map(|c| self.predict_unchecked(c.as_slice())),
        ))
    }
}

/// Adapts a closure to [`Predictor`].
pub struct FnPredictor<F> {
    pub dim: usize,
    pub f: F,
}

impl<F: Fn(&[f64]) -> f64> Predictor for FnPredictor<F> {
    fn input_dim(&self) -> usize {
        self.dim
    }

    fn predict_unchecked(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
}

/// Appends the constant coordinate: `x -> (x, 1)` for each column.
pub fn augment(xs: &DMatrix<f64>) -> DMatrix<f64> {
    let (d, n) = xs.shape();
    let mut out = DMatrix::from_element(d + 1, n, 1.0);
    out.rows_mut(0, d).copy_from(xs);
    out
}

/// `count` i.i.d. draws from the uniform distribution on the unit l1 sphere
/// of `R^{d+1}`.
///
/// Normalized exponentials give the uniform law on the simplex; independent
/// signs then spread it over all orthants.
pub fn sample_l1_sphere(d: usize, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if d == 0 {
        return Err(Error::invalid("sphere dimension d must be at least 1"));
    }
    if count == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    let mut rng = rng_from_seed(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut w: Vec<f64> = (0..=d).map(|_| rng.sample::<f64, _>(Exp1)).collect();
        let total: f64 = w.iter().sum();
        for v in w.iter_mut() {
            *v /= total;
            if rng.random::<bool>() {
                *v = -*v;
            }
        }
        out.push(w);
    }
    Ok(out)
}

/// Directions as the columns of a `(d+1) x count` matrix.
pub fn sample_l1_sphere_matrix(d: usize, count: usize, seed: u64) -> Result<DMatrix<f64>> {
    let ws = sample_l1_sphere(d, count, seed)?;
    Ok(DMatrix::from_fn(d + 1, count, |i, j| ws[j][i]))
}

/// Uniform points of `[-1, 1]^d`, one per column.
pub fn sample_inputs(d: usize, n: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = rng_from_seed(seed);
    let mut xs = DMatrix::zeros(d, n);
    for j in 0..n {
        for i in 0..d {
            xs[(i, j)] = rng.random_range(-1.0..=1.0);
        }
    }
    xs
}

/// A finite-atom Barron-type target `f(x) = (1/K) sum_k a_k relu(w_k . (x, 1))`
/// with every `w_k` on the unit l1 sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherFunction {
    d: usize,
    coefficients: DVector<f64>,
    /// `(d+1) x K`, one direction per column.
    directions: DMatrix<f64>,
}

impl TeacherFunction {
    pub fn new(d: usize, atoms: Vec<(f64, Vec<f64>)>) -> Result<Self> {
        if d == 0 {
            return Err(Error::invalid("teacher input dimension must be at least 1"));
        }
        if atoms.is_empty() {
            return Err(Error::invalid("teacher needs at least one atom"));
        }
        let k = atoms.len();
        let mut directions = DMatrix::zeros(d + 1, k);
        let mut coefficients = DVector::zeros(k);
        for (j, (a, w)) in atoms.into_iter().enumerate() {
            if w.len() != d + 1 {
                return Err(Error::DimensionMismatch {
                    context: "teacher atom direction",
                    expected: d + 1,
                    got: w.len(),
                });
            }
            let l1: f64 = w.iter().map(|v| v.abs()).sum();
            if (l1 - 1.0).abs() > L1_SPHERE_TOL {
                return Err(Error::invalid(format!(
                    "atom {j} direction has l1 norm {l1}, expected 1"
                )));
            }
            if !a.is_finite() {
                return Err(Error::invalid(format!("atom {j} coefficient is not finite")));
            }
            coefficients[j] = a;
            directions.column_mut(j).copy_from_slice(&w);
        }
        Ok(Self {
            d,
            coefficients,
            directions,
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn n_atoms(&self) -> usize {
        self.coefficients.len()
    }

    pub fn coefficients(&self) -> &DVector<f64> {
        &self.coefficients
    }

    pub fn directions(&self) -> &DMatrix<f64> {
        &self.directions
    }

    pub fn atom(&self, k: usize) -> (f64, Vec<f64>) {
        (
            self.coefficients[k],
            self.directions.column(k).iter().copied().collect(),
        )
    }

    /// `(1/K) sum |a_k|`, an upper bound on the Barron norm of the teacher.
    pub fn barron_norm_upper(&self) -> f64 {
        self.coefficients.iter().map(|a| a.abs()).sum::<f64>() / self.n_atoms() as f64
    }

    /// Certified bound on `sup |f(x)|` over `||x||_inf <= 1`: each
    /// `|w . (x,1)| <= ||w||_1 = 1`, so the Barron upper bound dominates.
    pub fn sup_norm_bound(&self) -> f64 {
        self.barron_norm_upper()
    }

    /// Copy with coefficients divided by the norm bound whenever it exceeds 1,
    /// so that labels land in `[-1, 1]`.
    pub fn normalized(&self) -> Self {
        let bound = self.barron_norm_upper();
        let mut out = self.clone();
        if bound > 1.0 {
            out.coefficients /= bound;
        }
        out
    }
}

impl Predictor for TeacherFunction {
    fn input_dim(&self) -> usize {
        self.d
    }

    fn predict_unchecked(&self, x: &[f64]) -> f64 {
        let d = self.d;
        let mut total = 0.0;
        for (k, a) in self.coefficients.iter().enumerate() {
            let w = self.directions.column(k);
            let mut pre = w[d];
            for i in 0..d {
                pre += w[i] * x[i];
            }
            total += a * relu(pre);
        }
        total / self.n_atoms() as f64
    }
}

/// Random teacher: directions from the l1 sphere, coefficients uniform in
/// `[-coeff_scale, coeff_scale]`.
pub fn make_teacher(d: usize, n_atoms: usize, coeff_scale: f64, seed: u64) -> Result<TeacherFunction> {
    if !(coeff_scale > 0.0 && coeff_scale.is_finite()) {
        return Err(Error::invalid(format!(
            "coefficient scale must be positive and finite, got {coeff_scale}"
        )));
    }
    if n_atoms == 0 {
        return Err(Error::invalid("teacher needs at least one atom"));
    }
    let dirs = sample_l1_sphere(d, n_atoms, derive_seed(seed, 0))?;
    let mut rng = rng_from_seed(derive_seed(seed, 1));
    let atoms = dirs
        .into_iter()
        .map(|w| (rng.random_range(-coeff_scale..=coeff_scale), w))
        .collect();
    TeacherFunction::new(d, atoms)
}

pub fn teacher_eval(f: &TeacherFunction, x: &[f64]) -> Result<f64> {
    f.predict(x)
}

/// Training sample `{(x_i, y_i)}` with inputs stored column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `d x n`, one input per column.
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub seed: u64,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, seed: u64) -> Result<Self> {
        if x.ncols() != y.len() {
            return Err(Error::DimensionMismatch {
                context: "dataset labels",
                expected: x.ncols(),
                got: y.len(),
            });
        }
        if x.iter().any(|v| !(v.abs() <= 1.0)) {
            return Err(Error::invalid("inputs must satisfy ||x||_inf <= 1"));
        }
        if let Some((index, &value)) = y.iter().enumerate().find(|(_, v)| !(v.abs() <= 1.0)) {
            return Err(Error::LabelOutOfRange { index, value });
        }
        Ok(Self { x, y, seed })
    }

    pub fn n(&self) -> usize {
        self.x.ncols()
    }

    pub fn d(&self) -> usize {
        self.x.nrows()
    }

    pub fn point(&self, i: usize) -> Vec<f64> {
        self.x.column(i).iter().copied().collect()
    }
}

/// `n` inputs uniform on `[-1, 1]^d` labelled by `target`.
pub fn sample_dataset<P: Predictor + ?Sized>(target: &P, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::invalid("dataset size must be at least 1"));
    }
    let x = sample_inputs(target.input_dim(), n, seed);
    let y = DVector::from_iterator(
        n,
        x.column_iter().map(|c| target.predict_unchecked(c.as_slice())),
    );
    Dataset::new(x, y, seed)
}

/// Mean of `(1/2)(f(x_i) - y_i)^2` over the sample.
pub fn empirical_risk<P: Predictor + ?Sized>(model: &P, data: &Dataset) -> Result<f64> {
    let pred = model.predict_columns(&data.x)?;
    Ok((pred - &data.y).iter().map(|e| 0.5 * e * e).sum::<f64>() / data.n() as f64)
}

/// Largest `|f(x_i) - y_i|` over the sample.
pub fn max_abs_residual<P: Predictor + ?Sized>(model: &P, data: &Dataset) -> Result<f64> {
    let pred = model.predict_columns(&data.x)?;
    Ok((pred - &data.y).amax())
}

#[derive(Serialize, Deserialize)]
struct TeacherRepr {
    d: usize,
    atoms: Vec<Vec<f64>>,
}

impl Serialize for TeacherFunction {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let atoms = (0..self.n_atoms())
            .map(|k| {
                let (a, w) = self.atom(k);
                std::iter::once(a).chain(w).collect()
            })
            .collect();
        TeacherRepr { d: self.d, atoms }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for TeacherFunction {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let repr = TeacherRepr::deserialize(de)?;
        let atoms = repr
            .atoms
            .into_iter()
            .map(|row| match row.split_first() {
                Some((a, w)) => Ok((*a, w.to_vec())),
                None => Err(serde::de::Error::custom("empty atom row")),
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        TeacherFunction::new(repr.d, atoms).map_err(serde::de::Error::custom)
    }
}

#[derive(Serialize, Deserialize)]
struct DatasetRepr {
    d: usize,
    n: usize,
    seed: u64,
    #[serde(rename = "X")]
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
}

impl Serialize for Dataset {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let x = self.x.row_iter().map(|r| r.iter().copied().collect()).collect();
        DatasetRepr {
            d: self.d(),
            n: self.n(),
            seed: self.seed,
            x,
            y: self.y.iter().copied().collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Dataset {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let repr = DatasetRepr::deserialize(de)?;
        if repr.x.len() != repr.d || repr.x.iter().any(|r| r.len() != repr.n) || repr.y.len() != repr.n {
            return Err(D::Error::custom("dataset shape does not match d and n"));
        }
        let x = DMatrix::from_fn(repr.d, repr.n, |i, j| repr.x[i][j]);
        Dataset::new(x, DVector::from_vec(repr.y), repr.seed).map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn l1(w: &[f64]) -> f64 {
        w.iter().map(|v| v.abs()).sum()
    }

    #[test]
    fn sphere_points_have_unit_l1_norm() {
        let w = sample_l1_sphere(1, 1, 7).unwrap();
        assert_eq!(w[0].len(), 2);
        assert!((l1(&w[0]) - 1.0).abs() <= 1e-12);
        for w in sample_l1_sphere(5, 500, 2).unwrap() {
            assert!((l1(&w) - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn sphere_sampling_is_seeded() {
        assert_eq!(sample_l1_sphere(2, 2, 5).unwrap(), sample_l1_sphere(2, 2, 5).unwrap());
        assert_ne!(sample_l1_sphere(2, 2, 5).unwrap(), sample_l1_sphere(2, 2, 6).unwrap());
    }

    #[test]
    fn sphere_rejects_degenerate_arguments() {
        assert!(matches!(sample_l1_sphere(0, 3, 1), Err(Error::InvalidArgument(_))));
        assert!(matches!(sample_l1_sphere(3, 0, 1), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn sphere_coordinates_are_centered() {
        let ws = sample_l1_sphere(3, 10_000, 1).unwrap();
        for i in 0..4 {
            let mean = ws.iter().map(|w| w[i]).sum::<f64>() / ws.len() as f64;
            assert!(mean.abs() < 0.02, "coordinate {i} mean {mean}");
        }
    }

    #[test]
    fn sign_patterns_are_uniform() {
        for d in 1..=3 {
            let ws = sample_l1_sphere(d, 10_000, 40 + d as u64).unwrap();
            let patterns = 1usize << (d + 1);
            let mut counts = vec![0usize; patterns];
            for w in &ws {
                let idx = w
                    .iter()
                    .enumerate()
                    .fold(0, |acc, (i, v)| acc | (usize::from(*v > 0.0) << i));
                counts[idx] += 1;
            }
            for c in counts {
                let p = c as f64 / ws.len() as f64;
                assert!((p - 1.0 / patterns as f64).abs() <= 0.03, "d={d} p={p}");
            }
        }
    }

    #[test]
    fn make_teacher_validates_and_bounds_norm() {
        assert!(matches!(make_teacher(2, 1, 0.0, 1), Err(Error::InvalidArgument(_))));
        let t = make_teacher(2, 4, 1.0, 3).unwrap();
        assert!(t.barron_norm_upper() <= 1.0);
        assert_eq!(t.n_atoms(), 4);
    }

    #[test]
    fn single_atom_teacher_values() {
        let t = TeacherFunction::new(1, vec![(2.0, vec![1.0, 0.0])]).unwrap();
        assert_relative_eq!(teacher_eval(&t, &[0.5]).unwrap(), 1.0);
        let t = TeacherFunction::new(1, vec![(1.0, vec![1.0, 0.0])]).unwrap();
        assert_eq!(teacher_eval(&t, &[-0.5]).unwrap(), 0.0);
        let t = TeacherFunction::new(1, vec![(2.0, vec![0.5, 0.5])]).unwrap();
        assert_relative_eq!(teacher_eval(&t, &[1.0]).unwrap(), 2.0);
    }

    #[test]
    fn cancelling_atoms_give_zero() {
        let t = TeacherFunction::new(1, vec![(1.0, vec![1.0, 0.0]), (-1.0, vec![1.0, 0.0])]).unwrap();
        for x in [-1.0, -0.3, 0.0, 0.4, 1.0] {
            assert_eq!(teacher_eval(&t, &[x]).unwrap(), 0.0);
        }
    }

    #[test]
    fn teacher_rejects_bad_input() {
        let t = TeacherFunction::new(1, vec![(1.0, vec![1.0, 0.0])]).unwrap();
        assert!(matches!(t.predict(&[0.1, 0.2]), Err(Error::DimensionMismatch { .. })));
        assert!(TeacherFunction::new(1, vec![(1.0, vec![0.5, 0.4])]).is_err());
    }

    #[test]
    fn teacher_is_bounded_by_its_norm() {
        for seed in 0..5 {
            let t = make_teacher(3, 16, 2.0, seed).unwrap();
            let xs = sample_inputs(3, 1000, 100 + seed);
            let bound = t.barron_norm_upper();
            for v in t.predict_columns(&xs).unwrap().iter() {
                assert!(v.abs() <= bound + 1e-15);
            }
        }
    }

    #[test]
    fn datasets_are_deterministic_and_exact() {
        let t = make_teacher(2, 8, 1.0, 4).unwrap();
        let a = sample_dataset(&t, 3, 9).unwrap();
        let b = sample_dataset(&t, 3, 9).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        for i in 0..3 {
            assert_eq!(a.y[i], teacher_eval(&t, &a.point(i)).unwrap());
        }
    }

    #[test]
    fn zero_teacher_gives_zero_labels() {
        let t = TeacherFunction::new(1, vec![(0.0, vec![1.0, 0.0])]).unwrap();
        let data = sample_dataset(&t, 5, 1).unwrap();
        assert!(data.y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn labels_respect_half_norm_teacher() {
        let t = make_teacher(3, 10, 1.0, 12).unwrap();
        let scale = 0.5 / t.barron_norm_upper();
        let atoms = (0..t.n_atoms())
            .map(|k| {
                let (a, w) = t.atom(k);
                (a * scale, w)
            })
            .collect();
        let t = TeacherFunction::new(3, atoms).unwrap();
        assert_relative_eq!(t.barron_norm_upper(), 0.5, epsilon = 1e-14);
        let data = sample_dataset(&t, 100, 3).unwrap();
        assert!(data.y.amax() <= 0.5);
    }

    #[test]
    fn oversized_labels_are_reported_with_index() {
        let t = TeacherFunction::new(1, vec![(4.0, vec![0.0, 1.0])]).unwrap();
        match sample_dataset(&t, 3, 1) {
            Err(Error::LabelOutOfRange { index, value }) => {
                assert_eq!(index, 0);
                assert_relative_eq!(value, 4.0);
            }
            other => panic!("unexpected {other:?}"),
        }
        let data = sample_dataset(&t.normalized(), 3, 1).unwrap();
        assert!(data.y.iter().all(|v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn json_round_trip() {
        let t = make_teacher(2, 3, 1.0, 8).unwrap();
        let s = serde_json::to_string(&t).unwrap();
        assert!(s.starts_with("{\"d\":2,\"atoms\":[["));
        let back: TeacherFunction = serde_json::from_str(&s).unwrap();
        assert_eq!(back, t);
        let data = sample_dataset(&t, 4, 2).unwrap();
        let s = serde_json::to_string(&data).unwrap();
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(v["X"].as_array().unwrap().len(), 2);
        assert_eq!(v["X"][0].as_array().unwrap().len(), 4);
        let back: Dataset = serde_json::from_str(&s).unwrap();
        assert_eq!(back, data);
    }
}

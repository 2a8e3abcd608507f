//! Individuals, clipped linear hypotheses and the losses they are scored with.
//!
//! Every individual carries an L1-bounded feature vector (`‖x‖₁ ≤ 1`), a
//! hypothesis is a weight vector in the box `[-B, B]^n`, and predictions are
//! the inner product clipped to `[-1, 1]`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Numerical slack allowed on the L1 bound when features come from text files.
pub const L1_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    id: String,
    features: Vec<f64>,
}

impl Individual {
    /// Rejects non-finite features and feature vectors with `‖x‖₁ > 1`.
    pub fn new(id: impl Into<String>, features: Vec<f64>) -> Result<Self> {
        let id = id.into();
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("individual `{id}` has a non-finite feature")));
        }
        let l1: f64 = features.iter().map(|v| v.abs()).sum();
        if l1 > 1.0 + L1_SLACK {
            return Err(Error::Domain(format!(
                "individual `{id}` has L1 norm {l1} > 1"
            )));
        }
        Ok(Self { id, features })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }
}

/// An indexed set of individuals sharing one feature dimension.
#[derive(Debug, Clone)]
pub struct Dataset {
    individuals: Vec<Individual>,
    index: HashMap<String, usize>,
    dim: usize,
}

impl Dataset {
    pub fn new(individuals: Vec<Individual>) -> Result<Self> {
        let dim = individuals.first().map(Individual::dim).unwrap_or(0);
        let mut index = HashMap::with_capacity(individuals.len());
        for (i, ind) in individuals.iter().enumerate() {
            if ind.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: ind.dim(),
                });
            }
            if index.insert(ind.id.clone(), i).is_some() {
                return Err(Error::Ingestion(format!("duplicate individual id `{}`", ind.id)));
            }
        }
        Ok(Self {
            individuals,
            index,
            dim,
        })
    }

    pub fn len(&self) -> usize {
        self.individuals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.individuals.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, idx: usize) -> &Individual {
        &self.individuals[idx]
    }

    pub fn individuals(&self) -> &[Individual] {
        &self.individuals
    }

    pub fn index_of(&self, id: &str) -> Result<usize> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownId(id.to_string()))
    }

    pub fn try_index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }
}

/// Sparse row-major feature matrix the solver multiplies against.
///
/// Kept separate from [`Dataset`] so post-processing can swap in the
/// standard-basis encoding while membership still reads the original
/// features.
#[derive(Debug, Clone)]
pub struct Design {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl Design {
    pub fn from_dataset(dataset: &Dataset) -> Self {
        let mut row_ptr = Vec::with_capacity(dataset.len() + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for ind in dataset.individuals() {
            for (j, &v) in ind.features().iter().enumerate() {
                if v != 0.0 {
                    cols.push(j as u32);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        Self {
            dim: dataset.dim(),
            row_ptr,
            cols,
            vals,
        }
    }

    /// Individual `i` is the `i`th standard basis vector of `R^n`.
    pub fn identity(n: usize) -> Self {
        Self {
            dim: n,
            row_ptr: (0..=n).collect(),
            cols: (0..n as u32).collect(),
            vals: vec![1.0; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let (s, e) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.cols[s..e], &self.vals[s..e])
    }

    pub fn dot_row(&self, i: usize, w: &[f64]) -> f64 {
        let (cols, vals) = self.row(i);
        cols.iter().zip(vals).map(|(&c, &v)| w[c as usize] * v).sum()
    }

    /// Unclipped scores `⟨w, x_i⟩` for every row.
    pub fn raw_scores_into(&self, w: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend((0..self.rows()).map(|i| self.dot_row(i, w)));
    }

    /// `acc += scale * x_i`
    pub fn add_row_scaled(&self, i: usize, scale: f64, acc: &mut [f64]) {
        let (cols, vals) = self.row(i);
        for (&c, &v) in cols.iter().zip(vals) {
            acc[c as usize] += scale * v;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    weights: Vec<f64>,
    bound: f64,
}

impl Hypothesis {
    pub fn new(weights: Vec<f64>, bound: f64) -> Result<Self> {
        if !(bound > 0.0 && bound.is_finite()) {
            return Err(Error::Domain(format!("weight bound must be positive, got {bound}")));
        }
        if let Some(w) = weights.iter().find(|w| !(w.abs() <= bound)) {
            return Err(Error::Domain(format!("weight {w} outside [-{bound}, {bound}]")));
        }
        Ok(Self { weights, bound })
    }

    pub fn zeros(n: usize, bound: f64) -> Result<Self> {
        Self::new(vec![0.0; n], bound)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn into_weights(self) -> Vec<f64> {
        self.weights
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    individual: Individual,
    label: f64,
}

impl LabeledExample {
    pub fn new(individual: Individual, label: f64) -> Result<Self> {
        check_unit(label, "label")?;
        Ok(Self { individual, label })
    }

    pub fn individual(&self) -> &Individual {
        &self.individual
    }

    pub fn label(&self) -> f64 {
        self.label
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Squared,
    Hinge,
}

/// A loss together with its per-coordinate subgradient bound `g`.
///
/// The bound is fixed by the kind for predictions and labels in `[-1, 1]`
/// and `‖x‖∞ ≤ 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "LossKind", into = "LossKind")]
pub struct LossSpec {
    kind: LossKind,
}

impl From<LossKind> for LossSpec {
    fn from(kind: LossKind) -> Self {
        Self { kind }
    }
}

impl From<LossSpec> for LossKind {
    fn from(spec: LossSpec) -> Self {
        spec.kind
    }
}

impl LossSpec {
    pub const fn new(kind: LossKind) -> Self {
        Self { kind }
    }

    pub fn kind(&self) -> LossKind {
        self.kind
    }

    pub fn lipschitz_bound(&self) -> f64 {
        match self.kind {
            LossKind::Hinge => 2.0,
            LossKind::Squared => 8.0,
        }
    }

    /// Loss without range checks; callers guarantee `prediction, label ∈ [-1, 1]`.
    pub fn eval(&self, prediction: f64, label: f64) -> f64 {
        match self.kind {
            LossKind::Squared => (prediction - label) * (prediction - label),
            LossKind::Hinge => (1.0 - prediction * label).max(0.0),
        }
    }

    /// Derivative in the prediction; zero on the flat side of the hinge kink.
    pub fn derivative(&self, prediction: f64, label: f64) -> f64 {
        match self.kind {
            LossKind::Squared => 2.0 * (prediction - label),
            LossKind::Hinge => {
                if 1.0 - prediction * label > 0.0 {
                    -label
                } else {
                    0.0
                }
            }
        }
    }
}

fn check_unit(v: f64, what: &str) -> Result<()> {
    if (-1.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Domain(format!("{what} {v} outside [-1, 1]")))
    }
}

pub fn clip_unit(t: f64) -> f64 {
    t.clamp(-1.0, 1.0)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `clip(⟨w, x⟩, -1, 1)`
pub fn predict(h: &Hypothesis, x: &Individual) -> Result<f64> {
    if h.dim() != x.dim() {
        return Err(Error::DimensionMismatch {
            expected: h.dim(),
            actual: x.dim(),
        });
    }
    Ok(clip_unit(dot(h.weights(), x.features())))
}

pub fn loss_value(spec: LossSpec, prediction: f64, label: f64) -> Result<f64> {
    check_unit(prediction, "prediction")?;
    check_unit(label, "label")?;
    Ok(spec.eval(prediction, label))
}

/// A subgradient of `w ↦ L(clip(⟨w, x⟩), y)` at `h`.
///
/// Where the clip saturates (`|⟨w, x⟩| ≥ 1`) the flat side is taken and the
/// result is zero.
pub fn loss_subgradient(spec: LossSpec, h: &Hypothesis, ex: &LabeledExample) -> Result<Vec<f64>> {
    let x = ex.individual();
    if h.dim() != x.dim() {
        return Err(Error::DimensionMismatch {
            expected: h.dim(),
            actual: x.dim(),
        });
    }
    let t = dot(h.weights(), x.features());
    let scale = if t >= 1.0 || t <= -1.0 {
        0.0
    } else {
        spec.derivative(t, ex.label())
    };
    Ok(x.features().iter().map(|v| scale * v).collect())
}

pub fn project_box(weights: &[f64], bound: f64) -> Vec<f64> {
    weights.iter().map(|w| w.clamp(-bound, bound)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ind(f: &[f64]) -> Individual {
        Individual::new("x", f.to_vec()).unwrap()
    }

    #[test]
    fn predict_examples() {
        let x = ind(&[0.5, 0.5]);
        assert_eq!(predict(&Hypothesis::zeros(2, 1.0).unwrap(), &x).unwrap(), 0.0);
        let h = Hypothesis::new(vec![1.0, 0.0], 1.0).unwrap();
        assert_eq!(predict(&h, &x).unwrap(), 0.5);
        let h = Hypothesis::new(vec![3.0, 0.0], 3.0).unwrap();
        assert_eq!(predict(&h, &ind(&[1.0, 0.0])).unwrap(), 1.0);
    }

    #[test]
    fn predict_rejects_dimension_mismatch() {
        let h = Hypothesis::zeros(3, 1.0).unwrap();
        assert!(matches!(
            predict(&h, &ind(&[0.1, 0.2])),
            Err(Error::DimensionMismatch { expected: 3, actual: 2 })
        ));
    }

    #[test]
    fn ingestion_rejects_l1_above_one() {
        assert!(Individual::new("a", vec![0.6, -0.5]).is_err());
        assert!(Individual::new("a", vec![0.5, -0.5]).is_ok());
        assert!(Individual::new("a", vec![f64::NAN]).is_err());
    }

    #[test]
    fn dataset_rejects_mixed_dims_and_duplicates() {
        let a = Individual::new("a", vec![0.1, 0.1]).unwrap();
        let b = Individual::new("b", vec![0.1]).unwrap();
        assert!(Dataset::new(vec![a.clone(), b]).is_err());
        assert!(Dataset::new(vec![a.clone(), a]).is_err());
    }

    #[test]
    fn hypothesis_enforces_box() {
        assert!(Hypothesis::new(vec![1.5], 1.0).is_err());
        assert!(Hypothesis::new(vec![1.0], 0.0).is_err());
    }

    #[test]
    fn loss_value_examples() {
        let sq = LossSpec::new(LossKind::Squared);
        let hinge = LossSpec::new(LossKind::Hinge);
        assert_eq!(loss_value(sq, 0.5, 0.5).unwrap(), 0.0);
        assert_eq!(loss_value(hinge, 1.0, 1.0).unwrap(), 0.0);
        assert_eq!(loss_value(sq, -1.0, 1.0).unwrap(), 4.0);
        assert!(loss_value(sq, 1.5, 0.0).is_err());
        assert!(loss_value(hinge, 0.0, -2.0).is_err());
    }

    #[test]
    fn lipschitz_bounds_are_fixed() {
        assert_eq!(LossSpec::new(LossKind::Hinge).lipschitz_bound(), 2.0);
        assert_eq!(LossSpec::new(LossKind::Squared).lipschitz_bound(), 8.0);
    }

    fn central_difference(spec: LossSpec, w: &[f64], x: &Individual, y: f64) -> Vec<f64> {
        let h = 1e-6;
        let f = |w: &[f64]| spec.eval(clip_unit(dot(w, x.features())), y);
        (0..w.len())
            .map(|l| {
                let mut up = w.to_vec();
                let mut dn = w.to_vec();
                up[l] += h;
                dn[l] -= h;
                (f(&up) - f(&dn)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn loss_subgradient_examples() {
        let zero = Hypothesis::zeros(2, 1.0).unwrap();
        let ex = LabeledExample::new(ind(&[1.0, 0.0]), 0.0).unwrap();
        let g = loss_subgradient(LossSpec::new(LossKind::Squared), &zero, &ex).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);

        let w = Hypothesis::new(vec![1.0, 0.0], 1.0).unwrap();
        let x = ind(&[0.5, 0.0]);
        for (kind, label, expected) in [
            (LossKind::Hinge, 1.0, [-0.5, 0.0]),
            (LossKind::Squared, 0.0, [0.5, 0.0]),
        ] {
            let spec = LossSpec::new(kind);
            let ex = LabeledExample::new(x.clone(), label).unwrap();
            let g = loss_subgradient(spec, &w, &ex).unwrap();
            let fd = central_difference(spec, w.weights(), &x, label);
            for l in 0..2 {
                assert!((g[l] - expected[l]).abs() < 1e-12);
                assert!((g[l] - fd[l]).abs() < 1e-4, "{kind:?}: {g:?} vs {fd:?}");
            }
        }
    }

    #[test]
    fn kinks_take_the_flat_side() {
        let hinge = LossSpec::new(LossKind::Hinge);
        // margin exactly met
        let w = Hypothesis::new(vec![1.0, 0.0], 1.0).unwrap();
        let ex = LabeledExample::new(ind(&[1.0, 0.0]), 1.0).unwrap();
        assert_eq!(loss_subgradient(hinge, &w, &ex).unwrap(), vec![0.0, 0.0]);
        // clip saturated
        let w = Hypothesis::new(vec![2.0, 0.0], 2.0).unwrap();
        let ex = LabeledExample::new(ind(&[0.75, 0.0]), -1.0).unwrap();
        let sq = LossSpec::new(LossKind::Squared);
        assert_eq!(loss_subgradient(sq, &w, &ex).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn project_box_examples() {
        assert_eq!(project_box(&[0.3, -0.3], 1.0), vec![0.3, -0.3]);
        assert_eq!(project_box(&[1.5, -0.2], 1.0), vec![1.0, -0.2]);
        assert_eq!(project_box(&[-5.0, 5.0], 2.0), vec![-2.0, 2.0]);
    }

    #[test]
    fn design_matches_dense_products() {
        let ds = Dataset::new(vec![
            Individual::new("a", vec![0.5, 0.0, -0.25]).unwrap(),
            Individual::new("b", vec![0.0, 0.0, 0.0]).unwrap(),
        ])
        .unwrap();
        let d = Design::from_dataset(&ds);
        let w = [0.4, -1.0, 2.0];
        let mut raw = Vec::new();
        d.raw_scores_into(&w, &mut raw);
        assert_eq!(raw, vec![0.2 - 0.5, 0.0]);
        let id = Design::identity(3);
        id.raw_scores_into(&w, &mut raw);
        assert_eq!(raw, w.to_vec());
    }

    fn l1_ball(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-1.0f64..1.0, n).prop_map(|v| {
            let l1: f64 = v.iter().map(|x| x.abs()).sum();
            if l1 > 1.0 {
                v.iter().map(|x| x / l1).collect()
            } else {
                v
            }
        })
    }

    proptest! {
        #[test]
        fn predictions_stay_in_unit_interval(
            x in l1_ball(4),
            w in prop::collection::vec(-3.0f64..3.0, 4),
        ) {
            let h = Hypothesis::new(w, 3.0).unwrap();
            let p = predict(&h, &Individual::new("x", x).unwrap()).unwrap();
            prop_assert!((-1.0..=1.0).contains(&p));
        }

        #[test]
        fn losses_are_convex_in_the_prediction(
            p1 in -1.0f64..1.0, p2 in -1.0f64..1.0, y in -1.0f64..1.0,
        ) {
            for kind in [LossKind::Squared, LossKind::Hinge] {
                let spec = LossSpec::new(kind);
                for lam in [0.25, 0.5, 0.75] {
                    let mid = spec.eval(lam * p1 + (1.0 - lam) * p2, y);
                    let chord = lam * spec.eval(p1, y) + (1.0 - lam) * spec.eval(p2, y);
                    prop_assert!(mid <= chord + 1e-12);
                }
            }
        }

        // With B = 1 and ‖x‖₁ ≤ 1 the clip never binds, so the composed loss is
        // convex in w and the subgradient inequality must hold globally.
        #[test]
        fn loss_subgradient_inequality(
            x in l1_ball(3),
            w in prop::collection::vec(-1.0f64..1.0, 3),
            w2 in prop::collection::vec(-1.0f64..1.0, 3),
            y in -1.0f64..1.0,
        ) {
            let x = Individual::new("x", x).unwrap();
            for kind in [LossKind::Squared, LossKind::Hinge] {
                let spec = LossSpec::new(kind);
                let h = Hypothesis::new(w.clone(), 1.0).unwrap();
                let h2 = Hypothesis::new(w2.clone(), 1.0).unwrap();
                let ex = LabeledExample::new(x.clone(), y).unwrap();
                let g = loss_subgradient(spec, &h, &ex).unwrap();
                prop_assert!(g.iter().all(|v| v.abs() <= spec.lipschitz_bound()));
                let l = spec.eval(predict(&h, &x).unwrap(), y);
                let l2 = spec.eval(predict(&h2, &x).unwrap(), y);
                let lin: f64 = g.iter().zip(w2.iter().zip(&w)).map(|(g, (a, b))| g * (a - b)).sum();
                prop_assert!(l2 >= l + lin - 1e-9);
            }
        }

        #[test]
        fn projection_is_idempotent_and_nonexpansive(
            a in prop::collection::vec(-4.0f64..4.0, 5),
            b in prop::collection::vec(-4.0f64..4.0, 5),
            bound in 0.1f64..3.0,
        ) {
            let pa = project_box(&a, bound);
            prop_assert_eq!(project_box(&pa, bound), pa.clone());
            let pb = project_box(&b, bound);
            let dp: f64 = pa.iter().zip(&pb).map(|(x, y)| (x - y).powi(2)).sum();
            let d: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum();
            prop_assert!(dp.sqrt() <= d.sqrt() + 1e-12);
        }
    }
}

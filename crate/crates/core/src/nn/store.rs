//! Named, schema-described parameter storage.
//!
//! Networks declare their variables in a [`Schema`] (name, shape, initializer,
//! trainability) and hold only [`VarId`] handles; the actual arrays live in a
//! [`ParamStore`]. Gradients and Adam moments are parallel stores over the
//! same schema, which keeps forward evaluation free of interior mutability:
//! a forward takes `&ParamStore`, training owns `&mut`.

use ndarray::{ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Handle to one variable inside a [`Schema`] / [`ParamStore`] pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VarId(pub(crate) usize);

impl VarId {
    pub fn index(&self) -> usize {
        self.0
    }
}

/// How a variable is filled at build time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Init {
    /// Zero-mean Gaussian; the convolution weight convention is std 0.02.
    Gaussian { std: f64 },
    Zeros,
    Ones,
}

/// Declaration of one variable.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VarSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
    /// Non-trainable variables (batch-norm running statistics) are carried in
    /// the store and the checkpoint but receive no gradients or updates.
    pub trainable: bool,
}

/// Ordered set of variable declarations for one network.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Schema {
    vars: Vec<VarSpec>,
}

impl Schema {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, spec: VarSpec) -> VarId {
        self.vars.push(spec);
        VarId(self.vars.len() - 1)
    }

    pub fn trainable(&mut self, name: impl Into<String>, shape: &[usize], init: Init) -> VarId {
        self.push(VarSpec {
            name: name.into(),
            shape: shape.to_vec(),
            init,
            trainable: true,
        })
    }

    pub fn buffer(&mut self, name: impl Into<String>, shape: &[usize], init: Init) -> VarId {
        self.push(VarSpec {
            name: name.into(),
            shape: shape.to_vec(),
            init,
            trainable: false,
        })
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn spec(&self, id: VarId) -> &VarSpec {
        &self.vars[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (VarId, &VarSpec)> {
        self.vars.iter().enumerate().map(|(i, s)| (VarId(i), s))
    }

    /// Number of trainable scalars (buffers excluded).
    pub fn parameter_count(&self) -> usize {
        self.vars
            .iter()
            .filter(|s| s.trainable)
            .map(|s| s.shape.iter().product::<usize>())
            .sum()
    }
}

/// The arrays behind a schema, in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<F> {
    vars: Vec<ArrayD<F>>,
}

impl<F: ndarray::NdFloat + num_traits::FromPrimitive> ParamStore<F> {
    /// Initialize per the schema's declared initializers. Gaussian draws come
    /// from a single seeded stream in declaration order and are sampled in
    /// f64 before narrowing, so f32 and f64 stores from the same seed agree
    /// to rounding.
    pub fn init(schema: &Schema, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vars = schema
            .iter()
            .map(|(_, spec)| {
                let dim = IxDyn(&spec.shape);
                match spec.init {
                    Init::Zeros => ArrayD::zeros(dim),
                    Init::Ones => ArrayD::from_elem(dim, F::one()),
                    Init::Gaussian { std } => {
                        let normal = Normal::new(0.0f64, std).expect("std must be positive");
                        ArrayD::from_shape_simple_fn(dim, || {
                            F::from_f64(normal.sample(&mut rng)).unwrap()
                        })
                    }
                }
            })
            .collect();
        Self { vars }
    }

    /// All-zero store over the same schema (gradients, Adam moments).
    pub fn zeros(schema: &Schema) -> Self {
        Self {
            vars: schema
                .iter()
                .map(|(_, spec)| ArrayD::zeros(IxDyn(&spec.shape)))
                .collect(),
        }
    }

    /// Every trainable variable zeroed, buffers at their declared init;
    /// used by the analytic zero-parameter tests.
    pub fn zeros_with_buffers(schema: &Schema) -> Self {
        Self {
            vars: schema
                .iter()
                .map(|(_, spec)| {
                    let dim = IxDyn(&spec.shape);
                    if !spec.trainable {
                        match spec.init {
                            Init::Ones => ArrayD::from_elem(dim, F::one()),
                            _ => ArrayD::zeros(dim),
                        }
                    } else {
                        ArrayD::zeros(dim)
                    }
                })
                .collect(),
        }
    }

    pub fn get(&self, id: VarId) -> &ArrayD<F> {
        &self.vars[id.0]
    }

    pub fn get_mut(&mut self, id: VarId) -> &mut ArrayD<F> {
        &mut self.vars[id.0]
    }

    pub fn set(&mut self, id: VarId, value: ArrayD<F>) {
        assert_eq!(self.vars[id.0].shape(), value.shape(), "shape frozen by schema");
        self.vars[id.0] = value;
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (VarId, &ArrayD<F>)> {
        self.vars.iter().enumerate().map(|(i, a)| (VarId(i), a))
    }

    /// Reset every array to zero in place (gradient clearing between steps).
    pub fn fill_zero(&mut self) {
        for v in &mut self.vars {
            v.fill(F::zero());
        }
    }

    /// True when every element of every variable is finite.
    pub fn all_finite(&self) -> bool {
        self.vars.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }

    /// Element-for-element cast to another float width.
    pub fn cast<G: ndarray::NdFloat + num_traits::FromPrimitive>(&self) -> ParamStore<G> {
        ParamStore {
            vars: self
                .vars
                .iter()
                .map(|v| v.mapv(|x| G::from_f64(x.to_f64().unwrap()).unwrap()))
                .collect(),
        }
    }

    /// Rebuild from raw arrays (checkpoint load); shapes must match the
    /// schema exactly.
    pub fn from_arrays(schema: &Schema, vars: Vec<ArrayD<F>>) -> Result<Self> {
        if vars.len() != schema.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} variables, got {}",
                schema.len(),
                vars.len()
            )));
        }
        for ((_, spec), arr) in schema.iter().zip(&vars) {
            if spec.shape != arr.shape() {
                return Err(Error::Checkpoint(format!(
                    "variable {} expects shape {:?}, got {:?}",
                    spec.name,
                    spec.shape,
                    arr.shape()
                )));
            }
        }
        Ok(Self { vars })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_schema() -> Schema {
        let mut s = Schema::new();
        s.trainable("w", &[4, 3, 2, 2], Init::Gaussian { std: 0.02 });
        s.trainable("b", &[4], Init::Zeros);
        s.buffer("running_mean", &[4], Init::Zeros);
        s.buffer("running_var", &[4], Init::Ones);
        s
    }

    #[test]
    fn init_is_deterministic() {
        let schema = toy_schema();
        let a: ParamStore<f32> = ParamStore::init(&schema, 42);
        let b: ParamStore<f32> = ParamStore::init(&schema, 42);
        assert_eq!(a, b);
        let c: ParamStore<f32> = ParamStore::init(&schema, 43);
        assert_ne!(a, c);
    }

    #[test]
    fn parameter_count_skips_buffers() {
        let schema = toy_schema();
        assert_eq!(schema.parameter_count(), 4 * 3 * 2 * 2 + 4);
    }

    #[test]
    fn gaussian_init_is_small() {
        let schema = toy_schema();
        let store: ParamStore<f32> = ParamStore::init(&schema, 1);
        let w = store.get(VarId(0));
        assert!(w.iter().all(|v| v.abs() < 0.2));
        assert!(w.iter().any(|v| *v != 0.0));
    }

    #[test]
    fn buffers_initialized_per_declaration() {
        let schema = toy_schema();
        let store: ParamStore<f32> = ParamStore::init(&schema, 1);
        assert!(store.get(VarId(2)).iter().all(|v| *v == 0.0));
        assert!(store.get(VarId(3)).iter().all(|v| *v == 1.0));
    }

    #[test]
    fn f32_and_f64_inits_agree_to_rounding() {
        let schema = toy_schema();
        let a: ParamStore<f32> = ParamStore::init(&schema, 7);
        let b: ParamStore<f64> = ParamStore::init(&schema, 7);
        for (x, y) in a.get(VarId(0)).iter().zip(b.get(VarId(0)).iter()) {
            assert!((*x as f64 - y).abs() < 1e-7);
        }
    }

    #[test]
    fn from_arrays_rejects_shape_drift() {
        let schema = toy_schema();
        let store: ParamStore<f32> = ParamStore::init(&schema, 1);
        let mut arrays: Vec<_> = store.iter().map(|(_, a)| a.clone()).collect();
        arrays[1] = ArrayD::zeros(IxDyn(&[5]));
        assert!(ParamStore::<f32>::from_arrays(&schema, arrays).is_err());
    }
}

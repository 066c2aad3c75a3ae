//! Named parameter storage shared by all network modules.

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// A parameter tensor: either a vector (biases, gate scalars) or a matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum PVal {
    V(Array1<f64>),
    M(Array2<f64>),
}

impl PVal {
    pub fn len(&self) -> usize {
        match self {
            PVal::V(v) => v.len(),
            PVal::M(m) => m.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_vec(&self) -> &Array1<f64> {
        match self {
            PVal::V(v) => v,
            PVal::M(_) => panic!("expected vector parameter"),
        }
    }

    pub fn as_mat(&self) -> &Array2<f64> {
        match self {
            PVal::M(m) => m,
            PVal::V(_) => panic!("expected matrix parameter"),
        }
    }
}

/// Handle to one tensor inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(&self) -> usize {
        self.0
    }
}

/// Ordered, named collection of parameter tensors.
///
/// Order is fixed at construction, which makes flat scalar indexing stable —
/// the finite-difference checks and the optimizer both rely on that.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    names: Vec<String>,
    vals: Vec<PVal>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_vec(&mut self, name: &str, v: Array1<f64>) -> ParamId {
        self.names.push(name.to_string());
        self.vals.push(PVal::V(v));
        ParamId(self.vals.len() - 1)
    }

    pub fn add_mat(&mut self, name: &str, m: Array2<f64>) -> ParamId {
        self.names.push(name.to_string());
        self.vals.push(PVal::M(m));
        ParamId(self.vals.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.vals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vals.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn val(&self, id: ParamId) -> &PVal {
        &self.vals[id.0]
    }

    pub fn val_mut(&mut self, id: ParamId) -> &mut PVal {
        &mut self.vals[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.vals.len()).map(ParamId)
    }

    /// Look a tensor up by name.
    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Total number of scalar entries across all tensors.
    pub fn n_scalars(&self) -> usize {
        self.vals.iter().map(|v| v.len()).sum()
    }

    fn locate(&self, flat: usize) -> (usize, usize) {
        let mut off = flat;
        for (i, v) in self.vals.iter().enumerate() {
            if off < v.len() {
                return (i, off);
            }
            off -= v.len();
        }
        panic!("flat parameter index {flat} out of range");
    }

    pub fn get_scalar(&self, flat: usize) -> f64 {
        let (i, off) = self.locate(flat);
        match &self.vals[i] {
            PVal::V(v) => v[off],
            PVal::M(m) => m.as_slice().unwrap()[off],
        }
    }

    pub fn set_scalar(&mut self, flat: usize, value: f64) {
        let (i, off) = self.locate(flat);
        match &mut self.vals[i] {
            PVal::V(v) => v[off] = value,
            PVal::M(m) => m.as_slice_mut().unwrap()[off] = value,
        }
    }

    /// Name of the tensor owning a flat scalar index (for diagnostics).
    pub fn scalar_owner(&self, flat: usize) -> &str {
        let (i, _) = self.locate(flat);
        &self.names[i]
    }

    /// Add a gradient-store's entries to the parameters (plain
    /// gradient-descent steps when the store holds `−lr·∇`).
    pub fn apply_delta(&mut self, delta: &GradStore) {
        for (a, b) in self.vals.iter_mut().zip(&delta.vals) {
            match (a, b) {
                (PVal::V(x), PVal::V(y)) => *x += y,
                (PVal::M(x), PVal::M(y)) => *x += y,
                _ => panic!("delta shape mismatch"),
            }
        }
    }

    pub fn to_snapshot(&self) -> Vec<TensorSnapshot> {
        self.vals
            .iter()
            .zip(&self.names)
            .map(|(v, n)| match v {
                PVal::V(a) => TensorSnapshot {
                    name: n.clone(),
                    rows: a.len(),
                    cols: 0,
                    data: a.to_vec(),
                },
                PVal::M(a) => TensorSnapshot {
                    name: n.clone(),
                    rows: a.nrows(),
                    cols: a.ncols(),
                    data: a.iter().copied().collect(),
                },
            })
            .collect()
    }

    /// Overwrite values from a snapshot. Names and shapes must match exactly.
    pub fn load_snapshot(&mut self, snap: &[TensorSnapshot]) -> Result<(), String> {
        if snap.len() != self.vals.len() {
            return Err(format!(
                "parameter count mismatch: checkpoint has {}, model has {}",
                snap.len(),
                self.vals.len()
            ));
        }
        for (i, s) in snap.iter().enumerate() {
            if s.name != self.names[i] {
                return Err(format!(
                    "parameter name mismatch at {i}: checkpoint '{}', model '{}'",
                    s.name, self.names[i]
                ));
            }
            match &mut self.vals[i] {
                PVal::V(a) => {
                    if s.cols != 0 || s.rows != a.len() {
                        return Err(format!("shape mismatch for '{}'", s.name));
                    }
                    *a = Array1::from_vec(s.data.clone());
                }
                PVal::M(a) => {
                    if s.rows != a.nrows() || s.cols != a.ncols() {
                        return Err(format!("shape mismatch for '{}'", s.name));
                    }
                    *a = Array2::from_shape_vec((s.rows, s.cols), s.data.clone())
                        .map_err(|e| format!("bad data for '{}': {e}", s.name))?;
                }
            }
        }
        Ok(())
    }
}

/// Serializable image of one parameter tensor (`cols == 0` marks a vector).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorSnapshot {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

/// Gradient accumulator mirroring a [`ParamSet`].
#[derive(Debug, Clone)]
pub struct GradStore {
    vals: Vec<PVal>,
}

impl GradStore {
    pub fn zeros_like(params: &ParamSet) -> Self {
        let vals = params
            .vals
            .iter()
            .map(|v| match v {
                PVal::V(a) => PVal::V(Array1::zeros(a.len())),
                PVal::M(a) => PVal::M(Array2::zeros((a.nrows(), a.ncols()))),
            })
            .collect();
        Self { vals }
    }

    pub fn reset(&mut self) {
        for v in &mut self.vals {
            match v {
                PVal::V(a) => a.fill(0.0),
                PVal::M(a) => a.fill(0.0),
            }
        }
    }

    pub fn val(&self, id: ParamId) -> &PVal {
        &self.vals[id.0]
    }

    pub(crate) fn add_vec(&mut self, id: ParamId, g: &Array1<f64>) {
        match &mut self.vals[id.0] {
            PVal::V(a) => *a += g,
            PVal::M(_) => panic!("gradient kind mismatch for vector param"),
        }
    }

    pub(crate) fn add_mat(&mut self, id: ParamId, g: &Array2<f64>) {
        match &mut self.vals[id.0] {
            PVal::M(a) => *a += g,
            PVal::V(_) => panic!("gradient kind mismatch for matrix param"),
        }
    }

    /// Merge another gradient store into this one (used when accumulating
    /// per-task gradients in a fixed order).
    pub fn accumulate(&mut self, other: &GradStore) {
        for (a, b) in self.vals.iter_mut().zip(&other.vals) {
            match (a, b) {
                (PVal::V(x), PVal::V(y)) => *x += y,
                (PVal::M(x), PVal::M(y)) => *x += y,
                _ => panic!("gradient store shape mismatch"),
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for v in &mut self.vals {
            match v {
                PVal::V(a) => *a *= c,
                PVal::M(a) => *a *= c,
            }
        }
    }

    pub fn get_scalar(&self, params: &ParamSet, flat: usize) -> f64 {
        let (i, off) = params.locate(flat);
        match &self.vals[i] {
            PVal::V(v) => v[off],
            PVal::M(m) => m.as_slice().unwrap()[off],
        }
    }

    /// Sum of absolute gradient entries for one tensor.
    pub fn abs_sum(&self, id: ParamId) -> f64 {
        match &self.vals[id.0] {
            PVal::V(a) => a.iter().map(|x| x.abs()).sum(),
            PVal::M(a) => a.iter().map(|x| x.abs()).sum(),
        }
    }

    /// Global L2 norm over every entry.
    pub fn l2_norm(&self) -> f64 {
        let mut s = 0.0;
        for v in &self.vals {
            match v {
                PVal::V(a) => s += a.iter().map(|x| x * x).sum::<f64>(),
                PVal::M(a) => s += a.iter().map(|x| x * x).sum::<f64>(),
            }
        }
        s.sqrt()
    }
}

/// Xavier-uniform matrix initialization.
pub fn xavier(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound))
}

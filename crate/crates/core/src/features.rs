//! Random feature map surrogate `zeta -> W tanh(W_in zeta + b_in)`.
//!
//! The internal parameters `W_in` and `b_in` are drawn once and never
//! trained; only the output matrix `W` is learned.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::Uniform;
use serde::{Deserialize, Serialize};

use crate::io::{read_json, write_json};
use crate::{RafdaError, Result};

/// Magnitude beyond which a free run is considered to have blown up.
pub const BLOW_UP_THRESHOLD: f64 = 1e6;

const BINARY_MAGIC: &[u8; 4] = b"RFMP";
const BINARY_VERSION: u32 = 1;

/// Fixed random internal parameters of the feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureParams {
    w_in: DMatrix<f64>,
    b_in: DVector<f64>,
    w: f64,
    b: f64,
}

impl FeatureParams {
    /// Builds parameters from explicit matrices; entries must lie within the
    /// stated draw half-widths.
    pub fn new(w_in: DMatrix<f64>, b_in: DVector<f64>, w: f64, b: f64) -> Result<Self> {
        if w_in.nrows() != b_in.len() {
            return Err(RafdaError::DimensionMismatch {
                context: "W_in rows vs b_in length",
                expected: w_in.nrows(),
                got: b_in.len(),
            });
        }
        if w_in.nrows() == 0 || w_in.ncols() == 0 {
            return Err(RafdaError::InvalidArgument("feature map dimensions must be positive".into()));
        }
        if w_in.iter().any(|v| !(v.abs() <= w)) || b_in.iter().any(|v| !(v.abs() <= b)) {
            return Err(RafdaError::InvalidArgument(
                "internal parameters exceed their draw bounds".into(),
            ));
        }
        Ok(FeatureParams { w_in, b_in, w, b })
    }

    pub fn w_in(&self) -> &DMatrix<f64> {
        &self.w_in
    }

    pub fn b_in(&self) -> &DVector<f64> {
        &self.b_in
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    /// Feature dimension `D_r`.
    pub fn feature_dim(&self) -> usize {
        self.w_in.nrows()
    }

    /// Input (delay vector) dimension `D_zeta`.
    pub fn input_dim(&self) -> usize {
        self.w_in.ncols()
    }

    /// Writes `tanh(W_in zeta + b_in)` into `out` without allocating.
    pub(crate) fn map_into(&self, zeta: &[f64], out: &mut [f64]) {
        debug_assert_eq!(zeta.len(), self.input_dim());
        debug_assert_eq!(out.len(), self.feature_dim());
        out.copy_from_slice(self.b_in.as_slice());
        for (j, &z) in zeta.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.w_in.column(j).iter()) {
                *o += a * z;
            }
        }
        for o in out.iter_mut() {
            *o = o.tanh();
        }
    }

    /// Raw little-endian layout: `RFMP`, version, `D_r`, `D_zeta` (u32 each),
    /// then `w`, `b`, `W_in` column-major and `b_in` as f64.
    pub fn to_bytes(&self) -> Vec<u8> {
        let (dr, dz) = (self.feature_dim(), self.input_dim());
        let mut out = Vec::with_capacity(16 + 8 * (2 + dr * dz + dr));
        out.extend_from_slice(BINARY_MAGIC);
        out.extend_from_slice(&BINARY_VERSION.to_le_bytes());
        out.extend_from_slice(&(dr as u32).to_le_bytes());
        out.extend_from_slice(&(dz as u32).to_le_bytes());
        for v in [self.w, self.b].iter().chain(self.w_in.iter()).chain(self.b_in.iter()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| RafdaError::InvalidArgument(format!("feature parameter blob: {msg}"));
        if bytes.len() < 16 || &bytes[..4] != BINARY_MAGIC {
            return Err(bad("missing RFMP header"));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes")) as usize;
        if word(4) != BINARY_VERSION as usize {
            return Err(bad("unsupported version"));
        }
        let (dr, dz) = (word(8), word(12));
        let expected = 16 + 8 * (2 + dr * dz + dr);
        if bytes.len() != expected {
            return Err(bad(&format!("expected {expected} bytes, got {}", bytes.len())));
        }
        let mut values = bytes[16..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let w = values.next().expect("length checked");
        let b = values.next().expect("length checked");
        let w_in = DMatrix::from_iterator(dr, dz, values.by_ref().take(dr * dz));
        let b_in = DVector::from_iterator(dr, values);
        FeatureParams::new(w_in, b_in, w, b)
    }
}

/// Draws `(W_in)_ij ~ U[-w, w]` and `(b_in)_i ~ U[-b, b]` independently.
pub fn sample_feature_params<R: Rng + ?Sized>(
    feature_dim: usize,
    input_dim: usize,
    w: f64,
    b: f64,
    rng: &mut R,
) -> Result<FeatureParams> {
    if feature_dim == 0 || input_dim == 0 {
        return Err(RafdaError::InvalidArgument("feature map dimensions must be positive".into()));
    }
    if !(w >= 0.0 && b >= 0.0) || !w.is_finite() || !b.is_finite() {
        return Err(RafdaError::InvalidArgument(format!(
            "draw half-widths must be non-negative, got w = {w}, b = {b}"
        )));
    }
    let draw = |half: f64, rng: &mut R| {
        if half == 0.0 {
            0.0
        } else {
            rng.sample(Uniform::new_inclusive(-half, half).expect("finite bounds"))
        }
    };
    // row-major draw order, W_in first
    let mut w_in = DMatrix::zeros(feature_dim, input_dim);
    for i in 0..feature_dim {
        for j in 0..input_dim {
            w_in[(i, j)] = draw(w, rng);
        }
    }
    let b_in = DVector::from_fn(feature_dim, |_, _| draw(b, rng));
    FeatureParams::new(w_in, b_in, w, b)
}

/// `tanh(W_in zeta + b_in)`.
pub fn feature_map(zeta: &DVector<f64>, params: &FeatureParams) -> Result<DVector<f64>> {
    if zeta.len() != params.input_dim() {
        return Err(RafdaError::DimensionMismatch {
            context: "delay vector vs feature map input",
            expected: params.input_dim(),
            got: zeta.len(),
        });
    }
    let mut out = DVector::zeros(params.feature_dim());
    params.map_into(zeta.as_slice(), out.as_mut_slice());
    Ok(out)
}

/// How an output matrix was learned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Ridge,
    Rafda,
}

/// Learned output matrix, `D_zeta x D_r`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    pub matrix: DMatrix<f64>,
    pub provenance: Provenance,
}

impl WeightMatrix {
    pub fn new(matrix: DMatrix<f64>, provenance: Provenance) -> Result<Self> {
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(RafdaError::InvalidArgument("weight matrix has non-finite entries".into()));
        }
        Ok(WeightMatrix { matrix, provenance })
    }

    pub fn zeros(output_dim: usize, feature_dim: usize, provenance: Provenance) -> Self {
        WeightMatrix {
            matrix: DMatrix::zeros(output_dim, feature_dim),
            provenance,
        }
    }

    fn check(&self, params: &FeatureParams) -> Result<()> {
        if self.matrix.ncols() != params.feature_dim() {
            return Err(RafdaError::DimensionMismatch {
                context: "weight columns vs feature dimension",
                expected: params.feature_dim(),
                got: self.matrix.ncols(),
            });
        }
        if self.matrix.nrows() != params.input_dim() {
            return Err(RafdaError::DimensionMismatch {
                context: "weight rows vs delay vector dimension",
                expected: params.input_dim(),
                got: self.matrix.nrows(),
            });
        }
        Ok(())
    }
}

/// One step of the surrogate propagator, `W phi(zeta)`.
pub fn surrogate_step(weights: &WeightMatrix, zeta: &DVector<f64>, params: &FeatureParams) -> Result<DVector<f64>> {
    weights.check(params)?;
    Ok(&weights.matrix * feature_map(zeta, params)?)
}

/// Output of an autonomous surrogate run.
#[derive(Debug, Clone, PartialEq)]
pub struct FreeRun {
    /// Iterates up to (excluding) the blow-up step, starting with `zeta0`.
    pub states: Vec<DVector<f64>>,
    /// Step at which an iterate became non-finite or exceeded
    /// [`BLOW_UP_THRESHOLD`] in magnitude.
    pub blow_up: Option<usize>,
}

/// Iterates the surrogate from `zeta0` for `n_steps` steps.
pub fn free_run(weights: &WeightMatrix, params: &FeatureParams, zeta0: &DVector<f64>, n_steps: usize) -> Result<FreeRun> {
    weights.check(params)?;
    if zeta0.len() != params.input_dim() {
        return Err(RafdaError::DimensionMismatch {
            context: "initial delay vector vs feature map input",
            expected: params.input_dim(),
            got: zeta0.len(),
        });
    }
    let mut states = Vec::with_capacity(n_steps + 1);
    states.push(zeta0.clone());
    let mut phi = DVector::zeros(params.feature_dim());
    for step in 1..=n_steps {
        params.map_into(states[step - 1].as_slice(), phi.as_mut_slice());
        let next = &weights.matrix * &phi;
        if next.iter().any(|v| !(v.abs() <= BLOW_UP_THRESHOLD)) {
            return Ok(FreeRun {
                states,
                blow_up: Some(step),
            });
        }
        states.push(next);
    }
    Ok(FreeRun { states, blow_up: None })
}

/// Delay-coordinate metadata stored with a model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingMeta {
    pub m: usize,
    pub tau: usize,
    pub dt: f64,
    /// Observation dimension.
    pub d: usize,
}

/// A trained surrogate: feature map, output weights and the embedding the
/// weights were trained in.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateModel {
    pub params: FeatureParams,
    pub weights: WeightMatrix,
    pub embedding: EmbeddingMeta,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeatureParamsDoc {
    #[serde(rename = "D_r")]
    feature_dim: usize,
    #[serde(rename = "D_zeta")]
    input_dim: usize,
    w: f64,
    b: f64,
    #[serde(rename = "W_in")]
    w_in: Vec<Vec<f64>>,
    b_in: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightsDoc {
    provenance: Provenance,
    rows: usize,
    cols: usize,
    #[serde(rename = "W")]
    w: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    format: String,
    version: u32,
    embedding: EmbeddingMeta,
    features: FeatureParamsDoc,
    weights: WeightsDoc,
}

const MODEL_FORMAT: &str = "rafda-surrogate";

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>], nrows: usize, ncols: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(RafdaError::InvalidArgument(format!("{what} is not {nrows}x{ncols}")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

impl SurrogateModel {
    pub fn new(params: FeatureParams, weights: WeightMatrix, embedding: EmbeddingMeta) -> Result<Self> {
        weights.check(&params)?;
        if embedding.m * embedding.d != params.input_dim() {
            return Err(RafdaError::DimensionMismatch {
                context: "embedding m * d vs feature map input",
                expected: params.input_dim(),
                got: embedding.m * embedding.d,
            });
        }
        Ok(SurrogateModel {
            params,
            weights,
            embedding,
        })
    }

    pub fn to_json(&self) -> Result<serde_json::Value> {
        let doc = ModelDoc {
            format: MODEL_FORMAT.into(),
            version: 1,
            embedding: self.embedding,
            features: FeatureParamsDoc {
                feature_dim: self.params.feature_dim(),
                input_dim: self.params.input_dim(),
                w: self.params.w,
                b: self.params.b,
                w_in: rows_of(&self.params.w_in),
                b_in: self.params.b_in.iter().copied().collect(),
            },
            weights: WeightsDoc {
                provenance: self.weights.provenance,
                rows: self.weights.matrix.nrows(),
                cols: self.weights.matrix.ncols(),
                w: rows_of(&self.weights.matrix),
            },
        };
        Ok(serde_json::to_value(doc)?)
    }

    pub fn from_json(value: serde_json::Value) -> Result<Self> {
        let doc: ModelDoc = serde_json::from_value(value)?;
        if doc.format != MODEL_FORMAT || doc.version != 1 {
            return Err(RafdaError::InvalidArgument(format!(
                "unsupported model format {:?} version {}",
                doc.format, doc.version
            )));
        }
        let f = doc.features;
        let params = FeatureParams::new(
            from_rows(&f.w_in, f.feature_dim, f.input_dim, "W_in")?,
            DVector::from_vec(f.b_in),
            f.w,
            f.b,
        )?;
        let weights = WeightMatrix::new(
            from_rows(&doc.weights.w, doc.weights.rows, doc.weights.cols, "W")?,
            doc.weights.provenance,
        )?;
        SurrogateModel::new(params, weights, doc.embedding)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, &self.to_json()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let value: serde_json::Value = read_json(path)?;
        SurrogateModel::from_json(value).map_err(|e| RafdaError::Format {
            path: path.into(),
            message: e.to_string(),
        })
    }
}

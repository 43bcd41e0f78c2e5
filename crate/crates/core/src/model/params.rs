use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diff::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    Mean,
    Attention,
}

impl std::str::FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Pooling::Mean),
            "attention" => Ok(Pooling::Attention),
            other => Err(Error::Config(format!("unknown pooling kind {other:?}"))),
        }
    }
}

impl std::fmt::Display for Pooling {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Pooling::Mean => "mean",
            Pooling::Attention => "attention",
        })
    }
}

/// Hyper fields fixing every tensor shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub feat_dim: usize,
    pub hidden_dim: usize,
    pub num_classes: usize,
    pub pooling: Pooling,
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.feat_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::Config("feature and hidden dimensions must be at least 1".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("at least two classes are required".into()));
        }
        Ok(())
    }
}

/// Every learnable tensor, in checkpoint order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamId {
    InputWeight,
    InputBias,
    UpdateInput,
    UpdateRecurrent,
    UpdateBias,
    ResetInput,
    ResetRecurrent,
    ResetBias,
    CandidateInput,
    CandidateRecurrent,
    CandidateBias,
    AttnVector,
    AttnQuery,
    AttnKey,
    AttnBias,
    ValueWeight,
    FuseWeight,
    FuseBias,
    PoolQuery,
    ClassWeight,
    ClassBias,
}

impl ParamId {
    pub const ALL: [ParamId; 21] = [
        ParamId::InputWeight,
        ParamId::InputBias,
        ParamId::UpdateInput,
        ParamId::UpdateRecurrent,
        ParamId::UpdateBias,
        ParamId::ResetInput,
        ParamId::ResetRecurrent,
        ParamId::ResetBias,
        ParamId::CandidateInput,
        ParamId::CandidateRecurrent,
        ParamId::CandidateBias,
        ParamId::AttnVector,
        ParamId::AttnQuery,
        ParamId::AttnKey,
        ParamId::AttnBias,
        ParamId::ValueWeight,
        ParamId::FuseWeight,
        ParamId::FuseBias,
        ParamId::PoolQuery,
        ParamId::ClassWeight,
        ParamId::ClassBias,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ParamId::InputWeight => "input.weight",
            ParamId::InputBias => "input.bias",
            ParamId::UpdateInput => "gru.update.input",
            ParamId::UpdateRecurrent => "gru.update.recurrent",
            ParamId::UpdateBias => "gru.update.bias",
            ParamId::ResetInput => "gru.reset.input",
            ParamId::ResetRecurrent => "gru.reset.recurrent",
            ParamId::ResetBias => "gru.reset.bias",
            ParamId::CandidateInput => "gru.candidate.input",
            ParamId::CandidateRecurrent => "gru.candidate.recurrent",
            ParamId::CandidateBias => "gru.candidate.bias",
            ParamId::AttnVector => "attention.vector",
            ParamId::AttnQuery => "attention.query",
            ParamId::AttnKey => "attention.key",
            ParamId::AttnBias => "attention.bias",
            ParamId::ValueWeight => "attention.value",
            ParamId::FuseWeight => "fuse.weight",
            ParamId::FuseBias => "fuse.bias",
            ParamId::PoolQuery => "pool.query",
            ParamId::ClassWeight => "classifier.weight",
            ParamId::ClassBias => "classifier.bias",
        }
    }

    pub fn from_name(name: &str) -> Option<ParamId> {
        ParamId::ALL.into_iter().find(|id| id.name() == name)
    }

    /// `(rows, cols)`; vectors are columns.
    pub fn shape(self, dims: &ModelDims) -> (usize, usize) {
        let (dx, dh, c) = (dims.feat_dim, dims.hidden_dim, dims.num_classes);
        match self {
            ParamId::InputWeight => (dh, dx),
            ParamId::UpdateInput
            | ParamId::UpdateRecurrent
            | ParamId::ResetInput
            | ParamId::ResetRecurrent
            | ParamId::CandidateInput
            | ParamId::CandidateRecurrent
            | ParamId::AttnQuery
            | ParamId::AttnKey
            | ParamId::ValueWeight => (dh, dh),
            ParamId::FuseWeight => (dh, 2 * dh),
            ParamId::ClassWeight => (c, dh),
            ParamId::ClassBias => (c, 1),
            ParamId::InputBias
            | ParamId::UpdateBias
            | ParamId::ResetBias
            | ParamId::CandidateBias
            | ParamId::AttnVector
            | ParamId::AttnBias
            | ParamId::FuseBias
            | ParamId::PoolQuery => (dh, 1),
        }
    }

    pub fn is_bias(self) -> bool {
        matches!(
            self,
            ParamId::InputBias
                | ParamId::UpdateBias
                | ParamId::ResetBias
                | ParamId::CandidateBias
                | ParamId::AttnBias
                | ParamId::FuseBias
                | ParamId::ClassBias
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    dims: ModelDims,
    tensors: Vec<Matrix>,
}

impl ModelParams {
    /// Glorot-uniform weights with bound `sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn init(dims: ModelDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = ParamId::ALL
            .iter()
            .map(|&id| {
                let (rows, cols) = id.shape(&dims);
                if id.is_bias() {
                    return Matrix::zeros(rows, cols);
                }
                let bound = init_bound(rows, cols);
                let data = (0..rows * cols).map(|_| rng.gen_range(-bound..=bound)).collect();
                Matrix::from_vec(rows, cols, data).expect("shape")
            })
            .collect();
        Ok(ModelParams { dims, tensors })
    }

    /// All-zero parameters of the right shapes.
    pub fn zeros(dims: ModelDims) -> Result<Self> {
        dims.validate()?;
        let tensors = ParamId::ALL
            .iter()
            .map(|id| {
                let (r, c) = id.shape(&dims);
                Matrix::zeros(r, c)
            })
            .collect();
        Ok(ModelParams { dims, tensors })
    }

    /// Assembles parameters from tensors in [`ParamId::ALL`] order.
    pub fn from_tensors(dims: ModelDims, tensors: Vec<Matrix>) -> Result<Self> {
        dims.validate()?;
        if tensors.len() != ParamId::ALL.len() {
            return Err(Error::validation(
                "model parameters",
                format!("expected {} tensors, got {}", ParamId::ALL.len(), tensors.len()),
            ));
        }
        for (id, t) in ParamId::ALL.iter().zip(&tensors) {
            let want = id.shape(&dims);
            if t.shape() != want {
                return Err(Error::validation(
                    "model parameters",
                    format!("{} has shape {:?}, expected {want:?}", id.name(), t.shape()),
                ));
            }
            if !t.is_finite() {
                return Err(Error::validation(
                    "model parameters",
                    format!("{} holds non-finite entries", id.name()),
                ));
            }
        }
        Ok(ModelParams { dims, tensors })
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn tensor(&self, id: ParamId) -> &Matrix {
        &self.tensors[id.index()]
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.tensors[id.index()]
    }

    pub fn tensors(&self) -> &[Matrix] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Matrix] {
        &mut self.tensors
    }

    pub fn into_tensors(self) -> Vec<Matrix> {
        self.tensors
    }

    pub fn named(&self) -> impl Iterator<Item = (ParamId, &Matrix)> {
        ParamId::ALL.iter().copied().zip(&self.tensors)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Matrix::len).sum()
    }
}

pub fn init_bound(rows: usize, cols: usize) -> f64 {
    (6.0 / (rows + cols) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims() -> ModelDims {
        ModelDims {
            feat_dim: 5,
            hidden_dim: 8,
            num_classes: 3,
            pooling: Pooling::Mean,
        }
    }

    #[test]
    fn init_is_seed_deterministic() {
        let a = ModelParams::init(dims(), 11).unwrap();
        let b = ModelParams::init(dims(), 11).unwrap();
        let c = ModelParams::init(dims(), 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn init_respects_glorot_bounds_and_zero_biases() {
        let d = ModelDims {
            hidden_dim: 16,
            ..dims()
        };
        let p = ModelParams::init(d, 3).unwrap();
        let mut checked = 0;
        for (id, t) in p.named() {
            if id.is_bias() {
                assert!(t.data().iter().all(|&x| x == 0.0), "{}", id.name());
                continue;
            }
            // fan_in = cols, fan_out = rows
            let s = (6.0 / (t.cols() + t.rows()) as f64).sqrt();
            for &x in t.data() {
                assert!(x.abs() <= s, "{} entry {x} outside ±{s}", id.name());
                checked += 1;
            }
        }
        assert!(checked >= 1000, "only {checked} entries sampled");
    }

    #[test]
    fn from_tensors_checks_shapes() {
        let p = ModelParams::init(dims(), 1).unwrap();
        let mut tensors = p.clone().into_tensors();
        assert_eq!(ModelParams::from_tensors(dims(), tensors.clone()).unwrap(), p);
        tensors[0] = Matrix::zeros(1, 1);
        let err = ModelParams::from_tensors(dims(), tensors).unwrap_err().to_string();
        assert!(err.contains("input.weight"), "{err}");
    }

    #[test]
    fn names_round_trip() {
        for id in ParamId::ALL {
            assert_eq!(ParamId::from_name(id.name()), Some(id));
            assert_eq!(ParamId::ALL[id.index()], id);
        }
    }

    #[test]
    fn rejects_degenerate_dims() {
        assert!(ModelParams::init(ModelDims { num_classes: 1, ..dims() }, 0).is_err());
        assert!(ModelParams::init(ModelDims { hidden_dim: 0, ..dims() }, 0).is_err());
    }
}

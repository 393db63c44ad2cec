//! Sparse mixture of frequency-specialized linear experts for time-series
//! forecasting.
//!
//! A [`SuperLinear`] model routes each lookback window through a spectral gate:
//! the L1-normalized periodogram of the window scores every expert, the top-k
//! scores survive and a softmax over them mixes the experts' forecasts. Experts
//! are RevIN-wrapped linear maps (frequency-specialized or complementary) plus
//! naive and mean heuristics.
//!
//! All numerics are generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below name the two concrete instantiations.

pub mod checkpoint;
pub mod error;
pub mod evaluation;
pub mod experts;
pub mod frequency;
pub mod gating;
pub mod model;
pub mod resampling;
pub mod scalar;
pub mod series_data;
pub mod spectral;
pub mod training;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use error::{Error, Result};
pub use experts::{ExpertBank, ExpertKind, LinearExpert};
pub use frequency::Frequency;
pub use gating::{GateDecision, GatingNetwork};
pub use model::SuperLinear;
pub use scalar::Scalar;
pub use series_data::{Dataset, SplitSpec, WindowSet};
pub use training::{Architecture, TrainConfig, TrainHistory};

pub type SuperLinearF64 = SuperLinear<f64>;
pub type SuperLinearF32 = SuperLinear<f32>;
pub type ExpertBankF64 = ExpertBank<f64>;
pub type ExpertBankF32 = ExpertBank<f32>;
pub type GatingNetworkF64 = GatingNetwork<f64>;
pub type GatingNetworkF32 = GatingNetwork<f32>;
pub type DatasetF64 = Dataset<f64>;
pub type DatasetF32 = Dataset<f32>;

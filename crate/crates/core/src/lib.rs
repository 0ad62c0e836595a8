//! Switching independent vector analysis and switching convolutional
//! beamforming in the STFT domain.

pub mod atf_init;
pub mod error;
pub mod kv;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod optimizer;
pub mod rng;
pub mod simulator;
pub mod spectral;
pub mod swiva;
pub mod swwpe;
pub mod tensor_io;
pub mod wav;

pub use error::{Error, Result};
pub use linalg::{CMatrix, LoadingPolicy, C64};
pub use model::{
    AtfSet, BinMatrices, FrameTensor, ObservedTensor, OutputTensor, PredictionFilters, RealTensor, SeparationMatrices,
    SourceVariances, StackedPast, SwitchWeights, Tensor3,
};
pub use spectral::{StftConfig, Waveform, WindowKind};

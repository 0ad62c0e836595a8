//! Benchmark inputs shared by the criterion benches.

use swbss_core::simulator::{gen_scene, SceneSpec};
use swbss_core::spectral::stft;
use swbss_core::{FrameTensor, StftConfig, Waveform};

/// A reverberant two-source mixture of `seconds` seconds.
pub fn mixture(seconds: f64) -> Waveform {
    let spec = SceneSpec {
        duration_s: seconds,
        seed: 1,
        ..Default::default()
    };
    gen_scene(&spec).expect("default scene is valid").mixture
}

pub fn observed(seconds: f64) -> FrameTensor {
    stft(&mixture(seconds), &StftConfig::default()).expect("default STFT is valid")
}

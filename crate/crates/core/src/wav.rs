//! RIFF/WAVE reading and writing (16-bit PCM or 32-bit float).

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};
use crate::spectral::Waveform;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WavEncoding {
    Pcm16,
    Float32,
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let mut reader = WavReader::open(path)?;
    let spec = reader.spec();
    let nch = spec.channels as usize;
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()?,
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()?,
        (fmt, bits) => {
            return Err(Error::Format(format!("unsupported wav encoding {fmt:?}/{bits}")));
        }
    };
    if nch == 0 || !interleaved.len().is_multiple_of(nch) {
        return Err(Error::Format("truncated wav frame".into()));
    }
    let mut channels = vec![Vec::with_capacity(interleaved.len() / nch); nch];
    for (i, v) in interleaved.into_iter().enumerate() {
        channels[i % nch].push(v);
    }
    Waveform::new(channels, spec.sample_rate)
}

pub fn write_wav(path: impl AsRef<Path>, w: &Waveform, encoding: WavEncoding) -> Result<()> {
    w.validate()?;
    let spec = WavSpec {
        channels: w.num_channels() as u16,
        sample_rate: w.sample_rate,
        bits_per_sample: match encoding {
            WavEncoding::Pcm16 => 16,
            WavEncoding::Float32 => 32,
        },
        sample_format: match encoding {
            WavEncoding::Pcm16 => SampleFormat::Int,
            WavEncoding::Float32 => SampleFormat::Float,
        },
    };
    let mut writer = WavWriter::create(path, spec)?;
    for n in 0..w.len() {
        for ch in &w.channels {
            match encoding {
                WavEncoding::Pcm16 => {
                    let v = (ch[n] * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                    writer.write_sample(v)?;
                }
                WavEncoding::Float32 => writer.write_sample(ch[n] as f32)?,
            }
        }
    }
    writer.finalize()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_and_pcm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let w = Waveform::new(
            vec![vec![0.0, 0.25, -0.5, 0.125], vec![1.0 / 3.0, -0.75, 0.0, 0.5]],
            16000,
        )
        .unwrap();

        let p = dir.path().join("f.wav");
        write_wav(&p, &w, WavEncoding::Float32).unwrap();
        let r = read_wav(&p).unwrap();
        assert_eq!(r.sample_rate, 16000);
        assert_eq!(r.num_channels(), 2);
        for (a, b) in r.channels.iter().flatten().zip(w.channels.iter().flatten()) {
            assert!((a - b).abs() < 1e-7);
        }

        let p = dir.path().join("i.wav");
        write_wav(&p, &w, WavEncoding::Pcm16).unwrap();
        let r = read_wav(&p).unwrap();
        for (a, b) in r.channels.iter().flatten().zip(w.channels.iter().flatten()) {
            assert!((a - b).abs() <= 1.0 / 32768.0);
        }
    }
}

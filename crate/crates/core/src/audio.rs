//! RIFF/WAVE (PCM 16-bit, interleaved) and the label sidecar CSV
//! (`frame_index,label,clean_channel`).

use crate::scene::{MultiChannelWaveform, SceneError};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
    #[error("label file: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("unsupported wav format: {0}")]
    Format(String),
    #[error("label file row {row}: {msg}")]
    Labels { row: usize, msg: String },
    #[error(transparent)]
    Scene(#[from] SceneError),
}

const I16_SCALE: f64 = 32767.0;

/// Writes all channels interleaved. Samples outside [-1, 1] are clipped.
pub fn write_wav(path: &Path, samples: &[Vec<f64>], sample_rate: u32) -> Result<(), AudioError> {
    let spec = hound::WavSpec {
        channels: samples.len() as u16,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    let len = samples.first().map_or(0, Vec::len);
    for s in 0..len {
        for ch in samples {
            let v = (ch[s].clamp(-1.0, 1.0) * I16_SCALE).round() as i16;
            writer.write_sample(v)?;
        }
    }
    writer.finalize()?;
    Ok(())
}

/// Returns `(channels, sample_rate)` with amplitudes scaled back to [-1, 1].
pub fn read_wav(path: &Path) -> Result<(Vec<Vec<f64>>, u32), AudioError> {
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(AudioError::Format(format!(
            "{:?} {} bit",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    let n = spec.channels as usize;
    let mut channels = vec![Vec::with_capacity(reader.len() as usize / n.max(1)); n];
    for (i, s) in reader.samples::<i16>().enumerate() {
        channels[i % n].push(s? as f64 / I16_SCALE);
    }
    Ok((channels, spec.sample_rate))
}

pub fn write_labels(path: &Path, labels: &[usize], clean: &[usize]) -> Result<(), AudioError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["frame_index", "label", "clean_channel"])?;
    for (t, (l, c)) in labels.iter().zip(clean).enumerate() {
        w.write_record([t.to_string(), l.to_string(), c.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_labels(path: &Path) -> Result<(Vec<usize>, Vec<usize>), AudioError> {
    let mut r = csv::Reader::from_path(path)?;
    let mut labels = Vec::new();
    let mut clean = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let field = |i: usize| -> Result<usize, AudioError> {
            rec.get(i)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| AudioError::Labels {
                    row,
                    msg: format!("field {i} missing or not an integer"),
                })
        };
        if field(0)? != row {
            return Err(AudioError::Labels {
                row,
                msg: "frame_index out of sequence".into(),
            });
        }
        labels.push(field(1)?);
        clean.push(field(2)?);
    }
    Ok((labels, clean))
}

/// Writes `<stem>.wav` and `<stem>.csv` into `dir`.
pub fn save_scene(dir: &Path, stem: &str, wave: &MultiChannelWaveform) -> Result<(), AudioError> {
    std::fs::create_dir_all(dir)?;
    write_wav(&dir.join(format!("{stem}.wav")), &wave.samples, wave.sample_rate)?;
    write_labels(
        &dir.join(format!("{stem}.csv")),
        &wave.frame_labels,
        &wave.clean_channel_trace,
    )
}

/// Reads a wav plus its sidecar labels when one sits next to it.
pub fn load_scene(wav: &Path) -> Result<MultiChannelWaveform, AudioError> {
    let (samples, sr) = read_wav(wav)?;
    let labels_path = wav.with_extension("csv");
    let (labels, clean) = if labels_path.exists() {
        read_labels(&labels_path)?
    } else {
        (Vec::new(), Vec::new())
    };
    Ok(MultiChannelWaveform::new(samples, sr, labels, clean)?)
}

//! 16-bit PCM mono WAV and 8-bit binary PGM (P5) spectrogram images.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::dsp::{MelSpec, Waveform};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub fn read_wav<T: Scalar>(path: &Path) -> Result<Waveform<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    decode_wav(BufReader::new(file))
}

pub fn decode_wav<T: Scalar, R: Read>(reader: R) -> Result<Waveform<T>> {
    let mut r = hound::WavReader::new(reader)?;
    let spec = r.spec();
    if spec.channels != 1 {
        return Err(Error::format(
            "wav",
            format!("expected mono, found {} channels", spec.channels),
        ));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::format(
            "wav",
            format!(
                "expected 16-bit PCM, found {} bits {:?}",
                spec.bits_per_sample, spec.sample_format
            ),
        ));
    }
    let samples = r
        .samples::<i16>()
        .map(|s| s.map(|v| T::of(v as f64 / 32768.0)))
        .collect::<std::result::Result<Vec<T>, _>>()?;
    Waveform::new(samples, spec.sample_rate)
}

pub fn write_wav<T: Scalar>(path: &Path, wav: &Waveform<T>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    encode_wav(BufWriter::new(file), wav)
}

pub fn encode_wav<T: Scalar, W: Write + std::io::Seek>(writer: W, wav: &Waveform<T>) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wav.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::new(writer, spec)?;
    for &s in &wav.samples {
        let v = (s.as_f64() * 32767.0).round().clamp(-32768.0, 32767.0) as i16;
        w.write_sample(v)?;
    }
    w.finalize()?;
    Ok(())
}

/// `P5` header then one byte per cell, `round(v * 255)`; image row `i` is
/// mel band `i`.
pub fn encode_pgm<T: Scalar>(spec: &MelSpec<T>) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", spec.width, spec.n_mels).into_bytes();
    out.extend(
        spec.values
            .iter()
            .map(|v| (v.as_f64() * 255.0).round().clamp(0.0, 255.0) as u8),
    );
    out
}

pub fn decode_pgm<T: Scalar>(bytes: &[u8]) -> Result<MelSpec<T>> {
    let bad = |d: &str| Error::format("pgm", d.to_string());
    // header: magic, width, height, maxval separated by whitespace, with
    // optional '#' comments, then exactly one whitespace byte
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ascii header"))?);
    }
    if fields[0] != "P5" {
        return Err(bad("missing P5 magic"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (width, height, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(bad("only 8-bit images are supported"));
    }
    let payload = bytes.get(pos + 1..).ok_or_else(|| bad("missing payload"))?;
    if payload.len() != width * height {
        return Err(bad(&format!(
            "expected {} payload bytes, found {}",
            width * height,
            payload.len()
        )));
    }
    let scale = maxval as f64;
    MelSpec::new(
        height,
        width,
        payload.iter().map(|&b| T::of(b as f64 / scale)).collect(),
    )
}

pub fn write_pgm<T: Scalar>(path: &Path, spec: &MelSpec<T>) -> Result<()> {
    std::fs::write(path, encode_pgm(spec)).map_err(|e| Error::io(path, e))
}

pub fn read_pgm<T: Scalar>(path: &Path) -> Result<MelSpec<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes)
}

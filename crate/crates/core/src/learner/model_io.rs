//! Binary model files.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! "INSP"  u32 format_version  u8 kind
//! extractor: u32 width  u32 height  u32 grid  u32 bins  u32 n  f64[n] mean  f64[n] std
//! scan:      u32 window  u32 stride  f64 s_min  f64 nms_iou
//! u32 hash_len  u8[hash_len] training hash  f64 final_train_loss  f64 bias
//! u32 n_weights  f64[n_weights] weights
//! u32 crc32 of every preceding byte
//! ```

use std::fs;
use std::path::Path;

use super::features::ExtractorConfig;
use super::linear::{ModelKind, ModelParams, ScanConfig, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::fsutil;

pub const MAGIC: &[u8; 4] = b"INSP";

pub fn to_bytes(params: &ModelParams) -> Vec<u8> {
    let mut out = Vec::new();
    let u32_ = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
    let f64_ = |out: &mut Vec<u8>, v: f64| out.extend_from_slice(&v.to_le_bytes());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&params.format_version.to_le_bytes());
    out.push(match params.kind {
        ModelKind::Classifier => 0,
        ModelKind::Detector => 1,
    });
    let e = &params.extractor;
    u32_(&mut out, e.width);
    u32_(&mut out, e.height);
    u32_(&mut out, e.grid);
    u32_(&mut out, e.bins);
    u32_(&mut out, e.mean.len());
    e.mean.iter().for_each(|v| f64_(&mut out, *v));
    e.std.iter().for_each(|v| f64_(&mut out, *v));
    u32_(&mut out, params.scan.window);
    u32_(&mut out, params.scan.stride);
    f64_(&mut out, params.scan.s_min);
    f64_(&mut out, params.scan.nms_iou);
    u32_(&mut out, params.training_hash.len());
    out.extend_from_slice(params.training_hash.as_bytes());
    f64_(&mut out, params.final_train_loss);
    f64_(&mut out, params.bias);
    u32_(&mut out, params.weights.len());
    params.weights.iter().for_each(|v| f64_(&mut out, *v));
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::CorruptModel("unexpected end of data".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        self.u32().map(|v| v as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        if n > self.bytes.len() / 8 {
            return Err(Error::CorruptModel(format!("implausible array length {n}")));
        }
        (0..n).map(|_| self.f64()).collect()
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<ModelParams> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(Error::CorruptModel("bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    if bytes.len() < 13 {
        return Err(Error::CorruptModel("truncated header".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(Error::CorruptModel("checksum mismatch".into()));
    }
    let mut r = Reader { bytes: body, pos: 8 };
    let kind = match r.u8()? {
        0 => ModelKind::Classifier,
        1 => ModelKind::Detector,
        k => return Err(Error::CorruptModel(format!("unknown model kind {k}"))),
    };
    let width = r.usize()?;
    let height = r.usize()?;
    let grid = r.usize()?;
    let bins = r.usize()?;
    let n = r.usize()?;
    let mean = r.f64s(n)?;
    let std = r.f64s(n)?;
    let extractor = ExtractorConfig {
        width,
        height,
        grid,
        bins,
        mean,
        std,
    };
    let scan = ScanConfig {
        window: r.usize()?,
        stride: r.usize()?,
        s_min: r.f64()?,
        nms_iou: r.f64()?,
    };
    let hash_len = r.usize()?;
    let training_hash = String::from_utf8(r.take(hash_len)?.to_vec())
        .map_err(|_| Error::CorruptModel("training hash is not UTF-8".into()))?;
    let final_train_loss = r.f64()?;
    let bias = r.f64()?;
    let n_w = r.usize()?;
    let weights = r.f64s(n_w)?;
    if r.pos != body.len() {
        return Err(Error::CorruptModel("trailing bytes".into()));
    }
    let params = ModelParams {
        kind,
        weights,
        bias,
        extractor,
        scan,
        training_hash,
        final_train_loss,
        format_version: version,
    };
    params
        .validate()
        .map_err(|e| Error::CorruptModel(e.to_string()))?;
    Ok(params)
}

pub fn save_model(params: &ModelParams, path: &Path) -> Result<()> {
    fsutil::write_atomic(path, &to_bytes(params))
}

pub fn load_model(path: &Path) -> Result<ModelParams> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> ModelParams {
        let mut extractor = ExtractorConfig::new(16, 16);
        extractor.grid = 2;
        extractor.bins = 1;
        extractor.fit_normalization(&[vec![1.0; 8], vec![3.0, 0.0, 1.0, 2.0, 5.0, 6.0, 7.0, 8.0]]);
        ModelParams {
            kind: ModelKind::Detector,
            weights: (0..8).map(|i| i as f64 * 0.1 - 0.3).collect(),
            bias: -1.25,
            extractor,
            scan: ScanConfig::default(),
            training_hash: "abc123".into(),
            final_train_loss: 0.0123,
            format_version: FORMAT_VERSION,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let m = model();
        let bytes = to_bytes(&m);
        assert_eq!(&bytes[..4], b"INSP");
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(to_bytes(&back), bytes);
    }

    #[test]
    fn truncation_is_corrupt() {
        let bytes = to_bytes(&model());
        for cut in [bytes.len() - 1, bytes.len() / 2, 10] {
            let err = from_bytes(&bytes[..cut]).unwrap_err();
            assert!(err.to_string().contains("corrupt model file"), "{err}");
        }
    }

    #[test]
    fn bit_flip_is_corrupt() {
        let mut bytes = to_bytes(&model());
        bytes[20] ^= 0x10;
        assert!(matches!(from_bytes(&bytes), Err(Error::CorruptModel(_))));
    }

    #[test]
    fn future_version_is_unsupported() {
        let mut m = model();
        m.format_version = FORMAT_VERSION + 1;
        let err = from_bytes(&to_bytes(&m)).unwrap_err();
        assert!(err.to_string().contains("unsupported version"), "{err}");
    }
}

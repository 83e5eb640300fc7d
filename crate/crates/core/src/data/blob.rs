//! Binary weight blob.
//!
//! Little-endian throughout. Layout:
//!
//! | bytes | field |
//! |---|---|
//! | 4 | magic `PNLK` |
//! | 2, 2 | major, minor version |
//! | 1 | value width in bytes (4 or 8) |
//! | 1 | fixed-point half width `n`, 0 for none |
//! | 2 | reserved, zero |
//! | 4 | layer count |
//!
//! then for each layer `in_dim: u32`, `out_dim: u32` followed by the FC
//! weight (row-major, `out × in`), FC bias, BN weight, BN bias, BN mean,
//! BN variance (each `out`) and epsilon, all at the declared width. A CRC-32
//! of everything before it closes the blob. Every field is a multiple of four
//! bytes, so the blob is also a whole number of 32-bit stream words.

use std::path::Path;

use crate::error::{BlobError, Result};
use crate::fixedpoint::QFormat;
use crate::pointnet::{LayerParams, PointNetParams, LAYER_DIMS};
use crate::scalar::Real;

pub const MAGIC: [u8; 4] = *b"PNLK";
pub const VERSION_MAJOR: u16 = 1;
pub const VERSION_MINOR: u16 = 0;
const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueWidth {
    F32,
    F64,
}

impl ValueWidth {
    pub fn bytes(self) -> u8 {
        match self {
            Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn from_byte(b: u8) -> Result<Self, BlobError> {
        match b {
            4 => Ok(Self::F32),
            8 => Ok(Self::F64),
            other => Err(BlobError::Width(other)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlobHeader {
    pub major: u16,
    pub minor: u16,
    pub width: ValueWidth,
    /// Fixed-point format the weights are meant to run at, if any.
    pub qformat: Option<QFormat>,
    pub layers: u32,
}

pub fn encode_weights<T: Real>(params: &PointNetParams<T>, width: ValueWidth, qformat: Option<QFormat>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION_MAJOR.to_le_bytes());
    out.extend_from_slice(&VERSION_MINOR.to_le_bytes());
    out.push(width.bytes());
    out.push(qformat.map_or(0, |q| q.half_width() as u8));
    out.extend_from_slice(&[0, 0]);
    out.extend_from_slice(&(params.layers().len() as u32).to_le_bytes());

    let put = |v: T, out: &mut Vec<u8>| match width {
        ValueWidth::F32 => out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes()),
        ValueWidth::F64 => out.extend_from_slice(&v.as_f64().to_le_bytes()),
    };
    for layer in params.layers() {
        out.extend_from_slice(&(layer.in_dim() as u32).to_le_bytes());
        out.extend_from_slice(&(layer.out_dim() as u32).to_le_bytes());
        for section in [
            layer.weight(),
            layer.bias(),
            layer.bn_weight(),
            layer.bn_bias(),
            layer.bn_mean(),
            layer.bn_var(),
        ] {
            for v in section {
                put(*v, &mut out);
            }
        }
        put(layer.epsilon(), &mut out);
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], BlobError> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(BlobError::Truncated(self.bytes.len()));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u16(&mut self) -> Result<u16, BlobError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, BlobError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn values(&mut self, n: usize, width: ValueWidth) -> Result<Vec<f64>, BlobError> {
        let raw = self.take(n * width.bytes() as usize)?;
        let v: Vec<f64> = match width {
            ValueWidth::F32 => raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
            ValueWidth::F64 => raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        };
        if v.iter().any(|x| !x.is_finite()) {
            return Err(BlobError::Value("non-finite parameter".into()));
        }
        Ok(v)
    }
}

/// Reads the fixed header without touching the payload.
pub fn decode_header(bytes: &[u8]) -> Result<BlobHeader, BlobError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4).map_err(|_| BlobError::BadMagic)? != MAGIC {
        return Err(BlobError::BadMagic);
    }
    let major = r.u16()?;
    let minor = r.u16()?;
    if major != VERSION_MAJOR {
        return Err(BlobError::UnsupportedVersion { major, minor });
    }
    let width = ValueWidth::from_byte(r.take(1)?[0])?;
    let q = r.take(1)?[0];
    let qformat = match q {
        0 => None,
        n => Some(QFormat::new(n as u32).map_err(|e| BlobError::Value(e.to_string()))?),
    };
    r.take(2)?;
    let layers = r.u32()?;
    Ok(BlobHeader {
        major,
        minor,
        width,
        qformat,
        layers,
    })
}

/// Decodes and validates a blob.
pub fn decode_weights(bytes: &[u8]) -> Result<(PointNetParams<f64>, BlobHeader), BlobError> {
    let header = decode_header(bytes)?;
    if bytes.len() < HEADER_LEN + 4 {
        return Err(BlobError::Truncated(bytes.len()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(BlobError::Checksum { stored, computed });
    }
    if header.layers as usize != LAYER_DIMS.len() {
        return Err(BlobError::Dimension(format!(
            "{} layers, expected {}",
            header.layers,
            LAYER_DIMS.len()
        )));
    }

    let mut r = Reader {
        bytes: body,
        pos: HEADER_LEN,
    };
    let mut layers = Vec::with_capacity(LAYER_DIMS.len());
    for (i, &(k, l)) in LAYER_DIMS.iter().enumerate() {
        let (in_dim, out_dim) = (r.u32()? as usize, r.u32()? as usize);
        if (in_dim, out_dim) != (k, l) {
            return Err(BlobError::Dimension(format!(
                "layer {i} is {in_dim}→{out_dim}, expected {k}→{l}"
            )));
        }
        let w = header.width;
        let weight = r.values(k * l, w)?;
        let bias = r.values(l, w)?;
        let bn_weight = r.values(l, w)?;
        let bn_bias = r.values(l, w)?;
        let bn_mean = r.values(l, w)?;
        let bn_var = r.values(l, w)?;
        let eps = r.values(1, w)?[0];
        let layer = LayerParams::new(k, l, weight, bias, bn_weight, bn_bias, bn_mean, bn_var, eps)
            .map_err(|e| BlobError::Value(format!("layer {i}: {e}")))?;
        layers.push(layer);
    }
    if r.pos != body.len() {
        return Err(BlobError::Dimension(format!(
            "{} trailing bytes after the last layer",
            body.len() - r.pos
        )));
    }
    let params = PointNetParams::new(layers).map_err(|e| BlobError::Dimension(e.to_string()))?;
    Ok((params, header))
}

pub fn write_weights<T: Real>(
    path: &Path,
    params: &PointNetParams<T>,
    width: ValueWidth,
    qformat: Option<QFormat>,
) -> Result<()> {
    std::fs::write(path, encode_weights(params, width, qformat))?;
    Ok(())
}

pub fn read_weights(path: &Path) -> Result<(PointNetParams<f64>, BlobHeader)> {
    Ok(decode_weights(&std::fs::read(path)?)?)
}

/// Packs bytes into little-endian 32-bit stream words, zero-padding the
/// last one.
pub fn to_words(bytes: &[u8]) -> Vec<u32> {
    bytes
        .chunks(4)
        .map(|c| {
            let mut w = [0u8; 4];
            w[..c.len()].copy_from_slice(c);
            u32::from_le_bytes(w)
        })
        .collect()
}

pub fn from_words(words: &[u32]) -> Vec<u8> {
    words.iter().flat_map(|w| w.to_le_bytes()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pointnet::random_params;

    fn same_bits(a: &PointNetParams<f64>, b: &PointNetParams<f64>) -> bool {
        a.layers().iter().zip(b.layers()).all(|(x, y)| {
            let pairs = [
                (x.weight(), y.weight()),
                (x.bias(), y.bias()),
                (x.bn_weight(), y.bn_weight()),
                (x.bn_bias(), y.bn_bias()),
                (x.bn_mean(), y.bn_mean()),
                (x.bn_var(), y.bn_var()),
            ];
            pairs
                .iter()
                .all(|(u, v)| u.iter().zip(v.iter()).all(|(p, q)| p.to_bits() == q.to_bits()))
                && x.epsilon().to_bits() == y.epsilon().to_bits()
        })
    }

    #[test]
    fn round_trip_is_bitwise() {
        let params = random_params(1);
        let bytes = encode_weights(&params, ValueWidth::F64, None);
        assert_eq!(bytes.len() % 4, 0);
        let (back, header) = decode_weights(&bytes).unwrap();
        assert!(same_bits(&params, &back));
        assert_eq!(header.width, ValueWidth::F64);
        assert_eq!(header.qformat, None);
    }

    #[test]
    fn narrow_round_trip_is_bitwise_at_f32() {
        let params = random_params(2).cast::<f32>();
        let q = QFormat::new(10).unwrap();
        let bytes = encode_weights(&params, ValueWidth::F32, Some(q));
        let (back, header) = decode_weights(&bytes).unwrap();
        assert_eq!(header.qformat, Some(q));
        assert!(same_bits(&params.cast::<f64>(), &back));
        assert_eq!(encode_weights(&back, ValueWidth::F32, Some(q)), bytes);
    }

    #[test]
    fn distinct_error_kinds() {
        let bytes = encode_weights(&random_params(3), ValueWidth::F32, None);

        let mut flipped = bytes.clone();
        flipped[100] ^= 0x01;
        assert!(matches!(decode_weights(&flipped), Err(BlobError::Checksum { .. })));

        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert_eq!(decode_weights(&magic).unwrap_err(), BlobError::BadMagic);

        let mut newer = bytes.clone();
        newer[4] = 2;
        assert_eq!(
            decode_weights(&newer).unwrap_err(),
            BlobError::UnsupportedVersion { major: 2, minor: 0 }
        );

        let mut width = bytes.clone();
        width[8] = 2;
        assert_eq!(decode_weights(&width).unwrap_err(), BlobError::Width(2));

        assert!(matches!(decode_weights(&bytes[..10]), Err(BlobError::Truncated(_))));
    }

    #[test]
    fn dimension_errors_survive_a_valid_checksum() {
        let mut bytes = encode_weights(&random_params(4), ValueWidth::F32, None);
        bytes.truncate(bytes.len() - 4);
        bytes[HEADER_LEN + 4] = 65;
        let crc = crc32fast::hash(&bytes);
        bytes.extend_from_slice(&crc.to_le_bytes());
        assert!(matches!(decode_weights(&bytes), Err(BlobError::Dimension(_))));
    }

    #[test]
    fn every_single_byte_corruption_is_rejected() {
        let bytes = encode_weights(&random_params(5), ValueWidth::F32, None);
        for i in (0..bytes.len()).step_by(97).chain(bytes.len() - 4..bytes.len()) {
            let mut bad = bytes.clone();
            bad[i] = bad[i].wrapping_add(1);
            assert!(decode_weights(&bad).is_err(), "byte {i}");
        }
    }

    #[test]
    fn words_round_trip() {
        let bytes: Vec<u8> = (0..10).collect();
        let words = to_words(&bytes);
        assert_eq!(words.len(), 3);
        assert_eq!(&from_words(&words)[..10], &bytes[..]);
    }
}

//! Word-level emulation of the core's two-mode stream interface.
//!
//! In weight-initialization mode the core consumes a weight blob as 32-bit
//! words and answers with a nonzero acknowledgement. In feature-extraction
//! mode it consumes a point count followed by three words per point and
//! emits [`FEATURE_DIM`] words.
//!
//! Word encoding depends on [`StreamMode`]: IEEE `f32` bit patterns in
//! float mode, two's-complement raw fixed-point words in quantized mode.

use crate::data::blob::{decode_weights, from_words};
use crate::error::{Error, Result};
use crate::fixedpoint::{quantize, QFormat, QuantizedPointNet, SaturationStats};
use crate::geometry::PointCloud;
use crate::pointnet::{global_feature, GlobalFeature, PointNetParams, FEATURE_DIM};
use crate::scalar::Real;

pub const ACK: u32 = 0x0000_0001;

/// Widest fixed-point format whose words fit the 32-bit stream.
pub const MAX_STREAM_HALF_WIDTH: u32 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamMode {
    Float,
    Quantized(QFormat),
}

impl StreamMode {
    fn check(self) -> Result<Self> {
        match self {
            Self::Quantized(f) if f.half_width() > MAX_STREAM_HALF_WIDTH => Err(Error::Protocol(format!(
                "{f} does not fit a 32-bit stream word"
            ))),
            m => Ok(m),
        }
    }
}

enum Engine {
    Float(PointNetParams<f32>),
    Quantized(QuantizedPointNet),
}

/// The core after a successful weight load.
pub struct PointNetCore {
    engine: Engine,
}

impl PointNetCore {
    /// Weight-initialization mode. Returns the core and its acknowledgement
    /// word; a malformed blob fails before any acknowledgement.
    pub fn load_weights(blob_words: &[u32], mode: StreamMode) -> Result<(Self, u32)> {
        let mode = mode.check()?;
        let (params, _) = decode_weights(&from_words(blob_words))
            .map_err(|e| Error::Protocol(format!("weight stream rejected: {e}")))?;
        let engine = match mode {
            StreamMode::Float => Engine::Float(params.cast::<f32>()),
            StreamMode::Quantized(f) => Engine::Quantized(QuantizedPointNet::new(&params, f)),
        };
        Ok((Self { engine }, ACK))
    }

    /// Feature-extraction mode.
    pub fn extract(&self, point_words: &[u32]) -> Result<Vec<u32>> {
        let (&count, body) = point_words
            .split_first()
            .ok_or_else(|| Error::Protocol("empty point stream".into()))?;
        let n = count as usize;
        if n == 0 || body.len() != 3 * n {
            return Err(Error::Protocol(format!(
                "point stream declares {n} points but carries {} words",
                body.len()
            )));
        }
        match &self.engine {
            Engine::Float(params) => {
                let points: Vec<[f32; 3]> = body
                    .chunks_exact(3)
                    .map(|c| [f32::from_bits(c[0]), f32::from_bits(c[1]), f32::from_bits(c[2])])
                    .collect();
                let cloud = PointCloud::from_rows(&points).map_err(|e| Error::Protocol(e.to_string()))?;
                let phi = global_feature(params, &cloud)?;
                Ok(phi.values().iter().map(|v| v.to_bits()).collect())
            }
            Engine::Quantized(net) => {
                let points = body
                    .chunks_exact(3)
                    .map(|c| [c[0] as i32 as i64, c[1] as i32 as i64, c[2] as i32 as i64]);
                let phi = net.global_feature_raw(points, &mut SaturationStats::default());
                Ok(phi.raw.iter().map(|r| *r as i32 as u32).collect())
            }
        }
    }
}

/// Host side: a point count followed by three words per point.
pub fn encode_points<T: Real>(cloud: &PointCloud<T>, mode: StreamMode) -> Result<Vec<u32>> {
    let mode = mode.check()?;
    let mut words = Vec::with_capacity(1 + 3 * cloud.len());
    words.push(cloud.len() as u32);
    for p in cloud.iter() {
        for v in p.iter() {
            words.push(match mode {
                StreamMode::Float => (v.as_f64() as f32).to_bits(),
                StreamMode::Quantized(f) => quantize(v.as_f64(), f)?.raw() as i32 as u32,
            });
        }
    }
    Ok(words)
}

/// Host side: interprets the emitted feature words.
pub fn decode_feature(words: &[u32], mode: StreamMode) -> Result<GlobalFeature<f64>> {
    if words.len() != FEATURE_DIM {
        return Err(Error::Protocol(format!("{} feature words, expected {FEATURE_DIM}", words.len())));
    }
    let values = words
        .iter()
        .map(|w| match mode {
            StreamMode::Float => f32::from_bits(*w) as f64,
            StreamMode::Quantized(f) => *w as i32 as f64 * f.ulp(),
        })
        .collect();
    Ok(GlobalFeature::new(values))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtocolTrace {
    pub ack: u32,
    pub feature_words: Vec<u32>,
}

/// Runs both protocol phases back to back.
pub fn stream_protocol_emulate(blob_words: &[u32], point_words: &[u32], mode: StreamMode) -> Result<ProtocolTrace> {
    let (core, ack) = PointNetCore::load_weights(blob_words, mode)?;
    Ok(ProtocolTrace {
        ack,
        feature_words: core.extract(point_words)?,
    })
}

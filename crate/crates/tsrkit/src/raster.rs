//! Dense multi-channel rasters and their binary file format.
//!
//! A [`RasterMap`] is a `height x width x channels` grid of finite values,
//! stored row-major with the channel as the fastest-varying index. The on-disk
//! format ("TCN1") is:
//!
//! ```text
//! bytes 0..4   magic b"TCN1"
//! bytes 4..16  height, width, channels as little-endian u32
//! rest         height*width*channels f32 values, little endian,
//!              row-major, channel-minor
//! ```

use std::fs;
use std::path::Path;

use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"TCN1";

/// Dense `height x width x channels` raster of finite f64 values.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterMap {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl RasterMap {
    /// All-zero raster of the given shape.
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        RasterMap {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    /// Builds a raster from a row-major, channel-minor buffer.
    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Format(format!(
                "raster buffer has {} values, expected {}x{}x{} = {}",
                data.len(),
                height,
                width,
                channels,
                height * width * channels
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Format(format!("raster contains non-finite value {v}")));
        }
        Ok(RasterMap { height, width, channels, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn idx(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[self.idx(y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, value: f64) {
        let i = self.idx(y, x, c);
        self.data[i] = value;
    }

    #[inline]
    pub fn add(&mut self, y: usize, x: usize, c: usize, value: f64) {
        let i = self.idx(y, x, c);
        self.data[i] += value;
    }

    /// Nearest-integer lookup at a real-valued position, clamping the rounded
    /// index to the raster border.
    pub fn sample_nearest(&self, y: f64, x: f64, c: usize) -> f64 {
        let yi = (y.round() as i64).clamp(0, self.height as i64 - 1) as usize;
        let xi = (x.round() as i64).clamp(0, self.width as i64 - 1) as usize;
        self.get(yi, xi, c)
    }

    /// Stride-decimates by `factor`: output pixel (j, i) takes the input value
    /// at (j*factor, i*factor). Output shape is the ceiling of the input shape
    /// over `factor`. No averaging is performed, so exact values (peaks, index
    /// ramps) survive.
    pub fn downsample(&self, factor: usize) -> RasterMap {
        assert!(factor >= 1, "downsample factor must be >= 1");
        let oh = self.height.div_ceil(factor);
        let ow = self.width.div_ceil(factor);
        let mut out = RasterMap::zeros(oh, ow, self.channels);
        for j in 0..oh {
            for i in 0..ow {
                for c in 0..self.channels {
                    out.set(j, i, c, self.get(j * factor, i * factor, c));
                }
            }
        }
        out
    }

    /// Serializes to the TCN1 byte format (f32 payload).
    pub fn to_tcn_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.data.len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.channels as u32).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out
    }

    /// Parses the TCN1 byte format, rejecting bad magic, truncated payloads
    /// and non-finite values.
    pub fn from_tcn_bytes(bytes: &[u8]) -> Result<RasterMap> {
        if bytes.len() < 16 {
            return Err(Error::Format("raster file shorter than the 16-byte header".into()));
        }
        if &bytes[0..4] != MAGIC {
            return Err(Error::Format(format!(
                "bad raster magic {:?}, expected {:?}",
                &bytes[0..4],
                MAGIC
            )));
        }
        let header = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
        let (height, width, channels) = (header(4), header(8), header(12));
        let count = height * width * channels;
        if bytes.len() != 16 + count * 4 {
            return Err(Error::Format(format!(
                "raster payload is {} bytes, expected {} for {}x{}x{}",
                bytes.len() - 16,
                count * 4,
                height,
                width,
                channels
            )));
        }
        let mut data = Vec::with_capacity(count);
        for i in 0..count {
            let off = 16 + i * 4;
            let v = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as f64;
            if !v.is_finite() {
                return Err(Error::Format(format!("raster value #{i} is non-finite")));
            }
            data.push(v);
        }
        Ok(RasterMap { height, width, channels, data })
    }

    pub fn save_tcn<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        crate::bundle::write_atomic(path.as_ref(), &self.to_tcn_bytes())
    }

    pub fn load_tcn<P: AsRef<Path>>(path: P) -> Result<RasterMap> {
        let bytes = fs::read(path.as_ref()).map_err(|e| {
            Error::Format(format!("cannot read raster {}: {e}", path.as_ref().display()))
        })?;
        Self::from_tcn_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tcn_round_trip_preserves_shape_and_values() {
        let mut m = RasterMap::zeros(3, 5, 2);
        m.set(2, 4, 1, -1.25);
        m.set(0, 0, 0, 7.5);
        let back = RasterMap::from_tcn_bytes(&m.to_tcn_bytes()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn tcn_rejects_bad_magic_and_truncation() {
        let mut bytes = RasterMap::zeros(2, 2, 1).to_tcn_bytes();
        bytes[0] = b'X';
        assert!(matches!(RasterMap::from_tcn_bytes(&bytes), Err(Error::Format(_))));

        let bytes = RasterMap::zeros(2, 2, 1).to_tcn_bytes();
        assert!(matches!(
            RasterMap::from_tcn_bytes(&bytes[..bytes.len() - 1]),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn downsample_takes_stride_samples_with_ceil_shape() {
        // 5x5 input, factor 2: output 3x3 sampling rows/cols 0, 2, 4.
        let mut m = RasterMap::zeros(5, 5, 1);
        for y in 0..5 {
            for x in 0..5 {
                m.set(y, x, 0, (10 * y + x) as f64);
            }
        }
        let d = m.downsample(2);
        assert_eq!((d.height(), d.width()), (3, 3));
        assert_eq!(d.get(1, 2, 0), 24.0);
        assert_eq!(d.get(2, 0, 0), 40.0);
    }

    #[test]
    fn sample_nearest_rounds_and_clamps() {
        let mut m = RasterMap::zeros(4, 4, 1);
        m.set(2, 3, 0, 9.0);
        m.set(0, 0, 0, 5.0);
        assert_eq!(m.sample_nearest(1.6, 2.5, 0), 9.0);
        assert_eq!(m.sample_nearest(-3.0, -0.4, 0), 5.0);
        assert_eq!(m.sample_nearest(7.0, 3.2, 0), m.get(3, 3, 0));
    }
}

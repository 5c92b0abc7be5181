//! Watermark keys and their on-disk form.

use std::path::Path;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::bits::BitString;
use crate::config::watermark_bit_length;
use crate::error::{Error, Result};
use crate::tensor::Shape;

/// Gaussian-Shading key: stream-cipher key material, replication divisors
/// and the payload it carries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WatermarkKey {
    pub cipher_key: [u8; 32],
    pub nonce: [u8; 12],
    pub f_c: usize,
    pub f_hw: usize,
    pub payload: BitString,
}

impl WatermarkKey {
    /// Payload length this key implies for a latent of `shape`.
    pub fn bit_length(&self, shape: Shape) -> Result<usize> {
        watermark_bit_length(
            shape.channels,
            shape.height,
            shape.width,
            self.f_c,
            self.f_hw,
        )
    }

    /// Errors unless the factors divide `shape` and the payload has the implied length.
    pub fn check_latent(&self, shape: Shape) -> Result<()> {
        let len = self.bit_length(shape)?;
        if len != self.payload.len() {
            return Err(Error::invalid(format!(
                "latent {shape} with f_c={}, f_hw={} carries {len} bits, payload has {}",
                self.f_c,
                self.f_hw,
                self.payload.len()
            )));
        }
        Ok(())
    }
}

/// Tree-Ring key: one ring-constant Fourier value per integer radius below
/// `radius`, written into the centered spectrum of one latent channel.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeRingKey {
    radius: usize,
    seed: u64,
    threshold: f64,
    height: usize,
    width: usize,
    channel: usize,
    ring_values: Vec<Complex64>,
    /// Centered-spectrum coordinates `(row, col, ring)`.
    mask: Vec<(usize, usize, usize)>,
}

impl TreeRingKey {
    pub fn new(
        radius: usize,
        seed: u64,
        threshold: f64,
        height: usize,
        width: usize,
        ring_values: Vec<Complex64>,
    ) -> Result<Self> {
        if radius == 0 {
            return Err(Error::invalid("ring radius must be at least 1"));
        }
        if 2 * radius > height.min(width) {
            return Err(Error::invalid(format!(
                "radius {radius} does not fit a {height}x{width} grid"
            )));
        }
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::invalid(format!(
                "threshold {threshold} outside (0,1)"
            )));
        }
        if ring_values.len() != radius {
            return Err(Error::invalid(format!(
                "{} ring values for radius {radius}",
                ring_values.len()
            )));
        }
        if ring_values
            .iter()
            .any(|v| !v.re.is_finite() || !v.im.is_finite())
        {
            return Err(Error::invalid("ring values must be finite"));
        }
        let mask = ring_mask(height, width, radius);
        Ok(Self {
            radius,
            seed,
            threshold,
            height,
            width,
            channel: 0,
            ring_values,
            mask,
        })
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn with_threshold(mut self, threshold: f64) -> Result<Self> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::invalid(format!(
                "threshold {threshold} outside (0,1)"
            )));
        }
        self.threshold = threshold;
        Ok(self)
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Latent channel that carries the rings.
    pub fn channel(&self) -> usize {
        self.channel
    }

    pub fn ring_values(&self) -> &[Complex64] {
        &self.ring_values
    }

    pub fn mask(&self) -> &[(usize, usize, usize)] {
        &self.mask
    }

    /// Key value `k*` at a mask coordinate with the given ring index.
    pub fn value_for_ring(&self, ring: usize) -> Complex64 {
        self.ring_values[ring]
    }

    pub fn check_latent(&self, shape: Shape) -> Result<()> {
        if (shape.height, shape.width) != (self.height, self.width)
            || shape.channels <= self.channel
        {
            return Err(Error::invalid(format!(
                "tree-ring key for a {}x{} grid does not fit latent {shape}",
                self.height, self.width
            )));
        }
        Ok(())
    }

    const MAGIC: &'static [u8; 4] = b"IMTR";
    const VERSION: u32 = 1;

    /// Little-endian binary form: magic, version, radius, seed, threshold,
    /// grid height and width, ring count, then `(re, im)` f64 pairs.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(40 + 16 * self.ring_values.len());
        out.extend_from_slice(Self::MAGIC);
        out.extend_from_slice(&Self::VERSION.to_le_bytes());
        out.extend_from_slice(&(self.radius as u32).to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&self.threshold.to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.ring_values.len() as u32).to_le_bytes());
        out.extend_from_slice(&ring_values_to_le(&self.ring_values));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = bytes;
        let mut take = |n: usize| -> Result<&[u8]> {
            if cur.len() < n {
                return Err(Error::invalid("truncated tree-ring key"));
            }
            let (head, tail) = cur.split_at(n);
            cur = tail;
            Ok(head)
        };
        if take(4)? != Self::MAGIC {
            return Err(Error::invalid("not a tree-ring key"));
        }
        let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().unwrap());
        let version = u32_at(take(4)?);
        if version != Self::VERSION {
            return Err(Error::invalid(format!(
                "unsupported tree-ring key version {version}"
            )));
        }
        let radius = u32_at(take(4)?) as usize;
        let seed = u64::from_le_bytes(take(8)?.try_into().unwrap());
        let threshold = f64::from_le_bytes(take(8)?.try_into().unwrap());
        let height = u32_at(take(4)?) as usize;
        let width = u32_at(take(4)?) as usize;
        let n = u32_at(take(4)?) as usize;
        let values = ring_values_from_le(take(16 * n)?)?;
        Self::new(radius, seed, threshold, height, width, values)
    }
}

/// Coordinates of the centered spectrum whose rounded distance to the DC
/// bin is below `radius`, with their ring index.
pub fn ring_mask(height: usize, width: usize, radius: usize) -> Vec<(usize, usize, usize)> {
    let (cy, cx) = ((height / 2) as f64, (width / 2) as f64);
    let mut mask = Vec::new();
    for y in 0..height {
        for x in 0..width {
            let d = ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)).sqrt();
            let ring = d.round() as usize;
            if ring < radius {
                mask.push((y, x, ring));
            }
        }
    }
    mask
}

fn ring_values_to_le(values: &[Complex64]) -> Vec<u8> {
    values
        .iter()
        .flat_map(|v| v.re.to_le_bytes().into_iter().chain(v.im.to_le_bytes()))
        .collect()
}

fn ring_values_from_le(bytes: &[u8]) -> Result<Vec<Complex64>> {
    if !bytes.len().is_multiple_of(16) {
        return Err(Error::invalid(
            "ring value bytes must be (re, im) f64 pairs",
        ));
    }
    Ok(bytes
        .chunks_exact(16)
        .map(|c| {
            Complex64::new(
                f64::from_le_bytes(c[..8].try_into().unwrap()),
                f64::from_le_bytes(c[8..].try_into().unwrap()),
            )
        })
        .collect())
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum KeyRecord {
    Gshade {
        cipher_key: String,
        nonce: String,
        f_c: usize,
        f_hw: usize,
        payload_bits: usize,
        payload: String,
    },
    Treering {
        radius: usize,
        seed: u64,
        threshold: f64,
        height: usize,
        width: usize,
        /// Hex of little-endian `(re, im)` f64 pairs.
        ring_values: String,
    },
}

/// Any key that can live in a standalone key file.
#[derive(Debug, Clone, PartialEq)]
pub enum KeyFile {
    GaussianShading(WatermarkKey),
    TreeRing(TreeRingKey),
}

fn hex_array<const N: usize>(s: &str, what: &str) -> Result<[u8; N]> {
    let bytes = hex::decode(s.trim()).map_err(|e| Error::invalid(format!("{what}: {e}")))?;
    bytes
        .try_into()
        .map_err(|b: Vec<u8>| Error::invalid(format!("{what} must be {N} bytes, got {}", b.len())))
}

impl KeyFile {
    pub fn to_toml_string(&self) -> Result<String> {
        let record = match self {
            KeyFile::GaussianShading(k) => KeyRecord::Gshade {
                cipher_key: hex::encode(k.cipher_key),
                nonce: hex::encode(k.nonce),
                f_c: k.f_c,
                f_hw: k.f_hw,
                payload_bits: k.payload.len(),
                payload: k.payload.to_hex(),
            },
            KeyFile::TreeRing(k) => KeyRecord::Treering {
                radius: k.radius,
                seed: k.seed,
                threshold: k.threshold,
                height: k.height,
                width: k.width,
                ring_values: hex::encode(ring_values_to_le(&k.ring_values)),
            },
        };
        Ok(toml::to_string(&record)?)
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        match toml::from_str::<KeyRecord>(s)? {
            KeyRecord::Gshade {
                cipher_key,
                nonce,
                f_c,
                f_hw,
                payload_bits,
                payload,
            } => {
                if f_c == 0 || f_hw == 0 {
                    return Err(Error::invalid("replication factors must be positive"));
                }
                Ok(KeyFile::GaussianShading(WatermarkKey {
                    cipher_key: hex_array(&cipher_key, "cipher_key")?,
                    nonce: hex_array(&nonce, "nonce")?,
                    f_c,
                    f_hw,
                    payload: BitString::from_hex(&payload, payload_bits)?,
                }))
            }
            KeyRecord::Treering {
                radius,
                seed,
                threshold,
                height,
                width,
                ring_values,
            } => {
                let bytes = hex::decode(ring_values.trim())
                    .map_err(|e| Error::invalid(format!("ring_values: {e}")))?;
                Ok(KeyFile::TreeRing(TreeRingKey::new(
                    radius,
                    seed,
                    threshold,
                    height,
                    width,
                    ring_values_from_le(&bytes)?,
                )?))
            }
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path).map_err(|e| Error::io_at(path, e))?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?).map_err(|e| Error::io_at(path, e))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gs_key() -> WatermarkKey {
        WatermarkKey {
            cipher_key: [7; 32],
            nonce: [3; 12],
            f_c: 2,
            f_hw: 32,
            payload: BitString::parse_binary("10110011100011110000111110000011").unwrap(),
        }
    }

    fn tr_key() -> TreeRingKey {
        let values = (0..5)
            .map(|i| Complex64::new(i as f64 * 0.5 - 1.0, 0.0))
            .collect();
        TreeRingKey::new(5, 11, 0.9, 32, 32, values).unwrap()
    }

    #[test]
    fn gshade_key_file_round_trip() {
        let file = KeyFile::GaussianShading(gs_key());
        let text = file.to_toml_string().unwrap();
        assert!(text.contains("kind = \"gshade\""));
        assert_eq!(KeyFile::from_toml_str(&text).unwrap(), file);
    }

    #[test]
    fn treering_key_file_round_trip() {
        let file = KeyFile::TreeRing(tr_key());
        let text = file.to_toml_string().unwrap();
        assert_eq!(KeyFile::from_toml_str(&text).unwrap(), file);
    }

    #[test]
    fn treering_binary_round_trip() {
        let key = tr_key();
        let bytes = key.to_bytes();
        assert_eq!(&bytes[..4], b"IMTR");
        // first ring value, real part, little-endian
        assert_eq!(&bytes[40..48], &(-1.0f64).to_le_bytes());
        assert_eq!(TreeRingKey::from_bytes(&bytes).unwrap(), key);
        assert!(TreeRingKey::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn latent_checks() {
        let key = gs_key();
        assert!(key.check_latent(Shape::new(4, 128, 128)).is_ok());
        assert!(key.check_latent(Shape::new(4, 160, 160)).is_err());
        // three latent channels cannot host f_c = 2
        assert!(key.check_latent(Shape::new(3, 128, 128)).is_err());
        assert!(tr_key().check_latent(Shape::new(4, 32, 32)).is_ok());
        assert!(tr_key().check_latent(Shape::new(4, 64, 64)).is_err());
    }

    #[test]
    fn bad_key_material_rejected() {
        let text = KeyFile::GaussianShading(gs_key())
            .to_toml_string()
            .unwrap()
            .replace(&hex::encode([3u8; 12]), "0303");
        assert!(KeyFile::from_toml_str(&text).is_err());
        assert!(TreeRingKey::new(0, 0, 0.9, 32, 32, vec![]).is_err());
        assert!(TreeRingKey::new(17, 0, 0.9, 32, 32, vec![Complex64::new(0.0, 0.0); 17]).is_err());
        assert!(TreeRingKey::new(1, 0, 1.0, 32, 32, vec![Complex64::new(0.0, 0.0)]).is_err());
    }

    #[test]
    fn radius_one_mask_is_center() {
        assert_eq!(ring_mask(64, 64, 1), vec![(32, 32, 0)]);
    }
}

//! Gaussian Shading: payload bits carried by the sign of the initial latent noise.
//!
//! The payload is tiled over the latent grid, XOR-encrypted with a ChaCha20
//! keystream (one keystream bit per cell, cells in row-major channel-major
//! order, low bit of each keystream byte first) and each cell is then drawn
//! from the half of the standard normal selected by its bit.

use chacha20::cipher::StreamCipher;
use chacha20::{ChaCha20, KeyIvInit};
use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::bits::BitString;
use crate::error::{Error, Result};
use crate::keys::WatermarkKey;
use crate::stats::{normal_cdf, normal_ppf};
use crate::tensor::{LatentTensor, Shape};

/// Payload bits laid out over a latent grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiffusedBits {
    grid: Vec<bool>,
    shape: Shape,
    source: BitString,
}

impl DiffusedBits {
    pub fn grid(&self) -> &[bool] {
        &self.grid
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn source(&self) -> &BitString {
        &self.source
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> bool {
        self.grid[self.shape.index(c, y, x)]
    }
}

/// Index of the payload bit that owns cell `(c, y, x)`.
fn block_of(shape: Shape, f_c: usize, f_hw: usize, c: usize, y: usize, x: usize) -> usize {
    let (bh, bw) = (shape.height / f_hw, shape.width / f_hw);
    ((c / f_c) * bh + y / f_hw) * bw + x / f_hw
}

/// Tiles each payload bit over an `f_c x f_hw x f_hw` block of the grid.
pub fn gs_diffuse(bits: &BitString, key: &WatermarkKey, shape: Shape) -> Result<DiffusedBits> {
    let len = key.bit_length(shape)?;
    if bits.len() != len {
        return Err(Error::invalid(format!(
            "latent {shape} carries {len} bits, got {}",
            bits.len()
        )));
    }
    let mut grid = Vec::with_capacity(shape.len());
    for c in 0..shape.channels {
        for y in 0..shape.height {
            for x in 0..shape.width {
                grid.push(bits.get(block_of(shape, key.f_c, key.f_hw, c, y, x)));
            }
        }
    }
    Ok(DiffusedBits {
        grid,
        shape,
        source: bits.clone(),
    })
}

/// First `n` keystream bits for `key`, block counter starting at zero.
pub fn keystream_bits(key: &WatermarkKey, n: usize) -> Vec<bool> {
    let mut bytes = vec![0u8; n.div_ceil(8)];
    let mut cipher = ChaCha20::new(&key.cipher_key.into(), &key.nonce.into());
    cipher.apply_keystream(&mut bytes);
    (0..n).map(|i| (bytes[i / 8] >> (i % 8)) & 1 == 1).collect()
}

/// XORs the grid with the keystream. Applying it twice restores the input.
pub fn gs_encrypt(diffused: &DiffusedBits, key: &WatermarkKey) -> DiffusedBits {
    let ks = keystream_bits(key, diffused.grid.len());
    DiffusedBits {
        grid: diffused.grid.iter().zip(ks).map(|(&b, k)| b ^ k).collect(),
        shape: diffused.shape,
        source: diffused.source.clone(),
    }
}

/// `ppf((bit + u) / 2)`: a draw from the half-normal selected by `bit`.
pub fn shade_value(bit: bool, u: f64) -> f64 {
    normal_ppf((f64::from(u8::from(bit)) + u) / 2.0)
}

/// Samples the watermarked noise with a fresh generator seeded by `seed`.
pub fn gs_sample_noise(m: &DiffusedBits, seed: u64) -> LatentTensor {
    gs_sample_noise_with(m, &mut ChaCha20Rng::seed_from_u64(seed))
}

/// As [`gs_sample_noise`] with a caller-owned generator. `u` is drawn from the
/// open unit interval so no cell lands on an infinite quantile.
pub fn gs_sample_noise_with(m: &DiffusedBits, rng: &mut impl Rng) -> LatentTensor {
    let data = m
        .grid
        .iter()
        .map(|&bit| shade_value(bit, rng.sample(Open01)))
        .collect();
    LatentTensor::from_vec(m.shape, data).expect("grid length matches its shape")
}

/// `clamp(floor(2 * Phi(z)), 0, 1)`; zero reads as 1.
pub fn gs_extract_cell(z: f64) -> bool {
    (2.0 * normal_cdf(z)).floor().clamp(0.0, 1.0) == 1.0
}

/// Strict majority: ties read as 0.
pub fn gs_vote(copies: &[bool]) -> Result<bool> {
    if copies.is_empty() {
        return Err(Error::invalid("cannot vote over zero copies"));
    }
    let ones = copies.iter().filter(|&&b| b).count();
    Ok(2 * ones > copies.len())
}

/// Per payload bit, the number of decrypted cells reading 1 and the block size.
pub fn gs_vote_counts(z_inv: &LatentTensor, key: &WatermarkKey) -> Result<(Vec<usize>, usize)> {
    let shape = z_inv.shape();
    let len = key.bit_length(shape)?;
    let ks = keystream_bits(key, shape.len());
    let mut ones = vec![0usize; len];
    let data = z_inv.data();
    for c in 0..shape.channels {
        for y in 0..shape.height {
            for x in 0..shape.width {
                let i = shape.index(c, y, x);
                let z = data[i];
                if !z.is_finite() {
                    return Err(Error::numeric(None, "inverted latent is not finite"));
                }
                if gs_extract_cell(z) ^ ks[i] {
                    ones[block_of(shape, key.f_c, key.f_hw, c, y, x)] += 1;
                }
            }
        }
    }
    Ok((ones, key.f_c * key.f_hw * key.f_hw))
}

/// Reads cells, decrypts and majority-votes each block back into a payload.
pub fn gs_extract(z_inv: &LatentTensor, key: &WatermarkKey) -> Result<BitString> {
    let (ones, copies) = gs_vote_counts(z_inv, key)?;
    Ok(ones.into_iter().map(|n| 2 * n > copies).collect())
}

/// Diffuse, encrypt and sample in one go.
pub fn gs_watermark_noise(key: &WatermarkKey, shape: Shape, seed: u64) -> Result<LatentTensor> {
    let diffused = gs_diffuse(&key.payload, key, shape)?;
    Ok(gs_sample_noise(&gs_encrypt(&diffused, key), seed))
}

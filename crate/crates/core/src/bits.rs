use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};

/// Ordered sequence of payload bits.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct BitString {
    bits: Vec<bool>,
}

impl BitString {
    pub fn new(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            bits: vec![false; len],
        }
    }

    pub fn random(len: usize, rng: &mut impl Rng) -> Self {
        Self {
            bits: (0..len).map(|_| rng.random::<bool>()).collect(),
        }
    }

    /// Parses a string of `0`/`1` characters.
    pub fn parse_binary(s: &str) -> Result<Self> {
        s.chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::invalid(format!("'{other}' is not a bit"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Self::new)
    }

    /// Packs bits MSB-first into bytes and hex-encodes them.
    pub fn to_hex(&self) -> String {
        let bytes: Vec<u8> = self
            .bits
            .chunks(8)
            .map(|chunk| {
                chunk
                    .iter()
                    .enumerate()
                    .fold(0u8, |acc, (i, &b)| acc | (u8::from(b) << (7 - i)))
            })
            .collect();
        hex::encode(bytes)
    }

    /// Inverse of [`BitString::to_hex`]; `len` selects how many leading bits are kept.
    pub fn from_hex(s: &str, len: usize) -> Result<Self> {
        let bytes =
            hex::decode(s.trim()).map_err(|e| Error::invalid(format!("payload hex: {e}")))?;
        if bytes.len() != len.div_ceil(8) {
            return Err(Error::invalid(format!(
                "payload hex holds {} bytes, {len} bits need {}",
                bytes.len(),
                len.div_ceil(8)
            )));
        }
        Ok(Self {
            bits: (0..len)
                .map(|i| bytes[i / 8] >> (7 - i % 8) & 1 == 1)
                .collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn complement(&self) -> Self {
        Self {
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }
}

impl fmt::Display for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.bits {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromIterator<bool> for BitString {
    fn from_iter<I: IntoIterator<Item = bool>>(iter: I) -> Self {
        Self::new(iter.into_iter().collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn binary_parse_and_display() {
        let b = BitString::parse_binary("10110").unwrap();
        assert_eq!(b.to_string(), "10110");
        assert!(BitString::parse_binary("10a").is_err());
        assert_eq!(b.to_hex(), "b0");
    }

    #[test]
    fn hex_length_checked() {
        assert!(BitString::from_hex("ff", 9).is_err());
        assert!(BitString::from_hex("zz", 8).is_err());
    }

    proptest! {
        #[test]
        fn hex_round_trip(bits in proptest::collection::vec(any::<bool>(), 0..100)) {
            let b = BitString::new(bits);
            prop_assert_eq!(BitString::from_hex(&b.to_hex(), b.len()).unwrap(), b);
        }
    }
}

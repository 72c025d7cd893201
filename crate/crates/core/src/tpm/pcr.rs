// SPDX-License-Identifier: Apache-2.0

use std::fmt;

use super::TpmError;
use crate::codec::{Canonical, CodecError, Decoder, Encoder};
use crate::crypto::{hash, Digest32};

pub const PCR_COUNT: usize = 24;

/// Bitmap over the 24 registers, encoded as 3 bytes.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct PcrSelection(u32);

impl PcrSelection {
    pub const EMPTY: PcrSelection = PcrSelection(0);
    pub const ALL: PcrSelection = PcrSelection((1 << PCR_COUNT) - 1);

    pub fn from_indices(indices: impl IntoIterator<Item = usize>) -> Result<Self, TpmError> {
        let mut bits = 0u32;
        for i in indices {
            if i >= PCR_COUNT {
                return Err(TpmError::InvalidPcrIndex(i));
            }
            bits |= 1 << i;
        }
        Ok(PcrSelection(bits))
    }

    pub fn range(range: std::ops::Range<usize>) -> Self {
        Self::from_indices(range).expect("range within bank")
    }

    pub fn bits(&self) -> u32 {
        self.0
    }

    pub fn from_bits(bits: u32) -> Result<Self, TpmError> {
        if bits & !Self::ALL.0 != 0 {
            return Err(TpmError::InvalidPcrIndex(32 - bits.leading_zeros() as usize - 1));
        }
        Ok(PcrSelection(bits))
    }

    pub fn contains(&self, index: usize) -> bool {
        index < PCR_COUNT && self.0 & (1 << index) != 0
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn len(&self) -> usize {
        self.0.count_ones() as usize
    }

    /// Ascending register indices.
    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..PCR_COUNT).filter(move |i| self.contains(*i))
    }

    pub fn to_bytes3(&self) -> [u8; 3] {
        let b = self.0.to_le_bytes();
        [b[0], b[1], b[2]]
    }

    pub fn from_bytes3(b: [u8; 3]) -> Self {
        PcrSelection(u32::from_le_bytes([b[0], b[1], b[2], 0]))
    }
}

impl fmt::Debug for PcrSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.indices()).finish()
    }
}

impl Canonical for PcrSelection {
    fn encode(&self, enc: &mut Encoder) {
        enc.fixed(&self.to_bytes3());
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(Self::from_bytes3(dec.fixed()?))
    }
}

/// 24 SHA-256 registers, all zero at reset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PcrBank {
    registers: [Digest32; PCR_COUNT],
    extend_counts: [u64; PCR_COUNT],
}

impl Default for PcrBank {
    fn default() -> Self {
        Self {
            registers: [Digest32::ZERO; PCR_COUNT],
            extend_counts: [0; PCR_COUNT],
        }
    }
}

impl PcrBank {
    pub fn new() -> Self {
        Self::default()
    }

    /// `PCR[i] <- H(PCR[i] || digest)`.
    pub fn extend(&mut self, index: usize, digest: &Digest32) -> Result<Digest32, TpmError> {
        if index >= PCR_COUNT {
            return Err(TpmError::InvalidPcrIndex(index));
        }
        let mut buf = [0u8; 64];
        buf[..32].copy_from_slice(self.registers[index].as_bytes());
        buf[32..].copy_from_slice(digest.as_bytes());
        self.registers[index] = hash(&buf);
        self.extend_counts[index] += 1;
        Ok(self.registers[index])
    }

    pub fn read(&self, index: usize) -> Result<Digest32, TpmError> {
        self.registers.get(index).copied().ok_or(TpmError::InvalidPcrIndex(index))
    }

    pub fn extend_count(&self, index: usize) -> u64 {
        self.extend_counts.get(index).copied().unwrap_or(0)
    }

    pub fn registers(&self) -> &[Digest32; PCR_COUNT] {
        &self.registers
    }

    /// Digest over the selected registers in ascending index order.
    pub fn composite(&self, selection: PcrSelection) -> Digest32 {
        composite_digest(selection.indices().map(|i| &self.registers[i]))
    }

    pub fn reset(&mut self) {
        *self = Self::default();
    }
}

pub fn composite_digest<'a>(registers: impl Iterator<Item = &'a Digest32>) -> Digest32 {
    let mut buf = Vec::with_capacity(PCR_COUNT * 32);
    for r in registers {
        buf.extend_from_slice(r.as_bytes());
    }
    hash(&buf)
}

impl Canonical for PcrBank {
    fn encode(&self, enc: &mut Encoder) {
        for (r, c) in self.registers.iter().zip(&self.extend_counts) {
            enc.value(r).u64(*c);
        }
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        let mut bank = PcrBank::default();
        for i in 0..PCR_COUNT {
            bank.registers[i] = dec.value()?;
            bank.extend_counts[i] = dec.u64()?;
        }
        Ok(bank)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extend_zero_register_matches_reference_hash() {
        // sha256(0x00 * 32 || bytes(range(32))) computed with Python hashlib.
        let d = Digest32(core::array::from_fn(|i| i as u8));
        let mut bank = PcrBank::new();
        let v = bank.extend(0, &d).unwrap();
        assert_eq!(v.to_hex(), "bb2275c49f28ad52cae6d55e34a974a58c7a3ba26f976e8ecbbe7a536918dc73");
        assert_eq!(bank.extend_count(0), 1);
    }

    #[test]
    fn extend_order_matters() {
        let (a, b) = (hash(b"a"), hash(b"b"));
        let mut x = PcrBank::new();
        let mut y = PcrBank::new();
        x.extend(3, &a).unwrap();
        x.extend(3, &b).unwrap();
        y.extend(3, &b).unwrap();
        y.extend(3, &a).unwrap();
        assert_ne!(x.read(3).unwrap(), y.read(3).unwrap());
    }

    #[test]
    fn out_of_range_index() {
        let mut bank = PcrBank::new();
        assert_eq!(bank.extend(24, &Digest32::ZERO), Err(TpmError::InvalidPcrIndex(24)));
        assert!(PcrSelection::from_indices([24]).is_err());
    }

    #[test]
    fn selection_encoding() {
        let sel = PcrSelection::from_indices([0, 9, 23]).unwrap();
        assert_eq!(sel.to_bytes3(), [0x01, 0x02, 0x80]);
        assert_eq!(PcrSelection::from_bytes3(sel.to_bytes3()), sel);
        assert_eq!(sel.indices().collect::<Vec<_>>(), vec![0, 9, 23]);
        assert_eq!(PcrSelection::ALL.len(), 24);
    }

    #[test]
    fn composite_of_single_register_is_hash_of_it() {
        let mut bank = PcrBank::new();
        bank.extend(0, &hash(b"m")).unwrap();
        let sel = PcrSelection::from_indices([0]).unwrap();
        assert_eq!(bank.composite(sel), hash(bank.read(0).unwrap().as_bytes()));
    }

    #[test]
    fn reset_zeroes_everything() {
        let mut bank = PcrBank::new();
        bank.extend(5, &hash(b"x")).unwrap();
        bank.reset();
        assert_eq!(bank, PcrBank::new());
    }
}

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

/// Fixed-width bit vector, LSB first. Serializes as `{width, hex}`.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "HexRepr", try_from = "HexRepr")]
pub struct BitVec {
    width: usize,
    words: Vec<u64>,
}

#[derive(Serialize, Deserialize)]
struct HexRepr {
    width: usize,
    hex: String,
}

impl From<BitVec> for HexRepr {
    fn from(b: BitVec) -> Self {
        HexRepr {
            width: b.width,
            hex: b.to_hex(),
        }
    }
}

impl TryFrom<HexRepr> for BitVec {
    type Error = String;

    fn try_from(r: HexRepr) -> Result<Self, String> {
        BitVec::from_hex(r.width, &r.hex).ok_or_else(|| alloc::format!("bad {}-bit hex `{}`", r.width, r.hex))
    }
}

impl BitVec {
    pub fn zeros(width: usize) -> Self {
        assert!(width > 0, "BitVec width must be positive");
        BitVec {
            width,
            words: vec![0; width.div_ceil(64)],
        }
    }

    /// Low `width` bits of `value`.
    pub fn from_u64(width: usize, value: u64) -> Self {
        let mut v = Self::zeros(width);
        v.words[0] = value;
        v.mask_top();
        v
    }

    /// Two's complement encoding of `value`, truncated to `width` bits.
    pub fn from_i64(width: usize, value: i64) -> Self {
        let mut v = Self::zeros(width);
        for (i, w) in v.words.iter_mut().enumerate() {
            *w = if i == 0 {
                value as u64
            } else if value < 0 {
                u64::MAX
            } else {
                0
            };
        }
        v.mask_top();
        v
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        let mut v = Self::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            v.set(i, b);
        }
        v
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.width);
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }

    pub fn set(&mut self, i: usize, b: bool) {
        assert!(i < self.width);
        let m = 1u64 << (i % 64);
        if b {
            self.words[i / 64] |= m;
        } else {
            self.words[i / 64] &= !m;
        }
    }

    /// Low 64 bits, zero-extended.
    pub fn to_u64(&self) -> u64 {
        self.words[0]
    }

    /// Value as a signed two's complement number (width <= 64).
    pub fn to_i64(&self) -> i64 {
        assert!(self.width <= 64);
        let raw = self.words[0];
        if self.width == 64 {
            return raw as i64;
        }
        let shift = 64 - self.width;
        ((raw << shift) as i64) >> shift
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.width).map(move |i| self.get(i))
    }

    /// Concatenate, `self` in the low bits.
    pub fn concat(&self, high: &BitVec) -> BitVec {
        let mut out = BitVec::zeros(self.width + high.width);
        for (i, b) in self.iter().chain(high.iter()).enumerate() {
            out.set(i, b);
        }
        out
    }

    pub fn slice(&self, lo: usize, width: usize) -> BitVec {
        let mut out = BitVec::zeros(width);
        for i in 0..width {
            out.set(i, self.get(lo + i));
        }
        out
    }

    fn mask_top(&mut self) {
        let rem = self.width % 64;
        if rem != 0 {
            let last = self.words.len() - 1;
            self.words[last] &= (1u64 << rem) - 1;
        }
    }

    /// Lower-case hex, most significant digit first, zero padded to the width.
    pub fn to_hex(&self) -> alloc::string::String {
        use core::fmt::Write;
        let digits = self.width.div_ceil(4);
        let mut s = alloc::string::String::with_capacity(digits);
        for d in (0..digits).rev() {
            let mut nib = 0u8;
            for b in 0..4 {
                let i = d * 4 + b;
                if i < self.width && self.get(i) {
                    nib |= 1 << b;
                }
            }
            let _ = write!(s, "{:x}", nib);
        }
        s
    }

    pub fn from_hex(width: usize, hex: &str) -> Option<BitVec> {
        let mut v = BitVec::zeros(width);
        for (d, c) in hex.chars().rev().enumerate() {
            let nib = c.to_digit(16)?;
            for b in 0..4 {
                if nib >> b & 1 == 1 {
                    let i = d * 4 + b;
                    if i >= width {
                        return None;
                    }
                    v.set(i, true);
                }
            }
        }
        Some(v)
    }
}

impl fmt::Debug for BitVec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}'h{}", self.width, self.to_hex())
    }
}

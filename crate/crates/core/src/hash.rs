//! Bit-packed scene hashes.
//!
//! Layout (bit 0 is the most significant bit of the serialized hex):
//!
//! | bits        | content                                                   |
//! |-------------|-----------------------------------------------------------|
//! | 0..4        | sign presence: traffic_light, stop_sign, yield_sign, speed_limit |
//! | 4..7        | walker count                                              |
//! | 7 + 44(b-1) | bin `b` slice: 12 count fields in canonical sector order  |
//!
//! With binary count fields the eight same-direction sectors take 3 bits and
//! the four opposing/crossing sectors 5 bits, so a bin slice is 44 bits and
//! the full hash 183 bits. Each field is written most significant bit first.
//! The thermometer encoding replaces every count field with a unary field of
//! `capacity` bits.

use std::fmt;
use std::ops::Range;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::scene::{DistanceBin, SceneDescriptor, SectorLabel, SignKind, MAX_WALKERS};

pub const SIGN_BITS: usize = 4;
pub const WALKER_BITS: usize = 3;
const HEADER_BITS: usize = SIGN_BITS + WALKER_BITS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CountEncoding {
    /// Plain binary counts.
    #[default]
    Binary,
    /// Unary counts; Hamming distance equals the count difference.
    Thermometer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct HashLayout {
    encoding: CountEncoding,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FieldSpec {
    pub name: String,
    pub bin: Option<u8>,
    pub offset: usize,
    pub width: usize,
    pub capacity: u32,
}

impl HashLayout {
    pub const BINARY: HashLayout = HashLayout {
        encoding: CountEncoding::Binary,
    };
    pub const THERMOMETER: HashLayout = HashLayout {
        encoding: CountEncoding::Thermometer,
    };

    pub fn encoding(&self) -> CountEncoding {
        self.encoding
    }

    pub fn version(&self) -> &'static str {
        match self.encoding {
            CountEncoding::Binary => "rfm-hash-v1",
            CountEncoding::Thermometer => "rfm-hash-thermo-v1",
        }
    }

    pub fn from_version(tag: &str) -> Result<Self> {
        [Self::BINARY, Self::THERMOMETER]
            .into_iter()
            .find(|l| l.version() == tag)
            .ok_or_else(|| Error::input(format!("unknown hash layout `{tag}`")))
    }

    /// Largest count a sector field can hold.
    pub fn capacity(sector: SectorLabel) -> u32 {
        if sector.is_same_direction() {
            7
        } else {
            31
        }
    }

    pub fn field_width(&self, sector: SectorLabel) -> usize {
        match self.encoding {
            CountEncoding::Binary if sector.is_same_direction() => 3,
            CountEncoding::Binary => 5,
            CountEncoding::Thermometer => Self::capacity(sector) as usize,
        }
    }

    pub fn bin_bits(&self) -> usize {
        SectorLabel::ALL.iter().map(|&s| self.field_width(s)).sum()
    }

    pub fn total_bits(&self) -> usize {
        HEADER_BITS + DistanceBin::COUNT * self.bin_bits()
    }

    /// Bit range of one bin's sub-vector.
    pub fn bin_slice(&self, bin: DistanceBin) -> Range<usize> {
        let start = HEADER_BITS + bin.slot() * self.bin_bits();
        start..start + self.bin_bits()
    }

    pub fn field_offset(&self, bin: DistanceBin, sector: SectorLabel) -> usize {
        let within: usize = SectorLabel::ALL[..sector.slot()]
            .iter()
            .map(|&s| self.field_width(s))
            .sum();
        self.bin_slice(bin).start + within
    }

    pub fn fields(&self) -> Vec<FieldSpec> {
        let mut out: Vec<FieldSpec> = SignKind::ALL
            .iter()
            .map(|s| FieldSpec {
                name: format!("sign.{}", s.key()),
                bin: None,
                offset: s.index(),
                width: 1,
                capacity: 1,
            })
            .collect();
        out.push(FieldSpec {
            name: "walkers".into(),
            bin: None,
            offset: SIGN_BITS,
            width: WALKER_BITS,
            capacity: u32::from(MAX_WALKERS),
        });
        for bin in DistanceBin::ALL {
            for sector in SectorLabel::ALL {
                out.push(FieldSpec {
                    name: format!("{}.{}", bin.key(), sector.key()),
                    bin: Some(bin.index()),
                    offset: self.field_offset(bin, sector),
                    width: self.field_width(sector),
                    capacity: Self::capacity(sector),
                });
            }
        }
        out
    }

    /// Plain-text offset table.
    pub fn offset_table(&self) -> String {
        let mut s = format!(
            "# layout {} ({} bits, {} per bin)\n{:<34} {:>6} {:>5} {:>8}\n",
            self.version(),
            self.total_bits(),
            self.bin_bits(),
            "field",
            "offset",
            "width",
            "capacity"
        );
        for f in self.fields() {
            s.push_str(&format!(
                "{:<34} {:>6} {:>5} {:>8}\n",
                f.name, f.offset, f.width, f.capacity
            ));
        }
        s
    }
}

/// Fixed-length bit vector laid out by a [`HashLayout`].
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct SceneHash {
    layout: HashLayout,
    words: Vec<u64>,
}

impl fmt::Debug for SceneHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SceneHash({})", self.to_hex())
    }
}

impl SceneHash {
    fn zeroed(layout: HashLayout) -> Self {
        Self {
            layout,
            words: vec![0; layout.total_bits().div_ceil(64)],
        }
    }

    pub fn layout(&self) -> HashLayout {
        self.layout
    }

    pub fn len(&self) -> usize {
        self.layout.total_bits()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn bit(&self, pos: usize) -> bool {
        assert!(pos < self.len(), "bit {pos} out of range");
        self.words[pos / 64] >> (63 - pos % 64) & 1 == 1
    }

    fn set_bit(&mut self, pos: usize, value: bool) {
        let mask = 1u64 << (63 - pos % 64);
        if value {
            self.words[pos / 64] |= mask;
        } else {
            self.words[pos / 64] &= !mask;
        }
    }

    pub fn bits(&self) -> Vec<bool> {
        (0..self.len()).map(|p| self.bit(p)).collect()
    }

    pub fn from_bits(layout: HashLayout, bits: &[bool]) -> Result<Self> {
        if bits.len() != layout.total_bits() {
            return Err(Error::input(format!(
                "hash has {} bits, layout {} needs {}",
                bits.len(),
                layout.version(),
                layout.total_bits()
            )));
        }
        let mut h = Self::zeroed(layout);
        for (p, &b) in bits.iter().enumerate() {
            h.set_bit(p, b);
        }
        Ok(h)
    }

    /// Bits of `range` as a string of `0`/`1`.
    pub fn bit_string(&self, range: Range<usize>) -> String {
        range.map(|p| if self.bit(p) { '1' } else { '0' }).collect()
    }

    fn write_uint(&mut self, offset: usize, width: usize, value: u32) {
        for i in 0..width {
            let shift = width - 1 - i;
            self.set_bit(offset + i, (value >> shift) & 1 == 1);
        }
    }

    fn read_uint(&self, offset: usize, width: usize) -> u32 {
        (0..width).fold(0, |acc, i| acc << 1 | u32::from(self.bit(offset + i)))
    }

    fn write_count(&mut self, offset: usize, sector: SectorLabel, count: u32) {
        let width = self.layout.field_width(sector);
        let v = count.min(HashLayout::capacity(sector));
        match self.layout.encoding {
            CountEncoding::Binary => self.write_uint(offset, width, v),
            CountEncoding::Thermometer => {
                for i in 0..width {
                    self.set_bit(offset + i, (i as u32) < v);
                }
            }
        }
    }

    fn read_count(&self, offset: usize, sector: SectorLabel) -> u32 {
        let width = self.layout.field_width(sector);
        match self.layout.encoding {
            CountEncoding::Binary => self.read_uint(offset, width),
            CountEncoding::Thermometer => (0..width).filter(|&i| self.bit(offset + i)).count() as u32,
        }
    }

    /// `<version>:<hex>`, most significant bit first, zero padded to a
    /// whole number of nibbles.
    pub fn to_hex(&self) -> String {
        let nibbles = self.len().div_ceil(4);
        let mut s = String::with_capacity(self.layout.version().len() + 1 + nibbles);
        s.push_str(self.layout.version());
        s.push(':');
        for n in 0..nibbles {
            let word = self.words[n / 16];
            let v = (word >> (60 - 4 * (n % 16))) & 0xf;
            s.push(char::from_digit(v as u32, 16).expect("nibble"));
        }
        s
    }

    pub fn from_hex(s: &str) -> Result<Self> {
        let (tag, hex) = s
            .split_once(':')
            .ok_or_else(|| Error::input("hash string is missing its layout tag"))?;
        let layout = HashLayout::from_version(tag)?;
        let nibbles = layout.total_bits().div_ceil(4);
        if hex.len() != nibbles {
            return Err(Error::input(format!(
                "hash hex has {} digits, layout {} needs {nibbles}",
                hex.len(),
                layout.version()
            )));
        }
        let mut h = Self::zeroed(layout);
        for (n, c) in hex.chars().enumerate() {
            if c.is_ascii_uppercase() {
                return Err(Error::input("hash hex must be lowercase"));
            }
            let v = c
                .to_digit(16)
                .ok_or_else(|| Error::input(format!("invalid hex digit `{c}`")))?;
            h.words[n / 16] |= u64::from(v) << (60 - 4 * (n % 16));
        }
        let padding_clean = (h.len()..nibbles * 4).all(|p| h.words[p / 64] >> (63 - p % 64) & 1 == 0);
        if !padding_clean {
            return Err(Error::input("hash padding bits must be zero"));
        }
        Ok(h)
    }

    /// Popcount of `self XOR other` over `range`.
    fn xor_popcount(&self, other: &SceneHash, range: Range<usize>) -> u32 {
        if range.is_empty() {
            return 0;
        }
        let (first, last) = (range.start / 64, (range.end - 1) / 64);
        let mut total = 0;
        for w in first..=last {
            let mut x = self.words[w] ^ other.words[w];
            let lo = if w == first { range.start % 64 } else { 0 };
            let hi = if w == last { (range.end - 1) % 64 + 1 } else { 64 };
            // keep bit positions lo..hi, counted from the MSB
            let keep = if hi - lo == 64 {
                u64::MAX
            } else {
                ((1u64 << (hi - lo)) - 1) << (64 - hi)
            };
            x &= keep;
            total += x.count_ones();
        }
        total
    }

    /// Popcount of `self XOR other` over every bin slice.
    pub fn hamming_bins_total(&self, other: &SceneHash) -> Result<u32> {
        check_same_layout(self, other)?;
        let start = self.layout.bin_slice(DistanceBin::ALL[0]).start;
        Ok(self.xor_popcount(other, start..self.len()))
    }
}

fn check_same_layout(a: &SceneHash, b: &SceneHash) -> Result<()> {
    if a.layout != b.layout {
        return Err(Error::LayoutMismatch {
            expected: a.layout.version().into(),
            found: b.layout.version().into(),
        });
    }
    Ok(())
}

pub fn encode_hash(d: &SceneDescriptor) -> SceneHash {
    encode_hash_with(d, HashLayout::BINARY)
}

pub fn encode_hash_with(d: &SceneDescriptor, layout: HashLayout) -> SceneHash {
    let mut h = SceneHash::zeroed(layout);
    for sign in d.signs() {
        h.set_bit(sign.index(), true);
    }
    h.write_uint(SIGN_BITS, WALKER_BITS, u32::from(d.walkers().min(MAX_WALKERS)));
    for bin in DistanceBin::ALL {
        for sector in SectorLabel::ALL {
            let offset = layout.field_offset(bin, sector);
            h.write_count(offset, sector, d.count(bin, sector));
        }
    }
    h
}

pub fn decode_hash(h: &SceneHash) -> SceneDescriptor {
    let layout = h.layout;
    let mut d = SceneDescriptor::new();
    for sign in SignKind::ALL {
        if h.bit(sign.index()) {
            d.insert_sign(sign);
        }
    }
    d.set_walkers(h.read_uint(SIGN_BITS, WALKER_BITS));
    for bin in DistanceBin::ALL {
        for sector in SectorLabel::ALL {
            d.set_count(bin, sector, h.read_count(layout.field_offset(bin, sector), sector));
        }
    }
    d
}

/// Field-wise saturation to hash capacity; `decode(encode(d)) == clamp(d)`.
pub fn clamp_to_capacity(d: &SceneDescriptor) -> SceneDescriptor {
    let mut out = d.clone();
    for bin in DistanceBin::ALL {
        for sector in SectorLabel::ALL {
            out.set_count(bin, sector, d.count(bin, sector).min(HashLayout::capacity(sector)));
        }
    }
    out
}

/// Hamming distance between the bin-`b` sub-vectors.
pub fn hamming_bin(a: &SceneHash, b: &SceneHash, bin: DistanceBin) -> Result<u32> {
    check_same_layout(a, b)?;
    Ok(a.xor_popcount(b, a.layout.bin_slice(bin)))
}

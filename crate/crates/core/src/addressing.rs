//! L1 memory maps.
//!
//! A 32-bit byte address is sliced, from the least significant end, into a
//! 2-bit byte offset, `b` bank bits, `t` tile bits and the remaining row bits.
//! That is the fully interleaved map. The hybrid map additionally reserves the
//! first `2^(S+t)` bytes (with `S = 2 + b + s`) as `2^t` sequential regions of
//! `2^S` bytes each; inside that window the `s` low tile bits and the `t` row
//! bits are swapped so that each region lives entirely in one tile.

use crate::error::{Error, Result};

/// Bit-field widths of an L1 address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AddressLayout {
    pub byte_bits: u32,
    pub bank_bits: u32,
    pub tile_bits: u32,
    pub row_bits: u32,
    pub seq_row_bits: u32,
}

impl Default for AddressLayout {
    /// 16 banks per tile, 64 tiles, 256 rows per bank (1 MiB) and 1 KiB
    /// sequential regions.
    fn default() -> Self {
        AddressLayout {
            byte_bits: 2,
            bank_bits: 4,
            tile_bits: 6,
            row_bits: 8,
            seq_row_bits: 4,
        }
    }
}

/// Physical coordinates of a word in L1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PhysicalLocation {
    pub tile: u32,
    pub bank: u32,
    pub row: u32,
}

impl AddressLayout {
    pub fn new(bank_bits: u32, tile_bits: u32, row_bits: u32, seq_row_bits: u32) -> Result<Self> {
        let layout = AddressLayout {
            byte_bits: 2,
            bank_bits,
            tile_bits,
            row_bits,
            seq_row_bits,
        };
        layout.validate()?;
        Ok(layout)
    }

    pub fn validate(&self) -> Result<()> {
        if self.byte_bits != 2 {
            return Err(Error::Config(format!(
                "byte offset must be 2 bits, got {}",
                self.byte_bits
            )));
        }
        let used = self.byte_bits + self.bank_bits + self.tile_bits + self.row_bits;
        // Kept strictly below 32 so that the L1 size fits in a u32.
        if used >= 32 {
            return Err(Error::Config(format!(
                "layout uses {used} address bits, at most 31 are supported"
            )));
        }
        if self.seq_row_bits > self.row_bits {
            return Err(Error::Config(format!(
                "sequential rows ({}) exceed row bits ({})",
                self.seq_row_bits, self.row_bits
            )));
        }
        Ok(())
    }

    pub fn with_seq_row_bits(mut self, s: u32) -> Result<Self> {
        self.seq_row_bits = s;
        self.validate()?;
        Ok(self)
    }

    pub fn num_tiles(&self) -> u32 {
        1 << self.tile_bits
    }

    pub fn banks_per_tile(&self) -> u32 {
        1 << self.bank_bits
    }

    pub fn num_banks(&self) -> u32 {
        1 << (self.bank_bits + self.tile_bits)
    }

    pub fn rows_per_bank(&self) -> u32 {
        1 << self.row_bits
    }

    /// Total L1 size in bytes.
    pub fn total_bytes(&self) -> u32 {
        1 << (self.byte_bits + self.bank_bits + self.tile_bits + self.row_bits)
    }

    pub fn total_words(&self) -> u32 {
        self.total_bytes() >> self.byte_bits
    }

    /// `S`: log2 of the per-tile sequential region size in bytes.
    pub fn seq_region_log2(&self) -> u32 {
        self.byte_bits + self.bank_bits + self.seq_row_bits
    }

    pub fn seq_region_bytes(&self) -> u32 {
        1 << self.seq_region_log2()
    }

    /// Size of the whole sequential window, `2^(S+t)` bytes.
    pub fn seq_window_bytes(&self) -> u32 {
        1 << (self.seq_region_log2() + self.tile_bits)
    }

    fn check_range(&self, addr: u32) -> Result<()> {
        if addr >= self.total_bytes() {
            return Err(Error::AddressOutOfRange {
                addr,
                limit: self.total_bytes(),
            });
        }
        Ok(())
    }

    /// Slices `addr` with the interleaved map.
    pub fn decode_interleaved(&self, addr: u32) -> Result<PhysicalLocation> {
        self.check_range(addr)?;
        let bank_lo = self.byte_bits;
        let tile_lo = bank_lo + self.bank_bits;
        let row_lo = tile_lo + self.tile_bits;
        Ok(PhysicalLocation {
            bank: field(addr, bank_lo, self.bank_bits),
            tile: field(addr, tile_lo, self.tile_bits),
            row: addr >> row_lo,
        })
    }

    /// Word address of a location under the interleaved map.
    pub fn encode_interleaved(&self, loc: PhysicalLocation) -> Result<u32> {
        if loc.tile >= self.num_tiles()
            || loc.bank >= self.banks_per_tile()
            || loc.row >= self.rows_per_bank()
        {
            return Err(Error::Config(format!("location {loc:?} outside layout")));
        }
        let bank_lo = self.byte_bits;
        let tile_lo = bank_lo + self.bank_bits;
        let row_lo = tile_lo + self.tile_bits;
        Ok((loc.row << row_lo) | (loc.tile << tile_lo) | (loc.bank << bank_lo))
    }

    /// Hybrid-map address transformation. Identity outside the sequential
    /// window.
    pub fn scramble(&self, addr: u32) -> Result<u32> {
        self.check_range(addr)?;
        if addr >= self.seq_window_bytes() {
            return Ok(addr);
        }
        let lo = self.byte_bits + self.bank_bits;
        let (s, t) = (self.seq_row_bits, self.tile_bits);
        let low = addr & mask(lo);
        let seq_rows = field(addr, lo, s);
        let tile = field(addr, lo + s, t);
        Ok(low | (tile << lo) | (seq_rows << (lo + t)))
    }

    /// Inverse of [`scramble`](Self::scramble).
    pub fn descramble(&self, addr: u32) -> Result<u32> {
        self.check_range(addr)?;
        if addr >= self.seq_window_bytes() {
            return Ok(addr);
        }
        let lo = self.byte_bits + self.bank_bits;
        let (s, t) = (self.seq_row_bits, self.tile_bits);
        let low = addr & mask(lo);
        let tile = field(addr, lo, t);
        let seq_rows = field(addr, lo + t, s);
        Ok(low | (seq_rows << lo) | (tile << (lo + s)))
    }

    /// First program address of `tile`'s sequential region.
    pub fn sequential_base(&self, tile: u32) -> Result<u32> {
        if tile >= self.num_tiles() {
            return Err(Error::Config(format!(
                "tile {tile} out of range (layout has {})",
                self.num_tiles()
            )));
        }
        Ok(tile << self.seq_region_log2())
    }

    /// Decodes a program address, applying the scrambler when `hybrid` is set.
    pub fn decode(&self, addr: u32, hybrid: bool) -> Result<PhysicalLocation> {
        if hybrid {
            self.decode_interleaved(self.scramble(addr)?)
        } else {
            self.decode_interleaved(addr)
        }
    }

    /// Flat bank index `tile * banks_per_tile + bank`.
    pub fn global_bank(&self, loc: PhysicalLocation) -> u32 {
        (loc.tile << self.bank_bits) | loc.bank
    }
}

#[inline]
fn mask(bits: u32) -> u32 {
    if bits >= 32 {
        u32::MAX
    } else {
        (1u32 << bits) - 1
    }
}

#[inline]
fn field(addr: u32, lo: u32, width: u32) -> u32 {
    (addr >> lo) & mask(width)
}

/// Counts gathered by [`check_scrambling`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScrambleReport {
    pub window_checked: u64,
    pub outside_checked: u64,
}

/// A violated scrambling property, with the first offending address.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScrambleViolation {
    NotInWindow { addr: u32, mapped: u32 },
    Collision { addr: u32, other: u32, mapped: u32 },
    NotIdentity { addr: u32, mapped: u32 },
    WrongTile { addr: u32, tile: u32, expected: u32 },
    BankOrder { addr: u32, bank: u32, expected: u32 },
}

impl std::fmt::Display for ScrambleViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ScrambleViolation::NotInWindow { addr, mapped } => {
                write!(f, "{addr:#x} maps to {mapped:#x}, outside the sequential window")
            }
            ScrambleViolation::Collision { addr, other, mapped } => {
                write!(f, "{addr:#x} and {other:#x} both map to {mapped:#x}")
            }
            ScrambleViolation::NotIdentity { addr, mapped } => {
                write!(f, "{addr:#x} outside the window maps to {mapped:#x}")
            }
            ScrambleViolation::WrongTile { addr, tile, expected } => {
                write!(f, "{addr:#x} lands in tile {tile}, expected tile {expected}")
            }
            ScrambleViolation::BankOrder { addr, bank, expected } => {
                write!(f, "{addr:#x} lands in bank {bank}, expected bank {expected}")
            }
        }
    }
}

/// Exhaustively checks a scrambling function against the hybrid-map
/// properties: bijection on the window, identity outside, tile locality of
/// every sequential region and round-robin bank order inside a region.
///
/// `map` is normally [`AddressLayout::scramble`]; tests pass corrupted maps.
pub fn check_scrambling<F>(layout: &AddressLayout, map: F) -> std::result::Result<ScrambleReport, ScrambleViolation>
where
    F: Fn(u32) -> u32,
{
    let window = layout.seq_window_bytes();
    let mut seen: Vec<u32> = vec![u32::MAX; window as usize];
    for addr in 0..window {
        let mapped = map(addr);
        if mapped >= window {
            return Err(ScrambleViolation::NotInWindow { addr, mapped });
        }
        let slot = &mut seen[mapped as usize];
        if *slot != u32::MAX {
            return Err(ScrambleViolation::Collision {
                addr,
                other: *slot,
                mapped,
            });
        }
        *slot = addr;
    }

    let region = layout.seq_region_bytes();
    let banks = layout.banks_per_tile();
    for addr in 0..window {
        let expected_tile = addr / region;
        let loc = layout
            .decode_interleaved(map(addr))
            .expect("window lies inside L1");
        if loc.tile != expected_tile {
            return Err(ScrambleViolation::WrongTile {
                addr,
                tile: loc.tile,
                expected: expected_tile,
            });
        }
        let expected_bank = ((addr % region) >> layout.byte_bits) % banks;
        if loc.bank != expected_bank {
            return Err(ScrambleViolation::BankOrder {
                addr,
                bank: loc.bank,
                expected: expected_bank,
            });
        }
    }

    let total = layout.total_bytes();
    for addr in window..total {
        let mapped = map(addr);
        if mapped != addr {
            return Err(ScrambleViolation::NotIdentity { addr, mapped });
        }
    }

    Ok(ScrambleReport {
        window_checked: window as u64,
        outside_checked: (total - window) as u64,
    })
}

//! Reflected binary gray code and the projected-pattern localization used by
//! tabletop robots: the projector shows one bit-plane per frame and the
//! photodiode reads one bit per frame, per axis.

use std::fmt;

use nalgebra::Vector2;

use super::{LocError, Venue};

pub const DEFAULT_CODE_WIDTH: u8 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GrayCode {
    pub bits: u32,
    pub width: u8,
}

impl fmt::Display for GrayCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in (0..self.width).rev() {
            f.write_str(if self.bits >> i & 1 == 1 { "1" } else { "0" })?;
        }
        Ok(())
    }
}

pub fn gray_encode(cell: u32, width: u8) -> Result<GrayCode, LocError> {
    if width == 0 || width > 31 {
        return Err(LocError::InvalidInput("code width must be in 1..=31"));
    }
    if cell >= 1 << width {
        return Err(LocError::CellOutOfRange { cell, width });
    }
    Ok(GrayCode {
        bits: cell ^ (cell >> 1),
        width,
    })
}

pub fn gray_decode(code: GrayCode) -> u32 {
    let mut n = code.bits;
    let mut shift = code.bits >> 1;
    while shift != 0 {
        n ^= shift;
        shift >>= 1;
    }
    n
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    X,
    Y,
}

/// One photodiode reading: bit `bit_index` of the axis code (MSB first in
/// the frame sequence).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GrayFrame {
    pub axis: Axis,
    pub bit_index: u8,
    pub sample: bool,
}

fn cell_of(coord: f64, extent: f64, width: u8) -> u32 {
    let cells = 1u32 << width;
    let pitch = extent / cells as f64;
    ((coord / pitch).floor() as u32).min(cells - 1)
}

pub fn cell_pitch(venue: &Venue, width: u8) -> (f64, f64) {
    let cells = (1u32 << width) as f64;
    (venue.width / cells, venue.depth / cells)
}

/// Frames seen by a photodiode at `tag`: all X bit-planes, then all Y.
pub fn simulate_projection(
    tag: Vector2<f64>,
    venue: &Venue,
    width: u8,
) -> Result<Vec<GrayFrame>, LocError> {
    if !venue.contains(tag) {
        return Err(LocError::OutOfCoverage);
    }
    let mut frames = Vec::with_capacity(2 * width as usize);
    for (axis, coord, extent) in [(Axis::X, tag.x, venue.width), (Axis::Y, tag.y, venue.depth)] {
        let code = gray_encode(cell_of(coord, extent, width), width)?;
        for i in (0..width).rev() {
            frames.push(GrayFrame {
                axis,
                bit_index: i,
                sample: code.bits >> i & 1 == 1,
            });
        }
    }
    Ok(frames)
}

/// Reassembles both axis codes and returns the center of the decoded cell.
pub fn decode_projection(
    frames: &[GrayFrame],
    venue: &Venue,
    width: u8,
) -> Result<Vector2<f64>, LocError> {
    let mut codes = [0u32; 2];
    let mut seen = [0u32; 2];
    for f in frames {
        if f.bit_index >= width {
            return Err(LocError::InvalidInput("frame bit index exceeds code width"));
        }
        let a = match f.axis {
            Axis::X => 0,
            Axis::Y => 1,
        };
        seen[a] |= 1 << f.bit_index;
        if f.sample {
            codes[a] |= 1 << f.bit_index;
        }
    }
    let full = (1u32 << width) - 1;
    if seen != [full, full] {
        return Err(LocError::InvalidInput("incomplete frame sequence"));
    }
    let (px, py) = cell_pitch(venue, width);
    let cx = gray_decode(GrayCode {
        bits: codes[0],
        width,
    });
    let cy = gray_decode(GrayCode {
        bits: codes[1],
        width,
    });
    Ok(Vector2::new((cx as f64 + 0.5) * px, (cy as f64 + 0.5) * py))
}

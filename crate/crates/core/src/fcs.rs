//! Frequency-component stacks: the 15-plane output of the three-level
//! decomposition, index sets over those planes, and the `.fcs` container.
//!
//! Plane layout: index 0 is the lowpass residual; 1..=2 are the two
//! directional components of the first (finest) bandpass level, 3..=6 the
//! four of the second level, 7..=14 the eight of the third. The stack is
//! additive: the source image is the plain sum of all 15 planes.

use std::fmt;
use std::fs;
use std::ops::Range;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image2D;

/// Number of planes in a three-level stack: 1 lowpass + 2 + 4 + 8.
pub const FC_COUNT: usize = 15;

/// Magic tag of the `.fcs` container.
pub const FCS_MAGIC: [u8; 8] = *b"NSCTFCS\0";

/// Plane index range of each decomposition level (1..=3).
pub fn level_planes(level: usize) -> Range<usize> {
    match level {
        1 => 1..3,
        2 => 3..7,
        3 => 7..15,
        _ => panic!("level must be 1..=3"),
    }
}

/// The 15 frequency-component planes of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct FcStack {
    height: usize,
    width: usize,
    planes: Vec<Image2D>,
}

impl FcStack {
    pub fn new(planes: Vec<Image2D>) -> Result<Self> {
        if planes.len() != FC_COUNT {
            return Err(Error::invalid(format!(
                "expected {FC_COUNT} planes, got {}",
                planes.len()
            )));
        }
        let shape = planes[0].shape();
        for p in &planes {
            if p.shape() != shape {
                return Err(Error::ShapeMismatch {
                    expected: shape,
                    got: p.shape(),
                });
            }
        }
        Ok(Self {
            height: shape.0,
            width: shape.1,
            planes,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn plane(&self, index: usize) -> &Image2D {
        &self.planes[index]
    }

    pub fn planes(&self) -> &[Image2D] {
        &self.planes
    }

    /// Sum of the selected planes; the full-set sum reconstructs the image.
    pub fn sum_planes(&self, keep: FcSet) -> Image2D {
        let mut out = Image2D::zeros(self.height, self.width);
        for k in keep.iter() {
            let plane = &self.planes[k];
            for (o, v) in out.data_mut().iter_mut().zip(plane.data()) {
                *o += v;
            }
        }
        out
    }
}

/// Writes a stack to the `.fcs` container: the 8-byte magic, three 32-bit
/// little-endian fields (height, width, plane count), then the planes as
/// row-major little-endian `f64`, ordered 0..=14. Bit-exact round trip.
pub fn write_fcs(stack: &FcStack, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(20 + FC_COUNT * stack.height * stack.width * 8);
    out.extend_from_slice(&FCS_MAGIC);
    out.extend_from_slice(&(stack.height as u32).to_le_bytes());
    out.extend_from_slice(&(stack.width as u32).to_le_bytes());
    out.extend_from_slice(&(FC_COUNT as u32).to_le_bytes());
    for plane in &stack.planes {
        for &v in plane.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a stack written by [`write_fcs`].
pub fn read_fcs(path: impl AsRef<Path>) -> Result<FcStack> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 20 {
        return Err(Error::file_format(path, "truncated header"));
    }
    if bytes[..8] != FCS_MAGIC {
        return Err(Error::file_format(path, "magic mismatch"));
    }
    let field = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap());
    let (height, width, count) = (field(0) as usize, field(1) as usize, field(2) as usize);
    if count != FC_COUNT {
        return Err(Error::file_format(
            path,
            format!("expected {FC_COUNT} planes, header says {count}"),
        ));
    }
    if height == 0 || width == 0 {
        return Err(Error::file_format(path, "zero dimension"));
    }
    let plane_len = height * width;
    let expected = 20 + count * plane_len * 8;
    if bytes.len() < expected {
        return Err(Error::file_format(
            path,
            format!("truncated: expected {expected} bytes, got {}", bytes.len()),
        ));
    }
    let mut planes = Vec::with_capacity(count);
    let mut off = 20;
    for _ in 0..count {
        let mut data = Vec::with_capacity(plane_len);
        for _ in 0..plane_len {
            data.push(f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()));
            off += 8;
        }
        planes.push(Image2D::new(height, width, data).map_err(|e| {
            Error::file_format(path, format!("bad plane data: {e}"))
        })?);
    }
    FcStack::new(planes)
}

/// A subset of the 15 plane indices, e.g. the invariant set kept during
/// transfer or the keep-set of a band-stop reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FcSet(u16);

const FULL_MASK: u16 = (1 << FC_COUNT as u16) - 1;

impl FcSet {
    pub const EMPTY: FcSet = FcSet(0);
    pub const ALL: FcSet = FcSet(FULL_MASK);

    /// Default invariant set: the lowpass plane plus the third-level
    /// directional planes, `{0, 7..=14}`.
    pub const DEFAULT_INVARIANT: FcSet = FcSet(1 | (0xFF << 7));

    pub fn from_indices(indices: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut mask = 0u16;
        for i in indices {
            if i >= FC_COUNT {
                return Err(Error::invalid(format!(
                    "component index {i} out of range 0..{FC_COUNT}"
                )));
            }
            mask |= 1 << i;
        }
        Ok(FcSet(mask))
    }

    /// Parses range syntax like `0,7-14`.
    pub fn parse(s: &str) -> Result<Self> {
        let mut mask = 0u16;
        for part in s.split(',') {
            let part = part.trim();
            if part.is_empty() {
                continue;
            }
            let (lo, hi) = match part.split_once('-') {
                Some((a, b)) => {
                    let lo: usize = a.trim().parse().map_err(|_| bad_range(part))?;
                    let hi: usize = b.trim().parse().map_err(|_| bad_range(part))?;
                    (lo, hi)
                }
                None => {
                    let v: usize = part.parse().map_err(|_| bad_range(part))?;
                    (v, v)
                }
            };
            if lo > hi || hi >= FC_COUNT {
                return Err(bad_range(part));
            }
            for i in lo..=hi {
                mask |= 1 << i;
            }
        }
        Ok(FcSet(mask))
    }

    pub fn contains(self, index: usize) -> bool {
        index < FC_COUNT && self.0 & (1 << index) != 0
    }

    pub fn complement(self) -> FcSet {
        FcSet(!self.0 & FULL_MASK)
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = usize> {
        (0..FC_COUNT).filter(move |&i| self.contains(i))
    }
}

fn bad_range(part: &str) -> Error {
    Error::invalid(format!(
        "invalid component range {part:?}; expected indices 0..={} like \"0,7-14\"",
        FC_COUNT - 1
    ))
}

impl fmt::Display for FcSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return write!(f, "none");
        }
        let mut first = true;
        let mut i = 0;
        while i < FC_COUNT {
            if self.contains(i) {
                let start = i;
                while i + 1 < FC_COUNT && self.contains(i + 1) {
                    i += 1;
                }
                if !first {
                    write!(f, ",")?;
                }
                if start == i {
                    write!(f, "{start}")?;
                } else {
                    write!(f, "{start}-{i}")?;
                }
                first = false;
            }
            i += 1;
        }
        Ok(())
    }
}

impl serde::Serialize for FcSet {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for FcSet {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        FcSet::parse(&s).map_err(serde::de::Error::custom)
    }
}

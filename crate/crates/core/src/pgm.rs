//! Binary PGM ("P5") image I/O.
//!
//! PGM is the only raster format the toolkit reads or writes: it is bit-exact,
//! has no compression, and covers 8-bit and 16-bit grayscale. 16-bit samples
//! are big-endian per the Netpbm convention.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{round_half_away, Image2D, LabelMask};

/// Sample depth for [`save_image`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    pub fn max_value(self) -> u32 {
        match self {
            BitDepth::Eight => 255,
            BitDepth::Sixteen => 65535,
        }
    }
}

/// Loads a binary PGM file. 8-bit samples land in `[0, 255]`, 16-bit samples
/// in `[0, 65535]`, both as exact `f64` values.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image2D> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (width, height, maxval, data) = parse_pgm(path, &bytes)?;

    let n = width * height;
    let values: Vec<f64> = if maxval <= 255 {
        if data.len() < n {
            return Err(Error::file_format(path, "truncated pixel data"));
        }
        data[..n].iter().map(|&b| b as f64).collect()
    } else {
        if data.len() < 2 * n {
            return Err(Error::file_format(path, "truncated pixel data"));
        }
        data[..2 * n]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64)
            .collect()
    };
    Image2D::new(height, width, values)
}

/// Saves an image as binary PGM after rounding half away from zero.
/// Values that fall outside the depth range after rounding are an error.
pub fn save_image(img: &Image2D, path: impl AsRef<Path>, depth: BitDepth) -> Result<()> {
    let path = path.as_ref();
    let maxval = depth.max_value();
    let mut rounded = Vec::with_capacity(img.len());
    for &v in img.data() {
        let r = round_half_away(v);
        if r < 0.0 || r > maxval as f64 {
            return Err(Error::invalid(format!(
                "value {v} out of range [0, {maxval}] after rounding"
            )));
        }
        rounded.push(r as u32);
    }

    let mut out = Vec::with_capacity(img.len() * 2 + 32);
    out.extend_from_slice(format!("P5\n{} {}\n{}\n", img.width(), img.height(), maxval).as_bytes());
    match depth {
        BitDepth::Eight => out.extend(rounded.iter().map(|&v| v as u8)),
        BitDepth::Sixteen => {
            for &v in &rounded {
                out.extend_from_slice(&(v as u16).to_be_bytes());
            }
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Loads a PGM file as a label mask (sample values are class indices).
pub fn load_mask(path: impl AsRef<Path>) -> Result<LabelMask> {
    let path = path.as_ref();
    let img = load_image(path)?;
    let labels = img
        .data()
        .iter()
        .map(|&v| {
            if v >= 0.0 && v <= 255.0 {
                Ok(v as u8)
            } else {
                Err(Error::file_format(path, format!("label value {v} exceeds 255")))
            }
        })
        .collect::<Result<Vec<u8>>>()?;
    LabelMask::new(img.height(), img.width(), labels)
}

/// Saves a label mask as an 8-bit PGM.
pub fn save_mask(mask: &LabelMask, path: impl AsRef<Path>) -> Result<()> {
    let img = Image2D::new(
        mask.height(),
        mask.width(),
        mask.labels().iter().map(|&l| l as f64).collect(),
    )?;
    save_image(&img, path, BitDepth::Eight)
}

fn parse_pgm<'a>(path: &Path, bytes: &'a [u8]) -> Result<(usize, usize, u32, &'a [u8])> {
    let mut pos = 0usize;

    let magic = next_token(bytes, &mut pos)
        .ok_or_else(|| Error::file_format(path, "missing header"))?;
    if magic != b"P5" {
        return Err(Error::file_format(
            path,
            format!("unsupported format {:?}", String::from_utf8_lossy(magic)),
        ));
    }

    let mut fields = [0u32; 3];
    for f in &mut fields {
        let tok = next_token(bytes, &mut pos)
            .ok_or_else(|| Error::file_format(path, "malformed header"))?;
        *f = std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::file_format(path, "malformed header field"))?;
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(Error::file_format(path, "zero image dimension"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::file_format(path, format!("unsupported maxval {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if pos >= bytes.len() {
        return Err(Error::file_format(path, "truncated pixel data"));
    }
    Ok((width as usize, height as usize, maxval, &bytes[pos..]))
}

/// Returns the next whitespace-delimited token, skipping `#` comment lines,
/// and advances `pos` just past the single whitespace byte that ends it.
fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    if *pos >= bytes.len() {
        return None;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let tok = &bytes[start..*pos];
    if *pos < bytes.len() {
        *pos += 1; // consume the single terminating whitespace byte
    }
    Some(tok)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn loads_raw_bytes() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("a.pgm");
        std::fs::write(&path, [b"P5\n2 2\n255\n".as_slice(), &[0, 128, 255, 64]].concat())
            .unwrap();
        let img = load_image(&path).unwrap();
        assert_eq!(img.shape(), (2, 2));
        assert_eq!(img.data(), &[0.0, 128.0, 255.0, 64.0]);
    }

    #[test]
    fn round_trip_identity() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("rt.pgm");
        let img = Image2D::new(3, 2, vec![0.0, 17.0, 255.0, 3.0, 99.0, 200.0]).unwrap();
        save_image(&img, &path, BitDepth::Eight).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!(back, img);
        // Saving the loaded image again reproduces the same file.
        let path2 = dir.path().join("rt2.pgm");
        save_image(&back, &path2, BitDepth::Eight).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn sixteen_bit_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("w.pgm");
        let img = Image2D::new(1, 3, vec![0.0, 65535.0, 12345.0]).unwrap();
        save_image(&img, &path, BitDepth::Sixteen).unwrap();
        assert_eq!(load_image(&path).unwrap(), img);
    }

    #[test]
    fn rejects_p6() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("c.ppm");
        std::fs::write(&path, b"P6\n1 1\n255\n\0\0\0").unwrap();
        let err = load_image(&path).unwrap_err().to_string();
        assert!(err.contains("unsupported format"), "{err}");
    }

    #[test]
    fn save_rounds_half_away() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("r.pgm");
        let img = Image2D::new(1, 2, vec![0.4, 254.6]).unwrap();
        save_image(&img, &path, BitDepth::Eight).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!(back.data(), &[0.0, 255.0]);
    }

    #[test]
    fn save_rejects_out_of_range() {
        let dir = tempdir().unwrap();
        let img = Image2D::new(1, 1, vec![-1.0]).unwrap();
        assert!(save_image(&img, dir.path().join("n.pgm"), BitDepth::Eight).is_err());
        let img = Image2D::new(1, 1, vec![256.0]).unwrap();
        assert!(save_image(&img, dir.path().join("o.pgm"), BitDepth::Eight).is_err());
    }

    #[test]
    fn save_load_equals_round() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("q.pgm");
        let img = Image2D::new(1, 4, vec![0.5, 1.49, 2.5, 3.51]).unwrap();
        save_image(&img, &path, BitDepth::Eight).unwrap();
        let back = load_image(&path).unwrap();
        let expect: Vec<f64> = img.data().iter().map(|&v| round_half_away(v)).collect();
        assert_eq!(back.data(), expect.as_slice());
    }

    #[test]
    fn header_comments_are_skipped() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("c.pgm");
        std::fs::write(
            &path,
            [b"P5\n# a comment\n2 1\n# another\n255\n".as_slice(), &[7, 9]].concat(),
        )
        .unwrap();
        let img = load_image(&path).unwrap();
        assert_eq!(img.data(), &[7.0, 9.0]);
    }

    #[test]
    fn truncated_data_errors() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("t.pgm");
        std::fs::write(&path, [b"P5\n2 2\n255\n".as_slice(), &[1, 2]].concat()).unwrap();
        assert!(load_image(&path).is_err());
    }

    #[test]
    fn mask_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.pgm");
        let mask = LabelMask::new(2, 2, vec![0, 1, 2, 1]).unwrap();
        save_mask(&mask, &path).unwrap();
        assert_eq!(load_mask(&path).unwrap(), mask);
    }
}

//! PFM float-image codec (the disparity storage format of the synthetic
//! driving/flying datasets). Rows are stored bottom-to-top; a negative scale
//! marks little-endian payloads; the scale magnitude is a value multiplier.

use ndarray::Array3;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PfmImage {
    /// `(h, w, c)` with `c` 1 or 3, rows top-to-bottom.
    pub data: Array3<f32>,
}

impl PfmImage {
    pub fn gray(data: ndarray::Array2<f32>) -> Self {
        let (h, w) = data.dim();
        PfmImage { data: data.into_shape_with_order((h, w, 1)).unwrap() }
    }

    pub fn channel0(&self) -> ndarray::Array2<f32> {
        let (h, w, _) = self.data.dim();
        let mut out = ndarray::Array2::zeros((h, w));
        out.assign(&self.data.index_axis(ndarray::Axis(2), 0));
        out
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn token(&mut self) -> Result<&'a str> {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::format(start, "unexpected end of header"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| Error::format(start, "non-ascii header token"))
    }

    /// Exactly one whitespace byte separates the scale line from the payload.
    fn skip_one_whitespace(&mut self) -> Result<()> {
        if self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
            Ok(())
        } else {
            Err(Error::format(self.pos, "missing whitespace before payload"))
        }
    }
}

pub fn read_pfm(bytes: &[u8]) -> Result<PfmImage> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.token()?;
    let channels = match magic {
        "PF" => 3usize,
        "Pf" => 1usize,
        other => return Err(Error::format(0, format!("bad magic {other:?}, expected PF or Pf"))),
    };
    let wpos = cur.pos;
    let w: usize = cur
        .token()?
        .parse()
        .map_err(|_| Error::format(wpos, "width is not an integer"))?;
    let hpos = cur.pos;
    let h: usize = cur
        .token()?
        .parse()
        .map_err(|_| Error::format(hpos, "height is not an integer"))?;
    let spos = cur.pos;
    let scale: f64 = cur
        .token()?
        .parse()
        .map_err(|_| Error::format(spos, "scale is not a number"))?;
    if scale == 0.0 {
        return Err(Error::format(spos, "scale must be non-zero"));
    }
    cur.skip_one_whitespace()?;

    let little_endian = scale < 0.0;
    let magnitude = scale.abs() as f32;
    let need = w * h * channels * 4;
    let payload = bytes
        .get(cur.pos..cur.pos + need)
        .ok_or_else(|| Error::format(bytes.len(), format!("payload truncated, need {need} bytes")))?;

    let mut data = Array3::<f32>::zeros((h, w, channels));
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little_endian { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) };
        // Row 0 of the file is the bottom image row.
        let file_row = i / (w * channels);
        let rest = i % (w * channels);
        data[[h - 1 - file_row, rest / channels, rest % channels]] = v * magnitude;
    }
    Ok(PfmImage { data })
}

/// Canonical little-endian encoding with scale -1.0; `read_pfm` of the result
/// reproduces the input bit-for-bit, and re-encoding a decoded canonical file
/// is byte-identical.
pub fn write_pfm(img: &PfmImage) -> Vec<u8> {
    let (h, w, c) = img.data.dim();
    assert!(c == 1 || c == 3, "PFM holds 1 or 3 channels");
    let magic = if c == 3 { "PF" } else { "Pf" };
    let mut out = format!("{magic}\n{w} {h}\n-1.0\n").into_bytes();
    for file_row in 0..h {
        let row = h - 1 - file_row;
        for x in 0..w {
            for ch in 0..c {
                out.extend_from_slice(&img.data[[row, x, ch]].to_le_bytes());
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    #[test]
    fn minimal_single_pixel_file_decodes() {
        let mut bytes = b"Pf\n1 1\n-1.0\n".to_vec();
        bytes.extend_from_slice(&1.0f32.to_le_bytes());
        let img = read_pfm(&bytes).unwrap();
        assert_eq!(img.data.dim(), (1, 1, 1));
        assert_eq!(img.data[[0, 0, 0]], 1.0);
    }

    #[test]
    fn bottom_up_row_order_is_flipped_on_read() {
        // File rows: bottom [1,2], then top [3,4]; decoded row 0 must be [3,4].
        let mut bytes = b"Pf\n2 2\n-1.0\n".to_vec();
        for v in [1.0f32, 2.0, 3.0, 4.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let img = read_pfm(&bytes).unwrap();
        assert_eq!(img.channel0(), array![[3.0, 4.0], [1.0, 2.0]]);
    }

    #[test]
    fn write_then_read_round_trips_bit_exactly() {
        let data = Array2::from_shape_fn((3, 4), |(y, x)| (y * 4 + x) as f32 * 0.37 - 1.5);
        let img = PfmImage::gray(data);
        let bytes = write_pfm(&img);
        let back = read_pfm(&bytes).unwrap();
        assert_eq!(back, img);
        // And the canonical encoding is byte-stable.
        assert_eq!(write_pfm(&back), bytes);
    }

    #[test]
    fn big_endian_payloads_decode_via_positive_scale() {
        let mut bytes = b"Pf\n1 1\n1.0\n".to_vec();
        bytes.extend_from_slice(&2.5f32.to_be_bytes());
        let img = read_pfm(&bytes).unwrap();
        assert_eq!(img.data[[0, 0, 0]], 2.5);
    }

    #[test]
    fn scale_magnitude_multiplies_values() {
        let mut bytes = b"Pf\n1 1\n-2.0\n".to_vec();
        bytes.extend_from_slice(&3.0f32.to_le_bytes());
        let img = read_pfm(&bytes).unwrap();
        assert_eq!(img.data[[0, 0, 0]], 6.0);
    }

    #[test]
    fn color_files_carry_three_channels() {
        let mut bytes = b"PF\n1 1\n-1.0\n".to_vec();
        for v in [0.1f32, 0.2, 0.3] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let img = read_pfm(&bytes).unwrap();
        assert_eq!(img.data.dim(), (1, 1, 3));
    }

    #[test]
    fn malformed_files_report_the_byte_offset() {
        match read_pfm(b"XX\n1 1\n-1.0\n") {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected format error, got {other:?}"),
        }
        let mut bytes = b"Pf\n2 2\n-1.0\n".to_vec();
        bytes.extend_from_slice(&1.0f32.to_le_bytes()); // only 1 of 4 values
        assert!(matches!(read_pfm(&bytes), Err(Error::Format { .. })));
        assert!(matches!(read_pfm(b"Pf\n1 1\n0.0\n"), Err(Error::Format { .. })));
    }
}

//! KITTI disparity encoding: 16-bit single-channel PNG, value/256 pixels,
//! stored zero meaning "no ground truth".

use image::{DynamicImage, ImageBuffer, Luma};
use ndarray::Array2;

use crate::error::{Error, Result};

pub fn read_kitti_disparity(bytes: &[u8]) -> Result<(Array2<f32>, Array2<bool>)> {
    let img = image::load_from_memory(bytes)
        .map_err(|e| Error::format(0, format!("png decode failed: {e}")))?;
    let gray = match img {
        DynamicImage::ImageLuma16(g) => g,
        other => {
            return Err(Error::format(
                0,
                format!("disparity png must be 16-bit single-channel, got {other:?}"),
            ))
        }
    };
    let (w, h) = gray.dimensions();
    let mut disp = Array2::<f32>::zeros((h as usize, w as usize));
    let mut mask = Array2::<bool>::from_elem((h as usize, w as usize), false);
    for (x, y, p) in gray.enumerate_pixels() {
        let v = p.0[0];
        if v != 0 {
            disp[[y as usize, x as usize]] = v as f32 / 256.0;
            mask[[y as usize, x as usize]] = true;
        }
    }
    Ok((disp, mask))
}

/// Inverse encoding; invalid pixels are stored as zero.
pub fn write_kitti_disparity(disp: &Array2<f32>, mask: &Array2<bool>) -> Result<Vec<u8>> {
    let (h, w) = disp.dim();
    let mut img = ImageBuffer::<Luma<u16>, Vec<u16>>::new(w as u32, h as u32);
    for ((y, x), v) in disp.indexed_iter() {
        let stored = if mask[[y, x]] { (v * 256.0).round().clamp(1.0, 65535.0) as u16 } else { 0 };
        img.put_pixel(x as u32, y as u32, Luma([stored]));
    }
    let mut out = std::io::Cursor::new(Vec::new());
    DynamicImage::ImageLuma16(img)
        .write_to(&mut out, image::ImageFormat::Png)
        .map_err(|e| Error::format(0, format!("png encode failed: {e}")))?;
    Ok(out.into_inner())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn png16(values: &[(u32, u32, u16)], w: u32, h: u32) -> Vec<u8> {
        let mut img = ImageBuffer::<Luma<u16>, Vec<u16>>::new(w, h);
        for &(x, y, v) in values {
            img.put_pixel(x, y, Luma([v]));
        }
        let mut out = std::io::Cursor::new(Vec::new());
        DynamicImage::ImageLuma16(img).write_to(&mut out, image::ImageFormat::Png).unwrap();
        out.into_inner()
    }

    #[test]
    fn stored_values_divide_by_256() {
        let bytes = png16(&[(0, 0, 512), (1, 0, 65535)], 2, 1);
        let (disp, mask) = read_kitti_disparity(&bytes).unwrap();
        assert_eq!(disp[[0, 0]], 2.0);
        assert!(mask[[0, 0]]);
        assert!((disp[[0, 1]] - 255.996).abs() < 1e-3);
        assert!(mask[[0, 1]]);
    }

    #[test]
    fn stored_zero_is_invalid() {
        let bytes = png16(&[(0, 0, 0), (1, 0, 256)], 2, 1);
        let (disp, mask) = read_kitti_disparity(&bytes).unwrap();
        assert!(!mask[[0, 0]]);
        assert_eq!(disp[[0, 0]], 0.0);
        assert!(mask[[0, 1]]);
        assert_eq!(disp[[0, 1]], 1.0);
    }

    #[test]
    fn eight_bit_input_is_a_format_error() {
        let mut img = ImageBuffer::<Luma<u8>, Vec<u8>>::new(1, 1);
        img.put_pixel(0, 0, Luma([7]));
        let mut out = std::io::Cursor::new(Vec::new());
        DynamicImage::ImageLuma8(img).write_to(&mut out, image::ImageFormat::Png).unwrap();
        assert!(matches!(read_kitti_disparity(&out.into_inner()), Err(Error::Format { .. })));
    }

    #[test]
    fn encode_decode_round_trips_quantized_values() {
        let disp = Array2::from_shape_vec((1, 3), vec![1.25f32, 17.0, 3.5]).unwrap();
        let mask = Array2::from_shape_vec((1, 3), vec![true, false, true]).unwrap();
        let bytes = write_kitti_disparity(&disp, &mask).unwrap();
        let (d2, m2) = read_kitti_disparity(&bytes).unwrap();
        assert_eq!(d2[[0, 0]], 1.25);
        assert!(!m2[[0, 1]]);
        assert_eq!(d2[[0, 2]], 3.5);
    }
}

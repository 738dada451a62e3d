//! PNG and binary PPM codecs.
//!
//! Images live in memory as `3 x H x W` tensors with values `byte / 255`.
//! Encoding clamps to [0, 1] and rounds half away from zero, so 0.5 becomes
//! 128 and every decoded byte image re-encodes to the same bytes.

use std::path::Path;

use image::{imageops, ImageFormat, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const PNG_MAGIC: &[u8] = b"\x89PNG\r\n\x1a\n";

/// Quantises one channel value to a byte.
pub fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn from_byte(b: u8) -> f32 {
    b as f32 / 255.0
}

/// Interleaved RGB bytes to a planar `3 x H x W` tensor.
pub fn from_rgb_bytes(width: usize, height: usize, rgb: &[u8]) -> Result<Tensor> {
    if rgb.len() != width * height * 3 {
        return Err(Error::Image(format!("expected {} bytes for {width}x{height}, got {}", width * height * 3, rgb.len())));
    }
    let plane = width * height;
    let mut data = vec![0.0f32; 3 * plane];
    for (i, px) in rgb.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + i] = from_byte(px[c]);
        }
    }
    Tensor::new(vec![3, height, width], data)
}

/// Planar tensor to `(width, height, interleaved bytes)`.
pub fn to_rgb_bytes(img: &Tensor) -> Result<(usize, usize, Vec<u8>)> {
    let (h, w) = image_dims(img)?;
    let plane = w * h;
    let d = img.data();
    let mut out = Vec::with_capacity(3 * plane);
    for i in 0..plane {
        for c in 0..3 {
            out.push(to_byte(d[c * plane + i]));
        }
    }
    Ok((w, h, out))
}

/// `(H, W)` of a `3 x H x W` image tensor.
pub fn image_dims(img: &Tensor) -> Result<(usize, usize)> {
    match img.shape() {
        &[3, h, w] => Ok((h, w)),
        s => Err(Error::shape("image", format!("expected 3 x H x W, got {s:?}"))),
    }
}

pub fn encode_ppm(img: &Tensor) -> Result<Vec<u8>> {
    let (w, h, rgb) = to_rgb_bytes(img)?;
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(&rgb);
    Ok(out)
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor> {
    let mut pos = 0;
    let mut fields = [0usize; 3];
    let magic = next_token(bytes, &mut pos).ok_or_else(|| Error::Image("empty PPM".into()))?;
    if magic != b"P6" {
        return Err(Error::Image("only binary PPM (P6) is supported".into()));
    }
    for (slot, name) in fields.iter_mut().zip(["width", "height", "maxval"]) {
        let tok = next_token(bytes, &mut pos).ok_or_else(|| Error::Image(format!("truncated PPM header: missing {name}")))?;
        *slot = std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Image(format!("bad PPM {name}")))?;
    }
    let [w, h, maxval] = fields;
    if maxval != 255 {
        return Err(Error::Image(format!("PPM maxval {maxval} is not supported (need 255)")));
    }
    if w == 0 || h == 0 {
        return Err(Error::Image("PPM has zero dimension".into()));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let need = w * h * 3;
    let raster = bytes.get(pos..pos + need).ok_or_else(|| Error::Image("truncated PPM raster".into()))?;
    from_rgb_bytes(w, h, raster)
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if bytes.get(*pos) == Some(&b'#') {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (*pos > start).then(|| &bytes[start..*pos])
}

pub fn encode_png(img: &Tensor) -> Result<Vec<u8>> {
    let (w, h, rgb) = to_rgb_bytes(img)?;
    let buf = RgbImage::from_raw(w as u32, h as u32, rgb).expect("buffer length checked");
    let mut out = std::io::Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png).map_err(|e| Error::Image(e.to_string()))?;
    Ok(out.into_inner())
}

pub fn decode_png(bytes: &[u8]) -> Result<Tensor> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png).map_err(|e| Error::Image(e.to_string()))?;
    let rgb = img.to_rgb8();
    from_rgb_bytes(rgb.width() as usize, rgb.height() as usize, rgb.as_raw())
}

/// Decodes by content: PNG signature or `P6` header.
pub fn decode_bytes(bytes: &[u8]) -> Result<Tensor> {
    if bytes.starts_with(PNG_MAGIC) {
        decode_png(bytes)
    } else if bytes.starts_with(b"P6") {
        decode_ppm(bytes)
    } else {
        Err(Error::Image("unsupported image format (need PNG or binary PPM)".into()))
    }
}

pub fn decode_image(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    decode_bytes(&bytes).map_err(|e| Error::Image(format!("{}: {e}", path.display())))
}

/// Encodes by extension: `.png` or `.ppm`.
pub fn encode_image(img: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = match extension(path).as_deref() {
        Some("png") => encode_png(img)?,
        Some("ppm") => encode_ppm(img)?,
        _ => return Err(Error::Image(format!("{}: unsupported extension (use .png or .ppm)", path.display()))),
    };
    std::fs::write(path, bytes)?;
    Ok(())
}

fn extension(path: &Path) -> Option<String> {
    path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase)
}

/// True for file names the codecs can read.
pub fn is_image_path(path: &Path) -> bool {
    matches!(extension(path).as_deref(), Some("png" | "ppm"))
}

/// Center-crops to a square and resamples to `size x size` (triangle filter
/// on the 8-bit image, so output bytes are deterministic).
pub fn fit_square(img: &Tensor, size: usize) -> Result<Tensor> {
    let (h, w) = image_dims(img)?;
    if size == 0 {
        return Err(Error::Config("target size must be positive".into()));
    }
    if h == size && w == size {
        return Ok(img.clone());
    }
    let (_, _, rgb) = to_rgb_bytes(img)?;
    let buf = RgbImage::from_raw(w as u32, h as u32, rgb).expect("buffer length checked");
    let side = h.min(w) as u32;
    let (x0, y0) = ((w as u32 - side) / 2, (h as u32 - side) / 2);
    let cropped = imageops::crop_imm(&buf, x0, y0, side, side).to_image();
    let resized = if side as usize == size {
        cropped
    } else {
        imageops::resize(&cropped, size as u32, size as u32, imageops::FilterType::Triangle)
    };
    from_rgb_bytes(size, size, resized.as_raw())
}

/// Stacks `3 x H x W` images into an `N x 3 x H x W` batch.
pub fn stack_images(images: &[&Tensor]) -> Result<Tensor> {
    let first = images.first().ok_or_else(|| Error::shape("stack_images", "no images"))?;
    let (h, w) = image_dims(first)?;
    let mut data = Vec::with_capacity(images.len() * first.numel());
    for img in images {
        if image_dims(img)? != (h, w) {
            return Err(Error::shape("stack_images", format!("{:?} vs {:?}", first.shape(), img.shape())));
        }
        data.extend_from_slice(img.data());
    }
    Tensor::new(vec![images.len(), 3, h, w], data)
}

/// Sample `i` of an `N x 3 x H x W` batch as a `3 x H x W` image.
pub fn unstack_image(batch: &Tensor, i: usize) -> Result<Tensor> {
    let (_, c, h, w) = batch.dims4("unstack_image")?;
    batch.sample(i)?.reshape(vec![c, h, w])
}

/// [0, 1] image values to the generator's [-1, 1] range.
pub fn to_signed(img: &Tensor) -> Tensor {
    img.map(|v| v * 2.0 - 1.0)
}

/// Inverse of [`to_signed`], clamped to [0, 1].
pub fn from_signed(img: &Tensor) -> Tensor {
    img.map(|v| ((v + 1.0) * 0.5).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_bytes_are_exact() {
        let img = Tensor::from_vec(&[3, 1, 2], vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0]).unwrap();
        let bytes = encode_ppm(&img).unwrap();
        let mut expected = b"P6\n2 1\n255\n".to_vec();
        expected.extend_from_slice(&[0xFF, 0xFF, 0xFF, 0, 0, 0]);
        assert_eq!(bytes, expected);
        assert!(decode_ppm(&bytes).unwrap().bit_eq(&img));
    }

    #[test]
    fn rounding_is_half_away_from_zero() {
        assert_eq!(to_byte(0.5), 128);
        assert_eq!(to_byte(-0.2), 0);
        assert_eq!(to_byte(1.7), 255);
        for b in 0..=255u8 {
            assert_eq!(to_byte(from_byte(b)), b);
        }
    }

    #[test]
    fn png_round_trip() {
        let img = Tensor::from_fn(&[3, 5, 7], |i| from_byte((i * 37 % 256) as u8));
        let back = decode_png(&encode_png(&img).unwrap()).unwrap();
        assert!(back.bit_eq(&img));
    }

    #[test]
    fn rejects_truncated_and_unknown() {
        assert!(decode_ppm(b"P6\n2 2\n255\n\x00\x00").is_err());
        assert!(decode_ppm(b"P6\n2 2\n65535\n").is_err());
        assert!(decode_bytes(b"GIF89a").is_err());
        assert!(decode_png(PNG_MAGIC).is_err());
    }

    #[test]
    fn ppm_header_comments() {
        let b = b"P6 # comment\n1 1\n255\n\x10\x20\x30";
        let img = decode_ppm(b).unwrap();
        assert_eq!(img.shape(), &[3, 1, 1]);
        assert_eq!(to_byte(img.data()[2]), 0x30);
    }

    #[test]
    fn fit_square_crops_center() {
        let img = Tensor::from_fn(&[3, 4, 8], |i| from_byte(((i % 8) * 30) as u8));
        let out = fit_square(&img, 4).unwrap();
        assert_eq!(out.shape(), &[3, 4, 4]);
        assert_eq!(to_byte(out.data()[0]), 60);
        assert_eq!(fit_square(&img, 2).unwrap().shape(), &[3, 2, 2]);
    }
}

//! PNG reading and writing. Images map to `1×C×H×W` tensors in [0, 1] with
//! `C = 1` for grayscale and `C = 3` for colour; alpha is discarded.

use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PngDepth {
    Eight,
    Sixteen,
}

fn png_err(e: impl std::fmt::Display) -> Error {
    Error::Png(e.to_string())
}

pub fn decode_png(bytes: &[u8]) -> Result<Tensor> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(png_err)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Png("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(png_err)?;
    buf.truncate(info.buffer_size());
    let (h, w) = (info.height as usize, info.width as usize);
    let (samples, channels) = match info.color_type {
        png::ColorType::Grayscale => (1, 1),
        png::ColorType::GrayscaleAlpha => (2, 1),
        png::ColorType::Rgb => (3, 3),
        png::ColorType::Rgba => (4, 3),
        png::ColorType::Indexed => return Err(Error::Png("palette was not expanded".into())),
    };
    let (bytes_per, max) = match info.bit_depth {
        png::BitDepth::Sixteen => (2, 65535.0),
        png::BitDepth::Eight => (1, 255.0),
        d => return Err(Error::Png(format!("unexpected bit depth {d:?} after expansion"))),
    };
    let stride = info.line_size;
    let sample = |y: usize, x: usize, s: usize| -> Real {
        let i = y * stride + (x * samples + s) * bytes_per;
        let v = if bytes_per == 2 {
            u16::from_be_bytes([buf[i], buf[i + 1]]) as Real
        } else {
            buf[i] as Real
        };
        v / max
    };
    Ok(Tensor::from_fn([1, channels, h, w], |[_, c, y, x]| sample(y, x, c)))
}

pub fn encode_png(image: &Tensor, depth: PngDepth) -> Result<Vec<u8>> {
    let s = image.shape();
    if s.n != 1 || !matches!(s.c, 1 | 3) {
        return Err(Error::Png(format!("cannot encode a {s} tensor as PNG")));
    }
    let color = if s.c == 1 {
        png::ColorType::Grayscale
    } else {
        png::ColorType::Rgb
    };
    let mut data = Vec::with_capacity(s.numel() * 2);
    for y in 0..s.h {
        for x in 0..s.w {
            for c in 0..s.c {
                let v = image.at(0, c, y, x).clamp(0.0, 1.0);
                match depth {
                    PngDepth::Eight => data.push((v * 255.0).round() as u8),
                    PngDepth::Sixteen => {
                        data.extend_from_slice(&((v * 65535.0).round() as u16).to_be_bytes())
                    }
                }
            }
        }
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, s.w as u32, s.h as u32);
        enc.set_color(color);
        enc.set_depth(match depth {
            PngDepth::Eight => png::BitDepth::Eight,
            PngDepth::Sixteen => png::BitDepth::Sixteen,
        });
        let mut writer = enc.write_header().map_err(png_err)?;
        writer.write_image_data(&data).map_err(png_err)?;
        writer.finish().map_err(png_err)?;
    }
    Ok(out)
}

pub fn read_png(path: impl AsRef<Path>) -> Result<Tensor> {
    decode_png(&std::fs::read(path)?)
}

pub fn write_png(path: impl AsRef<Path>, image: &Tensor, depth: PngDepth) -> Result<()> {
    std::fs::write(path, encode_png(image, depth)?)?;
    Ok(())
}

/// Rounds `image` to the nearest value representable at `depth`.
pub fn quantize(image: &Tensor, depth: PngDepth) -> Tensor {
    let max: Real = match depth {
        PngDepth::Eight => 255.0,
        PngDepth::Sixteen => 65535.0,
    };
    image.map(|v| (v.clamp(0.0, 1.0) * max).round() / max)
}

//! 8-bit PNG reading and writing.
//!
//! Grayscale and RGB are read as one and three channels; an alpha channel,
//! if present, is dropped. Palette images and 16-bit depths are rejected.
//! Writing rounds and clamps to [0, 255] with fixed encoder settings, so the
//! same image always produces the same bytes.

use std::fs::File;
use std::io::{BufWriter, Cursor, Write};
use std::path::Path;

use histoseg_core::{BinaryMask, RasterImage};
use png::{BitDepth, ColorType, Compression, Decoder, DecodingError, Encoder};

use crate::error::{CoreContext, Error, Result};

pub fn load_png(path: &Path) -> Result<RasterImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_png(&bytes, path)
}

fn decoding_error(path: &Path, e: DecodingError) -> Error {
    match e {
        DecodingError::IoError(io) if io.kind() != std::io::ErrorKind::UnexpectedEof => {
            Error::io(path, io)
        }
        other => Error::MalformedPng {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    }
}

/// Decodes an in-memory PNG; `path` is only used in error messages.
pub fn decode_png(bytes: &[u8], path: &Path) -> Result<RasterImage> {
    let mut decoder = Decoder::new(Cursor::new(bytes));
    let header = decoder.read_header_info().map_err(|e| decoding_error(path, e))?;
    if header.bit_depth != BitDepth::Eight {
        return Err(Error::UnsupportedBitDepth {
            path: path.to_path_buf(),
            depth: header.bit_depth as u8,
        });
    }
    let (stride, keep) = match header.color_type {
        ColorType::Grayscale => (1, 1),
        ColorType::GrayscaleAlpha => (2, 1),
        ColorType::Rgb => (3, 3),
        ColorType::Rgba => (4, 3),
        ColorType::Indexed => {
            return Err(Error::UnsupportedColor {
                path: path.to_path_buf(),
                color: "indexed".into(),
            })
        }
    };
    let mut reader = decoder.read_info().map_err(|e| decoding_error(path, e))?;
    let size = reader.output_buffer_size().ok_or_else(|| Error::MalformedPng {
        path: path.to_path_buf(),
        message: "image too large".into(),
    })?;
    let mut buf = vec![0u8; size];
    let frame = reader.next_frame(&mut buf).map_err(|e| decoding_error(path, e))?;
    let (width, height) = (frame.width as usize, frame.height as usize);
    let mut pixels = Vec::with_capacity(width * height * keep);
    for row in buf[..frame.buffer_size()].chunks_exact(frame.line_size) {
        for px in row[..width * stride].chunks_exact(stride) {
            pixels.extend(px[..keep].iter().map(|&v| f64::from(v)));
        }
    }
    RasterImage::new(height, width, keep, pixels).context(|| path.display().to_string())
}

/// Encodes a 1- or 3-channel image; values are rounded and clamped to [0, 255].
pub fn encode_png(image: &RasterImage) -> Result<Vec<u8>> {
    let color = match image.channels() {
        1 => ColorType::Grayscale,
        3 => ColorType::Rgb,
        n => {
            return Err(Error::Core {
                context: "save_png".into(),
                source: histoseg_core::Error::InvalidImage(format!(
                    "PNG output needs 1 or 3 channels, found {n}"
                )),
            })
        }
    };
    let data: Vec<u8> = image.pixels().iter().map(|&v| to_byte(v)).collect();
    let mut out = Vec::new();
    {
        let mut encoder = Encoder::new(&mut out, image.width() as u32, image.height() as u32);
        encoder.set_color(color);
        encoder.set_depth(BitDepth::Eight);
        encoder.set_compression(Compression::Balanced);
        let encode = |e: png::EncodingError| Error::format(Path::new("<png>"), e);
        let mut writer = encoder.write_header().map_err(encode)?;
        writer.write_image_data(&data).map_err(encode)?;
        writer.finish().map_err(encode)?;
    }
    Ok(out)
}

fn to_byte(v: f64) -> u8 {
    // NaN maps to 0.
    v.round().clamp(0.0, 255.0) as u8
}

pub fn save_png(image: &RasterImage, path: &Path) -> Result<()> {
    let bytes = encode_png(image)?;
    write_file(path, &bytes)
}

/// Masks are written as 0/255 grayscale.
pub fn save_mask(mask: &BinaryMask, path: &Path) -> Result<()> {
    let pixels = mask.bits().iter().map(|&b| if b { 255.0 } else { 0.0 }).collect();
    let image = RasterImage::new(mask.height(), mask.width(), 1, pixels).context(|| "save_mask".into())?;
    save_png(&image, path)
}

/// Writes through a temporary sibling and renames, so readers never see a
/// half-written file.
pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let result = (|| {
        let mut w = BufWriter::new(File::create(&tmp)?);
        w.write_all(bytes)?;
        w.flush()?;
        drop(w);
        std::fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

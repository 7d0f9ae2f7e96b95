//! 8-bit RGB images: the storage form of eye crops, with PNG encode/decode
//! and conversion to the [0, 1]-scaled float tensors the network consumes.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: png decode failed: {detail}")]
    Decode { path: String, detail: String },
    #[error("{path}: png encode failed: {detail}")]
    Encode { path: String, detail: String },
    #[error("{path}: unsupported png format ({detail}); need 8-bit RGB")]
    Unsupported { path: String, detail: String },
    #[error("image dimensions {width}x{height} do not match {len} bytes of RGB data")]
    BadDimensions {
        width: usize,
        height: usize,
        len: usize,
    },
}

/// Interleaved 8-bit RGB image, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EyeImage {
    width: usize,
    height: usize,
    rgb: Vec<u8>,
}

impl EyeImage {
    pub fn new(width: usize, height: usize, rgb: Vec<u8>) -> Result<Self, ImageError> {
        if rgb.len() != width * height * 3 || width == 0 || height == 0 {
            return Err(ImageError::BadDimensions {
                width,
                height,
                len: rgb.len(),
            });
        }
        Ok(EyeImage { width, height, rgb })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn rgb(&self) -> &[u8] {
        &self.rgb
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    /// Planar float tensor of shape `3 x height x width`, values in [0, 1].
    pub fn to_tensor(&self) -> Tensor<f32> {
        let plane = self.width * self.height;
        let mut data = vec![0.0f32; plane * 3];
        for (i, px) in self.rgb.chunks_exact(3).enumerate() {
            data[i] = px[0] as f32 / 255.0;
            data[plane + i] = px[1] as f32 / 255.0;
            data[2 * plane + i] = px[2] as f32 / 255.0;
        }
        Tensor::from_vec(&[3, self.height, self.width], data).unwrap()
    }

    /// Horizontal mirror. Exact and self-inverse.
    pub fn hflip(&self) -> EyeImage {
        let mut rgb = vec![0u8; self.rgb.len()];
        for y in 0..self.height {
            let row = &self.rgb[y * self.width * 3..(y + 1) * self.width * 3];
            let out = &mut rgb[y * self.width * 3..(y + 1) * self.width * 3];
            for x in 0..self.width {
                let src = (self.width - 1 - x) * 3;
                out[x * 3..x * 3 + 3].copy_from_slice(&row[src..src + 3]);
            }
        }
        EyeImage {
            width: self.width,
            height: self.height,
            rgb,
        }
    }

    pub fn load_png(path: &Path) -> Result<Self, ImageError> {
        let display = path.display().to_string();
        let file = File::open(path).map_err(|source| ImageError::Io {
            path: display.clone(),
            source,
        })?;
        let decoder = png::Decoder::new(BufReader::new(file));
        let mut reader = decoder.read_info().map_err(|e| ImageError::Decode {
            path: display.clone(),
            detail: e.to_string(),
        })?;
        let info = reader.info();
        if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
            return Err(ImageError::Unsupported {
                path: display,
                detail: format!("{:?} {:?}", info.color_type, info.bit_depth),
            });
        }
        let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
        let frame = reader.next_frame(&mut buf).map_err(|e| ImageError::Decode {
            path: display.clone(),
            detail: e.to_string(),
        })?;
        let (w, h) = (frame.width as usize, frame.height as usize);
        buf.truncate(frame.buffer_size());
        EyeImage::new(w, h, buf)
    }

    pub fn save_png(&self, path: &Path) -> Result<(), ImageError> {
        let display = path.display().to_string();
        let file = File::create(path).map_err(|source| ImageError::Io {
            path: display.clone(),
            source,
        })?;
        let mut encoder =
            png::Encoder::new(BufWriter::new(file), self.width as u32, self.height as u32);
        encoder.set_color(png::ColorType::Rgb);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder.write_header().map_err(|e| ImageError::Encode {
            path: display.clone(),
            detail: e.to_string(),
        })?;
        writer
            .write_image_data(&self.rgb)
            .map_err(|e| ImageError::Encode {
                path: display,
                detail: e.to_string(),
            })
    }
}

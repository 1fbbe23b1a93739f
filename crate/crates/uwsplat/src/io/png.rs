//! PNG ingestion and emission. Images live in linear float in memory;
//! quantization happens only here.

use std::path::Path;

use image::DynamicImage;
use uwsplat_core::image::RgbImage;

use crate::{AppError, AppResult};

/// Load an 8- or 16-bit PNG, scaling values to [0, 1].
pub fn load_image(path: &Path) -> AppResult<RgbImage> {
    let dynimg = image::open(path).map_err(|source| AppError::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
    let data: Vec<f64> = match dynimg {
        DynamicImage::ImageRgb8(img) => img.into_raw().iter().map(|&v| v as f64 / 255.0).collect(),
        DynamicImage::ImageRgba8(img) => {
            let raw = img.into_raw();
            raw.chunks_exact(4)
                .flat_map(|px| px[..3].iter().map(|&v| v as f64 / 255.0).collect::<Vec<_>>())
                .collect()
        }
        DynamicImage::ImageLuma8(img) => img
            .into_raw()
            .iter()
            .flat_map(|&v| {
                let f = v as f64 / 255.0;
                [f, f, f]
            })
            .collect(),
        DynamicImage::ImageRgb16(img) => img
            .into_raw()
            .iter()
            .map(|&v| v as f64 / 65535.0)
            .collect(),
        DynamicImage::ImageRgba16(img) => {
            let raw = img.into_raw();
            raw.chunks_exact(4)
                .flat_map(|px| {
                    px[..3]
                        .iter()
                        .map(|&v| v as f64 / 65535.0)
                        .collect::<Vec<_>>()
                })
                .collect()
        }
        DynamicImage::ImageLuma16(img) => img
            .into_raw()
            .iter()
            .flat_map(|&v| {
                let f = v as f64 / 65535.0;
                [f, f, f]
            })
            .collect(),
        _ => {
            return Err(AppError::UnsupportedBitDepth {
                path: path.to_path_buf(),
            })
        }
    };
    RgbImage::from_vec(w, h, data).map_err(AppError::Core)
}

/// Save as 8-bit PNG, clamping to [0, 1] and quantizing.
pub fn save_image(img: &RgbImage, path: &Path) -> AppResult<()> {
    let bytes: Vec<u8> = img
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let buf = image::RgbImage::from_raw(img.width() as u32, img.height() as u32, bytes)
        .expect("buffer sized from image");
    buf.save(path).map_err(|source| AppError::Image {
        path: path.to_path_buf(),
        source,
    })
}

//! Image decode, resize and pixel normalization.
//!
//! Any format the `image` crate decodes (PNG and JPEG are compiled in) is
//! resized to the model's 224×224 input with triangle filtering and
//! converted to channel-normalized floats: `(p/255 - mean_c) / std_c`,
//! using the normalization statistics of the pretraining corpus the
//! backbones stem from. Note this is pixel-intensity normalization only;
//! geometric gaze normalization (warping crops into a canonical camera
//! frame) is dataset-side preprocessing this toolkit consumes, not
//! implements.

use crate::error::CliError;
use gazeclip_core::encoder::{ImageTensor, CHANNELS, INPUT_SIZE};
use image::imageops::FilterType;
use image::{DynamicImage, RgbImage};
use std::path::Path;

/// Per-channel means subtracted after scaling pixels to `[0, 1]`.
pub const NORM_MEAN: [f64; 3] = [0.48145466, 0.4578275, 0.40821073];
/// Per-channel standard deviations divided out after mean subtraction.
pub const NORM_STD: [f64; 3] = [0.26862954, 0.26130258, 0.27577711];

/// Decode `path`, resize to the model input size and normalize.
pub fn load_image(path: &Path) -> Result<ImageTensor, CliError> {
    let decoded = open_image(path)?;
    Ok(preprocess(&decoded))
}

/// Decode `path` without resizing (for overlay rendering).
pub fn open_image(path: &Path) -> Result<DynamicImage, CliError> {
    image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => CliError::io("read image", path, io),
        other => CliError::io_msg(format!("cannot decode image `{}`: {other}", path.display())),
    })
}

/// Resize + normalize an already-decoded image.
pub fn preprocess(decoded: &DynamicImage) -> ImageTensor {
    let size = INPUT_SIZE as u32;
    let rgb: RgbImage = if decoded.width() == size && decoded.height() == size {
        decoded.to_rgb8()
    } else {
        decoded.resize_exact(size, size, FilterType::Triangle).to_rgb8()
    };
    let mut data = Vec::with_capacity(INPUT_SIZE * INPUT_SIZE * CHANNELS);
    for pixel in rgb.pixels() {
        for c in 0..CHANNELS {
            let scaled = pixel.0[c] as f64 / 255.0;
            data.push((scaled - NORM_MEAN[c]) / NORM_STD[c]);
        }
    }
    ImageTensor::new(data).expect("resize yields exactly the model input shape")
}

/// Save an RGB image, mapping encode failures to I/O errors.
pub fn save_image(img: &RgbImage, path: &Path) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| CliError::io("create directory", parent, e))?;
        }
    }
    img.save(path).map_err(|e| match e {
        image::ImageError::IoError(io) => CliError::io("write image", path, io),
        other => CliError::io_msg(format!("cannot encode image `{}`: {other}", path.display())),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use gazeclip_core::encoder::IMAGE_LEN;
    use image::Rgb;

    #[test]
    fn constant_image_normalizes_to_the_channel_oracle() {
        let gray = RgbImage::from_pixel(INPUT_SIZE as u32, INPUT_SIZE as u32, Rgb([128, 64, 255]));
        let tensor = preprocess(&DynamicImage::ImageRgb8(gray));
        assert_eq!(tensor.data().len(), IMAGE_LEN);
        let expected: Vec<f64> = [128u8, 64, 255]
            .iter()
            .enumerate()
            .map(|(c, &p)| (p as f64 / 255.0 - NORM_MEAN[c]) / NORM_STD[c])
            .collect();
        for (i, &v) in tensor.data().iter().enumerate() {
            assert_eq!(v, expected[i % 3], "channel {} differs", i % 3);
        }
    }

    #[test]
    fn non_square_sources_are_resized() {
        let mut small = RgbImage::new(64, 32);
        for (x, y, p) in small.enumerate_pixels_mut() {
            *p = Rgb([(x * 4) as u8, (y * 8) as u8, 7]);
        }
        let tensor = preprocess(&DynamicImage::ImageRgb8(small));
        assert_eq!(tensor.data().len(), IMAGE_LEN);
        assert!(tensor.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn png_round_trip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("face.png");
        let img = RgbImage::from_fn(20, 20, |x, y| Rgb([x as u8 * 12, y as u8 * 12, 128]));
        save_image(&img, &path).unwrap();
        let tensor = load_image(&path).unwrap();
        assert_eq!(tensor.data().len(), IMAGE_LEN);
    }

    #[test]
    fn missing_and_corrupt_files_are_io_errors() {
        let dir = tempfile::tempdir().unwrap();
        let missing = load_image(&dir.path().join("nope.png")).unwrap_err();
        assert_eq!(missing.exit_code(), 2, "{missing}");

        let garbage = dir.path().join("bad.png");
        std::fs::write(&garbage, b"not a png at all").unwrap();
        let corrupt = load_image(&garbage).unwrap_err();
        assert_eq!(corrupt.exit_code(), 2, "{corrupt}");
    }
}

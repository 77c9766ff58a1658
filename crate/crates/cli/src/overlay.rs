//! Gaze-ray overlays: draw predicted (and optionally ground-truth) gaze
//! directions onto a face image.
//!
//! Projection rule: the 3D gaze vector `(x, y, z)` derived from
//! pitch/yaw lives in a camera frame with `x` right, `y` down and `z`
//! toward the camera. The overlay drops `z` (orthographic projection)
//! and draws a segment from the image center to
//! `center + 0.4·min(W,H)·(x, y)`. A gaze of pitch = yaw = 0 points
//! straight at the camera (`(0, 0, -1)`), so its projection collapses to
//! a single pixel at the center — the documented degenerate case.
//!
//! The ground-truth ray is drawn first in red, the prediction second in
//! blue, so where they coincide the prediction's color wins.

use crate::error::CliError;
use gazeclip_core::geometry::{angles_to_vector, GazeAngles};
use image::{Rgb, RgbImage};

/// Ray color for ground truth.
pub const TRUTH_COLOR: Rgb<u8> = Rgb([255, 0, 0]);
/// Ray color for predictions.
pub const PRED_COLOR: Rgb<u8> = Rgb([0, 0, 255]);
/// Ray length as a fraction of the smaller image dimension.
pub const RAY_SCALE: f64 = 0.4;

/// Endpoint of a gaze ray from the image center, in pixel coordinates.
///
/// Returns `(x0, y0, x1, y1)` rounded to the nearest pixel; the segment
/// may exit the image (drawing clips per pixel).
pub fn gaze_segment(width: u32, height: u32, gaze: GazeAngles) -> Result<(i64, i64, i64, i64), CliError> {
    let v = angles_to_vector(gaze).map_err(CliError::contract)?;
    let cx = f64::from(width) / 2.0;
    let cy = f64::from(height) / 2.0;
    let scale = RAY_SCALE * f64::from(width.min(height));
    let x1 = cx + scale * v.x;
    let y1 = cy + scale * v.y;
    Ok((cx.round() as i64, cy.round() as i64, x1.round() as i64, y1.round() as i64))
}

/// Paint one pixel if it lies inside the image.
fn plot(img: &mut RgbImage, x: i64, y: i64, color: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, color);
    }
}

/// Classic integer line rasterization between two pixels (inclusive).
pub fn draw_line(img: &mut RgbImage, x0: i64, y0: i64, x1: i64, y1: i64, color: Rgb<u8>) {
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    let (mut x, mut y) = (x0, y0);
    loop {
        plot(img, x, y, color);
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Draw gaze rays onto a copy of `base`: truth (if given) in red first,
/// the prediction in blue on top.
pub fn render_overlay(
    base: &RgbImage,
    pred: GazeAngles,
    truth: Option<GazeAngles>,
) -> Result<RgbImage, CliError> {
    let mut img = base.clone();
    let (w, h) = (img.width(), img.height());
    if let Some(truth) = truth {
        let (x0, y0, x1, y1) = gaze_segment(w, h, truth)?;
        draw_line(&mut img, x0, y0, x1, y1, TRUTH_COLOR);
    }
    let (x0, y0, x1, y1) = gaze_segment(w, h, pred)?;
    draw_line(&mut img, x0, y0, x1, y1, PRED_COLOR);
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;
    use std::f64::consts::FRAC_PI_2;

    fn painted(img: &RgbImage, base: &RgbImage) -> BTreeSet<(u32, u32, [u8; 3])> {
        img.enumerate_pixels()
            .filter(|(x, y, p)| base.get_pixel(*x, *y) != *p)
            .map(|(x, y, p)| (x, y, p.0))
            .collect()
    }

    #[test]
    fn equal_prediction_and_truth_coincide_pixel_for_pixel() {
        let base = RgbImage::from_pixel(100, 80, Rgb([10, 20, 30]));
        let gaze = GazeAngles { pitch: 0.3, yaw: -0.7 };
        let both = render_overlay(&base, gaze, Some(gaze)).unwrap();
        let pred_only = render_overlay(&base, gaze, None).unwrap();
        assert_eq!(both, pred_only, "prediction paints over the identical truth ray");
        let pixels = painted(&both, &base);
        assert!(!pixels.is_empty());
        assert!(pixels.iter().all(|(_, _, c)| *c == [0, 0, 255]), "coincident rays end up blue");
    }

    #[test]
    fn zero_gaze_collapses_to_the_center_pixel() {
        let base = RgbImage::from_pixel(64, 64, Rgb([0, 0, 0]));
        let img = render_overlay(&base, GazeAngles { pitch: 0.0, yaw: 0.0 }, None).unwrap();
        let pixels = painted(&img, &base);
        assert_eq!(pixels.len(), 1);
        let (x, y, c) = *pixels.iter().next().unwrap();
        assert_eq!((x, y), (32, 32));
        assert_eq!(c, [0, 0, 255]);
    }

    #[test]
    fn ninety_degree_truth_draws_a_horizontal_red_ray() {
        let base = RgbImage::from_pixel(100, 100, Rgb([255, 255, 255]));
        // yaw = pi/2 => vector (-1, 0, 0): straight left in the image.
        let truth = GazeAngles { pitch: 0.0, yaw: FRAC_PI_2 };
        let pred = GazeAngles { pitch: 0.0, yaw: 0.0 };
        let img = render_overlay(&base, pred, Some(truth)).unwrap();
        let pixels = painted(&img, &base);
        let reds: Vec<_> = pixels.iter().filter(|(_, _, c)| *c == [255, 0, 0]).collect();
        assert!(reds.iter().all(|(_, y, _)| *y == 50), "horizontal ray stays on the center row");
        let min_x = reds.iter().map(|(x, _, _)| *x).min().unwrap();
        // 0.4 * 100 = 40 pixels long, leftward from the center.
        assert_eq!(min_x, 10);
        // Center pixel is blue: the degenerate prediction drew on top.
        assert_eq!(img.get_pixel(50, 50).0, [0, 0, 255]);
    }

    #[test]
    fn segments_match_independent_projection() {
        let gaze = GazeAngles { pitch: -0.4, yaw: 0.9 };
        let (x0, y0, x1, y1) = gaze_segment(200, 120, gaze).unwrap();
        assert_eq!((x0, y0), (100, 60));
        let expected_x = 100.0 + 0.4 * 120.0 * (-gaze.pitch.cos() * gaze.yaw.sin());
        let expected_y = 60.0 + 0.4 * 120.0 * (-gaze.pitch.sin());
        assert_eq!(x1, expected_x.round() as i64);
        assert_eq!(y1, expected_y.round() as i64);
    }

    #[test]
    fn rays_clip_at_image_borders_without_panicking() {
        let base = RgbImage::from_pixel(10, 10, Rgb([0, 0, 0]));
        for yaw in [-FRAC_PI_2, FRAC_PI_2] {
            for pitch in [-FRAC_PI_2, FRAC_PI_2] {
                let img =
                    render_overlay(&base, GazeAngles { pitch, yaw }, Some(GazeAngles { pitch: 0.1, yaw })).unwrap();
                assert_eq!(img.dimensions(), (10, 10));
            }
        }
        // Non-finite angles are contract errors, not crashes.
        let err = render_overlay(&base, GazeAngles { pitch: f64::NAN, yaw: 0.0 }, None).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }
}

//! Loading manifests together with their referenced images.
//!
//! Image references resolve relative to the manifest file's directory, so
//! a dataset folder can be moved wholesale. Images load in parallel
//! workers; the returned sequence is always in manifest order.

use crate::error::{read_file, resolve_near, CliError};
use crate::imagefile::load_image;
use gazeclip_core::encoder::ImageTensor;
use gazeclip_core::manifest::{parse_manifest, FaceSample};
use gazeclip_core::split::parse_groups;
use rayon::prelude::*;
use std::path::Path;

/// Parse just the manifest rows (no image decoding).
pub fn load_manifest_rows(path: &Path) -> Result<Vec<FaceSample>, CliError> {
    let text = read_file(path)?;
    parse_manifest(&text)
        .map_err(|e| CliError::Contract(format!("{}: {e}", path.display())))
}

/// Load manifest rows plus the image behind every row.
pub fn load_dataset(path: &Path) -> Result<Vec<(FaceSample, ImageTensor)>, CliError> {
    let rows = load_manifest_rows(path)?;
    let images: Vec<ImageTensor> = rows
        .par_iter()
        .map(|row| load_image(&resolve_near(path, &row.image_ref)))
        .collect::<Result<_, _>>()?;
    Ok(rows.into_iter().zip(images).collect())
}

/// Read a subject-groups file: one fold per line, ids whitespace-separated.
pub fn load_groups(path: &Path) -> Result<Vec<Vec<String>>, CliError> {
    let text = read_file(path)?;
    let groups = parse_groups(&text);
    if groups.is_empty() {
        return Err(CliError::Contract(format!(
            "groups file `{}` contains no folds",
            path.display()
        )));
    }
    Ok(groups)
}

#[cfg(test)]
mod tests {
    use super::*;
    use gazeclip_core::encoder::IMAGE_LEN;
    use image::{Rgb, RgbImage};

    fn write_png(path: &Path, shade: u8) {
        let img = RgbImage::from_pixel(16, 16, Rgb([shade, shade / 2, 255 - shade]));
        crate::imagefile::save_image(&img, path).unwrap();
    }

    #[test]
    fn dataset_loads_images_relative_to_the_manifest() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("imgs")).unwrap();
        write_png(&dir.path().join("imgs/a.png"), 10);
        write_png(&dir.path().join("imgs/b.png"), 200);
        let manifest = dir.path().join("faces.csv");
        std::fs::write(
            &manifest,
            "# units: radians\nimage_ref,subject_id,pitch,yaw\nimgs/a.png,s0,0.1,0.2\nimgs/b.png,s1,-0.1,0.0\n",
        )
        .unwrap();
        let data = load_dataset(&manifest).unwrap();
        assert_eq!(data.len(), 2);
        assert_eq!(data[0].0.subject_id, "s0");
        assert_eq!(data[0].1.data().len(), IMAGE_LEN);
        // Different shades decode to different tensors.
        assert_ne!(data[0].1.data()[0], data[1].1.data()[0]);
    }

    #[test]
    fn missing_image_is_an_io_error_with_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = dir.path().join("faces.csv");
        std::fs::write(
            &manifest,
            "# units: radians\nimage_ref,subject_id,pitch,yaw\ngone.png,s0,0.1,0.2\n",
        )
        .unwrap();
        let err = load_dataset(&manifest).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("gone.png"), "{err}");
    }

    #[test]
    fn malformed_manifest_is_a_contract_error_with_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = dir.path().join("faces.csv");
        std::fs::write(
            &manifest,
            "# units: radians\nimage_ref,subject_id,pitch,yaw\na.png,s0,NaN,0.2\n",
        )
        .unwrap();
        let err = load_dataset(&manifest).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn groups_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("groups.txt");
        std::fs::write(&path, "# rt-gene style\ns01 s02\ns03 s04\ns05 s06\n").unwrap();
        let groups = load_groups(&path).unwrap();
        assert_eq!(groups.len(), 3);
        assert_eq!(groups[0], vec!["s01", "s02"]);
        std::fs::write(&path, "\n# only comments\n").unwrap();
        assert_eq!(load_groups(&path).unwrap_err().exit_code(), 1);
    }
}

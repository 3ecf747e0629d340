//! Image to network-input conversion.

use std::path::Path;

use image::imageops::{self, FilterType};
use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-channel means subtracted in BGR order by the caffe-style networks.
pub const BGR_MEANS: [f32; 3] = [103.939, 116.779, 123.68];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preprocessing {
    /// `v / 127.5 - 1`, channels kept in RGB order.
    #[serde(rename = "scale_minus1_1")]
    ScaleMinus1To1,
    /// RGB to BGR, then subtract [`BGR_MEANS`].
    MeanSubtractBgr,
}

impl Preprocessing {
    pub fn as_str(self) -> &'static str {
        match self {
            Preprocessing::ScaleMinus1To1 => "scale_minus1_1",
            Preprocessing::MeanSubtractBgr => "mean_subtract_bgr",
        }
    }
}

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    let img = image::open(path)
        .map_err(|e| Error::MalformedInput(format!("{}: {e}", path.display())))?;
    Ok(img.to_rgb8())
}

/// Resizes (bilinear) to `height x width` and normalizes. The result is an
/// HWC tensor of `height * width * 3` values.
pub fn preprocess(
    image: &RgbImage,
    (height, width): (u32, u32),
    mode: Preprocessing,
) -> Result<Vec<f32>> {
    if image.width() == 0 || image.height() == 0 {
        return Err(Error::MalformedInput("zero-area image".into()));
    }
    if width == 0 || height == 0 {
        return Err(Error::MalformedInput("zero-area target size".into()));
    }
    let resized;
    let img = if image.dimensions() == (width, height) {
        image
    } else {
        resized = imageops::resize(image, width, height, FilterType::Triangle);
        &resized
    };

    let mut out = Vec::with_capacity((width * height * 3) as usize);
    match mode {
        Preprocessing::ScaleMinus1To1 => {
            for px in img.pixels() {
                out.extend(px.0.iter().map(|&v| v as f32 / 127.5 - 1.0));
            }
        }
        Preprocessing::MeanSubtractBgr => {
            for px in img.pixels() {
                let [r, g, b] = px.0;
                out.push(b as f32 - BGR_MEANS[0]);
                out.push(g as f32 - BGR_MEANS[1]);
                out.push(r as f32 - BGR_MEANS[2]);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    fn uniform(w: u32, h: u32, v: [u8; 3]) -> RgbImage {
        RgbImage::from_pixel(w, h, Rgb(v))
    }

    #[test]
    fn scale_bounds() {
        let zeros = preprocess(&uniform(5, 3, [0; 3]), (4, 4), Preprocessing::ScaleMinus1To1).unwrap();
        assert_eq!(zeros.len(), 48);
        assert!(zeros.iter().all(|&v| v == -1.0));
        let full = preprocess(&uniform(2, 9, [255; 3]), (4, 4), Preprocessing::ScaleMinus1To1).unwrap();
        assert!(full.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn gray_mean_subtraction() {
        let out = preprocess(&uniform(3, 3, [128; 3]), (2, 2), Preprocessing::MeanSubtractBgr).unwrap();
        let expected = [24.061f32, 11.221, 4.32];
        for px in out.chunks(3) {
            for (v, e) in px.iter().zip(expected) {
                assert!((v - e).abs() < 1e-4, "{v} vs {e}");
            }
        }
    }

    #[test]
    fn channels_are_reordered_to_bgr() {
        let out = preprocess(&uniform(1, 1, [10, 20, 30]), (1, 1), Preprocessing::MeanSubtractBgr).unwrap();
        assert!((out[0] - (30.0 - BGR_MEANS[0])).abs() < 1e-4);
        assert!((out[2] - (10.0 - BGR_MEANS[2])).abs() < 1e-4);
    }

    #[test]
    fn zero_area_is_malformed() {
        let err = preprocess(&RgbImage::new(0, 4), (2, 2), Preprocessing::ScaleMinus1To1).unwrap_err();
        assert!(matches!(err, Error::MalformedInput(_)));
    }

    #[test]
    fn serde_names() {
        let s = serde_json::to_string(&Preprocessing::ScaleMinus1To1).unwrap();
        assert_eq!(s, "\"scale_minus1_1\"");
        let m: Preprocessing = serde_json::from_str("\"mean_subtract_bgr\"").unwrap();
        assert_eq!(m, Preprocessing::MeanSubtractBgr);
    }
}

use image::imageops::{self, FilterType};
use image::DynamicImage;

use super::frame::{Frame, Provenance, MIN_FRAME_SIDE};
use super::FeatureError;

/// Crop window chosen by [`preprocess`], in resized-image pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CropPlan {
    pub resized: (u32, u32),
    pub offset: (u32, u32),
}

/// Scale so both sides cover the target, then centre-crop the excess.
pub fn crop_plan(width: u32, height: u32, target: (u32, u32)) -> CropPlan {
    let (tw, th) = target;
    let s = f64::max(tw as f64 / width as f64, th as f64 / height as f64);
    let resized = if s == 1.0 {
        (width, height)
    } else {
        (
            ((width as f64 * s).round() as u32).max(tw),
            ((height as f64 * s).round() as u32).max(th),
        )
    };
    CropPlan { resized, offset: ((resized.0 - tw) / 2, (resized.1 - th) / 2) }
}

/// Resizes and centre-crops an image to `target` and converts it to a frame.
///
/// Colour inputs keep a cropped RGB buffer next to the BT.601 gray one.
pub fn preprocess(image: &DynamicImage, target: (u32, u32), index: usize) -> Result<Frame, FeatureError> {
    let (w, h) = (image.width(), image.height());
    if w < MIN_FRAME_SIDE || h < MIN_FRAME_SIDE {
        return Err(FeatureError::TooSmall { width: w, height: h });
    }
    let plan = crop_plan(w, h, target);
    let (tw, th) = target;
    let (ox, oy) = plan.offset;
    if image.color().has_color() {
        let mut rgb = image.to_rgb8();
        if plan.resized != (w, h) {
            rgb = imageops::resize(&rgb, plan.resized.0, plan.resized.1, FilterType::Triangle);
        }
        let cropped = imageops::crop_imm(&rgb, ox, oy, tw, th).to_image();
        Frame::from_rgb(tw, th, cropped.into_raw(), index, Provenance::Input)
    } else {
        let mut gray = image.to_luma8();
        if plan.resized != (w, h) {
            gray = imageops::resize(&gray, plan.resized.0, plan.resized.1, FilterType::Triangle);
        }
        let cropped = imageops::crop_imm(&gray, ox, oy, tw, th).to_image();
        Frame::from_gray(tw, th, cropped.into_raw(), index, Provenance::Input)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{GrayImage, RgbImage};

    const TARGET: (u32, u32) = (512, 320);

    #[test]
    fn exact_double_scales_without_crop() {
        let plan = crop_plan(1024, 640, TARGET);
        assert_eq!(plan, CropPlan { resized: (512, 320), offset: (0, 0) });
        let img = DynamicImage::ImageRgb8(RgbImage::from_pixel(1024, 640, image::Rgb([10, 200, 30])));
        let f = preprocess(&img, TARGET, 0).unwrap();
        assert_eq!((f.width(), f.height()), TARGET);
    }

    #[test]
    fn identity_size_is_untouched() {
        let raw: Vec<u8> = (0..512 * 320).map(|i| (i * 31 % 256) as u8).collect();
        let img = DynamicImage::ImageLuma8(GrayImage::from_raw(512, 320, raw.clone()).unwrap());
        let f = preprocess(&img, TARGET, 0).unwrap();
        assert_eq!(f.gray(), &raw[..]);
        assert!(f.rgb().is_none());
    }

    #[test]
    fn wide_input_crops_width_centrally() {
        // heights already match, so s = max(512/800, 1) = 1 and the crop takes (800-512)/2 per side
        let (w, h) = (800u32, 320u32);
        let oracle_offset = (w - 512) / 2;
        assert_eq!(oracle_offset, 144);
        let plan = crop_plan(w, h, TARGET);
        assert_eq!(plan, CropPlan { resized: (800, 320), offset: (144, 0) });

        let img = GrayImage::from_fn(w, h, |x, y| image::Luma([((x * 3 + y) % 256) as u8]));
        let f = preprocess(&DynamicImage::ImageLuma8(img.clone()), TARGET, 0).unwrap();
        for (x, y) in [(0u32, 0u32), (511, 319), (200, 17)] {
            assert_eq!(f.pixel(x, y), img.get_pixel(x + 144, y)[0]);
        }
    }

    #[test]
    fn tiny_input_is_rejected() {
        let img = DynamicImage::ImageLuma8(GrayImage::new(31, 100));
        assert!(matches!(preprocess(&img, TARGET, 0), Err(FeatureError::TooSmall { .. })));
    }
}

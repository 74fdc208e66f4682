use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;

/// Optional image augmentations. Both only act on `H x W x C` inputs; flat
/// vector inputs pass through unchanged.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Augmentation {
    pub random_crop: bool,
    pub horizontal_flip: bool,
    /// Zero padding on each side before a crop back to the original size.
    pub crop_padding: usize,
}

impl Augmentation {
    pub fn is_active(&self) -> bool {
        self.random_crop || self.horizontal_flip
    }

    /// Augments every row of a batch in place.
    pub fn apply_batch<R: Rng + ?Sized>(&self, inputs: &mut Matrix, shape: &[usize], rng: &mut R) {
        if !self.is_active() || shape.len() != 3 {
            return;
        }
        for i in 0..inputs.rows() {
            self.apply(inputs.row_mut(i), shape, rng);
        }
    }

    pub fn apply<R: Rng + ?Sized>(&self, image: &mut [f64], shape: &[usize], rng: &mut R) {
        let &[h, w, c] = shape else { return };
        debug_assert_eq!(image.len(), h * w * c);
        if self.horizontal_flip && rng.random_bool(0.5) {
            for y in 0..h {
                for x in 0..w / 2 {
                    for ch in 0..c {
                        image.swap((y * w + x) * c + ch, (y * w + (w - 1 - x)) * c + ch);
                    }
                }
            }
        }
        if self.random_crop && self.crop_padding > 0 {
            let pad = self.crop_padding as i64;
            let dy = rng.random_range(-pad..=pad);
            let dx = rng.random_range(-pad..=pad);
            let src = image.to_vec();
            for y in 0..h as i64 {
                for x in 0..w as i64 {
                    let (sy, sx) = (y + dy, x + dx);
                    let inside = sy >= 0 && sy < h as i64 && sx >= 0 && sx < w as i64;
                    for ch in 0..c {
                        let dst = ((y as usize) * w + x as usize) * c + ch;
                        image[dst] = if inside {
                            src[((sy as usize) * w + sx as usize) * c + ch]
                        } else {
                            0.0
                        };
                    }
                }
            }
        }
    }
}

//! Binary layer masks and their convolution features.
//!
//! Every layer of a model is rasterized into the same frame, the model's XY
//! bounding rectangle, so masks of different layers are pixel-aligned. Row 0
//! holds the top of the frame (maximum y); a pixel is set when its center
//! lies inside an odd number of loop windings.

use super::{point_in_polygons, Layer, SlicerError, SlicerResult};
use crate::mesh::BoundingBox;
use nalgebra::Point2;
use serde::{Deserialize, Serialize};

/// Binary mask of one layer inside the shared model frame.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Lcm {
    pub resolution: usize,
    /// Row-major, row 0 at maximum y; values 0 or 1.
    pub mask: Vec<u8>,
    /// Frame origin (minimum x, minimum y) in mm.
    pub origin: [f64; 2],
    /// Pixel pitch in mm per pixel, x then y.
    pub pitch: [f64; 2],
}

impl Lcm {
    pub fn pixel(&self, row: usize, col: usize) -> u8 {
        self.mask[row * self.resolution + col]
    }

    /// Fraction of set pixels.
    pub fn fill_fraction(&self) -> f64 {
        if self.mask.is_empty() {
            return 0.0;
        }
        self.mask.iter().map(|&p| p as f64).sum::<f64>() / self.mask.len() as f64
    }

    /// Solid area implied by the mask: set pixels times pixel area.
    pub fn pixel_area(&self) -> f64 {
        self.mask.iter().map(|&p| p as f64).sum::<f64>() * self.pitch[0] * self.pitch[1]
    }

    /// Convolution response of one 3x3 kernel: unit stride, zero padding,
    /// same size as the mask.
    pub fn convolve(&self, kernel: &[[f64; 3]; 3]) -> Vec<f64> {
        let n = self.resolution as isize;
        let mut out = vec![0.0; self.mask.len()];
        for r in 0..n {
            for c in 0..n {
                let mut acc = 0.0;
                for kr in -1..=1isize {
                    for kc in -1..=1isize {
                        let rr = r + kr;
                        let cc = c + kc;
                        if rr < 0 || rr >= n || cc < 0 || cc >= n {
                            continue;
                        }
                        let value = self.mask[(rr * n + cc) as usize] as f64;
                        acc += value * kernel[(kr + 1) as usize][(kc + 1) as usize];
                    }
                }
                out[(r * n + c) as usize] = acc;
            }
        }
        out
    }

    /// Summary of the multi-scale convolution stack: mean and root mean
    /// square of each standard kernel response, then the fill fraction.
    /// Nine numbers in kernel order box, laplacian, sobel-x, sobel-y.
    pub fn feature_summary(&self) -> [f64; 9] {
        let mut features = [0.0; 9];
        for (k, (_, kernel)) in standard_kernels().iter().enumerate() {
            let response = self.convolve(kernel);
            let n = response.len() as f64;
            let mean = response.iter().sum::<f64>() / n;
            let rms = (response.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
            features[2 * k] = mean;
            features[2 * k + 1] = rms;
        }
        features[8] = self.fill_fraction();
        features
    }
}

/// The fixed 3x3 kernel set used for layer features: smoothing, boundary
/// response and the two gradient directions.
pub fn standard_kernels() -> [(&'static str, [[f64; 3]; 3]); 4] {
    let w = 1.0 / 9.0;
    [
        ("box", [[w; 3]; 3]),
        (
            "laplacian",
            [[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]],
        ),
        (
            "sobel-x",
            [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]],
        ),
        (
            "sobel-y",
            [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]],
        ),
    ]
}

/// Rasterizes a layer into the shared model frame.
pub fn rasterize_lcm(layer: &Layer, frame: &BoundingBox, resolution: usize) -> SlicerResult<Lcm> {
    if resolution < 8 {
        return Err(SlicerError::TooCoarse(resolution));
    }
    let strokes = frame.strokes();
    let pitch = [
        strokes.x / resolution as f64,
        strokes.y / resolution as f64,
    ];
    let mut mask = vec![0u8; resolution * resolution];
    for row in 0..resolution {
        let y = frame.max.y - (row as f64 + 0.5) * pitch[1];
        for col in 0..resolution {
            let x = frame.min.x + (col as f64 + 0.5) * pitch[0];
            if point_in_polygons(&Point2::new(x, y), &layer.polygons) {
                mask[row * resolution + col] = 1;
            }
        }
    }
    Ok(Lcm {
        resolution,
        mask,
        origin: [frame.min.x, frame.min.y],
        pitch,
    })
}

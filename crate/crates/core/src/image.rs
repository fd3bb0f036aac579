//! Image tensors and PNG I/O.
//!
//! Images live in `[-1, 1]` internally and are scaled symmetrically to 8-bit
//! at the file boundary.

use std::path::Path;

use ndarray::Array3;

use crate::error::{Error, Result};

/// An `H×W×3` image with every entry in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor(Array3<f64>);

impl ImageTensor {
    pub fn new(data: Array3<f64>) -> Result<Self> {
        if data.shape()[2] != 3 {
            return Err(Error::ShapeMismatch {
                context: "image channels",
                expected: vec![data.shape()[0], data.shape()[1], 3],
                actual: data.shape().to_vec(),
            });
        }
        if let Some(v) = data.iter().find(|v| !(v.is_finite() && (-1.0..=1.0).contains(*v))) {
            return Err(Error::numerical(format!("image value {v} outside [-1, 1]"), None));
        }
        Ok(Self(data))
    }

    /// Clamps into `[-1, 1]`; NaN entries are rejected.
    pub fn from_clamped(data: Array3<f64>) -> Result<Self> {
        if data.iter().any(|v| v.is_nan()) {
            return Err(Error::numerical("NaN in decoded image", None));
        }
        Self::new(data.mapv(|v| v.clamp(-1.0, 1.0)))
    }

    pub fn height(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.height(), self.width(), 3]
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array3<f64> {
        self.0
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::format(path, e))?.to_rgb8();
        let (w, h) = img.dimensions();
        let data = Array3::from_shape_fn((h as usize, w as usize, 3), |(y, x, c)| {
            f64::from(img.get_pixel(x as u32, y as u32)[c]) / 127.5 - 1.0
        });
        Self::new(data)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let (h, w) = (self.height() as u32, self.width() as u32);
        let buf = image::RgbImage::from_fn(w, h, |x, y| {
            let px = |c: usize| to_u8(self.0[[y as usize, x as usize, c]]);
            image::Rgb([px(0), px(1), px(2)])
        });
        buf.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::format(path, e))
    }
}

fn to_u8(v: f64) -> u8 {
    ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

/// Soft centered ellipse in `[0, 1]`, roughly covering an aligned face crop.
pub fn soft_ellipse(height: usize, width: usize) -> ndarray::Array2<f64> {
    let (cy, cx) = (height as f64 / 2.0, width as f64 / 2.0);
    let (ry, rx) = (0.38 * height as f64, 0.30 * width as f64);
    ndarray::Array2::from_shape_fn((height, width), |(i, j)| {
        let dy = (i as f64 + 0.5 - cy) / ry;
        let dx = (j as f64 + 0.5 - cx) / rx;
        let r2 = dy * dy + dx * dx;
        1.0 / (1.0 + (-8.0 * (1.0 - r2)).exp())
    })
}

/// Deterministic synthetic face-like test image: a shaded oval with eyes and
/// a mouth over a gradient background. `variant` perturbs the layout.
pub fn synthetic_face(height: usize, width: usize, variant: u64) -> ImageTensor {
    let shift = (variant % 7) as f64 / 7.0 - 0.5;
    let skin = [0.55 + 0.1 * shift, 0.25, 0.05 - 0.1 * shift];
    let mask = soft_ellipse(height, width);
    let data = Array3::from_shape_fn((height, width, 3), |(i, j, c)| {
        let u = (i as f64 + 0.5) / height as f64;
        let v = (j as f64 + 0.5) / width as f64;
        let background = -0.6 + 0.5 * v + 0.2 * (c as f64 - 1.0) * u;
        let mut face = skin[c] + 0.15 * (0.5 - u);
        let eye = |cy: f64, cx: f64| {
            let d2 = ((u - cy) / 0.05).powi(2) + ((v - cx) / 0.07).powi(2);
            (-d2).exp()
        };
        let eyes = eye(0.40, 0.38 + 0.02 * shift) + eye(0.40, 0.62 + 0.02 * shift);
        let mouth = (-(((u - 0.68) / 0.03).powi(2) + ((v - 0.5) / (0.12 + 0.03 * shift)).powi(2))).exp();
        face -= 0.9 * eyes + 0.6 * mouth * if c == 0 { 0.3 } else { 1.0 };
        let m = mask[[i, j]];
        (m * face + (1.0 - m) * background).clamp(-1.0, 1.0)
    });
    ImageTensor(data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range() {
        assert!(ImageTensor::new(Array3::from_elem((2, 2, 3), 1.5)).is_err());
        assert!(ImageTensor::new(Array3::zeros((2, 2, 4))).is_err());
        let clamped = ImageTensor::from_clamped(Array3::from_elem((2, 2, 3), 1.5)).unwrap();
        assert!(clamped.data().iter().all(|v| *v == 1.0));
    }

    #[test]
    fn png_roundtrip_is_quantized() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("face.png");
        let img = synthetic_face(16, 12, 3);
        img.save_png(&path).unwrap();
        let back = ImageTensor::load_png(&path).unwrap();
        assert_eq!(back.shape(), [16, 12, 3]);
        let max_err = img
            .data()
            .iter()
            .zip(back.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_err <= 1.0 / 255.0 + 1e-12);
    }

    #[test]
    fn ellipse_in_unit_range() {
        let m = soft_ellipse(32, 32);
        assert!(m.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(m[[16, 16]] > 0.99);
        assert!(m[[0, 0]] < 0.01);
    }
}

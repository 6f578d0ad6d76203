use crate::error::{Error, Result};
use crate::raster::MultiBandRaster;

/// Per-pixel feature vectors, pixel-major: `data[(j * W + i) * dims + d]`.
///
/// For `C` bands the `3C` features are the raw values, then the window
/// means, then the window population standard deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    dims: usize,
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn dims(&self) -> usize {
        self.dims
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn pixel(&self, p: usize) -> &[f64] {
        &self.data[p * self.dims..(p + 1) * self.dims]
    }
    pub fn get(&self, d: usize, i: usize, j: usize) -> f64 {
        self.data[(j * self.width + i) * self.dims + d]
    }
}

pub fn feature_dims(bands: usize) -> usize {
    3 * bands
}

/// Raw value, local mean and local standard deviation per band over an odd
/// `window`; windows are clipped at the borders.
pub fn extract_features(image: &MultiBandRaster, window: usize) -> Result<FeatureMap> {
    if window % 2 == 0 {
        return Err(Error::config("window", format!("must be odd, got {window}")));
    }
    let (c, w, h) = (image.bands(), image.width(), image.height());
    let dims = feature_dims(c);
    let r = window / 2;
    let mut data = vec![0.0; w * h * dims];
    // integral images of (x - ref) and (x - ref)^2; the shift keeps constant
    // windows at exactly zero variance
    let stride = w + 1;
    let mut s1 = vec![0.0f64; stride * (h + 1)];
    let mut s2 = vec![0.0f64; stride * (h + 1)];
    for b in 0..c {
        let band = image.band(b);
        let reference = band[0] as f64;
        for j in 0..h {
            let (mut row1, mut row2) = (0.0, 0.0);
            for i in 0..w {
                let d = band[j * w + i] as f64 - reference;
                row1 += d;
                row2 += d * d;
                s1[(j + 1) * stride + i + 1] = s1[j * stride + i + 1] + row1;
                s2[(j + 1) * stride + i + 1] = s2[j * stride + i + 1] + row2;
            }
        }
        let rect = |s: &[f64], x0: usize, y0: usize, x1: usize, y1: usize| {
            s[y1 * stride + x1] - s[y0 * stride + x1] - s[y1 * stride + x0] + s[y0 * stride + x0]
        };
        for j in 0..h {
            let (y0, y1) = (j.saturating_sub(r), (j + r + 1).min(h));
            for i in 0..w {
                let (x0, x1) = (i.saturating_sub(r), (i + r + 1).min(w));
                let n = ((y1 - y0) * (x1 - x0)) as f64;
                let m = rect(&s1, x0, y0, x1, y1) / n;
                let var = (rect(&s2, x0, y0, x1, y1) / n - m * m).max(0.0);
                let px = &mut data[(j * w + i) * dims..(j * w + i + 1) * dims];
                px[b] = band[j * w + i] as f64;
                px[c + b] = m + reference;
                px[2 * c + b] = var.sqrt();
            }
        }
    }
    Ok(FeatureMap {
        dims,
        width: w,
        height: h,
        data,
    })
}

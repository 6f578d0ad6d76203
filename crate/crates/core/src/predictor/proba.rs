use crate::error::{Error, Result};
use crate::raster::Region;

/// Simplex tolerance applied when adopting externally produced probabilities.
pub const SIMPLEX_TOLERANCE: f64 = 1e-4;

/// Per-pixel class-membership probabilities, `K×W×H`, class-sequential.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    num_classes: usize,
    width: usize,
    height: usize,
    probs: Vec<f64>,
}

impl ProbabilityMap {
    /// Per-pixel softmax of class-sequential logits.
    pub fn from_logits(num_classes: usize, width: usize, height: usize, logits: &[f64]) -> Result<Self> {
        let n = width * height;
        if logits.len() != num_classes * n || num_classes == 0 || n == 0 {
            return Err(Error::Dimension(format!(
                "{} logits for {num_classes}x{width}x{height}",
                logits.len()
            )));
        }
        let mut probs = vec![0.0; logits.len()];
        let mut row = vec![0.0; num_classes];
        for p in 0..n {
            for (k, r) in row.iter_mut().enumerate() {
                *r = logits[k * n + p];
            }
            softmax_in_place(&mut row);
            for (k, r) in row.iter().enumerate() {
                probs[k * n + p] = *r;
            }
        }
        Ok(Self {
            num_classes,
            width,
            height,
            probs,
        })
    }

    /// Adopts single-precision probabilities: every pixel must be within
    /// `tolerance` of the simplex and is then renormalized to sum to one.
    pub fn from_f32(num_classes: usize, width: usize, height: usize, data: &[f32], tolerance: f64) -> Result<Self> {
        let n = width * height;
        if data.len() != num_classes * n || num_classes == 0 || n == 0 {
            return Err(Error::Dimension(format!(
                "{} probabilities for {num_classes}x{width}x{height}",
                data.len()
            )));
        }
        let mut probs: Vec<f64> = data.iter().map(|&v| v as f64).collect();
        for p in 0..n {
            let mut sum = 0.0;
            for k in 0..num_classes {
                let v = probs[k * n + p];
                if !v.is_finite() || v < -tolerance {
                    return Err(Error::Protocol(format!("pixel {p}: probability {v} off the simplex")));
                }
                sum += v.max(0.0);
            }
            if (sum - 1.0).abs() > tolerance {
                return Err(Error::Protocol(format!("pixel {p}: probabilities sum to {sum}")));
            }
            for k in 0..num_classes {
                let v = &mut probs[k * n + p];
                *v = v.max(0.0) / sum;
            }
        }
        Ok(Self {
            num_classes,
            width,
            height,
            probs,
        })
    }

    /// Uniform probabilities everywhere.
    pub fn uniform(num_classes: usize, width: usize, height: usize) -> Self {
        Self {
            num_classes,
            width,
            height,
            probs: vec![1.0 / num_classes as f64; num_classes * width * height],
        }
    }

    /// Rounds through single precision and renormalizes, the same path a
    /// remote predictor's output takes.
    pub fn to_wire_precision(&self) -> Result<Self> {
        let f: Vec<f32> = self.probs.iter().map(|&v| v as f32).collect();
        Self::from_f32(self.num_classes, self.width, self.height, &f, SIMPLEX_TOLERANCE)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn get(&self, k: usize, i: usize, j: usize) -> f64 {
        self.probs[(k * self.height + j) * self.width + i]
    }

    /// Most probable class per pixel; ties go to the lowest class id.
    pub fn argmax(&self) -> Vec<u8> {
        let n = self.width * self.height;
        (0..n)
            .map(|p| {
                let mut best = 0;
                for k in 1..self.num_classes {
                    if self.probs[k * n + p] > self.probs[best * n + p] {
                        best = k;
                    }
                }
                best as u8
            })
            .collect()
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Per-pixel predictive entropy in nats.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl EntropyMap {
    pub fn from_vec(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::Dimension(format!(
                "{} entropies for {width}x{height}",
                values.len()
            )));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Domain("entropies must be finite and non-negative".into()));
        }
        Ok(Self { width, height, values })
    }

    /// Constant map; `constant(w, h, 1.0)` turns uncertainty scoring into
    /// coverage scoring.
    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            values: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.width + i]
    }

    pub fn crop(&self, r: &Region) -> Result<Self> {
        r.check_within(self.width, self.height)?;
        let mut values = Vec::with_capacity(r.area());
        for j in r.y0..r.y0 + r.h {
            values.extend_from_slice(&self.values[j * self.width + r.x0..j * self.width + r.x0 + r.w]);
        }
        Ok(Self {
            width: r.w,
            height: r.h,
            values,
        })
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            width: self.width,
            height: self.height,
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }
}

/// `H = -Σ p ln p` per pixel with `0 ln 0 = 0`.
pub fn entropy_map(p: &ProbabilityMap) -> EntropyMap {
    let n = p.width * p.height;
    let values = (0..n)
        .map(|px| {
            let h: f64 = (0..p.num_classes)
                .map(|k| p.probs[k * n + px])
                .filter(|&v| v > 0.0)
                .map(|v| -v * v.ln())
                .sum();
            h.max(0.0)
        })
        .collect();
    EntropyMap {
        width: p.width,
        height: p.height,
        values,
    }
}

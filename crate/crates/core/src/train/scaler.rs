use serde::{Deserialize, Serialize};

/// Which statistics a scaler is fitted with.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalerKind {
    ZScore,
    MinMaxUnit,
    #[default]
    Identity,
}

/// Per-column affine map `(v - shift) / scale`.
///
/// Constant columns are given `scale = 1` so the map stays invertible.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub kind: ScalerKind,
    /// Mean (z-score) or minimum (min-max) per column.
    #[serde(default)]
    pub shift: Vec<f64>,
    /// Standard deviation (z-score) or range (min-max) per column.
    #[serde(default)]
    pub scale: Vec<f64>,
}

impl Scaler {
    pub fn identity() -> Self {
        Scaler::default()
    }

    /// Fits per-column statistics of a row-major `n x d` matrix.
    pub fn fit(kind: ScalerKind, data: &[f64], d: usize) -> Self {
        if kind == ScalerKind::Identity || d == 0 || data.is_empty() {
            return Scaler {
                kind: ScalerKind::Identity,
                ..Scaler::default()
            };
        }
        let n = data.len() / d;
        let column = |c: usize| data.iter().skip(c).step_by(d).copied();
        let mut shift = Vec::with_capacity(d);
        let mut scale = Vec::with_capacity(d);
        for c in 0..d {
            let (s, k) = match kind {
                ScalerKind::ZScore => {
                    let mean = column(c).sum::<f64>() / n as f64;
                    let var = column(c).map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
                    (mean, var.sqrt())
                }
                ScalerKind::MinMaxUnit => {
                    let lo = column(c).fold(f64::INFINITY, f64::min);
                    let hi = column(c).fold(f64::NEG_INFINITY, f64::max);
                    (lo, hi - lo)
                }
                ScalerKind::Identity => unreachable!(),
            };
            shift.push(s);
            scale.push(if k > 0.0 && k.is_finite() { k } else { 1.0 });
        }
        Scaler { kind, shift, scale }
    }

    /// Fixed statistics applied to every column, e.g. MNIST pixel constants.
    pub fn constant(shift: f64, scale: f64, d: usize) -> Self {
        Scaler {
            kind: ScalerKind::ZScore,
            shift: vec![shift; d],
            scale: vec![scale; d],
        }
    }

    pub fn is_identity(&self) -> bool {
        self.kind == ScalerKind::Identity
    }

    pub fn transform_row(&self, row: &[f64]) -> Vec<f64> {
        let mut out = row.to_vec();
        self.transform_row_in_place(&mut out);
        out
    }

    pub fn transform_row_in_place(&self, row: &mut [f64]) {
        if self.is_identity() {
            return;
        }
        for ((v, s), k) in row.iter_mut().zip(&self.shift).zip(&self.scale) {
            *v = (*v - s) / k;
        }
    }

    pub fn inverse_row_in_place(&self, row: &mut [f64]) {
        if self.is_identity() {
            return;
        }
        for ((v, s), k) in row.iter_mut().zip(&self.shift).zip(&self.scale) {
            *v = *v * k + s;
        }
    }

    /// Transforms a row-major matrix whose rows have `self.shift.len()` columns.
    pub fn transform(&self, data: &[f64]) -> Vec<f64> {
        if self.is_identity() {
            return data.to_vec();
        }
        let d = self.shift.len();
        let mut out = data.to_vec();
        for row in out.chunks_exact_mut(d) {
            self.transform_row_in_place(row);
        }
        out
    }

    pub fn inverse(&self, data: &[f64]) -> Vec<f64> {
        if self.is_identity() {
            return data.to_vec();
        }
        let d = self.shift.len();
        let mut out = data.to_vec();
        for row in out.chunks_exact_mut(d) {
            self.inverse_row_in_place(row);
        }
        out
    }

    /// Multiplier converting a squared error measured in this scaler's
    /// units for column `c` back to raw units.
    pub fn squared_unit(&self, c: usize) -> f64 {
        if self.is_identity() {
            1.0
        } else {
            self.scale[c] * self.scale[c]
        }
    }
}

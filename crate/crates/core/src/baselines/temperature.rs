use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const T_MIN: f64 = 0.01;
const T_MAX: f64 = 100.0;
const GRID_POINTS: usize = 401;

/// Post-hoc calibration by a single positive temperature. Dividing logits by
/// a positive scalar never changes a row's argmax.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureScaler {
    pub temperature: f64,
}

impl Default for TemperatureScaler {
    fn default() -> Self {
        Self::identity()
    }
}

impl TemperatureScaler {
    pub fn identity() -> Self {
        Self { temperature: 1.0 }
    }

    pub fn new(temperature: f64) -> Result<Self> {
        if temperature > 0.0 && temperature.is_finite() {
            Ok(Self { temperature })
        } else {
            Err(Error::invalid(format!("temperature {temperature} must be positive")))
        }
    }

    pub fn apply(&self, logits: ArrayView2<'_, f64>) -> Array2<f64> {
        logits.mapv(|z| z / self.temperature)
    }
}

/// Mean negative log-likelihood of `logits / t`.
pub fn scaled_nll(logits: ArrayView2<'_, f64>, labels: &[usize], t: f64) -> f64 {
    let mut total = 0.0;
    for (row, &y) in logits.rows().into_iter().zip(labels) {
        let zy = row[y];
        let max = row.iter().map(|&z| (z - zy) / t).fold(f64::NEG_INFINITY, f64::max);
        let nll = if max <= 0.0 {
            // y attains the max: log(1 + Σ_{k≠y} e^{d_k}) keeps tiny losses exact
            let rest: f64 = row
                .iter()
                .enumerate()
                .filter(|&(k, _)| k != y)
                .map(|(_, &z)| ((z - zy) / t).exp())
                .sum();
            rest.ln_1p()
        } else {
            max + row.iter().map(|&z| ((z - zy) / t - max).exp()).sum::<f64>().ln()
        };
        total += nll;
    }
    total / labels.len() as f64
}

/// Fits the temperature minimizing validation NLL on [0.01, 100]: a
/// log-spaced grid followed by golden-section refinement around the best
/// grid point. Ties go to the smaller temperature.
pub fn fit_temperature(val_logits: ArrayView2<'_, f64>, val_labels: &[usize]) -> Result<TemperatureScaler> {
    let (m, c) = val_logits.dim();
    if m == 0 {
        return Err(Error::Degenerate("temperature fit needs at least one sample".into()));
    }
    if val_labels.len() != m {
        return Err(Error::shape("val_labels", format!("{} labels for {m} rows", val_labels.len())));
    }
    if let Some(&y) = val_labels.iter().find(|&&y| y >= c) {
        return Err(Error::InvalidLabel {
            label: y as i64,
            classes: c,
        });
    }
    if val_labels.iter().all(|&y| y == val_labels[0]) {
        return Err(Error::Degenerate(
            "temperature fit needs at least two classes present in validation labels".into(),
        ));
    }
    let nll = |log_t: f64| scaled_nll(val_logits, val_labels, log_t.exp());
    let (lo, hi) = (T_MIN.ln(), T_MAX.ln());
    let step = (hi - lo) / (GRID_POINTS - 1) as f64;
    let grid: Vec<f64> = (0..GRID_POINTS)
        .map(|i| if i == GRID_POINTS - 1 { hi } else { lo + step * i as f64 })
        .collect();
    let values: Vec<f64> = grid.iter().map(|&g| nll(g)).collect();
    let mut best = 0;
    for i in 1..GRID_POINTS {
        if values[i] < values[best] {
            best = i;
        }
    }
    let mut candidates = vec![(grid[best], values[best])];
    let a0 = grid[best.saturating_sub(1)];
    let b0 = grid[(best + 1).min(GRID_POINTS - 1)];
    if b0 > a0 {
        let x = golden_section(&nll, a0, b0, 1e-10);
        candidates.push((x, nll(x)));
    }
    let (log_t, _) = candidates
        .into_iter()
        .fold((f64::NAN, f64::INFINITY), |acc, (x, v)| {
            if v < acc.1 || (v == acc.1 && x < acc.0) {
                (x, v)
            } else {
                acc
            }
        });
    let t = if log_t <= lo {
        T_MIN
    } else if log_t >= hi {
        T_MAX
    } else {
        log_t.exp()
    };
    TemperatureScaler::new(t)
}

fn golden_section(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd {
        c
    } else {
        d
    }
}

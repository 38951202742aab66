//! Binned performance distributions and KL divergence (in bits).

use serde::{Deserialize, Serialize};

use crate::error::{GeoBiasError, Result};
use crate::map::BinLayout;

/// Counts of marks per bin together with their normalized probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct PerformanceHistogram {
    layout: BinLayout,
    counts: Vec<u64>,
    probs: Vec<f64>,
}

impl PerformanceHistogram {
    pub fn layout(&self) -> &BinLayout {
        &self.layout
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Histogram with explicit probabilities (counts left at zero). Used when
    /// a distribution comes from elsewhere, e.g. tests.
    pub fn from_probs(layout: BinLayout, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != layout.bin_count() {
            return Err(GeoBiasError::Layout);
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(GeoBiasError::InvalidParameter(
                "probabilities must be finite and >= 0".into(),
            ));
        }
        let counts = vec![0; probs.len()];
        Ok(Self {
            layout,
            counts,
            probs,
        })
    }
}

/// Bins `values` over `layout`.
pub fn histogram(
    values: impl IntoIterator<Item = f64>,
    layout: &BinLayout,
) -> Result<PerformanceHistogram> {
    let mut counts = vec![0u64; layout.bin_count()];
    for v in values {
        counts[layout.bin_of(v)?] += 1;
    }
    Ok(from_counts(layout.clone(), counts))
}

fn from_counts(layout: BinLayout, counts: Vec<u64>) -> PerformanceHistogram {
    let total: u64 = counts.iter().sum();
    let probs = if total == 0 {
        vec![0.0; counts.len()]
    } else {
        counts.iter().map(|&c| c as f64 / total as f64).collect()
    };
    PerformanceHistogram {
        layout,
        counts,
        probs,
    }
}

/// Additive (Laplace) smoothing: `p_j = (c_j + alpha) / (N + alpha * H)`.
/// `alpha = 0` returns the raw normalized counts.
pub fn smooth(h: &PerformanceHistogram, alpha: f64) -> Result<PerformanceHistogram> {
    if !alpha.is_finite() || alpha < 0.0 {
        return Err(GeoBiasError::InvalidParameter(format!(
            "smoothing alpha {alpha} must be >= 0"
        )));
    }
    if alpha == 0.0 {
        return Ok(from_counts(h.layout.clone(), h.counts.clone()));
    }
    let denom = h.total() as f64 + alpha * h.counts.len() as f64;
    let probs = h
        .counts
        .iter()
        .map(|&c| (c as f64 + alpha) / denom)
        .collect();
    Ok(PerformanceHistogram {
        layout: h.layout.clone(),
        counts: h.counts.clone(),
        probs,
    })
}

/// `sum_j p_j log2(p_j / q_j)`, with `0 log 0 = 0`.
pub fn kl_divergence(p: &PerformanceHistogram, q: &PerformanceHistogram) -> Result<f64> {
    if p.layout != q.layout {
        return Err(GeoBiasError::Layout);
    }
    let mut total = 0.0;
    for (j, (&pj, &qj)) in p.probs.iter().zip(&q.probs).enumerate() {
        if pj == 0.0 {
            continue;
        }
        if qj == 0.0 {
            return Err(GeoBiasError::DivergenceUndefined { bin: j });
        }
        total += pj * (pj / qj).log2();
    }
    Ok(total.max(0.0))
}

/// Argument order used when comparing the ROI and patch distributions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlOrder {
    /// `D_KL(h(N) || h(P_k))`: the ROI distribution against each patch.
    #[default]
    RoiToPatch,
    /// `D_KL(h(P_k) || h(N))`: each patch against the ROI distribution.
    PatchToRoi,
}

impl KlOrder {
    pub fn divergence(
        self,
        roi: &PerformanceHistogram,
        patch: &PerformanceHistogram,
    ) -> Result<f64> {
        match self {
            Self::RoiToPatch => kl_divergence(roi, patch),
            Self::PatchToRoi => kl_divergence(patch, roi),
        }
    }
}

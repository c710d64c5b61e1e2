use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-layer reservoir settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LayerSpec {
    /// State dimension.
    pub n_h: usize,
    /// Principal components passed to the next layer (ignored for the last layer).
    pub n_reduced: usize,
    /// Spectral scale of the transition matrix.
    pub nu: f64,
    /// Width of the uniform distribution for transition weights.
    pub eta_w: f64,
    /// Width of the uniform distribution for input weights.
    pub eta_in: f64,
    /// Density of the transition matrix.
    pub pi_w: f64,
    /// Density of the input matrix.
    pub pi_in: f64,
}

impl Default for LayerSpec {
    fn default() -> Self {
        Self {
            n_h: 2500,
            n_reduced: 2500,
            nu: 0.9,
            eta_w: 0.05,
            eta_in: 0.01,
            pi_w: 0.1,
            pi_in: 0.01,
        }
    }
}

/// Full set of echo state network hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EsnHyperParams {
    pub layers: Vec<LayerSpec>,
    /// Number of lagged observation vectors in the input.
    pub m: usize,
    /// Lag stride in time steps.
    pub tau: usize,
    /// Leaking rate.
    pub alpha: f64,
    /// Ridge penalty of the readout.
    pub lambda: f64,
    /// Origins between readout refits in batch mode.
    pub batch: usize,
    /// Number of independently drawn reservoirs.
    pub ensemble: usize,
    /// Discarded transient; `None` means `max(50, m * tau)`.
    pub burn_in: Option<usize>,
}

impl Default for EsnHyperParams {
    fn default() -> Self {
        Self {
            layers: vec![LayerSpec::default()],
            m: 1,
            tau: 1,
            alpha: 1.0,
            lambda: 0.15,
            batch: 75,
            ensemble: 1,
            burn_in: None,
        }
    }
}

impl EsnHyperParams {
    /// Single-layer network with the given state size and otherwise default settings.
    pub fn single(n_h: usize) -> Self {
        Self {
            layers: vec![LayerSpec {
                n_h,
                n_reduced: n_h,
                ..LayerSpec::default()
            }],
            ..Self::default()
        }
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn burn_in(&self) -> usize {
        self.burn_in.unwrap_or_else(|| 50.max(self.m * self.tau))
    }

    /// Width of the stacked state vector before squaring.
    pub fn state_width(&self) -> usize {
        let d = self.layers.len();
        self.layers[d - 1].n_h + self.layers[..d - 1].iter().map(|l| l.n_reduced).sum::<usize>()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Argument(msg));
        if self.layers.is_empty() {
            return bad("at least one reservoir layer is required".into());
        }
        for (d, l) in self.layers.iter().enumerate() {
            if l.n_h == 0 {
                return bad(format!("layer {d}: n_h must be positive"));
            }
            if d + 1 < self.layers.len() && (l.n_reduced == 0 || l.n_reduced > l.n_h) {
                return bad(format!("layer {d}: n_reduced must be in 1..={}", l.n_h));
            }
            if !(l.pi_w >= 0.0 && l.pi_w <= 1.0) {
                return bad(format!("layer {d}: pi_w must be in [0, 1]"));
            }
            if !(l.pi_in >= 0.0 && l.pi_in <= 1.0) {
                return bad(format!("layer {d}: pi_in must be in [0, 1]"));
            }
            if !(l.eta_w > 0.0 && l.eta_in > 0.0) {
                return bad(format!("layer {d}: widths must be positive"));
            }
            if !(l.nu >= 0.0 && l.nu.is_finite()) {
                return bad(format!("layer {d}: nu must be finite and non-negative"));
            }
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad(format!("leaking rate must be in (0, 1], got {}", self.alpha));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("ridge penalty must be >= 0, got {}", self.lambda));
        }
        if self.tau == 0 {
            return bad("tau must be at least 1".into());
        }
        if self.batch == 0 {
            return bad("batch window must be at least 1".into());
        }
        if self.ensemble == 0 {
            return bad("ensemble size must be at least 1".into());
        }
        Ok(())
    }
}

/// Search grid: every combination of the listed values is tried, with the
/// remaining settings taken from `base`. Only single-layer grids are expanded
/// over layer settings; deeper bases keep their earlier layers unchanged.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EsnGrid {
    pub base: Option<EsnHyperParams>,
    pub n_h: Vec<usize>,
    pub m: Vec<usize>,
    pub nu: Vec<f64>,
    pub lambda: Vec<f64>,
    pub eta_w: Vec<f64>,
    pub eta_in: Vec<f64>,
    pub pi_w: Vec<f64>,
    pub pi_in: Vec<f64>,
    pub alpha: Vec<f64>,
}

impl EsnGrid {
    pub fn expand(&self) -> Vec<EsnHyperParams> {
        let base = self.base.clone().unwrap_or_default();
        let last = base.layers.len() - 1;
        let or = |v: &Vec<f64>, d: f64| if v.is_empty() { vec![d] } else { v.clone() };
        let l = base.layers[last];
        let n_hs = if self.n_h.is_empty() { vec![l.n_h] } else { self.n_h.clone() };
        let ms = if self.m.is_empty() { vec![base.m] } else { self.m.clone() };
        let mut out = Vec::new();
        for &n_h in &n_hs {
            for &m in &ms {
                for &nu in &or(&self.nu, l.nu) {
                    for &lambda in &or(&self.lambda, base.lambda) {
                        for &eta_w in &or(&self.eta_w, l.eta_w) {
                            for &eta_in in &or(&self.eta_in, l.eta_in) {
                                for &pi_w in &or(&self.pi_w, l.pi_w) {
                                    for &pi_in in &or(&self.pi_in, l.pi_in) {
                                        for &alpha in &or(&self.alpha, base.alpha) {
                                            let mut hp = base.clone();
                                            hp.layers[last] = LayerSpec {
                                                n_h,
                                                n_reduced: n_h,
                                                nu,
                                                eta_w,
                                                eta_in,
                                                pi_w,
                                                pi_in,
                                            };
                                            hp.m = m;
                                            hp.lambda = lambda;
                                            hp.alpha = alpha;
                                            out.push(hp);
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_selected_values() {
        let hp = EsnHyperParams::default();
        let l = hp.layers[0];
        assert_eq!(hp.depth(), 1);
        assert_eq!(l.n_h, 2500);
        assert_eq!(hp.m, 1);
        assert_eq!(l.nu, 0.9);
        assert_eq!(hp.lambda, 0.15);
        assert_eq!(l.eta_w, 0.05);
        assert_eq!(l.eta_in, 0.01);
        assert_eq!(l.pi_w, 0.1);
        assert_eq!(l.pi_in, 0.01);
        assert_eq!(hp.alpha, 1.0);
        assert_eq!(hp.batch, 75);
        assert_eq!(hp.tau, 1);
        hp.validate().unwrap();
    }

    #[test]
    fn validation_rejects_bad_values() {
        let mut hp = EsnHyperParams::single(10);
        hp.alpha = 0.0;
        assert!(hp.validate().is_err());
        let mut hp = EsnHyperParams::single(10);
        hp.layers[0].pi_w = 1.5;
        assert!(hp.validate().is_err());
        let mut hp = EsnHyperParams::single(10);
        hp.layers.push(hp.layers[0]);
        hp.layers[0].n_reduced = 11;
        assert!(hp.validate().is_err());
        let mut hp = EsnHyperParams::single(10);
        hp.lambda = -1.0;
        assert!(hp.validate().is_err());
    }

    #[test]
    fn grid_expansion() {
        let g = EsnGrid {
            n_h: vec![10, 20],
            m: vec![0, 1, 2],
            lambda: vec![0.1, 1.0],
            ..Default::default()
        };
        let e = g.expand();
        assert_eq!(e.len(), 12);
        assert!(e.iter().all(|h| h.layers[0].n_h == 10 || h.layers[0].n_h == 20));
        assert_eq!(EsnGrid::default().expand().len(), 1);
    }
}

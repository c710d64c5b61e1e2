use serde::{Deserialize, Serialize};

/// Tensor-product Fourier basis on a rectangle: products of
/// `{1, cos(2 pi k u), sin(2 pi k u)}` in each coordinate for `k = 1..=order`,
/// with `u` the coordinate rescaled to `[0, 1]` over the rectangle. Function 0
/// is the constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FourierBasis {
    pub order: usize,
    pub x0: f64,
    pub y0: f64,
    pub lx: f64,
    pub ly: f64,
}

fn one_d(order: usize, u: f64) -> Vec<f64> {
    let mut f = Vec::with_capacity(2 * order + 1);
    f.push(1.0);
    for k in 1..=order {
        let a = 2.0 * std::f64::consts::PI * k as f64 * u;
        f.push(a.cos());
        f.push(a.sin());
    }
    f
}

impl FourierBasis {
    pub fn new(order: usize, bbox: (f64, f64, f64, f64)) -> Self {
        let (x0, x1, y0, y1) = bbox;
        Self {
            order,
            x0,
            y0,
            lx: (x1 - x0).max(f64::MIN_POSITIVE),
            ly: (y1 - y0).max(f64::MIN_POSITIVE),
        }
    }

    pub fn len(&self) -> usize {
        (2 * self.order + 1).pow(2)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn eval(&self, p: [f64; 2]) -> Vec<f64> {
        let fx = one_d(self.order, (p[0] - self.x0) / self.lx);
        let fy = one_d(self.order, (p[1] - self.y0) / self.ly);
        let mut out = Vec::with_capacity(self.len());
        for a in &fx {
            for b in &fy {
                out.push(a * b);
            }
        }
        out
    }

    /// `sum_o theta_o b_o(p)` at each point.
    pub fn combine(&self, points: &[[f64; 2]], theta: &[f64]) -> Vec<f64> {
        points
            .iter()
            .map(|&p| self.eval(p).iter().zip(theta).map(|(b, t)| b * t).sum())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_and_constant() {
        let b = FourierBasis::new(2, (0.0, 1.0, 0.0, 2.0));
        assert_eq!(b.len(), 25);
        let v = b.eval([0.3, 0.7]);
        assert_eq!(v[0], 1.0);
        assert_eq!(FourierBasis::new(0, (0.0, 1.0, 0.0, 1.0)).len(), 1);
        let c = b.combine(&[[0.1, 0.2], [0.5, 0.5]], &[2.0]);
        assert_eq!(c, vec![2.0, 2.0]);
    }

    #[test]
    fn periodic_over_the_box() {
        let b = FourierBasis::new(1, (-1.0, 1.0, 0.0, 1.0));
        let a = b.eval([-1.0, 0.25]);
        let c = b.eval([1.0, 0.25]);
        for (x, y) in a.iter().zip(&c) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

//! Separable C^1 test functions `phi(t, x, y) = psi(t) G(x) H(y)` with a
//! compactly supported polynomial time bump, exact derivatives and an
//! exact time antiderivative.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;

/// One trigonometric factor per axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Wave {
    Sin(f64),
    Cos(f64),
}

impl Wave {
    pub fn value(self, u: f64) -> f64 {
        match self {
            Wave::Sin(f) => math::sin(f * u),
            Wave::Cos(f) => math::cos(f * u),
        }
    }

    pub fn derivative(self, u: f64) -> f64 {
        match self {
            Wave::Sin(f) => f * math::cos(f * u),
            Wave::Cos(f) => -f * math::sin(f * u),
        }
    }
}

/// `phi(t, x, y) = psi(t/T) prod_l wx_l(x_l) prod_l wy_l(y_l)` with the
/// bump `psi(u) = (1 - u^2)^2` on `[0, 1]`, zero afterwards. `psi` is C^1
/// at the cutoff, equals one at `t = 0`, and integrates in closed form.
#[derive(Clone, Debug)]
pub struct SeparableTestFn {
    pub t_cutoff: f64,
    pub x_waves: Vec<Wave>,
    pub y_waves: Vec<Wave>,
}

impl SeparableTestFn {
    pub fn new(t_cutoff: f64, x_waves: Vec<Wave>, y_waves: Vec<Wave>) -> Self {
        SeparableTestFn {
            t_cutoff,
            x_waves,
            y_waves,
        }
    }

    /// The bump `psi(t) = (1 - (t/T)^2)^2` for `t < T`, else zero.
    pub fn time_value(&self, t: f64) -> f64 {
        let u = t / self.t_cutoff;
        if u >= 1.0 {
            0.0
        } else {
            let s = 1.0 - u * u;
            s * s
        }
    }

    pub fn time_derivative(&self, t: f64) -> f64 {
        let u = t / self.t_cutoff;
        if u >= 1.0 {
            0.0
        } else {
            -4.0 * u * (1.0 - u * u) / self.t_cutoff
        }
    }

    /// Exact `int_{t0}^{t1} psi` via the antiderivative
    /// `T (u - 2u^3/3 + u^5/5)`.
    pub fn time_integral(&self, t0: f64, t1: f64) -> f64 {
        let anti = |t: f64| {
            let u = (t / self.t_cutoff).min(1.0);
            self.t_cutoff * (u - 2.0 * u * u * u / 3.0 + u * u * u * u * u / 5.0)
        };
        anti(t1) - anti(t0)
    }

    pub fn space_x_value(&self, x: &[f64]) -> f64 {
        self.x_waves
            .iter()
            .zip(x)
            .map(|(w, &u)| w.value(u))
            .product()
    }

    /// Gradient of the spatial factor.
    pub fn space_x_gradient(&self, x: &[f64]) -> Vec<f64> {
        let d = self.x_waves.len();
        let mut out = vec![0.0; d];
        for axis in 0..d {
            let mut g = 1.0;
            for (m, (w, &u)) in self.x_waves.iter().zip(x).enumerate() {
                g *= if m == axis {
                    w.derivative(u)
                } else {
                    w.value(u)
                };
            }
            out[axis] = g;
        }
        out
    }

    pub fn space_y_value(&self, y: &[f64]) -> f64 {
        self.y_waves
            .iter()
            .zip(y)
            .map(|(w, &u)| w.value(u))
            .product()
    }

    pub fn value(&self, t: f64, x: &[f64], y: &[f64]) -> f64 {
        self.time_value(t) * self.space_x_value(x) * self.space_y_value(y)
    }

    pub fn dt(&self, t: f64, x: &[f64], y: &[f64]) -> f64 {
        self.time_derivative(t) * self.space_x_value(x) * self.space_y_value(y)
    }

    pub fn grad_x(&self, t: f64, x: &[f64], y: &[f64]) -> Vec<f64> {
        let scale = self.time_value(t) * self.space_y_value(y);
        self.space_x_gradient(x)
            .into_iter()
            .map(|g| g * scale)
            .collect()
    }
}

//! Emitted source waveforms `lambda(x, t)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceSignal {
    /// `exp(-pi^2 q0^2 (t - p/2)^2)` on `[0, p]`, `p = 6 / (pi q0)`.
    GaussianPulse { q0: f64, amplitude: f64 },
    /// Travelling plane wave `h(c t - d.x)` whose profile is the Gaussian
    /// pulse delayed so that `h(tau) = 0` for `tau < offset`.
    PlaneWave {
        q0: f64,
        amplitude: f64,
        direction: [f64; 2],
        offset: f64,
        c: f64,
    },
    /// Spatially uniform samples at spacing `dt`, linearly interpolated.
    Custom { samples: Vec<f64>, dt: f64 },
}

impl SourceSignal {
    pub fn gaussian(q0: f64) -> Self {
        SourceSignal::GaussianPulse { q0, amplitude: 1.0 }
    }

    pub fn plane_wave(q0: f64, direction: [f64; 2], c: f64) -> Result<Self> {
        let n = direction[0].hypot(direction[1]);
        if !(n > 0.0) {
            return Err(Error::config("plane-wave direction must be nonzero"));
        }
        Ok(SourceSignal::PlaneWave {
            q0,
            amplitude: 1.0,
            direction: [direction[0] / n, direction[1] / n],
            offset: 1.0,
            c,
        })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SourceSignal::GaussianPulse { q0, .. } | SourceSignal::PlaneWave { q0, .. }
                if !(*q0 > 0.0) =>
            {
                Err(Error::config(format!("central frequency must be positive, got {q0}")))
            }
            SourceSignal::PlaneWave { c, .. } if !(*c > 0.0) => {
                Err(Error::config("plane-wave sound speed must be positive"))
            }
            SourceSignal::Custom { samples, dt } if samples.is_empty() || !(*dt > 0.0) => {
                Err(Error::config("custom signal needs samples and a positive dt"))
            }
            _ => Ok(()),
        }
    }

    /// Central frequency, if the signal has one.
    pub fn q0(&self) -> Option<f64> {
        match self {
            SourceSignal::GaussianPulse { q0, .. } | SourceSignal::PlaneWave { q0, .. } => Some(*q0),
            SourceSignal::Custom { .. } => None,
        }
    }

    /// Length `p` of the temporal support of the pulse profile.
    pub fn support(&self) -> f64 {
        match self {
            SourceSignal::GaussianPulse { q0, .. } | SourceSignal::PlaneWave { q0, .. } => {
                pulse_support(*q0)
            }
            SourceSignal::Custom { samples, dt } => (samples.len() - 1) as f64 * dt,
        }
    }

    /// Last instant at which the source is nonzero anywhere in the domain.
    pub fn support_end(&self, grid: &Grid) -> f64 {
        match self {
            SourceSignal::PlaneWave {
                direction, offset, c, ..
            } => {
                let reach = [[0.0, 0.0], [grid.lx, 0.0], [0.0, grid.ly], [grid.lx, grid.ly]]
                    .iter()
                    .map(|p| direction[0] * p[0] + direction[1] * p[1])
                    .fold(f64::NEG_INFINITY, f64::max);
                (offset + reach) / c + self.support()
            }
            _ => self.support(),
        }
    }

    pub fn is_spatially_uniform(&self) -> bool {
        !matches!(self, SourceSignal::PlaneWave { .. })
    }

    /// `lambda(x, t)`; zero for `t < 0`.
    pub fn eval(&self, x: [f64; 2], t: f64) -> f64 {
        match self {
            SourceSignal::GaussianPulse { q0, amplitude } => amplitude * gaussian_pulse(*q0, t),
            SourceSignal::PlaneWave {
                q0,
                amplitude,
                direction,
                offset,
                c,
            } => {
                let tau = c * t - (direction[0] * x[0] + direction[1] * x[1]);
                if tau < *offset {
                    0.0
                } else {
                    amplitude * gaussian_pulse(*q0, (tau - offset) / c)
                }
            }
            SourceSignal::Custom { samples, dt } => {
                if t < 0.0 {
                    return 0.0;
                }
                let s = t / dt;
                let k = s.floor() as usize;
                if k + 1 >= samples.len() {
                    return if k + 1 == samples.len() && s == k as f64 {
                        samples[k]
                    } else {
                        0.0
                    };
                }
                let w = s - k as f64;
                (1.0 - w) * samples[k] + w * samples[k + 1]
            }
        }
    }

    /// `lambda(t_n)` for `n = 0..nt` when the signal is spatially uniform.
    pub fn time_samples(&self, grid: &Grid) -> Vec<f64> {
        (0..grid.nt).map(|n| self.eval([0.0, 0.0], n as f64 * grid.dt)).collect()
    }
}

pub fn pulse_support(q0: f64) -> f64 {
    6.0 / (std::f64::consts::PI * q0)
}

/// Gaussian pulse truncated to its support `[0, 6 / (pi q0)]`.
pub fn gaussian_pulse(q0: f64, t: f64) -> f64 {
    let p = pulse_support(q0);
    if !(0.0..=p).contains(&t) {
        return 0.0;
    }
    let a = std::f64::consts::PI * q0 * (t - 0.5 * p);
    (-a * a).exp()
}

/// Half-wavelength resolution limit: lowest central frequency that resolves
/// features of size `diameter`.
pub fn min_resolvable_frequency(c: f64, diameter: f64) -> f64 {
    0.5 * c / diameter
}

/// Default record length per frame: pulse support plus the travel time across
/// the domain diagonal, with a 10% margin.
pub fn default_frame_duration(signal: &SourceSignal, grid: &Grid) -> f64 {
    1.1 * (signal.support_end(grid) + grid.diagonal() / grid.c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn peak_is_one() {
        for q0 in [1e3, 1e4, 1e5] {
            let p = pulse_support(q0);
            assert!((gaussian_pulse(q0, 0.5 * p) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn support_at_100khz() {
        let p = pulse_support(1e5);
        assert!((p - 1.9099e-5).abs() < 1e-9);
    }

    #[test]
    fn value_at_zero() {
        // pi^2 q0^2 (p/2)^2 = 9 exactly
        let v = gaussian_pulse(1e5, 0.0);
        assert!((v - (-9.0f64).exp()).abs() < 1e-15);
        assert!((v - 1.234e-4).abs() < 1e-7);
        assert_eq!(gaussian_pulse(1e5, -1e-9), 0.0);
        assert_eq!(gaussian_pulse(1e5, 2e-5), 0.0);
    }

    #[test]
    fn gaussian_ignores_position() {
        let s = SourceSignal::gaussian(1e4);
        let t = 3e-5;
        assert_eq!(s.eval([0.0, 0.0], t), s.eval([3.0, 1.0], t));
    }

    #[test]
    fn plane_wave_is_causal_in_tau() {
        let s = SourceSignal::plane_wave(1e4, [1.0, 0.0], 1500.0).unwrap();
        // tau = c t - x < 1 gives zero
        assert_eq!(s.eval([0.0, 0.0], 0.5 / 1500.0), 0.0);
        let p = pulse_support(1e4);
        let t_peak = (1.0 + 1500.0 * 0.5 * p) / 1500.0;
        assert!((s.eval([0.0, 0.0], t_peak) - 1.0).abs() < 1e-12);
        // shifting x along the direction delays the pulse by x / c
        assert!((s.eval([0.3, 0.0], t_peak + 0.3 / 1500.0) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn custom_interpolates() {
        let s = SourceSignal::Custom {
            samples: vec![0.0, 1.0, 0.0],
            dt: 1.0,
        };
        assert_eq!(s.eval([0.0, 0.0], 0.5), 0.5);
        assert_eq!(s.eval([0.0, 0.0], 1.0), 1.0);
        assert_eq!(s.eval([0.0, 0.0], 2.0), 0.0);
        assert_eq!(s.eval([0.0, 0.0], 5.0), 0.0);
    }

    #[test]
    fn resolution_limit() {
        let q = min_resolvable_frequency(1500.0, 0.14);
        assert!((q - 5357.142857).abs() < 1e-3);
    }
}

//! Procedural ECG-like signals built from Gaussian P, Q, R, S and T waves.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::layout::LeadName;
use crate::raster::Series1D;

/// Hard amplitude bound of every synthesized sample, mV.
pub const MAX_AMPLITUDE_MV: f64 = 2.0;

#[derive(Clone, Copy, Debug)]
struct Wave {
    /// Offset from the R peak, s.
    offset: f64,
    sigma: f64,
    amp: f64,
}

fn lead_waves(rng: &mut ChaCha8Rng, negative_dominant: bool) -> [Wave; 5] {
    let (r, s) = if negative_dominant {
        (rng.random_range(0.1..0.3), rng.random_range(0.4..0.9))
    } else {
        (rng.random_range(0.3..1.0), rng.random_range(0.05..0.5))
    };
    let t_sign = if negative_dominant { -1.0 } else { 1.0 };
    [
        Wave {
            offset: -rng.random_range(0.14..0.18),
            sigma: rng.random_range(0.018..0.028),
            amp: rng.random_range(0.05..0.2),
        },
        Wave {
            offset: -0.028,
            sigma: 0.008,
            amp: -rng.random_range(0.0..0.1),
        },
        Wave {
            offset: 0.0,
            sigma: rng.random_range(0.010..0.014),
            amp: r,
        },
        Wave {
            offset: 0.03,
            sigma: rng.random_range(0.009..0.012),
            amp: -s,
        },
        Wave {
            offset: rng.random_range(0.22..0.3),
            sigma: rng.random_range(0.035..0.05),
            amp: t_sign * rng.random_range(0.08..0.35),
        },
    ]
}

/// Generates `n_leads` series (leads in canonical order) sharing one rhythm.
/// Output is a pure function of the arguments.
pub fn synthesize_signals(seed: u64, n_leads: usize, duration: f64, fs: f64) -> Result<Vec<Series1D>> {
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(Error::InvalidInput(format!("duration must be positive, got {duration}")));
    }
    if !(fs >= 100.0 && fs.is_finite()) {
        return Err(Error::InvalidInput(format!("sample rate must be at least 100 Hz, got {fs}")));
    }
    if n_leads == 0 || n_leads > LeadName::ALL.len() {
        return Err(Error::InvalidInput(format!("lead count {n_leads} outside 1..=12")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (duration * fs).round() as usize;

    let rr_mean = 60.0 / rng.random_range(55.0..95.0);
    let mut beats = Vec::new();
    let mut t = rng.random_range(0.1..0.1 + rr_mean);
    // Start one beat early so T waves of a beat before t = 0 show up.
    t -= rr_mean;
    while t < duration + 0.5 {
        beats.push(t);
        t += rr_mean * rng.random_range(0.95..1.05);
    }

    let mut out = Vec::with_capacity(n_leads);
    for &lead in &LeadName::ALL[..n_leads] {
        let negative = matches!(lead, LeadName::AVR | LeadName::V1);
        let waves = lead_waves(&mut rng, negative);
        let wander_amp = rng.random_range(0.0..0.05);
        let wander_f = rng.random_range(0.1..0.4);
        let wander_phase = rng.random_range(0.0..std::f64::consts::TAU);
        let values = (0..n)
            .map(|i| {
                let t = i as f64 / fs;
                let mut v = wander_amp * (std::f64::consts::TAU * wander_f * t + wander_phase).sin();
                for &b in &beats {
                    let dt = t - b;
                    if !(-0.4..0.7).contains(&dt) {
                        continue;
                    }
                    for w in &waves {
                        let z = (dt - w.offset) / w.sigma;
                        v += w.amp * (-0.5 * z * z).exp();
                    }
                }
                v.clamp(-MAX_AMPLITUDE_MV, MAX_AMPLITUDE_MV)
            })
            .collect();
        out.push(Series1D::new(values, fs)?);
    }
    Ok(out)
}

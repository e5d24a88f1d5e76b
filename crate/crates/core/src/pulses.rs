//! Composite single-qubit pulses and their evaluation under quasi-static
//! noise.
//!
//! A rotation `(θ)_φ` is a rectangular drive of amplitude ω1 and phase φ
//! lasting θ/(2πω1). Delays are segments with zero amplitude.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fidelity::avg_fidelity_pauli;
use crate::hamiltonians::{h_single_practical, NoiseSample};
use crate::linalg::{ComplexMatrix, C64};
use crate::noise::{product_nodes, QuadratureGrid};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseSegment {
    #[serde(rename = "duration_us")]
    pub duration: f64,
    #[serde(rename = "amplitude_mhz")]
    pub amplitude: f64,
    #[serde(rename = "phase_rad")]
    pub phase: f64,
}

impl PulseSegment {
    /// Rotation by `theta` about the equatorial axis at azimuth `phase`.
    pub fn rotation(theta: f64, phase: f64, omega1: f64) -> Self {
        Self {
            duration: theta / (TAU * omega1),
            amplitude: omega1,
            phase,
        }
    }

    pub fn delay(duration: f64) -> Self {
        Self {
            duration,
            amplitude: 0.0,
            phase: 0.0,
        }
    }

    /// Nominal rotation angle of the segment.
    pub fn angle(&self) -> f64 {
        TAU * self.amplitude * self.duration
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseSequence {
    pub label: String,
    pub segments: Vec<PulseSegment>,
}

impl PulseSequence {
    pub fn new(label: impl Into<String>, segments: Vec<PulseSegment>) -> Result<Self> {
        let seq = Self {
            label: label.into(),
            segments,
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn validate(&self) -> Result<()> {
        if self.segments.is_empty() {
            return Err(Error::Config(format!("sequence '{}' is empty", self.label)));
        }
        for s in &self.segments {
            if !(s.duration >= 0.0 && s.duration.is_finite()) || !(s.amplitude >= 0.0) || !s.phase.is_finite() {
                return Err(Error::Config(format!(
                    "sequence '{}' has an invalid segment {s:?}",
                    self.label
                )));
            }
        }
        Ok(())
    }

    pub fn total_duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).sum()
    }

    /// The same sequence in a frame rotated by `phi` about z: every drive
    /// phase is advanced by `phi`.
    pub fn rotated(&self, phi: f64) -> Self {
        Self {
            label: self.label.clone(),
            segments: self
                .segments
                .iter()
                .map(|s| PulseSegment {
                    phase: if s.amplitude > 0.0 { s.phase + phi } else { s.phase },
                    ..*s
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("sequence serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let seq: Self = serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        seq.validate()?;
        Ok(seq)
    }
}

fn check_angle(theta: f64, omega1: f64, max: f64) -> Result<()> {
    if !(theta > 0.0 && theta <= max + 1e-12) {
        return Err(Error::Domain(format!("rotation angle {theta} outside (0, {max}]")));
    }
    if !(omega1 > 0.0 && omega1.is_finite()) {
        return Err(Error::Domain(format!("drive amplitude {omega1} must be positive")));
    }
    Ok(())
}

pub fn naive(theta: f64, phi: f64, omega1: f64) -> Result<PulseSequence> {
    check_angle(theta, omega1, f64::INFINITY)?;
    PulseSequence::new("naive", vec![PulseSegment::rotation(theta, phi, omega1)])
}

/// Delays `(τ1, τ3)` of the five-piece SUPCODE sequence in radians of
/// nutation, valid for θ ∈ (2π, 3π).
pub fn supcode_delays(theta: f64) -> Result<(f64, f64)> {
    if !(theta > TAU && theta < 3.0 * PI) {
        return Err(Error::Domain(format!("SUPCODE needs θ in (2π, 3π), got {theta}")));
    }
    let (c, ch, s, sh) = (theta.cos(), (theta / 2.0).cos(), theta.sin(), (theta / 2.0).sin());
    let rad = 4.0 - 8.0 * ch + 4.0 * c + theta * s;
    if rad < 0.0 {
        return Err(Error::Domain(format!("SUPCODE delay is complex at θ = {theta}")));
    }
    let tau1 = (1.0 - 2.0 * ch + c + rad.sqrt()) / s;
    let tau3 = -2.0 * (tau1 * ch + sh);
    if !(tau1 >= 0.0 && tau3 >= 0.0) {
        return Err(Error::Domain(format!(
            "SUPCODE delays negative at θ = {theta}: τ1 = {tau1}, τ3 = {tau3}"
        )));
    }
    Ok((tau1, tau3))
}

/// Five-piece SUPCODE: τ1 − (θ/2)_0 − τ3 − (θ/2)_0 − τ1. Cancels the
/// detuning error to second order.
pub fn supcode5(theta: f64, omega1: f64) -> Result<PulseSequence> {
    check_angle(1.0, omega1, 1.0)?;
    let (tau1, tau3) = supcode_delays(theta)?;
    let t = |tau: f64| tau / (TAU * omega1);
    PulseSequence::new(
        "supcode",
        vec![
            PulseSegment::delay(t(tau1)),
            PulseSegment::rotation(theta / 2.0, 0.0, omega1),
            PulseSegment::delay(t(tau3)),
            PulseSegment::rotation(theta / 2.0, 0.0, omega1),
            PulseSegment::delay(t(tau1)),
        ],
    )
}

pub fn bb1_phase(theta: f64) -> f64 {
    (-theta / (4.0 * PI)).acos()
}

fn bb1_core(theta: f64, omega1: f64) -> Vec<PulseSegment> {
    let phi = bb1_phase(theta);
    vec![
        PulseSegment::rotation(theta / 2.0, 0.0, omega1),
        PulseSegment::rotation(PI, phi, omega1),
        PulseSegment::rotation(TAU, 3.0 * phi, omega1),
        PulseSegment::rotation(PI, phi, omega1),
    ]
}

/// BB1: (θ/2)_0 (π)_φ (2π)_3φ (π)_φ (θ/2)_0 with φ = arccos(−θ/4π).
/// Cancels the amplitude error to second order.
pub fn bb1(theta: f64, omega1: f64) -> Result<PulseSequence> {
    check_angle(theta, omega1, TAU)?;
    let mut segs = bb1_core(theta, omega1);
    segs.push(PulseSegment::rotation(theta / 2.0, 0.0, omega1));
    PulseSequence::new("bb1", segs)
}

/// Angles `(θ1, θ2, θ3)` of the tail (θ3)_0 (θ2)_π (θ1)_0 that BB1inC
/// appends after the BB1 core.
pub fn corpse_angles(theta: f64) -> (f64, f64, f64) {
    let k = ((theta / 2.0).sin() / 2.0).asin();
    (theta / 2.0 - k, TAU - 2.0 * k, TAU - k)
}

fn corpse_tail(theta: f64, omega1: f64) -> Vec<PulseSegment> {
    let (t1, t2, t3) = corpse_angles(theta);
    vec![
        PulseSegment::rotation(t3, 0.0, omega1),
        PulseSegment::rotation(t2, PI, omega1),
        PulseSegment::rotation(t1, 0.0, omega1),
    ]
}

/// CORPSE: (θ/2 + θ3)_0 (θ2)_π (θ1)_0. Cancels the detuning error to first
/// order. BB1inC is this sequence with the BB1 core inserted after the
/// leading (θ/2)_0.
pub fn corpse(theta: f64, omega1: f64) -> Result<PulseSequence> {
    check_angle(theta, omega1, TAU)?;
    let mut segs = corpse_tail(theta, omega1);
    segs[0] = PulseSegment::rotation(theta / 2.0 + segs[0].angle(), 0.0, omega1);
    PulseSequence::new("corpse", segs)
}

/// CORPSE with the BB1 core inserted after its leading (θ/2)_0:
/// (θ/2)_0 (π)_φ (2π)_3φ (π)_φ (θ3)_0 (θ2)_π (θ1)_0. Cancels both errors to
/// first order.
pub fn bb1inc(theta: f64, omega1: f64) -> Result<PulseSequence> {
    check_angle(theta, omega1, TAU)?;
    let mut segs = bb1_core(theta, omega1);
    segs.extend(corpse_tail(theta, omega1));
    PulseSequence::new("bb1inc", segs)
}

/// Exact propagator of a 2×2 Hermitian `h` for time `t`.
pub(crate) fn su2_propagator(h: &ComplexMatrix, t: f64) -> ComplexMatrix {
    let h0 = 0.5 * (h[(0, 0)].re + h[(1, 1)].re);
    let z = 0.5 * (h[(0, 0)].re - h[(1, 1)].re);
    let x = h[(1, 0)].re;
    let y = h[(1, 0)].im;
    let norm = (x * x + y * y + z * z).sqrt();
    let (c, s) = ((norm * t).cos(), (norm * t).sin());
    let sn = if norm > 0.0 { s / norm } else { t };
    let ph = C64::from_polar(1.0, -h0 * t);
    // cos I − i sin (n·σ)
    let u = [
        [C64::new(c, -sn * z), C64::new(-sn * y, -sn * x)],
        [C64::new(sn * y, -sn * x), C64::new(c, sn * z)],
    ];
    ComplexMatrix::from_fn(2, |r, col| ph * u[r][col])
}

pub fn segment_propagator(seg: &PulseSegment, noise: NoiseSample) -> ComplexMatrix {
    let h = h_single_practical(seg.amplitude, seg.phase, noise);
    su2_propagator(&h, seg.duration)
}

/// Time-ordered propagator of the sequence for one noise realization.
pub fn evolve_1q(seq: &PulseSequence, noise: NoiseSample) -> ComplexMatrix {
    let mut u = ComplexMatrix::identity(2);
    for seg in &seq.segments {
        u = &segment_propagator(seg, noise) * &u;
    }
    u
}

/// Ideal rotation exp(−iθ(cos φ Sx + sin φ Sy)).
pub fn rotation_target(theta: f64, phi: f64) -> ComplexMatrix {
    let h = h_single_practical(1.0, phi, NoiseSample::ZERO);
    su2_propagator(&h, theta / TAU)
}

/// Noise-averaged single-qubit gate fidelity over the product of the two grids.
pub fn avg_fidelity_1q(
    seq: &PulseSequence,
    target: &ComplexMatrix,
    g0: &QuadratureGrid,
    g1: &QuadratureGrid,
) -> f64 {
    let us: Vec<(f64, ComplexMatrix)> = product_nodes(g0, g1)
        .into_iter()
        .map(|(w, n)| (w, evolve_1q(seq, n)))
        .collect();
    avg_fidelity_pauli(target, us.iter().map(|(w, u)| (*w, u))).clamp(0.0, 1.0)
}

/// Fidelity for one fixed noise realization.
pub fn fidelity_at(seq: &PulseSequence, target: &ComplexMatrix, noise: NoiseSample) -> f64 {
    let u = evolve_1q(seq, noise);
    avg_fidelity_pauli(target, [(1.0, &u)]).clamp(0.0, 1.0)
}

/// Rotation vector Φ of the error `U(noise) U(0)†`, with `U = exp(−iΦ·σ)`
/// up to a global phase. Zero at the noise origin.
pub fn error_generator(seq: &PulseSequence, noise: NoiseSample) -> [f64; 3] {
    let v = &evolve_1q(seq, noise) * &evolve_1q(seq, NoiseSample::ZERO).adjoint();
    // strip the global phase so that det V = 1
    let det = v[(0, 0)] * v[(1, 1)] - v[(0, 1)] * v[(1, 0)];
    let v = v.scale(det.sqrt().inv());
    let c = 0.5 * (v[(0, 0)] + v[(1, 1)]).re;
    let sign = if c < 0.0 { -1.0 } else { 1.0 };
    let nz = -0.5 * (v[(0, 0)] - v[(1, 1)]).im * sign;
    let nx = -0.5 * (v[(0, 1)] + v[(1, 0)]).im * sign;
    let ny = 0.5 * (v[(1, 0)] - v[(0, 1)]).re * sign;
    let s = (nx * nx + ny * ny + nz * nz).sqrt();
    let ang = s.atan2(c.abs());
    let f = if s > 0.0 { ang / s } else { 1.0 };
    [nx * f, ny * f, nz * f]
}


#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PulseFamily {
    Naive,
    Supcode,
    Bb1,
    Bb1inc,
    Corpse,
}

impl PulseFamily {
    pub const ALL: [PulseFamily; 5] = [
        PulseFamily::Naive,
        PulseFamily::Supcode,
        PulseFamily::Bb1,
        PulseFamily::Bb1inc,
        PulseFamily::Corpse,
    ];

    /// Builds the family's realization of (θ)_0. SUPCODE only exists for
    /// θ ∈ (2π, 3π); smaller angles θ < π use the equivalent θ + 2π.
    pub fn build(self, theta: f64, omega1: f64) -> Result<PulseSequence> {
        match self {
            PulseFamily::Naive => naive(theta, 0.0, omega1),
            PulseFamily::Supcode if theta > 0.0 && theta < PI => supcode5(theta + TAU, omega1),
            PulseFamily::Supcode => supcode5(theta, omega1),
            PulseFamily::Bb1 => bb1(theta, omega1),
            PulseFamily::Bb1inc => bb1inc(theta, omega1),
            PulseFamily::Corpse => corpse(theta, omega1),
        }
    }
}

impl fmt::Display for PulseFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PulseFamily::Naive => "naive",
            PulseFamily::Supcode => "supcode",
            PulseFamily::Bb1 => "bb1",
            PulseFamily::Bb1inc => "bb1inc",
            PulseFamily::Corpse => "corpse",
        })
    }
}

impl FromStr for PulseFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PulseFamily::ALL
            .into_iter()
            .find(|f| f.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown pulse family '{s}'")))
    }
}

/// Fidelity over a rectangular (δ0, δ1_rel) grid with one noise node per
/// point; `values[i][j]` belongs to `(d0[i], d1[j])`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidelityMap {
    pub family: PulseFamily,
    pub theta: f64,
    pub d0: Vec<f64>,
    pub d1: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl FidelityMap {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i][j]
    }

    /// Points whose fidelity is at least `threshold`.
    pub fn region_above(&self, threshold: f64) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, row) in self.values.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v >= threshold {
                    out.push((i, j));
                }
            }
        }
        out
    }
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![0.5 * (lo + hi)],
        _ => (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect(),
    }
}

pub fn fidelity_map(
    family: PulseFamily,
    theta: f64,
    omega1: f64,
    d0: &[f64],
    d1: &[f64],
) -> Result<FidelityMap> {
    if d0.iter().chain(d1).any(|x| !x.is_finite()) {
        return Err(Error::Config("fidelity map axes must be finite".into()));
    }
    let seq = family.build(theta, omega1)?;
    let target = rotation_target(theta, 0.0);
    let values = d0
        .par_iter()
        .map(|&a| {
            d1.iter()
                .map(|&b| fidelity_at(&seq, &target, NoiseSample::new(a, b)))
                .collect()
        })
        .collect();
    Ok(FidelityMap {
        family,
        theta,
        d0: d0.to_vec(),
        d1: d1.to_vec(),
        values,
    })
}

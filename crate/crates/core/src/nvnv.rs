//! Two dipolar-coupled NV electron spins driven by one carrier each, and
//! robust design of a CNOT between them.
//!
//! Levels are `3·idx(m1) + idx(m2)` with `idx(m) = 1 − m`, so the qubit
//! states |00⟩, |01⟩, |10⟩, |11⟩ (|0⟩ = mS 0, |1⟩ = mS −1) sit at levels
//! 4, 5, 7, 8. In the doubly rotating frame each carrier is resonant with
//! the 0 ↔ −1 transition of its own NV; cross drive, counter-rotating terms
//! and the non-secular part of the coupling tensor are dropped.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fidelity::fseq;
use crate::grape::{maximize, piecewise_fidelity, GrapeConfig, STALL_THRESHOLD};
use crate::hamiltonians::GAMMA_E_MHZ_PER_G;
use crate::linalg::{spin_operators, ComplexMatrix, Eigh, Spin, C64, ZERO};
use crate::noise::{
    gauss_grid, lorentz_grid, GaussianDist, LorentzianDist, QuadratureGrid, DEFAULT_TRUNCATION, GAMMA_MEASURED_REL,
    SIGMA_MEASURED_MHZ,
};

pub const QUBIT_LEVELS: [usize; 4] = [4, 5, 7, 8];
pub const DEFAULT_SEGMENTS: usize = 100;
pub const DEFAULT_TAU_US: f64 = 0.1;
/// Low enough that cross drive and counter-rotating terms stay below the
/// 1e−3 level in the lab frame.
pub const DEFAULT_AMP_MAX: f64 = 2.5;
/// Minimum ratio of the carrier separation to the coupling strength.
pub const MIN_SPLIT_RATIO: f64 = 100.0;

fn idx(m: i32) -> usize {
    (1 - m) as usize
}

const M: [i32; 3] = [1, 0, -1];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NvNvParams {
    #[serde(rename = "d_zfs_mhz")]
    pub d_zfs: f64,
    /// Coupling tensor ℂ in MHz, `H_int = 2π S1·ℂ·S2`.
    #[serde(rename = "coupling_mhz")]
    pub coupling: [[f64; 3]; 3],
    /// Difference of the two 0 ↔ −1 resonances in MHz.
    #[serde(rename = "freq_split_mhz")]
    pub freq_split: f64,
    /// Field along the axis of NV 1 in Gauss; NV 2 sits higher by the split.
    #[serde(rename = "b0_1_gauss")]
    pub b0_1: f64,
    #[serde(rename = "sigma_mhz")]
    pub sigma: [f64; 2],
    pub gamma_rel: [f64; 2],
    /// Use one δ0 for both NVs instead of independent draws.
    pub correlated_delta0: bool,
}

impl Default for NvNvParams {
    fn default() -> Self {
        Self {
            d_zfs: 2870.0,
            coupling: [[0.0; 3], [0.0; 3], [0.0, 0.0, 0.1]],
            freq_split: 200.0,
            b0_1: 513.0,
            sigma: [SIGMA_MEASURED_MHZ; 2],
            gamma_rel: [GAMMA_MEASURED_REL; 2],
            correlated_delta0: false,
        }
    }
}

impl NvNvParams {
    pub fn czz(&self) -> f64 {
        self.coupling[2][2]
    }

    pub fn validate(&self) -> Result<()> {
        for i in 0..3 {
            for j in 0..3 {
                if (self.coupling[i][j] - self.coupling[j][i]).abs() > 1e-12 {
                    return Err(Error::Config("coupling tensor must be symmetric".into()));
                }
            }
        }
        if self.sigma.iter().chain(&self.gamma_rel).any(|w| !(*w > 0.0)) {
            return Err(Error::Config("noise widths must be positive".into()));
        }
        if !(self.freq_split > 0.0) {
            return Err(Error::Config("freq_split must be positive".into()));
        }
        Ok(())
    }

    /// Non-fatal problems with the parameter set.
    pub fn warnings(&self) -> Vec<String> {
        let c = self.coupling.iter().flatten().fold(0.0f64, |a, b| a.max(b.abs()));
        if c > 0.0 && self.freq_split / c < MIN_SPLIT_RATIO {
            vec![format!(
                "freq_split / coupling = {:.1} is below {MIN_SPLIT_RATIO}; the secular approximation is doubtful",
                self.freq_split / c
            )]
        } else {
            vec![]
        }
    }

    /// Electron Zeeman frequencies γe·B of the two NVs in MHz.
    pub fn zeeman(&self) -> [f64; 2] {
        let b1 = GAMMA_E_MHZ_PER_G * self.b0_1;
        [b1, b1 + self.freq_split]
    }

    /// Carrier frequencies, resonant with 0 ↔ −1 of each NV.
    pub fn carriers(&self) -> [f64; 2] {
        self.zeeman().map(|b| self.d_zfs - b)
    }

    /// δ0 and δ1 grids per NV for the given node counts.
    pub fn grids(&self, n0: usize, n1: usize) -> [(QuadratureGrid, QuadratureGrid); 2] {
        std::array::from_fn(|j| {
            (
                gauss_grid(&GaussianDist { sigma: self.sigma[j] }, n0),
                lorentz_grid(&LorentzianDist { gamma: self.gamma_rel[j], truncation: DEFAULT_TRUNCATION }, n1),
            )
        })
    }

    /// Grids used inside the optimizer: 5 δ0 nodes, one δ1 node. With 3
    /// nodes slow sequences learn to refocus exactly those detunings.
    pub fn optimizer_grids(&self) -> [(QuadratureGrid, QuadratureGrid); 2] {
        self.grids(5, 1)
    }

    /// Grids used to score F'a.
    pub fn evaluation_grids(&self) -> [(QuadratureGrid, QuadratureGrid); 2] {
        self.grids(11, 3)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NvNvNoise {
    pub delta0: [f64; 2],
    pub delta1_rel: [f64; 2],
}

impl NvNvNoise {
    pub const ZERO: Self = Self {
        delta0: [0.0; 2],
        delta1_rel: [0.0; 2],
    };
}

/// Amplitude (MHz) and phase of one carrier over one segment.
pub type Drive = (f64, f64);

/// `|0⟩⟨−1|` on NV `j`.
fn raising(j: usize) -> ComplexMatrix {
    let mut e = ComplexMatrix::zeros(3);
    e[(idx(0), idx(-1))] = C64::new(1.0, 0.0);
    let id = ComplexMatrix::identity(3);
    if j == 0 {
        e.kron(&id)
    } else {
        id.kron(&e)
    }
}

/// `π(1+δ1)(e^{iφ}|0⟩⟨−1| + h.c.)` on NV `j` and its derivatives with
/// respect to amplitude and phase.
fn drive_terms(j: usize, (amp, phi): Drive, delta1: f64) -> [ComplexMatrix; 3] {
    let e = raising(j);
    let c = PI * (1.0 + delta1);
    let dir = |z: C64| {
        let a = e.scale(z);
        &a + &a.adjoint()
    };
    let ph = C64::from_polar(c, phi);
    [
        dir(ph * amp),
        dir(ph),
        dir(ph * C64::new(0.0, amp)),
    ]
}

/// Diagonal of the doubly-rotating-frame drift in rad/μs.
fn drift(params: &NvNvParams, noise: &NvNvNoise) -> [f64; 9] {
    let czz = params.czz();
    let mut d = [0.0; 9];
    for &m1 in &M {
        for &m2 in &M {
            let (a, b) = (m1 as f64, m2 as f64);
            d[3 * idx(m1) + idx(m2)] =
                TAU * (noise.delta0[0] * a + noise.delta0[1] * b + czz * a * b);
        }
    }
    d
}

/// RWA Hamiltonian in the doubly rotating frame (rad/μs).
pub fn h_nvnv_rwa(params: &NvNvParams, drives: [Drive; 2], noise: &NvNvNoise) -> ComplexMatrix {
    let mut h = &drive_terms(0, drives[0], noise.delta1_rel[0])[0]
        + &drive_terms(1, drives[1], noise.delta1_rel[1])[0];
    for (i, v) in drift(params, noise).iter().enumerate() {
        h[(i, i)] += v;
    }
    h
}

/// CNOT with NV 1 as control, in the order |00⟩, |01⟩, |10⟩, |11⟩.
pub fn nvnv_cnot_target() -> ComplexMatrix {
    ComplexMatrix::from_real_rows(&[
        &[1.0, 0.0, 0.0, 0.0],
        &[0.0, 1.0, 0.0, 0.0],
        &[0.0, 0.0, 0.0, 1.0],
        &[0.0, 0.0, 1.0, 0.0],
    ])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    #[serde(rename = "amplitudes_mhz")]
    pub amplitudes: Vec<f64>,
    #[serde(rename = "phases_rad")]
    pub phases: Vec<f64>,
}

/// Piecewise-constant two-carrier sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NvNvSequence {
    #[serde(rename = "tau_us")]
    pub tau: f64,
    pub channels: [Channel; 2],
}

impl NvNvSequence {
    pub fn n_segments(&self) -> usize {
        self.channels[0].amplitudes.len()
    }

    pub fn total_duration(&self) -> f64 {
        self.tau * self.n_segments() as f64
    }

    pub fn drives(&self, k: usize) -> [Drive; 2] {
        std::array::from_fn(|j| (self.channels[j].amplitudes[k], self.channels[j].phases[k]))
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.n_segments();
        if m == 0 || !(self.tau > 0.0) {
            return Err(Error::Config("sequence needs segments and a positive tau".into()));
        }
        for c in &self.channels {
            if c.amplitudes.len() != m || c.phases.len() != m {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    actual: c.amplitudes.len().min(c.phases.len()),
                });
            }
            if c.amplitudes.iter().chain(&c.phases).any(|v| !v.is_finite())
                || c.amplitudes.iter().any(|&a| a < 0.0)
            {
                return Err(Error::Config("amplitudes must be finite and ≥ 0".into()));
            }
        }
        Ok(())
    }

    fn pack(&self) -> Vec<f64> {
        let [a, b] = &self.channels;
        [&a.amplitudes, &b.amplitudes, &a.phases, &b.phases]
            .into_iter()
            .flatten()
            .copied()
            .collect()
    }

    fn unpack(x: &[f64], tau: f64) -> Self {
        let m = x.len() / 4;
        let part = |i: usize| x[i * m..(i + 1) * m].to_vec();
        Self {
            tau,
            channels: [
                Channel {
                    amplitudes: part(0),
                    phases: part(2),
                },
                Channel {
                    amplitudes: part(1),
                    phases: part(3),
                },
            ],
        }
    }

    fn wrapped(mut self) -> Self {
        for c in &mut self.channels {
            for p in &mut c.phases {
                *p = p.rem_euclid(TAU);
            }
        }
        self
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

/// Propagator of the full nine-level space in the rotating frame.
pub fn evolve_rwa(seq: &NvNvSequence, params: &NvNvParams, noise: &NvNvNoise) -> ComplexMatrix {
    (0..seq.n_segments()).fold(ComplexMatrix::identity(9), |u, k| {
        &Eigh::new_unchecked(&h_nvnv_rwa(params, seq.drives(k), noise)).propagator(seq.tau) * &u
    })
}

/// Noise-averaged CNOT fidelity with its exact gradient.
pub struct NvNvObjective {
    params: NvNvParams,
    target: ComplexMatrix,
    nodes: Vec<(f64, NvNvNoise)>,
}

impl NvNvObjective {
    /// `grids = None` gives the noiseless fidelity F'seq.
    pub fn new(
        params: &NvNvParams,
        target: &ComplexMatrix,
        grids: Option<&[(QuadratureGrid, QuadratureGrid); 2]>,
    ) -> Self {
        let nodes = match grids {
            None => vec![(1.0, NvNvNoise::ZERO)],
            Some([(a0, a1), (b0, b1)]) => {
                let mut nodes = Vec::new();
                for x0 in &a0.nodes {
                    let second: Vec<_> = if params.correlated_delta0 {
                        vec![(1.0, x0.value)]
                    } else {
                        b0.nodes.iter().map(|n| (n.weight, n.value)).collect()
                    };
                    for &(w0, y0) in &second {
                        for x1 in &a1.nodes {
                            for y1 in &b1.nodes {
                                nodes.push((
                                    x0.weight * w0 * x1.weight * y1.weight,
                                    NvNvNoise {
                                        delta0: [x0.value, y0],
                                        delta1_rel: [x1.value, y1.value],
                                    },
                                ));
                            }
                        }
                    }
                }
                nodes
            }
        };
        Self {
            params: params.clone(),
            target: target.clone(),
            nodes,
        }
    }

    fn node(&self, seq: &NvNvSequence, noise: &NvNvNoise, grad: bool) -> (f64, Vec<f64>) {
        let m = seq.n_segments();
        let eigs: Vec<Eigh> = (0..m)
            .map(|k| Eigh::new_unchecked(&h_nvnv_rwa(&self.params, seq.drives(k), noise)))
            .collect();
        if !grad {
            return (piecewise_fidelity(&eigs, seq.tau, &QUBIT_LEVELS, &self.target, None).0, vec![]);
        }
        let dirs = |k: usize| {
            let d = seq.drives(k);
            let [_, da0, dp0] = drive_terms(0, d[0], noise.delta1_rel[0]);
            let [_, da1, dp1] = drive_terms(1, d[1], noise.delta1_rel[1]);
            vec![da0, da1, dp0, dp1]
        };
        let (f, d) = piecewise_fidelity(&eigs, seq.tau, &QUBIT_LEVELS, &self.target, Some(&dirs));
        // pack order: amplitudes of both channels, then phases
        let mut g = vec![0.0; 4 * m];
        for (k, dk) in d.iter().enumerate() {
            for (c, v) in dk.iter().enumerate() {
                g[c * m + k] = *v;
            }
        }
        (f, g)
    }

    pub fn value(&self, seq: &NvNvSequence) -> f64 {
        self.nodes
            .par_iter()
            .map(|(w, n)| w * self.node(seq, n, false).0)
            .collect::<Vec<_>>()
            .iter()
            .sum()
    }

    /// Objective and gradient in pack order (amplitudes 1, amplitudes 2,
    /// phases 1, phases 2).
    pub fn value_and_gradient(&self, seq: &NvNvSequence) -> (f64, Vec<f64>) {
        let per: Vec<(f64, Vec<f64>)> = self
            .nodes
            .par_iter()
            .map(|(w, n)| {
                let (f, g) = self.node(seq, n, true);
                (w * f, g.into_iter().map(|v| w * v).collect())
            })
            .collect();
        let mut f = 0.0;
        let mut g = vec![0.0; 4 * seq.n_segments()];
        for (fv, gv) in per {
            f += fv;
            for (a, b) in g.iter_mut().zip(gv) {
                *a += b;
            }
        }
        (f, g)
    }
}

/// Default optimizer settings for the two-NV CNOT.
pub fn nvnv_config(params: &NvNvParams, robust: bool) -> GrapeConfig {
    let [(g0, g1), _] = params.optimizer_grids();
    GrapeConfig {
        target: nvnv_cnot_target(),
        n_segments: DEFAULT_SEGMENTS,
        tau: DEFAULT_TAU_US,
        amp_max: DEFAULT_AMP_MAX,
        restarts: 4,
        noise_grids: robust.then_some((g0, g1)),
        ..GrapeConfig::default()
    }
}

fn random_start(config: &GrapeConfig, restart: usize) -> NvNvSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(restart as u64);
    let mut channel = || Channel {
        amplitudes: (0..config.n_segments)
            .map(|_| rng.random_range(0.0..=config.amp_max))
            .collect(),
        phases: (0..config.n_segments).map(|_| rng.random_range(0.0..TAU)).collect(),
    };
    NvNvSequence {
        tau: config.tau,
        channels: [channel(), channel()],
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NvNvReport {
    /// Noiseless fidelity F'seq.
    pub fseq: f64,
    /// Noise-averaged fidelity F'a on the evaluation grids.
    pub fa_noise: f64,
}

pub fn report(seq: &NvNvSequence, params: &NvNvParams, target: &ComplexMatrix) -> NvNvReport {
    NvNvReport {
        fseq: NvNvObjective::new(params, target, None).value(seq),
        fa_noise: NvNvObjective::new(params, target, Some(&params.evaluation_grids())).value(seq),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NvNvResult {
    pub sequence: NvNvSequence,
    pub objective: f64,
    pub restart_objectives: Vec<f64>,
    pub report: NvNvReport,
}

/// Multi-restart projected L-BFGS on both carriers. When
/// `config.noise_grids` is set, the same grids are used for both NVs.
pub fn optimize_nvnv_cnot(config: &GrapeConfig, params: &NvNvParams) -> Result<NvNvResult> {
    config.validate()?;
    params.validate()?;
    let grids = config
        .noise_grids
        .as_ref()
        .map(|(a, b)| [(a.clone(), b.clone()), (a.clone(), b.clone())]);
    let obj = NvNvObjective::new(params, &config.target, grids.as_ref());
    let m = config.n_segments;
    let runs: Vec<(Vec<f64>, f64)> = (0..config.restarts)
        .into_par_iter()
        .map(|r| {
            let eval = |x: &[f64]| obj.value_and_gradient(&NvNvSequence::unpack(x, config.tau));
            let (x, f, _) = maximize(&eval, random_start(config, r).pack(), 2 * m, config);
            (x, f)
        })
        .collect();
    let restart_objectives: Vec<f64> = runs.iter().map(|r| r.1).collect();
    let best = (0..runs.len())
        .max_by(|&a, &b| restart_objectives[a].total_cmp(&restart_objectives[b]))
        .expect("at least one restart");
    let objective = restart_objectives[best];
    if objective < STALL_THRESHOLD {
        return Err(Error::Stalled {
            best: objective,
            threshold: STALL_THRESHOLD,
        });
    }
    let sequence = NvNvSequence::unpack(&runs[best].0, config.tau).wrapped();
    let report = report(&sequence, params, &config.target);
    Ok(NvNvResult {
        sequence,
        objective,
        restart_objectives,
        report,
    })
}

/// Highest transition frequency of the lab-frame static Hamiltonian (MHz).
pub fn lab_max_frequency(params: &NvNvParams) -> f64 {
    let e = lab_static_energies(params);
    let (lo, hi) = e.iter().fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
    (hi - lo) / TAU
}

/// `2π(D m1² + b1 m1 + D m2² + b2 m2)`, without the coupling.
fn lab_static_energies(params: &NvNvParams) -> [f64; 9] {
    let [b1, b2] = params.zeeman();
    let d = params.d_zfs;
    let mut e = [0.0; 9];
    for &m1 in &M {
        for &m2 in &M {
            let (a, b) = (m1 as f64, m2 as f64);
            e[3 * idx(m1) + idx(m2)] = TAU * (d * a * a + b1 * a + d * b * b + b2 * b);
        }
    }
    e
}

/// Qubit block of the noiseless propagator obtained by direct time-ordered
/// integration of the lab-frame Hamiltonian
/// `H_NV1 + H_NV2 + 2π Czz Sz1 Sz2 + Σ_j A_j cos(2π f_j t + φ_j)(Sx1 + Sx2)`,
/// transformed back into the rotating frame of `H_NV1 + H_NV2`. Each carrier
/// drives both NVs and both transitions. Steps are second-order split
/// exponentials no longer than `1/(steps_per_cycle · f_max)`.
pub fn lab_frame_qubit_propagator(
    seq: &NvNvSequence,
    params: &NvNvParams,
    steps_per_cycle: f64,
) -> ComplexMatrix {
    let e0 = lab_static_energies(params);
    let czz = params.czz();
    let mut diag = e0;
    for &m1 in &M {
        for &m2 in &M {
            diag[3 * idx(m1) + idx(m2)] += TAU * czz * (m1 * m2) as f64;
        }
    }
    let carriers = params.carriers();
    let f_max = lab_max_frequency(params).max(carriers[0]).max(carriers[1]);
    let n_sub = (seq.tau * steps_per_cycle * f_max).ceil().max(1.0) as usize;
    let dt = seq.tau / n_sub as f64;
    let half: Vec<C64> = diag.iter().map(|&d| C64::from_polar(1.0, -d * dt / 2.0)).collect();
    let sx = spin_operators(Spin::One).sx;
    let sx2 = &sx * &sx;

    // columns: the four qubit states
    let mut psi: Vec<[C64; 9]> = QUBIT_LEVELS
        .iter()
        .map(|&l| {
            let mut v = [ZERO; 9];
            v[l] = C64::new(1.0, 0.0);
            v
        })
        .collect();
    let mut t = 0.0;
    for k in 0..seq.n_segments() {
        let d = seq.drives(k);
        let amps = d.map(|(a, _)| 2.0 * 2f64.sqrt() * PI * a);
        for _ in 0..n_sub {
            let tm = t + dt / 2.0;
            let h: f64 = (0..2)
                .map(|j| amps[j] * (TAU * carriers[j] * tm + d[j].1).cos())
                .sum();
            // exp(−iθ Sx) = 1 − i sinθ Sx + (cosθ − 1) Sx² for spin 1
            let th = h * dt;
            let r = ComplexMatrix::from_fn(3, |a, b| {
                let id = if a == b { 1.0 } else { 0.0 };
                C64::new(id + (th.cos() - 1.0) * sx2[(a, b)].re, 0.0)
                    - C64::new(0.0, th.sin()) * sx[(a, b)]
            });
            for v in &mut psi {
                for (x, p) in v.iter_mut().zip(&half) {
                    *x *= p;
                }
                let mut w = [ZERO; 9];
                for a1 in 0..3 {
                    for a2 in 0..3 {
                        let mut acc = ZERO;
                        for b1 in 0..3 {
                            let rb = r[(a1, b1)];
                            if rb == ZERO {
                                continue;
                            }
                            for b2 in 0..3 {
                                acc += rb * r[(a2, b2)] * v[3 * b1 + b2];
                            }
                        }
                        w[3 * a1 + a2] = acc;
                    }
                }
                for ((x, p), y) in v.iter_mut().zip(&half).zip(w) {
                    *x = y * p;
                }
            }
            t += dt;
        }
    }
    // back to the rotating frame: multiply by exp(+i H_NV T)
    let total = t;
    ComplexMatrix::from_fn(4, |r, c| {
        let l = QUBIT_LEVELS[r];
        psi[c][l] * C64::from_polar(1.0, e0[l] * total)
    })
}

/// Fidelity between the lab-frame and RWA propagators on the qubit subspace.
pub fn rwa_agreement(seq: &NvNvSequence, params: &NvNvParams, steps_per_cycle: f64) -> f64 {
    let lab = lab_frame_qubit_propagator(seq, params, steps_per_cycle);
    let rwa = evolve_rwa(seq, params, &NvNvNoise::ZERO).submatrix(&QUBIT_LEVELS);
    fseq(&lab, &rwa)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn random_seq(seed: u64, m: usize, amp: f64) -> NvNvSequence {
        let cfg = GrapeConfig {
            n_segments: m,
            tau: 0.1,
            amp_max: amp,
            seed,
            ..GrapeConfig::default()
        };
        random_start(&cfg, 0)
    }

    #[test]
    fn drift_is_secular_zz() {
        let p = NvNvParams::default();
        let h = h_nvnv_rwa(&p, [(0.0, 0.0); 2], &NvNvNoise::ZERO);
        assert!(h.hermiticity_deviation() < 1e-12);
        for &m1 in &M {
            for &m2 in &M {
                let i = 3 * idx(m1) + idx(m2);
                assert!((h[(i, i)].re - TAU * 0.1 * (m1 * m2) as f64).abs() < 1e-12);
            }
        }
        assert!((&h - &ComplexMatrix::diag(&(0..9).map(|i| h[(i, i)]).collect::<Vec<_>>())).max_abs() == 0.0);
        // conditional phase rate: (E00 − E01) − (E10 − E11) = 2π Czz
        let e = |l: usize| h[(l, l)].re;
        let [a, b, c, d] = QUBIT_LEVELS;
        assert!(((e(a) - e(b)) - (e(c) - e(d)) - TAU * 0.1).abs() < 1e-12);
    }

    #[test]
    fn single_carrier_acts_on_its_own_nv() {
        let p = NvNvParams {
            coupling: [[0.0; 3]; 3],
            ..NvNvParams::default()
        };
        let h = h_nvnv_rwa(&p, [(5.0, 0.3), (0.0, 0.0)], &NvNvNoise::ZERO);
        assert!(h.hermiticity_deviation() < 1e-12);
        let id = ComplexMatrix::identity(3);
        let h1 = h.submatrix(&[0, 3, 6]);
        // H = h1 ⊗ 1
        assert!(h.max_abs_diff(&h1.kron(&id)) < 1e-12);
        // a π pulse of the 5 MHz drive takes 0.1 μs
        let u = Eigh::new(&h).unwrap().propagator(0.1);
        assert!((u[(idx(-1) * 3 + 1, idx(0) * 3 + 1)].norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn qubit_drift_commutes_with_total_sz() {
        let noise = NvNvNoise {
            delta0: [0.2, -0.1],
            delta1_rel: [0.0; 2],
        };
        let h = h_nvnv_rwa(&NvNvParams::default(), [(0.0, 0.0); 2], &noise).submatrix(&QUBIT_LEVELS);
        let sz = ComplexMatrix::real_diag(&[0.0, -1.0, -1.0, -2.0]);
        assert!(h.commutator(&sz).max_abs() < 1e-12);
    }

    #[test]
    fn coupling_must_be_symmetric() {
        let mut p = NvNvParams::default();
        p.coupling[0][1] = 0.05;
        assert!(matches!(p.validate(), Err(Error::Config(_))));
        p.coupling[1][0] = 0.05;
        assert!(p.validate().is_ok());
        let close = NvNvParams {
            freq_split: 5.0,
            ..NvNvParams::default()
        };
        assert_eq!(close.warnings().len(), 1);
        assert!(NvNvParams::default().warnings().is_empty());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p = NvNvParams::default();
        let grids = p.optimizer_grids();
        let obj = NvNvObjective::new(&p, &nvnv_cnot_target(), Some(&grids));
        let seq = random_seq(5, 6, 5.0);
        let (_, g) = obj.value_and_gradient(&seq);
        let x = seq.pack();
        let h = 1e-6;
        for i in 0..x.len() {
            let mut up = x.clone();
            let mut dn = x.clone();
            up[i] += h;
            dn[i] -= h;
            let fd = (obj.value(&NvNvSequence::unpack(&up, 0.1))
                - obj.value(&NvNvSequence::unpack(&dn, 0.1)))
                / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-4 * fd.abs().max(1e-3), "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn correlated_noise_collapses_delta0_grid() {
        let p = NvNvParams {
            correlated_delta0: true,
            ..NvNvParams::default()
        };
        let obj = NvNvObjective::new(&p, &nvnv_cnot_target(), Some(&p.grids(5, 2)));
        assert_eq!(obj.nodes.len(), 5 * 2 * 2);
        assert!(obj.nodes.iter().all(|(_, n)| n.delta0[0] == n.delta0[1]));
        let w: f64 = obj.nodes.iter().map(|n| n.0).sum();
        assert!((w - 1.0).abs() < 1e-12);
    }

    #[test]
    fn json_round_trip() {
        let seq = random_seq(1, 4, 5.0);
        assert_eq!(NvNvSequence::from_json(&seq.to_json()).unwrap(), seq);
        let v: serde_json::Value = serde_json::from_str(&seq.to_json()).unwrap();
        assert!(v["channels"][1]["amplitudes_mhz"].is_array());
    }

    #[test]
    fn lab_frame_matches_rwa_for_weak_drive() {
        // far-off-resonant terms are suppressed by (ω1 / split)²
        let p = NvNvParams {
            freq_split: 400.0,
            ..NvNvParams::default()
        };
        let seq = random_seq(2, 2, 0.5);
        let f = rwa_agreement(&seq, &p, 20.0);
        assert!(f > 0.999, "{f}");
    }

    #[test]
    fn report_values_are_fidelities() {
        let p = NvNvParams::default();
        let seq = random_seq(3, 8, 5.0);
        let r = report(&seq, &p, &nvnv_cnot_target());
        assert!((0.0..=1.0).contains(&r.fa_noise) && (0.0..=1.0).contains(&r.fseq));
    }

    #[test]
    fn noiseless_cnot_is_reachable() {
        let p = NvNvParams::default();
        let cfg = GrapeConfig {
            restarts: 1,
            max_iters: 300,
            ..nvnv_config(&p, false)
        };
        let r = optimize_nvnv_cnot(&cfg, &p).unwrap();
        assert!(r.report.fseq >= 0.995, "{}", r.report.fseq);
        assert!(r.report.fa_noise <= r.report.fseq);
    }

    /// Best fidelity of any product A ⊗ B to the CNOT.
    fn local_unitary_bound() -> f64 {
        // |tr(CNOT† (A⊗B))| ≤ |tr B| + |tr XB| ≤ 2√2, reached at B = exp(−iπX/4)
        (4.0 + 8.0) / 20.0
    }

    #[test]
    fn no_coupling_no_entangling_gate() {
        let p = NvNvParams {
            coupling: [[0.0; 3]; 3],
            ..NvNvParams::default()
        };
        let cfg = GrapeConfig {
            restarts: 2,
            max_iters: 300,
            n_segments: 20,
            ..nvnv_config(&p, false)
        };
        match optimize_nvnv_cnot(&cfg, &p) {
            Err(Error::Stalled { best, .. }) => assert!(best <= local_unitary_bound() + 1e-6, "{best}"),
            other => panic!("expected a stall, got {other:?}"),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn rwa_hamiltonian_hermitian(a in 0.0..20.0f64, b in 0.0..20.0f64, pa in 0.0..TAU, pb in 0.0..TAU,
                                     d0 in -1.0..1.0f64, d1 in -0.1..0.1f64) {
            let noise = NvNvNoise { delta0: [d0, -d0], delta1_rel: [d1, 0.0] };
            let h = h_nvnv_rwa(&NvNvParams::default(), [(a, pa), (b, pb)], &noise);
            prop_assert!(h.hermiticity_deviation() < 1e-12);
        }
    }
}

//! Single-qubit randomized benchmarking under quasi-static noise, and the
//! repeated-CNOT experiment used to fit deviations of the register
//! Hamiltonian.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grape::{cnot_target, fa_noise, GrapeSequence, Objective};
use crate::hamiltonians::{BasisMap, NoiseSample, NvParams};
use crate::linalg::{ComplexMatrix, Eigh, C64, ZERO};
use crate::noise::{
    evaluation_grids, gauss_grid, lorentz_grid, product_nodes, GaussianDist, LorentzianDist,
    QuadratureGrid,
};
use crate::optim::{levenberg_marquardt, nelder_mead, NelderMeadOptions};
use crate::pulses::{evolve_1q, rotation_target, PulseFamily, PulseSequence};

/// Independent RNG for task `(a, b)` of a run seeded with `seed`. Streams
/// are addressed by index, never by thread.
pub fn task_rng(seed: u64, a: u64, b: u64) -> ChaCha8Rng {
    // splitmix64 finalizer to decorrelate nearby seeds
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    let mut rng = ChaCha8Rng::seed_from_u64(z);
    rng.set_stream(b);
    rng
}

/// One logical gate. Phases and frame angles are in quarter turns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Gate {
    Identity,
    /// z rotation by π, realized as a frame update.
    FrameZ,
    /// Rotation about the equatorial axis at `phase`·π/2; `half` selects
    /// π/2 instead of π.
    Rotation { half: bool, phase: u8 },
}

impl Gate {
    fn ideal(self) -> ComplexMatrix {
        match self {
            Gate::Identity => ComplexMatrix::identity(2),
            Gate::FrameZ => ComplexMatrix::diag(&[C64::new(0.0, -1.0), C64::new(0.0, 1.0)]),
            Gate::Rotation { half, phase } => {
                rotation_target(if half { FRAC_PI_2 } else { PI }, phase as f64 * FRAC_PI_2)
            }
        }
    }
}

/// Pauli set: ±x and ±y π rotations, ±z as frame updates, ±I.
pub const PAULIS: [Gate; 8] = [
    Gate::Rotation { half: false, phase: 0 },
    Gate::Rotation { half: false, phase: 2 },
    Gate::Rotation { half: false, phase: 1 },
    Gate::Rotation { half: false, phase: 3 },
    Gate::FrameZ,
    Gate::FrameZ,
    Gate::Identity,
    Gate::Identity,
];

/// Non-Pauli Cliffords: ±x and ±y π/2 rotations.
pub const CLIFFORDS: [Gate; 4] = [
    Gate::Rotation { half: true, phase: 0 },
    Gate::Rotation { half: true, phase: 2 },
    Gate::Rotation { half: true, phase: 1 },
    Gate::Rotation { half: true, phase: 3 },
];

/// Candidate final gates returning any stabilizer state to |0⟩.
const INVERTERS: [Gate; 6] = [
    Gate::Identity,
    Gate::Rotation { half: false, phase: 0 },
    Gate::Rotation { half: true, phase: 0 },
    Gate::Rotation { half: true, phase: 2 },
    Gate::Rotation { half: true, phase: 1 },
    Gate::Rotation { half: true, phase: 3 },
];

/// `length` (Pauli, Clifford) pairs followed by an inverting gate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RbSequence {
    pub paulis: Vec<usize>,
    pub cliffords: Vec<usize>,
    pub inverter: Gate,
}

impl RbSequence {
    pub fn gates(&self) -> impl Iterator<Item = Gate> + '_ {
        self.paulis
            .iter()
            .zip(&self.cliffords)
            .flat_map(|(&p, &c)| [PAULIS[p], CLIFFORDS[c]])
            .chain(std::iter::once(self.inverter))
    }
}

fn apply(u: &ComplexMatrix, psi: [C64; 2]) -> [C64; 2] {
    [
        u[(0, 0)] * psi[0] + u[(0, 1)] * psi[1],
        u[(1, 0)] * psi[0] + u[(1, 1)] * psi[1],
    ]
}

pub fn sample_rb_sequence<R: Rng + ?Sized>(rng: &mut R, length: usize) -> RbSequence {
    let mut paulis = Vec::with_capacity(length);
    let mut cliffords = Vec::with_capacity(length);
    let mut psi = [C64::new(1.0, 0.0), ZERO];
    for _ in 0..length {
        let p = rng.random_range(0..PAULIS.len());
        let c = rng.random_range(0..CLIFFORDS.len());
        psi = apply(&PAULIS[p].ideal(), psi);
        psi = apply(&CLIFFORDS[c].ideal(), psi);
        paulis.push(p);
        cliffords.push(c);
    }
    let inverter = INVERTERS
        .into_iter()
        .find(|g| apply(&g.ideal(), psi)[0].norm_sqr() > 1.0 - 1e-9)
        .expect("stabilizer states are reachable");
    RbSequence {
        paulis,
        cliffords,
        inverter,
    }
}

/// Physical π/2 and π pulses of a family, at the four quarter-turn phases.
pub struct FamilyPulses {
    pub half: [PulseSequence; 4],
    pub full: [PulseSequence; 4],
}

/// The family's π rotation. SUPCODE has no π member inside its validity
/// window, so it uses two consecutive π/2 pulses.
fn family_rotation(family: PulseFamily, theta: f64, omega1: f64) -> Result<PulseSequence> {
    if family == PulseFamily::Supcode && theta >= PI {
        let h = family.build(theta / 2.0, omega1)?;
        let mut segs = h.segments.clone();
        segs.extend(h.segments);
        return PulseSequence::new("supcode", segs);
    }
    family.build(theta, omega1)
}

impl FamilyPulses {
    pub fn new(family: PulseFamily, omega1: f64) -> Result<Self> {
        let half = family_rotation(family, FRAC_PI_2, omega1)?;
        let full = family_rotation(family, PI, omega1)?;
        let rot = |s: &PulseSequence| -> [PulseSequence; 4] {
            std::array::from_fn(|k| s.rotated(k as f64 * FRAC_PI_2))
        };
        Ok(Self {
            half: rot(&half),
            full: rot(&full),
        })
    }

    fn unitaries(&self, noise: NoiseSample) -> ([ComplexMatrix; 4], [ComplexMatrix; 4]) {
        (
            std::array::from_fn(|k| evolve_1q(&self.half[k], noise)),
            std::array::from_fn(|k| evolve_1q(&self.full[k], noise)),
        )
    }
}

/// Survival probability of one sequence for one noise realization.
fn survival(seq: &RbSequence, half: &[ComplexMatrix; 4], full: &[ComplexMatrix; 4]) -> f64 {
    let mut psi = [C64::new(1.0, 0.0), ZERO];
    let mut frame = 0u8;
    for g in seq.gates() {
        match g {
            Gate::Identity => {}
            Gate::FrameZ => frame = (frame + 2) % 4,
            Gate::Rotation { half: h, phase } => {
                let k = ((phase + 4 - frame) % 4) as usize;
                psi = apply(if h { &half[k] } else { &full[k] }, psi);
            }
        }
    }
    psi[0].norm_sqr()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RbConfig {
    pub lengths: Vec<usize>,
    pub n_random: usize,
    pub repetitions: usize,
    pub family: PulseFamily,
    #[serde(rename = "omega1_mhz")]
    pub omega1: f64,
    pub gaussian: GaussianDist,
    pub lorentzian: LorentzianDist,
    pub d_if: f64,
    pub seed: u64,
}

impl Default for RbConfig {
    fn default() -> Self {
        Self {
            lengths: geometric_lengths(1024),
            n_random: 50,
            repetitions: 100,
            family: PulseFamily::Naive,
            omega1: 10.0,
            gaussian: GaussianDist::measured(),
            lorentzian: LorentzianDist::measured_relative(),
            d_if: 0.0,
            seed: 0,
        }
    }
}

impl RbConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lengths.is_empty() || self.lengths.contains(&0) {
            return Err(Error::Config("RB lengths must be nonempty and ≥ 1".into()));
        }
        if self.n_random == 0 || self.repetitions == 0 {
            return Err(Error::Config("n_random and repetitions must be ≥ 1".into()));
        }
        if !(0.0..1.0).contains(&self.d_if) {
            return Err(Error::Config(format!("d_if = {} outside [0, 1)", self.d_if)));
        }
        if !(self.omega1 > 0.0) {
            return Err(Error::Config("omega1 must be positive".into()));
        }
        Ok(())
    }
}

/// 1, 2, 4, … up to `max`.
pub fn geometric_lengths(max: usize) -> Vec<usize> {
    std::iter::successors(Some(1usize), |l| Some(l * 2))
        .take_while(|&l| l <= max)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RbRecord {
    pub family: PulseFamily,
    pub lengths: Vec<usize>,
    pub mean_fidelity: Vec<f64>,
    pub std_error: Vec<f64>,
    #[serde(rename = "F_a")]
    pub f_a: f64,
    pub eps_g: f64,
    pub eps_g_err: f64,
    pub d_if_fit: f64,
    pub d_if_err: f64,
}

/// Survival probabilities (after the readout model) of every random
/// sequence, indexed `[length][sequence]`.
pub fn rb_survivals(config: &RbConfig) -> Result<Vec<Vec<f64>>> {
    config.validate()?;
    let pulses = FamilyPulses::new(config.family, config.omega1)?;
    let tasks: Vec<(usize, usize)> = (0..config.lengths.len())
        .flat_map(|i| (0..config.n_random).map(move |j| (i, j)))
        .collect();
    let values: Vec<f64> = tasks
        .par_iter()
        .map(|&(i, j)| {
            // the family never draws from the stream, so every family sees
            // the same sequences and noise
            let mut rng = task_rng(config.seed, i as u64, j as u64);
            let seq = sample_rb_sequence(&mut rng, config.lengths[i]);
            let mut acc = 0.0;
            for _ in 0..config.repetitions {
                let noise = NoiseSample::new(
                    config.gaussian.sample(&mut rng),
                    config.lorentzian.sample(&mut rng),
                );
                let (half, full) = pulses.unitaries(noise);
                acc += survival(&seq, &half, &full);
            }
            let f = acc / config.repetitions as f64;
            (1.0 - config.d_if) * f + config.d_if / 2.0
        })
        .collect();
    Ok(values.chunks(config.n_random).map(|c| c.to_vec()).collect())
}

pub fn run_rb(config: &RbConfig) -> Result<RbRecord> {
    let survivals = rb_survivals(config)?;
    let n = config.n_random as f64;
    let mean: Vec<f64> = survivals.iter().map(|s| s.iter().sum::<f64>() / n).collect();
    let std_error = survivals
        .iter()
        .zip(&mean)
        .map(|(s, m)| {
            if s.len() < 2 {
                return 0.0;
            }
            let var = s.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        })
        .collect();
    let fit = fit_rb_decay(&config.lengths, &mean)?;
    Ok(RbRecord {
        family: config.family,
        lengths: config.lengths.clone(),
        mean_fidelity: mean,
        std_error,
        f_a: 1.0 - fit.eps_g,
        eps_g: fit.eps_g,
        eps_g_err: fit.eps_g_err,
        d_if_fit: fit.d_if,
        d_if_err: fit.d_if_err,
    })
}

fn finite_or_zero(e: f64) -> f64 {
    if e.is_finite() {
        e
    } else {
        0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RbDecayFit {
    pub eps_g: f64,
    pub eps_g_err: f64,
    pub d_if: f64,
    pub d_if_err: f64,
}

/// Fits `F = 1/2 + 1/2 (1 − d)(1 − 2ε)^l`, starting from a log-linear fit.
pub fn fit_rb_decay(lengths: &[usize], mean: &[f64]) -> Result<RbDecayFit> {
    if lengths.len() != mean.len() || lengths.len() < 2 {
        return Err(Error::FitDiverged("need at least two lengths".into()));
    }
    let pts: Vec<(f64, f64)> = lengths
        .iter()
        .zip(mean)
        .filter(|(_, &f)| 2.0 * f - 1.0 > 1e-6)
        .map(|(&l, &f)| (l as f64, (2.0 * f - 1.0).ln()))
        .collect();
    if pts.len() < 2 || mean.iter().any(|f| !f.is_finite()) {
        return Err(Error::FitDiverged("survival has decayed to 1/2 at all lengths".into()));
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::FitDiverged("all lengths are equal".into()));
    }
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx;
    let p0 = [(my - slope * mx).exp(), slope.exp()];
    let fit = levenberg_marquardt(
        |q| {
            lengths
                .iter()
                .zip(mean)
                .map(|(&l, &f)| 0.5 + 0.5 * q[0] * q[1].powf(l as f64) - f)
                .collect()
        },
        &p0,
        200,
    );
    let (a, p) = (fit.params[0], fit.params[1]);
    if !(a.is_finite() && p.is_finite() && p > 0.0) {
        return Err(Error::FitDiverged(format!("decay fit left the domain: A = {a}, p = {p}")));
    }
    Ok(RbDecayFit {
        eps_g: (1.0 - p) / 2.0,
        eps_g_err: finite_or_zero(fit.std_errors[1] / 2.0),
        d_if: 1.0 - a,
        d_if_err: finite_or_zero(fit.std_errors[0]),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CnotRepeatConfig {
    pub sequence: GrapeSequence,
    pub n_values: Vec<usize>,
    #[serde(rename = "delta_a_mhz")]
    pub delta_a: f64,
    #[serde(rename = "delta_omega_mhz")]
    pub delta_omega: f64,
    pub delta0_grid: QuadratureGrid,
    pub delta1_grid: QuadratureGrid,
}

/// Nodes of the δ0 rule for repeated gates. The response oscillates in δ0
/// at a rate growing with N, and 21 nodes stop resolving it by N ≈ 40.
pub const REPEAT_GAUSS_NODES: usize = 641;
pub const REPEAT_LORENTZ_NODES: usize = 3;

/// Quadrature converged for repetition counts up to 256.
pub fn repeat_grids(g: &GaussianDist, l: &LorentzianDist) -> (QuadratureGrid, QuadratureGrid) {
    (gauss_grid(g, REPEAT_GAUSS_NODES), lorentz_grid(l, REPEAT_LORENTZ_NODES))
}

/// Even repetition counts 2, 4, …, 192.
pub fn default_n_values() -> Vec<usize> {
    (1..=96).map(|k| 2 * k).collect()
}

impl CnotRepeatConfig {
    /// Repeated-gate grids at the given noise widths, no deviation.
    pub fn new(sequence: GrapeSequence, g: &GaussianDist, l: &LorentzianDist) -> Self {
        let (delta0_grid, delta1_grid) = repeat_grids(g, l);
        Self {
            sequence,
            n_values: default_n_values(),
            delta_a: 0.0,
            delta_omega: 0.0,
            delta0_grid,
            delta1_grid,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sequence.validate(f64::INFINITY)?;
        if self.n_values.iter().any(|&n| n % 2 == 1 || n > 256) {
            return Err(Error::Config("repetition counts must be even and ≤ 256".into()));
        }
        Ok(())
    }
}

const PROBE_LEVEL: usize = 3;

/// Ideal RF π/2 about x on the nuclear levels |0,+1⟩, |0,0⟩.
fn rf_half_pi() -> ComplexMatrix {
    let a = BasisMap::level(0, 1);
    let b = BasisMap::level(0, 0);
    let r = (PI / 4.0).cos();
    let s = C64::new(0.0, -(PI / 4.0).sin());
    let mut u = ComplexMatrix::identity(9);
    u[(a, a)] = C64::new(r, 0.0);
    u[(b, b)] = C64::new(r, 0.0);
    u[(a, b)] = s;
    u[(b, a)] = s;
    u
}

/// Population of |0,+1⟩ after RF π/2 (x) – CNOTᴺ – RF π/2 (−x), averaged
/// over the noise grids. `P(0) = 1`.
pub fn repeat_cnot(config: &CnotRepeatConfig, params: &NvParams) -> Result<Vec<f64>> {
    config.validate()?;
    let p = params.deviated(config.delta_a, config.delta_omega);
    Ok(repeat_cnot_on(
        &config.sequence,
        &p,
        &config.n_values,
        &config.delta0_grid,
        &config.delta1_grid,
    ))
}

fn repeat_cnot_on(
    seq: &GrapeSequence,
    params: &NvParams,
    n_values: &[usize],
    g0: &QuadratureGrid,
    g1: &QuadratureGrid,
) -> Vec<f64> {
    let rf = rf_half_pi();
    let rf_inv = rf.adjoint();
    let start: Vec<C64> = (0..9).map(|i| rf[(i, PROBE_LEVEL)]).collect();
    let mut order: Vec<usize> = (0..n_values.len()).collect();
    order.sort_by_key(|&i| n_values[i]);
    let reg = crate::hamiltonians::NvRegister::new(params.clone());
    let per_node: Vec<Vec<f64>> = product_nodes(g0, g1)
        .par_iter()
        .map(|&(w, noise)| {
            let mut u = ComplexMatrix::identity(9);
            for (&a, &ph) in seq.amplitudes.iter().zip(&seq.phases) {
                u = &Eigh::new_unchecked(&reg.hamiltonian(a, ph, noise)).propagator(seq.tau) * &u;
            }
            let u2 = &u * &u;
            let mut psi = start.clone();
            let mut n_now = 0;
            let mut out = vec![0.0; n_values.len()];
            for &i in &order {
                while n_now < n_values[i] {
                    psi = u2.apply(&psi);
                    n_now += 2;
                }
                let amp: C64 = (0..9).map(|k| rf_inv[(PROBE_LEVEL, k)] * psi[k]).sum();
                out[i] = w * amp.norm_sqr();
            }
            out
        })
        .collect();
    let mut total = vec![0.0; n_values.len()];
    for row in per_node {
        for (t, v) in total.iter_mut().zip(row) {
            *t += v;
        }
    }
    total.into_iter().map(|v| v.clamp(0.0, 1.0)).collect()
}

/// Number of turning points of `values` whose swing from the previous
/// extremum exceeds `min_swing`.
pub fn turning_points(values: &[f64], min_swing: f64) -> usize {
    let Some(&first) = values.first() else {
        return 0;
    };
    let (mut lo, mut hi) = (first, first);
    let mut rising: Option<bool> = None;
    let mut count = 0;
    for &v in &values[1..] {
        match rising {
            None => {
                if v - lo > min_swing {
                    rising = Some(true);
                    hi = v;
                } else if hi - v > min_swing {
                    rising = Some(false);
                    lo = v;
                }
            }
            Some(true) => {
                if v > hi {
                    hi = v;
                } else if hi - v > min_swing {
                    count += 1;
                    rising = Some(false);
                    lo = v;
                }
            }
            Some(false) => {
                if v < lo {
                    lo = v;
                } else if v - lo > min_swing {
                    count += 1;
                    rising = Some(true);
                    hi = v;
                }
            }
        }
    }
    count
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviationFit {
    #[serde(rename = "delta_a_mhz")]
    pub delta_a: f64,
    #[serde(rename = "delta_omega_mhz")]
    pub delta_omega: f64,
    pub delta_a_err: f64,
    pub delta_omega_err: f64,
    pub rms_residual: f64,
    /// Noise-averaged CNOT fidelity of the sequence under the fitted Hamiltonian.
    pub fa_noise: f64,
}

/// Options of the (δA, δΩ) search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviationSearch {
    /// Half-width of the scanned box in MHz.
    pub half_width: f64,
    /// Scan points per axis.
    pub scan_points: usize,
    /// Nodes of the δ0 grid used during the scan.
    pub scan_nodes: usize,
    /// Best scan points refined with Nelder–Mead on the full grids.
    pub refine: usize,
}

impl Default for DeviationSearch {
    fn default() -> Self {
        Self {
            half_width: 0.1,
            scan_points: 41,
            scan_nodes: 161,
            refine: 4,
        }
    }
}

/// Least-squares estimate of (δA, δΩ) from measured P01(N), using
/// `repeat_cnot` as the forward model. `config.delta_a`/`delta_omega` are
/// ignored; the noise grids of `config` are used for refinement.
pub fn fit_deviation(
    n_values: &[usize],
    data: &[f64],
    config: &CnotRepeatConfig,
    params: &NvParams,
    noise: (&GaussianDist, &LorentzianDist),
    search: &DeviationSearch,
) -> Result<DeviationFit> {
    config.validate()?;
    if n_values.len() != data.len() || n_values.is_empty() {
        return Err(Error::Config("repetition counts and data differ in length".into()));
    }
    if n_values.iter().copied().max().unwrap_or(0) < 96 {
        return Err(Error::Config("data must extend to at least N = 96".into()));
    }
    if n_values.iter().any(|&n| n % 2 == 1 || n > 256) {
        return Err(Error::Config("repetition counts must be even and ≤ 256".into()));
    }
    let seq = &config.sequence;
    let model = |x: &[f64], g0: &QuadratureGrid, g1: &QuadratureGrid| {
        repeat_cnot_on(seq, &params.deviated(x[0], x[1]), n_values, g0, g1)
    };
    let sse = |m: &[f64]| m.iter().zip(data).map(|(a, b)| (a - b).powi(2)).sum::<f64>();

    let coarse0 = gauss_grid(noise.0, search.scan_nodes.max(1));
    let coarse1 = lorentz_grid(noise.1, 1);
    let axis = crate::pulses::linspace(-search.half_width, search.half_width, search.scan_points.max(2));
    let cells: Vec<(f64, f64)> = axis
        .iter()
        .flat_map(|&a| axis.iter().map(move |&b| (a, b)))
        .collect();
    let scores: Vec<f64> = cells
        .par_iter()
        .map(|&(a, b)| sse(&model(&[a, b], &coarse0, &coarse1)))
        .collect();
    let mut ranked: Vec<usize> = (0..cells.len()).collect();
    ranked.sort_by(|&i, &j| scores[i].total_cmp(&scores[j]));

    let step = 2.0 * search.half_width / (search.scan_points.max(2) - 1) as f64;
    let (g0, g1) = (&config.delta0_grid, &config.delta1_grid);
    let best = ranked
        .iter()
        .take(search.refine.max(1))
        .map(|&i| {
            let (a, b) = cells[i];
            nelder_mead(
                |x| sse(&model(x, g0, g1)),
                &[a, b],
                &[step / 2.0, step / 2.0],
                NelderMeadOptions {
                    max_evals: 120,
                    ftol: 1e-14,
                    xtol: 1e-6,
                },
            )
        })
        .min_by(|a, b| a.value.total_cmp(&b.value))
        .expect("at least one candidate");
    if !best.value.is_finite() {
        return Err(Error::FitDiverged("deviation fit produced a non-finite residual".into()));
    }

    // uncertainties from the Gauss–Newton covariance at the optimum
    let lm = levenberg_marquardt(
        |x| model(x, g0, g1).iter().zip(data).map(|(a, b)| a - b).collect(),
        &best.x,
        0,
    );
    let deviated = params.deviated(best.x[0], best.x[1]);
    let (e0, e1) = evaluation_grids(noise.0, noise.1);
    let fa = fa_noise(seq, &deviated, &cnot_target(), &e0, &e1);
    Ok(DeviationFit {
        delta_a: best.x[0],
        delta_omega: best.x[1],
        delta_a_err: finite_or_zero(lm.std_errors[0]),
        delta_omega_err: finite_or_zero(lm.std_errors[1]),
        rms_residual: (best.value / data.len() as f64).sqrt(),
        fa_noise: fa,
    })
}

/// Fidelity of `seq` under deviated parameters, averaged over evaluation grids.
pub fn deviated_fidelity(
    seq: &GrapeSequence,
    params: &NvParams,
    delta_a: f64,
    delta_omega: f64,
    g: &GaussianDist,
    l: &LorentzianDist,
) -> f64 {
    let (g0, g1) = evaluation_grids(g, l);
    Objective::new(&params.deviated(delta_a, delta_omega), &cnot_target(), Some((&g0, &g1))).value(seq)
}

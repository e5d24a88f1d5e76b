//! Hamiltonians of the NV electron spin and the electron ⊗ ¹⁴N register.
//!
//! Units: frequencies are given in MHz and every returned Hamiltonian is in
//! rad/μs (MHz × 2π); durations are μs.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::linalg::{spin_operators, ComplexMatrix, Spin, C64};

/// Electron gyromagnetic ratio γe/2π in MHz/G.
pub const GAMMA_E_MHZ_PER_G: f64 = 2.8025;
/// ¹⁴N gyromagnetic ratio γN/2π in MHz/G.
pub const GAMMA_N14_MHZ_PER_G: f64 = 3.077e-4;
/// Rabi frequency at which the amplitude-noise width was calibrated (MHz).
pub const OMEGA1_CAL: f64 = 10.0;

/// Static spin constants of one NV center with its ¹⁴N nucleus (MHz unless noted).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NvParams {
    pub d_zfs: f64,
    pub p_quad: f64,
    pub a_hf: f64,
    pub omega_s: f64,
    pub omega_i: f64,
    pub delta_omega: f64,
    /// Static field in Gauss. Informational once `omega_s`/`omega_i` are set.
    pub b0: f64,
}

impl NvParams {
    pub fn with_field(b0: f64) -> Self {
        Self {
            d_zfs: 2870.0,
            p_quad: -4.95,
            a_hf: -2.16,
            omega_s: GAMMA_E_MHZ_PER_G * b0,
            omega_i: GAMMA_N14_MHZ_PER_G * b0,
            delta_omega: 0.0,
            b0,
        }
    }

    /// Same constants with the hyperfine and detuning deviations applied.
    pub fn deviated(&self, delta_a: f64, delta_omega: f64) -> Self {
        Self {
            a_hf: self.a_hf + delta_a,
            delta_omega: self.delta_omega + delta_omega,
            ..self.clone()
        }
    }
}

impl Default for NvParams {
    fn default() -> Self {
        Self::with_field(513.0)
    }
}

/// One realization of the quasi-static control errors.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseSample {
    /// Detuning error in MHz.
    pub delta0: f64,
    /// Relative drive-amplitude error.
    pub delta1_rel: f64,
    /// Drive phase error in rad.
    #[serde(default)]
    pub delta_phi: f64,
}

impl NoiseSample {
    pub const ZERO: Self = Self {
        delta0: 0.0,
        delta1_rel: 0.0,
        delta_phi: 0.0,
    };

    pub fn new(delta0: f64, delta1_rel: f64) -> Self {
        Self {
            delta0,
            delta1_rel,
            delta_phi: 0.0,
        }
    }

    /// Converts an absolute amplitude error (MHz) measured at `omega1_cal`
    /// into the relative form used everywhere else.
    pub fn from_absolute(delta0: f64, delta1_mhz: f64, omega1_cal: f64) -> Self {
        Self::new(delta0, delta1_mhz / omega1_cal)
    }
}

/// Practical single-qubit Hamiltonian
/// `2π δ0 Sz + 2π ω1 (1 + δ1) [cos(φ+δφ) Sx + sin(φ+δφ) Sy]`.
pub fn h_single_practical(omega1: f64, phi: f64, noise: NoiseSample) -> ComplexMatrix {
    let amp = TAU * omega1 * (1.0 + noise.delta1_rel);
    let ph = phi + noise.delta_phi;
    let dz = TAU * noise.delta0 * 0.5;
    let off = C64::new(amp * ph.cos(), -amp * ph.sin()) * 0.5;
    ComplexMatrix::from_fn(2, |r, c| match (r, c) {
        (0, 0) => C64::new(dz, 0.0),
        (1, 1) => C64::new(-dz, 0.0),
        (0, 1) => off,
        _ => off.conj(),
    })
}

const M_VALUES: [f64; 3] = [1.0, 0.0, -1.0];

/// Level ordering of the nine-level electron ⊗ nucleus space: electron mS
/// outer, nucleus mI inner, both in {+1, 0, −1}.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisMap {
    pub qubit_levels: [usize; 4],
}

impl BasisMap {
    pub fn level(ms: i32, mi: i32) -> usize {
        let idx = |m: i32| (1 - m) as usize;
        3 * idx(ms) + idx(mi)
    }

    /// Qubit order |0,+1⟩, |0,0⟩, |−1,+1⟩, |−1,0⟩ (electron mS, nuclear mI).
    pub fn nv_register() -> Self {
        Self {
            qubit_levels: [
                Self::level(0, 1),
                Self::level(0, 0),
                Self::level(-1, 1),
                Self::level(-1, 0),
            ],
        }
    }
}

impl Default for BasisMap {
    fn default() -> Self {
        Self::nv_register()
    }
}

/// Rotating-frame drive operators on the nine-level space (electron part ⊗ 1).
pub fn drive_operators() -> (ComplexMatrix, ComplexMatrix) {
    let r = 1.0 / 2f64.sqrt();
    let hx3 = ComplexMatrix::from_real_rows(&[&[0.0, r, 0.0], &[r, 0.0, r], &[0.0, r, 0.0]]);
    let i = C64::new(0.0, r);
    let z = C64::new(0.0, 0.0);
    let hy3 = ComplexMatrix::from_row_major(3, vec![z, -i, z, i, z, i, z, -i, z])
        .expect("3x3 literal");
    let id = ComplexMatrix::identity(3);
    (hx3.kron(&id), hy3.kron(&id))
}

/// Diagonal of the drift part (everything except the microwave drive), rad/μs.
pub fn drift_diagonal(params: &NvParams, noise: NoiseSample) -> [f64; 9] {
    let mut d = [0.0; 9];
    for (s, &ms) in M_VALUES.iter().enumerate() {
        for (n, &mi) in M_VALUES.iter().enumerate() {
            let e = params.omega_s * (ms + ms * ms) - params.omega_i * (mi - mi * mi)
                + params.a_hf * (ms * ms + ms * mi)
                + params.delta_omega * ms * ms
                + noise.delta0 * ms;
            d[3 * s + n] = TAU * e;
        }
    }
    d
}

/// Precomputed pieces of the rotating-frame electron ⊗ ¹⁴N Hamiltonian.
#[derive(Clone, Debug)]
pub struct NvRegister {
    pub hx: ComplexMatrix,
    pub hy: ComplexMatrix,
    pub params: NvParams,
}

impl NvRegister {
    pub fn new(params: NvParams) -> Self {
        let (hx, hy) = drive_operators();
        Self { hx, hy, params }
    }

    /// `2π ω1 (1+δ1)/√2 (cos φ Hx + sin φ Hy)`.
    pub fn drive(&self, omega1: f64, phi: f64, noise: NoiseSample) -> ComplexMatrix {
        let amp = TAU * omega1 * (1.0 + noise.delta1_rel) / 2f64.sqrt();
        let ph = phi + noise.delta_phi;
        &self.hx.scale_real(amp * ph.cos()) + &self.hy.scale_real(amp * ph.sin())
    }

    pub fn hamiltonian(&self, omega1: f64, phi: f64, noise: NoiseSample) -> ComplexMatrix {
        let mut h = self.drive(omega1, phi, noise);
        for (i, d) in drift_diagonal(&self.params, noise).iter().enumerate() {
            h[(i, i)] += d;
        }
        h
    }

    /// ∂H/∂ω1 and ∂H/∂φ for a segment.
    pub fn drive_derivatives(
        &self,
        omega1: f64,
        phi: f64,
        noise: NoiseSample,
    ) -> (ComplexMatrix, ComplexMatrix) {
        let unit = TAU * (1.0 + noise.delta1_rel) / 2f64.sqrt();
        let ph = phi + noise.delta_phi;
        let d_amp = &self.hx.scale_real(unit * ph.cos()) + &self.hy.scale_real(unit * ph.sin());
        let d_phase = &self.hx.scale_real(-unit * omega1 * ph.sin())
            + &self.hy.scale_real(unit * omega1 * ph.cos());
        (d_amp, d_phase)
    }
}

/// Rotating-frame Hamiltonian of the electron ⊗ ¹⁴N register (9×9).
pub fn h_two_qubit_rot(
    params: &NvParams,
    omega1: f64,
    phi: f64,
    noise: NoiseSample,
) -> ComplexMatrix {
    NvRegister::new(params.clone()).hamiltonian(omega1, phi, noise)
}

/// 4×4 block of a nine-level operator on the qubit levels of `map`.
pub fn project_qubit_subspace(u9: &ComplexMatrix, map: &BasisMap) -> ComplexMatrix {
    u9.submatrix(&map.qubit_levels)
}

/// Electron Sz ⊗ 1 on the nine-level space.
pub fn electron_sz() -> ComplexMatrix {
    spin_operators(Spin::One)
        .sz
        .kron(&ComplexMatrix::identity(3))
}

/// Duration of a resonant rotation by `theta` at Rabi frequency `omega1`.
pub fn rotation_time(theta: f64, omega1: f64) -> f64 {
    theta / (2.0 * PI * omega1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::expm_unitary;

    fn spin_half() -> crate::linalg::SpinOps {
        spin_operators(Spin::Half)
    }

    #[test]
    fn single_qubit_noiseless_drive() {
        let s = spin_half();
        let h = h_single_practical(10.0, 0.0, NoiseSample::ZERO);
        assert!(h.max_abs_diff(&s.sx.scale_real(TAU * 10.0)) <= 1e-12);
        let h = h_single_practical(10.0, PI / 2.0, NoiseSample::ZERO);
        assert!(h.max_abs_diff(&s.sy.scale_real(TAU * 10.0)) <= 1e-12);
    }

    #[test]
    fn single_qubit_detuning_only() {
        let s = spin_half();
        let h = h_single_practical(0.0, 0.0, NoiseSample::new(0.131, 0.0));
        assert!(h.max_abs_diff(&s.sz.scale_real(TAU * 0.131)) <= 1e-12);
    }

    #[test]
    fn pi_pulse_duration_convention() {
        let h = h_single_practical(10.0, 0.0, NoiseSample::ZERO);
        let u = expm_unitary(&h, rotation_time(PI, 10.0)).unwrap();
        assert!((u[(1, 0)].norm() - 1.0).abs() <= 1e-12);
        assert!((rotation_time(PI, 10.0) - 1.0 / 20.0).abs() < 1e-15);
    }

    #[test]
    fn default_params() {
        let p = NvParams::default();
        assert_eq!((p.d_zfs, p.p_quad, p.a_hf, p.b0), (2870.0, -4.95, -2.16, 513.0));
        assert!(p.omega_s > 0.0);
        assert_eq!(p.delta_omega, 0.0);
    }

    #[test]
    fn qubit_levels_order() {
        let m = BasisMap::nv_register();
        assert_eq!(m.qubit_levels, [3, 4, 6, 7]);
    }

    #[test]
    fn hyperfine_gap_from_diagonal() {
        let p = NvParams::default();
        let h = h_two_qubit_rot(&p, 0.0, 0.0, NoiseSample::ZERO);
        for r in 0..9 {
            for c in 0..9 {
                if r != c {
                    assert_eq!(h[(r, c)].norm(), 0.0);
                }
            }
        }
        let e = |ms, mi| h[(BasisMap::level(ms, mi), BasisMap::level(ms, mi))].re;
        let gap_plus = e(0, 1) - e(-1, 1);
        let gap_zero = e(0, 0) - e(-1, 0);
        assert!(((gap_plus - gap_zero).abs() - TAU * p.a_hf.abs()).abs() <= 1e-9);
        // the mI=+1 transition is resonant in this frame
        assert!(gap_plus.abs() <= 1e-12);
    }

    #[test]
    fn drive_matrix_elements() {
        let p = NvParams::default();
        let h = h_two_qubit_rot(&p, 10.0, 0.0, NoiseSample::ZERO);
        let el = h[(BasisMap::level(0, 1), BasisMap::level(-1, 1))];
        assert!((el.re - TAU * 10.0 / 2.0).abs() <= 1e-12 && el.im.abs() <= 1e-12);
        let el = h[(BasisMap::level(1, 0), BasisMap::level(0, 0))];
        assert!((el.re - TAU * 10.0 / 2.0).abs() <= 1e-12);
        // the drive never touches the nucleus
        assert_eq!(h[(BasisMap::level(0, 1), BasisMap::level(0, 0))].norm(), 0.0);
    }

    #[test]
    fn deviated_diagonal_shifts() {
        let p = NvParams::default();
        let q = p.deviated(0.008, 0.068);
        let h0 = h_two_qubit_rot(&p, 0.0, 0.0, NoiseSample::ZERO);
        let h1 = h_two_qubit_rot(&q, 0.0, 0.0, NoiseSample::ZERO);
        let shift = |ms: i32, mi: i32| {
            let l = BasisMap::level(ms, mi);
            (h1[(l, l)] - h0[(l, l)]).re / TAU
        };
        assert!((shift(-1, 1) - 0.068).abs() <= 1e-9);
        assert!((shift(-1, 0) - (0.068 + 0.008)).abs() <= 1e-9);
        assert!(shift(0, 1).abs() <= 1e-12 && shift(0, 0).abs() <= 1e-12);
        assert!((shift(1, 1) - (0.068 + 2.0 * 0.008)).abs() <= 1e-9);
    }

    #[test]
    fn register_is_hermitian_and_electron_only() {
        let p = NvParams::default();
        for (w, ph, d0, d1) in [(0.0, 0.0, 0.0, 0.0), (13.0, 1.1, 0.2, 0.01), (20.0, -2.0, -0.3, -0.02)] {
            let h = h_two_qubit_rot(&p, w, ph, NoiseSample::new(d0, d1));
            assert!(h.hermiticity_deviation() <= 1e-12 * h.max_abs());
            let a = BasisMap::level(0, -1);
            assert_eq!(h[(a, BasisMap::level(0, 1))].norm(), 0.0);
            assert_eq!(h[(a, BasisMap::level(0, 0))].norm(), 0.0);
        }
        let drift = h_two_qubit_rot(&p, 0.0, 0.0, NoiseSample::new(0.1, 0.0));
        assert!(drift.commutator(&electron_sz()).max_abs() <= 1e-12);
    }

    #[test]
    fn projection_of_identity_and_phases() {
        let m = BasisMap::nv_register();
        let p = project_qubit_subspace(&ComplexMatrix::identity(9), &m);
        assert_eq!(p, ComplexMatrix::identity(4));
        let phases: Vec<C64> = (0..9).map(|k| C64::from_polar(1.0, 0.3 * k as f64)).collect();
        let p = project_qubit_subspace(&ComplexMatrix::diag(&phases), &m);
        let want: Vec<C64> = m.qubit_levels.iter().map(|&l| phases[l]).collect();
        assert_eq!(p, ComplexMatrix::diag(&want));
    }

    #[test]
    fn selective_pulse_flips_only_the_plus_one_manifold() {
        // Selective π on |0,+1⟩ ↔ |−1,+1⟩ with ω1 = |A|/√3, so the detuned
        // mI=0 transition completes a full 2π cycle.
        let p = NvParams::default();
        let w = p.a_hf.abs() / 3f64.sqrt();
        let h = h_two_qubit_rot(&p, w, 0.0, NoiseSample::ZERO);
        let u9 = expm_unitary(&h, rotation_time(PI, w)).unwrap();
        let u4 = project_qubit_subspace(&u9, &BasisMap::nv_register());
        assert!(u4[(2, 0)].norm() > 0.999 && u4[(0, 2)].norm() > 0.999);
        assert!(u4[(1, 1)].norm() > 0.999 && u4[(3, 3)].norm() > 0.999);
        assert!(u4[(3, 1)].norm() < 0.02);
    }
}

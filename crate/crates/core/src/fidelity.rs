//! Average gate fidelity between a (possibly noise-averaged) unitary channel
//! and a target unitary.

use crate::linalg::{spin_operators, ComplexMatrix, Spin};

/// `[tr(M M†) + |tr M|²] / (d(d+1))` with `M = target† · u`.
///
/// `u` may be a sub-unitary projection; leakage lowers `tr(M M†)`.
pub fn fseq(u: &ComplexMatrix, target: &ComplexMatrix) -> f64 {
    let d = u.dim() as f64;
    // tr(M) = <target, u>, tr(M M†) = ||u||² for unitary target
    let tr_m = target.inner(u);
    let tr_mm = u.inner(u).re;
    (tr_mm + tr_m.norm_sqr()) / (d * (d + 1.0))
}

/// Single-qubit average fidelity of the mixed-unitary channel
/// `ξ(ρ) = Σ_k w_k U_k ρ U_k†` against `target`, evaluated through the
/// Pauli-sum form `1/2 + 1/12 Σ_j tr(T σ_j T† ξ(σ_j))`.
pub fn avg_fidelity_pauli<'a>(
    target: &ComplexMatrix,
    channel: impl IntoIterator<Item = (f64, &'a ComplexMatrix)>,
) -> f64 {
    let s = spin_operators(Spin::Half);
    // Pauli matrices are 2S
    let paulis = [s.sx.scale_real(2.0), s.sy.scale_real(2.0), s.sz.scale_real(2.0)];
    let td = target.adjoint();
    let rotated: Vec<ComplexMatrix> = paulis.iter().map(|p| &(target * p) * &td).collect();
    let mut acc = 0.0;
    let mut total_w = 0.0;
    for (w, u) in channel {
        let ud = u.adjoint();
        for (p, tp) in paulis.iter().zip(&rotated) {
            let xi = &(u * p) * &ud;
            // tr(A B) = <A†, B>; the rotated Paulis are Hermitian
            acc += w * tp.inner(&xi).re;
        }
        total_w += w;
    }
    0.5 * total_w + acc / 12.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::testutil::random_hermitian;
    use crate::linalg::{expm_unitary, C64};

    fn cnot() -> ComplexMatrix {
        ComplexMatrix::from_real_rows(&[
            &[0.0, 0.0, 1.0, 0.0],
            &[0.0, 1.0, 0.0, 0.0],
            &[1.0, 0.0, 0.0, 0.0],
            &[0.0, 0.0, 0.0, 1.0],
        ])
    }

    #[test]
    fn fseq_target_and_phase() {
        let t = cnot();
        assert!((fseq(&t, &t) - 1.0).abs() <= 1e-15);
        for a in [0.3, 1.7, -2.9] {
            assert!((fseq(&t.scale(C64::from_polar(1.0, a)), &t) - 1.0).abs() <= 1e-14);
        }
    }

    #[test]
    fn fseq_identity_vs_cnot() {
        // M = CNOT: tr(MM†) = 4, |tr M|² = 4
        assert!((fseq(&ComplexMatrix::identity(4), &cnot()) - 0.4).abs() <= 1e-15);
    }

    #[test]
    fn pauli_form_matches_trace_form() {
        for seed in 0..20 {
            let t = expm_unitary(&random_hermitian(2, seed), 0.3).unwrap();
            let u = expm_unitary(&random_hermitian(2, seed + 100), 0.2).unwrap();
            let a = avg_fidelity_pauli(&t, [(1.0, &u)]);
            assert!((a - fseq(&u, &t)).abs() <= 1e-12, "{a} vs {}", fseq(&u, &t));
            assert!((avg_fidelity_pauli(&t, [(1.0, &t)]) - 1.0).abs() <= 1e-12);
        }
    }
}

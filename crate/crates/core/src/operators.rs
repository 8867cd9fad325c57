//! Dense spin-1/2 operators, Hamiltonians and toggling-frame averages.
//!
//! Basis convention: the computational basis of N spins is indexed by the
//! bits of `b` in `0..2^N`; bit j of `b` is spin j, bit value 0 means
//! m = +1/2. Spin operators are Pauli matrices divided by two.
//!
//! Hamiltonians are Hermitian matrices in angular frequency units (rad/s).
//! The secular dipolar Hamiltonian of a lattice with couplings d_jk (Hz) is
//!
//! ```text
//! H_dd = Σ_{j<k} 2π d_jk (3 I_jz I_kz − I_j · I_k)
//! ```
//!
//! and on-site disorder enters as H_z = Σ_j 2π c_j I_jz. Toggling frames are
//! defined by H^(j) = exp(+i j ϑ I_x) H exp(−i j ϑ I_x); the leading-order
//! average Hamiltonian is the mean of H^(j) over one full phase cycle, i.e.
//! over the smallest N_k with N_k ϑ ≡ 0 (mod 2π). For ϑ = π/2 that average
//! has the closed form Σ 2π d_jk [3/2 (I_jz I_kz + I_jy I_ky) − I_j · I_k],
//! which commutes with collective I_x and no longer contains H_z.

use ndarray::Array2;
use num_complex::Complex64 as C64;
use thiserror::Error;

use crate::constants::{MAX_CYCLE_PULSES, MAX_DENSE_SPINS};
use crate::lattice::SpinLattice;

/// Tolerance for deciding that N·ϑ is a multiple of 2π.
const CYCLE_PHASE_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum OperatorError {
    #[error("{n} spins exceed the dense-matrix limit of {max}")]
    DimensionTooLarge { n: usize, max: usize },
    #[error("operator construction needs at least one spin")]
    EmptySystem,
    #[error("flip angle {theta} rad has no phase cycle within {max} pulses")]
    NonPeriodicFlipAngle { theta: f64, max: usize },
    #[error("operands act on {left} and {right} spins")]
    SpinCountMismatch { left: usize, right: usize },
}

/// What the matrix elements of a [`SpinOperator`] mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorUnits {
    /// Bare spin operators and unitaries.
    Dimensionless,
    /// Hamiltonians, rad/s.
    AngularFrequency,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

/// Dense operator on the 2^N-dimensional Hilbert space of N spins.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinOperator {
    pub matrix: Array2<C64>,
    pub n_spins: usize,
    pub units: OperatorUnits,
}

impl SpinOperator {
    pub fn dim(&self) -> usize {
        1 << self.n_spins
    }

    pub fn zeros(n_spins: usize, units: OperatorUnits) -> Result<Self, OperatorError> {
        let dim = check_spin_count(n_spins)?;
        Ok(Self {
            matrix: Array2::zeros((dim, dim)),
            n_spins,
            units,
        })
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.matrix.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        let m = &self.matrix;
        for i in 0..m.nrows() {
            for j in i..m.ncols() {
                if (m[[i, j]] - m[[j, i]].conj()).norm() > tol {
                    return false;
                }
            }
        }
        true
    }

    /// ‖A − B‖_F.
    pub fn distance(&self, other: &Self) -> f64 {
        (&self.matrix - &other.matrix)
            .iter()
            .map(|z| z.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// Commutator norm ‖[A, B]‖_F.
    pub fn commutator_norm(&self, other: &Self) -> f64 {
        let ab = self.matrix.dot(&other.matrix);
        let ba = other.matrix.dot(&self.matrix);
        (&ab - &ba).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn add(&self, other: &Self) -> Result<Self, OperatorError> {
        if self.n_spins != other.n_spins {
            return Err(OperatorError::SpinCountMismatch {
                left: self.n_spins,
                right: other.n_spins,
            });
        }
        Ok(Self {
            matrix: &self.matrix + &other.matrix,
            n_spins: self.n_spins,
            units: self.units,
        })
    }
}

fn check_spin_count(n: usize) -> Result<usize, OperatorError> {
    if n == 0 {
        return Err(OperatorError::EmptySystem);
    }
    if n > MAX_DENSE_SPINS {
        return Err(OperatorError::DimensionTooLarge {
            n,
            max: MAX_DENSE_SPINS,
        });
    }
    Ok(1 << n)
}

/// Sign of spin j in basis state b: +1 for m = +1/2 (bit 0), −1 otherwise.
#[inline]
fn sz_sign(b: usize, j: usize) -> f64 {
    if b & (1 << j) == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Collective operator I_axis = Σ_j I_j,axis (dimensionless).
pub fn collective_operator(axis: Axis, n_spins: usize) -> Result<SpinOperator, OperatorError> {
    let dim = check_spin_count(n_spins)?;
    let mut m = Array2::<C64>::zeros((dim, dim));
    for b in 0..dim {
        for j in 0..n_spins {
            match axis {
                Axis::X => m[[b ^ (1 << j), b]] += C64::new(0.5, 0.0),
                // ⟨b ⊕ j|I_jy|b⟩ = +i/2 when spin j is up in b, −i/2 when down.
                Axis::Y => {
                    m[[b ^ (1 << j), b]] += C64::new(0.0, 0.5 * sz_sign(b, j));
                }
                Axis::Z => m[[b, b]] += C64::new(0.5 * sz_sign(b, j), 0.0),
            }
        }
    }
    Ok(SpinOperator {
        matrix: m,
        n_spins,
        units: OperatorUnits::Dimensionless,
    })
}

/// Secular dipolar Hamiltonian of the lattice, rad/s.
pub fn build_dipolar_hamiltonian(lattice: &SpinLattice) -> Result<SpinOperator, OperatorError> {
    let n = lattice.spin_count();
    let dim = check_spin_count(n)?;
    let mut m = Array2::<C64>::zeros((dim, dim));
    for &(j, k, d_hz) in &lattice.couplings {
        let w = 2.0 * std::f64::consts::PI * d_hz;
        let mask = (1 << j) | (1 << k);
        for b in 0..dim {
            // 3 IzIz − I·I = 2 IzIz − IxIx − IyIy.
            m[[b, b]] += C64::new(0.5 * w * sz_sign(b, j) * sz_sign(b, k), 0.0);
            if sz_sign(b, j) * sz_sign(b, k) < 0.0 {
                // Flip-flop between anti-aligned pair states.
                m[[b ^ mask, b]] += C64::new(-0.5 * w, 0.0);
            }
        }
    }
    Ok(SpinOperator {
        matrix: m,
        n_spins: n,
        units: OperatorUnits::AngularFrequency,
    })
}

/// On-site disorder Hamiltonian Σ_j 2π c_j I_jz, rad/s.
pub fn build_onsite_hamiltonian(lattice: &SpinLattice) -> Result<SpinOperator, OperatorError> {
    let n = lattice.spin_count();
    let dim = check_spin_count(n)?;
    let mut m = Array2::<C64>::zeros((dim, dim));
    for b in 0..dim {
        let mut e = 0.0;
        for (j, c_hz) in lattice.disorder_hz.iter().enumerate() {
            e += 2.0 * std::f64::consts::PI * c_hz * 0.5 * sz_sign(b, j);
        }
        m[[b, b]] = C64::new(e, 0.0);
    }
    Ok(SpinOperator {
        matrix: m,
        n_spins: n,
        units: OperatorUnits::AngularFrequency,
    })
}

/// Closed-form ϑ = π/2 average Hamiltonian
/// Σ 2π d_jk [3/2 (IzIz + IyIy) − I·I], rad/s.
pub fn flip_flop_hamiltonian(lattice: &SpinLattice) -> Result<SpinOperator, OperatorError> {
    let n = lattice.spin_count();
    let dim = check_spin_count(n)?;
    let mut m = Array2::<C64>::zeros((dim, dim));
    for &(j, k, d_hz) in &lattice.couplings {
        let w = 2.0 * std::f64::consts::PI * d_hz;
        let mask = (1 << j) | (1 << k);
        for b in 0..dim {
            let zz = 0.25 * sz_sign(b, j) * sz_sign(b, k);
            // 1/2 IzIz on the diagonal.
            m[[b, b]] += C64::new(0.5 * w * zz, 0.0);
            // 1/2 IyIy − IxIx both flip spins j and k:
            // ⟨b⊕jk| IyIy |b⟩ = −1/4 s_j s_k, ⟨b⊕jk| IxIx |b⟩ = 1/4.
            let yy = -0.25 * sz_sign(b, j) * sz_sign(b, k);
            m[[b ^ mask, b]] += C64::new(w * (0.5 * yy - 0.25), 0.0);
        }
    }
    Ok(SpinOperator {
        matrix: m,
        n_spins: n,
        units: OperatorUnits::AngularFrequency,
    })
}

/// Dipolar and on-site parts of a lattice Hamiltonian.
#[derive(Debug, Clone)]
pub struct HamiltonianSet {
    pub dipolar: SpinOperator,
    pub onsite: SpinOperator,
}

impl HamiltonianSet {
    pub fn from_lattice(lattice: &SpinLattice) -> Result<Self, OperatorError> {
        Ok(Self {
            dipolar: build_dipolar_hamiltonian(lattice)?,
            onsite: build_onsite_hamiltonian(lattice)?,
        })
    }

    pub fn n_spins(&self) -> usize {
        self.dipolar.n_spins
    }

    /// H = H_dd + H_z.
    pub fn total(&self) -> SpinOperator {
        SpinOperator {
            matrix: &self.dipolar.matrix + &self.onsite.matrix,
            n_spins: self.dipolar.n_spins,
            units: OperatorUnits::AngularFrequency,
        }
    }
}

/// Global rotation exp(−iϑ I_axis) as a Kronecker power of the single-spin
/// rotation.
pub fn collective_rotation(
    theta: f64,
    axis: Axis,
    n_spins: usize,
) -> Result<SpinOperator, OperatorError> {
    check_spin_count(n_spins)?;
    let (c, s) = ((theta / 2.0).cos(), (theta / 2.0).sin());
    let u2 = match axis {
        Axis::X => [
            [C64::new(c, 0.0), C64::new(0.0, -s)],
            [C64::new(0.0, -s), C64::new(c, 0.0)],
        ],
        Axis::Y => [
            [C64::new(c, 0.0), C64::new(-s, 0.0)],
            [C64::new(s, 0.0), C64::new(c, 0.0)],
        ],
        Axis::Z => [
            [C64::new(c, -s), C64::new(0.0, 0.0)],
            [C64::new(0.0, 0.0), C64::new(c, s)],
        ],
    };
    let mut m = Array2::<C64>::from_elem((1, 1), C64::new(1.0, 0.0));
    for _ in 0..n_spins {
        m = kron2(&m, &u2);
    }
    Ok(SpinOperator {
        matrix: m,
        n_spins,
        units: OperatorUnits::Dimensionless,
    })
}

/// Kronecker product with a fixed 2×2 right factor.
fn kron2(a: &Array2<C64>, b: &[[C64; 2]; 2]) -> Array2<C64> {
    let (ra, ca) = a.dim();
    let mut out = Array2::<C64>::zeros((2 * ra, 2 * ca));
    for i in 0..ra {
        for j in 0..ca {
            let v = a[[i, j]];
            for p in 0..2 {
                for q in 0..2 {
                    out[[2 * i + p, 2 * j + q]] = v * b[p][q];
                }
            }
        }
    }
    out
}

/// j-th toggling-frame Hamiltonian H^(j) = exp(+ijϑI_x) H exp(−ijϑI_x).
pub fn toggled_hamiltonian(
    h: &SpinOperator,
    theta: f64,
    j: usize,
) -> Result<SpinOperator, OperatorError> {
    // exp(+iαI_x) = collective_rotation(−α).
    let rot = collective_rotation(-(j as f64) * theta, Axis::X, h.n_spins)?;
    let rot_dag = rot.matrix.t().mapv(|z| z.conj());
    Ok(SpinOperator {
        matrix: rot.matrix.dot(&h.matrix).dot(&rot_dag),
        n_spins: h.n_spins,
        units: h.units,
    })
}

/// Leading-order average Hamiltonian over one full phase cycle.
#[derive(Debug, Clone)]
pub struct AverageHamiltonian {
    pub h_f0: SpinOperator,
    /// Pulses per phase cycle, the smallest N_k with N_k ϑ ≡ 0 (mod 2π).
    pub cycle_pulses: usize,
    pub flip_angle: f64,
}

/// Smallest n ≥ 1 with n·θ within [`CYCLE_PHASE_TOL`] of a multiple of 2π.
pub fn cycle_length(theta: f64) -> Result<usize, OperatorError> {
    for n in 1..=MAX_CYCLE_PULSES {
        let phase = n as f64 * theta;
        let wrapped = phase - (phase / std::f64::consts::TAU).round() * std::f64::consts::TAU;
        if wrapped.abs() < CYCLE_PHASE_TOL {
            return Ok(n);
        }
    }
    Err(OperatorError::NonPeriodicFlipAngle {
        theta,
        max: MAX_CYCLE_PULSES,
    })
}

/// H_F^(0) = (1/N_k) Σ_{j=1..N_k} H^(j).
pub fn average_hamiltonian(
    h: &SpinOperator,
    theta: f64,
) -> Result<AverageHamiltonian, OperatorError> {
    let n_k = cycle_length(theta)?;
    let step = collective_rotation(-theta, Axis::X, h.n_spins)?;
    let step_dag = step.matrix.t().mapv(|z| z.conj());
    let mut current = h.matrix.clone();
    let mut acc = Array2::<C64>::zeros(h.matrix.raw_dim());
    for _ in 0..n_k {
        current = step.matrix.dot(&current).dot(&step_dag);
        acc += &current;
    }
    acc.mapv_inplace(|z| z / n_k as f64);
    Ok(AverageHamiltonian {
        h_f0: SpinOperator {
            matrix: acc,
            n_spins: h.n_spins,
            units: h.units,
        },
        cycle_pulses: n_k,
        flip_angle: theta,
    })
}

/// Magnus expansion parameter ζ = J·τ for J in Hz and τ in seconds, with the
/// drive frequency convention ω = 2π/τ (so ζ = 2πJ/ω).
pub fn magnus_parameter(j_hz: f64, tau_s: f64) -> f64 {
    j_hz * tau_s
}

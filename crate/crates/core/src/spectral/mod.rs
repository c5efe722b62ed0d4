//! Schrödinger operator, resolvent, diagonal Green's function and the functionals built on it.

mod functionals;
mod green;
mod operator;
mod point;
pub mod riccati;

pub use functionals::{
    alpha, alpha_from_green, alpha_with, conserved_basics, exp_kernel_symbol, hamiltonian_from_alpha,
    hamiltonian_hk, hamiltonian_hk_with, recover_potential, rho_field, Conserved,
};
pub use green::{band_tail, diag_green, diag_green_from_op, diag_green_with, green_response, DiagGreen, GreenMethod};
pub use operator::{
    fourier_to_nodal, nodal_to_fourier, read_matrix_binary, resolvent_diagonal_direct, write_matrix_binary, Resolvent,
    SchrodingerOp,
    SPECTRUM_GUARD,
};
pub use point::{SpectralPoint, DEFAULT_C_STRICT};

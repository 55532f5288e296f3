//! Spectral theory of the Hill operator `L_u = -d²/dx² + u`.

mod gradient;
mod oracle;
mod spectrum;
mod transfer;

pub use gradient::{functional_gradient_fd, gardner_bracket, FdOptions};
pub use oracle::{block_eigenvalues, matrix_dirichlet, matrix_discriminant, matrix_oracle_spectrum};
pub use spectrum::{
    delta_scan, dirichlet_in, dirichlet_spectrum, discriminant, gap_lengths, hill_spectrum, periodic_spectrum,
    periodic_spectrum_with, scan_cutoff, trace_reconstruct, trace_reconstruct_with, Discriminant, Hill, HillSpectrum,
    PeriodicSpectrum, SpectrumTolerances, TraceReconstruction,
};
pub use transfer::{transfer, transfer_at, Potential, TransferData};


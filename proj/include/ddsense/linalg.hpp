#pragma once

#include <cmath>
#include <complex>
#include <string>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "ddsense/errors.hpp"

// Small-dimension complex linear algebra for piecewise-constant Hamiltonian
// evolution.  Everything here is exact up to floating point: propagators are
// built by eigendecomposition, so there is no step-size to tune.
//
// Conventions, fixed once:
//   * rotations are exp(-i theta/2 n.sigma) with n = (cos phi, sin phi, 0),
//   * spin-up is the first basis element,
//   * global phases are untracked; observables are populations.

namespace ddsense {

using cxd = std::complex<double>;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;

inline CMatrix pauli_x() { return (CMatrix(2, 2) << 0, 1, 1, 0).finished(); }
inline CMatrix pauli_y() {
    return (CMatrix(2, 2) << 0, cxd(0, -1), cxd(0, 1), 0).finished();
}
inline CMatrix pauli_z() { return (CMatrix(2, 2) << 1, 0, 0, -1).finished(); }

// exp(-i H t) for Hermitian H, via eigendecomposition.
// Hermiticity is enforced to 1e-12 relative to the largest entry.
inline CMatrix expm_hermitian(const CMatrix& h, double t) {
    if (h.rows() != h.cols())
        throw invalid_input("expm_hermitian: matrix is not square");
    if (!std::isfinite(t))
        throw invalid_input("expm_hermitian: non-finite time");
    const double scale = std::max(1.0, h.cwiseAbs().maxCoeff());
    if (((h - h.adjoint()).cwiseAbs().maxCoeff()) > 1e-12 * scale)
        throw invalid_input("expm_hermitian: input is not Hermitian");

    Eigen::SelfAdjointEigenSolver<CMatrix> es(h);
    const auto& w = es.eigenvalues();
    const auto& v = es.eigenvectors();
    CVector phases(w.size());
    for (Eigen::Index i = 0; i < w.size(); ++i)
        phases(i) = std::exp(cxd(0.0, -w(i) * t));
    return v * phases.asDiagonal() * v.adjoint();
}

// Rotation by theta about the in-plane axis at azimuth phi:
// exp(-i theta/2 (cos phi sx + sin phi sy)).
inline CMatrix rotation_unitary(double theta, double phi) {
    const double c = std::cos(theta / 2.0);
    const double s = std::sin(theta / 2.0);
    const cxd mi(0.0, -1.0);
    CMatrix u(2, 2);
    u(0, 0) = c;
    u(0, 1) = mi * std::exp(cxd(0.0, -phi)) * s;
    u(1, 0) = mi * std::exp(cxd(0.0, phi)) * s;
    u(1, 1) = c;
    return u;
}

// rho -> U rho U^dagger
inline CMatrix conjugate_density(const CMatrix& rho, const CMatrix& u) {
    if (rho.rows() != rho.cols() || u.rows() != u.cols())
        throw invalid_input("conjugate_density: inputs must be square");
    if (rho.rows() != u.rows())
        throw invalid_input("conjugate_density: dimension mismatch ("
                            + std::to_string(rho.rows()) + " vs "
                            + std::to_string(u.rows()) + ")");
    return u * rho * u.adjoint();
}

inline CMatrix kron(const CMatrix& a, const CMatrix& b) {
    CMatrix out(a.rows() * b.rows(), a.cols() * b.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < a.cols(); ++j)
            out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    return out;
}

inline double unitarity_error(const CMatrix& u) {
    return (u.adjoint() * u - CMatrix::Identity(u.rows(), u.cols()))
        .cwiseAbs()
        .maxCoeff();
}

// Largest of |tr(rho) - 1|, hermiticity defect, and negative-eigenvalue
// excursion.  Handy for state-sanity assertions.
inline double density_defect(const CMatrix& rho) {
    double d = std::abs(rho.trace() - cxd(1.0, 0.0));
    d = std::max(d, (rho - rho.adjoint()).cwiseAbs().maxCoeff());
    Eigen::SelfAdjointEigenSolver<CMatrix> es(rho);
    d = std::max(d, std::max(0.0, -es.eigenvalues().minCoeff()));
    return d;
}

} // namespace ddsense

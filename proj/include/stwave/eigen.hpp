#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <string>
#include <vector>

#include "stwave/tensor.hpp"

namespace stwave {

// Lowest-d eigenpairs of a symmetric matrix. Column i of eigenvectors pairs
// with eigenvalues[i]; eigenvalues ascending.
struct EigenBasis {
    std::vector<double> eigenvalues;
    FlowTensor eigenvectors; // (N, d)

    long n_nodes() const { return eigenvectors.extent(0); }
    long dim() const { return static_cast<long>(eigenvalues.size()); }
};

// Dense symmetric eigendecomposition keeping the d lowest pairs. Sign
// convention: the first component with |v| > 1e-12 of each eigenvector is
// made positive, so repeated calls (and cached bases) are bitwise stable.
inline EigenBasis symmetric_eigen_lowest(const FlowTensor& m, long d, double sym_tol = 1e-10) {
    if (m.rank() != 2 || m.extent(0) != m.extent(1))
        throw ShapeError("symmetric_eigen_lowest: expected square matrix, got " + shape_str(m.shape()));
    const long n = m.extent(0);
    if (d < 1 || d > n)
        throw ArgumentError("symmetric_eigen_lowest: d = " + std::to_string(d) +
                            " outside [1, " + std::to_string(n) + "]");
    for (long i = 0; i < n; ++i)
        for (long j = i + 1; j < n; ++j)
            if (std::abs(m.at(i, j) - m.at(j, i)) > sym_tol)
                throw NumericError("symmetric_eigen_lowest: input asymmetric at (" +
                                   std::to_string(i) + "," + std::to_string(j) + ")");

    Eigen::MatrixXd a(n, n);
    for (long i = 0; i < n; ++i)
        for (long j = 0; j < n; ++j) a(i, j) = 0.5 * (m.at(i, j) + m.at(j, i));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(a);
    if (solver.info() != Eigen::Success)
        throw NumericError("symmetric_eigen_lowest: eigensolver failed to converge");

    EigenBasis basis;
    basis.eigenvalues.resize(static_cast<std::size_t>(d));
    basis.eigenvectors = FlowTensor({n, d});
    for (long c = 0; c < d; ++c) {
        basis.eigenvalues[static_cast<std::size_t>(c)] = solver.eigenvalues()(c);
        double sign = 1.0;
        for (long r = 0; r < n; ++r) {
            const double v = solver.eigenvectors()(r, c);
            if (std::abs(v) > 1e-12) {
                sign = v > 0.0 ? 1.0 : -1.0;
                break;
            }
        }
        for (long r = 0; r < n; ++r) basis.eigenvectors.at(r, c) = sign * solver.eigenvectors()(r, c);
    }
    return basis;
}

} // namespace stwave

#pragma once

#include <cmath>

#include "stwave/eigen.hpp"
#include "stwave/graph.hpp"
#include "stwave/tape.hpp"

namespace stwave {

// Wavelet-based graph positional encoding rho = Phi * diag(e^{s*lambda})^{1/2}
// over the d lowest Laplacian eigenpairs of a graph. The scale s is learnable;
// rho * rho^T reproduces the graph wavelet on the retained spectrum. When the
// model dimension exceeds N the extra columns are zero.
struct GraphPE {
    FlowTensor rho;    // (N, target_dim), value for the current scale
    Param* scale = nullptr;
    EigenBasis basis;  // d lowest pairs
    long target_dim = 0;

    FlowTensor phi_padded;    // (N, target_dim): eigenvectors, zero-padded columns
    FlowTensor lambda_padded; // (target_dim): eigenvalues, zero-padded

    // Tape node for the current scale value; shares the Param leaf.
    Var build_rho(Tape& t) const {
        Var s = t.param(*scale);
        Var lam = t.constant(lambda_padded);
        Var w = t.exp(t.scale(t.mul(lam, s), 0.5)); // e^{s*lambda/2}
        // zero-padded columns stay zero: phi column is zero there
        return t.mul(t.constant(phi_padded), w);
    }

    void refresh() {
        const double s = scale->value[0];
        const long n = phi_padded.extent(0);
        const long dd = target_dim;
        rho = FlowTensor({n, dd});
        for (long j = 0; j < dd; ++j) {
            const double w = std::exp(s * lambda_padded[j] * 0.5);
            for (long i = 0; i < n; ++i) rho.at(i, j) = phi_padded.at(i, j) * w;
        }
    }
};

inline GraphPE graph_pe_from_basis(EigenBasis basis, Param& s, long target_dim = -1) {
    const long n = basis.n_nodes();
    const long d = basis.dim();
    if (target_dim < 0) target_dim = d;
    if (target_dim < d) throw ArgumentError("graph_pe_from_basis: target_dim < d");
    GraphPE pe;
    pe.scale = &s;
    pe.basis = std::move(basis);
    pe.target_dim = target_dim;
    pe.phi_padded = FlowTensor({n, target_dim});
    pe.lambda_padded = FlowTensor({target_dim});
    for (long j = 0; j < d; ++j) {
        pe.lambda_padded[j] = pe.basis.eigenvalues[static_cast<std::size_t>(j)];
        for (long i = 0; i < n; ++i) pe.phi_padded.at(i, j) = pe.basis.eigenvectors.at(i, j);
    }
    pe.refresh();
    return pe;
}

inline GraphPE graph_positional_encoding(const Graph& g, long d, Param& s, long target_dim = -1) {
    if (d > g.n_nodes)
        throw ArgumentError("graph_positional_encoding: d = " + std::to_string(d) + " exceeds N = " +
                            std::to_string(g.n_nodes));
    FlowTensor lap = normalized_laplacian(g);
    return graph_pe_from_basis(symmetric_eigen_lowest(lap, d), s, target_dim);
}

// rho * rho^T for property checks (PSD, block structure, completeness).
inline FlowTensor pe_wavelet_matrix(const GraphPE& pe) {
    const long n = pe.phi_padded.extent(0);
    const long dd = pe.target_dim;
    FlowTensor out({n, n});
    for (long i = 0; i < n; ++i)
        for (long j = 0; j < n; ++j) {
            double acc = 0.0;
            for (long c = 0; c < dd; ++c) acc += pe.rho.at(i, c) * pe.rho.at(j, c);
            out.at(i, j) = acc;
        }
    return out;
}

} // namespace stwave

#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "solargeco/structure.hpp"

namespace solargeco {

struct GraphConfig {
    double cutoff = 8.0;       // Å
    size_t max_neighbors = 12; // per atom, nearest kept
    double d_min = 0.0;        // Gaussian expansion grid (Å)
    double d_max = 8.0;
    size_t num_centers = 40;
    double width = 0.5;
};

struct GraphEdge {
    uint32_t src;              // center atom
    uint32_t dst;              // neighbor atom (same cell or periodic image)
    double distance;           // Å, in (0, cutoff]
    std::array<int, 3> image;  // lattice shift of dst
};

/// Periodic neighbor graph. Edges are grouped by src ascending and within a
/// src ordered by (distance, dst, image); edge_features row e is the Gaussian
/// distance expansion of edges[e].distance.
struct CrystalGraph {
    size_t num_atoms = 0;
    std::vector<uint32_t> atomic_numbers;
    std::vector<GraphEdge> edges;
    std::vector<uint32_t> edge_src; // edges[e].src, contiguous for the encoder
    std::vector<uint32_t> edge_dst;
    std::vector<double> edge_features; // E x d_edge row-major
    size_t d_edge = 0;

    size_t num_edges() const { return edges.size(); }
};

/// component k = exp(-(d - mu_k)^2 / width^2), centers evenly spaced on
/// [d_min, d_max] (endpoints included).
std::vector<double> gaussian_expand(double d, double d_min, double d_max,
                                    size_t num_centers, double width);

/// All neighbors within cutoff across periodic images, truncated per atom to
/// the max_neighbors nearest with (distance, dst, image) tie-breaking. The
/// image search range along lattice direction k is ceil(cutoff*|b_k|)+1 cells
/// (b_k = reciprocal row without 2*pi), which cannot miss a neighbor within
/// the cutoff sphere.
CrystalGraph build_graph(const CrystalStructure& s, const GraphConfig& cfg);

} // namespace solargeco

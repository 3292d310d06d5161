#include "solargeco/crystal_graph.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

namespace solargeco {

std::vector<double> gaussian_expand(double d, double d_min, double d_max,
                                    size_t num_centers, double width) {
    if (!(d_max > d_min)) throw ContractError("gaussian_expand: d_max must exceed d_min");
    if (!(width > 0.0)) throw ContractError("gaussian_expand: width must be positive");
    if (num_centers == 0) throw ContractError("gaussian_expand: need at least one center");
    std::vector<double> out(num_centers);
    const double step =
        num_centers > 1 ? (d_max - d_min) / static_cast<double>(num_centers - 1) : 0.0;
    const double first = num_centers > 1 ? d_min : 0.5 * (d_min + d_max);
    for (size_t k = 0; k < num_centers; ++k) {
        const double mu = first + step * static_cast<double>(k);
        const double t = (d - mu) / width;
        out[k] = std::exp(-t * t);
    }
    return out;
}

namespace {

Vec3 cross(const Vec3& u, const Vec3& v) {
    return {u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2],
            u[0] * v[1] - u[1] * v[0]};
}

double norm(const Vec3& v) { return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]); }

struct Candidate {
    double distance;
    uint32_t dst;
    std::array<int, 3> image;

    bool operator<(const Candidate& o) const {
        return std::tie(distance, dst, image) < std::tie(o.distance, o.dst, o.image);
    }
};

} // namespace

CrystalGraph build_graph(const CrystalStructure& s, const GraphConfig& cfg) {
    if (!(cfg.cutoff > 0.0)) throw ContractError("build_graph: cutoff must be positive");
    const size_t n = s.num_atoms();
    const Mat3& L = s.lattice;
    const double vol = lattice_determinant(L);
    if (std::fabs(vol) < 1e-12) throw GeometryError("build_graph: singular lattice");

    const Vec3 a1{L[0], L[1], L[2]}, a2{L[3], L[4], L[5]}, a3{L[6], L[7], L[8]};
    // Reciprocal rows without the 2*pi factor; 1/|b_k| is the spacing of the
    // lattice plane family normal to direction k.
    const Vec3 recips[3] = {cross(a2, a3), cross(a3, a1), cross(a1, a2)};
    int reach[3];
    for (int k = 0; k < 3; ++k) {
        const double bk = norm(recips[k]) / std::fabs(vol);
        reach[k] = static_cast<int>(std::ceil(cfg.cutoff * bk)) + 1;
    }

    std::vector<Vec3> cart(n);
    for (size_t i = 0; i < n; ++i) cart[i] = frac_to_cart(L, s.frac_coords[i]);

    CrystalGraph g;
    g.num_atoms = n;
    g.atomic_numbers = s.atomic_numbers;
    g.d_edge = cfg.num_centers;

    const double cutoff2 = cfg.cutoff * cfg.cutoff;
    std::vector<Candidate> cand;
    for (uint32_t i = 0; i < n; ++i) {
        cand.clear();
        for (uint32_t j = 0; j < n; ++j) {
            for (int nx = -reach[0]; nx <= reach[0]; ++nx) {
                for (int ny = -reach[1]; ny <= reach[1]; ++ny) {
                    for (int nz = -reach[2]; nz <= reach[2]; ++nz) {
                        const double sx = static_cast<double>(nx);
                        const double sy = static_cast<double>(ny);
                        const double sz = static_cast<double>(nz);
                        const double dx = cart[j][0] + sx * L[0] + sy * L[3] + sz * L[6] -
                                          cart[i][0];
                        const double dy = cart[j][1] + sx * L[1] + sy * L[4] + sz * L[7] -
                                          cart[i][1];
                        const double dz = cart[j][2] + sx * L[2] + sy * L[5] + sz * L[8] -
                                          cart[i][2];
                        const double d2 = dx * dx + dy * dy + dz * dz;
                        if (d2 > cutoff2) continue;
                        if (d2 < 1e-20) {
                            if (i == j && nx == 0 && ny == 0 && nz == 0) continue; // self
                            throw GeometryError(
                                "build_graph: atoms " + std::to_string(i) + " and " +
                                std::to_string(j) + " coincide (distance 0)");
                        }
                        cand.push_back({std::sqrt(d2), j, {nx, ny, nz}});
                    }
                }
            }
        }
        std::sort(cand.begin(), cand.end());
        const size_t keep = std::min(cand.size(), cfg.max_neighbors);
        for (size_t e = 0; e < keep; ++e) {
            g.edges.push_back({i, cand[e].dst, cand[e].distance, cand[e].image});
        }
    }

    g.edge_src.reserve(g.edges.size());
    g.edge_dst.reserve(g.edges.size());
    g.edge_features.reserve(g.edges.size() * cfg.num_centers);
    for (const GraphEdge& e : g.edges) {
        g.edge_src.push_back(e.src);
        g.edge_dst.push_back(e.dst);
        const auto feats =
            gaussian_expand(e.distance, cfg.d_min, cfg.d_max, cfg.num_centers, cfg.width);
        g.edge_features.insert(g.edge_features.end(), feats.begin(), feats.end());
    }
    return g;
}

} // namespace solargeco

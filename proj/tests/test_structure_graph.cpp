#include <doctest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <tuple>
#include <vector>

#include "solargeco/crystal_graph.hpp"
#include "solargeco/elements.hpp"
#include "solargeco/errors.hpp"
#include "solargeco/rng.hpp"
#include "solargeco/structure.hpp"

using namespace solargeco;

namespace {

constexpr double kDeg = 3.14159265358979323846 / 180.0;

double dot3(const Vec3& u, const Vec3& v) {
    return u[0] * v[0] + u[1] * v[1] + u[2] * v[2];
}
double norm3(const Vec3& v) { return std::sqrt(dot3(v, v)); }
Vec3 row(const Mat3& m, int r) { return {m[r * 3 + 0], m[r * 3 + 1], m[r * 3 + 2]}; }

struct RefEdge {
    uint32_t src;
    uint32_t dst;
    double distance;
    std::array<int, 3> image;
};

// Independent neighbor enumeration over an explicit supercell of images.
std::vector<RefEdge> brute_force_edges(const CrystalStructure& s, double cutoff,
                                       size_t max_neighbors, int range = 5) {
    const size_t n = s.num_atoms();
    std::vector<Vec3> cart(n);
    for (size_t i = 0; i < n; ++i) cart[i] = frac_to_cart(s.lattice, s.frac_coords[i]);
    const Mat3& L = s.lattice;

    std::vector<RefEdge> out;
    for (uint32_t i = 0; i < n; ++i) {
        std::vector<std::tuple<double, uint32_t, std::array<int, 3>>> cand;
        for (uint32_t j = 0; j < n; ++j) {
            for (int a = -range; a <= range; ++a)
                for (int b = -range; b <= range; ++b)
                    for (int c = -range; c <= range; ++c) {
                        Vec3 d;
                        for (int k = 0; k < 3; ++k) {
                            d[k] = cart[j][k] + a * L[0 + k] + b * L[3 + k] +
                                   c * L[6 + k] - cart[i][k];
                        }
                        const double dist = norm3(d);
                        if (dist == 0.0 || dist > cutoff) continue;
                        cand.emplace_back(dist, j, std::array<int, 3>{a, b, c});
                    }
        }
        std::sort(cand.begin(), cand.end());
        for (size_t e = 0; e < std::min(cand.size(), max_neighbors); ++e) {
            out.push_back({i, std::get<1>(cand[e]), std::get<0>(cand[e]),
                           std::get<2>(cand[e])});
        }
    }
    return out;
}

void expect_graph_matches(const CrystalStructure& s, const GraphConfig& cfg) {
    const CrystalGraph g = build_graph(s, cfg);
    const std::vector<RefEdge> want = brute_force_edges(s, cfg.cutoff, cfg.max_neighbors);
    REQUIRE(g.num_edges() == want.size());
    for (size_t e = 0; e < want.size(); ++e) {
        CAPTURE(e);
        CHECK(g.edges[e].src == want[e].src);
        CHECK(g.edges[e].dst == want[e].dst);
        CHECK(g.edges[e].image == want[e].image);
        CHECK(std::fabs(g.edges[e].distance - want[e].distance) < 1e-9);
        CHECK(g.edge_src[e] == g.edges[e].src);
        CHECK(g.edge_dst[e] == g.edges[e].dst);
    }
}

CrystalStructure cubic_cscl() {
    CrystalStructure s;
    s.lattice = lattice_from_params(4.1, 4.1, 4.1, 90, 90, 90);
    s.frac_coords = {{0, 0, 0}, {0.5, 0.5, 0.5}};
    s.atomic_numbers = {atomic_number("Cs"), atomic_number("Cl")};
    s.formula = "CsCl";
    return s;
}

} // namespace

TEST_CASE("element symbol table") {
    CHECK(atomic_number("H") == 1);
    CHECK(atomic_number("Fe") == 26);
    CHECK(atomic_number("Cs") == 55);
    CHECK(atomic_number("Pb") == 82);
    CHECK(atomic_number("Og") == 118);
    CHECK(element_symbol(1) == "H");
    CHECK(element_symbol(82) == "Pb");
    CHECK(element_symbol(atomic_number("Sn")) == "Sn");
    CHECK(is_element_symbol("Ti"));
    CHECK_FALSE(is_element_symbol("Xx"));
    CHECK_FALSE(is_element_symbol("FE")); // case sensitive
    CHECK_THROWS_AS((void)atomic_number("FE"), ParseError);
    CHECK_THROWS_AS((void)atomic_number(""), ParseError);
    CHECK_THROWS_AS((void)element_symbol(0), DomainError);
    CHECK_THROWS_AS((void)element_symbol(119), DomainError);

    // round-trip over the whole table
    for (uint32_t z = 1; z <= kMaxAtomicNumber; ++z) {
        CHECK(atomic_number(element_symbol(z)) == z);
    }
}

TEST_CASE("lattice_from_params: right angles give exact zeros") {
    const Mat3 m = lattice_from_params(4.0, 5.0, 6.0, 90, 90, 90);
    const Mat3 want = {4, 0, 0, 0, 5, 0, 0, 0, 6};
    for (int i = 0; i < 9; ++i) CHECK(m[i] == want[i]);
    CHECK(lattice_determinant(m) == 120.0);
}

TEST_CASE("lattice_from_params reproduces lengths and angles") {
    const double a = 5.2, b = 6.1, c = 7.3;
    const double alpha = 82.0, beta = 95.5, gamma = 103.0;
    const Mat3 m = lattice_from_params(a, b, c, alpha, beta, gamma);
    const Vec3 va = row(m, 0), vb = row(m, 1), vc = row(m, 2);
    CHECK(norm3(va) == doctest::Approx(a).epsilon(1e-12));
    CHECK(norm3(vb) == doctest::Approx(b).epsilon(1e-12));
    CHECK(norm3(vc) == doctest::Approx(c).epsilon(1e-12));
    CHECK(dot3(vb, vc) / (b * c) == doctest::Approx(std::cos(alpha * kDeg)).epsilon(1e-12));
    CHECK(dot3(va, vc) / (a * c) == doctest::Approx(std::cos(beta * kDeg)).epsilon(1e-12));
    CHECK(dot3(va, vb) / (a * b) == doctest::Approx(std::cos(gamma * kDeg)).epsilon(1e-12));
    // standard orientation: a along x, b in the xy plane
    CHECK(m[1] == 0.0);
    CHECK(m[2] == 0.0);
    CHECK(m[5] == 0.0);
    CHECK(lattice_determinant(m) > 0.0);

    CHECK_THROWS_AS((void)lattice_from_params(0.0, 1, 1, 90, 90, 90), GeometryError);
    CHECK_THROWS_AS((void)lattice_from_params(1, 1, 1, 90, 90, 180), GeometryError);
    // angle triple that violates the spherical triangle inequality
    CHECK_THROWS_AS((void)lattice_from_params(1, 1, 1, 170, 10, 10), GeometryError);
}

TEST_CASE("frac_to_cart uses the row-vector convention") {
    const Mat3 m = {4, 0, 0, 1, 5, 0, 2, 3, 6};
    const Vec3 r = frac_to_cart(m, {0.5, 1.0, 0.25});
    CHECK(r[0] == doctest::Approx(0.5 * 4 + 1.0 * 1 + 0.25 * 2).epsilon(1e-15));
    CHECK(r[1] == doctest::Approx(1.0 * 5 + 0.25 * 3).epsilon(1e-15));
    CHECK(r[2] == doctest::Approx(0.25 * 6).epsilon(1e-15));
}

TEST_CASE("validate_structure wraps coordinates and rejects bad input") {
    CrystalStructure s = cubic_cscl();
    s.frac_coords = {{1.25, -0.25, 0.999}, {0.5, 0.5, -2.5}};
    validate_structure(s);
    CHECK(s.frac_coords[0][0] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(s.frac_coords[0][1] == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(s.frac_coords[1][2] == doctest::Approx(0.5).epsilon(1e-12));

    CrystalStructure flat = cubic_cscl();
    flat.lattice = {4, 0, 0, 8, 0, 0, 0, 0, 4}; // rows parallel
    CHECK_THROWS_AS(validate_structure(flat), GeometryError);

    CrystalStructure mismatch = cubic_cscl();
    mismatch.atomic_numbers = {55};
    CHECK_THROWS_AS(validate_structure(mismatch), ParseError);

    CrystalStructure empty = cubic_cscl();
    empty.frac_coords.clear();
    empty.atomic_numbers.clear();
    CHECK_THROWS_AS(validate_structure(empty), ParseError);

    CrystalStructure badz = cubic_cscl();
    badz.atomic_numbers = {55, 200};
    CHECK_THROWS_AS(validate_structure(badz), ParseError);
}

TEST_CASE("parse_structure_json") {
    const std::string src = R"({
        "formula": "CsPbI3",
        "lattice": [6.3, 0, 0, 0, 6.3, 0, 0, 0, 6.3],
        "frac_coords": [[0,0,0],[0.5,0.5,0.5],[0.5,0.5,0],[0.5,0,0.5],[0,0.5,0.5]],
        "atomic_numbers": [55, 82, 53, 53, 53],
        "structure_ref": "ignored-extra-key",
        "source": "synthetic"
    })";
    const CrystalStructure s = parse_structure_json(src);
    CHECK(s.formula == "CsPbI3");
    CHECK(s.num_atoms() == 5);
    CHECK(s.lattice[0] == 6.3);
    CHECK(s.atomic_numbers[1] == 82);
    CHECK(s.frac_coords[2][0] == 0.5);

    CHECK_THROWS_AS((void)parse_structure_json("not json"), ParseError);
    CHECK_THROWS_AS((void)parse_structure_json("[1,2,3]"), ParseError);
    CHECK_THROWS_AS(
        (void)parse_structure_json(
            R"({"formula":"X","lattice":[1,0,0,0,1,0],"frac_coords":[[0,0,0]],"atomic_numbers":[1]})"),
        ParseError);
    CHECK_THROWS_AS(
        (void)parse_structure_json(
            R"({"formula":"X","lattice":[4,0,0,0,4,0,0,0,4],"frac_coords":[[0,0,0]],"atomic_numbers":[1,2]})"),
        ParseError);
}

TEST_CASE("parse_cif reads cell parameters and atom sites") {
    const std::string cif = R"(data_CsPbI3
_cell_length_a    6.30
_cell_length_b    6.30
_cell_length_c    6.30
_cell_angle_alpha 90.0
_cell_angle_beta  90.0
_cell_angle_gamma 90.0
loop_
_atom_site_type_symbol
_atom_site_fract_x
_atom_site_fract_y
_atom_site_fract_z
Cs 0.0 0.0 0.0
Pb 0.5 0.5 0.5
I  0.5 0.5 0.0
I  0.5 0.0 0.5
I  0.0 0.5 0.5
)";
    const CrystalStructure s = parse_cif(cif);
    CHECK(s.num_atoms() == 5);
    CHECK(s.atomic_numbers[0] == 55);
    CHECK(s.atomic_numbers[2] == 53);
    CHECK(s.lattice[0] == doctest::Approx(6.3).epsilon(1e-12));
    CHECK(s.lattice[1] == 0.0);
    CHECK(s.frac_coords[1][0] == 0.5);

    // format sniffing
    CHECK(parse_structure(cif).num_atoms() == 5);
    CHECK(parse_structure(R"({"formula":"He","lattice":[3,0,0,0,3,0,0,0,3],)"
                          R"("frac_coords":[[0,0,0]],"atomic_numbers":[2]})")
              .atomic_numbers[0] == 2);

    CHECK_THROWS_AS((void)parse_cif("data_x\n_cell_length_a 4.0\n"), ParseError);
    CHECK_THROWS_AS((void)parse_structure(""), ParseError);
}

TEST_CASE("gaussian_expand hand values") {
    const std::vector<double> f = gaussian_expand(2.0, 0.0, 4.0, 5, 0.5);
    REQUIRE(f.size() == 5);
    // centers 0,1,2,3,4
    for (int k = 0; k < 5; ++k) {
        const double t = (2.0 - k) / 0.5;
        CHECK(f[k] == doctest::Approx(std::exp(-t * t)).epsilon(1e-15));
    }
    CHECK(f[2] == 1.0); // exactly on a center
    CHECK(f[0] == f[4]);
    CHECK(f[1] == f[3]);

    CHECK_THROWS_AS((void)gaussian_expand(1.0, 2.0, 2.0, 4, 0.5), ContractError);
    CHECK_THROWS_AS((void)gaussian_expand(1.0, 0.0, 4.0, 4, 0.0), ContractError);
    CHECK_THROWS_AS((void)gaussian_expand(1.0, 0.0, 4.0, 0, 0.5), ContractError);
}

TEST_CASE("neighbor lists match a brute-force supercell enumeration") {
    GraphConfig cfg;
    cfg.num_centers = 8;

    SUBCASE("cubic CsCl, generous cutoff") {
        cfg.cutoff = 7.0;
        cfg.max_neighbors = 64;
        expect_graph_matches(cubic_cscl(), cfg);
    }
    SUBCASE("cubic CsCl, truncated neighbor count") {
        cfg.cutoff = 7.0;
        cfg.max_neighbors = 9;
        expect_graph_matches(cubic_cscl(), cfg);
    }
    SUBCASE("triclinic cell") {
        CrystalStructure s;
        s.lattice = lattice_from_params(5.2, 6.1, 7.3, 82, 95.5, 103);
        s.frac_coords = {{0.1, 0.2, 0.3}, {0.6, 0.4, 0.8}, {0.9, 0.9, 0.1}};
        s.atomic_numbers = {22, 8, 8};
        s.formula = "TiO2";
        cfg.cutoff = 6.5;
        cfg.max_neighbors = 40;
        expect_graph_matches(s, cfg);
    }
    SUBCASE("randomly jittered sites") {
        Rng rng(314);
        CrystalStructure s;
        s.lattice = lattice_from_params(4.7, 5.3, 6.2, 90, 101, 90);
        for (int i = 0; i < 6; ++i) {
            s.frac_coords.push_back({rng.uniform(), rng.uniform(), rng.uniform()});
            s.atomic_numbers.push_back(static_cast<uint32_t>(1 + rng.below(80)));
        }
        s.formula = "random";
        cfg.cutoff = 5.0;
        cfg.max_neighbors = 25;
        expect_graph_matches(s, cfg);
    }
    SUBCASE("skewed thin cell needs multi-image reach") {
        CrystalStructure s;
        s.lattice = {2.1, 0, 0, 1.9, 2.2, 0, 0.7, 1.1, 2.0};
        s.frac_coords = {{0.05, 0.45, 0.85}};
        s.atomic_numbers = {6};
        s.formula = "C";
        cfg.cutoff = 6.0;
        cfg.max_neighbors = 200;
        expect_graph_matches(s, cfg);
    }
}

TEST_CASE("neighbor ordering and tie-breaks are deterministic") {
    CrystalStructure s;
    s.lattice = lattice_from_params(3.0, 3.0, 3.0, 90, 90, 90);
    s.frac_coords = {{0, 0, 0}};
    s.atomic_numbers = {26};
    s.formula = "Fe";

    GraphConfig cfg;
    cfg.cutoff = 3.0; // exactly the six first-shell images
    cfg.max_neighbors = 3;
    cfg.num_centers = 4;
    const CrystalGraph g = build_graph(s, cfg);
    REQUIRE(g.num_edges() == 3);
    // all distances tie at 3.0; images sort lexicographically
    const std::array<int, 3> want0{-1, 0, 0}, want1{0, -1, 0}, want2{0, 0, -1};
    CHECK(g.edges[0].image == want0);
    CHECK(g.edges[1].image == want1);
    CHECK(g.edges[2].image == want2);
    for (const GraphEdge& e : g.edges) {
        CHECK(e.src == 0);
        CHECK(e.dst == 0);
        CHECK(e.distance == doctest::Approx(3.0).epsilon(1e-12));
    }
}

TEST_CASE("graph edges stay grouped by source with sorted distances") {
    CrystalStructure s = cubic_cscl();
    GraphConfig cfg;
    cfg.cutoff = 8.0;
    cfg.max_neighbors = 30;
    cfg.num_centers = 6;
    const CrystalGraph g = build_graph(s, cfg);
    REQUIRE(g.num_edges() == 60); // both atoms saturate max_neighbors
    for (size_t e = 1; e < g.num_edges(); ++e) {
        CHECK(g.edges[e - 1].src <= g.edges[e].src);
        if (g.edges[e - 1].src == g.edges[e].src) {
            CHECK(g.edges[e - 1].distance <= g.edges[e].distance);
        }
    }
    // every atom got exactly max_neighbors
    size_t first = 0;
    for (size_t e = 0; e < g.num_edges(); ++e)
        if (g.edges[e].src == 0) ++first;
    CHECK(first == 30);
}

TEST_CASE("edge features are the Gaussian expansion of each distance") {
    CrystalStructure s = cubic_cscl();
    GraphConfig cfg;
    cfg.cutoff = 6.0;
    cfg.max_neighbors = 10;
    cfg.d_min = 0.5;
    cfg.d_max = 6.0;
    cfg.num_centers = 7;
    cfg.width = 0.8;
    const CrystalGraph g = build_graph(s, cfg);
    REQUIRE(g.d_edge == 7);
    REQUIRE(g.edge_features.size() == g.num_edges() * 7);
    for (size_t e = 0; e < g.num_edges(); ++e) {
        const std::vector<double> want =
            gaussian_expand(g.edges[e].distance, cfg.d_min, cfg.d_max, 7, cfg.width);
        for (size_t k = 0; k < 7; ++k) {
            CHECK(g.edge_features[e * 7 + k] == doctest::Approx(want[k]).epsilon(1e-15));
        }
    }
}

TEST_CASE("coincident atoms are rejected") {
    CrystalStructure s = cubic_cscl();
    s.frac_coords[1] = s.frac_coords[0];
    GraphConfig cfg;
    CHECK_THROWS_AS((void)build_graph(s, cfg), GeometryError);
}

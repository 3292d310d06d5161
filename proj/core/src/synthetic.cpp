#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "solargeco/data.hpp"
#include "solargeco/elements.hpp"
#include "solargeco/errors.hpp"
#include "solargeco/rng.hpp"

namespace solargeco {

namespace {

// ---------------------------------------------------------------------------
// Material catalogs. Each entry carries a latent quality score in [-1.2, 1.2]
// (evenly spaced in catalog order) that feeds the ground-truth PCE.
// ---------------------------------------------------------------------------

constexpr std::array<const char*, 6> kSubstrates = {
    "SLG/FTO", "SLG/ITO", "PEN/ITO", "Quartz/FTO", "PET/ITO", "Si/SiO2"};
constexpr std::array<const char*, 6> kEtls = {"TiO2",  "SnO2", "ZnO",
                                              "PCBM", "C60",  "TiO2-mp"};
constexpr std::array<const char*, 6> kHtls = {"Spiro-MeOTAD", "PEDOT:PSS", "PTAA",
                                              "NiO",          "CuSCN",     "P3HT"};
constexpr std::array<const char*, 4> kBacks = {"Au", "Ag", "Al", "C"};

double quality_score(size_t index, size_t count) {
    if (count < 2) return 0.0;
    return -1.2 + 2.4 * static_cast<double>(index) / static_cast<double>(count - 1);
}

// ---------------------------------------------------------------------------
// Crystal cells: cubic perovskite ABX3 (5 sites), CsCl-type AX (2 sites),
// FCC elemental (4 sites). 40 distinct-formula candidates total.
// ---------------------------------------------------------------------------

struct CellCandidate {
    CrystalStructure structure;
};

CrystalStructure make_perovskite(const char* a_sym, const char* b_sym,
                                 const char* x_sym, double a) {
    CrystalStructure s;
    s.lattice = lattice_from_params(a, a, a, 90.0, 90.0, 90.0);
    s.frac_coords = {{0.0, 0.0, 0.0},
                     {0.5, 0.5, 0.5},
                     {0.5, 0.5, 0.0},
                     {0.5, 0.0, 0.5},
                     {0.0, 0.5, 0.5}};
    const uint32_t x_num = atomic_number(x_sym);
    s.atomic_numbers = {atomic_number(a_sym), atomic_number(b_sym), x_num, x_num, x_num};
    s.formula = std::string(a_sym) + b_sym + x_sym + "3";
    return s;
}

CrystalStructure make_cscl_type(const char* a_sym, const char* x_sym, double a) {
    CrystalStructure s;
    s.lattice = lattice_from_params(a, a, a, 90.0, 90.0, 90.0);
    s.frac_coords = {{0.0, 0.0, 0.0}, {0.5, 0.5, 0.5}};
    s.atomic_numbers = {atomic_number(a_sym), atomic_number(x_sym)};
    s.formula = std::string(a_sym) + x_sym;
    return s;
}

CrystalStructure make_fcc(const char* sym, double a) {
    CrystalStructure s;
    s.lattice = lattice_from_params(a, a, a, 90.0, 90.0, 90.0);
    s.frac_coords = {{0.0, 0.0, 0.0}, {0.0, 0.5, 0.5}, {0.5, 0.0, 0.5}, {0.5, 0.5, 0.0}};
    const uint32_t z = atomic_number(sym);
    s.atomic_numbers = {z, z, z, z};
    s.formula = sym;
    return s;
}

std::vector<CrystalStructure> cell_candidates() {
    std::vector<CrystalStructure> cells;

    constexpr std::array<const char*, 3> a_site = {"Cs", "Rb", "K"};
    constexpr std::array<double, 3> a_shift = {0.0, -0.06, -0.12};
    constexpr std::array<const char*, 3> b_site = {"Pb", "Sn", "Ge"};
    constexpr std::array<double, 3> b_shift = {0.0, -0.12, -0.25};
    constexpr std::array<const char*, 3> x_site = {"I", "Br", "Cl"};
    constexpr std::array<double, 3> x_base = {6.30, 5.90, 5.65};
    for (size_t ai = 0; ai < 3; ++ai)
        for (size_t bi = 0; bi < 3; ++bi)
            for (size_t xi = 0; xi < 3; ++xi)
                cells.push_back(make_perovskite(a_site[ai], b_site[bi], x_site[xi],
                                                x_base[xi] + b_shift[bi] + a_shift[ai]));

    constexpr std::array<double, 3> halide_shift = {0.35, 0.15, 0.0}; // I, Br, Cl
    for (size_t ai = 0; ai < 3; ++ai)
        for (size_t xi = 0; xi < 3; ++xi)
            cells.push_back(make_cscl_type(a_site[ai], x_site[xi],
                                           4.10 + halide_shift[xi] + a_shift[ai]));

    constexpr std::array<const char*, 4> metals = {"Pb", "Ag", "Cu", "Al"};
    constexpr std::array<double, 4> metal_a = {4.95, 4.09, 3.61, 4.05};
    for (size_t i = 0; i < 4; ++i) cells.push_back(make_fcc(metals[i], metal_a[i]));

    return cells;
}

// ---------------------------------------------------------------------------
// Structure descriptors feeding the ground truth: mean nearest-neighbor
// distance and mean atomic number, both normalized to roughly [-1.5, 1.5].
// ---------------------------------------------------------------------------

struct StructureDescriptor {
    double dn = 0.0; // normalized mean nearest-neighbor distance
    double zn = 0.0; // normalized mean atomic number
};

StructureDescriptor describe(const CrystalStructure& s) {
    GraphConfig gc; // defaults: 8 A cutoff, 12 neighbors
    const CrystalGraph g = build_graph(s, gc);

    std::vector<double> nearest(g.num_atoms, std::numeric_limits<double>::infinity());
    for (const GraphEdge& e : g.edges)
        nearest[e.src] = std::min(nearest[e.src], e.distance);
    double dsum = 0.0;
    for (double d : nearest) {
        if (!std::isfinite(d))
            throw GeometryError("structure '" + s.formula +
                                "' has an isolated atom within the cutoff");
        dsum += d;
    }
    const double d_mean = dsum / static_cast<double>(g.num_atoms);

    double zsum = 0.0;
    for (uint32_t z : s.atomic_numbers) zsum += static_cast<double>(z);
    const double z_mean = zsum / static_cast<double>(s.atomic_numbers.size());

    StructureDescriptor d;
    d.dn = (d_mean - 3.2) / 0.45;
    d.zn = (z_mean - 45.0) / 22.0;
    return d;
}

// Structure-only contribution to PCE (unit scale; multiplied by struct_scale).
double f_structure(const StructureDescriptor& d) {
    return std::sin(1.9 * d.dn) + 0.8 * std::cos(2.4 * d.zn) +
           0.6 * std::sin(1.3 * d.dn) * std::cos(1.1 * d.zn);
}

// Structure gate on the transport-layer interaction (unit scale).
double g_interaction(const StructureDescriptor& d) {
    return std::tanh(0.9 * d.dn + 0.8 * d.zn);
}

double clip(double v, double lo, double hi) { return std::min(std::max(v, lo), hi); }

std::string padded_id(const char* prefix, size_t value, int width) {
    std::ostringstream os;
    std::string digits = std::to_string(value);
    while (static_cast<int>(digits.size()) < width) digits.insert(digits.begin(), '0');
    os << prefix << digits;
    return os.str();
}

struct MaterialConfig {
    size_t structure = 0;                // index into chosen structures
    std::array<size_t, 4> layer{};       // catalog indices: sub, etl, htl, back
    double pce_star = 0.0;
    double sigma = 0.0;
};

} // namespace

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
    if (spec.num_devices == 0) throw ConfigError("synth: num_devices must be positive");
    if (spec.num_structures == 0)
        throw ConfigError("synth: num_structures must be positive");
    if (spec.num_configs < 3)
        throw ConfigError("synth: need at least 3 material configurations");
    if (spec.noise_min < 0.0 || spec.noise_max < spec.noise_min)
        throw ConfigError("synth: noise range must satisfy 0 <= noise_min <= noise_max");

    Rng rng(spec.seed);
    SyntheticData out;

    // --- structures ---------------------------------------------------------
    std::vector<CrystalStructure> candidates = cell_candidates();
    std::vector<size_t> order(candidates.size());
    std::iota(order.begin(), order.end(), size_t{0});
    rng.shuffle(order);

    std::vector<StructureDescriptor> descriptors;
    for (size_t k = 0; k < spec.num_structures; ++k) {
        const size_t pick = order[k % order.size()];
        const size_t cycle = k / order.size();
        CrystalStructure s = candidates[pick];
        if (cycle > 0) { // repeat formulas only when more cells than motifs are asked for
            const double scale = 1.0 + 0.05 * static_cast<double>(cycle);
            for (double& v : s.lattice) v *= scale;
        }
        validate_structure(s);
        descriptors.push_back(describe(s));
        out.structures.emplace_back(padded_id("s", k, 3), std::move(s));
    }

    // --- distinct material configurations -----------------------------------
    const size_t space = spec.num_structures * kSubstrates.size() * kEtls.size() *
                         kHtls.size() * kBacks.size();
    if (spec.num_configs > space)
        throw ConfigError("synth: num_configs " + std::to_string(spec.num_configs) +
                          " exceeds the " + std::to_string(space) +
                          " possible distinct configurations");

    std::vector<MaterialConfig> configs;
    std::set<std::string> seen;
    size_t attempts = 0;
    const size_t max_attempts = 1000 + 200 * spec.num_configs;
    while (configs.size() < spec.num_configs) {
        if (++attempts > max_attempts)
            throw ConfigError("synth: could not realize " +
                              std::to_string(spec.num_configs) +
                              " distinct configurations; reduce num_configs");
        MaterialConfig c;
        c.structure = static_cast<size_t>(rng.below(spec.num_structures));
        c.layer = {static_cast<size_t>(rng.below(kSubstrates.size())),
                   static_cast<size_t>(rng.below(kEtls.size())),
                   static_cast<size_t>(rng.below(kHtls.size())),
                   static_cast<size_t>(rng.below(kBacks.size()))};
        std::string key = out.structures[c.structure].second.formula;
        key += '\x1f';
        key += kSubstrates[c.layer[0]];
        key += '\x1f';
        key += kEtls[c.layer[1]];
        key += '\x1f';
        key += kHtls[c.layer[2]];
        key += '\x1f';
        key += kBacks[c.layer[3]];
        if (!seen.insert(std::move(key)).second) continue;

        const StructureDescriptor& d = descriptors[c.structure];
        const double u_sub = quality_score(c.layer[0], kSubstrates.size());
        const double u_etl = quality_score(c.layer[1], kEtls.size());
        const double u_htl = quality_score(c.layer[2], kHtls.size());
        const double u_back = quality_score(c.layer[3], kBacks.size());

        const double quality = u_sub + u_etl + u_htl + u_back;
        const double interaction = g_interaction(d) * (u_htl + u_etl);
        c.pce_star = clip(spec.base_pce + spec.struct_scale * f_structure(d) +
                              spec.quality_scale * quality +
                              spec.interaction_scale * interaction,
                          0.0, 30.0);
        c.sigma = clip(1.05 + 0.55 * u_sub + 0.35 * std::sin(1.7 * d.dn + 0.5) +
                           0.20 * u_back,
                       spec.noise_min, spec.noise_max);
        configs.push_back(c);
    }

    // --- devices -------------------------------------------------------------
    out.devices.reserve(spec.num_devices);
    out.ground_truth.reserve(spec.num_devices);
    for (size_t i = 0; i < spec.num_devices; ++i) {
        const MaterialConfig& c = configs[static_cast<size_t>(rng.below(configs.size()))];
        const double z = rng.normal();

        DeviceRecord r;
        r.device_id = padded_id("d", i, 4);
        r.perovskite_formula = out.structures[c.structure].second.formula;
        r.structure_ref = out.structures[c.structure].first;
        r.layers = {kSubstrates[c.layer[0]], kEtls[c.layer[1]], kHtls[c.layer[2]],
                    kBacks[c.layer[3]]};
        r.pce = clip(c.pce_star + c.sigma * z, 0.0, 30.0);
        out.devices.push_back(std::move(r));

        out.ground_truth.push_back({out.devices.back().device_id, c.pce_star, c.sigma});
    }
    return out;
}

} // namespace solargeco

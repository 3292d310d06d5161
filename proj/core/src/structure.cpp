#include "solargeco/structure.hpp"

#include <cctype>
#include <cmath>
#include <optional>
#include <sstream>

#include <json.hpp>

#include "solargeco/elements.hpp"
#include "solargeco/rng.hpp"

namespace solargeco {

namespace {

double cos_deg(double deg) {
    const double r = std::fmod(std::fabs(deg), 360.0);
    if (r == 90.0 || r == 270.0) return 0.0;
    if (r == 0.0) return 1.0;
    if (r == 180.0) return -1.0;
    return std::cos(deg * kPi / 180.0);
}

double sin_deg(double deg) {
    const double r = std::fmod(std::fabs(deg), 360.0);
    if (r == 90.0 || r == 270.0) return 1.0;
    if (r == 0.0 || r == 180.0) return 0.0;
    return std::sin(deg * kPi / 180.0);
}

double wrap01(double x) {
    double w = x - std::floor(x);
    if (w >= 1.0) w -= 1.0; // rounding at the seam
    return w;
}

} // namespace

double lattice_determinant(const Mat3& m) {
    return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
           m[2] * (m[3] * m[7] - m[4] * m[6]);
}

Mat3 lattice_from_params(double a, double b, double c, double alpha, double beta,
                         double gamma) {
    if (!(a > 0.0 && b > 0.0 && c > 0.0)) {
        throw GeometryError("cell lengths must be positive");
    }
    const double ca = cos_deg(alpha), cb = cos_deg(beta), cg = cos_deg(gamma);
    const double sg = sin_deg(gamma);
    if (sg == 0.0) throw GeometryError("gamma angle makes the cell degenerate");
    const double cx = cb;
    const double cy = (ca - cb * cg) / sg;
    const double cz2 = 1.0 - cx * cx - cy * cy;
    if (cz2 <= 0.0) throw GeometryError("cell angles are geometrically inconsistent");
    return Mat3{a,      0.0,    0.0,                //
                b * cg, b * sg, 0.0,                //
                c * cx, c * cy, c * std::sqrt(cz2)};
}

Vec3 frac_to_cart(const Mat3& m, const Vec3& f) {
    return Vec3{f[0] * m[0] + f[1] * m[3] + f[2] * m[6],
                f[0] * m[1] + f[1] * m[4] + f[2] * m[7],
                f[0] * m[2] + f[1] * m[5] + f[2] * m[8]};
}

void validate_structure(CrystalStructure& s) {
    if (std::fabs(lattice_determinant(s.lattice)) < 1e-12) {
        throw GeometryError("singular lattice (determinant ~ 0) in structure '" + s.formula +
                            "'");
    }
    if (s.frac_coords.size() != s.atomic_numbers.size()) {
        throw ParseError("structure '" + s.formula + "': " +
                         std::to_string(s.frac_coords.size()) + " sites vs " +
                         std::to_string(s.atomic_numbers.size()) + " atomic numbers");
    }
    if (s.frac_coords.empty()) {
        throw ParseError("structure '" + s.formula + "' has no atomic sites");
    }
    for (uint32_t z : s.atomic_numbers) {
        if (z < 1 || z > kMaxAtomicNumber) {
            throw ParseError("structure '" + s.formula + "': atomic number " +
                             std::to_string(z) + " out of range [1, 118]");
        }
    }
    for (auto& f : s.frac_coords) {
        for (double& x : f) x = wrap01(x);
    }
}

CrystalStructure parse_structure_json(const std::string& source) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(source);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("structure record is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ParseError("structure record must be a JSON object");
    CrystalStructure s;
    try {
        const auto& lat = j.at("lattice");
        if (!lat.is_array() || lat.size() != 9) {
            throw ParseError("structure 'lattice' must be an array of 9 reals (row-major)");
        }
        for (size_t i = 0; i < 9; ++i) s.lattice[i] = lat[i].get<double>();
        for (const auto& row : j.at("frac_coords")) {
            if (!row.is_array() || row.size() != 3) {
                throw ParseError("each frac_coords entry must be an array of 3 reals");
            }
            s.frac_coords.push_back({row[0].get<double>(), row[1].get<double>(),
                                     row[2].get<double>()});
        }
        for (const auto& z : j.at("atomic_numbers")) {
            s.atomic_numbers.push_back(z.get<uint32_t>());
        }
        s.formula = j.value("formula", std::string{});
    } catch (const ParseError&) {
        throw;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed structure record: ") + e.what());
    }
    validate_structure(s);
    return s;
}

namespace {

// "0.5000(3)" -> 0.5; CIF numbers may carry a parenthesized uncertainty.
double cif_number(const std::string& tok, size_t line_no) {
    std::string t = tok.substr(0, tok.find('('));
    try {
        size_t pos = 0;
        double v = std::stod(t, &pos);
        if (pos != t.size()) throw std::invalid_argument(t);
        return v;
    } catch (const std::exception&) {
        throw ParseError("CIF line " + std::to_string(line_no) + ": expected a number, got '" +
                         tok + "'");
    }
}

std::vector<std::string> split_ws(const std::string& line) {
    std::vector<std::string> out;
    std::istringstream is(line);
    std::string t;
    while (is >> t) out.push_back(t);
    return out;
}

// "Pb1" or "I2-" style site labels -> element symbol prefix.
std::string element_from_label(const std::string& label, size_t line_no) {
    size_t n = 0;
    while (n < label.size() && std::isalpha(static_cast<unsigned char>(label[n]))) ++n;
    std::string sym = label.substr(0, n);
    if (sym.size() >= 2 && is_element_symbol(sym.substr(0, 2))) sym = sym.substr(0, 2);
    if (!is_element_symbol(sym) && !sym.empty()) sym = sym.substr(0, 1);
    if (!is_element_symbol(sym)) {
        throw ParseError("CIF line " + std::to_string(line_no) + ": unknown element symbol '" +
                         label + "'");
    }
    return sym;
}

} // namespace

CrystalStructure parse_cif(const std::string& source) {
    std::istringstream is(source);
    std::string line;
    size_t line_no = 0;

    std::optional<double> a, b, c, alpha, beta, gamma;
    std::vector<std::string> loop_cols;
    bool in_atom_loop = false, reading_loop_header = false;
    int col_symbol = -1, col_label = -1, col_x = -1, col_y = -1, col_z = -1;
    CrystalStructure s;

    auto finish_header = [&](size_t at_line) {
        for (size_t i = 0; i < loop_cols.size(); ++i) {
            const std::string& col = loop_cols[i];
            if (col == "_atom_site_type_symbol") col_symbol = static_cast<int>(i);
            else if (col == "_atom_site_label") col_label = static_cast<int>(i);
            else if (col == "_atom_site_fract_x") col_x = static_cast<int>(i);
            else if (col == "_atom_site_fract_y") col_y = static_cast<int>(i);
            else if (col == "_atom_site_fract_z") col_z = static_cast<int>(i);
        }
        in_atom_loop = col_x >= 0 && col_y >= 0 && col_z >= 0 &&
                       (col_symbol >= 0 || col_label >= 0);
        if (!in_atom_loop && !loop_cols.empty() &&
            loop_cols[0].rfind("_atom_site", 0) == 0) {
            throw ParseError("CIF line " + std::to_string(at_line) +
                             ": atom_site loop lacks fractional coordinates or element column");
        }
    };

    while (std::getline(is, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const auto toks = split_ws(line);
        if (toks.empty() || toks[0][0] == '#') continue;
        const std::string& head = toks[0];

        if (reading_loop_header) {
            if (head[0] == '_') {
                loop_cols.push_back(head);
                continue;
            }
            reading_loop_header = false;
            finish_header(line_no);
        }

        if (head == "loop_") {
            loop_cols.clear();
            in_atom_loop = false;
            reading_loop_header = true;
            continue;
        }

        if (head[0] == '_') {
            in_atom_loop = false;
            if (toks.size() < 2) continue;
            if (head == "_cell_length_a") a = cif_number(toks[1], line_no);
            else if (head == "_cell_length_b") b = cif_number(toks[1], line_no);
            else if (head == "_cell_length_c") c = cif_number(toks[1], line_no);
            else if (head == "_cell_angle_alpha") alpha = cif_number(toks[1], line_no);
            else if (head == "_cell_angle_beta") beta = cif_number(toks[1], line_no);
            else if (head == "_cell_angle_gamma") gamma = cif_number(toks[1], line_no);
            continue;
        }

        if (in_atom_loop) {
            if (toks.size() < loop_cols.size()) {
                throw ParseError("CIF line " + std::to_string(line_no) + ": expected " +
                                 std::to_string(loop_cols.size()) + " columns, got " +
                                 std::to_string(toks.size()));
            }
            std::string sym = col_symbol >= 0
                                  ? toks[static_cast<size_t>(col_symbol)]
                                  : element_from_label(toks[static_cast<size_t>(col_label)],
                                                       line_no);
            // type_symbol may carry oxidation suffixes like "Pb2+"
            while (!sym.empty() && !std::isalpha(static_cast<unsigned char>(sym.back()))) {
                sym.pop_back();
            }
            if (!is_element_symbol(sym)) {
                throw ParseError("CIF line " + std::to_string(line_no) +
                                 ": unknown element symbol '" + sym + "'");
            }
            s.atomic_numbers.push_back(atomic_number(sym));
            s.frac_coords.push_back({cif_number(toks[static_cast<size_t>(col_x)], line_no),
                                     cif_number(toks[static_cast<size_t>(col_y)], line_no),
                                     cif_number(toks[static_cast<size_t>(col_z)], line_no)});
            continue;
        }

        if (head.rfind("data_", 0) == 0) {
            s.formula = head.substr(5);
            continue;
        }
    }
    if (reading_loop_header) finish_header(line_no);

    if (!a || !b || !c || !alpha || !beta || !gamma) {
        throw ParseError("CIF is missing cell parameters (_cell_length_*, _cell_angle_*)");
    }
    if (s.frac_coords.empty()) {
        throw ParseError("CIF has no atom_site loop with fractional coordinates");
    }
    s.lattice = lattice_from_params(*a, *b, *c, *alpha, *beta, *gamma);
    validate_structure(s);
    return s;
}

CrystalStructure parse_structure(const std::string& source) {
    for (char ch : source) {
        if (std::isspace(static_cast<unsigned char>(ch))) continue;
        if (ch == '{') return parse_structure_json(source);
        return parse_cif(source);
    }
    throw ParseError("empty structure source");
}

} // namespace solargeco

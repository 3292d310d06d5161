#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "solargeco/errors.hpp"

namespace solargeco {

using Mat3 = std::array<double, 9>; // row-major; rows are lattice vectors (Å)
using Vec3 = std::array<double, 3>;

/// Periodic crystal: lattice rows a1,a2,a3 plus fractional atomic sites.
struct CrystalStructure {
    Mat3 lattice{};
    std::vector<Vec3> frac_coords; // wrapped into [0, 1)
    std::vector<uint32_t> atomic_numbers;
    std::string formula;

    size_t num_atoms() const { return frac_coords.size(); }
};

double lattice_determinant(const Mat3& m);

/// Lattice rows from cell lengths (Å) and angles (degrees), standard
/// crystallographic orientation: a along x, b in the xy plane. Exact right
/// angles produce exact zeros.
Mat3 lattice_from_params(double a, double b, double c, double alpha, double beta,
                         double gamma);

/// frac * lattice (row-vector convention).
Vec3 frac_to_cart(const Mat3& lattice, const Vec3& frac);

/// Wraps into [0,1), checks lattice nondegeneracy and atomic-number range.
void validate_structure(CrystalStructure& s);

/// Parses either a native JSON record — object with keys lattice (9 reals,
/// row-major), frac_coords (N x 3), atomic_numbers (N), formula — or a
/// minimal CIF (cell lengths/angles plus an atom_site loop with fractional
/// coordinates). The format is sniffed from the first non-space character.
CrystalStructure parse_structure(const std::string& source);

CrystalStructure parse_structure_json(const std::string& source);
CrystalStructure parse_cif(const std::string& source);

} // namespace solargeco

#include "solargeco/elements.hpp"

#include <array>
#include <unordered_map>

namespace solargeco {

namespace {

// Index = atomic number; slot 0 unused.
const std::array<std::string, kMaxAtomicNumber + 1> kSymbols = {
    "",   "H",  "He", "Li", "Be", "B",  "C",  "N",  "O",  "F",  "Ne", "Na", "Mg",
    "Al", "Si", "P",  "S",  "Cl", "Ar", "K",  "Ca", "Sc", "Ti", "V",  "Cr", "Mn",
    "Fe", "Co", "Ni", "Cu", "Zn", "Ga", "Ge", "As", "Se", "Br", "Kr", "Rb", "Sr",
    "Y",  "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd", "In", "Sn", "Sb",
    "Te", "I",  "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd", "Pm", "Sm", "Eu", "Gd",
    "Tb", "Dy", "Ho", "Er", "Tm", "Yb", "Lu", "Hf", "Ta", "W",  "Re", "Os", "Ir",
    "Pt", "Au", "Hg", "Tl", "Pb", "Bi", "Po", "At", "Rn", "Fr", "Ra", "Ac", "Th",
    "Pa", "U",  "Np", "Pu", "Am", "Cm", "Bk", "Cf", "Es", "Fm", "Md", "No", "Lr",
    "Rf", "Db", "Sg", "Bh", "Hs", "Mt", "Ds", "Rg", "Cn", "Nh", "Fl", "Mc", "Lv",
    "Ts", "Og"};

const std::unordered_map<std::string_view, uint32_t>& symbol_index() {
    static const auto* map = [] {
        auto* m = new std::unordered_map<std::string_view, uint32_t>();
        for (uint32_t z = 1; z <= kMaxAtomicNumber; ++z) m->emplace(kSymbols[z], z);
        return m;
    }();
    return *map;
}

} // namespace

uint32_t atomic_number(std::string_view symbol) {
    auto it = symbol_index().find(symbol);
    if (it == symbol_index().end()) {
        throw ParseError("unknown element symbol '" + std::string(symbol) + "'");
    }
    return it->second;
}

const std::string& element_symbol(uint32_t z) {
    if (z < 1 || z > kMaxAtomicNumber) {
        throw DomainError("atomic number " + std::to_string(z) + " out of range [1, 118]");
    }
    return kSymbols[z];
}

bool is_element_symbol(std::string_view symbol) {
    return symbol_index().count(symbol) != 0;
}

} // namespace solargeco

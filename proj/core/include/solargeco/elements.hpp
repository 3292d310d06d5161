#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "solargeco/errors.hpp"

namespace solargeco {

inline constexpr uint32_t kMaxAtomicNumber = 118;

/// "Fe" -> 26. Case-sensitive; throws ParseError for unknown symbols.
uint32_t atomic_number(std::string_view symbol);

/// 26 -> "Fe". Throws DomainError outside [1, 118].
const std::string& element_symbol(uint32_t z);

bool is_element_symbol(std::string_view symbol);

} // namespace solargeco

#pragma once

#include <string>
#include <vector>

#include "solargeco/optim.hpp"

namespace solargeco {

/// Binary parameter archive. Layout (all integers little-endian):
///   magic "SGCP" | u32 version | u64 config_len | config bytes (UTF-8 JSON)
///   | u64 param_count | per param: u64 name_len, name bytes, u32 ndim,
///     u64 dims[ndim], f64 values[numel] (row-major, IEEE-754)
/// Parameters appear in ParamStore registration order. The config block
/// carries whatever JSON the caller wants alongside the weights (model
/// hyperparameters, vocabulary, normalization constants).
inline constexpr uint32_t kCheckpointVersion = 1;

struct LoadedParam {
    std::string name;
    Shape shape;
    std::vector<double> value;
};

struct Checkpoint {
    std::string config_json;
    std::vector<LoadedParam> params;
};

void save_checkpoint(const std::string& path, const ParamStore& params,
                     const std::string& config_json);

Checkpoint read_checkpoint(const std::string& path);

/// Copies values from `ckpt` into `params`. Every archived parameter must
/// exist in the store with an identical shape, and every store parameter
/// must be present in the archive; anything else is a DataError.
void restore_params(const Checkpoint& ckpt, ParamStore& params);

} // namespace solargeco

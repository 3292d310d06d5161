#pragma once

#include <array>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "solargeco/crystal_graph.hpp"
#include "solargeco/structure.hpp"
#include "solargeco/text_encoder.hpp"

namespace solargeco {

/// One solar cell: a crystal reference plus the four context-layer strings
/// and the measured power-conversion efficiency (percent).
struct DeviceRecord {
    std::string device_id;
    std::string perovskite_formula;
    std::string structure_ref;
    std::array<std::string, 4> layers; // canonical role order: substrate, etl, htl, back_contact
    double pce = 0.0;
};

struct Dataset {
    std::vector<DeviceRecord> devices;
    std::unordered_map<std::string, CrystalStructure> structures; // by structure_ref
    std::vector<std::string> dropped_ids; // devices removed for unresolved structure_ref
    size_t dropped_records = 0;           // == dropped_ids.size()
};

/// Line-delimited JSON on both files. Devices whose structure_ref does not
/// resolve are dropped and counted; duplicate device ids or structure refs
/// are fatal. Zero surviving devices is fatal. With require_pce false a
/// missing pce field reads as 0 (prediction inputs carry no targets).
Dataset load_dataset(const std::string& devices_path, const std::string& structures_path,
                     bool require_pce = true);

void write_devices_jsonl(const std::string& path, std::span<const DeviceRecord> devices);
void write_structures_jsonl(
    const std::string& path,
    std::span<const std::pair<std::string, CrystalStructure>> structures);

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

enum class SplitPolicy { random_80_10_10, group_by_materials };

SplitPolicy split_policy_from_string(const std::string& name);
const char* split_policy_name(SplitPolicy policy);

struct DatasetSplit {
    SplitPolicy policy = SplitPolicy::random_80_10_10;
    uint64_t seed = 0;
    std::vector<std::string> train, val, test; // device ids, disjoint and exhaustive
};

/// The five material strings that define a device configuration; devices
/// sharing this key must land in the same split partition under the group
/// policy.
std::string material_group_key(const DeviceRecord& r);

/// Random policy: shuffle by seed, cut 80/10/10 by count (floor, remainder to
/// train). Group policy: shuffle distinct material keys by seed, then assign
/// whole groups greedily toward the same device-count targets.
DatasetSplit make_split(std::span<const DeviceRecord> devices, SplitPolicy policy,
                        uint64_t seed);

void save_split(const std::string& path, const DatasetSplit& split);
DatasetSplit load_split(const std::string& path);

// ---------------------------------------------------------------------------
// Prepared devices and batches
// ---------------------------------------------------------------------------

struct PreparedDevice {
    std::string device_id;
    const CrystalGraph* graph = nullptr;
    size_t num_atoms = 0;
    std::array<std::vector<uint32_t>, 4> layer_tokens;
    double pce = 0.0;
};

/// Dataset with graphs built and layer strings tokenized once up front.
struct PreparedDataset {
    std::unordered_map<std::string, CrystalGraph> graphs; // by structure_ref
    std::vector<PreparedDevice> devices;                  // dataset order
    std::unordered_map<std::string, size_t> by_id;

    const PreparedDevice& at(const std::string& device_id) const;
};

PreparedDataset prepare_dataset(const Dataset& data, const GraphConfig& graph_cfg,
                                const Vocabulary& vocab, size_t max_tokens);

/// Devices of one batch; atom counts are padded to max_atoms downstream,
/// node_mask(i) marks the valid rows of device i after padding.
struct DeviceBatch {
    std::vector<const PreparedDevice*> devices;
    size_t max_atoms = 0;
    std::vector<double> targets; // pce per device

    size_t size() const { return devices.size(); }
    std::vector<double> node_mask(size_t i) const;
};

DeviceBatch build_batch(const PreparedDataset& prep, std::span<const std::string> ids);
DeviceBatch build_batch_indices(const PreparedDataset& prep, std::span<const size_t> idxs);

// ---------------------------------------------------------------------------
// Synthetic data with known ground truth
// ---------------------------------------------------------------------------

struct SyntheticSpec {
    size_t num_devices = 2000;
    uint64_t seed = 42;
    size_t num_structures = 24;  // distinct crystal cells
    size_t num_configs = 300;    // distinct material configurations
    double base_pce = 13.0;
    double struct_scale = 2.6;      // weight of the structure-only term
    double quality_scale = 1.5;     // weight of per-layer material qualities
    double interaction_scale = 3.2; // structure x (HTL+ETL quality) coupling
    double noise_min = 0.5;         // sigma(x) clip range (percent PCE)
    double noise_max = 3.0;
};

struct GroundTruthRow {
    std::string device_id;
    double pce_star; // noiseless PCE
    double sigma;    // per-device noise level
};

struct SyntheticData {
    std::vector<DeviceRecord> devices;
    std::vector<std::pair<std::string, CrystalStructure>> structures;
    std::vector<GroundTruthRow> ground_truth;
};

/// Deterministic in the spec seed. Observed pce = clip(pce_star + sigma*z, 0, 30);
/// pce_star = base + f(structure) + sum of role qualities + interaction
/// coupling the structure descriptor with the HTL/ETL qualities; sigma(x) is
/// a smooth function of visible features clipped to [noise_min, noise_max].
SyntheticData generate_synthetic(const SyntheticSpec& spec);

void write_ground_truth_csv(const std::string& path, std::span<const GroundTruthRow> rows);

// ---------------------------------------------------------------------------
// Prediction files
// ---------------------------------------------------------------------------

struct PredictionRow {
    std::string device_id;
    double y_true = 0.0;
    double mu = 0.0;
    double sigma = 0.0;
};

/// CSV with header device_id,y_true,mu,sigma.
void write_predictions_csv(const std::string& path, std::span<const PredictionRow> rows);
std::vector<PredictionRow> read_predictions_csv(const std::string& path);

/// CSV with header device_id,mu,sigma (no targets).
void write_predict_only_csv(const std::string& path, std::span<const PredictionRow> rows);

} // namespace solargeco

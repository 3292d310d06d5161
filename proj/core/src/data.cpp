#include "solargeco/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "solargeco/errors.hpp"
#include "solargeco/rng.hpp"

namespace solargeco {

namespace {

using nlohmann::json;

constexpr std::array<const char*, 4> kLayerKeys = {"substrate", "etl", "htl",
                                                   "back_contact"};

std::string fmt_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

json device_to_json(const DeviceRecord& r) {
    json j;
    j["device_id"] = r.device_id;
    j["perovskite_formula"] = r.perovskite_formula;
    j["structure_ref"] = r.structure_ref;
    for (size_t k = 0; k < 4; ++k) j[kLayerKeys[k]] = r.layers[k];
    j["pce"] = r.pce;
    return j;
}

DeviceRecord device_from_json(const json& j, size_t line_no, bool require_pce) {
    const std::string where = "devices line " + std::to_string(line_no) + ": ";
    try {
        DeviceRecord r;
        r.device_id = j.at("device_id").get<std::string>();
        r.perovskite_formula = j.at("perovskite_formula").get<std::string>();
        r.structure_ref = j.at("structure_ref").get<std::string>();
        for (size_t k = 0; k < 4; ++k) r.layers[k] = j.at(kLayerKeys[k]).get<std::string>();
        r.pce = require_pce ? j.at("pce").get<double>() : j.value("pce", 0.0);
        if (!(r.pce >= 0.0 && r.pce <= 100.0))
            throw ParseError(where + "pce " + fmt_double(r.pce) + " outside [0, 100]");
        if (r.device_id.empty()) throw ParseError(where + "empty device_id");
        for (size_t k = 0; k < 4; ++k)
            if (r.layers[k].empty())
                throw ParseError(where + "empty layer text for role " +
                                 std::string(kLayerKeys[k]));
        return r;
    } catch (const json::exception& e) {
        throw ParseError(where + e.what());
    }
}

std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open: " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
    }
    return lines;
}

bool is_blank(const std::string& s) {
    return std::all_of(s.begin(), s.end(),
                       [](unsigned char c) { return std::isspace(c) != 0; });
}

} // namespace

Dataset load_dataset(const std::string& devices_path, const std::string& structures_path,
                     bool require_pce) {
    Dataset data;

    const std::vector<std::string> struct_lines = read_lines(structures_path);
    for (size_t i = 0; i < struct_lines.size(); ++i) {
        const std::string& line = struct_lines[i];
        if (is_blank(line)) continue;
        const std::string where = "structures line " + std::to_string(i + 1) + ": ";
        std::string ref;
        try {
            const json j = json::parse(line);
            ref = j.at("structure_ref").get<std::string>();
        } catch (const json::exception& e) {
            throw ParseError(where + e.what());
        }
        if (data.structures.count(ref))
            throw DataError(where + "duplicate structure_ref '" + ref + "'");
        try {
            data.structures.emplace(ref, parse_structure_json(line));
        } catch (const Error& e) {
            throw ParseError(where + e.what());
        }
    }

    const std::vector<std::string> dev_lines = read_lines(devices_path);
    std::set<std::string> seen_ids;
    for (size_t i = 0; i < dev_lines.size(); ++i) {
        const std::string& line = dev_lines[i];
        if (is_blank(line)) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw ParseError("devices line " + std::to_string(i + 1) + ": " + e.what());
        }
        DeviceRecord r = device_from_json(j, i + 1, require_pce);
        if (!seen_ids.insert(r.device_id).second)
            throw DataError("devices line " + std::to_string(i + 1) +
                            ": duplicate device_id '" + r.device_id + "'");
        if (!data.structures.count(r.structure_ref)) {
            data.dropped_ids.push_back(r.device_id); // unresolved crystal reference
            ++data.dropped_records;
            continue;
        }
        data.devices.push_back(std::move(r));
    }

    if (data.devices.empty())
        throw DataError("no device records survived loading (" +
                        std::to_string(data.dropped_records) +
                        " dropped for unresolved structure_ref)");
    return data;
}

void write_devices_jsonl(const std::string& path, std::span<const DeviceRecord> devices) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for writing: " + path);
    for (const DeviceRecord& r : devices) out << device_to_json(r).dump() << '\n';
    if (!out) throw DataError("write failed: " + path);
}

void write_structures_jsonl(
    const std::string& path,
    std::span<const std::pair<std::string, CrystalStructure>> structures) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for writing: " + path);
    for (const auto& [ref, s] : structures) {
        json j;
        j["structure_ref"] = ref;
        j["lattice"] = s.lattice;
        json coords = json::array();
        for (const Vec3& f : s.frac_coords) coords.push_back(f);
        j["frac_coords"] = std::move(coords);
        j["atomic_numbers"] = s.atomic_numbers;
        j["formula"] = s.formula;
        out << j.dump() << '\n';
    }
    if (!out) throw DataError("write failed: " + path);
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

SplitPolicy split_policy_from_string(const std::string& name) {
    if (name == "random_80_10_10" || name == "random") return SplitPolicy::random_80_10_10;
    if (name == "group_by_materials" || name == "group")
        return SplitPolicy::group_by_materials;
    throw ConfigError("unknown split policy '" + name +
                      "' (expected random_80_10_10 or group_by_materials)");
}

const char* split_policy_name(SplitPolicy policy) {
    switch (policy) {
        case SplitPolicy::random_80_10_10: return "random_80_10_10";
        case SplitPolicy::group_by_materials: return "group_by_materials";
    }
    throw ContractError("invalid split policy value");
}

std::string material_group_key(const DeviceRecord& r) {
    std::string key = r.perovskite_formula;
    for (const std::string& layer : r.layers) {
        key.push_back('\x1f'); // unit separator: cannot collide with material text
        key += layer;
    }
    return key;
}

DatasetSplit make_split(std::span<const DeviceRecord> devices, SplitPolicy policy,
                        uint64_t seed) {
    const size_t n = devices.size();
    if (n < 10)
        throw ContractError("make_split: need at least 10 devices, got " +
                            std::to_string(n));

    DatasetSplit split;
    split.policy = policy;
    split.seed = seed;
    const size_t n_val = n / 10;
    const size_t n_test = n / 10;
    const size_t n_train = n - n_val - n_test;

    Rng rng(seed);
    if (policy == SplitPolicy::random_80_10_10) {
        std::vector<size_t> order(n);
        std::iota(order.begin(), order.end(), size_t{0});
        rng.shuffle(order);
        for (size_t i = 0; i < n; ++i) {
            const std::string& id = devices[order[i]].device_id;
            if (i < n_train) split.train.push_back(id);
            else if (i < n_train + n_val) split.val.push_back(id);
            else split.test.push_back(id);
        }
        return split;
    }

    // Group policy: whole material configurations stay in one partition.
    std::vector<std::string> keys; // first-appearance order, then shuffled
    std::unordered_map<std::string, std::vector<size_t>> members;
    for (size_t i = 0; i < n; ++i) {
        std::string key = material_group_key(devices[i]);
        auto [it, fresh] = members.try_emplace(std::move(key));
        if (fresh) keys.push_back(it->first);
        it->second.push_back(i);
    }
    if (keys.size() < 3)
        throw ContractError("group split needs at least 3 distinct material "
                            "configurations, got " + std::to_string(keys.size()));
    rng.shuffle(keys);

    const std::array<size_t, 3> target = {n_train, n_val, n_test};
    std::array<size_t, 3> filled = {0, 0, 0};
    std::array<std::vector<std::string>*, 3> parts = {&split.train, &split.val,
                                                      &split.test};
    for (const std::string& key : keys) {
        // Largest remaining deficit wins; ties go to the earlier partition.
        size_t best = 0;
        ptrdiff_t best_deficit = PTRDIFF_MIN;
        for (size_t p = 0; p < 3; ++p) {
            const ptrdiff_t deficit = static_cast<ptrdiff_t>(target[p]) -
                                      static_cast<ptrdiff_t>(filled[p]);
            if (deficit > best_deficit) {
                best_deficit = deficit;
                best = p;
            }
        }
        for (size_t i : members.at(key)) parts[best]->push_back(devices[i].device_id);
        filled[best] += members.at(key).size();
    }
    return split;
}

void save_split(const std::string& path, const DatasetSplit& split) {
    json j;
    j["policy"] = split_policy_name(split.policy);
    j["seed"] = split.seed;
    j["train"] = split.train;
    j["val"] = split.val;
    j["test"] = split.test;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for writing: " + path);
    out << j.dump(2) << '\n';
    if (!out) throw DataError("write failed: " + path);
}

DatasetSplit load_split(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open: " + path);
    try {
        const json j = json::parse(in);
        DatasetSplit split;
        split.policy = split_policy_from_string(j.at("policy").get<std::string>());
        split.seed = j.at("seed").get<uint64_t>();
        split.train = j.at("train").get<std::vector<std::string>>();
        split.val = j.at("val").get<std::vector<std::string>>();
        split.test = j.at("test").get<std::vector<std::string>>();
        return split;
    } catch (const json::exception& e) {
        throw ParseError("split file " + path + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Prepared devices and batches
// ---------------------------------------------------------------------------

const PreparedDevice& PreparedDataset::at(const std::string& device_id) const {
    auto it = by_id.find(device_id);
    if (it == by_id.end()) throw DataError("unknown device_id '" + device_id + "'");
    return devices[it->second];
}

PreparedDataset prepare_dataset(const Dataset& data, const GraphConfig& graph_cfg,
                                const Vocabulary& vocab, size_t max_tokens) {
    PreparedDataset prep;
    for (const auto& [ref, s] : data.structures)
        prep.graphs.emplace(ref, build_graph(s, graph_cfg));

    prep.devices.reserve(data.devices.size());
    for (const DeviceRecord& r : data.devices) {
        auto git = prep.graphs.find(r.structure_ref);
        if (git == prep.graphs.end())
            throw DataError("device '" + r.device_id + "': unresolved structure_ref '" +
                            r.structure_ref + "'");
        PreparedDevice d;
        d.device_id = r.device_id;
        d.graph = &git->second;
        d.num_atoms = git->second.num_atoms;
        for (size_t k = 0; k < 4; ++k)
            d.layer_tokens[k] = tokenize(r.layers[k], vocab, max_tokens);
        d.pce = r.pce;
        prep.by_id.emplace(d.device_id, prep.devices.size());
        prep.devices.push_back(std::move(d));
    }
    return prep;
}

std::vector<double> DeviceBatch::node_mask(size_t i) const {
    if (i >= devices.size()) throw ContractError("node_mask: device index out of range");
    std::vector<double> mask(max_atoms, 0.0);
    for (size_t a = 0; a < devices[i]->num_atoms; ++a) mask[a] = 1.0;
    return mask;
}

DeviceBatch build_batch(const PreparedDataset& prep, std::span<const std::string> ids) {
    DeviceBatch batch;
    batch.devices.reserve(ids.size());
    for (const std::string& id : ids) {
        const PreparedDevice& d = prep.at(id);
        batch.devices.push_back(&d);
        batch.max_atoms = std::max(batch.max_atoms, d.num_atoms);
        batch.targets.push_back(d.pce);
    }
    return batch;
}

DeviceBatch build_batch_indices(const PreparedDataset& prep, std::span<const size_t> idxs) {
    DeviceBatch batch;
    batch.devices.reserve(idxs.size());
    for (size_t i : idxs) {
        if (i >= prep.devices.size())
            throw ContractError("build_batch_indices: index " + std::to_string(i) +
                                " out of range");
        const PreparedDevice& d = prep.devices[i];
        batch.devices.push_back(&d);
        batch.max_atoms = std::max(batch.max_atoms, d.num_atoms);
        batch.targets.push_back(d.pce);
    }
    return batch;
}

// ---------------------------------------------------------------------------
// Prediction files
// ---------------------------------------------------------------------------

void write_ground_truth_csv(const std::string& path, std::span<const GroundTruthRow> rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for writing: " + path);
    out << "device_id,pce_star,sigma\n";
    for (const GroundTruthRow& r : rows)
        out << r.device_id << ',' << fmt_double(r.pce_star) << ',' << fmt_double(r.sigma)
            << '\n';
    if (!out) throw DataError("write failed: " + path);
}

void write_predictions_csv(const std::string& path, std::span<const PredictionRow> rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for writing: " + path);
    out << "device_id,y_true,mu,sigma\n";
    for (const PredictionRow& r : rows)
        out << r.device_id << ',' << fmt_double(r.y_true) << ',' << fmt_double(r.mu)
            << ',' << fmt_double(r.sigma) << '\n';
    if (!out) throw DataError("write failed: " + path);
}

std::vector<PredictionRow> read_predictions_csv(const std::string& path) {
    const std::vector<std::string> lines = read_lines(path);
    if (lines.empty()) throw ParseError("predictions file " + path + " is empty");

    auto split_csv = [](const std::string& line) {
        std::vector<std::string> fields;
        std::string field;
        std::istringstream ss(line);
        while (std::getline(ss, field, ',')) fields.push_back(field);
        if (!line.empty() && line.back() == ',') fields.push_back("");
        return fields;
    };

    const std::vector<std::string> header = split_csv(lines[0]);
    const std::array<const char*, 4> expected = {"device_id", "y_true", "mu", "sigma"};
    for (const char* col : expected)
        if (std::find(header.begin(), header.end(), col) == header.end())
            throw ParseError("predictions file " + path + ": missing column '" + col +
                             "'");
    std::array<size_t, 4> at{};
    for (size_t k = 0; k < 4; ++k)
        at[k] = static_cast<size_t>(
            std::find(header.begin(), header.end(), expected[k]) - header.begin());

    std::vector<PredictionRow> rows;
    for (size_t i = 1; i < lines.size(); ++i) {
        if (is_blank(lines[i])) continue;
        const std::vector<std::string> f = split_csv(lines[i]);
        if (f.size() < header.size())
            throw ParseError("predictions file " + path + " line " + std::to_string(i + 1) +
                             ": expected " + std::to_string(header.size()) + " fields, got " +
                             std::to_string(f.size()));
        PredictionRow r;
        r.device_id = f[at[0]];
        try {
            r.y_true = std::stod(f[at[1]]);
            r.mu = std::stod(f[at[2]]);
            r.sigma = std::stod(f[at[3]]);
        } catch (const std::exception&) {
            throw ParseError("predictions file " + path + " line " + std::to_string(i + 1) +
                             ": non-numeric field");
        }
        rows.push_back(std::move(r));
    }
    if (rows.empty()) throw ParseError("predictions file " + path + " has no data rows");
    return rows;
}

void write_predict_only_csv(const std::string& path, std::span<const PredictionRow> rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for writing: " + path);
    out << "device_id,mu,sigma\n";
    for (const PredictionRow& r : rows)
        out << r.device_id << ',' << fmt_double(r.mu) << ',' << fmt_double(r.sigma) << '\n';
    if (!out) throw DataError("write failed: " + path);
}

} // namespace solargeco

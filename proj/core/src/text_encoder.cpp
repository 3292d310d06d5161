#include "solargeco/text_encoder.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "solargeco/elements.hpp"

namespace solargeco {

LayerRole layer_role_from_string(const std::string& name) {
    for (size_t i = 0; i < kLayerRoleNames.size(); ++i) {
        if (name == kLayerRoleNames[i]) return static_cast<LayerRole>(i);
    }
    throw ParseError("unknown layer role '" + name +
                     "' (expected substrate, etl, htl, or back_contact)");
}

namespace {

bool is_letter(char c) { return std::isalpha(static_cast<unsigned char>(c)) != 0; }
bool is_digit(char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; }

// Greedy left-to-right element decomposition of a letter run; empty result
// means the run is not a clean chain of element symbols.
std::vector<std::string> decompose_elements(const std::string& run) {
    std::vector<std::string> parts;
    size_t i = 0;
    while (i < run.size()) {
        if (i + 1 < run.size() && is_element_symbol(run.substr(i, 2))) {
            parts.push_back(run.substr(i, 2));
            i += 2;
        } else if (is_element_symbol(run.substr(i, 1))) {
            parts.push_back(run.substr(i, 1));
            i += 1;
        } else {
            return {};
        }
    }
    return parts;
}

} // namespace

std::vector<std::string> split_tokens(const std::string& text) {
    size_t lo = 0, hi = text.size();
    while (lo < hi && std::isspace(static_cast<unsigned char>(text[lo]))) ++lo;
    while (hi > lo && std::isspace(static_cast<unsigned char>(text[hi - 1]))) --hi;

    std::vector<std::string> out;
    size_t i = lo;
    while (i < hi) {
        const char c = text[i];
        if (std::isspace(static_cast<unsigned char>(c))) {
            ++i;
        } else if (is_letter(c)) {
            size_t j = i;
            while (j < hi && is_letter(text[j])) ++j;
            const std::string run = text.substr(i, j - i);
            auto parts = decompose_elements(run);
            if (parts.empty()) {
                out.push_back(run);
            } else {
                out.insert(out.end(), parts.begin(), parts.end());
            }
            i = j;
        } else if (is_digit(c)) {
            size_t j = i;
            while (j < hi && is_digit(text[j])) ++j;
            out.push_back(text.substr(i, j - i));
            i = j;
        } else {
            out.push_back(std::string(1, c));
            ++i;
        }
    }
    return out;
}

Vocabulary::Vocabulary() {
    push("<pad>");
    push("<unk>");
    push("<cls>");
}

void Vocabulary::push(const std::string& token) {
    ids_.emplace(token, static_cast<uint32_t>(tokens_.size()));
    tokens_.push_back(token);
}

Vocabulary Vocabulary::build(const std::vector<std::string>& corpus, size_t min_count) {
    if (corpus.empty()) throw ContractError("build_vocab: empty corpus");
    std::map<std::string, size_t> counts; // ordered map keeps ties lexicographic
    for (const auto& text : corpus) {
        for (auto& tok : split_tokens(text)) ++counts[tok];
    }
    std::vector<std::pair<std::string, size_t>> ranked(counts.begin(), counts.end());
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    Vocabulary v;
    for (const auto& [tok, count] : ranked) {
        if (count >= min_count) v.push(tok);
    }
    return v;
}

uint32_t Vocabulary::id_of(const std::string& token) const {
    auto it = ids_.find(token);
    return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token_of(uint32_t id) const {
    if (id >= tokens_.size()) {
        throw ContractError("token id " + std::to_string(id) + " out of range for vocabulary of " +
                            std::to_string(tokens_.size()));
    }
    return tokens_[id];
}

void Vocabulary::save(const std::string& path) const {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw DataError("cannot open vocabulary file for writing: " + path);
    for (size_t id = 0; id < tokens_.size(); ++id) {
        os << tokens_[id] << '\t' << id << '\n';
    }
    if (!os) throw DataError("failed writing vocabulary file: " + path);
}

Vocabulary Vocabulary::load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open vocabulary file: " + path);
    std::vector<std::string> tokens;
    std::string line;
    size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        const size_t tab = line.find('\t');
        if (tab == std::string::npos) {
            throw ParseError("vocabulary line " + std::to_string(line_no) +
                             ": expected token<TAB>id");
        }
        const std::string tok = line.substr(0, tab);
        size_t id = 0;
        try {
            id = std::stoull(line.substr(tab + 1));
        } catch (const std::exception&) {
            throw ParseError("vocabulary line " + std::to_string(line_no) + ": bad id");
        }
        if (id != tokens.size()) {
            throw ParseError("vocabulary line " + std::to_string(line_no) +
                             ": ids must be dense and ascending from 0");
        }
        tokens.push_back(tok);
    }
    return from_tokens(std::move(tokens));
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
    if (tokens.size() < 3 || tokens[0] != "<pad>" || tokens[1] != "<unk>" ||
        tokens[2] != "<cls>") {
        throw ParseError("vocabulary must start with <pad>, <unk>, <cls>");
    }
    Vocabulary v;
    for (size_t id = 3; id < tokens.size(); ++id) {
        if (v.ids_.count(tokens[id])) {
            throw ParseError("vocabulary repeats token '" + tokens[id] + "'");
        }
        v.push(tokens[id]);
    }
    return v;
}

std::vector<uint32_t> tokenize(const std::string& text, const Vocabulary& vocab,
                               size_t max_tokens) {
    if (max_tokens == 0) throw ContractError("tokenize: max_tokens must be positive");
    std::vector<uint32_t> ids;
    ids.reserve(max_tokens);
    ids.push_back(Vocabulary::kCls);
    for (const auto& tok : split_tokens(text)) {
        if (ids.size() == max_tokens) break;
        ids.push_back(vocab.id_of(tok));
    }
    ids.resize(max_tokens, Vocabulary::kPad);
    return ids;
}

void init_text_encoder_params(ParamStore& store, const TextEncoderConfig& cfg,
                              size_t vocab_size, Rng& rng) {
    if (vocab_size < 3) throw ContractError("text encoder needs a vocabulary with specials");
    auto embed = glorot_uniform(rng, vocab_size, cfg.d_bert);
    std::fill(embed.begin(), embed.begin() + static_cast<long>(cfg.d_bert), 0.0); // PAD row
    store.create("text.embed", {vocab_size, cfg.d_bert}, std::move(embed));
    if (cfg.self_attention) {
        const size_t d = cfg.d_bert;
        store.create("text.attn.wq", {d, d}, glorot_uniform(rng, d, d));
        store.create("text.attn.wk", {d, d}, glorot_uniform(rng, d, d));
        store.create("text.attn.wv", {d, d}, glorot_uniform(rng, d, d));
        store.create("text.attn.wo", {d, d}, glorot_uniform(rng, d, d));
        store.create("text.norm_gain", {d}, std::vector<double>(d, 1.0));
        store.create("text.norm_bias", {d}, std::vector<double>(d, 0.0));
    }
}

Tensor encode_layer_tokens(Tape& tape, std::span<const uint32_t> token_ids,
                           ParamStore& store, const TextEncoderConfig& cfg) {
    if (token_ids.empty() || token_ids[0] != Vocabulary::kCls) {
        throw ContractError("encode_layer_tokens: sequence must start with CLS");
    }
    Tensor embed = tape.param(store.at("text.embed"));
    Tensor h = tape.gather_rows(embed, token_ids);

    std::vector<double> valid(token_ids.size());
    for (size_t i = 0; i < token_ids.size(); ++i) {
        valid[i] = token_ids[i] == Vocabulary::kPad ? 0.0 : 1.0;
    }

    if (!cfg.self_attention) {
        return tape.masked_mean_axis0(h, valid);
    }

    Tensor q = tape.matmul(h, tape.param(store.at("text.attn.wq")));
    Tensor k = tape.matmul(h, tape.param(store.at("text.attn.wk")));
    Tensor v = tape.matmul(h, tape.param(store.at("text.attn.wv")));
    Tensor scores = tape.scale(tape.matmul(q, tape.transpose(k)),
                               1.0 / std::sqrt(static_cast<double>(cfg.d_bert)));
    Tensor weights = tape.softmax_rows_masked(scores, valid);
    Tensor attended = tape.matmul(tape.matmul(weights, v), tape.param(store.at("text.attn.wo")));
    Tensor normed = tape.layer_norm(tape.add(h, attended), tape.param(store.at("text.norm_gain")),
                                    tape.param(store.at("text.norm_bias")), 1e-5);
    return tape.slice_rows(normed, 0, 1); // CLS position
}

Tensor encode_layers(Tape& tape, const std::array<std::vector<uint32_t>, 4>& layer_tokens,
                     ParamStore& store, const TextEncoderConfig& cfg) {
    std::array<Tensor, 4> rows;
    for (size_t r = 0; r < 4; ++r) {
        rows[r] = encode_layer_tokens(tape, layer_tokens[r], store, cfg);
    }
    return tape.concat_rows(rows);
}

} // namespace solargeco

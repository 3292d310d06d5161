#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "solargeco/optim.hpp"
#include "solargeco/tensor.hpp"

namespace solargeco {

/// The four device context layers, in canonical stack order. The position in
/// this order doubles as the layer's identity for the fusion module.
enum class LayerRole : uint8_t { substrate = 0, etl = 1, htl = 2, back_contact = 3 };

inline constexpr std::array<const char*, 4> kLayerRoleNames = {"substrate", "etl", "htl",
                                                               "back_contact"};

LayerRole layer_role_from_string(const std::string& name);

struct LayerText {
    LayerRole role;
    std::string text;
};

/// Splits a compound string into surface tokens: letter runs are greedily
/// decomposed into element symbols (two-character symbols first,
/// case-sensitive); a run that does not decompose fully stays one token
/// ("TiO2" -> Ti O 2, "Spiro-MeOTAD" -> Spiro - MeOTAD). Digit runs are
/// single tokens, punctuation is one token per character, whitespace
/// separates. Only surrounding whitespace is trimmed; case is preserved.
std::vector<std::string> split_tokens(const std::string& text);

/// Token ids with dense 0..V-1 indexing and fixed specials PAD=0, UNK=1, CLS=2.
class Vocabulary {
public:
    static constexpr uint32_t kPad = 0;
    static constexpr uint32_t kUnk = 1;
    static constexpr uint32_t kCls = 2;

    Vocabulary();

    /// Deterministic: tokens with count >= min_count over the split corpus,
    /// ordered by (count desc, token lexicographic), ids starting after the
    /// specials.
    static Vocabulary build(const std::vector<std::string>& corpus, size_t min_count);

    uint32_t id_of(const std::string& token) const; // UNK for unseen tokens
    const std::string& token_of(uint32_t id) const;
    size_t size() const { return tokens_.size(); }

    /// Line-oriented "token<TAB>id" file; round-trips exactly.
    void save(const std::string& path) const;
    static Vocabulary load(const std::string& path);

    const std::vector<std::string>& tokens() const { return tokens_; }
    static Vocabulary from_tokens(std::vector<std::string> tokens);

private:
    std::vector<std::string> tokens_;                 // id -> token
    std::unordered_map<std::string, uint32_t> ids_;   // token -> id
    void push(const std::string& token);
};

/// CLS + token ids, truncated to max_tokens and padded with PAD. An empty
/// string yields [CLS, PAD, ...].
std::vector<uint32_t> tokenize(const std::string& text, const Vocabulary& vocab,
                               size_t max_tokens);

struct TextEncoderConfig {
    size_t d_bert = 64;
    size_t max_tokens = 32;
    bool self_attention = true; // false: masked mean over non-PAD embeddings
};

/// Registers "text.embed" (V x d_bert; PAD row zero) and, when the
/// self-attention block is enabled, "text.attn.{wq,wk,wv,wo}" plus
/// "text.norm_{gain,bias}".
void init_text_encoder_params(ParamStore& store, const TextEncoderConfig& cfg,
                              size_t vocab_size, Rng& rng);

/// One context-layer string -> 1 x d_bert. Token embeddings pass through a
/// single-head self-attention block with residual + normalization (PAD
/// positions masked out of the keys) and the CLS row is extracted; without
/// the block, the non-PAD embeddings are mean-pooled instead.
Tensor encode_layer_tokens(Tape& tape, std::span<const uint32_t> token_ids,
                           ParamStore& store, const TextEncoderConfig& cfg);

/// Stacks the four layer encodings in canonical role order -> 4 x d_bert.
Tensor encode_layers(Tape& tape, const std::array<std::vector<uint32_t>, 4>& layer_tokens,
                     ParamStore& store, const TextEncoderConfig& cfg);

} // namespace solargeco

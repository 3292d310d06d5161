#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "solargeco/errors.hpp"

namespace solargeco {

using Shape = std::vector<size_t>;

size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

/// Persistent trainable tensor. Lives outside any tape; gradients accumulate
/// here across backward passes until ParamStore::zero_grad().
struct Param {
    std::string name;
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool trainable = true;
    double lr_scale = 1.0;

    size_t numel() const { return value.size(); }
};

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Tensor {
public:
    Tensor() = default;

    const Shape& shape() const;
    size_t numel() const;
    // Rank <= 2 view: rank-0/1 tensors count as a single row.
    size_t rows() const;
    size_t cols() const;

    std::span<const double> values() const;
    // For leaves this is the persistent accumulator (Param::grad for
    // parameters); for interior nodes, the scratch gradient of the most
    // recent backward pass. Empty before any backward.
    std::span<const double> grad() const;
    bool requires_grad() const;

    double scalar() const; // numel()==1 only

    bool valid() const { return tape_ != nullptr; }
    uint32_t id() const { return id_; }

private:
    friend class Tape;
    Tensor(Tape* tape, uint32_t id) : tape_(tape), id_(id) {}
    Tape* tape_ = nullptr;
    uint32_t id_ = 0;
};

/// Dynamic reverse-mode tape over dense 64-bit tensors. One tape is built
/// per forward pass and confined to a single thread; distinct tapes on
/// distinct threads are independent.
///
/// Nodes are appended in topological order (inputs always precede
/// consumers); backward() sweeps the list once in reverse.
class Tape {
public:
    /// dropout_stream keys the counter-based PRNG for dropout ops so a
    /// rebuilt tape with the same stream draws identical masks.
    explicit Tape(uint64_t dropout_stream = 0);
    ~Tape();

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // -- leaves -------------------------------------------------------------
    Tensor constant(Shape shape, std::vector<double> data);
    Tensor constant_scalar(double v) { return constant({1}, {v}); }
    Tensor zeros(Shape shape);
    Tensor leaf(Shape shape, std::vector<double> data, bool requires_grad);
    /// References the parameter's storage (no copy). After backward(),
    /// d(loss)/d(param) is added into Param::grad.
    Tensor param(Param& p);

    // -- linear algebra -----------------------------------------------------
    Tensor matmul(Tensor a, Tensor b);
    Tensor transpose(Tensor a);

    // -- elementwise --------------------------------------------------------
    // add/sub/mul/div accept equal shapes, a row-vector second operand
    // broadcast over rows, or a scalar second operand.
    Tensor add(Tensor a, Tensor b);
    Tensor sub(Tensor a, Tensor b);
    Tensor mul(Tensor a, Tensor b);
    Tensor div(Tensor a, Tensor b);
    Tensor scale(Tensor a, double c);
    Tensor add_const(Tensor a, double c);
    Tensor exp(Tensor a);
    Tensor log(Tensor a); // DomainError on nonpositive entries
    Tensor sigmoid(Tensor a);
    Tensor softplus(Tensor a);
    Tensor relu(Tensor a);
    /// Train mode: zeroes each entry with probability p, scales survivors by
    /// 1/(1-p); masks are a pure function of (dropout_stream, node index).
    /// Eval mode: identity.
    Tensor dropout(Tensor a, double p, bool training);

    // -- softmax / normalization ---------------------------------------------
    /// Row-wise softmax with per-row max subtraction.
    Tensor softmax_rows(Tensor a);
    /// As softmax_rows but entries at key_mask==0 get exactly zero weight and
    /// rows renormalize over unmasked keys. key_mask length == cols.
    /// ContractError if a row has no unmasked key.
    Tensor softmax_rows_masked(Tensor a, std::span<const double> key_mask);
    /// Normalizes the last dimension to zero mean / unit variance, then
    /// applies affine gain and bias (both of length cols).
    Tensor layer_norm(Tensor x, Tensor gain, Tensor bias, double eps);

    // -- reductions -----------------------------------------------------------
    Tensor sum(Tensor a);
    Tensor mean(Tensor a);
    /// sum(a .* mask) / sum(mask) over all entries; mask is 0/1 with at least
    /// one 1 (ContractError otherwise).
    Tensor masked_mean(Tensor a, std::span<const double> mask);
    /// Column means over rows: [m x n] -> [1 x n].
    Tensor mean_axis0(Tensor a);
    /// Column means over rows where row_mask==1: [m x n] -> [1 x n].
    /// ContractError when the mask has no 1.
    Tensor masked_mean_axis0(Tensor a, std::span<const double> row_mask);

    // -- indexing / assembly -------------------------------------------------
    Tensor gather_rows(Tensor a, std::span<const uint32_t> row_indices);
    /// out[seg[e], :] += a[e, :]; out has num_segments rows.
    Tensor segment_sum_rows(Tensor a, std::span<const uint32_t> segments,
                            size_t num_segments);
    Tensor concat_rows(std::span<const Tensor> parts);
    Tensor concat_cols(std::span<const Tensor> parts);
    Tensor slice_rows(Tensor a, size_t start, size_t count);
    Tensor slice_cols(Tensor a, size_t start, size_t count);

    // -- autodiff -------------------------------------------------------------
    /// Reverse sweep from a scalar loss. Scratch gradients are cleared at the
    /// start of each call; leaf/param accumulators are added to, so repeated
    /// calls without zero_grad accumulate additively.
    void backward(Tensor loss);

    size_t num_nodes() const;
    uint64_t dropout_stream() const { return dropout_stream_; }

    struct Node; // opaque; defined in tensor.cpp

private:
    friend class Tensor;
    struct Impl;
    std::unique_ptr<Impl> impl_;
    uint64_t dropout_stream_;

    const Node& node(uint32_t id) const;
    uint32_t push(Node&& n);
};

} // namespace solargeco

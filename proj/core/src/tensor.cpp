#include "solargeco/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <initializer_list>
#include <limits>
#include <sstream>

#include "solargeco/rng.hpp"

namespace solargeco {

size_t shape_numel(const Shape& s) {
    size_t n = 1;
    for (size_t d : s) n *= d;
    return s.empty() ? 0 : n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << " x ";
        os << s[i];
    }
    os << "]";
    return os.str();
}

namespace {

enum class Op : uint8_t {
    kLeaf,
    kMatmul,
    kTranspose,
    kAdd,
    kSub,
    kMul,
    kDiv,
    kScale,
    kAddConst,
    kExp,
    kLog,
    kSigmoid,
    kSoftplus,
    kRelu,
    kDropout,
    kSoftmax,
    kLayerNorm,
    kSum,
    kMean,
    kMaskedMean,
    kMeanAxis0,
    kMaskedMeanAxis0,
    kGatherRows,
    kSegmentSum,
    kConcatRows,
    kConcatCols,
    kSliceRows,
    kSliceCols,
};

// Broadcast modes for binary elementwise ops.
enum : uint32_t { kSameShape = 0, kRowVector = 1, kScalarOperand = 2 };

size_t rank2_rows(const Shape& s) {
    if (s.size() > 2) throw DimensionError("expected tensor of rank <= 2, got " + shape_str(s));
    return s.size() == 2 ? s[0] : 1;
}

size_t rank2_cols(const Shape& s) {
    if (s.size() > 2) throw DimensionError("expected tensor of rank <= 2, got " + shape_str(s));
    if (s.empty()) return 1;
    return s.size() == 2 ? s[1] : s[0];
}

// C[m x n] += A[m x k] * B[k x n]
void mm_nn_acc(const double* a, size_t m, size_t k, const double* b, size_t n, double* c) {
    for (size_t i = 0; i < m; ++i) {
        const double* ar = a + i * k;
        double* cr = c + i * n;
        for (size_t p = 0; p < k; ++p) {
            const double av = ar[p];
            const double* br = b + p * n;
            for (size_t q = 0; q < n; ++q) cr[q] += av * br[q];
        }
    }
}

// C[m x n] += A[m x k] * B^T, B stored [n x k]
void mm_nt_acc(const double* a, size_t m, size_t k, const double* b, size_t n, double* c) {
    for (size_t i = 0; i < m; ++i) {
        const double* ar = a + i * k;
        double* cr = c + i * n;
        for (size_t j = 0; j < n; ++j) {
            const double* br = b + j * k;
            double acc = 0.0;
            for (size_t p = 0; p < k; ++p) acc += ar[p] * br[p];
            cr[j] += acc;
        }
    }
}

// C[k x n] += A^T * B, A stored [m x k], B stored [m x n]
void mm_tn_acc(const double* a, size_t m, size_t k, const double* b, size_t n, double* c) {
    for (size_t i = 0; i < m; ++i) {
        const double* ar = a + i * k;
        const double* br = b + i * n;
        for (size_t p = 0; p < k; ++p) {
            const double av = ar[p];
            double* cr = c + p * n;
            for (size_t q = 0; q < n; ++q) cr[q] += av * br[q];
        }
    }
}

double stable_sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double stable_softplus(double x) {
    return std::max(x, 0.0) + std::log1p(std::exp(-std::fabs(x)));
}

} // namespace

struct Tape::Node {
    Op op = Op::kLeaf;
    uint32_t a = 0, b = 0, c = 0;
    uint32_t i0 = 0;              // broadcast mode / slice start / flags
    double c0 = 0.0;              // scale factor / eps / dropout p / mask count
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;     // scratch, reset every backward()
    std::vector<double> accum;    // persistent accumulator for plain leaves
    std::vector<double> aux;      // masks, cached statistics, dropout factors
    std::vector<uint32_t> idx;    // gather/segment indices, concat part ids
    Param* param = nullptr;
    const double* ext = nullptr;  // external value storage (param leaves)
    bool requires_grad = false;

    size_t numel() const { return shape_numel(shape); }
    size_t rows() const { return rank2_rows(shape); }
    size_t cols() const { return rank2_cols(shape); }
    const double* data() const { return ext ? ext : value.data(); }
};

struct Tape::Impl {
    std::deque<Node> nodes;
};

Tape::Tape(uint64_t dropout_stream)
    : impl_(std::make_unique<Impl>()), dropout_stream_(dropout_stream) {}

Tape::~Tape() = default;

const Tape::Node& Tape::node(uint32_t id) const { return impl_->nodes[id]; }

uint32_t Tape::push(Node&& n) {
    impl_->nodes.push_back(std::move(n));
    return static_cast<uint32_t>(impl_->nodes.size() - 1);
}

size_t Tape::num_nodes() const { return impl_->nodes.size(); }

// ---------------------------------------------------------------------------
// Tensor accessors
// ---------------------------------------------------------------------------

const Shape& Tensor::shape() const { return tape_->node(id_).shape; }
size_t Tensor::numel() const { return tape_->node(id_).numel(); }
size_t Tensor::rows() const { return tape_->node(id_).rows(); }
size_t Tensor::cols() const { return tape_->node(id_).cols(); }
bool Tensor::requires_grad() const { return tape_->node(id_).requires_grad; }

std::span<const double> Tensor::values() const {
    const auto& n = tape_->node(id_);
    return {n.data(), n.numel()};
}

std::span<const double> Tensor::grad() const {
    const auto& n = tape_->node(id_);
    if (n.param) return {n.param->grad.data(), n.param->grad.size()};
    if (n.op == Op::kLeaf) return {n.accum.data(), n.accum.size()};
    return {n.grad.data(), n.grad.size()};
}

double Tensor::scalar() const {
    const auto& n = tape_->node(id_);
    if (n.numel() != 1) {
        throw ContractError("scalar() called on tensor of shape " + shape_str(n.shape));
    }
    return n.data()[0];
}

// ---------------------------------------------------------------------------
// Leaves
// ---------------------------------------------------------------------------

namespace {
void check_shape_data(const Shape& shape, const std::vector<double>& data) {
    if (shape.empty()) throw DimensionError("tensor shape must have at least one dimension");
    for (size_t d : shape) {
        if (d == 0) throw DimensionError("tensor dimensions must be positive: " + shape_str(shape));
    }
    if (shape_numel(shape) != data.size()) {
        std::ostringstream os;
        os << "shape " << shape_str(shape) << " requires " << shape_numel(shape)
           << " values, got " << data.size();
        throw DimensionError(os.str());
    }
}
} // namespace

Tensor Tape::constant(Shape shape, std::vector<double> data) {
    check_shape_data(shape, data);
    Node n;
    n.op = Op::kLeaf;
    n.shape = std::move(shape);
    n.value = std::move(data);
    n.requires_grad = false;
    return Tensor(this, push(std::move(n)));
}

Tensor Tape::zeros(Shape shape) {
    size_t count = shape_numel(shape);
    return constant(std::move(shape), std::vector<double>(count, 0.0));
}

Tensor Tape::leaf(Shape shape, std::vector<double> data, bool requires_grad) {
    check_shape_data(shape, data);
    Node n;
    n.op = Op::kLeaf;
    n.shape = std::move(shape);
    n.value = std::move(data);
    n.requires_grad = requires_grad;
    if (requires_grad) n.accum.assign(n.value.size(), 0.0);
    return Tensor(this, push(std::move(n)));
}

Tensor Tape::param(Param& p) {
    if (p.value.size() != shape_numel(p.shape)) {
        throw DimensionError("param '" + p.name + "' value length does not match shape " +
                             shape_str(p.shape));
    }
    if (p.grad.size() != p.value.size()) p.grad.assign(p.value.size(), 0.0);
    Node n;
    n.op = Op::kLeaf;
    n.shape = p.shape;
    n.ext = p.value.data();
    n.param = &p;
    n.requires_grad = true;
    return Tensor(this, push(std::move(n)));
}

// ---------------------------------------------------------------------------
// Op construction helpers
// ---------------------------------------------------------------------------

namespace {
void require_same_tape(const Tape* t, std::initializer_list<const Tensor*> xs) {
    for (const Tensor* x : xs) {
        if (!x->valid()) throw ContractError("operation on default-constructed tensor");
    }
    (void)t;
}
} // namespace

Tensor Tape::matmul(Tensor a, Tensor b) {
    require_same_tape(this, {&a, &b});
    const Node& na = node(a.id_);
    const Node& nb = node(b.id_);
    const size_t m = na.rows(), k = na.cols();
    const size_t k2 = nb.rows(), n = nb.cols();
    if (k != k2) {
        throw DimensionError("matmul: inner dimensions disagree: " + shape_str(na.shape) +
                             " vs " + shape_str(nb.shape));
    }
    Node out;
    out.op = Op::kMatmul;
    out.a = a.id_;
    out.b = b.id_;
    out.shape = {m, n};
    out.value.assign(m * n, 0.0);
    mm_nn_acc(na.data(), m, k, nb.data(), n, out.value.data());
    out.requires_grad = na.requires_grad || nb.requires_grad;
    return Tensor(this, push(std::move(out)));
}

Tensor Tape::transpose(Tensor a) {
    require_same_tape(this, {&a});
    const Node& na = node(a.id_);
    const size_t m = na.rows(), n = na.cols();
    Node out;
    out.op = Op::kTranspose;
    out.a = a.id_;
    out.shape = {n, m};
    out.value.resize(m * n);
    const double* src = na.data();
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < n; ++j) out.value[j * m + i] = src[i * n + j];
    out.requires_grad = na.requires_grad;
    return Tensor(this, push(std::move(out)));
}

namespace {
uint32_t broadcast_mode(const Tape::Node&, size_t am, size_t an, size_t bm, size_t bn,
                        const Shape& sa, const Shape& sb) {
    if (am == bm && an == bn) return kSameShape;
    if (bm == 1 && bn == an) return kRowVector;
    if (bm * bn == 1) return kScalarOperand;
    throw DimensionError("elementwise op: incompatible shapes " + shape_str(sa) + " vs " +
                         shape_str(sb));
}
} // namespace

Tensor Tape::add(Tensor a, Tensor b) {
    require_same_tape(this, {&a, &b});
    const Node& na = node(a.id_);
    const Node& nb = node(b.id_);
    const size_t m = na.rows(), n = na.cols();
    uint32_t mode = broadcast_mode(na, m, n, nb.rows(), nb.cols(), na.shape, nb.shape);
    Node out;
    out.op = Op::kAdd;
    out.a = a.id_;
    out.b = b.id_;
    out.i0 = mode;
    out.shape = na.shape;
    out.value.resize(m * n);
    const double* pa = na.data();
    const double* pb = nb.data();
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < n; ++j) {
            double bv = mode == kSameShape ? pb[i * n + j] : (mode == kRowVector ? pb[j] : pb[0]);
            out.value[i * n + j] = pa[i * n + j] + bv;
        }
    out.requires_grad = na.requires_grad || nb.requires_grad;
    return Tensor(this, push(std::move(out)));
}

Tensor Tape::sub(Tensor a, Tensor b) {
    require_same_tape(this, {&a, &b});
    const Node& na = node(a.id_);
    const Node& nb = node(b.id_);
    const size_t m = na.rows(), n = na.cols();
    uint32_t mode = broadcast_mode(na, m, n, nb.rows(), nb.cols(), na.shape, nb.shape);
    Node out;
    out.op = Op::kSub;
    out.a = a.id_;
    out.b = b.id_;
    out.i0 = mode;
    out.shape = na.shape;
    out.value.resize(m * n);
    const double* pa = na.data();
    const double* pb = nb.data();
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < n; ++j) {
            double bv = mode == kSameShape ? pb[i * n + j] : (mode == kRowVector ? pb[j] : pb[0]);
            out.value[i * n + j] = pa[i * n + j] - bv;
        }
    out.requires_grad = na.requires_grad || nb.requires_grad;
    return Tensor(this, push(std::move(out)));
}

Tensor Tape::mul(Tensor a, Tensor b) {
    require_same_tape(this, {&a, &b});
    const Node& na = node(a.id_);
    const Node& nb = node(b.id_);
    const size_t m = na.rows(), n = na.cols();
    uint32_t mode = broadcast_mode(na, m, n, nb.rows(), nb.cols(), na.shape, nb.shape);
    Node out;
    out.op = Op::kMul;
    out.a = a.id_;
    out.b = b.id_;
    out.i0 = mode;
    out.shape = na.shape;
    out.value.resize(m * n);
    const double* pa = na.data();
    const double* pb = nb.data();
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < n; ++j) {
            double bv = mode == kSameShape ? pb[i * n + j] : (mode == kRowVector ? pb[j] : pb[0]);
            out.value[i * n + j] = pa[i * n + j] * bv;
        }
    out.requires_grad = na.requires_grad || nb.requires_grad;
    return Tensor(this, push(std::move(out)));
}

Tensor Tape::div(Tensor a, Tensor b) {
    require_same_tape(this, {&a, &b});
    const Node& na = node(a.id_);
    const Node& nb = node(b.id_);
    const size_t m = na.rows(), n = na.cols();
    uint32_t mode = broadcast_mode(na, m, n, nb.rows(), nb.cols(), na.shape, nb.shape);
    Node out;
    out.op = Op::kDiv;
    out.a = a.id_;
    out.b = b.id_;
    out.i0 = mode;
    out.shape = na.shape;
    out.value.resize(m * n);
    const double* pa = na.data();
    const double* pb = nb.data();
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < n; ++j) {
            double bv = mode == kSameShape ? pb[i * n + j] : (mode == kRowVector ? pb[j] : pb[0]);
            out.value[i * n + j] = pa[i * n + j] / bv;
        }
    out.requires_grad = na.requires_grad || nb.requires_grad;
    return Tensor(this, push(std::move(out)));
}

namespace {
template <typename F>
Tape::Node unary_node(Op op, const Tape::Node& na, uint32_t a_id, F&& f) {
    Tape::Node out;
    out.op = op;
    out.a = a_id;
    out.shape = na.shape;
    out.value.resize(na.numel());
    const double* src = na.data();
    for (size_t i = 0; i < out.value.size(); ++i) out.value[i] = f(src[i]);
    out.requires_grad = na.requires_grad;
    return out;
}
} // namespace

Tensor Tape::scale(Tensor a, double c) {
    require_same_tape(this, {&a});
    Node out = unary_node(Op::kScale, node(a.id_), a.id_, [c](double x) { return c * x; });
    out.c0 = c;
    return Tensor(this, push(std::move(out)));
}

Tensor Tape::add_const(Tensor a, double c) {
    require_same_tape(this, {&a});
    Node out = unary_node(Op::kAddConst, node(a.id_), a.id_, [c](double x) { return x + c; });
    out.c0 = c;
    return Tensor(this, push(std::move(out)));
}

Tensor Tape::exp(Tensor a) {
    require_same_tape(this, {&a});
    Node out = unary_node(Op::kExp, node(a.id_), a.id_, [](double x) { return std::exp(x); });
    return Tensor(this, push(std::move(out)));
}

Tensor Tape::log(Tensor a) {
    require_same_tape(this, {&a});
    const Node& na = node(a.id_);
    const double* src = na.data();
    for (size_t i = 0; i < na.numel(); ++i) {
        if (!(src[i] > 0.0)) {
            std::ostringstream os;
            os << "log: nonpositive argument " << src[i] << " at flat index " << i;
            throw DomainError(os.str());
        }
    }
    Node out = unary_node(Op::kLog, na, a.id_, [](double x) { return std::log(x); });
    return Tensor(this, push(std::move(out)));
}

Tensor Tape::sigmoid(Tensor a) {
    require_same_tape(this, {&a});
    Node out = unary_node(Op::kSigmoid, node(a.id_), a.id_, stable_sigmoid);
    return Tensor(this, push(std::move(out)));
}

Tensor Tape::softplus(Tensor a) {
    require_same_tape(this, {&a});
    Node out = unary_node(Op::kSoftplus, node(a.id_), a.id_, stable_softplus);
    return Tensor(this, push(std::move(out)));
}

Tensor Tape::relu(Tensor a) {
    require_same_tape(this, {&a});
    Node out = unary_node(Op::kRelu, node(a.id_), a.id_,
                          [](double x) { return x > 0.0 ? x : 0.0; });
    return Tensor(this, push(std::move(out)));
}

Tensor Tape::dropout(Tensor a, double p, bool training) {
    require_same_tape(this, {&a});
    if (p < 0.0 || p >= 1.0) {
        throw ContractError("dropout: rate must be in [0, 1), got " + std::to_string(p));
    }
    const Node& na = node(a.id_);
    Node out;
    out.op = Op::kDropout;
    out.a = a.id_;
    out.c0 = p;
    out.shape = na.shape;
    out.requires_grad = na.requires_grad;
    const size_t count = na.numel();
    out.value.resize(count);
    const double* src = na.data();
    if (!training || p == 0.0) {
        out.i0 = 0; // identity
        std::copy(src, src + count, out.value.begin());
    } else {
        out.i0 = 1;
        out.aux.resize(count);
        const uint64_t key = mix_keys(dropout_stream_, static_cast<uint64_t>(num_nodes()));
        const double keep_scale = 1.0 / (1.0 - p);
        for (size_t i = 0; i < count; ++i) {
            out.aux[i] = counter_uniform(key, i) < p ? 0.0 : keep_scale;
            out.value[i] = src[i] * out.aux[i];
        }
    }
    return Tensor(this, push(std::move(out)));
}

namespace {
// Shared forward for plain and masked row softmax. mask.empty() means all
// keys are valid; otherwise masked columns get exactly zero.
void softmax_forward(const double* x, size_t m, size_t n, const double* mask,
                     double* y) {
    for (size_t i = 0; i < m; ++i) {
        const double* xr = x + i * n;
        double* yr = y + i * n;
        double mx = -std::numeric_limits<double>::infinity();
        for (size_t j = 0; j < n; ++j) {
            if (mask && mask[j] == 0.0) continue;
            mx = std::max(mx, xr[j]);
        }
        double s = 0.0;
        for (size_t j = 0; j < n; ++j) {
            if (mask && mask[j] == 0.0) {
                yr[j] = 0.0;
            } else {
                yr[j] = std::exp(xr[j] - mx);
                s += yr[j];
            }
        }
        for (size_t j = 0; j < n; ++j) yr[j] /= s;
    }
}
} // namespace

Tensor Tape::softmax_rows(Tensor a) {
    require_same_tape(this, {&a});
    const Node& na = node(a.id_);
    Node out;
    out.op = Op::kSoftmax;
    out.a = a.id_;
    out.i0 = 0;
    out.shape = na.shape;
    out.value.resize(na.numel());
    softmax_forward(na.data(), na.rows(), na.cols(), nullptr, out.value.data());
    out.requires_grad = na.requires_grad;
    return Tensor(this, push(std::move(out)));
}

Tensor Tape::softmax_rows_masked(Tensor a, std::span<const double> key_mask) {
    require_same_tape(this, {&a});
    const Node& na = node(a.id_);
    const size_t n = na.cols();
    if (key_mask.size() != n) {
        throw DimensionError("softmax_rows_masked: mask length " +
                             std::to_string(key_mask.size()) + " != columns " + std::to_string(n));
    }
    double ones = 0.0;
    for (double v : key_mask) {
        if (v != 0.0 && v != 1.0) throw ContractError("softmax_rows_masked: mask entries must be 0 or 1");
        ones += v;
    }
    if (ones == 0.0) throw ContractError("softmax_rows_masked: all keys masked");
    Node out;
    out.op = Op::kSoftmax;
    out.a = a.id_;
    out.i0 = 1;
    out.shape = na.shape;
    out.aux.assign(key_mask.begin(), key_mask.end());
    out.value.resize(na.numel());
    softmax_forward(na.data(), na.rows(), n, out.aux.data(), out.value.data());
    out.requires_grad = na.requires_grad;
    return Tensor(this, push(std::move(out)));
}

Tensor Tape::layer_norm(Tensor x, Tensor gain, Tensor bias, double eps) {
    require_same_tape(this, {&x, &gain, &bias});
    if (!(eps > 0.0)) throw ContractError("layer_norm: eps must be positive");
    const Node& nx = node(x.id_);
    const Node& ng = node(gain.id_);
    const Node& nb = node(bias.id_);
    const size_t m = nx.rows(), d = nx.cols();
    if (ng.numel() != d || nb.numel() != d) {
        throw DimensionError("layer_norm: gain/bias lengths " + shape_str(ng.shape) + "/" +
                             shape_str(nb.shape) + " do not match feature width " +
                             std::to_string(d));
    }
    Node out;
    out.op = Op::kLayerNorm;
    out.a = x.id_;
    out.b = gain.id_;
    out.c = bias.id_;
    out.c0 = eps;
    out.shape = nx.shape;
    out.value.resize(m * d);
    out.aux.resize(2 * m); // (mean, inv_std) per row
    const double* px = nx.data();
    const double* pg = ng.data();
    const double* pb = nb.data();
    for (size_t i = 0; i < m; ++i) {
        const double* xr = px + i * d;
        double* yr = out.value.data() + i * d;
        double mu = 0.0;
        for (size_t j = 0; j < d; ++j) mu += xr[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (size_t j = 0; j < d; ++j) {
            const double c = xr[j] - mu;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + eps);
        out.aux[2 * i] = mu;
        out.aux[2 * i + 1] = inv;
        for (size_t j = 0; j < d; ++j) yr[j] = (xr[j] - mu) * inv * pg[j] + pb[j];
    }
    out.requires_grad = nx.requires_grad || ng.requires_grad || nb.requires_grad;
    return Tensor(this, push(std::move(out)));
}

Tensor Tape::sum(Tensor a) {
    require_same_tape(this, {&a});
    const Node& na = node(a.id_);
    Node out;
    out.op = Op::kSum;
    out.a = a.id_;
    out.shape = {1};
    double s = 0.0;
    const double* src = na.data();
    for (size_t i = 0; i < na.numel(); ++i) s += src[i];
    out.value = {s};
    out.requires_grad = na.requires_grad;
    return Tensor(this, push(std::move(out)));
}

Tensor Tape::mean(Tensor a) {
    require_same_tape(this, {&a});
    const Node& na = node(a.id_);
    Node out;
    out.op = Op::kMean;
    out.a = a.id_;
    out.shape = {1};
    double s = 0.0;
    const double* src = na.data();
    for (size_t i = 0; i < na.numel(); ++i) s += src[i];
    out.value = {s / static_cast<double>(na.numel())};
    out.c0 = static_cast<double>(na.numel());
    out.requires_grad = na.requires_grad;
    return Tensor(this, push(std::move(out)));
}

Tensor Tape::masked_mean(Tensor a, std::span<const double> mask) {
    require_same_tape(this, {&a});
    const Node& na = node(a.id_);
    if (mask.size() != na.numel()) {
        throw DimensionError("masked_mean: mask length " + std::to_string(mask.size()) +
                             " != tensor size " + std::to_string(na.numel()));
    }
    double count = 0.0;
    for (double v : mask) {
        if (v != 0.0 && v != 1.0) throw ContractError("masked_mean: mask entries must be 0 or 1");
        count += v;
    }
    if (count == 0.0) throw ContractError("masked_mean: mask selects no elements");
    Node out;
    out.op = Op::kMaskedMean;
    out.a = a.id_;
    out.shape = {1};
    out.aux.assign(mask.begin(), mask.end());
    out.c0 = count;
    double s = 0.0;
    const double* src = na.data();
    for (size_t i = 0; i < na.numel(); ++i) s += src[i] * out.aux[i];
    out.value = {s / count};
    out.requires_grad = na.requires_grad;
    return Tensor(this, push(std::move(out)));
}

Tensor Tape::mean_axis0(Tensor a) {
    require_same_tape(this, {&a});
    const Node& na = node(a.id_);
    const size_t m = na.rows(), n = na.cols();
    Node out;
    out.op = Op::kMeanAxis0;
    out.a = a.id_;
    out.shape = {1, n};
    out.c0 = static_cast<double>(m);
    out.value.assign(n, 0.0);
    const double* src = na.data();
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < n; ++j) out.value[j] += src[i * n + j];
    for (size_t j = 0; j < n; ++j) out.value[j] /= static_cast<double>(m);
    out.requires_grad = na.requires_grad;
    return Tensor(this, push(std::move(out)));
}

Tensor Tape::masked_mean_axis0(Tensor a, std::span<const double> row_mask) {
    require_same_tape(this, {&a});
    const Node& na = node(a.id_);
    const size_t m = na.rows(), n = na.cols();
    if (row_mask.size() != m) {
        throw DimensionError("masked_mean_axis0: mask length " + std::to_string(row_mask.size()) +
                             " != rows " + std::to_string(m));
    }
    double count = 0.0;
    for (double v : row_mask) {
        if (v != 0.0 && v != 1.0)
            throw ContractError("masked_mean_axis0: mask entries must be 0 or 1");
        count += v;
    }
    if (count == 0.0) throw ContractError("masked_mean_axis0: mask selects no rows");
    Node out;
    out.op = Op::kMaskedMeanAxis0;
    out.a = a.id_;
    out.shape = {1, n};
    out.aux.assign(row_mask.begin(), row_mask.end());
    out.c0 = count;
    out.value.assign(n, 0.0);
    const double* src = na.data();
    for (size_t i = 0; i < m; ++i) {
        if (out.aux[i] == 0.0) continue;
        for (size_t j = 0; j < n; ++j) out.value[j] += src[i * n + j];
    }
    for (size_t j = 0; j < n; ++j) out.value[j] /= count;
    out.requires_grad = na.requires_grad;
    return Tensor(this, push(std::move(out)));
}

Tensor Tape::gather_rows(Tensor a, std::span<const uint32_t> row_indices) {
    require_same_tape(this, {&a});
    const Node& na = node(a.id_);
    const size_t m = na.rows(), n = na.cols();
    for (uint32_t r : row_indices) {
        if (r >= m) {
            throw DimensionError("gather_rows: index " + std::to_string(r) + " out of range for " +
                                 std::to_string(m) + " rows");
        }
    }
    Node out;
    out.op = Op::kGatherRows;
    out.a = a.id_;
    out.shape = {row_indices.size(), n};
    out.idx.assign(row_indices.begin(), row_indices.end());
    out.value.resize(row_indices.size() * n);
    const double* src = na.data();
    for (size_t i = 0; i < row_indices.size(); ++i) {
        std::copy(src + row_indices[i] * n, src + (row_indices[i] + 1) * n,
                  out.value.begin() + i * n);
    }
    out.requires_grad = na.requires_grad;
    return Tensor(this, push(std::move(out)));
}

Tensor Tape::segment_sum_rows(Tensor a, std::span<const uint32_t> segments,
                              size_t num_segments) {
    require_same_tape(this, {&a});
    const Node& na = node(a.id_);
    const size_t m = na.rows(), n = na.cols();
    if (segments.size() != m) {
        throw DimensionError("segment_sum_rows: segment list length " +
                             std::to_string(segments.size()) + " != rows " + std::to_string(m));
    }
    for (uint32_t s : segments) {
        if (s >= num_segments) {
            throw DimensionError("segment_sum_rows: segment id " + std::to_string(s) +
                                 " out of range for " + std::to_string(num_segments) + " segments");
        }
    }
    Node out;
    out.op = Op::kSegmentSum;
    out.a = a.id_;
    out.shape = {num_segments, n};
    out.idx.assign(segments.begin(), segments.end());
    out.value.assign(num_segments * n, 0.0);
    const double* src = na.data();
    for (size_t e = 0; e < m; ++e) {
        double* dst = out.value.data() + segments[e] * n;
        const double* row = src + e * n;
        for (size_t j = 0; j < n; ++j) dst[j] += row[j];
    }
    out.requires_grad = na.requires_grad;
    return Tensor(this, push(std::move(out)));
}

Tensor Tape::concat_rows(std::span<const Tensor> parts) {
    if (parts.empty()) throw ContractError("concat_rows: no parts");
    const size_t n = node(parts[0].id_).cols();
    size_t total_rows = 0;
    bool rg = false;
    for (const Tensor& t : parts) {
        require_same_tape(this, {&t});
        const Node& nt = node(t.id_);
        if (nt.cols() != n) {
            throw DimensionError("concat_rows: column mismatch " + std::to_string(nt.cols()) +
                                 " vs " + std::to_string(n));
        }
        total_rows += nt.rows();
        rg = rg || nt.requires_grad;
    }
    Node out;
    out.op = Op::kConcatRows;
    out.shape = {total_rows, n};
    out.value.resize(total_rows * n);
    size_t row = 0;
    for (const Tensor& t : parts) {
        const Node& nt = node(t.id_);
        out.idx.push_back(t.id_);
        std::copy(nt.data(), nt.data() + nt.numel(), out.value.begin() + row * n);
        row += nt.rows();
    }
    out.requires_grad = rg;
    return Tensor(this, push(std::move(out)));
}

Tensor Tape::concat_cols(std::span<const Tensor> parts) {
    if (parts.empty()) throw ContractError("concat_cols: no parts");
    const size_t m = node(parts[0].id_).rows();
    size_t total_cols = 0;
    bool rg = false;
    for (const Tensor& t : parts) {
        require_same_tape(this, {&t});
        const Node& nt = node(t.id_);
        if (nt.rows() != m) {
            throw DimensionError("concat_cols: row mismatch " + std::to_string(nt.rows()) +
                                 " vs " + std::to_string(m));
        }
        total_cols += nt.cols();
        rg = rg || nt.requires_grad;
    }
    Node out;
    out.op = Op::kConcatCols;
    out.shape = {m, total_cols};
    out.value.resize(m * total_cols);
    size_t col = 0;
    for (const Tensor& t : parts) {
        const Node& nt = node(t.id_);
        out.idx.push_back(t.id_);
        const size_t nc = nt.cols();
        const double* src = nt.data();
        for (size_t i = 0; i < m; ++i) {
            std::copy(src + i * nc, src + (i + 1) * nc,
                      out.value.begin() + i * total_cols + col);
        }
        col += nc;
    }
    out.requires_grad = rg;
    return Tensor(this, push(std::move(out)));
}

Tensor Tape::slice_rows(Tensor a, size_t start, size_t count) {
    require_same_tape(this, {&a});
    const Node& na = node(a.id_);
    const size_t m = na.rows(), n = na.cols();
    if (count == 0 || start + count > m) {
        throw DimensionError("slice_rows: range [" + std::to_string(start) + ", " +
                             std::to_string(start + count) + ") out of " + std::to_string(m) +
                             " rows");
    }
    Node out;
    out.op = Op::kSliceRows;
    out.a = a.id_;
    out.i0 = static_cast<uint32_t>(start);
    out.shape = {count, n};
    out.value.assign(na.data() + start * n, na.data() + (start + count) * n);
    out.requires_grad = na.requires_grad;
    return Tensor(this, push(std::move(out)));
}

Tensor Tape::slice_cols(Tensor a, size_t start, size_t count) {
    require_same_tape(this, {&a});
    const Node& na = node(a.id_);
    const size_t m = na.rows(), n = na.cols();
    if (count == 0 || start + count > n) {
        throw DimensionError("slice_cols: range [" + std::to_string(start) + ", " +
                             std::to_string(start + count) + ") out of " + std::to_string(n) +
                             " columns");
    }
    Node out;
    out.op = Op::kSliceCols;
    out.a = a.id_;
    out.i0 = static_cast<uint32_t>(start);
    out.shape = {m, count};
    out.value.resize(m * count);
    const double* src = na.data();
    for (size_t i = 0; i < m; ++i) {
        std::copy(src + i * n + start, src + i * n + start + count, out.value.begin() + i * count);
    }
    out.requires_grad = na.requires_grad;
    return Tensor(this, push(std::move(out)));
}

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

namespace {
void ensure_grad(Tape::Node& n) {
    if (n.grad.empty()) n.grad.assign(n.numel(), 0.0);
}
} // namespace

void Tape::backward(Tensor loss) {
    if (!loss.valid()) throw ContractError("backward: invalid loss tensor");
    auto& nodes = impl_->nodes;
    Node& ln = nodes[loss.id_];
    if (ln.numel() != 1) {
        throw ContractError("backward: loss must be scalar, got shape " + shape_str(ln.shape));
    }

    for (auto& n : nodes) n.grad.clear();
    ensure_grad(ln);
    ln.grad[0] = 1.0;

    for (uint32_t id = loss.id_ + 1; id-- > 0;) {
        Node& n = nodes[id];
        if (n.grad.empty() || !n.requires_grad) continue;
        const double* g = n.grad.data();
        const size_t m = n.rows(), cn = n.cols();

        auto input = [&](uint32_t i) -> Node& { return nodes[i]; };
        auto wants = [&](uint32_t i) { return nodes[i].requires_grad; };

        switch (n.op) {
        case Op::kLeaf:
            break;
        case Op::kMatmul: {
            Node& na = input(n.a);
            Node& nb = input(n.b);
            const size_t M = na.rows(), K = na.cols(), N = nb.cols();
            if (wants(n.a)) {
                ensure_grad(na);
                mm_nt_acc(g, M, N, nb.data(), K, na.grad.data()); // dA += G * B^T
            }
            if (wants(n.b)) {
                ensure_grad(nb);
                mm_tn_acc(na.data(), M, K, g, N, nb.grad.data()); // dB += A^T * G
            }
            break;
        }
        case Op::kTranspose: {
            Node& na = input(n.a);
            if (wants(n.a)) {
                ensure_grad(na);
                const size_t M = na.rows(), N = na.cols();
                for (size_t i = 0; i < M; ++i)
                    for (size_t j = 0; j < N; ++j) na.grad[i * N + j] += g[j * M + i];
            }
            break;
        }
        case Op::kAdd:
        case Op::kSub: {
            Node& na = input(n.a);
            Node& nb = input(n.b);
            const double sgn = n.op == Op::kSub ? -1.0 : 1.0;
            if (wants(n.a)) {
                ensure_grad(na);
                for (size_t i = 0; i < n.numel(); ++i) na.grad[i] += g[i];
            }
            if (wants(n.b)) {
                ensure_grad(nb);
                if (n.i0 == kSameShape) {
                    for (size_t i = 0; i < n.numel(); ++i) nb.grad[i] += sgn * g[i];
                } else if (n.i0 == kRowVector) {
                    for (size_t i = 0; i < m; ++i)
                        for (size_t j = 0; j < cn; ++j) nb.grad[j] += sgn * g[i * cn + j];
                } else {
                    for (size_t i = 0; i < n.numel(); ++i) nb.grad[0] += sgn * g[i];
                }
            }
            break;
        }
        case Op::kMul: {
            Node& na = input(n.a);
            Node& nb = input(n.b);
            const double* pa = na.data();
            const double* pb = nb.data();
            if (wants(n.a)) {
                ensure_grad(na);
                for (size_t i = 0; i < m; ++i)
                    for (size_t j = 0; j < cn; ++j) {
                        double bv = n.i0 == kSameShape ? pb[i * cn + j]
                                                       : (n.i0 == kRowVector ? pb[j] : pb[0]);
                        na.grad[i * cn + j] += g[i * cn + j] * bv;
                    }
            }
            if (wants(n.b)) {
                ensure_grad(nb);
                for (size_t i = 0; i < m; ++i)
                    for (size_t j = 0; j < cn; ++j) {
                        double contrib = g[i * cn + j] * pa[i * cn + j];
                        if (n.i0 == kSameShape)
                            nb.grad[i * cn + j] += contrib;
                        else if (n.i0 == kRowVector)
                            nb.grad[j] += contrib;
                        else
                            nb.grad[0] += contrib;
                    }
            }
            break;
        }
        case Op::kDiv: {
            Node& na = input(n.a);
            Node& nb = input(n.b);
            const double* pa = na.data();
            const double* pb = nb.data();
            for (size_t i = 0; i < m; ++i)
                for (size_t j = 0; j < cn; ++j) {
                    const size_t f = i * cn + j;
                    const double bv = n.i0 == kSameShape ? pb[f]
                                                         : (n.i0 == kRowVector ? pb[j] : pb[0]);
                    if (wants(n.a)) {
                        ensure_grad(na);
                        na.grad[f] += g[f] / bv;
                    }
                    if (wants(n.b)) {
                        ensure_grad(nb);
                        const double contrib = -g[f] * pa[f] / (bv * bv);
                        if (n.i0 == kSameShape)
                            nb.grad[f] += contrib;
                        else if (n.i0 == kRowVector)
                            nb.grad[j] += contrib;
                        else
                            nb.grad[0] += contrib;
                    }
                }
            break;
        }
        case Op::kScale: {
            Node& na = input(n.a);
            if (wants(n.a)) {
                ensure_grad(na);
                for (size_t i = 0; i < n.numel(); ++i) na.grad[i] += n.c0 * g[i];
            }
            break;
        }
        case Op::kAddConst: {
            Node& na = input(n.a);
            if (wants(n.a)) {
                ensure_grad(na);
                for (size_t i = 0; i < n.numel(); ++i) na.grad[i] += g[i];
            }
            break;
        }
        case Op::kExp: {
            Node& na = input(n.a);
            if (wants(n.a)) {
                ensure_grad(na);
                for (size_t i = 0; i < n.numel(); ++i) na.grad[i] += g[i] * n.value[i];
            }
            break;
        }
        case Op::kLog: {
            Node& na = input(n.a);
            if (wants(n.a)) {
                ensure_grad(na);
                const double* pa = na.data();
                for (size_t i = 0; i < n.numel(); ++i) na.grad[i] += g[i] / pa[i];
            }
            break;
        }
        case Op::kSigmoid: {
            Node& na = input(n.a);
            if (wants(n.a)) {
                ensure_grad(na);
                for (size_t i = 0; i < n.numel(); ++i) {
                    const double s = n.value[i];
                    na.grad[i] += g[i] * s * (1.0 - s);
                }
            }
            break;
        }
        case Op::kSoftplus: {
            Node& na = input(n.a);
            if (wants(n.a)) {
                ensure_grad(na);
                const double* pa = na.data();
                for (size_t i = 0; i < n.numel(); ++i)
                    na.grad[i] += g[i] * stable_sigmoid(pa[i]);
            }
            break;
        }
        case Op::kRelu: {
            Node& na = input(n.a);
            if (wants(n.a)) {
                ensure_grad(na);
                const double* pa = na.data();
                for (size_t i = 0; i < n.numel(); ++i)
                    if (pa[i] > 0.0) na.grad[i] += g[i];
            }
            break;
        }
        case Op::kDropout: {
            Node& na = input(n.a);
            if (wants(n.a)) {
                ensure_grad(na);
                if (n.i0 == 0) {
                    for (size_t i = 0; i < n.numel(); ++i) na.grad[i] += g[i];
                } else {
                    for (size_t i = 0; i < n.numel(); ++i) na.grad[i] += g[i] * n.aux[i];
                }
            }
            break;
        }
        case Op::kSoftmax: {
            Node& na = input(n.a);
            if (wants(n.a)) {
                ensure_grad(na);
                for (size_t i = 0; i < m; ++i) {
                    const double* yr = n.value.data() + i * cn;
                    const double* gr = g + i * cn;
                    double dot = 0.0;
                    for (size_t j = 0; j < cn; ++j) dot += yr[j] * gr[j];
                    for (size_t j = 0; j < cn; ++j)
                        na.grad[i * cn + j] += yr[j] * (gr[j] - dot);
                }
            }
            break;
        }
        case Op::kLayerNorm: {
            Node& nx = input(n.a);
            Node& ng = input(n.b);
            Node& nb2 = input(n.c);
            const size_t d = cn;
            const double* px = nx.data();
            const double* pg = ng.data();
            const bool wx = wants(n.a), wg = wants(n.b), wb = wants(n.c);
            if (wx) ensure_grad(nx);
            if (wg) ensure_grad(ng);
            if (wb) ensure_grad(nb2);
            for (size_t i = 0; i < m; ++i) {
                const double mu = n.aux[2 * i];
                const double inv = n.aux[2 * i + 1];
                const double* xr = px + i * d;
                const double* gr = g + i * d;
                if (wg || wb) {
                    for (size_t j = 0; j < d; ++j) {
                        const double xhat = (xr[j] - mu) * inv;
                        if (wg) ng.grad[j] += gr[j] * xhat;
                        if (wb) nb2.grad[j] += gr[j];
                    }
                }
                if (wx) {
                    double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                    for (size_t j = 0; j < d; ++j) {
                        const double dxhat = gr[j] * pg[j];
                        const double xhat = (xr[j] - mu) * inv;
                        sum_dxhat += dxhat;
                        sum_dxhat_xhat += dxhat * xhat;
                    }
                    const double dn = static_cast<double>(d);
                    for (size_t j = 0; j < d; ++j) {
                        const double dxhat = gr[j] * pg[j];
                        const double xhat = (xr[j] - mu) * inv;
                        nx.grad[i * d + j] +=
                            inv * (dxhat - sum_dxhat / dn - xhat * sum_dxhat_xhat / dn);
                    }
                }
            }
            break;
        }
        case Op::kSum: {
            Node& na = input(n.a);
            if (wants(n.a)) {
                ensure_grad(na);
                for (size_t i = 0; i < na.numel(); ++i) na.grad[i] += g[0];
            }
            break;
        }
        case Op::kMean: {
            Node& na = input(n.a);
            if (wants(n.a)) {
                ensure_grad(na);
                const double w = g[0] / n.c0;
                for (size_t i = 0; i < na.numel(); ++i) na.grad[i] += w;
            }
            break;
        }
        case Op::kMaskedMean: {
            Node& na = input(n.a);
            if (wants(n.a)) {
                ensure_grad(na);
                const double w = g[0] / n.c0;
                for (size_t i = 0; i < na.numel(); ++i) na.grad[i] += w * n.aux[i];
            }
            break;
        }
        case Op::kMeanAxis0: {
            Node& na = input(n.a);
            if (wants(n.a)) {
                ensure_grad(na);
                const size_t rows_in = na.rows();
                for (size_t i = 0; i < rows_in; ++i)
                    for (size_t j = 0; j < cn; ++j) na.grad[i * cn + j] += g[j] / n.c0;
            }
            break;
        }
        case Op::kMaskedMeanAxis0: {
            Node& na = input(n.a);
            if (wants(n.a)) {
                ensure_grad(na);
                const size_t rows_in = na.rows();
                for (size_t i = 0; i < rows_in; ++i) {
                    if (n.aux[i] == 0.0) continue;
                    for (size_t j = 0; j < cn; ++j) na.grad[i * cn + j] += g[j] / n.c0;
                }
            }
            break;
        }
        case Op::kGatherRows: {
            Node& na = input(n.a);
            if (wants(n.a)) {
                ensure_grad(na);
                for (size_t i = 0; i < n.idx.size(); ++i) {
                    double* dst = na.grad.data() + n.idx[i] * cn;
                    const double* src = g + i * cn;
                    for (size_t j = 0; j < cn; ++j) dst[j] += src[j];
                }
            }
            break;
        }
        case Op::kSegmentSum: {
            Node& na = input(n.a);
            if (wants(n.a)) {
                ensure_grad(na);
                for (size_t e = 0; e < n.idx.size(); ++e) {
                    const double* src = g + n.idx[e] * cn;
                    double* dst = na.grad.data() + e * cn;
                    for (size_t j = 0; j < cn; ++j) dst[j] += src[j];
                }
            }
            break;
        }
        case Op::kConcatRows: {
            size_t row = 0;
            for (uint32_t part : n.idx) {
                Node& np = input(part);
                const size_t pr = np.rows();
                if (wants(part)) {
                    ensure_grad(np);
                    for (size_t i = 0; i < pr * cn; ++i) np.grad[i] += g[row * cn + i];
                }
                row += pr;
            }
            break;
        }
        case Op::kConcatCols: {
            size_t col = 0;
            for (uint32_t part : n.idx) {
                Node& np = input(part);
                const size_t pc = np.cols();
                if (wants(part)) {
                    ensure_grad(np);
                    for (size_t i = 0; i < m; ++i)
                        for (size_t j = 0; j < pc; ++j)
                            np.grad[i * pc + j] += g[i * cn + col + j];
                }
                col += pc;
            }
            break;
        }
        case Op::kSliceRows: {
            Node& na = input(n.a);
            if (wants(n.a)) {
                ensure_grad(na);
                const size_t start = n.i0;
                for (size_t i = 0; i < m * cn; ++i) na.grad[start * cn + i] += g[i];
            }
            break;
        }
        case Op::kSliceCols: {
            Node& na = input(n.a);
            if (wants(n.a)) {
                ensure_grad(na);
                const size_t start = n.i0;
                const size_t full_cols = na.cols();
                for (size_t i = 0; i < m; ++i)
                    for (size_t j = 0; j < cn; ++j)
                        na.grad[i * full_cols + start + j] += g[i * cn + j];
            }
            break;
        }
        }
    }

    // Fold scratch gradients into the persistent accumulators.
    for (auto& n : nodes) {
        if (n.op != Op::kLeaf || n.grad.empty() || !n.requires_grad) continue;
        if (n.param) {
            for (size_t i = 0; i < n.grad.size(); ++i) n.param->grad[i] += n.grad[i];
        } else {
            for (size_t i = 0; i < n.grad.size(); ++i) n.accum[i] += n.grad[i];
        }
    }
}

} // namespace solargeco

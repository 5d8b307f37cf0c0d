#include "umo/tape.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace umo {

namespace {

constexpr float kLogitEps = 1e-7f;
constexpr float kLogFloor = 1e-30f;
constexpr float kSqrtGradFloor = 1e-6f;

[[noreturn]] void shape_error(const std::string& what, const std::vector<int>& a, const std::vector<int>& b) {
    throw std::invalid_argument(what + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

// add/sub/mul/div accept equal shapes or a scalar on either side.
void check_elementwise(const char* what, const Tensor& a, const Tensor& b) {
    if (a.same_shape(b) || a.is_scalar() || b.is_scalar()) return;
    shape_error(what, a.shape, b.shape);
}

int last_dim(const Tensor& t) { return t.shape.empty() ? 1 : t.shape.back(); }

float stable_softplus(float x) {
    // ln(1 + e^x) without overflow.
    const float ax = std::fabs(x);
    return std::max(x, 0.0f) + std::log1p(std::exp(-ax));
}

float sigmoidf(float x) {
    if (x >= 0.0f) {
        const float e = std::exp(-x);
        return 1.0f / (1.0f + e);
    }
    const float e = std::exp(x);
    return e / (1.0f + e);
}

}  // namespace

const char* op_name(Op op) {
    switch (op) {
        case Op::Leaf: return "leaf";
        case Op::Param: return "param";
        case Op::Add: return "add";
        case Op::Sub: return "sub";
        case Op::Mul: return "mul";
        case Op::Div: return "div";
        case Op::Matmul: return "matmul";
        case Op::Tanh: return "tanh";
        case Op::Sigmoid: return "sigmoid";
        case Op::Softmax: return "softmax";
        case Op::LogSoftmax: return "log_softmax";
        case Op::Softplus: return "softplus";
        case Op::Relu: return "relu";
        case Op::Mean: return "mean";
        case Op::Sum: return "sum";
        case Op::Abs: return "abs";
        case Op::Concat: return "concat";
        case Op::Slice: return "slice";
        case Op::Scale: return "scale";
        case Op::Reshape: return "reshape";
        case Op::Log: return "log";
        case Op::Sqrt: return "sqrt";
        case Op::Logit: return "logit";
    }
    return "?";
}

ValueId Tape::push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<ValueId>(nodes_.size() - 1);
}

ValueId Tape::leaf(Tensor value) {
    Node n;
    n.op = Op::Leaf;
    n.value = std::move(value);
    return push(std::move(n));
}

ValueId Tape::param(Tensor value, int param_id) {
    for (const auto& [pid, _] : params_)
        if (pid == param_id) throw std::invalid_argument("tape: duplicate param id " + std::to_string(param_id));
    Node n;
    n.op = Op::Param;
    n.value = std::move(value);
    n.param_id = param_id;
    ValueId id = push(std::move(n));
    params_.emplace_back(param_id, id);
    return id;
}

float Tape::scalar_val(ValueId id) const {
    const Tensor& t = val(id);
    if (!t.is_scalar()) throw std::invalid_argument("tape: value is not scalar, shape " + shape_str(t.shape));
    return t.data[0];
}

ValueId Tape::add(ValueId a, ValueId b) {
    const Tensor &ta = val(a), &tb = val(b);
    check_elementwise("add", ta, tb);
    const Tensor& big = ta.is_scalar() && !tb.is_scalar() ? tb : ta;
    Tensor out = Tensor::zeros(big.shape);
    const int n = out.numel();
    for (int i = 0; i < n; ++i) out.data[i] = ta.data[ta.is_scalar() ? 0 : i] + tb.data[tb.is_scalar() ? 0 : i];
    Node node;
    node.op = Op::Add;
    node.inputs = {a, b};
    node.value = std::move(out);
    return push(std::move(node));
}

ValueId Tape::sub(ValueId a, ValueId b) {
    const Tensor &ta = val(a), &tb = val(b);
    check_elementwise("sub", ta, tb);
    const Tensor& big = ta.is_scalar() && !tb.is_scalar() ? tb : ta;
    Tensor out = Tensor::zeros(big.shape);
    const int n = out.numel();
    for (int i = 0; i < n; ++i) out.data[i] = ta.data[ta.is_scalar() ? 0 : i] - tb.data[tb.is_scalar() ? 0 : i];
    Node node;
    node.op = Op::Sub;
    node.inputs = {a, b};
    node.value = std::move(out);
    return push(std::move(node));
}

ValueId Tape::mul(ValueId a, ValueId b) {
    const Tensor &ta = val(a), &tb = val(b);
    check_elementwise("mul", ta, tb);
    const Tensor& big = ta.is_scalar() && !tb.is_scalar() ? tb : ta;
    Tensor out = Tensor::zeros(big.shape);
    const int n = out.numel();
    for (int i = 0; i < n; ++i) out.data[i] = ta.data[ta.is_scalar() ? 0 : i] * tb.data[tb.is_scalar() ? 0 : i];
    Node node;
    node.op = Op::Mul;
    node.inputs = {a, b};
    node.value = std::move(out);
    return push(std::move(node));
}

ValueId Tape::div(ValueId a, ValueId b) {
    const Tensor &ta = val(a), &tb = val(b);
    check_elementwise("div", ta, tb);
    const Tensor& big = ta.is_scalar() && !tb.is_scalar() ? tb : ta;
    Tensor out = Tensor::zeros(big.shape);
    const int n = out.numel();
    for (int i = 0; i < n; ++i) out.data[i] = ta.data[ta.is_scalar() ? 0 : i] / tb.data[tb.is_scalar() ? 0 : i];
    Node node;
    node.op = Op::Div;
    node.inputs = {a, b};
    node.value = std::move(out);
    return push(std::move(node));
}

ValueId Tape::matmul(ValueId a, ValueId b) {
    const Tensor &ta = val(a), &tb = val(b);
    if (ta.rank() != 2 || tb.rank() != 2 || ta.shape[1] != tb.shape[0]) shape_error("matmul", ta.shape, tb.shape);
    const int m = ta.shape[0], k = ta.shape[1], n = tb.shape[1];
    Tensor out = Tensor::zeros({m, n});
    // Row-wise double accumulation keeps long reductions out of f32 noise.
    std::vector<double> acc(static_cast<size_t>(n));
    for (int i = 0; i < m; ++i) {
        std::fill(acc.begin(), acc.end(), 0.0);
        const float* arow = &ta.data[static_cast<size_t>(i) * k];
        for (int kk = 0; kk < k; ++kk) {
            const double av = arow[kk];
            if (av == 0.0) continue;
            const float* brow = &tb.data[static_cast<size_t>(kk) * n];
            for (int j = 0; j < n; ++j) acc[static_cast<size_t>(j)] += av * brow[j];
        }
        float* orow = &out.data[static_cast<size_t>(i) * n];
        for (int j = 0; j < n; ++j) orow[j] = static_cast<float>(acc[static_cast<size_t>(j)]);
    }
    Node node;
    node.op = Op::Matmul;
    node.inputs = {a, b};
    node.value = std::move(out);
    return push(std::move(node));
}

ValueId Tape::tanh_(ValueId a) {
    Tensor out = val(a);
    for (float& v : out.data) v = std::tanh(v);
    Node node;
    node.op = Op::Tanh;
    node.inputs = {a};
    node.value = std::move(out);
    return push(std::move(node));
}

ValueId Tape::sigmoid(ValueId a) {
    Tensor out = val(a);
    for (float& v : out.data) v = sigmoidf(v);
    Node node;
    node.op = Op::Sigmoid;
    node.inputs = {a};
    node.value = std::move(out);
    return push(std::move(node));
}

ValueId Tape::softmax(ValueId a) {
    Tensor out = val(a);
    const int cols = last_dim(out);
    const int rows = out.numel() / cols;
    for (int r = 0; r < rows; ++r) {
        float* row = &out.data[static_cast<size_t>(r) * cols];
        float mx = row[0];
        for (int c = 1; c < cols; ++c) mx = std::max(mx, row[c]);
        float denom = 0.0f;
        for (int c = 0; c < cols; ++c) {
            row[c] = std::exp(row[c] - mx);
            denom += row[c];
        }
        for (int c = 0; c < cols; ++c) row[c] /= denom;
    }
    Node node;
    node.op = Op::Softmax;
    node.inputs = {a};
    node.value = std::move(out);
    return push(std::move(node));
}

ValueId Tape::log_softmax(ValueId a) {
    Tensor out = val(a);
    const int cols = last_dim(out);
    const int rows = out.numel() / cols;
    for (int r = 0; r < rows; ++r) {
        float* row = &out.data[static_cast<size_t>(r) * cols];
        float mx = row[0];
        for (int c = 1; c < cols; ++c) mx = std::max(mx, row[c]);
        float denom = 0.0f;
        for (int c = 0; c < cols; ++c) denom += std::exp(row[c] - mx);
        const float lse = mx + std::log(denom);
        for (int c = 0; c < cols; ++c) row[c] -= lse;
    }
    Node node;
    node.op = Op::LogSoftmax;
    node.inputs = {a};
    node.value = std::move(out);
    return push(std::move(node));
}

ValueId Tape::softplus(ValueId a) {
    Tensor out = val(a);
    for (float& v : out.data) v = stable_softplus(v);
    Node node;
    node.op = Op::Softplus;
    node.inputs = {a};
    node.value = std::move(out);
    return push(std::move(node));
}

ValueId Tape::relu(ValueId a) {
    Tensor out = val(a);
    for (float& v : out.data) v = std::max(v, 0.0f);
    Node node;
    node.op = Op::Relu;
    node.inputs = {a};
    node.value = std::move(out);
    return push(std::move(node));
}

ValueId Tape::mean(ValueId a) {
    const Tensor& ta = val(a);
    double acc = 0.0;
    for (float v : ta.data) acc += v;
    Node node;
    node.op = Op::Mean;
    node.inputs = {a};
    node.value = Tensor::scalar(static_cast<float>(acc / ta.numel()));
    return push(std::move(node));
}

ValueId Tape::sum(ValueId a) {
    const Tensor& ta = val(a);
    double acc = 0.0;
    for (float v : ta.data) acc += v;
    Node node;
    node.op = Op::Sum;
    node.inputs = {a};
    node.value = Tensor::scalar(static_cast<float>(acc));
    return push(std::move(node));
}

ValueId Tape::abs_(ValueId a) {
    Tensor out = val(a);
    for (float& v : out.data) v = std::fabs(v);
    Node node;
    node.op = Op::Abs;
    node.inputs = {a};
    node.value = std::move(out);
    return push(std::move(node));
}

ValueId Tape::concat(const std::vector<ValueId>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat: no operands");
    std::vector<float> data;
    for (ValueId p : parts) {
        const Tensor& t = val(p);
        data.insert(data.end(), t.data.begin(), t.data.end());
    }
    Node node;
    node.op = Op::Concat;
    node.inputs = parts;
    node.value = Tensor::row(data);
    return push(std::move(node));
}

ValueId Tape::slice(ValueId a, int begin, int len) {
    const Tensor& ta = val(a);
    if (begin < 0 || len <= 0 || begin + len > ta.numel())
        throw std::invalid_argument("slice: range [" + std::to_string(begin) + "," + std::to_string(begin + len) +
                                    ") out of bounds for " + shape_str(ta.shape));
    Node node;
    node.op = Op::Slice;
    node.inputs = {a};
    node.begin = begin;
    node.len = len;
    node.value = Tensor::row(std::vector<float>(ta.data.begin() + begin, ta.data.begin() + begin + len));
    return push(std::move(node));
}

ValueId Tape::scale(ValueId a, float factor) {
    Tensor out = val(a);
    for (float& v : out.data) v *= factor;
    Node node;
    node.op = Op::Scale;
    node.inputs = {a};
    node.scalar = factor;
    node.value = std::move(out);
    return push(std::move(node));
}

ValueId Tape::reshape(ValueId a, std::vector<int> shape) {
    const Tensor& ta = val(a);
    Tensor out(std::move(shape), ta.data);
    Node node;
    node.op = Op::Reshape;
    node.inputs = {a};
    node.value = std::move(out);
    return push(std::move(node));
}

ValueId Tape::log_(ValueId a) {
    Tensor out = val(a);
    for (float& v : out.data) v = std::log(std::max(v, kLogFloor));
    Node node;
    node.op = Op::Log;
    node.inputs = {a};
    node.value = std::move(out);
    return push(std::move(node));
}

ValueId Tape::sqrt_(ValueId a) {
    Tensor out = val(a);
    for (float& v : out.data) v = std::sqrt(std::max(v, 0.0f));
    Node node;
    node.op = Op::Sqrt;
    node.inputs = {a};
    node.value = std::move(out);
    return push(std::move(node));
}

ValueId Tape::logit(ValueId a) {
    Tensor out = val(a);
    for (float& v : out.data) {
        const float x = std::clamp(v, kLogitEps, 1.0f - kLogitEps);
        v = std::log(x) - std::log1p(-x);
    }
    Node node;
    node.op = Op::Logit;
    node.inputs = {a};
    node.value = std::move(out);
    return push(std::move(node));
}

ValueId Tape::apply(Op op, const std::vector<ValueId>& operands, float scalar, int begin, int len) {
    auto unary = [&]() {
        if (operands.size() != 1) throw std::invalid_argument(std::string(op_name(op)) + ": expected 1 operand");
        return operands[0];
    };
    auto binary = [&]() {
        if (operands.size() != 2) throw std::invalid_argument(std::string(op_name(op)) + ": expected 2 operands");
    };
    switch (op) {
        case Op::Add: binary(); return add(operands[0], operands[1]);
        case Op::Sub: binary(); return sub(operands[0], operands[1]);
        case Op::Mul: binary(); return mul(operands[0], operands[1]);
        case Op::Div: binary(); return div(operands[0], operands[1]);
        case Op::Matmul: binary(); return matmul(operands[0], operands[1]);
        case Op::Tanh: return tanh_(unary());
        case Op::Sigmoid: return sigmoid(unary());
        case Op::Softmax: return softmax(unary());
        case Op::LogSoftmax: return log_softmax(unary());
        case Op::Softplus: return softplus(unary());
        case Op::Relu: return relu(unary());
        case Op::Mean: return mean(unary());
        case Op::Sum: return sum(unary());
        case Op::Abs: return abs_(unary());
        case Op::Concat: return concat(operands);
        case Op::Slice: return slice(unary(), begin, len);
        case Op::Scale: return scale(unary(), scalar);
        case Op::Log: return log_(unary());
        case Op::Sqrt: return sqrt_(unary());
        case Op::Logit: return logit(unary());
        default: throw std::invalid_argument(std::string("apply: unsupported op ") + op_name(op));
    }
}

GradientMap Tape::backward(ValueId output) const {
    const Tensor& out = val(output);
    if (!out.is_scalar())
        throw std::invalid_argument("backward: output must be scalar, got shape " + shape_str(out.shape));

    std::vector<Tensor> adj(nodes_.size());
    std::vector<bool> live(nodes_.size(), false);
    auto touch = [&](ValueId id) {
        if (!live[static_cast<size_t>(id)]) {
            adj[static_cast<size_t>(id)] = Tensor::zeros(nodes_[static_cast<size_t>(id)].value.shape);
            live[static_cast<size_t>(id)] = true;
        }
        return &adj[static_cast<size_t>(id)];
    };
    touch(output)->data[0] = 1.0f;

    // Accumulate g into operand `target`, summing when the operand was a
    // broadcast scalar.
    auto accum = [&](ValueId target, const Tensor& g, bool scalar_side) {
        Tensor* t = touch(target);
        if (scalar_side) {
            double acc = 0.0;
            for (float v : g.data) acc += v;
            t->data[0] += static_cast<float>(acc);
        } else {
            for (int i = 0; i < t->numel(); ++i) t->data[i] += g.data[i];
        }
    };

    for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
        if (!live[static_cast<size_t>(id)]) continue;
        const Node& n = nodes_[static_cast<size_t>(id)];
        const Tensor& g = adj[static_cast<size_t>(id)];
        switch (n.op) {
            case Op::Leaf:
            case Op::Param:
                break;
            case Op::Add: {
                const bool sa = val(n.inputs[0]).is_scalar() && !g.is_scalar();
                const bool sb = val(n.inputs[1]).is_scalar() && !g.is_scalar();
                accum(n.inputs[0], g, sa);
                accum(n.inputs[1], g, sb);
                break;
            }
            case Op::Sub: {
                const bool sa = val(n.inputs[0]).is_scalar() && !g.is_scalar();
                const bool sb = val(n.inputs[1]).is_scalar() && !g.is_scalar();
                accum(n.inputs[0], g, sa);
                Tensor neg = g;
                for (float& v : neg.data) v = -v;
                accum(n.inputs[1], neg, sb);
                break;
            }
            case Op::Mul: {
                const Tensor &ta = val(n.inputs[0]), &tb = val(n.inputs[1]);
                Tensor ga = Tensor::zeros(g.shape), gb = Tensor::zeros(g.shape);
                for (int i = 0; i < g.numel(); ++i) {
                    ga.data[i] = g.data[i] * tb.data[tb.is_scalar() ? 0 : i];
                    gb.data[i] = g.data[i] * ta.data[ta.is_scalar() ? 0 : i];
                }
                accum(n.inputs[0], ga, ta.is_scalar() && !g.is_scalar());
                accum(n.inputs[1], gb, tb.is_scalar() && !g.is_scalar());
                break;
            }
            case Op::Div: {
                const Tensor &ta = val(n.inputs[0]), &tb = val(n.inputs[1]);
                Tensor ga = Tensor::zeros(g.shape), gb = Tensor::zeros(g.shape);
                for (int i = 0; i < g.numel(); ++i) {
                    const float bi = tb.data[tb.is_scalar() ? 0 : i];
                    const float yi = n.value.data[i];
                    ga.data[i] = g.data[i] / bi;
                    gb.data[i] = -g.data[i] * yi / bi;
                }
                accum(n.inputs[0], ga, ta.is_scalar() && !g.is_scalar());
                accum(n.inputs[1], gb, tb.is_scalar() && !g.is_scalar());
                break;
            }
            case Op::Matmul: {
                const Tensor &ta = val(n.inputs[0]), &tb = val(n.inputs[1]);
                const int m = ta.shape[0], k = ta.shape[1], nn = tb.shape[1];
                Tensor ga = Tensor::zeros(ta.shape);
                Tensor gb = Tensor::zeros(tb.shape);
                // dA = g * B^T
                for (int i = 0; i < m; ++i) {
                    const float* grow = &g.data[static_cast<size_t>(i) * nn];
                    float* garow = &ga.data[static_cast<size_t>(i) * k];
                    for (int kk = 0; kk < k; ++kk) {
                        const float* brow = &tb.data[static_cast<size_t>(kk) * nn];
                        double acc = 0.0;
                        for (int j = 0; j < nn; ++j) acc += static_cast<double>(grow[j]) * brow[j];
                        garow[kk] = static_cast<float>(acc);
                    }
                }
                // dB = A^T * g
                std::vector<double> acc(static_cast<size_t>(nn));
                for (int kk = 0; kk < k; ++kk) {
                    std::fill(acc.begin(), acc.end(), 0.0);
                    for (int i = 0; i < m; ++i) {
                        const double av = ta.data[static_cast<size_t>(i) * k + kk];
                        if (av == 0.0) continue;
                        const float* grow = &g.data[static_cast<size_t>(i) * nn];
                        for (int j = 0; j < nn; ++j) acc[static_cast<size_t>(j)] += av * grow[j];
                    }
                    float* gbrow = &gb.data[static_cast<size_t>(kk) * nn];
                    for (int j = 0; j < nn; ++j) gbrow[j] = static_cast<float>(acc[static_cast<size_t>(j)]);
                }
                accum(n.inputs[0], ga, false);
                accum(n.inputs[1], gb, false);
                break;
            }
            case Op::Tanh: {
                Tensor ga = Tensor::zeros(g.shape);
                for (int i = 0; i < g.numel(); ++i) {
                    const float y = n.value.data[i];
                    ga.data[i] = g.data[i] * (1.0f - y * y);
                }
                accum(n.inputs[0], ga, false);
                break;
            }
            case Op::Sigmoid: {
                Tensor ga = Tensor::zeros(g.shape);
                for (int i = 0; i < g.numel(); ++i) {
                    const float y = n.value.data[i];
                    ga.data[i] = g.data[i] * y * (1.0f - y);
                }
                accum(n.inputs[0], ga, false);
                break;
            }
            case Op::Softmax: {
                const int cols = last_dim(n.value);
                const int rows = n.value.numel() / cols;
                Tensor ga = Tensor::zeros(g.shape);
                for (int r = 0; r < rows; ++r) {
                    const float* y = &n.value.data[static_cast<size_t>(r) * cols];
                    const float* gr = &g.data[static_cast<size_t>(r) * cols];
                    float dot = 0.0f;
                    for (int c = 0; c < cols; ++c) dot += gr[c] * y[c];
                    float* gar = &ga.data[static_cast<size_t>(r) * cols];
                    for (int c = 0; c < cols; ++c) gar[c] = y[c] * (gr[c] - dot);
                }
                accum(n.inputs[0], ga, false);
                break;
            }
            case Op::LogSoftmax: {
                const int cols = last_dim(n.value);
                const int rows = n.value.numel() / cols;
                Tensor ga = Tensor::zeros(g.shape);
                for (int r = 0; r < rows; ++r) {
                    const float* y = &n.value.data[static_cast<size_t>(r) * cols];
                    const float* gr = &g.data[static_cast<size_t>(r) * cols];
                    float gsum = 0.0f;
                    for (int c = 0; c < cols; ++c) gsum += gr[c];
                    float* gar = &ga.data[static_cast<size_t>(r) * cols];
                    for (int c = 0; c < cols; ++c) gar[c] = gr[c] - std::exp(y[c]) * gsum;
                }
                accum(n.inputs[0], ga, false);
                break;
            }
            case Op::Softplus: {
                const Tensor& x = val(n.inputs[0]);
                Tensor ga = Tensor::zeros(g.shape);
                for (int i = 0; i < g.numel(); ++i) ga.data[i] = g.data[i] * sigmoidf(x.data[i]);
                accum(n.inputs[0], ga, false);
                break;
            }
            case Op::Relu: {
                const Tensor& x = val(n.inputs[0]);
                Tensor ga = Tensor::zeros(g.shape);
                for (int i = 0; i < g.numel(); ++i) ga.data[i] = x.data[i] > 0.0f ? g.data[i] : 0.0f;
                accum(n.inputs[0], ga, false);
                break;
            }
            case Op::Mean: {
                const Tensor& x = val(n.inputs[0]);
                Tensor ga = Tensor::full(x.shape, g.data[0] / static_cast<float>(x.numel()));
                accum(n.inputs[0], ga, false);
                break;
            }
            case Op::Sum: {
                const Tensor& x = val(n.inputs[0]);
                Tensor ga = Tensor::full(x.shape, g.data[0]);
                accum(n.inputs[0], ga, false);
                break;
            }
            case Op::Abs: {
                const Tensor& x = val(n.inputs[0]);
                Tensor ga = Tensor::zeros(g.shape);
                for (int i = 0; i < g.numel(); ++i) {
                    const float s = x.data[i] > 0.0f ? 1.0f : (x.data[i] < 0.0f ? -1.0f : 0.0f);
                    ga.data[i] = g.data[i] * s;
                }
                accum(n.inputs[0], ga, false);
                break;
            }
            case Op::Concat: {
                int off = 0;
                for (ValueId p : n.inputs) {
                    const int len = val(p).numel();
                    Tensor gp = Tensor::zeros(val(p).shape);
                    for (int i = 0; i < len; ++i) gp.data[i] = g.data[off + i];
                    accum(p, gp, false);
                    off += len;
                }
                break;
            }
            case Op::Slice: {
                const Tensor& x = val(n.inputs[0]);
                Tensor ga = Tensor::zeros(x.shape);
                for (int i = 0; i < n.len; ++i) ga.data[n.begin + i] = g.data[i];
                accum(n.inputs[0], ga, false);
                break;
            }
            case Op::Scale: {
                Tensor ga = g;
                for (float& v : ga.data) v *= n.scalar;
                accum(n.inputs[0], ga, false);
                break;
            }
            case Op::Reshape: {
                Tensor ga(val(n.inputs[0]).shape, g.data);
                accum(n.inputs[0], ga, false);
                break;
            }
            case Op::Log: {
                const Tensor& x = val(n.inputs[0]);
                Tensor ga = Tensor::zeros(g.shape);
                for (int i = 0; i < g.numel(); ++i) ga.data[i] = g.data[i] / std::max(x.data[i], kLogFloor);
                accum(n.inputs[0], ga, false);
                break;
            }
            case Op::Sqrt: {
                Tensor ga = Tensor::zeros(g.shape);
                for (int i = 0; i < g.numel(); ++i) {
                    const float y = std::max(n.value.data[i], kSqrtGradFloor);
                    ga.data[i] = g.data[i] / (2.0f * y);
                }
                accum(n.inputs[0], ga, false);
                break;
            }
            case Op::Logit: {
                const Tensor& x = val(n.inputs[0]);
                Tensor ga = Tensor::zeros(g.shape);
                for (int i = 0; i < g.numel(); ++i) {
                    const float xc = std::clamp(x.data[i], kLogitEps, 1.0f - kLogitEps);
                    ga.data[i] = g.data[i] / (xc * (1.0f - xc));
                }
                accum(n.inputs[0], ga, false);
                break;
            }
        }
    }

    GradientMap grads;
    for (const auto& [pid, node_id] : params_) {
        if (live[static_cast<size_t>(node_id)])
            grads.by_param.emplace(pid, adj[static_cast<size_t>(node_id)]);
        else
            grads.by_param.emplace(pid, Tensor::zeros(nodes_[static_cast<size_t>(node_id)].value.shape));
    }
    return grads;
}

std::vector<int> sgd_step(std::vector<ParamRef>& params, const GradientMap& grads, float lr) {
    if (!(lr > 0.0f)) throw std::invalid_argument("sgd_step: lr must be positive");
    std::vector<int> missing;
    for (auto& p : params) {
        auto it = grads.by_param.find(p.id);
        if (it == grads.by_param.end()) {
            missing.push_back(p.id);
            continue;
        }
        const Tensor& g = it->second;
        if (!g.same_shape(*p.value))
            throw std::invalid_argument("sgd_step: grad shape " + shape_str(g.shape) + " != param shape " +
                                        shape_str(p.value->shape));
        for (int i = 0; i < g.numel(); ++i) p.value->data[i] -= lr * g.data[i];
    }
    return missing;
}

}  // namespace umo

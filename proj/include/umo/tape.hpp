#pragma once

#include <map>
#include <string>
#include <vector>

#include "umo/tensor.hpp"

namespace umo {

using ValueId = int;

enum class Op {
    Leaf,
    Param,
    Add,
    Sub,
    Mul,      // elementwise
    Div,      // elementwise
    Matmul,   // [m,k] x [k,n]
    Tanh,
    Sigmoid,
    Softmax,     // along last axis
    LogSoftmax,  // along last axis
    Softplus,
    Relu,
    Mean,  // -> scalar
    Sum,   // -> scalar
    Abs,
    Concat,  // flattened 1-D concat
    Slice,   // contiguous flat slice -> 1-D
    Scale,   // multiply by compile-time constant
    Reshape,
    Log,
    Sqrt,
    Logit,  // ln(x/(1-x)) with clamp to (eps, 1-eps)
};

const char* op_name(Op op);

// Gradients keyed by parameter id. Params recorded on the tape but unreachable
// from the output get zero tensors.
struct GradientMap {
    std::map<int, Tensor> by_param;

    bool has(int param_id) const { return by_param.count(param_id) != 0; }
    const Tensor& at(int param_id) const { return by_param.at(param_id); }
};

// Define-by-run reverse-mode tape over float32 tensors. Nodes are appended in
// topological order; backward() walks them once in reverse. Single writer per
// tape; independent tapes are safe in parallel.
class Tape {
  public:
    struct Node {
        Op op;
        std::vector<ValueId> inputs;
        Tensor value;
        float scalar = 0.0f;  // Scale factor
        int begin = 0;        // Slice bounds
        int len = 0;
        int param_id = -1;
    };

    ValueId leaf(Tensor value);
    ValueId param(Tensor value, int param_id);

    ValueId add(ValueId a, ValueId b);
    ValueId sub(ValueId a, ValueId b);
    ValueId mul(ValueId a, ValueId b);
    ValueId div(ValueId a, ValueId b);
    ValueId matmul(ValueId a, ValueId b);
    ValueId tanh_(ValueId a);
    ValueId sigmoid(ValueId a);
    ValueId softmax(ValueId a);
    ValueId log_softmax(ValueId a);
    ValueId softplus(ValueId a);
    ValueId relu(ValueId a);
    ValueId mean(ValueId a);
    ValueId sum(ValueId a);
    ValueId abs_(ValueId a);
    ValueId concat(const std::vector<ValueId>& parts);
    ValueId slice(ValueId a, int begin, int len);
    ValueId scale(ValueId a, float factor);
    ValueId reshape(ValueId a, std::vector<int> shape);
    ValueId log_(ValueId a);
    ValueId sqrt_(ValueId a);
    ValueId logit(ValueId a);

    // Generic dispatcher, mainly for generated test graphs.
    ValueId apply(Op op, const std::vector<ValueId>& operands, float scalar = 0.0f, int begin = 0, int len = 0);

    const Tensor& val(ValueId id) const { return nodes_[static_cast<size_t>(id)].value; }
    float scalar_val(ValueId id) const;
    const Node& node(ValueId id) const { return nodes_[static_cast<size_t>(id)]; }
    int size() const { return static_cast<int>(nodes_.size()); }

    // Gradient of a scalar output w.r.t. every recorded parameter.
    GradientMap backward(ValueId output) const;

  private:
    ValueId push(Node n);
    std::vector<Node> nodes_;
    std::vector<std::pair<int, ValueId>> params_;  // (param_id, node)
};

struct ParamRef {
    int id;
    Tensor* value;
};

// p <- p - lr * g, elementwise. Params without a gradient entry are left
// unchanged; their ids are returned for the caller to report.
std::vector<int> sgd_step(std::vector<ParamRef>& params, const GradientMap& grads, float lr);

}  // namespace umo

#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "t2t/params.hpp"
#include "t2t/tensor.hpp"

namespace t2t {

class Tape;

// Handle to a node on a tape. Cheap to copy; valid for the tape's lifetime.
struct Value {
    Tape* tape = nullptr;
    int id = -1;

    bool valid() const { return tape != nullptr && id >= 0; }
    const Tensor& tensor() const;
    double item() const { return tensor().item(); }
};

// Reverse-mode tape over dense fp64 tensors. Forward ops execute eagerly and
// record a backward closure; backward() walks the nodes in reverse creation
// order (creation order is already topological) and accumulates parameter
// gradients additively into the bound ParameterStore. A tape is rebuilt per
// minibatch and is strictly single-threaded; the kernels underneath may fan
// out internally.
class Tape {
public:
    explicit Tape(ParameterStore* store = nullptr, bool grad_enabled = true)
        : store_(store), grad_enabled_(grad_enabled) {}

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Value constant(Tensor t);
    Value scalar(double v) { return constant(Tensor::scalar(v)); }

    // Leaf node bound to a store entry; backward adds into the entry's grad.
    Value param(const std::string& name);

    // loss must be scalar; gradients of every parameter reachable from it are
    // accumulated (unreachable entries are left untouched). May be called
    // more than once; each call adds another full contribution.
    void backward(Value loss);

    bool grad_enabled() const { return grad_enabled_; }
    ParameterStore* store() { return store_; }
    std::size_t node_count() const { return nodes_.size(); }

    // --- op-implementation interface ---
    using BackFn = std::function<void(Tape&, int self)>;
    int add_node(const char* op, Tensor out, BackFn back);
    const Tensor& out(int id) const { return nodes_[static_cast<std::size_t>(id)].out; }
    // Gradient buffer of a node during backward (allocated zero on demand).
    Tensor& grad_buf(int id);
    bool has_grad(int id) const;
    const Tensor& grad_of(int id) const;

private:
    struct Node {
        Tensor out;
        BackFn back;  // empty for constants and on no-grad tapes
    };

    ParameterStore* store_;
    bool grad_enabled_;
    std::vector<Node> nodes_;
    std::vector<Tensor> grads_;  // live only inside backward()
};

// ---------------------------------------------------------------------------
// Recorded operations. Shapes are validated; every forward result is checked
// finite (NaN/Inf raises t2t::Error naming the op).
// ---------------------------------------------------------------------------

Value matmul(Value a, Value b);     // [m x k] * [k x n]
Value matmul_nt(Value a, Value b);  // [m x k] * [n x k]^T -> [m x n]
Value matvec(Value m, Value x);     // [r x c] * [c] -> [r]
Value add(Value a, Value b);        // same shape
Value sub(Value a, Value b);
Value mul(Value a, Value b);        // elementwise
Value tanh(Value x);
Value sigmoid(Value x);
Value log(Value x);  // requires strictly positive input
Value exp(Value x);
Value scale(Value x, double s);
Value softmax(Value x);      // over last axis
Value log_softmax(Value x);  // over last axis

// Gather rows of table [V x d] by id; ids may repeat (gradients accumulate)
// and may be empty (result [0 x d]).
Value embedding(Value table, std::span<const int> ids);

Value reduce_sum(Value x);   // all elements -> scalar
Value reduce_mean(Value x);  // error on empty tensor
// 2-D only. axis 0 collapses rows (result [cols]), axis 1 collapses columns.
Value reduce_sum_axis(Value x, int axis);
Value reduce_mean_axis(Value x, int axis);

Value add_rowvec(Value m, Value v);  // [r x c] + broadcast [c]
Value concat(Value a, Value b);      // 1-D
Value slice(Value x, std::size_t from, std::size_t to);  // 1-D half-open range
Value row(Value m, std::size_t r);                       // [r x c] -> [c]
Value pick(Value x, std::size_t i);                      // 1-D element -> scalar
Value dot(Value a, Value b);                             // 1-D, same length
Value stack_rows(std::span<const Value> rows);           // k vectors [c] -> [k x c]
// y[c] = sum_i w[i] * m[i,:]  (convex combination of rows when w is a
// probability vector).
Value weighted_row_sum(Value w, Value m);

inline Value neg(Value x) { return scale(x, -1.0); }

// Max relative error between tape gradients and central finite differences
// of f over every scalar in the store. f must be a deterministic function of
// the store's values, reading them through Tape::param.
double gradient_check(ParameterStore& store, const std::function<Value(Tape&)>& f,
                      double h = 1e-5);

}  // namespace t2t

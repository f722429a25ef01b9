#include "t2t/tape.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "t2t/error.hpp"
#include "t2t/kernels.hpp"

namespace t2t {

const Tensor& Value::tensor() const {
    require(valid(), "value: use of default-constructed handle");
    return tape->out(id);
}

int Tape::add_node(const char* op, Tensor out, BackFn back) {
    require(kernels::all_finite(out.data(), out.size()),
            std::string("op '") + op + "' produced non-finite values");
    Node n;
    n.out = std::move(out);
    if (grad_enabled_) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

Value Tape::constant(Tensor t) {
    require(kernels::all_finite(t.data(), t.size()), "constant: non-finite values");
    Node n;
    n.out = std::move(t);
    nodes_.push_back(std::move(n));
    return Value{this, static_cast<int>(nodes_.size()) - 1};
}

Value Tape::param(const std::string& name) {
    require(store_ != nullptr, "tape: param() without a bound store");
    Tensor copy = store_->value(name);
    Node n;
    n.out = std::move(copy);
    if (grad_enabled_) {
        std::string key = name;
        n.back = [key](Tape& t, int self) {
            Tensor& g = t.store_->grad(key);
            const Tensor& gout = t.grad_of(self);
            double* dst = g.data();
            const double* src = gout.data();
            for (std::size_t i = 0; i < g.size(); ++i) dst[i] += src[i];
        };
    }
    nodes_.push_back(std::move(n));
    return Value{this, static_cast<int>(nodes_.size()) - 1};
}

Tensor& Tape::grad_buf(int id) {
    Tensor& g = grads_[static_cast<std::size_t>(id)];
    if (g.empty()) g = Tensor(nodes_[static_cast<std::size_t>(id)].out.shape());
    return g;
}

bool Tape::has_grad(int id) const { return !grads_[static_cast<std::size_t>(id)].empty(); }

const Tensor& Tape::grad_of(int id) const { return grads_[static_cast<std::size_t>(id)]; }

void Tape::backward(Value loss) {
    require(grad_enabled_, "backward: tape was built with gradients disabled");
    require(loss.valid() && loss.tape == this, "backward: loss not on this tape");
    require(loss.tensor().size() == 1, "backward: loss must be scalar, got shape " +
                                           loss.tensor().shape_str());
    grads_.assign(nodes_.size(), Tensor());
    grad_buf(loss.id)[0] = 1.0;
    for (int i = loss.id; i >= 0; --i) {
        const Node& n = nodes_[static_cast<std::size_t>(i)];
        if (!n.back) continue;
        if (!has_grad(i)) continue;  // node does not influence the loss
        n.back(*this, i);
    }
    grads_.clear();
}

// ---------------------------------------------------------------------------
// helpers
// ---------------------------------------------------------------------------

namespace {

Tape* tape_of(Value a, Value b, const char* op) {
    require(a.valid() && b.valid(), std::string(op) + ": invalid operand");
    require(a.tape == b.tape, std::string(op) + ": operands on different tapes");
    return a.tape;
}

void check_same_shape(Value a, Value b, const char* op) {
    require(a.tensor().same_shape(b.tensor()),
            std::string(op) + ": shape mismatch " + a.tensor().shape_str() + " vs " +
                b.tensor().shape_str());
}

void acc(Tensor& dst, const Tensor& src) {
    double* d = dst.data();
    const double* s = src.data();
    for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

}  // namespace

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

Value matmul(Value a, Value b) {
    Tape* t = tape_of(a, b, "matmul");
    const Tensor& A = a.tensor();
    const Tensor& B = b.tensor();
    require(A.rank() == 2 && B.rank() == 2,
            "matmul: expects rank-2 operands, got " + A.shape_str() + " and " + B.shape_str());
    require(A.shape()[1] == B.shape()[0],
            "matmul: inner dimensions differ, " + A.shape_str() + " vs " + B.shape_str());
    const std::size_t m = A.shape()[0], k = A.shape()[1], n = B.shape()[1];
    Tensor C({m, n});
    kernels::matmul(A.data(), B.data(), C.data(), m, k, n);
    int ida = a.id, idb = b.id;
    int id = t->add_node("matmul", std::move(C), [ida, idb, m, k, n](Tape& tp, int self) {
        const Tensor& g = tp.grad_of(self);
        kernels::matmul_nt_acc(g.data(), tp.out(idb).data(), tp.grad_buf(ida).data(), m, n, k);
        kernels::matmul_tn_acc(tp.out(ida).data(), g.data(), tp.grad_buf(idb).data(), m, k, n);
    });
    return Value{t, id};
}

Value matmul_nt(Value a, Value b) {
    Tape* t = tape_of(a, b, "matmul_nt");
    const Tensor& A = a.tensor();
    const Tensor& B = b.tensor();
    require(A.rank() == 2 && B.rank() == 2, "matmul_nt: expects rank-2 operands");
    require(A.shape()[1] == B.shape()[1],
            "matmul_nt: inner dimensions differ, " + A.shape_str() + " vs " + B.shape_str());
    const std::size_t m = A.shape()[0], k = A.shape()[1], n = B.shape()[0];
    Tensor C({m, n});
    for (double& v : C.values()) v = 0.0;
    kernels::matmul_nt_acc(A.data(), B.data(), C.data(), m, k, n);
    int ida = a.id, idb = b.id;
    int id = t->add_node("matmul_nt", std::move(C), [ida, idb, m, k, n](Tape& tp, int self) {
        const Tensor& g = tp.grad_of(self);  // [m x n]
        // dA += g * B          ([m x n] * [n x k])
        kernels::matmul_acc(g.data(), tp.out(idb).data(), tp.grad_buf(ida).data(), m, n, k);
        // dB += g^T * A        ([n x m] * [m x k])
        kernels::matmul_tn_acc(g.data(), tp.out(ida).data(), tp.grad_buf(idb).data(), m, n, k);
    });
    return Value{t, id};
}

Value matvec(Value m, Value x) {
    Tape* t = tape_of(m, x, "matvec");
    const Tensor& M = m.tensor();
    const Tensor& X = x.tensor();
    require(M.rank() == 2 && X.rank() == 1, "matvec: expects matrix and vector");
    require(M.shape()[1] == X.shape()[0],
            "matvec: dimensions differ, " + M.shape_str() + " vs " + X.shape_str());
    const std::size_t r = M.shape()[0], c = M.shape()[1];
    Tensor y({r});
    kernels::matmul(M.data(), X.data(), y.data(), r, c, 1);
    int idm = m.id, idx = x.id;
    int id = t->add_node("matvec", std::move(y), [idm, idx, r, c](Tape& tp, int self) {
        const Tensor& g = tp.grad_of(self);  // [r]
        Tensor& dm = tp.grad_buf(idm);
        const double* xv = tp.out(idx).data();
        for (std::size_t i = 0; i < r; ++i) {
            const double gi = g[i];
            double* dmi = dm.data() + i * c;
            for (std::size_t j = 0; j < c; ++j) dmi[j] += gi * xv[j];
        }
        // dx += M^T g
        kernels::matmul_tn_acc(tp.out(idm).data(), g.data(), tp.grad_buf(idx).data(), r, c, 1);
    });
    return Value{t, id};
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

Value add(Value a, Value b) {
    Tape* t = tape_of(a, b, "add");
    check_same_shape(a, b, "add");
    Tensor y(a.tensor().shape());
    kernels::vadd(a.tensor().data(), b.tensor().data(), y.data(), y.size());
    int ida = a.id, idb = b.id;
    int id = t->add_node("add", std::move(y), [ida, idb](Tape& tp, int self) {
        acc(tp.grad_buf(ida), tp.grad_of(self));
        acc(tp.grad_buf(idb), tp.grad_of(self));
    });
    return Value{t, id};
}

Value sub(Value a, Value b) {
    Tape* t = tape_of(a, b, "sub");
    check_same_shape(a, b, "sub");
    Tensor y(a.tensor().shape());
    kernels::vsub(a.tensor().data(), b.tensor().data(), y.data(), y.size());
    int ida = a.id, idb = b.id;
    int id = t->add_node("sub", std::move(y), [ida, idb](Tape& tp, int self) {
        const Tensor& g = tp.grad_of(self);
        acc(tp.grad_buf(ida), g);
        Tensor& db = tp.grad_buf(idb);
        for (std::size_t i = 0; i < db.size(); ++i) db[i] -= g[i];
    });
    return Value{t, id};
}

Value mul(Value a, Value b) {
    Tape* t = tape_of(a, b, "mul");
    check_same_shape(a, b, "mul");
    Tensor y(a.tensor().shape());
    kernels::vmul(a.tensor().data(), b.tensor().data(), y.data(), y.size());
    int ida = a.id, idb = b.id;
    int id = t->add_node("mul", std::move(y), [ida, idb](Tape& tp, int self) {
        const Tensor& g = tp.grad_of(self);
        Tensor& da = tp.grad_buf(ida);
        Tensor& db = tp.grad_buf(idb);
        const double* av = tp.out(ida).data();
        const double* bv = tp.out(idb).data();
        for (std::size_t i = 0; i < g.size(); ++i) {
            da[i] += g[i] * bv[i];
            db[i] += g[i] * av[i];
        }
    });
    return Value{t, id};
}

namespace {

template <class Fwd, class Bck>
Value unary_op(const char* name, Value x, Fwd fwd, Bck bck) {
    require(x.valid(), std::string(name) + ": invalid operand");
    Tape* t = x.tape;
    Tensor y(x.tensor().shape());
    fwd(x.tensor(), y);
    int idx = x.id;
    int id = t->add_node(name, std::move(y), [idx, bck](Tape& tp, int self) {
        const Tensor& g = tp.grad_of(self);
        Tensor& dx = tp.grad_buf(idx);
        bck(tp.out(idx), tp.out(self), g, dx);
    });
    return Value{t, id};
}

}  // namespace

Value tanh(Value x) {
    return unary_op(
        "tanh", x,
        [](const Tensor& in, Tensor& out) { kernels::vtanh(in.data(), out.data(), in.size()); },
        [](const Tensor&, const Tensor& y, const Tensor& g, Tensor& dx) {
            for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * (1.0 - y[i] * y[i]);
        });
}

Value sigmoid(Value x) {
    return unary_op(
        "sigmoid", x,
        [](const Tensor& in, Tensor& out) { kernels::vsigmoid(in.data(), out.data(), in.size()); },
        [](const Tensor&, const Tensor& y, const Tensor& g, Tensor& dx) {
            for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * y[i] * (1.0 - y[i]);
        });
}

Value log(Value x) {
    for (double v : x.tensor().values())
        require(v > 0.0, "log: non-positive input " + format_double(v));
    return unary_op(
        "log", x,
        [](const Tensor& in, Tensor& out) { kernels::vlog(in.data(), out.data(), in.size()); },
        [](const Tensor& in, const Tensor&, const Tensor& g, Tensor& dx) {
            for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] / in[i];
        });
}

Value exp(Value x) {
    return unary_op(
        "exp", x,
        [](const Tensor& in, Tensor& out) { kernels::vexp(in.data(), out.data(), in.size()); },
        [](const Tensor&, const Tensor& y, const Tensor& g, Tensor& dx) {
            for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * y[i];
        });
}

Value scale(Value x, double s) {
    require(x.valid(), "scale: invalid operand");
    Tape* t = x.tape;
    Tensor y(x.tensor().shape());
    const double* in = x.tensor().data();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = in[i] * s;
    int idx = x.id;
    int id = t->add_node("scale", std::move(y), [idx, s](Tape& tp, int self) {
        const Tensor& g = tp.grad_of(self);
        Tensor& dx = tp.grad_buf(idx);
        for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * s;
    });
    return Value{t, id};
}

// ---------------------------------------------------------------------------
// softmax family (last axis)
// ---------------------------------------------------------------------------

namespace {
std::pair<std::size_t, std::size_t> last_axis_rows(const Tensor& x, const char* op) {
    require(x.rank() >= 1 && x.size() > 0, std::string(op) + ": empty or scalar input");
    const std::size_t cols = x.shape().back();
    return {x.size() / cols, cols};
}
}  // namespace

Value softmax(Value x) {
    require(x.valid(), "softmax: invalid operand");
    Tape* t = x.tape;
    auto [rows, cols] = last_axis_rows(x.tensor(), "softmax");
    Tensor y(x.tensor().shape());
    kernels::softmax_rows(x.tensor().data(), y.data(), rows, cols);
    int idx = x.id;
    const std::size_t r = rows, c = cols;
    int id = t->add_node("softmax", std::move(y), [idx, r, c](Tape& tp, int self) {
        const Tensor& g = tp.grad_of(self);
        const Tensor& y = tp.out(self);
        Tensor& dx = tp.grad_buf(idx);
        for (std::size_t i = 0; i < r; ++i) {
            const double* gr = g.data() + i * c;
            const double* yr = y.data() + i * c;
            double* dr = dx.data() + i * c;
            double gy = 0.0;
            for (std::size_t j = 0; j < c; ++j) gy += gr[j] * yr[j];
            for (std::size_t j = 0; j < c; ++j) dr[j] += yr[j] * (gr[j] - gy);
        }
    });
    return Value{t, id};
}

Value log_softmax(Value x) {
    require(x.valid(), "log_softmax: invalid operand");
    Tape* t = x.tape;
    auto [rows, cols] = last_axis_rows(x.tensor(), "log_softmax");
    Tensor y(x.tensor().shape());
    kernels::log_softmax_rows(x.tensor().data(), y.data(), rows, cols);
    int idx = x.id;
    const std::size_t r = rows, c = cols;
    int id = t->add_node("log_softmax", std::move(y), [idx, r, c](Tape& tp, int self) {
        const Tensor& g = tp.grad_of(self);
        const Tensor& y = tp.out(self);
        Tensor& dx = tp.grad_buf(idx);
        for (std::size_t i = 0; i < r; ++i) {
            const double* gr = g.data() + i * c;
            const double* yr = y.data() + i * c;
            double* dr = dx.data() + i * c;
            double gsum = 0.0;
            for (std::size_t j = 0; j < c; ++j) gsum += gr[j];
            for (std::size_t j = 0; j < c; ++j) dr[j] += gr[j] - std::exp(yr[j]) * gsum;
        }
    });
    return Value{t, id};
}

// ---------------------------------------------------------------------------
// gather / structure ops
// ---------------------------------------------------------------------------

Value embedding(Value table, std::span<const int> ids) {
    require(table.valid(), "embedding: invalid operand");
    Tape* t = table.tape;
    const Tensor& T = table.tensor();
    require(T.rank() == 2, "embedding: table must be rank-2, got " + T.shape_str());
    const std::size_t v = T.shape()[0], d = T.shape()[1];
    for (int idv : ids)
        require(idv >= 0 && static_cast<std::size_t>(idv) < v,
                "embedding: id " + std::to_string(idv) + " out of range [0, " +
                    std::to_string(v) + ")");
    Tensor y({ids.size(), d});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const double* src = T.data() + static_cast<std::size_t>(ids[i]) * d;
        double* dst = y.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) dst[j] = src[j];
    }
    int idt = table.id;
    std::vector<int> ids_copy(ids.begin(), ids.end());
    int id = t->add_node("embedding", std::move(y),
                         [idt, ids_copy = std::move(ids_copy), d](Tape& tp, int self) {
                             const Tensor& g = tp.grad_of(self);
                             Tensor& dt = tp.grad_buf(idt);
                             for (std::size_t i = 0; i < ids_copy.size(); ++i) {
                                 double* dst = dt.data() + static_cast<std::size_t>(ids_copy[i]) * d;
                                 const double* src = g.data() + i * d;
                                 for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
                             }
                         });
    return Value{t, id};
}

Value reduce_sum(Value x) {
    require(x.valid(), "reduce_sum: invalid operand");
    Tape* t = x.tape;
    Tensor y = Tensor::scalar(kernels::sum_blocked(x.tensor().data(), x.tensor().size()));
    int idx = x.id;
    int id = t->add_node("reduce_sum", std::move(y), [idx](Tape& tp, int self) {
        const double g = tp.grad_of(self)[0];
        Tensor& dx = tp.grad_buf(idx);
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g;
    });
    return Value{t, id};
}

Value reduce_mean(Value x) {
    require(x.valid(), "reduce_mean: invalid operand");
    require(x.tensor().size() > 0, "reduce_mean: empty tensor");
    Tape* t = x.tape;
    const double n = static_cast<double>(x.tensor().size());
    Tensor y = Tensor::scalar(kernels::sum_blocked(x.tensor().data(), x.tensor().size()) / n);
    int idx = x.id;
    int id = t->add_node("reduce_mean", std::move(y), [idx, n](Tape& tp, int self) {
        const double g = tp.grad_of(self)[0] / n;
        Tensor& dx = tp.grad_buf(idx);
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g;
    });
    return Value{t, id};
}

namespace {

Value reduce_axis_impl(Value x, int axis, bool mean, const char* op) {
    require(x.valid(), std::string(op) + ": invalid operand");
    const Tensor& X = x.tensor();
    require(X.rank() == 2, std::string(op) + ": expects rank-2 input, got " + X.shape_str());
    require(axis == 0 || axis == 1, std::string(op) + ": invalid axis " + std::to_string(axis));
    const std::size_t r = X.shape()[0], c = X.shape()[1];
    const std::size_t extent = axis == 0 ? r : c;
    require(!mean || extent > 0, std::string(op) + ": mean over empty axis");
    Tape* t = x.tape;
    const double scale_v = mean ? 1.0 / static_cast<double>(extent) : 1.0;
    Tensor y({axis == 0 ? c : r});
    if (axis == 0) {
        for (std::size_t j = 0; j < c; ++j) {
            double s = 0.0;
            for (std::size_t i = 0; i < r; ++i) s += X.at2(i, j);
            y[j] = s * scale_v;
        }
    } else {
        for (std::size_t i = 0; i < r; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < c; ++j) s += X.at2(i, j);
            y[i] = s * scale_v;
        }
    }
    int idx = x.id;
    int id = t->add_node(op, std::move(y), [idx, axis, r, c, scale_v](Tape& tp, int self) {
        const Tensor& g = tp.grad_of(self);
        Tensor& dx = tp.grad_buf(idx);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j)
                dx.at2(i, j) += scale_v * (axis == 0 ? g[j] : g[i]);
    });
    return Value{t, id};
}

}  // namespace

Value reduce_sum_axis(Value x, int axis) { return reduce_axis_impl(x, axis, false, "reduce_sum_axis"); }
Value reduce_mean_axis(Value x, int axis) { return reduce_axis_impl(x, axis, true, "reduce_mean_axis"); }

Value add_rowvec(Value m, Value v) {
    Tape* t = tape_of(m, v, "add_rowvec");
    const Tensor& M = m.tensor();
    const Tensor& V = v.tensor();
    require(M.rank() == 2 && V.rank() == 1 && M.shape()[1] == V.shape()[0],
            "add_rowvec: shapes " + M.shape_str() + " and " + V.shape_str() + " incompatible");
    const std::size_t r = M.shape()[0], c = M.shape()[1];
    Tensor y({r, c});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) y.at2(i, j) = M.at2(i, j) + V[j];
    int idm = m.id, idv = v.id;
    int id = t->add_node("add_rowvec", std::move(y), [idm, idv, r, c](Tape& tp, int self) {
        const Tensor& g = tp.grad_of(self);
        acc(tp.grad_buf(idm), g);
        Tensor& dv = tp.grad_buf(idv);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) dv[j] += g[i * c + j];
    });
    return Value{t, id};
}

Value concat(Value a, Value b) {
    Tape* t = tape_of(a, b, "concat");
    const Tensor& A = a.tensor();
    const Tensor& B = b.tensor();
    require(A.rank() == 1 && B.rank() == 1, "concat: expects rank-1 operands");
    Tensor y({A.size() + B.size()});
    for (std::size_t i = 0; i < A.size(); ++i) y[i] = A[i];
    for (std::size_t i = 0; i < B.size(); ++i) y[A.size() + i] = B[i];
    int ida = a.id, idb = b.id;
    const std::size_t na = A.size();
    int id = t->add_node("concat", std::move(y), [ida, idb, na](Tape& tp, int self) {
        const Tensor& g = tp.grad_of(self);
        Tensor& da = tp.grad_buf(ida);
        Tensor& db = tp.grad_buf(idb);
        for (std::size_t i = 0; i < da.size(); ++i) da[i] += g[i];
        for (std::size_t i = 0; i < db.size(); ++i) db[i] += g[na + i];
    });
    return Value{t, id};
}

Value slice(Value x, std::size_t from, std::size_t to) {
    require(x.valid(), "slice: invalid operand");
    const Tensor& X = x.tensor();
    require(X.rank() == 1, "slice: expects rank-1 input");
    require(from <= to && to <= X.size(),
            "slice: range [" + std::to_string(from) + ", " + std::to_string(to) +
                ") out of bounds for length " + std::to_string(X.size()));
    Tape* t = x.tape;
    Tensor y({to - from});
    for (std::size_t i = from; i < to; ++i) y[i - from] = X[i];
    int idx = x.id;
    int id = t->add_node("slice", std::move(y), [idx, from](Tape& tp, int self) {
        const Tensor& g = tp.grad_of(self);
        Tensor& dx = tp.grad_buf(idx);
        for (std::size_t i = 0; i < g.size(); ++i) dx[from + i] += g[i];
    });
    return Value{t, id};
}

Value row(Value m, std::size_t r) {
    require(m.valid(), "row: invalid operand");
    const Tensor& M = m.tensor();
    require(M.rank() == 2, "row: expects rank-2 input");
    require(r < M.shape()[0], "row: index " + std::to_string(r) + " out of range");
    Tape* t = m.tape;
    const std::size_t c = M.shape()[1];
    Tensor y({c});
    for (std::size_t j = 0; j < c; ++j) y[j] = M.at2(r, j);
    int idm = m.id;
    int id = t->add_node("row", std::move(y), [idm, r, c](Tape& tp, int self) {
        const Tensor& g = tp.grad_of(self);
        Tensor& dm = tp.grad_buf(idm);
        for (std::size_t j = 0; j < c; ++j) dm[r * c + j] += g[j];
    });
    return Value{t, id};
}

Value pick(Value x, std::size_t i) {
    require(x.valid(), "pick: invalid operand");
    const Tensor& X = x.tensor();
    require(X.rank() == 1, "pick: expects rank-1 input");
    require(i < X.size(), "pick: index " + std::to_string(i) + " out of range");
    Tape* t = x.tape;
    int idx = x.id;
    int id = t->add_node("pick", Tensor::scalar(X[i]), [idx, i](Tape& tp, int self) {
        tp.grad_buf(idx)[i] += tp.grad_of(self)[0];
    });
    return Value{t, id};
}

Value dot(Value a, Value b) {
    Tape* t = tape_of(a, b, "dot");
    const Tensor& A = a.tensor();
    const Tensor& B = b.tensor();
    require(A.rank() == 1 && B.rank() == 1 && A.size() == B.size(),
            "dot: incompatible shapes " + A.shape_str() + " and " + B.shape_str());
    double s = 0.0;
    for (std::size_t i = 0; i < A.size(); ++i) s += A[i] * B[i];
    int ida = a.id, idb = b.id;
    int id = t->add_node("dot", Tensor::scalar(s), [ida, idb](Tape& tp, int self) {
        const double g = tp.grad_of(self)[0];
        const Tensor& av = tp.out(ida);
        const Tensor& bv = tp.out(idb);
        Tensor& da = tp.grad_buf(ida);
        Tensor& db = tp.grad_buf(idb);
        for (std::size_t i = 0; i < av.size(); ++i) {
            da[i] += g * bv[i];
            db[i] += g * av[i];
        }
    });
    return Value{t, id};
}

Value stack_rows(std::span<const Value> rows) {
    require(!rows.empty(), "stack_rows: no rows");
    Tape* t = rows[0].tape;
    const std::size_t c = rows[0].tensor().size();
    for (const Value& v : rows) {
        require(v.valid() && v.tape == t, "stack_rows: mixed tapes");
        require(v.tensor().rank() == 1 && v.tensor().size() == c,
                "stack_rows: rows must be rank-1 of equal length");
    }
    Tensor y({rows.size(), c});
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const Tensor& r = rows[i].tensor();
        for (std::size_t j = 0; j < c; ++j) y.at2(i, j) = r[j];
    }
    std::vector<int> ids;
    ids.reserve(rows.size());
    for (const Value& v : rows) ids.push_back(v.id);
    int id = t->add_node("stack_rows", std::move(y),
                         [ids = std::move(ids), c](Tape& tp, int self) {
                             const Tensor& g = tp.grad_of(self);
                             for (std::size_t i = 0; i < ids.size(); ++i) {
                                 Tensor& dr = tp.grad_buf(ids[i]);
                                 for (std::size_t j = 0; j < c; ++j) dr[j] += g[i * c + j];
                             }
                         });
    return Value{t, id};
}

Value weighted_row_sum(Value w, Value m) {
    Tape* t = tape_of(w, m, "weighted_row_sum");
    const Tensor& W = w.tensor();
    const Tensor& M = m.tensor();
    require(W.rank() == 1 && M.rank() == 2 && W.size() == M.shape()[0],
            "weighted_row_sum: shapes " + W.shape_str() + " and " + M.shape_str() +
                " incompatible");
    const std::size_t r = M.shape()[0], c = M.shape()[1];
    Tensor y({c});
    for (std::size_t i = 0; i < r; ++i) {
        const double wi = W[i];
        const double* mi = M.data() + i * c;
        for (std::size_t j = 0; j < c; ++j) y[j] += wi * mi[j];
    }
    int idw = w.id, idm = m.id;
    int id = t->add_node("weighted_row_sum", std::move(y), [idw, idm, r, c](Tape& tp, int self) {
        const Tensor& g = tp.grad_of(self);
        const Tensor& W = tp.out(idw);
        const Tensor& M = tp.out(idm);
        Tensor& dw = tp.grad_buf(idw);
        Tensor& dm = tp.grad_buf(idm);
        for (std::size_t i = 0; i < r; ++i) {
            const double* mi = M.data() + i * c;
            double* dmi = dm.data() + i * c;
            double s = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
                s += g[j] * mi[j];
                dmi[j] += W[i] * g[j];
            }
            dw[i] += s;
        }
    });
    return Value{t, id};
}

// ---------------------------------------------------------------------------
// gradient checking
// ---------------------------------------------------------------------------

double gradient_check(ParameterStore& store, const std::function<Value(Tape&)>& f, double h) {
    store.zero_grads();
    {
        Tape tape(&store);
        Value loss = f(tape);
        tape.backward(loss);
    }
    // Snapshot analytic gradients, then probe every scalar.
    std::vector<std::pair<std::string, Tensor>> analytic;
    for (const std::string& name : store.names()) analytic.emplace_back(name, store.grad(name));
    store.zero_grads();

    auto eval = [&]() {
        Tape tape(&store, /*grad_enabled=*/false);
        return f(tape).item();
    };

    double max_rel = 0.0;
    for (auto& [name, ga] : analytic) {
        Tensor& w = store.value(name);
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double saved = w[i];
            w[i] = saved + h;
            const double fp = eval();
            w[i] = saved - h;
            const double fm = eval();
            w[i] = saved;
            const double numeric = (fp - fm) / (2.0 * h);
            const double a = ga[i];
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
            const double rel = std::abs(a - numeric) / denom;
            if (rel > max_rel) max_rel = rel;
        }
    }
    return max_rel;
}

}  // namespace t2t

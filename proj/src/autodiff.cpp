#include "sta/autodiff.hpp"

#include <cmath>
#include <utility>

#include "sta/errors.hpp"

namespace sta {

const Tensor& Var::value() const {
    if (!valid()) throw ContractError("value() on an invalid Var");
    return graph->value(*this);
}

const Shape& Var::shape() const {
    if (!valid()) throw ContractError("shape() on an invalid Var");
    return graph->shape(*this);
}

void Graph::check_mine(Var v, const char* what) const {
    if (!v.valid()) {
        throw ContractError(std::string(what) + ": invalid Var");
    }
    if (v.graph != this) {
        throw ContractError(std::string(what) + ": Var belongs to a different graph");
    }
    if (static_cast<size_t>(v.id) >= nodes_.size()) {
        throw ContractError(std::string(what) + ": Var id out of range");
    }
}

const Graph::Node& Graph::node(Var v) const {
    check_mine(v, "node access");
    return nodes_[static_cast<size_t>(v.id)];
}

const Tensor& Graph::value(Var v) const { return node(v).value; }
const Shape& Graph::shape(Var v) const { return node(v).value.shape; }
bool Graph::needs_grad(Var v) const { return node(v).needs_grad; }

Var Graph::leaf(Tensor& param) {
    if (param.numel() == 0) {
        throw ContractError("leaf: parameter tensor is empty");
    }
    auto it = bound_.find(&param);
    if (it != bound_.end()) {
        const Node& n = nodes_[static_cast<size_t>(it->second)];
        if (n.leaf_target == nullptr) {
            throw ContractError("leaf: tensor already bound to this graph as a constant");
        }
        return Var{this, it->second};
    }
    Node n;
    n.op = "leaf";
    n.value = param;  // snapshot of the current parameter values
    n.leaf_target = &param;
    n.needs_grad = true;
    int id = static_cast<int>(nodes_.size());
    nodes_.push_back(std::move(n));
    bound_.emplace(&param, id);
    leaves_.push_back(id);
    return Var{this, id};
}

Var Graph::constant(Tensor value) {
    if (value.numel() == 0) {
        throw ContractError("constant: tensor is empty");
    }
    Node n;
    n.op = "constant";
    n.value = std::move(value);
    int id = static_cast<int>(nodes_.size());
    nodes_.push_back(std::move(n));
    return Var{this, id};
}

Var Graph::constant_ref(const Tensor& value) {
    if (value.numel() == 0) {
        throw ContractError("constant_ref: tensor is empty");
    }
    auto it = bound_.find(&value);
    if (it != bound_.end()) {
        const Node& n = nodes_[static_cast<size_t>(it->second)];
        if (n.leaf_target != nullptr) {
            throw ContractError("constant_ref: tensor already bound to this graph as a leaf");
        }
        return Var{this, it->second};
    }
    Node n;
    n.op = "constant";
    n.value = value;
    int id = static_cast<int>(nodes_.size());
    nodes_.push_back(std::move(n));
    bound_.emplace(&value, id);
    return Var{this, id};
}

Var Graph::emit(std::string op, std::vector<Var> parents, Tensor value, BackwardFn backward) {
    bool needs = false;
    std::vector<int> parent_ids;
    parent_ids.reserve(parents.size());
    for (const Var& p : parents) {
        check_mine(p, op.c_str());
        parent_ids.push_back(p.id);
        needs = needs || nodes_[static_cast<size_t>(p.id)].needs_grad;
    }
    for (double d : value.data) {
        if (!std::isfinite(d)) {
            throw NumericError("non-finite value produced by op '" + op + "'");
        }
    }
    if (needs && !backward) {
        throw ContractError("op '" + op + "' requires a gradient but has no backward function");
    }
    Node n;
    n.op = std::move(op);
    n.parents = std::move(parent_ids);
    n.value = std::move(value);
    n.needs_grad = needs;
    n.backward = needs ? std::move(backward) : BackwardFn{};
    int id = static_cast<int>(nodes_.size());
    nodes_.push_back(std::move(n));
    return Var{this, id};
}

void Graph::backward(Var loss) {
    check_mine(loss, "backward");
    Node& ln = nodes_[static_cast<size_t>(loss.id)];
    if (ln.value.numel() != 1) {
        throw ContractError("backward requires a scalar loss, got shape " +
                            shape_str(ln.value.shape));
    }

    touched_.assign(nodes_.size(), 0);
    for (size_t i = 0; i <= static_cast<size_t>(loss.id); ++i) {
        Node& n = nodes_[i];
        if (n.needs_grad) n.grad.assign(n.value.numel(), 0.0);
    }

    if (ln.needs_grad) {
        ln.grad[0] = 1.0;
        touched_[static_cast<size_t>(loss.id)] = 1;
        for (int id = loss.id; id >= 0; --id) {
            Node& n = nodes_[static_cast<size_t>(id)];
            if (!n.needs_grad || !touched_[static_cast<size_t>(id)] || !n.backward) continue;
            BackwardCtx ctx(*this, id);
            n.backward(ctx);
        }
    }

    // Write parameter gradients back, zeros for leaves the loss never reached
    // (including leaves registered after the loss node).
    for (int id : leaves_) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (static_cast<size_t>(id) <= static_cast<size_t>(loss.id) && !n.grad.empty()) {
            n.leaf_target->grad = n.grad;
        } else {
            n.leaf_target->grad.assign(n.leaf_target->data.size(), 0.0);
        }
    }
}

const Tensor& BackwardCtx::out_value() const {
    return g_.nodes_[static_cast<size_t>(id_)].value;
}

std::span<const double> BackwardCtx::out_grad() const {
    const auto& grad = g_.nodes_[static_cast<size_t>(id_)].grad;
    return {grad.data(), grad.size()};
}

size_t BackwardCtx::parent_count() const {
    return g_.nodes_[static_cast<size_t>(id_)].parents.size();
}

const Tensor& BackwardCtx::parent_value(size_t k) const {
    const auto& parents = g_.nodes_[static_cast<size_t>(id_)].parents;
    if (k >= parents.size()) throw ContractError("parent_value index out of range");
    return g_.nodes_[static_cast<size_t>(parents[k])].value;
}

std::span<double> BackwardCtx::parent_grad(size_t k) {
    const auto& parents = g_.nodes_[static_cast<size_t>(id_)].parents;
    if (k >= parents.size()) throw ContractError("parent_grad index out of range");
    Graph::Node& p = g_.nodes_[static_cast<size_t>(parents[k])];
    if (!p.needs_grad) return {};
    g_.touched_[static_cast<size_t>(parents[k])] = 1;
    return {p.grad.data(), p.grad.size()};
}

// --- Op helpers --------------------------------------------------------------

namespace {

Graph& graph_of(Var a, const char* op) {
    if (!a.valid()) throw ContractError(std::string(op) + ": invalid operand");
    return *a.graph;
}

void check_same_graph(Var a, Var b, const char* op) {
    if (!a.valid() || !b.valid()) throw ContractError(std::string(op) + ": invalid operand");
    if (a.graph != b.graph) {
        throw ContractError(std::string(op) + ": operands belong to different graphs");
    }
}

// True when `small` may be tiled across `big`: identical shapes, a single
// element, or a trailing suffix of big's shape.
bool broadcast_ok(const Shape& big, const Shape& small) {
    if (big == small) return true;
    if (shape_numel(small) == 1) return true;
    if (small.size() > big.size()) return false;
    size_t off = big.size() - small.size();
    for (size_t i = 0; i < small.size(); ++i) {
        if (big[off + i] != small[i]) return false;
    }
    return true;
}

struct EwSpec {
    size_t n;   // elements of the output (= left operand)
    size_t nb;  // elements of the right operand; index with i % nb
};

EwSpec elementwise_spec(Var a, Var b, const char* op) {
    check_same_graph(a, b, op);
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (!broadcast_ok(sa, sb)) {
        throw ShapeError(std::string(op) + ": shapes " + shape_str(sa) + " and " +
                         shape_str(sb) + " are incompatible; the right operand must match " +
                         "or be a trailing suffix of the left");
    }
    return {shape_numel(sa), shape_numel(sb)};
}

}  // namespace

// --- Operations --------------------------------------------------------------

Var matmul(Var a, Var b) {
    check_same_graph(a, b, "matmul");
    Graph& g = *a.graph;
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    if (A.rank() != 2 || B.rank() != 2) {
        throw ShapeError("matmul expects rank-2 operands, got " + shape_str(A.shape) + " and " +
                         shape_str(B.shape));
    }
    size_t m = A.shape[0], k = A.shape[1], k2 = B.shape[0], n = B.shape[1];
    if (k != k2) {
        throw ShapeError("matmul inner dimensions differ: " + shape_str(A.shape) + " vs " +
                         shape_str(B.shape));
    }
    Tensor out = Tensor::zeros({m, n});
    for (size_t i = 0; i < m; ++i) {
        const double* arow = &A.data[i * k];
        double* crow = &out.data[i * n];
        for (size_t l = 0; l < k; ++l) {
            double av = arow[l];
            if (av == 0.0) continue;
            const double* brow = &B.data[l * n];
            for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    return g.emit("matmul", {a, b}, std::move(out), [m, k, n](BackwardCtx& ctx) {
        const Tensor& A = ctx.parent_value(0);
        const Tensor& B = ctx.parent_value(1);
        auto gout = ctx.out_grad();
        if (auto da = ctx.parent_grad(0); !da.empty()) {
            // dA = G * B^T
            for (size_t i = 0; i < m; ++i) {
                const double* grow = &gout[i * n];
                double* darow = &da[i * k];
                for (size_t l = 0; l < k; ++l) {
                    const double* brow = &B.data[l * n];
                    double acc = 0.0;
                    for (size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                    darow[l] += acc;
                }
            }
        }
        if (auto db = ctx.parent_grad(1); !db.empty()) {
            // dB = A^T * G
            for (size_t i = 0; i < m; ++i) {
                const double* arow = &A.data[i * k];
                const double* grow = &gout[i * n];
                for (size_t l = 0; l < k; ++l) {
                    double av = arow[l];
                    if (av == 0.0) continue;
                    double* dbrow = &db[l * n];
                    for (size_t j = 0; j < n; ++j) dbrow[j] += av * grow[j];
                }
            }
        }
    });
}

Var add(Var a, Var b) {
    auto [n, nb] = elementwise_spec(a, b, "add");
    Graph& g = *a.graph;
    Tensor out = a.value();
    const Tensor& B = b.value();
    for (size_t i = 0; i < n; ++i) out.data[i] += B.data[i % nb];
    out.grad.clear();
    return g.emit("add", {a, b}, std::move(out), [n, nb](BackwardCtx& ctx) {
        auto gout = ctx.out_grad();
        if (auto da = ctx.parent_grad(0); !da.empty()) {
            for (size_t i = 0; i < n; ++i) da[i] += gout[i];
        }
        if (auto db = ctx.parent_grad(1); !db.empty()) {
            for (size_t i = 0; i < n; ++i) db[i % nb] += gout[i];
        }
    });
}

Var sub(Var a, Var b) {
    auto [n, nb] = elementwise_spec(a, b, "sub");
    Graph& g = *a.graph;
    Tensor out = a.value();
    const Tensor& B = b.value();
    for (size_t i = 0; i < n; ++i) out.data[i] -= B.data[i % nb];
    out.grad.clear();
    return g.emit("sub", {a, b}, std::move(out), [n, nb](BackwardCtx& ctx) {
        auto gout = ctx.out_grad();
        if (auto da = ctx.parent_grad(0); !da.empty()) {
            for (size_t i = 0; i < n; ++i) da[i] += gout[i];
        }
        if (auto db = ctx.parent_grad(1); !db.empty()) {
            for (size_t i = 0; i < n; ++i) db[i % nb] -= gout[i];
        }
    });
}

Var mul(Var a, Var b) {
    auto [n, nb] = elementwise_spec(a, b, "mul");
    Graph& g = *a.graph;
    Tensor out = a.value();
    const Tensor& B = b.value();
    for (size_t i = 0; i < n; ++i) out.data[i] *= B.data[i % nb];
    out.grad.clear();
    return g.emit("mul", {a, b}, std::move(out), [n, nb](BackwardCtx& ctx) {
        const Tensor& A = ctx.parent_value(0);
        const Tensor& B = ctx.parent_value(1);
        auto gout = ctx.out_grad();
        if (auto da = ctx.parent_grad(0); !da.empty()) {
            for (size_t i = 0; i < n; ++i) da[i] += gout[i] * B.data[i % nb];
        }
        if (auto db = ctx.parent_grad(1); !db.empty()) {
            for (size_t i = 0; i < n; ++i) db[i % nb] += gout[i] * A.data[i];
        }
    });
}

Var scale(Var a, double s) {
    Graph& g = graph_of(a, "scale");
    Tensor out = a.value();
    for (double& d : out.data) d *= s;
    out.grad.clear();
    return g.emit("scale", {a}, std::move(out), [s](BackwardCtx& ctx) {
        auto gout = ctx.out_grad();
        if (auto da = ctx.parent_grad(0); !da.empty()) {
            for (size_t i = 0; i < gout.size(); ++i) da[i] += s * gout[i];
        }
    });
}

Var neg(Var a) { return scale(a, -1.0); }

Var concat(Var a, Var b) {
    check_same_graph(a, b, "concat");
    Graph& g = *a.graph;
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() != sb.size()) {
        throw ShapeError("concat rank mismatch: " + shape_str(sa) + " vs " + shape_str(sb));
    }
    for (size_t i = 0; i + 1 < sa.size(); ++i) {
        if (sa[i] != sb[i]) {
            throw ShapeError("concat leading dimensions differ: " + shape_str(sa) + " vs " +
                             shape_str(sb));
        }
    }
    size_t p = sa.back(), q = sb.back();
    size_t rows = shape_numel(sa) / p;
    Shape so = sa;
    so.back() = p + q;
    Tensor out = Tensor::zeros(so);
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    for (size_t r = 0; r < rows; ++r) {
        for (size_t i = 0; i < p; ++i) out.data[r * (p + q) + i] = A.data[r * p + i];
        for (size_t i = 0; i < q; ++i) out.data[r * (p + q) + p + i] = B.data[r * q + i];
    }
    return g.emit("concat", {a, b}, std::move(out), [rows, p, q](BackwardCtx& ctx) {
        auto gout = ctx.out_grad();
        if (auto da = ctx.parent_grad(0); !da.empty()) {
            for (size_t r = 0; r < rows; ++r)
                for (size_t i = 0; i < p; ++i) da[r * p + i] += gout[r * (p + q) + i];
        }
        if (auto db = ctx.parent_grad(1); !db.empty()) {
            for (size_t r = 0; r < rows; ++r)
                for (size_t i = 0; i < q; ++i) db[r * q + i] += gout[r * (p + q) + p + i];
        }
    });
}

Var reshape(Var a, Shape shape) {
    Graph& g = graph_of(a, "reshape");
    const Tensor& A = a.value();
    if (shape_numel(shape) != A.numel()) {
        throw ShapeError("reshape from " + shape_str(A.shape) + " to " + shape_str(shape) +
                         " changes the element count");
    }
    Tensor out = Tensor::from(std::move(shape), A.data);
    return g.emit("reshape", {a}, std::move(out), [](BackwardCtx& ctx) {
        auto gout = ctx.out_grad();
        if (auto da = ctx.parent_grad(0); !da.empty()) {
            for (size_t i = 0; i < gout.size(); ++i) da[i] += gout[i];
        }
    });
}

Var leaky_relu(Var a, double slope) {
    Graph& g = graph_of(a, "leaky_relu");
    Tensor out = a.value();
    for (double& d : out.data) {
        if (d < 0.0) d *= slope;
    }
    out.grad.clear();
    return g.emit("leaky_relu", {a}, std::move(out), [slope](BackwardCtx& ctx) {
        const Tensor& A = ctx.parent_value(0);
        auto gout = ctx.out_grad();
        if (auto da = ctx.parent_grad(0); !da.empty()) {
            for (size_t i = 0; i < gout.size(); ++i) {
                da[i] += (A.data[i] > 0.0 ? 1.0 : slope) * gout[i];
            }
        }
    });
}

Var sigmoid(Var a) {
    Graph& g = graph_of(a, "sigmoid");
    Tensor out = a.value();
    for (double& d : out.data) {
        if (d >= 0.0) {
            d = 1.0 / (1.0 + std::exp(-d));
        } else {
            double e = std::exp(d);
            d = e / (1.0 + e);
        }
    }
    out.grad.clear();
    return g.emit("sigmoid", {a}, std::move(out), [](BackwardCtx& ctx) {
        const Tensor& Y = ctx.out_value();
        auto gout = ctx.out_grad();
        if (auto da = ctx.parent_grad(0); !da.empty()) {
            for (size_t i = 0; i < gout.size(); ++i) {
                double y = Y.data[i];
                da[i] += y * (1.0 - y) * gout[i];
            }
        }
    });
}

Var softmax(Var a) {
    Graph& g = graph_of(a, "softmax");
    const Tensor& A = a.value();
    size_t k = A.shape.back();
    if (k == 0) throw DomainError("softmax over an empty axis");
    size_t rows = A.numel() / k;
    Tensor out = A;
    out.grad.clear();
    for (size_t r = 0; r < rows; ++r) {
        double* row = &out.data[r * k];
        double mx = row[0];
        for (size_t i = 1; i < k; ++i) mx = std::max(mx, row[i]);
        double total = 0.0;
        for (size_t i = 0; i < k; ++i) {
            row[i] = std::exp(row[i] - mx);
            total += row[i];
        }
        for (size_t i = 0; i < k; ++i) row[i] /= total;
    }
    return g.emit("softmax", {a}, std::move(out), [rows, k](BackwardCtx& ctx) {
        const Tensor& Y = ctx.out_value();
        auto gout = ctx.out_grad();
        if (auto da = ctx.parent_grad(0); !da.empty()) {
            for (size_t r = 0; r < rows; ++r) {
                const double* y = &Y.data[r * k];
                const double* gr = &gout[r * k];
                double dot = 0.0;
                for (size_t i = 0; i < k; ++i) dot += gr[i] * y[i];
                for (size_t i = 0; i < k; ++i) da[r * k + i] += y[i] * (gr[i] - dot);
            }
        }
    });
}

Var abs(Var a) {
    Graph& g = graph_of(a, "abs");
    Tensor out = a.value();
    for (double& d : out.data) d = std::fabs(d);
    out.grad.clear();
    return g.emit("abs", {a}, std::move(out), [](BackwardCtx& ctx) {
        const Tensor& A = ctx.parent_value(0);
        auto gout = ctx.out_grad();
        if (auto da = ctx.parent_grad(0); !da.empty()) {
            for (size_t i = 0; i < gout.size(); ++i) {
                double x = A.data[i];
                double s = (x > 0.0) ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
                da[i] += s * gout[i];
            }
        }
    });
}

Var square(Var a) {
    Graph& g = graph_of(a, "square");
    Tensor out = a.value();
    for (double& d : out.data) d *= d;
    out.grad.clear();
    return g.emit("square", {a}, std::move(out), [](BackwardCtx& ctx) {
        const Tensor& A = ctx.parent_value(0);
        auto gout = ctx.out_grad();
        if (auto da = ctx.parent_grad(0); !da.empty()) {
            for (size_t i = 0; i < gout.size(); ++i) da[i] += 2.0 * A.data[i] * gout[i];
        }
    });
}

Var sum(Var a) {
    Graph& g = graph_of(a, "sum");
    const Tensor& A = a.value();
    double total = 0.0;
    for (double d : A.data) total += d;
    return g.emit("sum", {a}, Tensor::scalar(total), [](BackwardCtx& ctx) {
        double gv = ctx.out_grad()[0];
        if (auto da = ctx.parent_grad(0); !da.empty()) {
            for (double& d : da) d += gv;
        }
    });
}

Var mean(Var a) {
    Graph& g = graph_of(a, "mean");
    const Tensor& A = a.value();
    double total = 0.0;
    for (double d : A.data) total += d;
    double inv = 1.0 / static_cast<double>(A.numel());
    return g.emit("mean", {a}, Tensor::scalar(total * inv), [inv](BackwardCtx& ctx) {
        double gv = ctx.out_grad()[0] * inv;
        if (auto da = ctx.parent_grad(0); !da.empty()) {
            for (double& d : da) d += gv;
        }
    });
}

Var log_clamped(Var a, double floor) {
    Graph& g = graph_of(a, "log_clamped");
    if (!(floor > 0.0)) {
        throw DomainError("log_clamped floor must be positive");
    }
    Tensor out = a.value();
    long clamped = 0;
    for (double& d : out.data) {
        if (d < floor) {
            d = floor;
            ++clamped;
        }
        d = std::log(d);
    }
    out.grad.clear();
    if (clamped > 0) g.note_clamp(clamped);
    return g.emit("log_clamped", {a}, std::move(out), [floor](BackwardCtx& ctx) {
        const Tensor& A = ctx.parent_value(0);
        auto gout = ctx.out_grad();
        if (auto da = ctx.parent_grad(0); !da.empty()) {
            for (size_t i = 0; i < gout.size(); ++i) {
                if (A.data[i] > floor) da[i] += gout[i] / A.data[i];
            }
        }
    });
}

}  // namespace sta

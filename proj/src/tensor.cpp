#include "aflora/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>
#include <utility>

#include "aflora/errors.hpp"

namespace aflora {

int64_t numel(const Shape& shape) {
    int64_t n = 1;
    for (int64_t e : shape) n *= e;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

namespace {

void check_2d(const Tensor& t, const char* what) {
    if (t.shape().size() != 2) {
        throw DimensionError(std::string(what) + ": expected 2-d tensor, got " +
                             shape_str(t.shape()));
    }
}

double gelu_value(double x) {
    return 0.5 * x * (1.0 + std::erf(x * 0.7071067811865475244));
}

double gelu_derivative(double x) {
    constexpr double inv_sqrt_2pi = 0.3989422804014326779;
    return 0.5 * (1.0 + std::erf(x * 0.7071067811865475244)) +
           x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

}  // namespace

Tensor make_op_result(Shape shape, std::vector<double> value, std::vector<Tensor> parents,
                      std::function<void(detail::Node&)> backward) {
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    bool rg = false;
    for (const auto& p : parents) rg = rg || p.requires_grad();
    if (rg) {
        node->requires_grad = true;
        node->parents.reserve(parents.size());
        for (const auto& p : parents) node->parents.push_back(p.handle());
        node->backward = std::move(backward);
    }
    return Tensor(std::move(node));
}

// --- Tensor basics -----------------------------------------------------------

detail::Node& Tensor::n() const {
    if (!node_) throw ContractError("use of default-constructed Tensor");
    return *node_;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double fill, bool requires_grad) {
    auto node = std::make_shared<detail::Node>();
    node->value.assign(static_cast<size_t>(numel(shape)), fill);
    node->shape = std::move(shape);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
    if (numel(shape) != static_cast<int64_t>(data.size())) {
        throw DimensionError("from_data: shape " + shape_str(shape) + " needs " +
                             std::to_string(numel(shape)) + " values, got " +
                             std::to_string(data.size()));
    }
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->value = std::move(data);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(double v, bool requires_grad) {
    return from_data({1}, {v}, requires_grad);
}

Tensor Tensor::identity(int64_t n) {
    Tensor t = zeros({n, n});
    for (int64_t i = 0; i < n; ++i) t.values_mut()[static_cast<size_t>(i * n + i)] = 1.0;
    return t;
}

const Shape& Tensor::shape() const { return n().shape; }
int64_t Tensor::size() const { return static_cast<int64_t>(n().value.size()); }

int64_t Tensor::rows() const {
    check_2d(*this, "rows");
    return shape()[0];
}

int64_t Tensor::cols() const {
    check_2d(*this, "cols");
    return shape()[1];
}

double Tensor::item() const {
    if (size() != 1) {
        throw ContractError("item: tensor " + shape_str(shape()) + " is not a scalar");
    }
    return n().value[0];
}

double Tensor::at(int64_t i) const { return n().value.at(static_cast<size_t>(i)); }

double Tensor::at(int64_t r, int64_t c) const {
    check_2d(*this, "at");
    return n().value.at(static_cast<size_t>(r * shape()[1] + c));
}

std::span<const double> Tensor::values() const { return n().value; }
std::span<double> Tensor::values_mut() { return n().value; }

bool Tensor::requires_grad() const { return n().requires_grad; }
void Tensor::set_requires_grad(bool rg) {
    n().requires_grad = rg;
    if (!rg) n().grad.clear();
}

bool Tensor::has_grad() const { return n().grad.size() == n().value.size(); }

std::span<const double> Tensor::grad() const {
    if (!has_grad()) {
        throw ContractError("grad: no gradient buffer present (requires_grad=" +
                            std::string(requires_grad() ? "true" : "false") + ")");
    }
    return n().grad;
}

void Tensor::zero_grad() { n().grad.clear(); }

void Tensor::backward() const {
    detail::Node* root = &n();
    if (root->value.size() != 1) {
        throw ContractError("backward: loss must be scalar, got " + shape_str(root->shape));
    }

    // Post-order DFS; parent order is fixed, so the topological order (and
    // with it every accumulation order) is deterministic.
    std::vector<detail::Node*> topo;
    std::unordered_set<detail::Node*> visited;
    std::vector<std::pair<detail::Node*, size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
        auto& [node, next_child] = stack.back();
        if (next_child < node->parents.size()) {
            detail::Node* p = node->parents[next_child++].get();
            if (visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            topo.push_back(node);
            stack.pop_back();
        }
    }

    // Interior grads are scratch for this pass; only leaves persist, so that
    // repeated backward calls accumulate exactly one extra contribution.
    for (detail::Node* node : topo) {
        if (node->backward) {
            node->grad.assign(node->value.size(), 0.0);
        } else if (node->requires_grad) {
            node->ensure_grad();
        }
    }
    root->ensure_grad();
    root->grad[0] += 1.0;

    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        // topo is post-order, so iterating the reverse visits every node
        // before any of its parents.
        if ((*it)->backward) (*it)->backward(**it);
    }
}

// --- ops ---------------------------------------------------------------------

namespace {

void accumulate(detail::Node& target, size_t index, double v) {
    if (!target.requires_grad) return;
    target.ensure_grad();
    target.grad[index] += v;
}

bool wants_grad(const detail::Node& node) { return node.requires_grad; }

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_2d(a, "matmul lhs");
    check_2d(b, "matmul rhs");
    const int64_t m = a.shape()[0], k = a.shape()[1];
    const int64_t k2 = b.shape()[0], n = b.shape()[1];
    if (k != k2) {
        throw DimensionError("matmul: inner extents differ, lhs " + shape_str(a.shape()) +
                             " vs rhs " + shape_str(b.shape()));
    }

    std::vector<double> out(static_cast<size_t>(m * n), 0.0);
    const double* av = a.values().data();
    const double* bv = b.values().data();
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t kk = 0; kk < k; ++kk) {
            const double aik = av[i * k + kk];
            const double* brow = bv + kk * n;
            double* orow = out.data() + i * n;
            for (int64_t j = 0; j < n; ++j) orow[j] += aik * brow[j];
        }
    }

    auto an = a.handle();
    auto bn = b.handle();
    return make_op_result(
        {m, n}, std::move(out), {a, b}, [an, bn, m, k, n](detail::Node& self) {
            const double* g = self.grad.data();
            if (wants_grad(*an)) {
                an->ensure_grad();
                // dA[i,kk] += sum_j dC[i,j] * B[kk,j]
                for (int64_t i = 0; i < m; ++i) {
                    for (int64_t kk = 0; kk < k; ++kk) {
                        double acc = 0.0;
                        const double* grow = g + i * n;
                        const double* brow = bn->value.data() + kk * n;
                        for (int64_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                        an->grad[i * k + kk] += acc;
                    }
                }
            }
            if (wants_grad(*bn)) {
                bn->ensure_grad();
                // dB[kk,j] += sum_i A[i,kk] * dC[i,j]
                for (int64_t kk = 0; kk < k; ++kk) {
                    for (int64_t i = 0; i < m; ++i) {
                        const double aik = an->value[i * k + kk];
                        const double* grow = g + i * n;
                        double* brow = bn->grad.data() + kk * n;
                        for (int64_t j = 0; j < n; ++j) brow[j] += aik * grow[j];
                    }
                }
            }
        });
}

namespace {

enum class BinKind { Add, Sub, Mul };

Tensor binary_elementwise(const Tensor& a, const Tensor& b, BinKind kind, const char* name) {
    const bool a_scalar = a.size() == 1;
    const bool b_scalar = b.size() == 1;
    if (!a_scalar && !b_scalar && a.shape() != b.shape()) {
        throw DimensionError(std::string(name) + ": incompatible shapes " +
                             shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    const Shape& out_shape = a_scalar && !b_scalar ? b.shape() : a.shape();
    const size_t count = static_cast<size_t>(numel(out_shape));

    std::vector<double> out(count);
    const double* av = a.values().data();
    const double* bv = b.values().data();
    for (size_t i = 0; i < count; ++i) {
        const double x = av[a_scalar ? 0 : i];
        const double y = bv[b_scalar ? 0 : i];
        switch (kind) {
            case BinKind::Add: out[i] = x + y; break;
            case BinKind::Sub: out[i] = x - y; break;
            case BinKind::Mul: out[i] = x * y; break;
        }
    }

    auto an = a.handle();
    auto bn = b.handle();
    return make_op_result(
        out_shape, std::move(out), {a, b},
        [an, bn, kind, a_scalar, b_scalar, count](detail::Node& self) {
            const double* g = self.grad.data();
            for (size_t i = 0; i < count; ++i) {
                const double x = an->value[a_scalar ? 0 : i];
                const double y = bn->value[b_scalar ? 0 : i];
                double da = 0.0, db = 0.0;
                switch (kind) {
                    case BinKind::Add: da = g[i]; db = g[i]; break;
                    case BinKind::Sub: da = g[i]; db = -g[i]; break;
                    case BinKind::Mul: da = g[i] * y; db = g[i] * x; break;
                }
                accumulate(*an, a_scalar ? 0 : i, da);
                accumulate(*bn, b_scalar ? 0 : i, db);
            }
        });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_elementwise(a, b, BinKind::Add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_elementwise(a, b, BinKind::Sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_elementwise(a, b, BinKind::Mul, "mul"); }

Tensor scale_by_vector_rows(const Tensor& v, const Tensor& m) {
    check_2d(m, "scale_by_vector_rows");
    const int64_t rows = m.shape()[0], cols = m.shape()[1];
    if (v.size() != rows) {
        throw DimensionError("scale_by_vector_rows: vector length " + std::to_string(v.size()) +
                             " != row count of " + shape_str(m.shape()));
    }
    std::vector<double> out(static_cast<size_t>(rows * cols));
    const double* vv = v.values().data();
    const double* mv = m.values().data();
    for (int64_t i = 0; i < rows; ++i)
        for (int64_t j = 0; j < cols; ++j) out[i * cols + j] = vv[i] * mv[i * cols + j];

    auto vn = v.handle();
    auto mn = m.handle();
    return make_op_result(
        m.shape(), std::move(out), {v, m}, [vn, mn, rows, cols](detail::Node& self) {
            const double* g = self.grad.data();
            if (wants_grad(*vn)) {
                vn->ensure_grad();
                for (int64_t i = 0; i < rows; ++i) {
                    double acc = 0.0;
                    for (int64_t j = 0; j < cols; ++j) acc += g[i * cols + j] * mn->value[i * cols + j];
                    vn->grad[i] += acc;
                }
            }
            if (wants_grad(*mn)) {
                mn->ensure_grad();
                for (int64_t i = 0; i < rows; ++i)
                    for (int64_t j = 0; j < cols; ++j)
                        mn->grad[i * cols + j] += g[i * cols + j] * vn->value[i];
            }
        });
}

Tensor add_bias_rows(const Tensor& m, const Tensor& bias) {
    check_2d(m, "add_bias_rows");
    const int64_t rows = m.shape()[0], cols = m.shape()[1];
    if (bias.size() != rows) {
        throw DimensionError("add_bias_rows: bias length " + std::to_string(bias.size()) +
                             " != row count of " + shape_str(m.shape()));
    }
    std::vector<double> out(static_cast<size_t>(rows * cols));
    for (int64_t i = 0; i < rows; ++i)
        for (int64_t j = 0; j < cols; ++j)
            out[i * cols + j] = m.values()[i * cols + j] + bias.values()[i];

    auto mn = m.handle();
    auto bn = bias.handle();
    return make_op_result(
        m.shape(), std::move(out), {m, bias}, [mn, bn, rows, cols](detail::Node& self) {
            const double* g = self.grad.data();
            if (wants_grad(*mn)) {
                mn->ensure_grad();
                for (size_t i = 0; i < mn->grad.size(); ++i) mn->grad[i] += g[i];
            }
            if (wants_grad(*bn)) {
                bn->ensure_grad();
                for (int64_t i = 0; i < rows; ++i) {
                    double acc = 0.0;
                    for (int64_t j = 0; j < cols; ++j) acc += g[i * cols + j];
                    bn->grad[i] += acc;
                }
            }
        });
}

namespace {

Tensor unary_elementwise(const Tensor& x, double (*f)(double), double (*df)(double)) {
    std::vector<double> out(x.values().begin(), x.values().end());
    for (double& v : out) v = f(v);
    auto xn = x.handle();
    return make_op_result(x.shape(), std::move(out), {x}, [xn, df](detail::Node& self) {
        if (!wants_grad(*xn)) return;
        xn->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i)
            xn->grad[i] += self.grad[i] * df(xn->value[i]);
    });
}

}  // namespace

Tensor relu(const Tensor& x) {
    return unary_elementwise(
        x, [](double v) { return v > 0.0 ? v : 0.0; },
        [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
    return unary_elementwise(x, &gelu_value, &gelu_derivative);
}

Tensor scale(const Tensor& x, double c) {
    std::vector<double> out(x.values().begin(), x.values().end());
    for (double& v : out) v *= c;
    auto xn = x.handle();
    return make_op_result(x.shape(), std::move(out), {x}, [xn, c](detail::Node& self) {
        if (!wants_grad(*xn)) return;
        xn->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i] * c;
    });
}

Tensor sum(const Tensor& x) {
    double acc = 0.0;
    for (double v : x.values()) acc += v;
    auto xn = x.handle();
    return make_op_result({1}, {acc}, {x}, [xn](detail::Node& self) {
        if (!wants_grad(*xn)) return;
        xn->ensure_grad();
        const double g = self.grad[0];
        for (double& gv : xn->grad) gv += g;
    });
}

Tensor transpose(const Tensor& x) {
    check_2d(x, "transpose");
    const int64_t r = x.shape()[0], c = x.shape()[1];
    std::vector<double> out(static_cast<size_t>(r * c));
    for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < c; ++j) out[j * r + i] = x.values()[i * c + j];
    auto xn = x.handle();
    return make_op_result({c, r}, std::move(out), {x}, [xn, r, c](detail::Node& self) {
        if (!wants_grad(*xn)) return;
        xn->ensure_grad();
        for (int64_t i = 0; i < r; ++i)
            for (int64_t j = 0; j < c; ++j) xn->grad[i * c + j] += self.grad[j * r + i];
    });
}

Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    check_2d(logits, "softmax_cross_entropy");
    const int64_t batch = logits.shape()[0], classes = logits.shape()[1];
    if (static_cast<int64_t>(labels.size()) != batch) {
        throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                             " labels for batch " + std::to_string(batch));
    }
    for (int label : labels) {
        if (label < 0 || label >= classes) {
            throw IndexError("softmax_cross_entropy: label " + std::to_string(label) +
                             " outside [0, " + std::to_string(classes) + ")");
        }
    }

    auto probs = std::make_shared<std::vector<double>>(static_cast<size_t>(batch * classes));
    double loss = 0.0;
    for (int64_t i = 0; i < batch; ++i) {
        const double* row = logits.values().data() + i * classes;
        double mx = row[0];
        for (int64_t j = 1; j < classes; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (int64_t j = 0; j < classes; ++j) denom += std::exp(row[j] - mx);
        const double log_denom = std::log(denom) + mx;
        for (int64_t j = 0; j < classes; ++j)
            (*probs)[i * classes + j] = std::exp(row[j] - log_denom);
        loss += log_denom - row[labels[static_cast<size_t>(i)]];
    }
    loss /= static_cast<double>(batch);

    auto ln = logits.handle();
    return make_op_result({1}, {loss}, {logits}, [ln, labels, probs, batch, classes](detail::Node& self) {
        if (!wants_grad(*ln)) return;
        ln->ensure_grad();
        const double g = self.grad[0] / static_cast<double>(batch);
        for (int64_t i = 0; i < batch; ++i) {
            for (int64_t j = 0; j < classes; ++j) {
                double p = (*probs)[i * classes + j];
                if (j == labels[static_cast<size_t>(i)]) p -= 1.0;
                ln->grad[i * classes + j] += g * p;
            }
        }
    });
}

Tensor embedding_lookup(const Tensor& table, const std::vector<int>& tokens) {
    check_2d(table, "embedding_lookup");
    const int64_t vocab = table.shape()[0], d = table.shape()[1];
    const int64_t n = static_cast<int64_t>(tokens.size());
    for (int tok : tokens) {
        if (tok < 0 || tok >= vocab) {
            throw IndexError("embedding_lookup: token " + std::to_string(tok) +
                             " outside [0, " + std::to_string(vocab) + ")");
        }
    }
    std::vector<double> out(static_cast<size_t>(d * n));
    for (int64_t t = 0; t < n; ++t) {
        const double* row = table.values().data() + int64_t{tokens[static_cast<size_t>(t)]} * d;
        for (int64_t i = 0; i < d; ++i) out[i * n + t] = row[i];
    }
    auto tn = table.handle();
    return make_op_result({d, n}, std::move(out), {table}, [tn, tokens, d, n](detail::Node& self) {
        if (!wants_grad(*tn)) return;
        tn->ensure_grad();
        for (int64_t t = 0; t < n; ++t) {
            double* row = tn->grad.data() + int64_t{tokens[static_cast<size_t>(t)]} * d;
            for (int64_t i = 0; i < d; ++i) row[i] += self.grad[i * n + t];
        }
    });
}

Tensor add_position_tiled(const Tensor& x, const Tensor& pos, int64_t batch, int64_t seq) {
    check_2d(x, "add_position_tiled");
    check_2d(pos, "add_position_tiled positions");
    const int64_t d = x.shape()[0];
    if (x.shape()[1] != batch * seq || pos.shape()[0] != d || pos.shape()[1] < seq) {
        throw DimensionError("add_position_tiled: x " + shape_str(x.shape()) + ", pos " +
                             shape_str(pos.shape()) + " with batch " + std::to_string(batch) +
                             " seq " + std::to_string(seq));
    }
    const int64_t n = batch * seq;
    const int64_t pos_cols = pos.shape()[1];
    std::vector<double> out(static_cast<size_t>(d * n));
    for (int64_t i = 0; i < d; ++i)
        for (int64_t b = 0; b < batch; ++b)
            for (int64_t s = 0; s < seq; ++s)
                out[i * n + b * seq + s] = x.values()[i * n + b * seq + s] + pos.values()[i * pos_cols + s];

    auto xn = x.handle();
    auto pn = pos.handle();
    return make_op_result(
        x.shape(), std::move(out), {x, pos}, [xn, pn, d, batch, seq, n, pos_cols](detail::Node& self) {
            if (wants_grad(*xn)) {
                xn->ensure_grad();
                for (size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += self.grad[i];
            }
            if (wants_grad(*pn)) {
                pn->ensure_grad();
                for (int64_t i = 0; i < d; ++i)
                    for (int64_t b = 0; b < batch; ++b)
                        for (int64_t s = 0; s < seq; ++s)
                            pn->grad[i * pos_cols + s] += self.grad[i * n + b * seq + s];
            }
        });
}

Tensor select_columns(const Tensor& x, const std::vector<int64_t>& idx) {
    check_2d(x, "select_columns");
    const int64_t rows = x.shape()[0], cols = x.shape()[1];
    for (int64_t j : idx) {
        if (j < 0 || j >= cols) {
            throw IndexError("select_columns: column " + std::to_string(j) + " outside [0, " +
                             std::to_string(cols) + ")");
        }
    }
    const int64_t m = static_cast<int64_t>(idx.size());
    std::vector<double> out(static_cast<size_t>(rows * m));
    for (int64_t i = 0; i < rows; ++i)
        for (int64_t j = 0; j < m; ++j) out[i * m + j] = x.values()[i * cols + idx[static_cast<size_t>(j)]];
    auto xn = x.handle();
    return make_op_result({rows, m}, std::move(out), {x}, [xn, idx, rows, cols, m](detail::Node& self) {
        if (!wants_grad(*xn)) return;
        xn->ensure_grad();
        for (int64_t i = 0; i < rows; ++i)
            for (int64_t j = 0; j < m; ++j)
                xn->grad[i * cols + idx[static_cast<size_t>(j)]] += self.grad[i * m + j];
    });
}

Tensor layer_norm_cols(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    check_2d(x, "layer_norm_cols");
    const int64_t d = x.shape()[0], n = x.shape()[1];
    if (gamma.size() != d || beta.size() != d) {
        throw DimensionError("layer_norm_cols: gamma/beta length must equal feature dim " +
                             std::to_string(d));
    }
    auto xhat = std::make_shared<std::vector<double>>(static_cast<size_t>(d * n));
    auto inv_std = std::make_shared<std::vector<double>>(static_cast<size_t>(n));
    std::vector<double> out(static_cast<size_t>(d * n));
    const double* xv = x.values().data();
    for (int64_t j = 0; j < n; ++j) {
        double mean = 0.0;
        for (int64_t i = 0; i < d; ++i) mean += xv[i * n + j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (int64_t i = 0; i < d; ++i) {
            const double c = xv[i * n + j] - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[static_cast<size_t>(j)] = is;
        for (int64_t i = 0; i < d; ++i) {
            const double h = (xv[i * n + j] - mean) * is;
            (*xhat)[i * n + j] = h;
            out[i * n + j] = gamma.values()[i] * h + beta.values()[i];
        }
    }

    auto xn = x.handle();
    auto gn = gamma.handle();
    auto bn = beta.handle();
    return make_op_result(
        x.shape(), std::move(out), {x, gamma, beta},
        [xn, gn, bn, xhat, inv_std, d, n](detail::Node& self) {
            const double* g = self.grad.data();
            if (wants_grad(*gn)) {
                gn->ensure_grad();
                for (int64_t i = 0; i < d; ++i) {
                    double acc = 0.0;
                    for (int64_t j = 0; j < n; ++j) acc += g[i * n + j] * (*xhat)[i * n + j];
                    gn->grad[i] += acc;
                }
            }
            if (wants_grad(*bn)) {
                bn->ensure_grad();
                for (int64_t i = 0; i < d; ++i) {
                    double acc = 0.0;
                    for (int64_t j = 0; j < n; ++j) acc += g[i * n + j];
                    bn->grad[i] += acc;
                }
            }
            if (wants_grad(*xn)) {
                xn->ensure_grad();
                for (int64_t j = 0; j < n; ++j) {
                    double mean_dy = 0.0, mean_dy_xhat = 0.0;
                    for (int64_t i = 0; i < d; ++i) {
                        const double dy = g[i * n + j] * gn->value[i];
                        mean_dy += dy;
                        mean_dy_xhat += dy * (*xhat)[i * n + j];
                    }
                    mean_dy /= static_cast<double>(d);
                    mean_dy_xhat /= static_cast<double>(d);
                    const double is = (*inv_std)[static_cast<size_t>(j)];
                    for (int64_t i = 0; i < d; ++i) {
                        const double dy = g[i * n + j] * gn->value[i];
                        xn->grad[i * n + j] +=
                            is * (dy - mean_dy - (*xhat)[i * n + j] * mean_dy_xhat);
                    }
                }
            }
        });
}

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            int64_t n_heads, int64_t batch, int64_t seq) {
    check_2d(q, "attention q");
    check_2d(k, "attention k");
    check_2d(v, "attention v");
    const int64_t d = q.shape()[0];
    const int64_t n = batch * seq;
    if (q.shape() != k.shape() || q.shape() != v.shape() || q.shape()[1] != n) {
        throw DimensionError("multi_head_attention: q " + shape_str(q.shape()) + ", k " +
                             shape_str(k.shape()) + ", v " + shape_str(v.shape()) +
                             " with batch*seq " + std::to_string(n));
    }
    if (d % n_heads != 0) {
        throw DimensionError("multi_head_attention: d_model " + std::to_string(d) +
                             " not divisible by n_heads " + std::to_string(n_heads));
    }
    const int64_t dh = d / n_heads;
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));

    // attn[(b*H + h)*seq*seq + i*seq + j]: weight of key j for query i.
    auto attn = std::make_shared<std::vector<double>>(static_cast<size_t>(batch * n_heads * seq * seq));
    std::vector<double> out(static_cast<size_t>(d * n), 0.0);
    const double* qv = q.values().data();
    const double* kv = k.values().data();
    const double* vv = v.values().data();

    for (int64_t b = 0; b < batch; ++b) {
        for (int64_t h = 0; h < n_heads; ++h) {
            double* p = attn->data() + (b * n_heads + h) * seq * seq;
            for (int64_t i = 0; i < seq; ++i) {
                double* prow = p + i * seq;
                double mx = -1e300;
                for (int64_t j = 0; j < seq; ++j) {
                    double s = 0.0;
                    for (int64_t r = 0; r < dh; ++r)
                        s += qv[(h * dh + r) * n + b * seq + i] * kv[(h * dh + r) * n + b * seq + j];
                    prow[j] = s * inv_scale;
                    mx = std::max(mx, prow[j]);
                }
                double denom = 0.0;
                for (int64_t j = 0; j < seq; ++j) {
                    prow[j] = std::exp(prow[j] - mx);
                    denom += prow[j];
                }
                for (int64_t j = 0; j < seq; ++j) prow[j] /= denom;
                for (int64_t r = 0; r < dh; ++r) {
                    double acc = 0.0;
                    for (int64_t j = 0; j < seq; ++j) acc += prow[j] * vv[(h * dh + r) * n + b * seq + j];
                    out[(h * dh + r) * n + b * seq + i] = acc;
                }
            }
        }
    }

    auto qn = q.handle();
    auto kn = k.handle();
    auto vn = v.handle();
    return make_op_result(
        q.shape(), std::move(out), {q, k, v},
        [qn, kn, vn, attn, n_heads, batch, seq, dh, n, inv_scale](detail::Node& self) {
            const bool need_q = wants_grad(*qn), need_k = wants_grad(*kn), need_v = wants_grad(*vn);
            if (need_q) qn->ensure_grad();
            if (need_k) kn->ensure_grad();
            if (need_v) vn->ensure_grad();
            const double* g = self.grad.data();
            std::vector<double> dp(static_cast<size_t>(seq));
            for (int64_t b = 0; b < batch; ++b) {
                for (int64_t h = 0; h < n_heads; ++h) {
                    const double* p = attn->data() + (b * n_heads + h) * seq * seq;
                    for (int64_t i = 0; i < seq; ++i) {
                        const double* prow = p + i * seq;
                        // dP[i,j] = dO[:,i] . V[:,j]; dV[:,j] += P[i,j] dO[:,i]
                        for (int64_t j = 0; j < seq; ++j) {
                            double acc = 0.0;
                            for (int64_t r = 0; r < dh; ++r)
                                acc += g[(h * dh + r) * n + b * seq + i] * vn->value[(h * dh + r) * n + b * seq + j];
                            dp[static_cast<size_t>(j)] = acc;
                        }
                        if (need_v) {
                            for (int64_t j = 0; j < seq; ++j) {
                                const double pij = prow[j];
                                for (int64_t r = 0; r < dh; ++r)
                                    vn->grad[(h * dh + r) * n + b * seq + j] +=
                                        pij * g[(h * dh + r) * n + b * seq + i];
                            }
                        }
                        if (!need_q && !need_k) continue;
                        // softmax backward: dS[i,:] = (dP - (dP . P)) * P, then scale
                        double dot = 0.0;
                        for (int64_t j = 0; j < seq; ++j) dot += dp[static_cast<size_t>(j)] * prow[j];
                        for (int64_t j = 0; j < seq; ++j) {
                            const double ds = (dp[static_cast<size_t>(j)] - dot) * prow[j] * inv_scale;
                            if (need_q) {
                                for (int64_t r = 0; r < dh; ++r)
                                    qn->grad[(h * dh + r) * n + b * seq + i] +=
                                        ds * kn->value[(h * dh + r) * n + b * seq + j];
                            }
                            if (need_k) {
                                for (int64_t r = 0; r < dh; ++r)
                                    kn->grad[(h * dh + r) * n + b * seq + j] +=
                                        ds * qn->value[(h * dh + r) * n + b * seq + i];
                            }
                        }
                    }
                }
            }
        });
}

Tensor init_kaiming_uniform(int64_t rows, int64_t cols, int64_t fan_in, SeededRng& rng,
                            bool requires_grad) {
    if (fan_in <= 0) {
        throw ContractError("init_kaiming_uniform: fan_in must be positive, got " +
                            std::to_string(fan_in));
    }
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::vector<double> data(static_cast<size_t>(rows * cols));
    for (double& v : data) v = rng.uniform(-bound, bound);
    return Tensor::from_data({rows, cols}, std::move(data), requires_grad);
}

Tensor init_backbone_uniform(int64_t rows, int64_t cols, int64_t fan_in, SeededRng& rng) {
    if (fan_in <= 0) {
        throw ContractError("init_backbone_uniform: fan_in must be positive, got " +
                            std::to_string(fan_in));
    }
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<double> data(static_cast<size_t>(rows * cols));
    for (double& v : data) v = rng.uniform(-bound, bound);
    return Tensor::from_data({rows, cols}, std::move(data), false);
}

}  // namespace aflora

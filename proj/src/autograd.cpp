#include "camf/autograd.hpp"

#include <cmath>

#include "camf/error.hpp"
#include "camf/rng.hpp"

namespace camf {

const Tensor& Var::value() const {
    if (!tape_) {
        throw InvalidInput("value() on an unbound Var");
    }
    return tape_->value(id_);
}

Var Tape::push(Node node) {
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
    Node n;
    n.owned = std::move(value);
    return push(std::move(n));
}

Var Tape::variable(Tensor value) {
    Node n;
    n.owned = std::move(value);
    n.requires_grad = true;
    return push(std::move(n));
}

Var Tape::parameter(const Tensor& external) {
    Node n;
    n.external = &external;
    n.requires_grad = true;
    return push(std::move(n));
}

Var Tape::record(Tensor value, std::initializer_list<Var> parents, BackwardFn fn) {
    return record(std::move(value), std::vector<Var>(parents), std::move(fn));
}

Var Tape::record(Tensor value, const std::vector<Var>& parents, BackwardFn fn) {
    Node n;
    n.owned = std::move(value);
    for (const auto& p : parents) {
        if (p.tape() != this) {
            throw InvalidInput("operands recorded on different tapes");
        }
        n.requires_grad = n.requires_grad || nodes_[p.id()].requires_grad;
    }
    if (n.requires_grad) {
        n.backward = std::move(fn);
    }
    return push(std::move(n));
}

const Tensor& Tape::value(std::size_t id) const { return nodes_.at(id).value(); }

Tensor* Tape::grad_target(Var v) {
    Node& n = nodes_.at(v.id());
    if (!n.requires_grad) {
        return nullptr;
    }
    if (n.grad.empty()) {
        n.grad = Tensor(n.value().shape(), 0.0);
    }
    return &n.grad;
}

Tensor Tape::grad(Var v) const {
    const Node& n = nodes_.at(v.id());
    if (n.grad.empty()) {
        return Tensor(n.value().shape(), 0.0);
    }
    return n.grad;
}

void Tape::backward(Var loss) {
    if (loss.tape() != this) {
        throw InvalidInput("backward: loss belongs to another tape");
    }
    if (loss.value().size() != 1) {
        throw InvalidShape("backward: loss must be a scalar, got " +
                           shape_string(loss.value().shape()));
    }
    for (auto& n : nodes_) {
        n.grad = Tensor();
    }
    order_.clear();
    if (Tensor* g = grad_target(loss)) {
        g->fill(1.0);
    }
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
        order_.push_back(i);
        Node& n = nodes_[i];
        if (n.backward && !n.grad.empty()) {
            const Tensor out_grad = n.grad;
            n.backward(*this, n.value(), out_grad);
        }
    }
}

ParamBinding::ParamBinding(Tape& tape, const ParamStore& params) : tape_(&tape) {
    for (const auto& [name, tensor] : params) {
        vars_.emplace(name, tape.parameter(tensor));
    }
}

Var ParamBinding::operator[](const std::string& name) const {
    auto it = vars_.find(name);
    if (it == vars_.end()) {
        throw InvalidInput("unknown parameter '" + name + "'");
    }
    return it->second;
}

std::vector<std::string> ParamBinding::names() const {
    std::vector<std::string> out;
    out.reserve(vars_.size());
    for (const auto& kv : vars_) {
        out.push_back(kv.first);
    }
    return out;
}

Gradients ParamBinding::gradients() const {
    Gradients out;
    for (const auto& [name, var] : vars_) {
        out.emplace(name, tape_->grad(var));
    }
    return out;
}

namespace ag {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw InvalidShape(std::string(op) + ": " + shape_string(a.shape()) + " vs " +
                           shape_string(b.shape()));
    }
}

}  // namespace

Var add(Var a, Var b) {
    require_same_shape(a.value(), b.value(), "add");
    Tensor out = a.value();
    add_inplace(out, b.value());
    return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor&, const Tensor& g) {
        if (Tensor* ga = t.grad_target(a)) add_inplace(*ga, g);
        if (Tensor* gb = t.grad_target(b)) add_inplace(*gb, g);
    });
}

Var add_row(Var x, Var bias) {
    const Tensor& xv = x.value();
    const Tensor& bv = bias.value();
    if (bv.size() != xv.cols()) {
        throw InvalidShape("add_row: bias " + shape_string(bv.shape()) + " vs " +
                           shape_string(xv.shape()));
    }
    Tensor out = xv;
    for (std::size_t r = 0; r < out.rows(); ++r) {
        auto row = out.row(r);
        for (std::size_t j = 0; j < row.size(); ++j) {
            row[j] += bv[j];
        }
    }
    return x.tape()->record(std::move(out), {x, bias}, [x, bias](Tape& t, const Tensor&, const Tensor& g) {
        if (Tensor* gx = t.grad_target(x)) add_inplace(*gx, g);
        if (Tensor* gb = t.grad_target(bias)) {
            for (std::size_t r = 0; r < g.rows(); ++r) {
                auto row = g.row(r);
                for (std::size_t j = 0; j < row.size(); ++j) {
                    (*gb)[j] += row[j];
                }
            }
        }
    });
}

Var scale(Var x, double factor) {
    Tensor out = x.value();
    for (double& v : out.data()) {
        v *= factor;
    }
    return x.tape()->record(std::move(out), {x}, [x, factor](Tape& t, const Tensor&, const Tensor& g) {
        if (Tensor* gx = t.grad_target(x)) axpy_inplace(*gx, factor, g);
    });
}

Var mul(Var a, Var b) {
    require_same_shape(a.value(), b.value(), "mul");
    Tensor out = a.value();
    const auto bv = b.value().data();
    auto o = out.data();
    for (std::size_t i = 0; i < o.size(); ++i) {
        o[i] *= bv[i];
    }
    return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor&, const Tensor& g) {
        const auto av = a.value().data();
        const auto bv = b.value().data();
        if (Tensor* ga = t.grad_target(a)) {
            for (std::size_t i = 0; i < av.size(); ++i) (*ga)[i] += g[i] * bv[i];
        }
        if (Tensor* gb = t.grad_target(b)) {
            for (std::size_t i = 0; i < av.size(); ++i) (*gb)[i] += g[i] * av[i];
        }
    });
}

Var matmul(Var a, Var b) {
    Tensor out = camf::matmul(a.value(), b.value());
    return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor&, const Tensor& g) {
        if (Tensor* ga = t.grad_target(a)) add_inplace(*ga, camf::matmul_nt(g, b.value()));
        if (Tensor* gb = t.grad_target(b)) add_inplace(*gb, camf::matmul_tn(a.value(), g));
    });
}

Var matmul_nt(Var a, Var b) {
    Tensor out = camf::matmul_nt(a.value(), b.value());
    return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor&, const Tensor& g) {
        // out = a b^T: d a = g b, d b = g^T a
        if (Tensor* ga = t.grad_target(a)) add_inplace(*ga, camf::matmul(g, b.value()));
        if (Tensor* gb = t.grad_target(b)) add_inplace(*gb, camf::matmul_tn(g, a.value()));
    });
}

Var gelu(Var x) {
    Tensor out = x.value();
    for (double& v : out.data()) {
        v = camf::gelu(v);
    }
    return x.tape()->record(std::move(out), {x}, [x](Tape& t, const Tensor&, const Tensor& g) {
        if (Tensor* gx = t.grad_target(x)) {
            const auto xv = x.value().data();
            for (std::size_t i = 0; i < xv.size(); ++i) {
                (*gx)[i] += g[i] * gelu_grad(xv[i]);
            }
        }
    });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
    LayerNormCache cache;
    Tensor out = layer_norm_rows(x.value(), gain.value(), bias.value(), eps, &cache);
    return x.tape()->record(
        std::move(out), {x, gain, bias},
        [x, gain, bias, cache = std::move(cache)](Tape& t, const Tensor&, const Tensor& g) {
            const Tensor& xv = x.value();
            const Tensor& gv = gain.value();
            const std::size_t n = xv.cols();
            Tensor* gx = t.grad_target(x);
            Tensor* gg = t.grad_target(gain);
            Tensor* gb = t.grad_target(bias);
            std::vector<double> xhat(n), dxhat(n);
            for (std::size_t r = 0; r < xv.rows(); ++r) {
                const auto in = xv.row(r);
                const auto go = g.row(r);
                const double mean = cache.mean[r];
                const double rstd = cache.rstd[r];
                double sum_d = 0.0, sum_dx = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                    xhat[j] = (in[j] - mean) * rstd;
                    dxhat[j] = go[j] * gv[j];
                    sum_d += dxhat[j];
                    sum_dx += dxhat[j] * xhat[j];
                    if (gg) (*gg)[j] += go[j] * xhat[j];
                    if (gb) (*gb)[j] += go[j];
                }
                if (gx) {
                    auto dst = gx->row(r);
                    const double inv_n = 1.0 / static_cast<double>(n);
                    for (std::size_t j = 0; j < n; ++j) {
                        dst[j] += rstd * (dxhat[j] - inv_n * sum_d - xhat[j] * inv_n * sum_dx);
                    }
                }
            }
        });
}

Var softmax_rows(Var x, bool causal) {
    Tensor out = camf::softmax_rows(x.value(), causal);
    return x.tape()->record(std::move(out), {x}, [x](Tape& t, const Tensor& p, const Tensor& g) {
        Tensor* gx = t.grad_target(x);
        if (!gx) return;
        for (std::size_t r = 0; r < p.rows(); ++r) {
            const auto pr = p.row(r);
            const auto gr = g.row(r);
            double dotp = 0.0;
            for (std::size_t j = 0; j < pr.size(); ++j) {
                dotp += pr[j] * gr[j];
            }
            auto dst = gx->row(r);
            for (std::size_t j = 0; j < pr.size(); ++j) {
                dst[j] += pr[j] * (gr[j] - dotp);
            }
        }
    });
}

Var slice_cols(Var x, std::size_t start, std::size_t count) {
    const Tensor& xv = x.value();
    if (xv.rank() != 2 || start + count > xv.cols() || count == 0) {
        throw InvalidShape("slice_cols: [" + std::to_string(start) + ", +" +
                           std::to_string(count) + ") out of " + shape_string(xv.shape()));
    }
    Tensor out({xv.rows(), count});
    for (std::size_t r = 0; r < xv.rows(); ++r) {
        for (std::size_t j = 0; j < count; ++j) {
            out.at(r, j) = xv.at(r, start + j);
        }
    }
    return x.tape()->record(std::move(out), {x},
                            [x, start, count](Tape& t, const Tensor&, const Tensor& g) {
                                Tensor* gx = t.grad_target(x);
                                if (!gx) return;
                                for (std::size_t r = 0; r < g.rows(); ++r) {
                                    for (std::size_t j = 0; j < count; ++j) {
                                        gx->at(r, start + j) += g.at(r, j);
                                    }
                                }
                            });
}

Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) {
        throw InvalidShape("concat_cols: no inputs");
    }
    const std::size_t rows = parts.front().value().rows();
    std::size_t cols = 0;
    for (const auto& p : parts) {
        if (p.value().rank() != 2 || p.value().rows() != rows) {
            throw InvalidShape("concat_cols: row mismatch");
        }
        cols += p.value().cols();
    }
    Tensor out({rows, cols});
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const Tensor& pv = p.value();
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < pv.cols(); ++j) {
                out.at(r, offset + j) = pv.at(r, j);
            }
        }
        offset += pv.cols();
    }
    return parts.front().tape()->record(
        std::move(out), parts, [parts](Tape& t, const Tensor&, const Tensor& g) {
            std::size_t off = 0;
            for (const auto& p : parts) {
                const std::size_t c = p.value().cols();
                if (Tensor* gp = t.grad_target(p)) {
                    for (std::size_t r = 0; r < g.rows(); ++r) {
                        for (std::size_t j = 0; j < c; ++j) {
                            gp->at(r, j) += g.at(r, off + j);
                        }
                    }
                }
                off += c;
            }
        });
}

Var gather_rows(Var table, std::span<const int> ids) {
    const Tensor& tv = table.value();
    if (ids.empty()) {
        throw InvalidShape("gather_rows: empty id list");
    }
    const std::size_t width = tv.cols();
    Tensor out({ids.size(), width});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= tv.rows()) {
            throw IndexError("gather_rows: id " + std::to_string(ids[i]) + " outside table of " +
                             std::to_string(tv.rows()) + " rows");
        }
        const auto src = tv.row(static_cast<std::size_t>(ids[i]));
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    std::vector<int> idv(ids.begin(), ids.end());
    return table.tape()->record(std::move(out), {table},
                                [table, idv](Tape& t, const Tensor&, const Tensor& g) {
                                    Tensor* gt = t.grad_target(table);
                                    if (!gt) return;
                                    for (std::size_t i = 0; i < idv.size(); ++i) {
                                        auto dst = gt->row(static_cast<std::size_t>(idv[i]));
                                        const auto src = g.row(i);
                                        for (std::size_t j = 0; j < dst.size(); ++j) {
                                            dst[j] += src[j];
                                        }
                                    }
                                });
}

Var dropout(Var x, double p, Rng& rng) {
    if (p <= 0.0) {
        return x;
    }
    if (p >= 1.0) {
        throw InvalidConfig("dropout rate must be < 1");
    }
    const double keep_scale = 1.0 / (1.0 - p);
    Tensor mask(x.value().shape(), 0.0);
    for (double& m : mask.data()) {
        m = rng.bernoulli(p) ? 0.0 : keep_scale;
    }
    return mul(x, x.tape()->constant(std::move(mask)));
}

Var sum(Var x) {
    double s = 0.0;
    for (double v : x.value().data()) {
        s += v;
    }
    return x.tape()->record(Tensor::scalar(s), {x}, [x](Tape& t, const Tensor&, const Tensor& g) {
        if (Tensor* gx = t.grad_target(x)) {
            for (double& v : gx->data()) {
                v += g[0];
            }
        }
    });
}

Var dot(Var a, Var b) { return sum(mul(a, b)); }

namespace {

struct CeForward {
    double total = 0.0;
    std::size_t counted = 0;
    Tensor probs;  // softmax(logits), filled when requested
};

CeForward ce_forward(const Tensor& logits, std::span<const int> targets, double smoothing,
                     int ignore_id, bool keep_probs) {
    if (logits.rank() != 2 || logits.rows() != targets.size()) {
        throw InvalidShape("cross_entropy: logits " + shape_string(logits.shape()) + " vs " +
                           std::to_string(targets.size()) + " targets");
    }
    if (!(smoothing >= 0.0 && smoothing < 1.0)) {
        throw InvalidConfig("label smoothing must lie in [0, 1)");
    }
    const std::size_t vocab = logits.cols();
    if (vocab < 2 && smoothing > 0.0) {
        throw InvalidShape("label smoothing needs at least two classes");
    }
    const double off = vocab > 1 ? smoothing / static_cast<double>(vocab - 1) : 0.0;
    CeForward f;
    const Tensor logp = log_softmax_rows(logits);
    if (keep_probs) {
        f.probs = Tensor(logits.shape(), 0.0);
    }
    for (std::size_t r = 0; r < targets.size(); ++r) {
        const int y = targets[r];
        if (y == ignore_id) {
            continue;
        }
        if (y < 0 || static_cast<std::size_t>(y) >= vocab) {
            throw IndexError("cross_entropy: target id " + std::to_string(y) +
                             " outside vocabulary of " + std::to_string(vocab));
        }
        const auto lp = logp.row(r);
        double rest = 0.0;
        for (std::size_t j = 0; j < vocab; ++j) {
            if (j != static_cast<std::size_t>(y)) rest += lp[j];
        }
        f.total -= (1.0 - smoothing) * lp[static_cast<std::size_t>(y)] + off * rest;
        ++f.counted;
        if (keep_probs) {
            auto pr = f.probs.row(r);
            for (std::size_t j = 0; j < vocab; ++j) {
                pr[j] = std::exp(lp[j]);
            }
        }
    }
    return f;
}

}  // namespace

Var label_smoothed_cross_entropy(Var logits, std::span<const int> targets, double smoothing,
                                 Reduction reduction, int ignore_id) {
    CeForward f = ce_forward(logits.value(), targets, smoothing, ignore_id, true);
    double norm = 1.0;
    if (reduction == Reduction::Mean && f.counted > 0) {
        norm = 1.0 / static_cast<double>(f.counted);
    }
    std::vector<int> tv(targets.begin(), targets.end());
    const std::size_t vocab = logits.value().cols();
    const double off = vocab > 1 ? smoothing / static_cast<double>(vocab - 1) : 0.0;
    return logits.tape()->record(
        Tensor::scalar(f.total * norm), {logits},
        [logits, tv, smoothing, off, norm, ignore_id, probs = std::move(f.probs)](
            Tape& t, const Tensor&, const Tensor& g) {
            Tensor* gl = t.grad_target(logits);
            if (!gl) return;
            const double s = g[0] * norm;
            for (std::size_t r = 0; r < tv.size(); ++r) {
                if (tv[r] == ignore_id) continue;
                const auto pr = probs.row(r);
                auto dst = gl->row(r);
                for (std::size_t j = 0; j < pr.size(); ++j) {
                    const double q = j == static_cast<std::size_t>(tv[r]) ? 1.0 - smoothing : off;
                    dst[j] += s * (pr[j] - q);
                }
            }
        });
}

}  // namespace ag

double label_smoothed_cross_entropy(const Tensor& logits, std::span<const int> targets,
                                    double smoothing, ag::Reduction reduction, int ignore_id) {
    const auto f = ag::ce_forward(logits, targets, smoothing, ignore_id, false);
    if (reduction == ag::Reduction::Mean && f.counted > 0) {
        return f.total / static_cast<double>(f.counted);
    }
    return f.total;
}

double global_norm(const Gradients& grads) {
    double sq = 0.0;
    for (const auto& [name, g] : grads) {
        for (double v : g.data()) {
            sq += v * v;
        }
    }
    return std::sqrt(sq);
}

double clip_grad_norm(Gradients& grads, double max_norm) {
    if (!(max_norm > 0.0)) {
        throw InvalidConfig("clip_grad_norm: max_norm must be positive");
    }
    const double norm = global_norm(grads);
    // A norm within rounding of max_norm counts as already clipped, which
    // makes clipping idempotent.
    if (norm > max_norm * (1.0 + 1e-12)) {
        const double factor = max_norm / norm;
        for (auto& [name, g] : grads) {
            for (double& v : g.data()) {
                v *= factor;
            }
        }
    }
    return norm;
}

}  // namespace camf

#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "tensor.hpp"

namespace cbm {

class Tape;

struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;
};

// Records primitive ops in execution order; backward replays them in exact
// reverse. One backward pass per tape; a second call is an error.
class Tape {
public:
    struct Node {
        Tensor value;
        std::vector<float> grad;   // same length as value.data
        std::function<void(Tape&, Node&)> backprop;  // may be empty (leaf)
        Tensor* param = nullptr;   // bound ParamSet tensor, if any
    };

    // Differentiable leaf whose gradient is written back into *param.
    Var leaf(Tensor* param) {
        auto it = param_vars_.find(param);
        if (it != param_vars_.end()) return {this, it->second};
        Var v = push(*param, {}, nullptr);
        nodes_[v.id].param = param;
        param_vars_[param] = v.id;
        return v;
    }

    // Differentiable input; gradient retrievable via grad(v) after backward.
    Var input(Tensor t) { return push(std::move(t), {}, nullptr); }

    // Non-differentiable input (gradient computed into the node is discarded
    // like any unread node grad; nothing is written to external storage).
    Var constant(const Tensor& t) { return push(t, {}, nullptr); }

    const Tensor& value(Var v) const { return nodes_[v.id].value; }
    const std::vector<float>& grad(Var v) const {
        if (!backward_done_)
            throw std::logic_error("Tape: grad requested before backward");
        return nodes_[v.id].grad;
    }

    Var push(Tensor value, std::vector<std::size_t> /*parents unused*/,
             std::function<void(Tape&, Node&)> backprop) {
        Node n;
        n.value = std::move(value);
        n.grad.assign(n.value.size(), 0.0f);
        n.backprop = std::move(backprop);
        nodes_.push_back(std::move(n));
        return {this, nodes_.size() - 1};
    }

    Node& node(std::size_t id) { return nodes_[id]; }

    // Populates gradients of every leaf reachable from `loss` and writes
    // bound-parameter gradients into their ParamSet tensors.
    void backward(Var loss) {
        if (backward_done_)
            throw std::logic_error("Tape: backward called twice without reset");
        if (!nodes_[loss.id].value.is_scalar())
            throw std::invalid_argument("Tape: backward requires a scalar loss");
        for (auto& [param, id] : param_vars_) {
            if (param->has_grad())
                throw std::logic_error(
                    "Tape: parameter gradient already populated; step or clear first");
        }
        nodes_[loss.id].grad[0] = 1.0f;
        for (std::size_t i = nodes_.size(); i-- > 0;) {
            Node& n = nodes_[i];
            if (n.backprop) n.backprop(*this, n);
        }
        for (auto& [param, id] : param_vars_) {
            param->grad = nodes_[id].grad;
        }
        backward_done_ = true;
    }

private:
    std::vector<Node> nodes_;
    std::unordered_map<Tensor*, std::size_t> param_vars_;
    bool backward_done_ = false;
};

namespace detail {
inline void check_same_tape(Var a, Var b) {
    if (a.tape != b.tape)
        throw std::invalid_argument("autodiff: operands from different tapes");
}
}  // namespace detail

// out = xW + b, b broadcast over rows.
inline Var affine(Var x, Var w, Var b) {
    detail::check_same_tape(x, w);
    detail::check_same_tape(x, b);
    Tape& t = *x.tape;
    const Tensor& xv = t.value(x);
    const Tensor& wv = t.value(w);
    const Tensor& bv = t.value(b);
    std::size_t n = xv.rows(), din = xv.cols(), dout = wv.cols();
    if (wv.rows() != din || bv.size() != dout)
        throw std::invalid_argument("affine: shape mismatch");

    Tensor out = Tensor::zeros({n, dout});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < dout; ++j) {
            double acc = bv.data[j];
            for (std::size_t k = 0; k < din; ++k)
                acc += static_cast<double>(xv.at(i, k)) * wv.at(k, j);
            out.at(i, j) = static_cast<float>(acc);
        }
    }

    std::size_t xi = x.id, wi = w.id, bi = b.id;
    return t.push(std::move(out), {},
                  [xi, wi, bi, n, din, dout](Tape& tp, Tape::Node& self) {
        auto& g = self.grad;
        auto& gx = tp.node(xi).grad;
        auto& gw = tp.node(wi).grad;
        auto& gb = tp.node(bi).grad;
        const auto& xv = tp.node(xi).value;
        const auto& wv = tp.node(wi).value;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < dout; ++j) {
                float gij = g[i * dout + j];
                if (gij == 0.0f) continue;
                gb[j] += gij;
                for (std::size_t k = 0; k < din; ++k) {
                    gx[i * din + k] += gij * wv.data[k * dout + j];
                    gw[k * dout + j] += gij * xv.data[i * din + k];
                }
            }
        }
    });
}

// Elementwise max(0, x); subgradient 0 at x == 0.
inline Var relu(Var x) {
    Tape& t = *x.tape;
    Tensor out = t.value(x);
    for (auto& v : out.data) v = v > 0.0f ? v : 0.0f;
    std::size_t xi = x.id;
    return t.push(std::move(out), {}, [xi](Tape& tp, Tape::Node& self) {
        const auto& xv = tp.node(xi).value.data;
        auto& gx = tp.node(xi).grad;
        for (std::size_t i = 0; i < xv.size(); ++i)
            if (xv[i] > 0.0f) gx[i] += self.grad[i];
    });
}

// Identity forward; backward scales the upstream gradient by -lam.
inline Var grad_reverse(Var x, float lam) {
    if (lam < 0.0f) throw std::domain_error("grad_reverse: lam must be >= 0");
    Tape& t = *x.tape;
    Tensor out = t.value(x);  // bitwise copy
    std::size_t xi = x.id;
    return t.push(std::move(out), {}, [xi, lam](Tape& tp, Tape::Node& self) {
        auto& gx = tp.node(xi).grad;
        for (std::size_t i = 0; i < gx.size(); ++i)
            gx[i] += -lam * self.grad[i];
    });
}

// Mean over rows of -sum_c y_c log softmax(logits)_c, max-stabilized.
// Targets are one-hot and not differentiated.
inline Var softmax_cross_entropy(Var logits, const Tensor& targets) {
    Tape& t = *logits.tape;
    const Tensor& lv = t.value(logits);
    std::size_t n = lv.rows(), c = lv.cols();
    if (c < 2) throw std::invalid_argument("softmax_cross_entropy: need >= 2 classes");
    if (targets.rows() != n || targets.cols() != c)
        throw std::invalid_argument("softmax_cross_entropy: target shape mismatch");
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        bool onehot = true;
        for (std::size_t j = 0; j < c; ++j) {
            float y = targets.at(i, j);
            if (y != 0.0f && y != 1.0f) onehot = false;
            s += y;
        }
        if (!onehot || std::abs(s - 1.0) > 1e-6)
            throw std::invalid_argument("softmax_cross_entropy: target row not one-hot");
    }

    // Cache softmax probabilities for the backward pass.
    auto probs = std::make_shared<std::vector<float>>(n * c);
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        float mx = lv.at(i, 0);
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, lv.at(i, j));
        double denom = 0.0;
        for (std::size_t j = 0; j < c; ++j)
            denom += std::exp(static_cast<double>(lv.at(i, j)) - mx);
        double logdenom = std::log(denom);
        for (std::size_t j = 0; j < c; ++j) {
            double logp = static_cast<double>(lv.at(i, j)) - mx - logdenom;
            (*probs)[i * c + j] = static_cast<float>(std::exp(logp));
            if (targets.at(i, j) == 1.0f) loss -= logp;
        }
    }
    loss /= static_cast<double>(n);

    std::size_t li = logits.id;
    Tensor y = targets;
    return t.push(Tensor::scalar(static_cast<float>(loss)), {},
                  [li, probs, y = std::move(y), n, c](Tape& tp, Tape::Node& self) {
        float g = self.grad[0];
        auto& gl = tp.node(li).grad;
        float inv_n = 1.0f / static_cast<float>(n);
        for (std::size_t i = 0; i < n * c; ++i)
            gl[i] += g * ((*probs)[i] - y.data[i]) * inv_n;
    });
}

inline Var add(Var a, Var b) {
    detail::check_same_tape(a, b);
    Tape& t = *a.tape;
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    if (av.shape != bv.shape) throw std::invalid_argument("add: shape mismatch");
    Tensor out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += bv.data[i];
    std::size_t ai = a.id, bi = b.id;
    return t.push(std::move(out), {}, [ai, bi](Tape& tp, Tape::Node& self) {
        auto& ga = tp.node(ai).grad;
        auto& gb = tp.node(bi).grad;
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            ga[i] += self.grad[i];
            gb[i] += self.grad[i];
        }
    });
}

inline Var mul(Var a, Var b) {  // elementwise
    detail::check_same_tape(a, b);
    Tape& t = *a.tape;
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    if (av.shape != bv.shape) throw std::invalid_argument("mul: shape mismatch");
    Tensor out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= bv.data[i];
    std::size_t ai = a.id, bi = b.id;
    return t.push(std::move(out), {}, [ai, bi](Tape& tp, Tape::Node& self) {
        const auto& av = tp.node(ai).value.data;
        const auto& bv = tp.node(bi).value.data;
        auto& ga = tp.node(ai).grad;
        auto& gb = tp.node(bi).grad;
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            ga[i] += self.grad[i] * bv[i];
            gb[i] += self.grad[i] * av[i];
        }
    });
}

inline Var scale(Var x, float c) {
    Tape& t = *x.tape;
    Tensor out = t.value(x);
    for (auto& v : out.data) v *= c;
    std::size_t xi = x.id;
    return t.push(std::move(out), {}, [xi, c](Tape& tp, Tape::Node& self) {
        auto& gx = tp.node(xi).grad;
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += c * self.grad[i];
    });
}

inline Var sum_all(Var x) {
    Tape& t = *x.tape;
    const Tensor& xv = t.value(x);
    double acc = 0.0;
    for (float v : xv.data) acc += v;
    std::size_t xi = x.id;
    return t.push(Tensor::scalar(static_cast<float>(acc)), {},
                  [xi](Tape& tp, Tape::Node& self) {
        auto& gx = tp.node(xi).grad;
        for (auto& g : gx) g += self.grad[0];
    });
}

inline Var mean_all(Var x) {
    std::size_t n = x.tape->value(x).size();
    return scale(sum_all(x), 1.0f / static_cast<float>(n));
}

// log(mean_i exp(x_i)), max-stabilized; x flattened.
inline Var logmeanexp(Var x) {
    Tape& t = *x.tape;
    const Tensor& xv = t.value(x);
    std::size_t n = xv.size();
    float mx = xv.data[0];
    for (float v : xv.data) mx = std::max(mx, v);
    double sum = 0.0;
    for (float v : xv.data) sum += std::exp(static_cast<double>(v) - mx);
    double out = mx + std::log(sum / static_cast<double>(n));
    auto softw = std::make_shared<std::vector<float>>(n);
    for (std::size_t i = 0; i < n; ++i)
        (*softw)[i] = static_cast<float>(std::exp(static_cast<double>(xv.data[i]) - mx) / sum);
    std::size_t xi = x.id;
    return t.push(Tensor::scalar(static_cast<float>(out)), {},
                  [xi, softw](Tape& tp, Tape::Node& self) {
        auto& gx = tp.node(xi).grad;
        for (std::size_t i = 0; i < gx.size(); ++i)
            gx[i] += self.grad[0] * (*softw)[i];
    });
}

// Scalar helpers for composing ratios like the distance correlation.
inline Var mul_scalar(Var a, Var b) { return mul(a, b); }

inline Var div_scalar(Var a, Var b) {
    detail::check_same_tape(a, b);
    Tape& t = *a.tape;
    float av = t.value(a).data[0], bv = t.value(b).data[0];
    if (bv == 0.0f) throw std::runtime_error("div_scalar: division by zero");
    std::size_t ai = a.id, bi = b.id;
    return t.push(Tensor::scalar(av / bv), {}, [ai, bi](Tape& tp, Tape::Node& self) {
        float av = tp.node(ai).value.data[0];
        float bv = tp.node(bi).value.data[0];
        tp.node(ai).grad[0] += self.grad[0] / bv;
        tp.node(bi).grad[0] += -self.grad[0] * av / (bv * bv);
    });
}

// sqrt(max(x, 0)) on a scalar; zero gradient at/below the floor.
inline Var sqrt_clamped(Var x, float floor = 1e-12f) {
    Tape& t = *x.tape;
    float xv = t.value(x).data[0];
    float out = xv > 0.0f ? std::sqrt(xv) : 0.0f;
    std::size_t xi = x.id;
    return t.push(Tensor::scalar(out), {}, [xi, floor](Tape& tp, Tape::Node& self) {
        float xv = tp.node(xi).value.data[0];
        if (xv > floor)
            tp.node(xi).grad[0] += self.grad[0] * 0.5f / std::sqrt(xv);
    });
}

inline Var concat_cols(Var a, Var b) {
    detail::check_same_tape(a, b);
    Tape& t = *a.tape;
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    if (av.rows() != bv.rows())
        throw std::invalid_argument("concat_cols: row count mismatch");
    std::size_t n = av.rows(), ca = av.cols(), cb = bv.cols();
    Tensor out = Tensor::zeros({n, ca + cb});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < ca; ++j) out.at(i, j) = av.at(i, j);
        for (std::size_t j = 0; j < cb; ++j) out.at(i, ca + j) = bv.at(i, j);
    }
    std::size_t ai = a.id, bi = b.id;
    return t.push(std::move(out), {}, [ai, bi, n, ca, cb](Tape& tp, Tape::Node& self) {
        auto& ga = tp.node(ai).grad;
        auto& gb = tp.node(bi).grad;
        std::size_t cw = ca + cb;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < ca; ++j) ga[i * ca + j] += self.grad[i * cw + j];
            for (std::size_t j = 0; j < cb; ++j) gb[i * cb + j] += self.grad[i * cw + ca + j];
        }
    });
}

// Columns [from, to) of a 2-D tensor.
inline Var slice_cols(Var x, std::size_t from, std::size_t to) {
    Tape& t = *x.tape;
    const Tensor& xv = t.value(x);
    std::size_t n = xv.rows(), c = xv.cols();
    if (from >= to || to > c) throw std::invalid_argument("slice_cols: bad range");
    std::size_t w = to - from;
    Tensor out = Tensor::zeros({n, w});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < w; ++j) out.at(i, j) = xv.at(i, from + j);
    std::size_t xi = x.id;
    return t.push(std::move(out), {}, [xi, from, w, n, c](Tape& tp, Tape::Node& self) {
        auto& gx = tp.node(xi).grad;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < w; ++j)
                gx[i * c + from + j] += self.grad[i * w + j];
    });
}

// out[i] = x[perm[i]]; backward scatters through the permutation.
inline Var gather_rows(Var x, const std::vector<std::size_t>& perm) {
    Tape& t = *x.tape;
    const Tensor& xv = t.value(x);
    std::size_t n = xv.rows(), c = xv.cols();
    if (perm.size() != n) throw std::invalid_argument("gather_rows: permutation length mismatch");
    Tensor out = Tensor::zeros({n, c});
    for (std::size_t i = 0; i < n; ++i) {
        if (perm[i] >= n) throw std::invalid_argument("gather_rows: index out of range");
        for (std::size_t j = 0; j < c; ++j) out.at(i, j) = xv.at(perm[i], j);
    }
    std::size_t xi = x.id;
    auto p = perm;
    return t.push(std::move(out), {}, [xi, p = std::move(p), n, c](Tape& tp, Tape::Node& self) {
        auto& gx = tp.node(xi).grad;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < c; ++j)
                gx[p[i] * c + j] += self.grad[i * c + j];
    });
}

// D[i][j] = ||z_i - z_j||_2; subgradient 0 at coincident rows.
inline Var pairwise_euclidean(Var z) {
    Tape& t = *z.tape;
    const Tensor& zv = t.value(z);
    std::size_t n = zv.rows(), d = zv.cols();
    if (n < 2) throw std::invalid_argument("pairwise_euclidean: need at least 2 rows");
    Tensor out = Tensor::zeros({n, n});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                double diff = static_cast<double>(zv.at(i, k)) - zv.at(j, k);
                acc += diff * diff;
            }
            float dist = static_cast<float>(std::sqrt(acc));
            out.at(i, j) = dist;
            out.at(j, i) = dist;
        }
    }
    std::size_t zi = z.id;
    return t.push(std::move(out), {}, [zi, n, d](Tape& tp, Tape::Node& self) {
        const auto& zv = tp.node(zi).value;
        auto& gz = tp.node(zi).grad;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                if (i == j) continue;
                float dist = self.value.at(i, j);
                if (dist == 0.0f) continue;
                float g = self.grad[i * n + j];
                if (g == 0.0f) continue;
                for (std::size_t k = 0; k < d; ++k) {
                    float diff = zv.at(i, k) - zv.at(j, k);
                    gz[i * d + k] += g * diff / dist;
                    gz[j * d + k] -= g * diff / dist;
                }
            }
        }
    });
}

// A[i][j] = D[i][j] - rowmean_i - colmean_j + grandmean. The centering
// operator is symmetric, so the backward pass is the same centering applied
// to the upstream gradient.
inline Var double_center(Var dmat) {
    Tape& t = *dmat.tape;
    const Tensor& dv = t.value(dmat);
    std::size_t n = dv.rows();
    if (dv.cols() != n) throw std::invalid_argument("double_center: matrix not square");
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j)
            if (std::abs(dv.at(i, j) - dv.at(j, i)) > 1e-5f)
                throw std::invalid_argument("double_center: matrix not symmetric");
    }

    auto center = [n](const std::vector<float>& in, std::vector<float>& out) {
        std::vector<double> rowm(n, 0.0), colm(n, 0.0);
        double grand = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                double v = in[i * n + j];
                rowm[i] += v;
                colm[j] += v;
                grand += v;
            }
        for (auto& v : rowm) v /= static_cast<double>(n);
        for (auto& v : colm) v /= static_cast<double>(n);
        grand /= static_cast<double>(n) * static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                out[i * n + j] = static_cast<float>(in[i * n + j] - rowm[i] - colm[j] + grand);
    };

    Tensor out = Tensor::zeros({n, n});
    center(dv.data, out.data);
    std::size_t di = dmat.id;
    return t.push(std::move(out), {}, [di, n, center](Tape& tp, Tape::Node& self) {
        std::vector<float> cg(n * n);
        center(self.grad, cg);
        auto& gd = tp.node(di).grad;
        for (std::size_t i = 0; i < cg.size(); ++i) gd[i] += cg[i];
    });
}

}  // namespace cbm

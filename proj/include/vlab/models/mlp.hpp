#pragma once

// Fully connected network with a flat parameter vector. Hidden layers use a
// smooth activation, the output layer is linear, and the loss is
//   l(theta) = 1/(2n) sum_j ||f(x_j; theta) - y_j||^2.
// Gradients are exact reverse mode; Hessian-vector products use the
// forward-over-reverse R-operator, so both are exact up to rounding.
//
// Parameter layout, layer by layer: W_l (out x in, row-major) then b_l (out).

#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "vlab/error.hpp"
#include "vlab/models/dataset.hpp"
#include "vlab/numerics/linalg.hpp"
#include "vlab/numerics/random.hpp"

namespace vlab {

enum class Activation { Tanh, Identity };

/// Row indices into a dataset; an empty batch means "every row".
using Batch = std::vector<std::size_t>;

class Mlp {
public:
    Mlp(std::vector<std::size_t> layer_dims, Activation activation = Activation::Tanh)
        : dims_(std::move(layer_dims)), activation_(activation) {
        if (dims_.size() < 2) throw ContractError("Mlp: need at least input and output dimensions");
        for (const auto d : dims_)
            if (d == 0) throw ContractError("Mlp: layer dimensions must be positive");
        offsets_.push_back(0);
        for (std::size_t l = 0; l + 1 < dims_.size(); ++l)
            offsets_.push_back(offsets_.back() + dims_[l] * dims_[l + 1] + dims_[l + 1]);
    }

    const std::vector<std::size_t>& layer_dims() const noexcept { return dims_; }
    Activation activation() const noexcept { return activation_; }
    std::size_t layers() const noexcept { return dims_.size() - 1; }
    std::size_t param_count() const noexcept { return offsets_.back(); }
    std::size_t input_dim() const noexcept { return dims_.front(); }
    std::size_t output_dim() const noexcept { return dims_.back(); }

    /// Weights ~ U(-scale/sqrt(fan_in), scale/sqrt(fan_in)); biases zero. The
    /// first layer's bound is further divided by `input_scale`, the typical
    /// magnitude of an input coordinate, so first-layer pre-activations stay O(1).
    Vector init(RandomStream& stream, double scale = 1.0, double input_scale = 1.0) const {
        if (!(scale > 0.0) || !(input_scale > 0.0)) throw ContractError("Mlp::init: scales must be positive");
        Vector theta(param_count(), 0.0);
        for (std::size_t l = 0; l < layers(); ++l) {
            double bound = scale / std::sqrt(static_cast<double>(dims_[l]));
            if (l == 0) bound /= input_scale;
            const std::size_t w = offsets_[l];
            for (std::size_t i = 0; i < dims_[l] * dims_[l + 1]; ++i)
                theta[w + i] = bound * (2.0 * stream.uniform() - 1.0);
        }
        return theta;
    }

    /// Network outputs, one row per batch element.
    Matrix forward(std::span<const double> theta, const Dataset& data, const Batch& batch = {}) const {
        check(theta, data);
        Forward fw = run_forward(theta, data, batch);
        return std::move(fw.h.back());
    }

    double loss(std::span<const double> theta, const Dataset& data, const Batch& batch = {}) const {
        check(theta, data);
        const Forward fw = run_forward(theta, data, batch);
        return half_mse(fw, data);
    }

    /// Loss value; writes the exact gradient into `grad`.
    double loss_and_grad(std::span<const double> theta, const Dataset& data, const Batch& batch,
                         std::span<double> grad) const {
        check(theta, data);
        if (grad.size() != param_count()) throw ContractError("Mlp: gradient buffer has wrong size");
        const Forward fw = run_forward(theta, data, batch);
        std::vector<Matrix> delta = run_backward(theta, fw, data);
        accumulate_param_grads(fw.h, delta, grad);
        return half_mse(fw, data);
    }

    Vector grad(std::span<const double> theta, const Dataset& data, const Batch& batch = {}) const {
        Vector g(param_count());
        loss_and_grad(theta, data, batch, g);
        return g;
    }

    /// Exact Hessian-vector product of the loss at theta along v.
    void hvp(std::span<const double> theta, const Dataset& data, const Batch& batch, std::span<const double> v,
             std::span<double> out) const {
        check(theta, data);
        if (v.size() != param_count() || out.size() != param_count())
            throw ContractError("Mlp::hvp: vector has wrong size");
        const Forward fw = run_forward(theta, data, batch);
        const std::vector<Matrix> delta = run_backward(theta, fw, data);
        const std::size_t L = layers();
        const std::size_t B = fw.rows;

        // Forward tangents: R(a_l), R(h_l).
        std::vector<Matrix> ra(L), rh(L + 1);
        rh[0] = Matrix(B, dims_[0]);
        for (std::size_t l = 0; l < L; ++l) {
            const std::size_t in = dims_[l], out_dim = dims_[l + 1];
            const double* w = theta.data() + offsets_[l];
            const double* vw = v.data() + offsets_[l];
            const double* vb = vw + in * out_dim;
            ra[l] = Matrix(B, out_dim);
            for (std::size_t b = 0; b < B; ++b) {
                const auto hin = fw.h[l].row(b);
                const auto rhin = rh[l].row(b);
                for (std::size_t o = 0; o < out_dim; ++o) {
                    double s = vb[o];
                    const double* wr = w + o * in;
                    const double* vr = vw + o * in;
                    for (std::size_t i = 0; i < in; ++i) s += vr[i] * hin[i] + wr[i] * rhin[i];
                    ra[l](b, o) = s;
                }
            }
            rh[l + 1] = Matrix(B, out_dim);
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t o = 0; o < out_dim; ++o)
                    rh[l + 1](b, o) = is_hidden(l) ? d1(fw.a[l](b, o), fw.h[l + 1](b, o)) * ra[l](b, o) : ra[l](b, o);
        }

        // Backward tangents: R(delta_l).
        std::vector<Matrix> rdelta(L);
        rdelta[L - 1] = Matrix(B, dims_[L]);
        const double inv_n = 1.0 / static_cast<double>(B);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t o = 0; o < dims_[L]; ++o) rdelta[L - 1](b, o) = rh[L](b, o) * inv_n;
        for (std::size_t l = L - 1; l-- > 0;) {
            // g = delta_{l+1} W_{l+1};  R(g) = R(delta_{l+1}) W_{l+1} + delta_{l+1} VW_{l+1}
            const std::size_t in = dims_[l + 1], out_dim = dims_[l + 2];
            const double* w = theta.data() + offsets_[l + 1];
            const double* vw = v.data() + offsets_[l + 1];
            rdelta[l] = Matrix(B, in);
            std::vector<double> g(in), rg(in);
            for (std::size_t b = 0; b < B; ++b) {
                std::fill(g.begin(), g.end(), 0.0);
                std::fill(rg.begin(), rg.end(), 0.0);
                for (std::size_t o = 0; o < out_dim; ++o) {
                    const double d = delta[l + 1](b, o);
                    const double rd = rdelta[l + 1](b, o);
                    const double* wr = w + o * in;
                    const double* vr = vw + o * in;
                    for (std::size_t i = 0; i < in; ++i) {
                        g[i] += d * wr[i];
                        rg[i] += rd * wr[i] + d * vr[i];
                    }
                }
                for (std::size_t i = 0; i < in; ++i) {
                    const double a = fw.a[l](b, i);
                    const double h = fw.h[l + 1](b, i);
                    rdelta[l](b, i) = rg[i] * d1(a, h) + g[i] * d2(a, h) * ra[l](b, i);
                }
            }
        }

        // R(dW_l) = R(delta_l)^T h_{l-1} + delta_l^T R(h_{l-1}),  R(db_l) = sum_b R(delta_l)
        std::fill(out.begin(), out.end(), 0.0);
        for (std::size_t l = 0; l < L; ++l) {
            const std::size_t in = dims_[l], out_dim = dims_[l + 1];
            double* gw = out.data() + offsets_[l];
            double* gb = gw + in * out_dim;
            for (std::size_t b = 0; b < B; ++b) {
                const auto hin = fw.h[l].row(b);
                const auto rhin = rh[l].row(b);
                for (std::size_t o = 0; o < out_dim; ++o) {
                    const double rd = rdelta[l](b, o);
                    const double d = delta[l](b, o);
                    double* row = gw + o * in;
                    for (std::size_t i = 0; i < in; ++i) row[i] += rd * hin[i] + d * rhin[i];
                    gb[o] += rd;
                }
            }
        }
    }

    Vector hvp(std::span<const double> theta, const Dataset& data, const Batch& batch,
               std::span<const double> v) const {
        Vector out(param_count());
        hvp(theta, data, batch, v, out);
        return out;
    }

    /// Fraction of rows whose argmax output equals the label (ties go to the lower class index).
    double accuracy(std::span<const double> theta, const Dataset& data, const Batch& batch = {}) const {
        const Matrix out = forward(theta, data, batch);
        std::size_t hits = 0;
        for (std::size_t b = 0; b < out.rows(); ++b) {
            std::size_t best = 0;
            for (std::size_t c = 1; c < out.cols(); ++c)
                if (out(b, c) > out(b, best)) best = c;
            const std::size_t row = batch.empty() ? b : batch[b];
            if (static_cast<int>(best) == data.labels[row]) ++hits;
        }
        return out.rows() ? static_cast<double>(hits) / static_cast<double>(out.rows()) : 0.0;
    }

private:
    struct Forward {
        std::size_t rows = 0;
        std::vector<std::size_t> index;  ///< dataset row of each batch element
        std::vector<Matrix> a;           ///< pre-activations, per layer
        std::vector<Matrix> h;           ///< h[0] = inputs, h[l+1] = activation(a[l])
    };

    bool is_hidden(std::size_t l) const noexcept { return l + 1 < layers() && activation_ == Activation::Tanh; }

    // First and second derivatives of the activation given a and h = act(a).
    double d1(double, double h) const noexcept { return activation_ == Activation::Tanh ? 1.0 - h * h : 1.0; }
    double d2(double, double h) const noexcept {
        return activation_ == Activation::Tanh ? -2.0 * h * (1.0 - h * h) : 0.0;
    }

    void check(std::span<const double> theta, const Dataset& data) const {
        if (theta.size() != param_count())
            throw ContractError("Mlp: expected " + std::to_string(param_count()) + " parameters, got " +
                                std::to_string(theta.size()));
        if (data.input_dim() != input_dim()) throw ContractError("Mlp: dataset input dimension mismatch");
        if (data.targets.cols() != output_dim()) throw ContractError("Mlp: dataset target dimension mismatch");
    }

    Forward run_forward(std::span<const double> theta, const Dataset& data, const Batch& batch) const {
        Forward fw;
        fw.rows = batch.empty() ? data.size() : batch.size();
        fw.index.resize(fw.rows);
        if (batch.empty())
            std::iota(fw.index.begin(), fw.index.end(), std::size_t{0});
        else
            for (std::size_t b = 0; b < fw.rows; ++b) {
                if (batch[b] >= data.size()) throw ContractError("Mlp: batch index out of range");
                fw.index[b] = batch[b];
            }
        fw.h.emplace_back(fw.rows, dims_[0]);
        for (std::size_t b = 0; b < fw.rows; ++b) {
            const auto src = data.inputs.row(fw.index[b]);
            std::copy(src.begin(), src.end(), fw.h[0].row(b).begin());
        }
        for (std::size_t l = 0; l < layers(); ++l) {
            const std::size_t in = dims_[l], out = dims_[l + 1];
            const double* w = theta.data() + offsets_[l];
            const double* bias = w + in * out;
            Matrix a(fw.rows, out);
            Matrix h(fw.rows, out);
            for (std::size_t b = 0; b < fw.rows; ++b) {
                const auto hin = fw.h[l].row(b);
                for (std::size_t o = 0; o < out; ++o) {
                    const double* wr = w + o * in;
                    double s = bias[o];
                    for (std::size_t i = 0; i < in; ++i) s += wr[i] * hin[i];
                    a(b, o) = s;
                    h(b, o) = (l + 1 < layers() && activation_ == Activation::Tanh) ? std::tanh(s) : s;
                }
            }
            fw.a.push_back(std::move(a));
            fw.h.push_back(std::move(h));
        }
        return fw;
    }

    double half_mse(const Forward& fw, const Dataset& data) const {
        double s = 0.0;
        for (std::size_t b = 0; b < fw.rows; ++b) {
            const auto out = fw.h.back().row(b);
            const auto y = data.targets.row(fw.index[b]);
            for (std::size_t c = 0; c < out.size(); ++c) s += (out[c] - y[c]) * (out[c] - y[c]);
        }
        return fw.rows ? 0.5 * s / static_cast<double>(fw.rows) : 0.0;
    }

    /// delta_l = dl/da_l for every layer.
    std::vector<Matrix> run_backward(std::span<const double> theta, const Forward& fw, const Dataset& data) const {
        const std::size_t L = layers();
        const std::size_t B = fw.rows;
        std::vector<Matrix> delta(L);
        delta[L - 1] = Matrix(B, dims_[L]);
        const double inv_n = 1.0 / static_cast<double>(B);
        for (std::size_t b = 0; b < B; ++b) {
            const auto y = data.targets.row(fw.index[b]);
            for (std::size_t o = 0; o < dims_[L]; ++o) delta[L - 1](b, o) = (fw.h[L](b, o) - y[o]) * inv_n;
        }
        for (std::size_t l = L - 1; l-- > 0;) {
            const std::size_t in = dims_[l + 1], out = dims_[l + 2];
            const double* w = theta.data() + offsets_[l + 1];
            delta[l] = Matrix(B, in);
            for (std::size_t b = 0; b < B; ++b) {
                auto drow = delta[l].row(b);
                for (std::size_t o = 0; o < out; ++o) {
                    const double d = delta[l + 1](b, o);
                    const double* wr = w + o * in;
                    for (std::size_t i = 0; i < in; ++i) drow[i] += d * wr[i];
                }
                for (std::size_t i = 0; i < in; ++i) drow[i] *= d1(fw.a[l](b, i), fw.h[l + 1](b, i));
            }
        }
        return delta;
    }

    void accumulate_param_grads(const std::vector<Matrix>& h, const std::vector<Matrix>& delta,
                                std::span<double> grad) const {
        std::fill(grad.begin(), grad.end(), 0.0);
        for (std::size_t l = 0; l < layers(); ++l) {
            const std::size_t in = dims_[l], out = dims_[l + 1];
            double* gw = grad.data() + offsets_[l];
            double* gb = gw + in * out;
            for (std::size_t b = 0; b < delta[l].rows(); ++b) {
                const auto hin = h[l].row(b);
                for (std::size_t o = 0; o < out; ++o) {
                    const double d = delta[l](b, o);
                    double* row = gw + o * in;
                    for (std::size_t i = 0; i < in; ++i) row[i] += d * hin[i];
                    gb[o] += d;
                }
            }
        }
    }

    std::vector<std::size_t> dims_;
    Activation activation_;
    std::vector<std::size_t> offsets_;
};

}  // namespace vlab

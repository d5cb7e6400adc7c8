#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "mqrec/common.hpp"
#include "mqrec/matrix.hpp"

namespace mqrec {

struct MlpGrads {
    std::array<Matrixd, 3> w;
    std::array<std::vector<double>, 3> b;

    void add_scaled(const MlpGrads& o, double s) {
        for (int l = 0; l < 3; ++l) {
            for (std::size_t i = 0; i < w[l].size(); ++i) w[l].flat()[i] += s * o.w[l].flat()[i];
            for (std::size_t i = 0; i < b[l].size(); ++i) b[l][i] += s * o.b[l][i];
        }
    }
    void scale(double s) {
        for (int l = 0; l < 3; ++l) {
            for (double& x : w[l].flat()) x *= s;
            for (double& x : b[l]) x *= s;
        }
    }
    bool all_zero() const {
        for (int l = 0; l < 3; ++l) {
            for (double x : w[l].flat())
                if (x != 0.0) return false;
            for (double x : b[l])
                if (x != 0.0) return false;
        }
        return true;
    }
};

/// Fixed-depth MLP: input -> hidden -> hidden -> output. ReLU on the two
/// hidden layers, identity output. Exactly three weight matrices.
class Mlp {
public:
    Mlp() = default;
    Mlp(std::size_t in, std::size_t h1, std::size_t h2, std::size_t out) {
        dims_ = {in, h1, h2, out};
        for (int l = 0; l < 3; ++l) {
            w_[l] = Matrixd(dims_[l], dims_[l + 1]);
            b_[l] = std::vector<double>(dims_[l + 1], 0.0);
        }
    }

    static Mlp make(std::size_t in, std::size_t h1, std::size_t h2, std::size_t out,
                    std::uint64_t seed) {
        Mlp m(in, h1, h2, out);
        m.init_glorot(seed);
        return m;
    }

    std::size_t in_dim() const { return dims_[0]; }
    std::size_t out_dim() const { return dims_[3]; }
    const std::array<std::size_t, 4>& dims() const { return dims_; }

    Matrixd& weight(int l) { return w_[l]; }
    const Matrixd& weight(int l) const { return w_[l]; }
    std::vector<double>& bias(int l) { return b_[l]; }
    const std::vector<double>& bias(int l) const { return b_[l]; }

    /// Glorot-uniform weights, zero biases, deterministic for a fixed seed.
    void init_glorot(std::uint64_t seed) {
        auto rng = make_rng(seed, 0x6d6c70);
        for (int l = 0; l < 3; ++l) {
            const double bound = std::sqrt(6.0 / double(dims_[l] + dims_[l + 1]));
            std::uniform_real_distribution<double> dist(-bound, bound);
            for (double& x : w_[l].flat()) x = dist(rng);
            std::fill(b_[l].begin(), b_[l].end(), 0.0);
        }
    }

    struct Trace {
        Matrixd a0;  // input batch
        Matrixd a1;  // relu(z1)
        Matrixd a2;  // relu(z2)
        Matrixd y;
    };

    Matrixd forward(const Matrixd& x) const {
        Trace t;
        run_forward(x, t);
        return std::move(t.y);
    }

    Trace forward_trace(const Matrixd& x) const {
        Trace t;
        run_forward(x, t);
        t.a0 = x;
        return t;
    }

    MlpGrads zero_grads() const {
        MlpGrads g;
        for (int l = 0; l < 3; ++l) {
            g.w[l] = Matrixd(dims_[l], dims_[l + 1]);
            g.b[l] = std::vector<double>(dims_[l + 1], 0.0);
        }
        return g;
    }

    /// Accumulates parameter gradients into `grads` for upstream dY and
    /// returns dX when `want_input_grads` is set.
    std::optional<Matrixd> backward(const Trace& t, const Matrixd& dy, MlpGrads& grads,
                                    bool want_input_grads = false) const {
        if (dy.rows() != t.y.rows() || dy.cols() != dims_[3])
            throw std::invalid_argument("mlp backward: upstream gradient shape mismatch");
        const std::size_t batch = dy.rows();

        // output layer
        matmul_at_b_add(t.a2, dy, grads.w[2]);
        add_col_sums(dy, grads.b[2]);
        Matrixd da2(batch, dims_[2]);
        matmul_a_bt_add(dy, w_[2], da2);
        relu_mask_inplace(da2, t.a2);

        matmul_at_b_add(t.a1, da2, grads.w[1]);
        add_col_sums(da2, grads.b[1]);
        Matrixd da1(batch, dims_[1]);
        matmul_a_bt_add(da2, w_[1], da1);
        relu_mask_inplace(da1, t.a1);

        matmul_at_b_add(t.a0, da1, grads.w[0]);
        add_col_sums(da1, grads.b[0]);
        if (!want_input_grads) return std::nullopt;
        Matrixd dx(batch, dims_[0]);
        matmul_a_bt_add(da1, w_[0], dx);
        return dx;
    }

    template <typename Fn>
    void for_each_param(Fn&& fn) {
        for (int l = 0; l < 3; ++l) {
            fn(w_[l].flat());
            fn(std::span<double>(b_[l]));
        }
    }
    template <typename Fn>
    void for_each_param_with_grad(MlpGrads& g, Fn&& fn) {
        for (int l = 0; l < 3; ++l) {
            fn(w_[l].flat(), g.w[l].flat());
            fn(std::span<double>(b_[l]), std::span<double>(g.b[l]));
        }
    }

    std::size_t param_count() const {
        std::size_t n = 0;
        for (int l = 0; l < 3; ++l) n += w_[l].size() + b_[l].size();
        return n;
    }

private:
    void run_forward(const Matrixd& x, Trace& t) const {
        if (x.cols() != dims_[0]) throw std::invalid_argument("mlp forward: input dim mismatch");
        if (!x.finite()) throw NumericError("mlp forward: non-finite input");
        const std::size_t batch = x.rows();
        t.a1 = affine(x, w_[0], b_[0]);
        relu_inplace(t.a1);
        t.a2 = affine(t.a1, w_[1], b_[1]);
        relu_inplace(t.a2);
        t.y = affine(t.a2, w_[2], b_[2]);
        (void)batch;
    }

    static Matrixd affine(const Matrixd& x, const Matrixd& w, const std::vector<double>& b) {
        Matrixd out(x.rows(), w.cols());
        for (std::size_t i = 0; i < out.rows(); ++i) {
            double* row = out.data() + i * out.cols();
            for (std::size_t j = 0; j < out.cols(); ++j) row[j] = b[j];
        }
        matmul_add(x, w, out);
        return out;
    }

    static void relu_inplace(Matrixd& m) {
        for (double& x : m.flat())
            if (x < 0.0) x = 0.0;
    }

    // zero upstream where the activation was clamped
    static void relu_mask_inplace(Matrixd& grad, const Matrixd& act) {
        for (std::size_t i = 0; i < grad.size(); ++i)
            if (act.flat()[i] <= 0.0) grad.flat()[i] = 0.0;
    }

    static void add_col_sums(const Matrixd& m, std::vector<double>& out) {
        for (std::size_t i = 0; i < m.rows(); ++i) {
            const double* row = m.data() + i * m.cols();
            for (std::size_t j = 0; j < m.cols(); ++j) out[j] += row[j];
        }
    }

    std::array<std::size_t, 4> dims_{};
    std::array<Matrixd, 3> w_;
    std::array<std::vector<double>, 3> b_;
};

struct MlpForwardBackwardResult {
    Matrixd outputs;
    std::optional<MlpGrads> param_grads;
    std::optional<Matrixd> input_grads;
};

/// One-shot forward plus (optionally) exact analytic gradients w.r.t. all
/// parameters and the inputs.
inline MlpForwardBackwardResult mlp_forward_backward(const Mlp& m, const Matrixd& x,
                                                     const Matrixd* upstream_grad = nullptr) {
    MlpForwardBackwardResult r;
    if (upstream_grad == nullptr) {
        r.outputs = m.forward(x);
        return r;
    }
    auto trace = m.forward_trace(x);
    MlpGrads grads = m.zero_grads();
    r.input_grads = m.backward(trace, *upstream_grad, grads, true);
    r.outputs = std::move(trace.y);
    r.param_grads = std::move(grads);
    return r;
}

}  // namespace mqrec

#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "kalm/errors.hpp"
#include "kalm/random.hpp"

namespace kalm {

// Minimal dense/conv layers with hand-written backprop. Everything runs in
// doubles on the CPU; weights live in a flat store so the optimizer and the
// checkpoint writer can walk them in a fixed order.

struct NamedTensor {
    std::string name;
    Eigen::MatrixXd value;
    Eigen::MatrixXd grad;
    Eigen::MatrixXd adam_m;
    Eigen::MatrixXd adam_v;
    Eigen::MatrixXd ema;  // exponential moving average of value, empty until used
};

class ParamStore {
public:
    NamedTensor* create(const std::string& name, int rows, int cols) {
        auto t = std::make_unique<NamedTensor>();
        t->name = name;
        t->value = Eigen::MatrixXd::Zero(rows, cols);
        t->grad = Eigen::MatrixXd::Zero(rows, cols);
        t->adam_m = Eigen::MatrixXd::Zero(rows, cols);
        t->adam_v = Eigen::MatrixXd::Zero(rows, cols);
        tensors_.push_back(std::move(t));
        return tensors_.back().get();
    }

    std::vector<NamedTensor*> tensors() {
        std::vector<NamedTensor*> out;
        for (auto& t : tensors_) out.push_back(t.get());
        return out;
    }
    std::vector<const NamedTensor*> tensors() const {
        std::vector<const NamedTensor*> out;
        for (auto& t : tensors_) out.push_back(t.get());
        return out;
    }

    void zero_grad() {
        for (auto& t : tensors_) t->grad.setZero();
    }

    void scale_grad(double s) {
        for (auto& t : tensors_) t->grad *= s;
    }

    // Folds current values into per-tensor moving averages; apply_ema swaps
    // the averaged weights in (the usual smoothing for diffusion samplers).
    void ema_update(double decay) {
        for (auto& t : tensors_) {
            if (t->ema.size() == 0)
                t->ema = t->value;
            else
                t->ema = decay * t->ema + (1.0 - decay) * t->value;
        }
    }

    void apply_ema() {
        for (auto& t : tensors_)
            if (t->ema.size() != 0) t->value = t->ema;
    }

    void adam_step(double lr, int step_index, double beta1 = 0.9, double beta2 = 0.999,
                   double eps = 1e-8) {
        double c1 = 1.0 - std::pow(beta1, step_index + 1);
        double c2 = 1.0 - std::pow(beta2, step_index + 1);
        for (auto& t : tensors_) {
            t->adam_m = beta1 * t->adam_m + (1.0 - beta1) * t->grad;
            t->adam_v = beta2 * t->adam_v.array().matrix() +
                        (1.0 - beta2) * t->grad.array().square().matrix();
            t->value.array() -=
                lr * (t->adam_m.array() / c1) / ((t->adam_v.array() / c2).sqrt() + eps);
        }
    }

private:
    std::vector<std::unique_ptr<NamedTensor>> tensors_;
};

namespace detail {

inline double silu_scalar(double x) {
    double s = 1.0 / (1.0 + std::exp(-x));
    return x * s;
}

inline double silu_grad_scalar(double x) {
    double s = 1.0 / (1.0 + std::exp(-x));
    return s * (1.0 + x * (1.0 - s));
}

}  // namespace detail

// y = W x + b, applied to each column of x.
class Dense {
public:
    Dense() = default;
    Dense(ParamStore& store, const std::string& name, int in, int out)
        : w_(store.create(name + ".w", out, in)), b_(store.create(name + ".b", out, 1)) {}

    void init(RandomStream& rng) {
        double std = std::sqrt(2.0 / double(w_->value.cols()));
        for (int i = 0; i < w_->value.rows(); ++i)
            for (int j = 0; j < w_->value.cols(); ++j) w_->value(i, j) = rng.normal() * std;
        b_->value.setZero();
    }

    Eigen::MatrixXd forward(const Eigen::MatrixXd& x) {
        x_ = x;
        return (w_->value * x).colwise() + b_->value.col(0);
    }

    Eigen::MatrixXd backward(const Eigen::MatrixXd& dy) {
        backward_params(dy);
        return w_->value.transpose() * dy;
    }

    // Gradient accumulation only, for layers whose input needs no gradient.
    void backward_params(const Eigen::MatrixXd& dy) {
        w_->grad.noalias() += dy * x_.transpose();
        b_->grad.col(0) += dy.rowwise().sum();
    }

private:
    NamedTensor* w_ = nullptr;
    NamedTensor* b_ = nullptr;
    Eigen::MatrixXd x_;
};

// Temporal convolution over a C_in x H signal, zero padded, odd kernel.
class Conv1d {
public:
    Conv1d() = default;
    Conv1d(ParamStore& store, const std::string& name, int in_channels, int out_channels,
           int kernel)
        : in_(in_channels),
          out_(out_channels),
          k_(kernel),
          w_(store.create(name + ".w", out_channels, in_channels * kernel)),
          b_(store.create(name + ".b", out_channels, 1)) {
        if (kernel % 2 == 0) throw Error("convolution kernel must be odd");
    }

    void init(RandomStream& rng) {
        double std = std::sqrt(2.0 / double(w_->value.cols()));
        for (int i = 0; i < w_->value.rows(); ++i)
            for (int j = 0; j < w_->value.cols(); ++j) w_->value(i, j) = rng.normal() * std;
        b_->value.setZero();
    }

    Eigen::MatrixXd forward(const Eigen::MatrixXd& x) {
        if (x.rows() != in_) throw ShapeMismatchError("conv input channel mismatch");
        const int h = int(x.cols());
        if (col_.rows() != in_ * k_ || col_.cols() != h) col_.resize(in_ * k_, h);
        col_.setZero();
        const int half = k_ / 2;
        for (int c = 0; c < in_; ++c)
            for (int j = 0; j < k_; ++j)
                for (int t = 0; t < h; ++t) {
                    int src = t + j - half;
                    if (src >= 0 && src < h) col_(c * k_ + j, t) = x(c, src);
                }
        return (w_->value * col_).colwise() + b_->value.col(0);
    }

    Eigen::MatrixXd backward(const Eigen::MatrixXd& dy) {
        const int h = int(dy.cols());
        w_->grad.noalias() += dy * col_.transpose();
        b_->grad.col(0) += dy.rowwise().sum();
        if (dcol_.rows() != in_ * k_ || dcol_.cols() != h) dcol_.resize(in_ * k_, h);
        dcol_.noalias() = w_->value.transpose() * dy;
        Eigen::MatrixXd dx = Eigen::MatrixXd::Zero(in_, h);
        const int half = k_ / 2;
        for (int c = 0; c < in_; ++c)
            for (int j = 0; j < k_; ++j)
                for (int t = 0; t < h; ++t) {
                    int src = t + j - half;
                    if (src >= 0 && src < h) dx(c, src) += dcol_(c * k_ + j, t);
                }
        return dx;
    }

private:
    int in_ = 0, out_ = 0, k_ = 1;
    NamedTensor* w_ = nullptr;
    NamedTensor* b_ = nullptr;
    Eigen::MatrixXd col_, dcol_;
};

class SiLU {
public:
    Eigen::MatrixXd forward(const Eigen::MatrixXd& x) {
        x_ = x;
        return x.unaryExpr([](double v) { return detail::silu_scalar(v); });
    }
    Eigen::MatrixXd backward(const Eigen::MatrixXd& dy) {
        return dy.cwiseProduct(x_.unaryExpr([](double v) { return detail::silu_grad_scalar(v); }));
    }

private:
    Eigen::MatrixXd x_;
};

// Sinusoidal position code for an integer timestep.
inline Eigen::VectorXd sinusoidal_embedding(int t, int dim) {
    if (dim < 2 || dim % 2 != 0) throw Error("time embedding dimension must be even");
    Eigen::VectorXd out(dim);
    int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        double freq = std::exp(-std::log(10000.0) * double(i) / double(half));
        out(i) = std::sin(double(t) * freq);
        out(half + i) = std::cos(double(t) * freq);
    }
    return out;
}

}  // namespace kalm

#include "flowtopo/dense_net.hpp"

#include <cmath>

#include "flowtopo/error.hpp"

namespace flowtopo {

const char* activation_name(Activation a) { return a == Activation::kTanh ? "tanh" : "relu"; }

Activation parse_activation(const std::string& s) {
  if (s == "tanh") return Activation::kTanh;
  if (s == "relu") return Activation::kRelu;
  throw_error(ErrorCode::kInvalidInput, "unknown activation '" + s + "'");
}

DenseNet::DenseNet(std::string name, int d_in, std::vector<int> hidden, int d_out, Activation activation,
                   OutputHead head, RngStream& rng, bool zero_output)
    : name_(std::move(name)), d_in_(d_in), d_out_(d_out), hidden_(std::move(hidden)),
      activation_(activation), head_(head) {
  require(d_in >= 1 && d_out >= 1, ErrorCode::kInvalidInput, "DenseNet: dimensions must be >= 1");
  std::vector<int> widths{d_in};
  for (int h : hidden_) {
    require(h >= 1, ErrorCode::kInvalidInput, "DenseNet: hidden width must be >= 1");
    widths.push_back(h);
  }
  widths.push_back(d_out);
  const std::size_t n_layers = widths.size() - 1;
  for (std::size_t l = 0; l < n_layers; ++l) {
    const int fan_in = widths[l], fan_out = widths[l + 1];
    Mat w(fan_in, fan_out);
    const bool last = l + 1 == n_layers;
    if (last && zero_output) {
      w.setZero();
    } else {
      const double limit = std::sqrt(6.0 / (fan_in + fan_out));
      for (Index i = 0; i < w.size(); ++i) w.data()[i] = limit * (2.0 * rng.uniform() - 1.0);
    }
    params_.push_back({name_ + ".W" + std::to_string(l), std::move(w)});
    params_.push_back({name_ + ".b" + std::to_string(l), Mat::Zero(1, fan_out)});
  }
}

Var DenseNet::forward(Tape& tape, Var x) const {
  if (x.cols() != d_in_)
    throw_error(ErrorCode::kInvalidInput, "DenseNet '" + name_ + "': expected input width " +
                                              std::to_string(d_in_) + ", got " + std::to_string(x.cols()));
  Var h = x;
  const std::size_t n_layers = params_.size() / 2;
  for (std::size_t l = 0; l < n_layers; ++l) {
    h = ad::add_row(ad::matmul(h, tape.param(params_[2 * l])), tape.param(params_[2 * l + 1]));
    if (l + 1 < n_layers) {
      h = activation_ == Activation::kTanh ? ad::tanh(h) : ad::relu(h);
    } else if (head_ == OutputHead::kSigmoid) {
      h = ad::sigmoid(h);
    }
  }
  return h;
}

Vec DenseNet::forward(const Vec& x) const {
  Tape tape(false);
  Var out = forward(tape, tape.constant(x.transpose()));
  return out.value().row(0).transpose();
}

void DenseNet::collect(std::vector<ParamBlock*>& out) {
  for (ParamBlock& p : params_) out.push_back(&p);
}

}  // namespace flowtopo

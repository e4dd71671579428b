#pragma once

#include <string>
#include <vector>

#include "flowtopo/rng.hpp"
#include "flowtopo/tape.hpp"

namespace flowtopo {

enum class Activation { kTanh, kRelu };
enum class OutputHead { kLinear, kSigmoid };

const char* activation_name(Activation a);
Activation parse_activation(const std::string& s);

/// Fully connected feed-forward network. Weights are stored input-major
/// (in x out) so a batch (n x in) maps to (n x out) by right-multiplication.
class DenseNet {
 public:
  DenseNet() = default;
  /// Hidden layers get scaled-uniform init from `rng`. With `zero_output`
  /// the last layer starts at zero, making the network a constant.
  DenseNet(std::string name, int d_in, std::vector<int> hidden, int d_out, Activation activation,
           OutputHead head, RngStream& rng, bool zero_output);

  int input_dim() const { return d_in_; }
  int output_dim() const { return d_out_; }
  const std::vector<int>& hidden() const { return hidden_; }
  Activation activation() const { return activation_; }
  OutputHead head() const { return head_; }

  Vec forward(const Vec& x) const;
  Var forward(Tape& tape, Var x) const;

  std::vector<ParamBlock>& layers() { return params_; }
  const std::vector<ParamBlock>& layers() const { return params_; }
  void collect(std::vector<ParamBlock*>& out);

 private:
  std::string name_;
  int d_in_ = 0;
  int d_out_ = 0;
  std::vector<int> hidden_;
  Activation activation_ = Activation::kTanh;
  OutputHead head_ = OutputHead::kLinear;
  // Alternating weight (in x out) and bias (1 x out) blocks.
  std::vector<ParamBlock> params_;
};

}  // namespace flowtopo

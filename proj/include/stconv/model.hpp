#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "stconv/nn.hpp"
#include "stconv/tensor.hpp"

// Hybrid classifier: factorized 3D conv blocks, global average pooling, an
// embedding layer, then a fusion layer over [embedding, bag-of-words].

namespace stconv {

struct ConvBlockConfig {
  std::size_t out_channels = 8;
  std::size_t kt = 3;
  Extent3 pool{2, 2, 2};
};

struct HybridConfig {
  std::size_t num_classes = 5;
  Extent3 input{8, 32, 32};  // T, H, W
  std::vector<ConvBlockConfig> blocks{{8, 3, {2, 2, 2}}, {16, 3, {2, 2, 2}}, {32, 3, {2, 2, 2}}};
  std::size_t embed_dim = 64;
  std::size_t bow_dim = 64;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t epochs = 30;
  std::size_t batch_size = 5;
  std::uint64_t seed = 1;

  /// Throws ConfigError on broken invariants, naming the field or block.
  void validate() const;

  /// Channels entering the embedding layer after global average pooling.
  std::size_t flatten_dim() const;

  /// (C, T, H, W) after every block, in order. Throws ConfigError naming
  /// the first block whose pooling leaves an empty axis.
  std::vector<std::array<std::size_t, 4>> block_shapes() const;
};

inline constexpr std::size_t kSpatialKernel = 3;

struct AdamState {
  std::vector<std::vector<double>> m, v;  // one vector per parameter
  std::uint64_t step = 0;
};

struct HybridModel {
  HybridConfig cfg;
  std::vector<FactorizedConv3d> blocks;
  Tensor5 fc1_w;  // flatten_dim x embed_dim
  std::vector<double> fc1_b;
  Tensor5 fusion_w;  // (embed_dim + bow_dim) x num_classes
  std::vector<double> fusion_b;
  AdamState adam;
};

struct ParamView {
  std::string name;
  std::span<double> values;
  Shape5 shape;
};

struct ConstParamView {
  std::string name;
  std::span<const double> values;
  Shape5 shape;
};

/// Parameters in declaration order: per block temporal.w, spatial.w,
/// spatial.b; then fc1.w, fc1.b, fusion.w, fusion.b. The temporal stage's
/// bias stays zero: each block has one bias, after the spatial stage.
std::vector<ParamView> parameters(HybridModel& m);
std::vector<ConstParamView> parameters(const HybridModel& m);

/// Gradients in the same order and sizes as parameters().
using ParamGrads = std::vector<std::vector<double>>;

/// Glorot-uniform weights, zero biases, zero Adam state.
HybridModel model_init(const HybridConfig& cfg, std::uint64_t seed);

/// clips (N, 1, T, H, W), bow N x K -> logits N x C.
Tensor5 forward(const HybridModel& m, const Tensor5& clips, const Tensor5& bow);

struct LossGrads {
  double loss = 0.0;
  ParamGrads grads;
};

/// Mean softmax cross-entropy over the batch and its gradient with respect
/// to every parameter. Clips run in parallel, gradients sum in clip order.
LossGrads loss_and_grads(const HybridModel& m, const Tensor5& clips, const Tensor5& bow,
                         std::span<const std::size_t> labels);

/// One Adam update. Throws NumericError naming the parameter on a
/// non-finite gradient, before anything is modified.
void adam_step(HybridModel& m, const ParamGrads& grads);

struct TrainSet {
  std::vector<Tensor5> clips;             // each (1, 1, T, H, W)
  std::vector<std::vector<double>> bows;  // each of length K
  std::vector<std::size_t> labels;
};

/// Shuffles by (cfg.seed, epoch), runs one Adam step per batch and returns
/// the mean batch loss.
double train_epoch(HybridModel& m, const TrainSet& data, std::uint64_t epoch);

/// Argmax over one row of logits, lowest index on ties.
std::size_t argmax_row(const Tensor5& logits, std::size_t row);

std::size_t predict(const HybridModel& m, const Tensor5& clip, std::span<const double> bow);

}  // namespace stconv

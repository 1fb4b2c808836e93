#include "stconv/model.hpp"

#include <cmath>

#include "stconv/dataio.hpp"
#include "stconv/error.hpp"
#include "stconv/parallel.hpp"
#include "stconv/rng.hpp"

namespace stconv {

namespace {

Shape5 bias_shape(std::size_t n) { return {1, 1, 1, 1, n}; }

Extent3 block_padding(const ConvBlockConfig& b) { return {b.kt / 2, kSpatialKernel / 2, kSpatialKernel / 2}; }

// Everything one clip's backward pass needs from its forward pass.
struct ClipTrace {
  struct Block {
    Tensor5 input, mid, pre;  // conv input, temporal output, spatial output
    PoolArgmax argmax;
  };
  std::vector<Block> blocks;
  Shape5 last_shape{};
  Tensor5 pooled;  // 1 x Cout
  Tensor5 h_pre;   // 1 x embed
  Tensor5 z;       // 1 x (embed + K)
  Tensor5 logits;  // 1 x C
};

void check_inputs(const HybridModel& m, const Tensor5& clips, const Tensor5& bow) {
  const auto& c = m.cfg;
  const auto& s = clips.shape();
  if (s[1] != 1 || s[2] != c.input[0] || s[3] != c.input[1] || s[4] != c.input[2]) {
    throw ShapeError("clips shape " + to_string(s) + " does not match model input (N, 1, " +
                     std::to_string(c.input[0]) + ", " + std::to_string(c.input[1]) + ", " +
                     std::to_string(c.input[2]) + ")");
  }
  if (!bow.is_matrix() || bow.rows() != s[0] || bow.cols() != c.bow_dim) {
    throw ShapeError("bow shape " + to_string(bow.shape()) + " must be " + std::to_string(s[0]) +
                     " x " + std::to_string(c.bow_dim));
  }
}

Tensor5 clip_at(const Tensor5& clips, std::size_t n) {
  const auto& s = clips.shape();
  return slice_window(clips, {n, 0, 0, 0, 0}, {1, 1, s[2], s[3], s[4]});
}

ClipTrace trace_clip(const HybridModel& m, Tensor5 x, std::span<const double> bow) {
  ClipTrace tr;
  for (std::size_t b = 0; b < m.blocks.size(); ++b) {
    auto& blk = tr.blocks.emplace_back();
    blk.input = std::move(x);
    blk.mid = conv3d_forward(blk.input, m.blocks[b].temporal);
    blk.pre = conv3d_forward(blk.mid, m.blocks[b].spatial);
    const Extent3& pool = m.cfg.blocks[b].pool;
    PoolResult p = maxpool3d_forward(relu(blk.pre), pool, pool);
    blk.argmax = std::move(p.argmax);
    x = std::move(p.output);
  }
  tr.last_shape = x.shape();
  const std::size_t C = x.extent(1);
  const std::size_t vox = x.extent(2) * x.extent(3) * x.extent(4);
  tr.pooled = Tensor5::matrix(1, C);
  for (std::size_t c = 0; c < C; ++c) {
    double s = 0.0;
    for (std::size_t i = 0; i < vox; ++i) s += x[c * vox + i];
    tr.pooled(0, c) = s / static_cast<double>(vox);
  }
  tr.h_pre = fc_forward(tr.pooled, m.fc1_w, m.fc1_b);
  const std::size_t E = m.cfg.embed_dim;
  tr.z = Tensor5::matrix(1, E + bow.size());
  for (std::size_t i = 0; i < E; ++i) tr.z(0, i) = tr.h_pre(0, i) > 0.0 ? tr.h_pre(0, i) : 0.0;
  for (std::size_t i = 0; i < bow.size(); ++i) tr.z(0, E + i) = bow[i];
  tr.logits = fc_forward(tr.z, m.fusion_w, m.fusion_b);
  return tr;
}

void append(std::vector<double>& dst, std::span<const double> src) {
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
}

// Gradients of sum(logits * dlogits) for one clip.
ParamGrads backward_clip(const HybridModel& m, const ClipTrace& tr, const Tensor5& dlogits) {
  const std::size_t B = m.blocks.size();
  ParamGrads g(3 * B + 4);
  const FcGrads fus = fc_backward(tr.z, m.fusion_w, dlogits);
  g[3 * B + 2] = fus.grad_w.values();
  g[3 * B + 3] = fus.grad_b;

  const std::size_t E = m.cfg.embed_dim;
  Tensor5 dh = Tensor5::matrix(1, E);
  for (std::size_t i = 0; i < E; ++i) dh(0, i) = tr.h_pre(0, i) > 0.0 ? fus.grad_x(0, i) : 0.0;
  const FcGrads f1 = fc_backward(tr.pooled, m.fc1_w, dh);
  g[3 * B] = f1.grad_w.values();
  g[3 * B + 1] = f1.grad_b;

  const Shape5& s = tr.last_shape;
  const std::size_t vox = s[2] * s[3] * s[4];
  Tensor5 d(s);
  for (std::size_t c = 0; c < s[1]; ++c) {
    const double v = f1.grad_x(0, c) / static_cast<double>(vox);
    for (std::size_t i = 0; i < vox; ++i) d[c * vox + i] = v;
  }
  for (std::size_t b = B; b-- > 0;) {
    const auto& blk = tr.blocks[b];
    const Tensor5 dact = maxpool3d_backward(blk.argmax, d, blk.pre.shape());
    const Tensor5 dpre = relu_backward(blk.pre, dact);
    ConvGrads sp = conv3d_backward(blk.mid, m.blocks[b].spatial, dpre, true);
    ConvGrads tp = conv3d_backward(blk.input, m.blocks[b].temporal, sp.grad_x, b > 0);
    g[3 * b] = tp.grad_w.values();
    g[3 * b + 1] = sp.grad_w.values();
    g[3 * b + 2] = std::move(sp.grad_b);
    d = std::move(tp.grad_x);
  }
  return g;
}

void glorot(Tensor5& w, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (double& v : w.data()) v = rng.uniform(-bound, bound);
}

}  // namespace

void HybridConfig::validate() const {
  if (num_classes < 2) throw ConfigError("num_classes must be at least 2");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (blocks.empty()) throw ConfigError("at least one conv block is required");
  if (embed_dim == 0) throw ConfigError("embed_dim must be positive");
  if (input[0] == 0 || input[1] == 0 || input[2] == 0) throw ConfigError("input extents must be positive");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be a finite non-negative number");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("beta1 must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("beta2 must lie in [0, 1)");
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const auto& blk = blocks[b];
    if (blk.out_channels == 0 || blk.kt == 0) {
      throw ConfigError("block " + std::to_string(b) + ": channels and kt must be positive");
    }
    for (std::size_t p : blk.pool) {
      if (p == 0) throw ConfigError("block " + std::to_string(b) + ": pool window must be positive");
    }
  }
  block_shapes();
}

std::vector<std::array<std::size_t, 4>> HybridConfig::block_shapes() const {
  std::vector<std::array<std::size_t, 4>> out;
  std::array<std::size_t, 3> ext = input;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const auto& blk = blocks[b];
    const Extent3 k{blk.kt, kSpatialKernel, kSpatialKernel};
    const Extent3 pad = block_padding(blk);
    for (std::size_t ax = 0; ax < 3; ++ax) {
      const std::size_t conv = conv_out_extent(ext[ax], k[ax], 1, pad[ax]);
      ext[ax] = conv_out_extent(conv, blk.pool[ax], blk.pool[ax], 0);
      if (ext[ax] == 0) {
        static const char* axes[] = {"T", "H", "W"};
        throw ConfigError("block " + std::to_string(b) + ": pooling exhausts axis " + axes[ax] +
                          " (flatten dimension would be 0)");
      }
    }
    out.push_back({blk.out_channels, ext[0], ext[1], ext[2]});
  }
  return out;
}

std::size_t HybridConfig::flatten_dim() const { return block_shapes().back()[0]; }

std::vector<ParamView> parameters(HybridModel& m) {
  std::vector<ParamView> p;
  for (std::size_t b = 0; b < m.blocks.size(); ++b) {
    auto& f = m.blocks[b];
    const std::string pre = "block" + std::to_string(b) + ".";
    p.push_back({pre + "temporal.w", f.temporal.weights.data(), f.temporal.weights.shape()});
    p.push_back({pre + "spatial.w", f.spatial.weights.data(), f.spatial.weights.shape()});
    p.push_back({pre + "spatial.b", f.spatial.bias, bias_shape(f.spatial.bias.size())});
  }
  p.push_back({"fc1.w", m.fc1_w.data(), m.fc1_w.shape()});
  p.push_back({"fc1.b", m.fc1_b, bias_shape(m.fc1_b.size())});
  p.push_back({"fusion.w", m.fusion_w.data(), m.fusion_w.shape()});
  p.push_back({"fusion.b", m.fusion_b, bias_shape(m.fusion_b.size())});
  return p;
}

std::vector<ConstParamView> parameters(const HybridModel& m) {
  std::vector<ConstParamView> out;
  for (auto& v : parameters(const_cast<HybridModel&>(m))) out.push_back({v.name, v.values, v.shape});
  return out;
}

HybridModel model_init(const HybridConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  HybridModel m;
  m.cfg = cfg;
  Rng rng(mix64(seed, 0x1417));
  std::size_t cin = 1;
  for (const auto& blk : cfg.blocks) {
    const std::size_t c = blk.out_channels;
    auto f = FactorizedConv3d::zeros(cin, c, c, {blk.kt, kSpatialKernel, kSpatialKernel}, {1, 1, 1},
                                     block_padding(blk));
    glorot(f.temporal.weights, cin * blk.kt, c * blk.kt, rng);
    const std::size_t area = kSpatialKernel * kSpatialKernel;
    glorot(f.spatial.weights, c * area, c * area, rng);
    m.blocks.push_back(std::move(f));
    cin = c;
  }
  const std::size_t flat = cfg.flatten_dim();
  m.fc1_w = Tensor5::matrix(flat, cfg.embed_dim);
  glorot(m.fc1_w, flat, cfg.embed_dim, rng);
  m.fc1_b.assign(cfg.embed_dim, 0.0);
  const std::size_t fused = cfg.embed_dim + cfg.bow_dim;
  m.fusion_w = Tensor5::matrix(fused, cfg.num_classes);
  glorot(m.fusion_w, fused, cfg.num_classes, rng);
  m.fusion_b.assign(cfg.num_classes, 0.0);
  for (const auto& p : parameters(m)) {
    m.adam.m.emplace_back(p.values.size(), 0.0);
    m.adam.v.emplace_back(p.values.size(), 0.0);
  }
  return m;
}

Tensor5 forward(const HybridModel& m, const Tensor5& clips, const Tensor5& bow) {
  check_inputs(m, clips, bow);
  const std::size_t N = clips.extent(0), C = m.cfg.num_classes, K = m.cfg.bow_dim;
  Tensor5 logits = Tensor5::matrix(N, C);
  parallel_for(N, default_workers(), [&](std::size_t n) {
    const ClipTrace tr = trace_clip(m, clip_at(clips, n), bow.data().subspan(n * K, K));
    for (std::size_t c = 0; c < C; ++c) logits(n, c) = tr.logits(0, c);
  });
  return logits;
}

LossGrads loss_and_grads(const HybridModel& m, const Tensor5& clips, const Tensor5& bow,
                         std::span<const std::size_t> labels) {
  check_inputs(m, clips, bow);
  const std::size_t N = clips.extent(0), C = m.cfg.num_classes, K = m.cfg.bow_dim;
  if (labels.size() != N) throw ShapeError("expected " + std::to_string(N) + " labels");
  std::vector<ClipTrace> traces(N);
  parallel_for(N, default_workers(), [&](std::size_t n) {
    traces[n] = trace_clip(m, clip_at(clips, n), bow.data().subspan(n * K, K));
  });
  Tensor5 logits = Tensor5::matrix(N, C);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c) logits(n, c) = traces[n].logits(0, c);
  LossAndGrad lg = softmax_cross_entropy(logits, labels);

  std::vector<ParamGrads> per_clip(N);
  parallel_for(N, default_workers(), [&](std::size_t n) {
    Tensor5 d = Tensor5::matrix(1, C);
    for (std::size_t c = 0; c < C; ++c) d(0, c) = lg.grad_logits(n, c);
    per_clip[n] = backward_clip(m, traces[n], d);
  });

  LossGrads out;
  out.loss = lg.loss;
  for (const auto& p : parameters(m)) out.grads.emplace_back(p.values.size(), 0.0);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t i = 0; i < out.grads.size(); ++i) append(out.grads[i], per_clip[n][i]);
  return out;
}

void adam_step(HybridModel& m, const ParamGrads& grads) {
  auto params = parameters(m);
  if (grads.size() != params.size()) {
    throw ShapeError("expected " + std::to_string(params.size()) + " gradient tensors, got " +
                     std::to_string(grads.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].size() != params[i].values.size()) {
      throw ShapeError("gradient for " + params[i].name + " has " + std::to_string(grads[i].size()) +
                       " values, parameter has " + std::to_string(params[i].values.size()));
    }
    for (double g : grads[i]) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in " + params[i].name);
    }
  }
  const auto& c = m.cfg;
  ++m.adam.step;
  const double t = static_cast<double>(m.adam.step);
  const double c1 = 1.0 - std::pow(c.beta1, t);
  const double c2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& mi = m.adam.m[i];
    auto& vi = m.adam.v[i];
    auto theta = params[i].values;
    for (std::size_t j = 0; j < theta.size(); ++j) {
      const double g = grads[i][j];
      mi[j] = c.beta1 * mi[j] + (1.0 - c.beta1) * g;
      vi[j] = c.beta2 * vi[j] + (1.0 - c.beta2) * g * g;
      const double mhat = mi[j] / c1, vhat = vi[j] / c2;
      theta[j] -= c.lr * mhat / (std::sqrt(vhat) + c.epsilon);
    }
  }
}

double train_epoch(HybridModel& m, const TrainSet& data, std::uint64_t epoch) {
  const std::size_t M = data.clips.size();
  if (M == 0) throw InputError("training set is empty");
  if (data.bows.size() != M || data.labels.size() != M) {
    throw InputError("training set clips, bows and labels differ in length");
  }
  const auto& in = m.cfg.input;
  const std::size_t K = m.cfg.bow_dim;
  const std::size_t vox = in[0] * in[1] * in[2];
  double total = 0.0;
  const auto batches = batch_iter(M, m.cfg.batch_size, m.cfg.seed, epoch);
  for (const auto& batch : batches) {
    const std::size_t N = batch.size();
    Tensor5 clips({N, 1, in[0], in[1], in[2]});
    Tensor5 bow = Tensor5::matrix(N, K);
    std::vector<std::size_t> labels(N);
    for (std::size_t i = 0; i < N; ++i) {
      const std::size_t idx = batch[i];
      const Tensor5& c = data.clips[idx];
      if (c.size() != vox) throw ShapeError("training clip " + std::to_string(idx) + " has shape " + to_string(c.shape()));
      if (data.bows[idx].size() != K) throw ShapeError("training bow " + std::to_string(idx) + " has wrong length");
      std::copy(c.data().begin(), c.data().end(), clips.data().begin() + static_cast<std::ptrdiff_t>(i * vox));
      std::copy(data.bows[idx].begin(), data.bows[idx].end(), bow.data().begin() + static_cast<std::ptrdiff_t>(i * K));
      labels[i] = data.labels[idx];
    }
    LossGrads lg = loss_and_grads(m, clips, bow, labels);
    if (!std::isfinite(lg.loss)) throw NumericError("non-finite loss in epoch " + std::to_string(epoch));
    adam_step(m, lg.grads);
    total += lg.loss;
  }
  return total / static_cast<double>(batches.size());
}

std::size_t argmax_row(const Tensor5& logits, std::size_t row) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < logits.cols(); ++c) {
    if (logits(row, c) > logits(row, best)) best = c;
  }
  return best;
}

std::size_t predict(const HybridModel& m, const Tensor5& clip, std::span<const double> bow) {
  Tensor5 b = Tensor5::matrix(1, bow.size());
  std::copy(bow.begin(), bow.end(), b.data().begin());
  const auto& s = clip.shape();
  return argmax_row(forward(m, clip.reshaped({1, 1, s[2], s[3], s[4]}), b), 0);
}

}  // namespace stconv

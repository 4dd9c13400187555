#include "voxseg/network.hpp"

#include <cmath>

#include "voxseg/errors.hpp"

namespace voxseg {

template <typename T>
Tensor<T> ParamSet<T>::add(const std::string& name, Tensor<T> tensor, bool trainable) {
  if (contains(name)) throw InvariantViolation("duplicate parameter name '" + name + "'");
  tensor.set_requires_grad(trainable);
  index_[name] = entries_.size();
  entries_.push_back({name, tensor, trainable});
  return tensor;
}

template <typename T>
Tensor<T> ParamSet<T>::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("missing parameter '" + name + "'");
  return entries_[it->second].tensor;
}

template <typename T>
std::vector<typename ParamSet<T>::Entry> ParamSet<T>::trainable() const {
  std::vector<Entry> out;
  for (const auto& e : entries_) {
    if (e.trainable) out.push_back(e);
  }
  return out;
}

template <typename T>
Index ParamSet<T>::trainable_count() const {
  Index n = 0;
  for (const auto& e : entries_) {
    if (e.trainable) n += e.tensor.numel();
  }
  return n;
}

template <typename T>
void ParamSet<T>::zero_grad() const {
  for (const auto& e : entries_) e.tensor.zero_grad();
}

template <typename T>
ParamSet<T> ParamSet<T>::clone() const {
  ParamSet out;
  for (const auto& e : entries_) out.add(e.name, e.tensor.clone(), e.trainable);
  return out;
}

template <typename T>
void ParamSet<T>::assign(const ParamSet& other) {
  if (other.entries_.size() != entries_.size()) throw ShapeError("ParamSet::assign: layout mismatch");
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    auto& dst = entries_[i];
    const auto& src = other.entries_[i];
    if (dst.name != src.name || dst.tensor.shape() != src.tensor.shape()) {
      throw ShapeError("ParamSet::assign: entry '" + dst.name + "' does not match '" + src.name + "'");
    }
    auto d = dst.tensor.mutable_data();
    auto s = src.tensor.data();
    std::copy(s.begin(), s.end(), d.begin());
  }
}

namespace {

template <typename T>
Tensor<T> uniform_tensor(Shape shape, double bound, Rng& rng) {
  Tensor<T> t(std::move(shape));
  for (T& v : t.mutable_data()) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

}  // namespace

template <typename T>
void ParamInit<T>::conv(const std::string& name, Index c_out, Index c_in, Index k, bool bias) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(c_in * k * k * k));
  params.add(name + ".w", uniform_tensor<T>({c_out, c_in, k, k, k}, bound, rng));
  if (bias) params.add(name + ".b", uniform_tensor<T>({c_out}, bound, rng));
}

template <typename T>
void ParamInit<T>::deconv(const std::string& name, Index c_in, Index c_out, Index k) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(c_out * k * k * k));
  params.add(name + ".w", uniform_tensor<T>({c_in, c_out, k, k, k}, bound, rng));
}

template <typename T>
void ParamInit<T>::batch_norm(const std::string& name, Index channels) {
  params.add(name + ".gamma", Tensor<T>({channels}, T(1)));
  params.add(name + ".beta", Tensor<T>({channels}, T(0)));
  const auto s = BatchNormState<T>::fresh(channels);
  params.add(name + ".running_mean", s.running_mean, false);
  params.add(name + ".running_var", s.running_var, false);
  params.add(name + ".tracked", s.tracked, false);
}

template <typename T>
void ParamInit<T>::linear(const std::string& name, Index out, Index in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  params.add(name + ".w", uniform_tensor<T>({out, in}, bound, rng));
  params.add(name + ".b", uniform_tensor<T>({out}, bound, rng));
}

template <typename T>
void ParamInit<T>::scalar(const std::string& name, T value) {
  params.add(name, Tensor<T>::scalar(value));
}

template <typename T>
BatchNormState<T> bn_state(const ParamSet<T>& params, const std::string& name) {
  return {params.at(name + ".running_mean"), params.at(name + ".running_var"), params.at(name + ".tracked")};
}

template <typename T>
Tensor<T> bn_apply(const ParamSet<T>& params, const std::string& name, const Tensor<T>& x, BnMode mode) {
  auto state = bn_state(params, name);
  return batch_norm(x, params.at(name + ".gamma"), params.at(name + ".beta"), state, mode);
}

template <typename T>
void init_channel_attention(ParamInit<T>& init, const std::string& name, Index channels, Index reduction) {
  if (reduction < 1 || channels % reduction != 0) {
    throw ConfigError("channel attention: " + std::to_string(channels) + " channels not divisible by reduction " +
                      std::to_string(reduction));
  }
  init.linear(name + ".fc1", channels / reduction, channels);
  init.linear(name + ".fc2", channels, channels / reduction);
}

template <typename T>
Tensor<T> channel_attention(const Tensor<T>& f, const ParamSet<T>& params, const std::string& name) {
  const Tensor<T> w1 = params.at(name + ".fc1.w");
  if (w1.dim(1) != f.dim(0)) {
    throw ShapeError("channel attention '" + name + "': expects " + std::to_string(w1.dim(1)) + " channels, got " +
                     std::to_string(f.dim(0)));
  }
  auto h = relu(fully_connected(global_avg_pool(f), w1, params.at(name + ".fc1.b")));
  auto gate = sigmoid(fully_connected(h, params.at(name + ".fc2.w"), params.at(name + ".fc2.b")));
  return scale_channels(f, gate);
}

template <typename T>
void init_spatial_attention(ParamInit<T>& init, const std::string& name, Index channels, double omega) {
  init.conv(name + ".a", channels, channels, 1);
  init.conv(name + ".b", channels, channels, 1);
  init.conv(name + ".c", channels, channels, 1);
  init.scalar(name + ".omega", static_cast<T>(omega));
}

template <typename T>
Tensor<T> spatial_attention(const Tensor<T>& f, const ParamSet<T>& params, const std::string& name, Index limit,
                            Tensor<T>* energy) {
  if (f.rank() != 4) throw ShapeError("spatial attention expects [C, D, H, W], got " + shape_str(f.shape()));
  const Index c = f.dim(0);
  const Index n = f.numel() / c;
  if (n > limit) {
    throw ShapeError("attention resolution too large: N = " + std::to_string(n) + " exceeds the limit " +
                     std::to_string(limit));
  }
  auto project = [&](const char* which) {
    const std::string p = name + "." + which;
    return reshape(conv3d(f, params.at(p + ".w"), params.at(p + ".b"), 1, 0), Shape{c, n});
  };
  const Tensor<T> a = project("a"), b = project("b"), cm = project("c");
  const Tensor<T> e = softmax(matmul(transpose(b), a), 0);
  if (energy) *energy = e;
  const Tensor<T> o = reshape(matmul(cm, e), f.shape());
  return add(f, scale_by(o, params.at(name + ".omega")));
}

template <typename T>
void init_sca_voxres(ParamInit<T>& init, const std::string& name, Index channels, Index reduction, double omega) {
  init.batch_norm(name + ".bn_a", channels);
  init.conv(name + ".conv_a", channels, channels, 3);
  init.batch_norm(name + ".bn_b", channels);
  init.conv(name + ".conv_b", channels, channels, 3);
  init_channel_attention(init, name + ".ca", channels, reduction);
  init_spatial_attention(init, name + ".sa", channels, omega);
}

template <typename T>
Tensor<T> sca_voxres(const Tensor<T>& x, const ParamSet<T>& params, const std::string& name, BnMode mode,
                     Index limit) {
  auto h = relu(bn_apply(params, name + ".bn_a", x, mode));
  h = conv3d(h, params.at(name + ".conv_a.w"), params.at(name + ".conv_a.b"), 1, 1);
  h = relu(bn_apply(params, name + ".bn_b", h, mode));
  h = conv3d(h, params.at(name + ".conv_b.w"), params.at(name + ".conv_b.b"), 1, 1);
  h = spatial_attention(channel_attention(h, params, name + ".ca"), params, name + ".sa", limit);
  if (h.shape() != x.shape()) {
    throw InvariantViolation("sca_voxres '" + name + "': branch shape " + shape_str(h.shape()) +
                             " drifted from input " + shape_str(x.shape()));
  }
  return add(x, h);
}

namespace {

std::string path_prefix(int path) { return "p" + std::to_string(path) + "."; }

// Name of trunk entry i: "l<first>" or "l<first>_<second>" for blocks.
std::vector<std::string> trunk_names(const ModelConfig& cfg) {
  std::vector<std::string> names;
  int layer = 1;
  for (const auto& l : cfg.trunk) {
    if (l.kind == LayerKind::sca_voxres) {
      names.push_back("l" + std::to_string(layer) + "_" + std::to_string(layer + 1));
      layer += 2;
    } else {
      names.push_back("l" + std::to_string(layer));
      layer += 1;
    }
  }
  return names;
}

constexpr int kDeconvKernel = 4;  // k = 2s with s = 2, pad = s/2

template <typename T>
ParamSet<T> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  Rng rng(seed);
  ParamSet<T> params;
  ParamInit<T> init{rng, params};
  const auto names = trunk_names(cfg);
  for (int path = 0; path < cfg.paths; ++path) {
    const std::string pp = path_prefix(path);
    Index channels = cfg.in_channels;
    std::vector<Index> channels_after;  // indexed by layer number
    channels_after.push_back(channels);
    for (std::size_t i = 0; i < cfg.trunk.size(); ++i) {
      const auto& l = cfg.trunk[i];
      const std::string n = pp + names[i];
      if (l.kind == LayerKind::conv) {
        init.conv(n + ".conv", l.channels, channels, 3);
        init.batch_norm(n + ".bn", l.channels);
      } else {
        init_sca_voxres(init, n, l.channels, cfg.reduction, cfg.omega_init);
        channels_after.push_back(l.channels);
      }
      channels = l.channels;
      channels_after.push_back(channels);
    }
    for (std::size_t t = 0; t < cfg.taps.size(); ++t) {
      const auto& tap = cfg.taps[t];
      Index c = channels_after[static_cast<std::size_t>(tap.after_layer)];
      for (int d = 0; d < tap.deconvs; ++d) {
        const std::string n = pp + "tap" + std::to_string(t + 1) + ".d" + std::to_string(d + 1);
        init.deconv(n + ".deconv", c, tap.channels, kDeconvKernel);
        init.batch_norm(n + ".bn", tap.channels);
        c = tap.channels;
      }
    }
  }
  init.conv("head", cfg.num_classes, cfg.feature_channels(), 1);
  return params;
}

}  // namespace

template <typename T>
Model<T>::Model(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)), params_(init_params<T>(cfg_, seed)) {}

template <typename T>
Model<T>::Model(ModelConfig cfg, ParamSet<T> params) : cfg_(std::move(cfg)), params_(std::move(params)) {
  validate(cfg_);
  const ParamSet<T> expected = init_params<T>(cfg_, 0);
  if (expected.entries().size() != params_.entries().size()) {
    throw ShapeError("model parameters do not match the config: expected " +
                     std::to_string(expected.entries().size()) + " tensors, got " +
                     std::to_string(params_.entries().size()));
  }
  for (const auto& e : expected.entries()) {
    const Tensor<T> got = params_.at(e.name);
    if (got.shape() != e.tensor.shape()) {
      throw ShapeError("parameter '" + e.name + "' has shape " + shape_str(got.shape()) + ", expected " +
                       shape_str(e.tensor.shape()));
    }
  }
}

template <typename T>
void Model<T>::check_input(const Tensor<T>& x) const {
  if (x.rank() != 4) throw ShapeError("model input must be [C, D, H, W], got " + shape_str(x.shape()));
  if (x.dim(0) != cfg_.in_channels) {
    throw ShapeError("model expects " + std::to_string(cfg_.in_channels) + " input channels, got " +
                     std::to_string(x.dim(0)));
  }
  const Index m = cfg_.patch_multiple();
  for (std::size_t a = 1; a < 4; ++a) {
    if (x.dim(a) % m != 0) {
      throw ConfigError("patch extent " + std::to_string(x.dim(a)) + " is not divisible by " + std::to_string(m));
    }
  }
}

template <typename T>
Tensor<T> Model<T>::features(const Tensor<T>& x, BnMode mode, int path) const {
  check_input(x);
  const std::string pp = path_prefix(path);
  const auto names = trunk_names(cfg_);
  std::vector<Tensor<T>> after;  // indexed by layer number
  after.push_back(x);
  Tensor<T> h = x;
  for (std::size_t i = 0; i < cfg_.trunk.size(); ++i) {
    const auto& l = cfg_.trunk[i];
    const std::string n = pp + names[i];
    if (l.kind == LayerKind::conv) {
      h = conv3d(h, params_.at(n + ".conv.w"), params_.at(n + ".conv.b"), l.stride, 1);
      h = relu(bn_apply(params_, n + ".bn", h, mode));
    } else {
      after.push_back(Tensor<T>());  // first conv of the block is not a tap point
      h = sca_voxres(h, params_, n, mode, cfg_.attention_limit);
    }
    after.push_back(h);
  }
  std::vector<Tensor<T>> taps;
  for (std::size_t t = 0; t < cfg_.taps.size(); ++t) {
    const auto& tap = cfg_.taps[t];
    Tensor<T> f = after[static_cast<std::size_t>(tap.after_layer)];
    for (int d = 0; d < tap.deconvs; ++d) {
      const std::string n = pp + "tap" + std::to_string(t + 1) + ".d" + std::to_string(d + 1);
      f = conv_transpose3d(f, params_.at(n + ".deconv.w"), 2, 1);
      f = relu(bn_apply(params_, n + ".bn", f, mode));
    }
    if (f.shape()[1] != x.dim(1) || f.shape()[2] != x.dim(2) || f.shape()[3] != x.dim(3)) {
      throw InvariantViolation("tap " + std::to_string(t + 1) + " resolution " + shape_str(f.shape()) +
                               " differs from input " + shape_str(x.shape()));
    }
    taps.push_back(f);
  }
  return concat_channels(taps);
}

template <typename T>
Tensor<T> segmentation_head(const Tensor<T>& features, const ParamSet<T>& params) {
  const Tensor<T> w = params.at("head.w");
  if (features.rank() != 4 || features.dim(0) != w.dim(1)) {
    throw ShapeError("segmentation head expects " + std::to_string(w.dim(1)) + " feature channels, got " +
                     shape_str(features.shape()));
  }
  return softmax(conv3d(features, w, params.at("head.b"), 1, 0), 0);
}

template <typename T>
Tensor<T> Model<T>::forward(const std::vector<Tensor<T>>& inputs, BnMode mode) const {
  if (static_cast<int>(inputs.size()) != cfg_.paths) {
    throw ShapeError("model has " + std::to_string(cfg_.paths) + " paths but got " + std::to_string(inputs.size()) +
                     " inputs");
  }
  for (std::size_t i = 1; i < inputs.size(); ++i) {
    if (inputs[i].shape() != inputs[0].shape()) {
      throw ShapeError("modality inputs differ in shape: " + shape_str(inputs[0].shape()) + " vs " +
                       shape_str(inputs[i].shape()));
    }
  }
  std::vector<Tensor<T>> feats;
  for (int p = 0; p < cfg_.paths; ++p) feats.push_back(features(inputs[static_cast<std::size_t>(p)], mode, p));
  return segmentation_head(feats.size() == 1 ? feats[0] : concat_channels(feats), params_);
}

Index parameter_count(const ModelConfig& cfg) { return init_params<float>(cfg, 0).trainable_count(); }

#define VOXSEG_INSTANTIATE(T)                                                                              \
  template class ParamSet<T>;                                                                              \
  template struct ParamInit<T>;                                                                            \
  template class Model<T>;                                                                                 \
  template BatchNormState<T> bn_state(const ParamSet<T>&, const std::string&);                             \
  template Tensor<T> bn_apply(const ParamSet<T>&, const std::string&, const Tensor<T>&, BnMode);           \
  template void init_channel_attention(ParamInit<T>&, const std::string&, Index, Index);                   \
  template Tensor<T> channel_attention(const Tensor<T>&, const ParamSet<T>&, const std::string&);          \
  template void init_spatial_attention(ParamInit<T>&, const std::string&, Index, double);                  \
  template Tensor<T> spatial_attention(const Tensor<T>&, const ParamSet<T>&, const std::string&, Index,    \
                                       Tensor<T>*);                                                        \
  template void init_sca_voxres(ParamInit<T>&, const std::string&, Index, Index, double);                  \
  template Tensor<T> sca_voxres(const Tensor<T>&, const ParamSet<T>&, const std::string&, BnMode, Index);  \
  template Tensor<T> segmentation_head(const Tensor<T>&, const ParamSet<T>&);

VOXSEG_INSTANTIATE(float)
VOXSEG_INSTANTIATE(double)

#undef VOXSEG_INSTANTIATE

}  // namespace voxseg

#include "voxseg/trainer.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "voxseg/checkpoint.hpp"
#include "voxseg/errors.hpp"

namespace voxseg {

template <typename T>
Adam<T>::Adam(const ParamSet<T>& params, AdamConfig cfg) : cfg_(cfg) {
  for (const auto& e : params.trainable()) {
    const auto n = static_cast<std::size_t>(e.tensor.numel());
    slots_.push_back({e.name, e.tensor, std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)});
  }
}

template <typename T>
void Adam<T>::step(double lr) {
  for (const auto& s : slots_) {
    for (T g : s.param.grad()) {
      if (!std::isfinite(static_cast<double>(g))) {
        throw TrainingDiverged("non-finite gradient in parameter '" + s.name + "'");
      }
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (auto& s : slots_) {
    auto p = s.param.mutable_data();
    auto g = s.param.grad();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g.empty() ? 0.0 : static_cast<double>(g[i]);
      s.m[i] = cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * gi;
      s.v[i] = cfg_.beta2 * s.v[i] + (1.0 - cfg_.beta2) * gi * gi;
      const double mhat = s.m[i] / c1, vhat = s.v[i] / c2;
      p[i] = static_cast<T>(static_cast<double>(p[i]) - lr * mhat / (std::sqrt(vhat) + cfg_.eps));
    }
  }
}

template class Adam<float>;
template class Adam<double>;

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("train: epochs must be non-negative");
  if (!(lr0 >= 0)) throw ConfigError("train: lr0 must be non-negative");
  if (!(decay > 0 && decay <= 1)) throw ConfigError("train: decay must lie in (0, 1]");
  if (batch_size < 1) throw ConfigError("train: batch_size must be at least 1");
}

double lr_at_epoch(const TrainConfig& cfg, int epoch) {
  if (epoch < 0) throw ConfigError("lr_at_epoch: negative epoch");
  return cfg.lr0 * std::pow(cfg.decay, epoch);
}

namespace {

struct Sample {
  std::vector<Tensor<float>> inputs;  // one per path
  Tensor<float> target;
};

std::vector<Sample> to_samples(const ModelConfig& cfg, const std::vector<Patch>& patches) {
  std::vector<Sample> out;
  out.reserve(patches.size());
  for (const auto& p : patches) {
    if (p.channels != cfg.in_channels * cfg.paths) {
      throw ShapeError("patch from '" + p.source_id + "' has " + std::to_string(p.channels) + " channels, model expects " +
                       std::to_string(cfg.in_channels * cfg.paths));
    }
    const Index s = p.size;
    const Index per_path = cfg.in_channels * s * s * s;
    Sample smp;
    for (int k = 0; k < cfg.paths; ++k) {
      std::vector<float> v(p.data.begin() + k * per_path, p.data.begin() + (k + 1) * per_path);
      smp.inputs.emplace_back(Shape{cfg.in_channels, s, s, s}, std::move(v));
    }
    smp.target = one_hot<float>(p.label, Shape{s, s, s});
    out.push_back(std::move(smp));
  }
  return out;
}

double batch_loss(const Model<float>& model, const std::vector<Sample>& samples, const std::vector<std::size_t>& idx,
                  std::size_t begin, std::size_t end, BnMode mode, const LossConfig& loss_cfg, Tape<float>* tape) {
  std::vector<Tensor<float>> probs, targets;
  for (std::size_t k = begin; k < end; ++k) {
    const Sample& s = samples[idx[k]];
    probs.push_back(model.forward(s.inputs, mode));
    targets.push_back(s.target);
  }
  Tensor<float> loss = focal_tversky_loss<float>(probs, targets, loss_cfg);
  if (tape) tape->backward(loss);
  return static_cast<double>(loss.item());
}

double mean_loss(const Model<float>& model, const std::vector<Sample>& samples, int batch_size,
                 const LossConfig& loss_cfg) {
  std::vector<std::size_t> idx(samples.size());
  std::iota(idx.begin(), idx.end(), 0);
  double total = 0;
  int batches = 0;
  for (std::size_t b = 0; b < idx.size(); b += static_cast<std::size_t>(batch_size)) {
    const std::size_t e = std::min(idx.size(), b + static_cast<std::size_t>(batch_size));
    total += batch_loss(model, samples, idx, b, e, BnMode::eval, loss_cfg, nullptr);
    ++batches;
  }
  return total / batches;
}

}  // namespace

double evaluate_loss(const Model<float>& model, const std::vector<Patch>& patches, int batch_size,
                     const LossConfig& loss_cfg) {
  if (patches.empty()) throw ConfigError("evaluate_loss: empty patch set");
  return mean_loss(model, to_samples(model.config(), patches), batch_size, loss_cfg);
}

TrainState train(Model<float>& model, const std::vector<Patch>& train_set, const std::vector<Patch>& val_set,
                 const TrainConfig& cfg, const LossConfig& loss_cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  loss_cfg.validate();
  if (train_set.empty()) throw ConfigError("train: empty training set");
  if (val_set.empty()) throw ConfigError("train: empty validation set");
  const auto train_samples = to_samples(model.config(), train_set);
  const auto val_samples = to_samples(model.config(), val_set);

  TrainState state;
  ParamSet<float> best = model.params().clone();
  auto save = [&](int epoch, double val) {
    if (cfg.checkpoint.empty()) return;
    save_checkpoint(model, cfg.checkpoint, {{"epoch", epoch}, {"val_loss", val}});
  };
  if (cfg.epochs == 0) save(-1, NAN);

  Adam<float> adam(model.params(), cfg.adam);
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(train_samples.size());
  std::iota(order.begin(), order.end(), 0);
  const auto bs = static_cast<std::size_t>(cfg.batch_size);

  auto diverged = [&](const std::string& why) {
    model.params().assign(best);
    throw TrainingDiverged(why + "; restored the parameters of the best epoch " + std::to_string(state.best_epoch));
  };

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at_epoch(cfg, epoch);
    rng.shuffle(order);
    double total = 0;
    int batches = 0;
    for (std::size_t b = 0; b < order.size(); b += bs) {
      model.params().zero_grad();
      double loss;
      {
        Tape<float> tape;
        loss = batch_loss(model, train_samples, order, b, std::min(order.size(), b + bs), BnMode::train, loss_cfg,
                          &tape);
      }
      if (!std::isfinite(loss)) diverged("non-finite training loss at epoch " + std::to_string(epoch));
      try {
        adam.step(lr);
      } catch (const TrainingDiverged& e) {
        diverged(e.what());
      }
      total += loss;
      ++batches;
    }
    EpochRecord rec{epoch, total / batches, mean_loss(model, val_samples, cfg.batch_size, loss_cfg), lr};
    if (!std::isfinite(rec.val_loss)) diverged("non-finite validation loss at epoch " + std::to_string(epoch));
    state.history.push_back(rec);
    if (state.best_epoch < 0 || rec.val_loss < state.best_val_loss) {
      state.best_epoch = epoch;
      state.best_val_loss = rec.val_loss;
      best = model.params().clone();
      save(epoch, rec.val_loss);
    }
    if (on_epoch) on_epoch(rec);
  }
  state.steps = adam.steps();
  model.params().assign(best);
  model.params().zero_grad();
  return state;
}

void write_history_csv(const TrainState& state, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << "epoch,train_loss,val_loss,lr\n";
  os.precision(17);
  for (const auto& r : state.history) os << r.epoch << ',' << r.train_loss << ',' << r.val_loss << ',' << r.lr << '\n';
  if (!os) throw IoError("failed writing " + path.string());
}

std::vector<EpochRecord> read_history_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line)) throw DegenerateInput(path.string() + ": empty CSV");
  if (line != "epoch,train_loss,val_loss,lr") throw IoError(path.string() + ": unexpected header '" + line + "'");
  std::vector<EpochRecord> out;
  int row = 1;
  while (std::getline(is, line)) {
    ++row;
    if (line.empty()) continue;
    std::istringstream ls(line);
    EpochRecord r;
    char c1 = 0, c2 = 0, c3 = 0;
    if (!(ls >> r.epoch >> c1 >> r.train_loss >> c2 >> r.val_loss >> c3 >> r.lr) || c1 != ',' || c2 != ',' ||
        c3 != ',') {
      throw IoError(path.string() + ": malformed row " + std::to_string(row) + ": '" + line + "'");
    }
    out.push_back(r);
  }
  if (out.empty()) throw DegenerateInput(path.string() + ": CSV has no data rows");
  return out;
}

Volume predict_probabilities(const Model<float>& model, const std::vector<MultiChannelVolume>& inputs,
                             Index patch_size) {
  const ModelConfig& cfg = model.config();
  if (static_cast<int>(inputs.size()) != cfg.paths) {
    throw ShapeError("predict: model has " + std::to_string(cfg.paths) + " paths, got " +
                     std::to_string(inputs.size()) + " inputs");
  }
  if (patch_size % cfg.patch_multiple() != 0) {
    throw ConfigError("predict: patch size " + std::to_string(patch_size) + " is not divisible by " +
                      std::to_string(cfg.patch_multiple()));
  }
  const Dims dims = inputs[0].dims;
  for (const auto& in : inputs) {
    if (in.dims != dims) throw ShapeError("predict: modality volumes differ in dims");
    if (in.channels != cfg.in_channels) throw ShapeError("predict: input channel count does not match the model");
  }
  const TilePlan plan = tile_plan(dims, patch_size);
  Volume out(dims);
  out.voxel_mm = inputs[0].voxel_mm;
  const Index p = patch_size;
  for (const auto& start : plan.windows) {
    std::vector<Tensor<float>> x;
    for (const auto& in : inputs) {
      Patch tile = extract_patch(in, nullptr, start, p);
      x.emplace_back(Shape{cfg.in_channels, p, p, p}, std::move(tile.data));
    }
    const Tensor<float> prob = model.forward(x, BnMode::eval);
    const float* lesion = prob.data().data() + p * p * p;
    for (Index z = 0; z < p && start[0] + z < dims[0]; ++z)
      for (Index y = 0; y < p && start[1] + y < dims[1]; ++y)
        for (Index xx = 0; xx < p && start[2] + xx < dims[2]; ++xx)
          out.at(start[0] + z, start[1] + y, start[2] + xx) = lesion[(z * p + y) * p + xx];
  }
  return out;
}

LabelVolume predict_volume(const Model<float>& model, const std::vector<MultiChannelVolume>& inputs,
                           Index patch_size) {
  const Volume prob = predict_probabilities(model, inputs, patch_size);
  LabelVolume out(prob.dims);
  out.voxel_mm = prob.voxel_mm;
  for (std::size_t i = 0; i < prob.data.size(); ++i) out.data[i] = prob.data[i] > 0.5f ? 1 : 0;
  return out;
}

LabelVolume predict_volume(const Model<float>& model, const MultiChannelVolume& input, Index patch_size) {
  return predict_volume(model, std::vector<MultiChannelVolume>{input}, patch_size);
}

LabelVolume mask_union(const LabelVolume& a, const LabelVolume& b) {
  if (a.dims != b.dims) throw ShapeError("mask_union: dims differ");
  require_binary(a);
  require_binary(b);
  LabelVolume out = a;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = a.data[i] | b.data[i];
  return out;
}

}  // namespace voxseg

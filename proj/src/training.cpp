#include "nfuse/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>

#include "nfuse/error.hpp"
#include "nfuse/ops.hpp"
#include "nfuse/tape.hpp"

namespace nfuse::train {

std::string to_string(TransferMode mode) {
  switch (mode) {
    case TransferMode::kBaseline: return "baseline";
    case TransferMode::kFineTune: return "fine-tune";
    case TransferMode::kRetrain: return "retrain";
    case TransferMode::kCascade: return "cascade";
  }
  return "?";
}

std::optional<TransferMode> parse_transfer_mode(std::string_view text) {
  if (text == "baseline") return TransferMode::kBaseline;
  if (text == "fine-tune" || text == "fine_tune") return TransferMode::kFineTune;
  if (text == "retrain") return TransferMode::kRetrain;
  if (text == "cascade") return TransferMode::kCascade;
  return std::nullopt;
}

std::size_t default_epochs(TransferMode mode) {
  switch (mode) {
    case TransferMode::kBaseline: return 0;
    case TransferMode::kFineTune: return 50;
    case TransferMode::kRetrain:
    case TransferMode::kCascade: return 200;
  }
  return 0;
}

TrainConfig TrainConfig::defaults(TransferMode mode) {
  TrainConfig c;
  c.mode = mode;
  c.epochs = default_epochs(mode);
  return c;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0) || !std::isfinite(learning_rate)) {
    fail(ErrorCategory::kArgument, "learning rate must be positive, got " + std::to_string(learning_rate));
  }
  if (!(momentum >= 0 && momentum < 1)) {
    fail(ErrorCategory::kArgument, "momentum must lie in [0, 1), got " + std::to_string(momentum));
  }
  if (batch_size == 0) fail(ErrorCategory::kArgument, "batch size must be at least 1");
  if (!(max_sigma >= 0) || !std::isfinite(max_sigma)) fail(ErrorCategory::kArgument, "blur sigma bound must be non-negative");
}

FreezeMask freeze_mask(std::span<const arch::Parameter> params, TransferMode mode) {
  FreezeMask mask;
  for (const auto& p : params) {
    switch (mode) {
      case TransferMode::kBaseline: mask.push_back(false); break;
      case TransferMode::kFineTune:
        mask.push_back(p.group == arch::ParamGroup::kFc || p.group == arch::ParamGroup::kCascade);
        break;
      case TransferMode::kRetrain: mask.push_back(true); break;
      case TransferMode::kCascade: mask.push_back(p.group == arch::ParamGroup::kCascade); break;
    }
  }
  return mask;
}

OptimizerState OptimizerState::zeros(std::span<const Tensor> params) {
  OptimizerState s;
  for (const auto& p : params) s.velocity.emplace_back(p.shape());
  return s;
}

void sgd_momentum_step(std::span<Tensor> params, std::span<const Tensor> grads, OptimizerState& state,
                       double learning_rate, double momentum, const FreezeMask& mask) {
  if (grads.size() != params.size() || state.velocity.size() != params.size() || mask.size() != params.size()) {
    fail(ErrorCategory::kShape, "optimizer got " + std::to_string(params.size()) + " parameters, " +
                                    std::to_string(grads.size()) + " gradients, " +
                                    std::to_string(state.velocity.size()) + " velocities and a mask of " +
                                    std::to_string(mask.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!mask[i]) continue;
    if (grads[i].shape() != params[i].shape() || state.velocity[i].shape() != params[i].shape()) {
      fail(ErrorCategory::kShape, "parameter " + std::to_string(i) + " has shape " + shape_to_string(params[i].shape()) +
                                      " but gradient " + shape_to_string(grads[i].shape()) + " and velocity " +
                                      shape_to_string(state.velocity[i].shape()));
    }
  }
  const auto lr = static_cast<float>(learning_rate);
  const auto mu = static_cast<float>(momentum);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!mask[i]) continue;
    auto p = params[i].mutable_data();
    auto v = state.velocity[i].mutable_data();
    const auto g = grads[i].data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      v[j] = mu * v[j] + g[j];
      p[j] -= lr * v[j];
    }
  }
}

std::vector<Example> load_examples(std::span<const data::Sample> samples, data::Modality modality) {
  std::vector<Example> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    auto vol = data::read_volume(s.path(modality));
    if (vol.modality() != modality) {
      fail(ErrorCategory::kData, s.path(modality).string() + " holds a " + data::to_string(vol.modality()) +
                                     " volume, expected " + data::to_string(modality));
    }
    out.push_back({s.session_id, labeling::class_index(s.label), std::move(vol)});
  }
  return out;
}

void write_log_csv(const std::filesystem::path& path, std::span<const EpochLog> log) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCategory::kIo, "cannot write " + path.string());
  out << "epoch,split,loss,accuracy,micro_auc\n";
  for (const auto& r : log) {
    out << r.epoch << ',' << r.split << ',' << metrics::format_double(r.loss) << ','
        << metrics::format_double(r.accuracy) << ',' << (r.micro_auc ? metrics::format_double(*r.micro_auc) : "")
        << '\n';
  }
  if (!out) fail(ErrorCategory::kIo, "failed writing " + path.string());
}

namespace {

double sample_loss(const metrics::ProbabilityRow& row, int target) {
  return -std::log(std::max(row[static_cast<std::size_t>(target)], 1e-300));
}

metrics::ProbabilityRow row_of(const Tensor& probabilities, std::size_t r) {
  metrics::ProbabilityRow row{};
  for (std::size_t c = 0; c < metrics::kClasses; ++c) row[c] = probabilities.data()[r * metrics::kClasses + c];
  return row;
}

EpochLog summarize(std::size_t epoch, std::string split, const Evaluation& e) {
  EpochLog log{epoch, std::move(split), e.loss, 0.0, std::nullopt};
  if (!e.predictions.rows.empty()) {
    log.accuracy = metrics::accuracy(e.predictions);
    log.micro_auc = metrics::auc_micro(e.predictions);
  }
  return log;
}

Tensor stack(std::span<const Tensor> items) {
  Shape shape = items.front().shape();
  const std::size_t n = items.front().numel();
  shape[0] = 0;
  std::vector<float> values;
  values.reserve(n * items.size());
  for (const auto& t : items) {
    values.insert(values.end(), t.data().begin(), t.data().end());
    shape[0] += t.extent(0);
  }
  return Tensor(std::move(shape), std::move(values));
}

Tensor as_row(const Tensor& t) { return Tensor(Shape{1, t.numel()}, std::vector<float>(t.data().begin(), t.data().end())); }

std::vector<Tensor> value_handles(std::span<arch::Parameter> params) {
  std::vector<Tensor> out;
  for (auto& p : params) out.push_back(p.value);
  return out;
}

// Shared epoch loop. `logits_for` runs the model on a batch of example
// indices for an epoch and returns differentiable logits.
struct LoopResult {
  std::vector<EpochLog> log;
  std::size_t steps = 0;
  std::size_t best_epoch = 0;
};

template <typename LogitsFor, typename Validate, typename Snapshot>
LoopResult run_epochs(std::span<arch::Parameter> params, const FreezeMask& mask, std::span<const int> targets,
                      bool has_validation, const TrainConfig& config, LogitsFor logits_for, Validate validate,
                      Snapshot snapshot) {
  const std::size_t n = targets.size();
  if (config.epochs > 0 && n == 0) fail(ErrorCategory::kData, "training set is empty");
  const bool any_trainable = std::find(mask.begin(), mask.end(), true) != mask.end();
  for (std::size_t i = 0; i < params.size(); ++i) params[i].value.set_tracked(mask[i]);
  auto handles = value_handles(params);
  auto state = OptimizerState::zeros(handles);

  LoopResult result;
  std::optional<double> best_auc;
  std::vector<std::size_t> order(n);
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(data::derive_seed(config.seed, 0x5EED, epoch));
    std::shuffle(order.begin(), order.end(), rng);

    Evaluation seen;
    double loss_sum = 0;
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::span<const std::size_t> batch(order.data() + start, std::min(config.batch_size, n - start));
      std::vector<int> batch_targets;
      for (auto i : batch) batch_targets.push_back(targets[i]);
      Tape tape;
      TapeScope scope(tape);
      const Tensor logits = logits_for(batch, epoch);
      const auto ce = ops::softmax_cross_entropy(logits, std::span<const int>(batch_targets));
      for (std::size_t r = 0; r < batch.size(); ++r) {
        const auto row = row_of(ce.probabilities, r);
        loss_sum += sample_loss(row, batch_targets[r]);
        seen.predictions.rows.push_back(row);
        seen.predictions.truth.push_back(batch_targets[r]);
      }
      if (!any_trainable) continue;
      tape.backward(ce.loss);
      std::vector<Tensor> grads;
      for (std::size_t i = 0; i < handles.size(); ++i) {
        if (mask[i] && handles[i].has_grad()) {
          grads.emplace_back(handles[i].shape(), std::vector<float>(handles[i].grad().begin(), handles[i].grad().end()));
        } else {
          grads.emplace_back(handles[i].shape());
        }
      }
      sgd_momentum_step(handles, grads, state, config.learning_rate, config.momentum, mask);
      ++result.steps;
    }
    seen.loss = loss_sum / static_cast<double>(n);
    result.log.push_back(summarize(epoch, "train", seen));

    if (has_validation) {
      const auto v = summarize(epoch, "validation", validate());
      result.log.push_back(v);
      const double score = v.micro_auc.value_or(-1.0);
      if (!best_auc || score > *best_auc) {
        best_auc = score;
        result.best_epoch = epoch;
        snapshot();
      }
    } else {
      result.best_epoch = epoch;
      snapshot();
    }
  }
  for (auto& p : params) p.value.set_tracked(false);
  return result;
}

std::vector<int> labels_of(std::span<const Example> examples) {
  std::vector<int> out;
  for (const auto& e : examples) out.push_back(e.label);
  return out;
}

Tensor center_input(const Example& e) { return data::prepare_input(e.volume, std::nullopt); }

}  // namespace

Evaluation evaluate(const arch::Network& network, std::span<const Example> examples) {
  Evaluation out;
  double loss = 0;
  for (const auto& e : examples) {
    const auto probs = network.forward(center_input(e));
    const auto row = row_of(probs, 0);
    loss += sample_loss(row, e.label);
    out.predictions.rows.push_back(row);
    out.predictions.truth.push_back(e.label);
  }
  out.loss = examples.empty() ? 0.0 : loss / static_cast<double>(examples.size());
  return out;
}

TrainResult train(const arch::Network& network, std::span<const Example> training, std::span<const Example> validation,
                  const TrainConfig& config) {
  config.validate();
  if (config.mode == TransferMode::kCascade) {
    fail(ErrorCategory::kArgument, "cascade mode trains a cascade head, not a backbone network");
  }
  auto working = network.clone();
  auto best = network.clone();
  const auto targets = labels_of(training);
  const auto mask = freeze_mask(working.parameters(), config.mode);

  auto logits_for = [&](std::span<const std::size_t> batch, std::size_t epoch) {
    std::vector<Tensor> inputs;
    for (auto i : batch) {
      const auto& vol = training[i].volume;
      std::optional<data::Augmentation> aug;
      if (config.augment) aug = data::draw_augmentation(vol.extents(), data::derive_seed(config.seed, epoch, i), config.max_sigma);
      inputs.push_back(data::prepare_input(vol, aug));
    }
    return working.run(stack(inputs)).logits;
  };
  auto loop = run_epochs(
      working.parameters(), mask, targets, !validation.empty(), config, logits_for,
      [&] { return evaluate(working, validation); }, [&] { best = working.clone(); });
  return TrainResult{std::move(best), std::move(loop.log), loop.steps, loop.best_epoch};
}

std::vector<EncodedExample> encode(const arch::Network& network, std::span<const Example> examples) {
  std::vector<EncodedExample> out;
  for (const auto& e : examples) {
    const auto enc = network.encode(center_input(e));
    out.push_back({e.session_id, e.label, Tensor(Shape{enc.numel()}, std::vector<float>(enc.data().begin(), enc.data().end()))});
  }
  return out;
}

std::vector<EncodingPair> pair_encodings(std::span<const EncodedExample> t1, std::span<const EncodedExample> flair) {
  std::map<std::string, const EncodedExample*> by_session;
  for (const auto& f : flair) {
    if (!by_session.emplace(f.session_id, &f).second) fail(ErrorCategory::kData, "session " + f.session_id + " has two FLAIR encodings");
  }
  std::vector<EncodingPair> out;
  for (const auto& t : t1) {
    const auto it = by_session.find(t.session_id);
    if (it == by_session.end()) fail(ErrorCategory::kData, "session " + t.session_id + " has a T1 encoding but no FLAIR encoding");
    if (it->second->label != t.label) fail(ErrorCategory::kData, "session " + t.session_id + " is labeled differently per modality");
    out.push_back({t.session_id, t.label, t.encoding, it->second->encoding});
    by_session.erase(it);
  }
  if (!by_session.empty()) {
    fail(ErrorCategory::kData, "session " + by_session.begin()->first + " has a FLAIR encoding but no T1 encoding");
  }
  return out;
}

namespace {

void check_pairs(const arch::CascadeHead& head, std::span<const EncodingPair> pairs) {
  for (const auto& p : pairs) {
    if (p.t1.numel() == 0 || p.flair.numel() == 0) {
      fail(ErrorCategory::kData, "session " + p.session_id + " lacks a " + (p.t1.numel() == 0 ? "T1" : "FLAIR") + " encoding");
    }
    if (p.t1.numel() != head.encoding_width() || p.flair.numel() != head.encoding_width()) {
      fail(ErrorCategory::kShape, "session " + p.session_id + " encodings do not have width " +
                                      std::to_string(head.encoding_width()));
    }
  }
}

}  // namespace

Evaluation evaluate_cascade(const arch::CascadeHead& head, std::span<const EncodingPair> pairs) {
  check_pairs(head, pairs);
  Evaluation out;
  double loss = 0;
  for (const auto& p : pairs) {
    const auto row = row_of(head.forward(as_row(p.t1), as_row(p.flair)), 0);
    loss += sample_loss(row, p.label);
    out.predictions.rows.push_back(row);
    out.predictions.truth.push_back(p.label);
  }
  out.loss = pairs.empty() ? 0.0 : loss / static_cast<double>(pairs.size());
  return out;
}

CascadeResult train_cascade(const arch::CascadeHead& head, std::span<const EncodingPair> training,
                            std::span<const EncodingPair> validation, const TrainConfig& config) {
  config.validate();
  check_pairs(head, training);
  check_pairs(head, validation);
  auto working = head.clone();
  auto best = head.clone();
  std::vector<int> targets;
  for (const auto& p : training) targets.push_back(p.label);
  const auto mask = freeze_mask(working.parameters(), TransferMode::kCascade);

  auto logits_for = [&](std::span<const std::size_t> batch, std::size_t) {
    std::vector<Tensor> t1, fl;
    for (auto i : batch) {
      t1.push_back(as_row(training[i].t1));
      fl.push_back(as_row(training[i].flair));
    }
    return working.logits(stack(t1), stack(fl));
  };
  auto loop = run_epochs(
      working.parameters(), mask, targets, !validation.empty(), config, logits_for,
      [&] { return evaluate_cascade(working, validation); }, [&] { best = working.clone(); });
  return CascadeResult{std::move(best), std::move(loop.log), loop.steps, loop.best_epoch};
}

}  // namespace nfuse::train

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nfuse/architecture.hpp"
#include "nfuse/data.hpp"
#include "nfuse/metrics.hpp"
#include "nfuse/tensor.hpp"

namespace nfuse::train {

enum class TransferMode { kBaseline, kFineTune, kRetrain, kCascade };

std::string to_string(TransferMode mode);  // "baseline", "fine-tune", "retrain", "cascade"
std::optional<TransferMode> parse_transfer_mode(std::string_view text);
// 0 for baseline, 50 for fine-tune, 200 for retrain and cascade.
std::size_t default_epochs(TransferMode mode);

struct TrainConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::size_t batch_size = 4;
  std::size_t epochs = 50;
  std::uint64_t seed = 1;
  TransferMode mode = TransferMode::kFineTune;
  // Blur sigma ~ U[0, max_sigma] plus a random crop per sample and epoch.
  bool augment = true;
  double max_sigma = 1.5;

  static TrainConfig defaults(TransferMode mode);
  // Throws kArgument on lr <= 0, momentum outside [0,1), batch size 0.
  void validate() const;
};

// true = trainable.
using FreezeMask = std::vector<bool>;

// baseline: nothing; fine-tune: FC layers; retrain: everything; cascade:
// the cascade classifier only.
FreezeMask freeze_mask(std::span<const arch::Parameter> params, TransferMode mode);

struct OptimizerState {
  std::vector<Tensor> velocity;  // zero-initialized, one per parameter

  static OptimizerState zeros(std::span<const Tensor> params);
};

// v <- mu v + g, theta <- theta - lr v for trainable entries; masked entries
// and their velocities are left alone.
void sgd_momentum_step(std::span<Tensor> params, std::span<const Tensor> grads, OptimizerState& state,
                       double learning_rate, double momentum, const FreezeMask& mask);

// A loaded volume with its label.
struct Example {
  std::string session_id;
  int label = 0;
  data::Volume volume;
};

std::vector<Example> load_examples(std::span<const data::Sample> samples, data::Modality modality);

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  std::string split;      // "train" or "validation"
  double loss = 0.0;
  double accuracy = 0.0;
  std::optional<double> micro_auc;
};

void write_log_csv(const std::filesystem::path& path, std::span<const EpochLog> log);

struct TrainResult {
  arch::Network network;  // best validation epoch, or the last one without validation
  std::vector<EpochLog> log;
  std::size_t steps = 0;
  std::size_t best_epoch = 0;  // 0 when no epoch ran
};

// Train rows: one per epoch, averaged over that epoch's augmented forward
// passes. Validation rows: one per epoch on center crops, when `validation`
// is nonempty. The input network is not modified.
TrainResult train(const arch::Network& network, std::span<const Example> training, std::span<const Example> validation,
                  const TrainConfig& config);

struct Evaluation {
  metrics::PredictionSet predictions;
  double loss = 0.0;
};

// Center-crop predictions, one row per example in order.
Evaluation evaluate(const arch::Network& network, std::span<const Example> examples);

struct EncodedExample {
  std::string session_id;
  int label = 0;
  Tensor encoding;  // [encoding_width]
};

std::vector<EncodedExample> encode(const arch::Network& network, std::span<const Example> examples);

struct EncodingPair {
  std::string session_id;
  int label = 0;
  Tensor t1;
  Tensor flair;
};

// Joins by session id in T1 order. A session present in only one modality, or
// labeled differently in the two, is rejected by name.
std::vector<EncodingPair> pair_encodings(std::span<const EncodedExample> t1, std::span<const EncodedExample> flair);

struct CascadeResult {
  arch::CascadeHead head;
  std::vector<EpochLog> log;
  std::size_t steps = 0;
  std::size_t best_epoch = 0;
};

CascadeResult train_cascade(const arch::CascadeHead& head, std::span<const EncodingPair> training,
                            std::span<const EncodingPair> validation, const TrainConfig& config);

Evaluation evaluate_cascade(const arch::CascadeHead& head, std::span<const EncodingPair> pairs);

}  // namespace nfuse::train

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nfuse/tensor.hpp"

namespace nfuse::arch {

enum class LayerKind { kConv3d, kInstanceNorm, kRelu, kMaxPool, kLinear, kSoftmax };

std::string to_string(LayerKind kind);

// One row of the architecture table. Fields a kind does not use stay empty.
struct LayerSpec {
  LayerKind kind = LayerKind::kRelu;
  std::optional<std::size_t> kernel;
  std::optional<std::size_t> channel_multiple;  // conv: channels = multiple * widening factor
  std::optional<std::size_t> padding;
  std::optional<std::size_t> stride;
  std::optional<std::size_t> dilation;
  std::optional<std::size_t> features;         // linear / softmax output width
  std::optional<std::size_t> declared_extent;  // published cubic output extent, if listed

  // Compact "k3-c32*f-p0-s1-d2" style descriptor.
  std::string descriptor() const;
};

struct BlockSpec {
  LayerSpec conv;
  LayerSpec pool;
};

// The four-block 3D CNN with an FC1 -> FC2 -> softmax head.
struct NetworkSpec {
  std::size_t widening_factor = 1;
  std::array<BlockSpec, 4> blocks;
  std::size_t input_extent = 96;
  std::size_t encoding_width = 1024;
  std::size_t num_classes = 3;
  // Replaces {4f, 32f, 64f, 64f} with explicit widths for reduced desk-scale runs.
  std::optional<std::array<std::size_t, 4>> channel_override;

  std::array<std::size_t, 4> channels() const;
  // Flattened layer list: 4 x (conv, norm, relu, pool), FC1, FC2, softmax.
  std::vector<LayerSpec> layers() const;
  // Throws on an ill-formed spec.
  void validate() const;
};

// The published configuration for widening factor f.
NetworkSpec default_spec(std::size_t widening_factor = 1);
// Same geometry with explicit channel widths.
NetworkSpec reduced_spec(std::array<std::size_t, 4> channels);

struct ShapePlanRow {
  std::size_t index = 0;  // position in layers()
  std::string block;      // "1".."4", "FC1", "FC2", "Softmax"
  LayerSpec layer;
  Shape computed;  // per-sample shape: [C,D,H,W] or [F]
  bool discrepancy = false;
};

struct ShapePlan {
  std::size_t input_extent = 96;
  std::vector<ShapePlanRow> rows;
  std::size_t flattened_features = 0;  // FC1 input width

  std::vector<const ShapePlanRow*> discrepancies() const;
  // Plain-text table: Block, Layer, Type, Output size (declared), Computed.
  std::string to_table() const;
};

// Computes every layer's output shape for a cubic input and flags layers whose
// computed extent differs from the declared one. Throws naming the layer index
// when a window does not fit.
ShapePlan shape_plan(const NetworkSpec& spec, std::size_t input_extent = 96);

enum class ParamGroup { kConv, kNorm, kFc, kCascade };

struct Parameter {
  std::string name;
  ParamGroup group;
  Tensor value;
};

template <typename T>
struct NetworkOutputs {
  BasicTensor<T> encoding;  // [N, encoding_width], FC1 after ReLU
  BasicTensor<T> logits;    // [N, num_classes]
};

// Runs the network on `batch` [N,1,E,E,E] with parameters laid out in
// Network::parameters() order. Differentiable through the active tape.
template <typename T>
NetworkOutputs<T> run_network(const NetworkSpec& spec, std::span<const BasicTensor<T>> params,
                              const BasicTensor<T>& batch);

class Network {
 public:
  // Scaled-uniform fan-in init (bound 1/sqrt(fan_in)) for conv and linear
  // weights and biases; instance-norm gamma = 1, beta = 0.
  static Network build(const NetworkSpec& spec, std::uint64_t seed);
  static Network build(std::size_t widening_factor, std::uint64_t seed) {
    return build(default_spec(widening_factor), seed);
  }

  const NetworkSpec& spec() const { return spec_; }
  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  std::size_t parameter_count() const;

  NetworkOutputs<float> run(const Tensor& batch) const;
  Tensor forward(const Tensor& batch) const;  // class probabilities [N,3]
  Tensor encode(const Tensor& batch) const;   // [N,1024]
  // FC2 + softmax applied to encodings.
  Tensor classify_encoding(const Tensor& encoding) const;

  Network clone() const;

 private:
  Network(NetworkSpec spec, std::vector<Parameter> params) : spec_(std::move(spec)), params_(std::move(params)) {}
  std::vector<Tensor> values() const;

  NetworkSpec spec_;
  std::vector<Parameter> params_;
};

enum class CascadeMode { kAdditive, kConcatenated };

std::string to_string(CascadeMode mode);

// Two-layer classifier over a pair of modality encodings.
class CascadeHead {
 public:
  static constexpr std::size_t kHiddenWidth = 512;

  static CascadeHead build(CascadeMode mode, std::uint64_t seed, std::size_t encoding_width = 1024);

  CascadeMode mode() const { return mode_; }
  std::size_t encoding_width() const { return encoding_width_; }
  std::size_t input_width() const;
  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }

  // enc_t1, enc_fl: [N, encoding_width]. Differentiable through the active tape.
  Tensor logits(const Tensor& enc_t1, const Tensor& enc_fl) const;
  Tensor forward(const Tensor& enc_t1, const Tensor& enc_fl) const;

  CascadeHead clone() const;

 private:
  CascadeHead(CascadeMode mode, std::size_t width, std::vector<Parameter> params)
      : mode_(mode), encoding_width_(width), params_(std::move(params)) {}

  CascadeMode mode_;
  std::size_t encoding_width_;
  std::vector<Parameter> params_;
};

// Checkpoint file: "NFUSE1", u32 widening factor, then tensor records until
// end of file, each: u32 name length, name bytes, u32 rank, u32 extents, f32
// data. All integers and floats little-endian.
struct NamedTensor {
  std::string name;
  Tensor value;
};

struct Checkpoint {
  std::size_t widening_factor = 1;
  std::vector<NamedTensor> tensors;
};

void write_checkpoint(const std::filesystem::path& path, std::size_t widening_factor,
                      std::span<const Parameter> params);
Checkpoint read_checkpoint(const std::filesystem::path& path);

// Rebuilds a network or head from checkpoint tensors. Channel widths come from
// the conv weight shapes; the cascade mode from the tensor name prefix.
Network network_from_checkpoint(const Checkpoint& checkpoint);
CascadeHead cascade_head_from_checkpoint(const Checkpoint& checkpoint);

}  // namespace nfuse::arch

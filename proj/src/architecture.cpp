#include "nfuse/architecture.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include "nfuse/binary_io.hpp"
#include "nfuse/error.hpp"
#include "nfuse/ops.hpp"

namespace nfuse::arch {

namespace {

constexpr std::string_view kCheckpointMagic = "NFUSE1";

LayerSpec conv_layer(std::size_t k, std::size_t c, std::size_t p, std::size_t s, std::size_t d, std::size_t declared) {
  LayerSpec l;
  l.kind = LayerKind::kConv3d;
  l.kernel = k;
  l.channel_multiple = c;
  l.padding = p;
  l.stride = s;
  l.dilation = d;
  l.declared_extent = declared;
  return l;
}

LayerSpec pool_layer(std::size_t k, std::size_t s, std::size_t declared) {
  LayerSpec l;
  l.kind = LayerKind::kMaxPool;
  l.kernel = k;
  l.stride = s;
  l.declared_extent = declared;
  return l;
}

LayerSpec plain_layer(LayerKind kind, std::optional<std::size_t> features = std::nullopt) {
  LayerSpec l;
  l.kind = kind;
  l.features = features;
  return l;
}

ops::ConvGeometry geometry_of(const LayerSpec& conv) {
  return {*conv.padding, *conv.stride, *conv.dilation};
}

std::string cube(std::size_t e) {
  return std::to_string(e) + "x" + std::to_string(e) + "x" + std::to_string(e);
}

std::string shape_text(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += 'x';
    out += std::to_string(s[i]);
  }
  return out;
}

Tensor uniform_tensor(Shape shape, float bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> dist(-bound, bound);
  Tensor t(std::move(shape));
  for (auto& v : t.mutable_data()) v = dist(rng);
  return t;
}

std::string cascade_prefix(CascadeMode mode) {
  return mode == CascadeMode::kAdditive ? "cascade_add" : "cascade_concat";
}

}  // namespace

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::kConv3d: return "Conv3D";
    case LayerKind::kInstanceNorm: return "InstanceNorm3D";
    case LayerKind::kRelu: return "ReLU";
    case LayerKind::kMaxPool: return "MaxPool3D";
    case LayerKind::kLinear: return "Linear";
    case LayerKind::kSoftmax: return "Softmax";
  }
  return "?";
}

std::string to_string(CascadeMode mode) {
  return mode == CascadeMode::kAdditive ? "additive" : "concatenated";
}

std::string LayerSpec::descriptor() const {
  switch (kind) {
    case LayerKind::kConv3d:
      return "k" + std::to_string(*kernel) + "-c" + std::to_string(*channel_multiple) + "*f-p" +
             std::to_string(*padding) + "-s" + std::to_string(*stride) + "-d" + std::to_string(*dilation);
    case LayerKind::kMaxPool:
      return "k" + std::to_string(*kernel) + "-s" + std::to_string(*stride);
    case LayerKind::kLinear:
    case LayerKind::kSoftmax:
      return features ? std::to_string(*features) : "";
    default:
      return "";
  }
}

std::array<std::size_t, 4> NetworkSpec::channels() const {
  if (channel_override) return *channel_override;
  std::array<std::size_t, 4> c{};
  for (std::size_t i = 0; i < 4; ++i) c[i] = *blocks[i].conv.channel_multiple * widening_factor;
  return c;
}

std::vector<LayerSpec> NetworkSpec::layers() const {
  std::vector<LayerSpec> out;
  for (const auto& b : blocks) {
    out.push_back(b.conv);
    out.push_back(plain_layer(LayerKind::kInstanceNorm));
    out.push_back(plain_layer(LayerKind::kRelu));
    out.push_back(b.pool);
  }
  out.push_back(plain_layer(LayerKind::kLinear, encoding_width));
  out.push_back(plain_layer(LayerKind::kLinear, num_classes));
  out.push_back(plain_layer(LayerKind::kSoftmax, num_classes));
  return out;
}

void NetworkSpec::validate() const {
  if (widening_factor < 1) fail(ErrorCategory::kArgument, "widening factor must be >= 1");
  if (num_classes != 3) fail(ErrorCategory::kArgument, "network head must output exactly 3 classes");
  if (encoding_width == 0) fail(ErrorCategory::kArgument, "encoding width must be positive");
  for (std::size_t i = 0; i < 4; ++i) {
    const auto& c = blocks[i].conv;
    const auto& p = blocks[i].pool;
    if (c.kind != LayerKind::kConv3d || p.kind != LayerKind::kMaxPool) {
      fail(ErrorCategory::kArgument, "block " + std::to_string(i + 1) + " must be conv3d followed by maxpool");
    }
    if (!c.kernel || !c.padding || !c.stride || !c.dilation || !c.channel_multiple || *c.kernel < 1 ||
        *c.stride < 1 || *c.dilation < 1) {
      fail(ErrorCategory::kArgument, "block " + std::to_string(i + 1) + " conv needs k, s, d >= 1 and p >= 0");
    }
    if (!p.kernel || !p.stride || *p.kernel < 1 || *p.stride < 1) {
      fail(ErrorCategory::kArgument, "block " + std::to_string(i + 1) + " pool needs k, s >= 1");
    }
  }
  for (auto c : channels()) {
    if (c == 0) fail(ErrorCategory::kArgument, "channel widths must be positive");
  }
}

NetworkSpec default_spec(std::size_t widening_factor) {
  if (widening_factor < 1) fail(ErrorCategory::kArgument, "widening factor must be >= 1");
  NetworkSpec spec;
  spec.widening_factor = widening_factor;
  spec.blocks = {{
      {conv_layer(1, 4, 0, 1, 1, 96), pool_layer(3, 2, 47)},
      {conv_layer(3, 32, 0, 1, 2, 43), pool_layer(3, 2, 21)},
      {conv_layer(5, 64, 2, 1, 2, 17), pool_layer(3, 2, 8)},
      {conv_layer(3, 64, 1, 1, 2, 6), pool_layer(5, 2, 5)},
  }};
  return spec;
}

NetworkSpec reduced_spec(std::array<std::size_t, 4> channels) {
  auto spec = default_spec(1);
  spec.channel_override = channels;
  spec.validate();
  return spec;
}

std::vector<const ShapePlanRow*> ShapePlan::discrepancies() const {
  std::vector<const ShapePlanRow*> out;
  for (const auto& r : rows) {
    if (r.discrepancy) out.push_back(&r);
  }
  return out;
}

std::string ShapePlan::to_table() const {
  std::ostringstream os;
  auto line = [&](const std::string& block, const std::string& layer, const std::string& type,
                  const std::string& declared, const std::string& computed, const std::string& flag) {
    os << std::left << std::setw(9) << block << std::setw(16) << layer << std::setw(20) << type << std::setw(14)
       << declared << std::setw(14) << computed << flag << '\n';
  };
  line("Block", "Layer", "Type", "Output size", "Computed", "");
  line("", "Inputs", "", cube(input_extent), shape_text({input_extent, input_extent, input_extent}) + " (c1)", "");
  for (const auto& r : rows) {
    const bool spatial = r.computed.size() == 4;
    std::string declared = r.layer.declared_extent ? cube(*r.layer.declared_extent) : "";
    std::string computed = spatial ? shape_text({r.computed[1], r.computed[2], r.computed[3]}) : shape_text(r.computed);
    if (spatial) computed += " (c" + std::to_string(r.computed[0]) + ")";
    const bool first_in_block = r.layer.kind == LayerKind::kConv3d || r.layer.kind == LayerKind::kLinear ||
                                r.layer.kind == LayerKind::kSoftmax;
    std::string layer_name = to_string(r.layer.kind);
    if (r.layer.kind == LayerKind::kLinear || r.layer.kind == LayerKind::kSoftmax) layer_name = "";
    line(first_in_block ? r.block : "", layer_name, r.layer.descriptor(), declared, computed,
         r.discrepancy ? "MISMATCH" : "");
  }
  return os.str();
}

ShapePlan shape_plan(const NetworkSpec& spec, std::size_t input_extent) {
  spec.validate();
  ShapePlan plan;
  plan.input_extent = input_extent;
  const auto channels = spec.channels();
  const auto layers = spec.layers();
  std::size_t extent = input_extent;
  std::size_t c = 1;
  for (std::size_t i = 0; i < 16; ++i) {
    const auto& layer = layers[i];
    const std::size_t block = i / 4;
    try {
      if (layer.kind == LayerKind::kConv3d) {
        extent = ops::conv_output_extent(extent, *layer.kernel, geometry_of(layer));
        c = channels[block];
      } else if (layer.kind == LayerKind::kMaxPool) {
        extent = ops::pool_output_extent(extent, *layer.kernel, *layer.stride);
      }
    } catch (const Error& e) {
      fail(ErrorCategory::kShape, "layer " + std::to_string(i) + " (block " + std::to_string(block + 1) + " " +
                                      to_string(layer.kind) + ") is infeasible: " + e.what());
    }
    ShapePlanRow row;
    row.index = i;
    row.block = std::to_string(block + 1);
    row.layer = layer;
    row.computed = {c, extent, extent, extent};
    row.discrepancy = layer.declared_extent.has_value() && *layer.declared_extent != extent;
    plan.rows.push_back(std::move(row));
  }
  plan.flattened_features = c * extent * extent * extent;
  const char* names[] = {"FC1", "FC2", "Softmax"};
  for (std::size_t i = 16; i < layers.size(); ++i) {
    ShapePlanRow row;
    row.index = i;
    row.block = names[i - 16];
    row.layer = layers[i];
    row.computed = {*layers[i].features};
    plan.rows.push_back(std::move(row));
  }
  return plan;
}

template <typename T>
NetworkOutputs<T> run_network(const NetworkSpec& spec, std::span<const BasicTensor<T>> params,
                              const BasicTensor<T>& batch) {
  const std::size_t e = spec.input_extent;
  if (batch.rank() != 5 || batch.extent(1) != 1 || batch.extent(2) != e || batch.extent(3) != e ||
      batch.extent(4) != e) {
    fail(ErrorCategory::kShape, "network input must be [N,1," + std::to_string(e) + "," + std::to_string(e) + "," +
                                    std::to_string(e) + "], got " + shape_to_string(batch.shape()));
  }
  if (params.size() != 20) fail(ErrorCategory::kArgument, "network expects 20 parameter tensors");
  BasicTensor<T> x = batch;
  for (std::size_t b = 0; b < 4; ++b) {
    const auto* p = params.data() + 4 * b;
    const auto& block = spec.blocks[b];
    x = ops::conv3d(x, p[0], p[1], geometry_of(block.conv));
    x = ops::instance_norm3d(x, p[2], p[3]);
    x = ops::relu(x);
    x = ops::maxpool3d(x, *block.pool.kernel, *block.pool.stride);
  }
  const std::size_t n = x.extent(0);
  const std::size_t features = x.numel() / n;
  auto flat = ops::reshape(x, Shape{n, features});
  auto encoding = ops::relu(ops::linear(flat, params[16], params[17]));
  auto logits = ops::linear(encoding, params[18], params[19]);
  return {encoding, logits};
}

template NetworkOutputs<float> run_network(const NetworkSpec&, std::span<const Tensor>, const Tensor&);
template NetworkOutputs<double> run_network(const NetworkSpec&, std::span<const Tensor64>, const Tensor64&);

Network Network::build(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  const auto plan = shape_plan(spec, spec.input_extent);
  const auto channels = spec.channels();
  std::mt19937_64 rng(seed);
  std::vector<Parameter> params;
  std::size_t in_channels = 1;
  for (std::size_t b = 0; b < 4; ++b) {
    const std::size_t k = *spec.blocks[b].conv.kernel;
    const std::size_t co = channels[b];
    const float bound = 1.0f / std::sqrt(static_cast<float>(in_channels * k * k * k));
    const std::string prefix = "block" + std::to_string(b + 1);
    params.push_back({prefix + ".conv.weight", ParamGroup::kConv, uniform_tensor({co, in_channels, k, k, k}, bound, rng)});
    params.push_back({prefix + ".conv.bias", ParamGroup::kConv, uniform_tensor({co}, bound, rng)});
    params.push_back({prefix + ".norm.gamma", ParamGroup::kNorm, Tensor(Shape{co}, 1.0f)});
    params.push_back({prefix + ".norm.beta", ParamGroup::kNorm, Tensor(Shape{co}, 0.0f)});
    in_channels = co;
  }
  const std::size_t fin = plan.flattened_features;
  const float b1 = 1.0f / std::sqrt(static_cast<float>(fin));
  params.push_back({"fc1.weight", ParamGroup::kFc, uniform_tensor({spec.encoding_width, fin}, b1, rng)});
  params.push_back({"fc1.bias", ParamGroup::kFc, uniform_tensor({spec.encoding_width}, b1, rng)});
  const float b2 = 1.0f / std::sqrt(static_cast<float>(spec.encoding_width));
  params.push_back({"fc2.weight", ParamGroup::kFc, uniform_tensor({spec.num_classes, spec.encoding_width}, b2, rng)});
  params.push_back({"fc2.bias", ParamGroup::kFc, uniform_tensor({spec.num_classes}, b2, rng)});
  return Network(spec, std::move(params));
}

std::size_t Network::parameter_count() const {
  std::size_t total = 0;
  for (const auto& p : params_) total += p.value.numel();
  return total;
}

std::vector<Tensor> Network::values() const {
  std::vector<Tensor> v;
  v.reserve(params_.size());
  for (const auto& p : params_) v.push_back(p.value);
  return v;
}

NetworkOutputs<float> Network::run(const Tensor& batch) const {
  const auto v = values();
  return run_network<float>(spec_, v, batch);
}

Tensor Network::forward(const Tensor& batch) const {
  return ops::softmax(run(batch).logits);
}

Tensor Network::encode(const Tensor& batch) const {
  return run(batch).encoding;
}

Tensor Network::classify_encoding(const Tensor& encoding) const {
  return ops::softmax(ops::linear(encoding, params_[18].value, params_[19].value));
}

Network Network::clone() const {
  auto copy = params_;
  for (auto& p : copy) p.value = p.value.clone();
  return Network(spec_, std::move(copy));
}

CascadeHead CascadeHead::build(CascadeMode mode, std::uint64_t seed, std::size_t encoding_width) {
  if (encoding_width == 0) fail(ErrorCategory::kArgument, "encoding width must be positive");
  const std::size_t in = mode == CascadeMode::kAdditive ? encoding_width : 2 * encoding_width;
  std::mt19937_64 rng(seed);
  const std::string prefix = cascade_prefix(mode);
  const float b1 = 1.0f / std::sqrt(static_cast<float>(in));
  const float b2 = 1.0f / std::sqrt(static_cast<float>(kHiddenWidth));
  std::vector<Parameter> params;
  params.push_back({prefix + ".fc1.weight", ParamGroup::kCascade, uniform_tensor({kHiddenWidth, in}, b1, rng)});
  params.push_back({prefix + ".fc1.bias", ParamGroup::kCascade, uniform_tensor({kHiddenWidth}, b1, rng)});
  params.push_back({prefix + ".fc2.weight", ParamGroup::kCascade, uniform_tensor({3, kHiddenWidth}, b2, rng)});
  params.push_back({prefix + ".fc2.bias", ParamGroup::kCascade, uniform_tensor({3}, b2, rng)});
  return CascadeHead(mode, encoding_width, std::move(params));
}

std::size_t CascadeHead::input_width() const {
  return mode_ == CascadeMode::kAdditive ? encoding_width_ : 2 * encoding_width_;
}

Tensor CascadeHead::logits(const Tensor& enc_t1, const Tensor& enc_fl) const {
  for (const auto* e : {&enc_t1, &enc_fl}) {
    if (e->rank() != 2 || e->extent(1) != encoding_width_) {
      fail(ErrorCategory::kShape, "cascade head expects encodings of width " + std::to_string(encoding_width_) +
                                      ", got " + shape_to_string(e->shape()));
    }
  }
  if (enc_t1.extent(0) != enc_fl.extent(0)) {
    fail(ErrorCategory::kShape, "cascade head got " + std::to_string(enc_t1.extent(0)) + " T1 and " +
                                    std::to_string(enc_fl.extent(0)) + " FLAIR encodings");
  }
  const Tensor joined = mode_ == CascadeMode::kAdditive ? ops::add(enc_t1, enc_fl) : ops::concat(enc_t1, enc_fl);
  auto hidden = ops::relu(ops::linear(joined, params_[0].value, params_[1].value));
  return ops::linear(hidden, params_[2].value, params_[3].value);
}

Tensor CascadeHead::forward(const Tensor& enc_t1, const Tensor& enc_fl) const {
  return ops::softmax(logits(enc_t1, enc_fl));
}

CascadeHead CascadeHead::clone() const {
  auto copy = params_;
  for (auto& p : copy) p.value = p.value.clone();
  return CascadeHead(mode_, encoding_width_, std::move(copy));
}

void write_checkpoint(const std::filesystem::path& path, std::size_t widening_factor,
                      std::span<const Parameter> params) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) fail(ErrorCategory::kIo, "cannot open " + path.string() + " for writing");
  io::write_bytes(os, kCheckpointMagic);
  io::write_u32(os, static_cast<std::uint32_t>(widening_factor));
  for (const auto& p : params) {
    io::write_u32(os, static_cast<std::uint32_t>(p.name.size()));
    io::write_bytes(os, p.name);
    io::write_u32(os, static_cast<std::uint32_t>(p.value.rank()));
    for (auto e : p.value.shape()) io::write_u32(os, static_cast<std::uint32_t>(e));
    io::write_f32s(os, p.value.data());
  }
  if (!os) fail(ErrorCategory::kIo, "failed writing " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorCategory::kIo, "cannot open checkpoint " + path.string());
  if (io::read_bytes(is, kCheckpointMagic.size()) != kCheckpointMagic) {
    fail(ErrorCategory::kFormat, path.string() + " is not a checkpoint (bad magic)");
  }
  Checkpoint ck;
  ck.widening_factor = io::read_u32(is);
  while (is.peek() != std::char_traits<char>::eof()) {
    NamedTensor t;
    const auto name_len = io::read_u32(is);
    if (name_len > 4096) fail(ErrorCategory::kFormat, "implausible tensor name length in " + path.string());
    t.name = io::read_bytes(is, name_len);
    const auto rank = io::read_u32(is);
    if (rank == 0 || rank > 8) fail(ErrorCategory::kFormat, "implausible rank for tensor " + t.name);
    Shape shape(rank);
    for (auto& e : shape) e = io::read_u32(is);
    t.value = Tensor(shape);
    io::read_f32s(is, t.value.mutable_data());
    ck.tensors.push_back(std::move(t));
  }
  return ck;
}

namespace {

const Tensor& find_tensor(const Checkpoint& ck, const std::string& name) {
  for (const auto& t : ck.tensors) {
    if (t.name == name) return t.value;
  }
  fail(ErrorCategory::kFormat, "checkpoint is missing tensor " + name);
}

}  // namespace

Network network_from_checkpoint(const Checkpoint& ck) {
  std::array<std::size_t, 4> channels{};
  for (std::size_t b = 0; b < 4; ++b) {
    const auto& w = find_tensor(ck, "block" + std::to_string(b + 1) + ".conv.weight");
    if (w.rank() != 5) fail(ErrorCategory::kFormat, "conv weight in checkpoint must have rank 5");
    channels[b] = w.extent(0);
  }
  NetworkSpec spec = default_spec(ck.widening_factor == 0 ? 1 : ck.widening_factor);
  if (channels != spec.channels()) spec.channel_override = channels;
  auto net = Network::build(spec, 0);
  for (auto& p : net.parameters()) {
    const auto& src = find_tensor(ck, p.name);
    if (src.shape() != p.value.shape()) {
      fail(ErrorCategory::kFormat, "checkpoint tensor " + p.name + " has shape " + shape_to_string(src.shape()) +
                                       ", expected " + shape_to_string(p.value.shape()));
    }
    p.value = src.clone();
  }
  return net;
}

CascadeHead cascade_head_from_checkpoint(const Checkpoint& ck) {
  for (CascadeMode mode : {CascadeMode::kAdditive, CascadeMode::kConcatenated}) {
    const std::string prefix = cascade_prefix(mode);
    const auto it = std::find_if(ck.tensors.begin(), ck.tensors.end(),
                                 [&](const NamedTensor& t) { return t.name == prefix + ".fc1.weight"; });
    if (it == ck.tensors.end()) continue;
    const std::size_t in = it->value.extent(1);
    const std::size_t width = mode == CascadeMode::kAdditive ? in : in / 2;
    auto head = CascadeHead::build(mode, 0, width);
    for (auto& p : head.parameters()) {
      const auto& src = find_tensor(ck, p.name);
      if (src.shape() != p.value.shape()) {
        fail(ErrorCategory::kFormat, "checkpoint tensor " + p.name + " has shape " + shape_to_string(src.shape()) +
                                         ", expected " + shape_to_string(p.value.shape()));
      }
      p.value = src.clone();
    }
    return head;
  }
  fail(ErrorCategory::kFormat, "checkpoint holds no cascade head");
}

}  // namespace nfuse::arch

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "birdtl/mel.hpp"

namespace birdtl {

enum class LayerKind {
  kConv,           // k x k, stride 1, same padding, `out` channels
  kRelu,
  kMaxPool,        // k x k window, stride k
  kAvgPool,        // k x k window, stride k (no parameters)
  kScale,          // y = scale * x + shift, fixed constants
  kGlobalAvgPool,  // C x H x W -> C
  kPatchFlatten,   // non-overlapping patch_h x patch_w patches, concatenated
  kDense,          // `out` units
};

enum class Activation { kSoftmax, kSigmoid };

std::string_view to_string(LayerKind kind);
std::string_view to_string(Activation a);
Activation parse_activation(std::string_view text);

struct LayerSpec {
  LayerKind kind = LayerKind::kRelu;
  int out = 0;
  int k = 0;
  double scale = 1.0;
  double shift = 0.0;
  int patch_h = 0;
  int patch_w = 0;

  bool operator==(const LayerSpec&) const = default;
};

struct NetworkSpec {
  std::string name;
  int input_height = 128;  // mel bands
  int input_width = 298;   // frames
  std::vector<LayerSpec> backbone;
  int embedding_dim = 0;
  int n_classes = 0;
  Activation activation = Activation::kSoftmax;

  nlohmann::json to_json() const;
  static NetworkSpec from_json(const nlohmann::json& j);
  bool operator==(const NetworkSpec&) const = default;
};

// Reference architectures: "teacher" (4 conv blocks 16/32/64/64), "student_a"
// (2 conv blocks 8/16) and "student_b" (patch flatten + 2-layer MLP 64/32). All
// start with a fixed average-pool stem and a fixed affine input scaling.
// `widths` overrides the per-block channels (or MLP widths) when non-empty.
struct ArchitectureOptions {
  int input_height = 128;
  int input_width = 298;
  int stem_pool = 4;
  double input_scale = 0.2;
  double input_shift = 1.0;
  std::vector<int> widths;
};

NetworkSpec architecture(std::string_view name, int n_classes, Activation activation,
                         const ArchitectureOptions& options = {});

struct Shape {
  int c = 1, h = 1, w = 1;
  std::size_t size() const { return static_cast<std::size_t>(c) * h * w; }
};

struct LayerPlan {
  LayerSpec spec;
  Shape in, out;
  std::size_t weight_offset = 0, weight_count = 0;
  std::size_t bias_offset = 0, bias_count = 0;
  bool head = false;
};

// Resolved layer chain: backbone layers followed by the dense head.
class NetworkLayout {
 public:
  explicit NetworkLayout(const NetworkSpec& spec);  // throws ShapeError on inconsistency

  const std::vector<LayerPlan>& layers() const { return layers_; }
  std::size_t head_index() const { return layers_.size() - 1; }
  std::size_t param_count() const { return param_count_; }
  std::size_t backbone_param_count() const { return layers_.back().weight_offset; }
  Shape input_shape() const { return layers_.front().in; }

 private:
  std::vector<LayerPlan> layers_;
  std::size_t param_count_ = 0;
};

// Batch x classes raw scores. Always held in double.
struct Logits {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  Logits() = default;
  Logits(std::size_t r, std::size_t c) : rows(r), cols(c), values(r * c, 0.0) {}
  double& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  std::span<const double> row(std::size_t r) const { return {values.data() + r * cols, cols}; }
};

// Activations of layers [first, last) for every item of a batch.
template <class T>
struct BatchCache {
  std::size_t first = 0;
  std::size_t last = 0;
  std::vector<std::vector<T>> inputs;                  // per item, input to layer `first`
  std::vector<std::vector<std::vector<T>>> outputs;    // [item][layer - first]
  std::vector<std::vector<std::vector<std::uint32_t>>> argmax;  // max-pool winners
};

// Runs layers [first, last) on each item; returns the outputs of layer last-1.
template <class T>
std::vector<std::vector<T>> run_layers(const NetworkLayout& layout, std::span<const T> params,
                                       const std::vector<std::vector<T>>& inputs, std::size_t first,
                                       std::size_t last, BatchCache<T>* cache);

// Reverse pass through cached layers [max(stop, cache.first), cache.last).
// `grad_out` holds dLoss/d(output of layer last-1) per item; parameter
// gradients are accumulated into `grad` (full parameter length).
template <class T>
void backprop_layers(const NetworkLayout& layout, std::span<const T> params, const BatchCache<T>& cache,
                     const std::vector<std::vector<T>>& grad_out, std::span<T> grad, std::size_t stop);

extern template std::vector<std::vector<float>> run_layers<float>(const NetworkLayout&, std::span<const float>,
                                                                  const std::vector<std::vector<float>>&,
                                                                  std::size_t, std::size_t, BatchCache<float>*);
extern template std::vector<std::vector<double>> run_layers<double>(const NetworkLayout&,
                                                                    std::span<const double>,
                                                                    const std::vector<std::vector<double>>&,
                                                                    std::size_t, std::size_t, BatchCache<double>*);
extern template void backprop_layers<float>(const NetworkLayout&, std::span<const float>, const BatchCache<float>&,
                                            const std::vector<std::vector<float>>&, std::span<float>, std::size_t);
extern template void backprop_layers<double>(const NetworkLayout&, std::span<const double>,
                                             const BatchCache<double>&, const std::vector<std::vector<double>>&,
                                             std::span<double>, std::size_t);

enum class FreezeSelector { kBackbone, kNone };

struct ForwardResult {
  Logits logits;
  BatchCache<float> cache;
};

class Network {
 public:
  // Kaiming-uniform weights, zero biases.
  Network(NetworkSpec spec, std::uint64_t seed);
  Network(NetworkSpec spec, std::vector<float> params);

  const NetworkSpec& spec() const { return spec_; }
  const NetworkLayout& layout() const { return layout_; }
  std::span<const float> params() const { return params_; }
  std::span<float> mutable_params() { return params_; }
  const std::vector<std::uint8_t>& frozen_mask() const { return frozen_; }
  void set_frozen(FreezeSelector selector);
  std::size_t trainable_count() const;
  // Index of the lowest layer holding a trainable parameter (layer count when none).
  std::size_t first_trainable_layer() const;

  // Input layout per item: row-major [n_mels x n_frames], matching MelSpectrogram.
  ForwardResult forward(const std::vector<std::vector<float>>& inputs) const;
  ForwardResult forward(std::span<const MelSpectrogram> batch) const;
  ForwardResult forward_head(const std::vector<std::vector<float>>& embeddings) const;
  std::vector<std::vector<float>> embed(const std::vector<std::vector<float>>& inputs) const;
  Logits infer(const std::vector<std::vector<float>>& inputs) const;

  // Exact gradient of the loss whose logit-gradient is `dlogits`; entries at
  // frozen parameters are zero. Backprop stops below the first trainable layer.
  std::vector<float> backward(const ForwardResult& fwd, const Logits& dlogits) const;

  // Copies backbone parameters from `other` (specs must share the backbone).
  void load_backbone(const Network& other);

 private:
  NetworkSpec spec_;
  NetworkLayout layout_;
  std::vector<float> params_;
  std::vector<std::uint8_t> frozen_;
};

Network freeze(Network net, FreezeSelector selector);

// softmax rows (max-subtracted) or elementwise sigmoid (branch on sign).
Logits activate(const Logits& logits, Activation kind);

std::vector<float> flatten_input(const MelSpectrogram& spec);

// Checkpoint: "BIRDTLCK" | u32 version | u64 json length | metadata JSON
// (contains "spec") | u64 param count | float32 LE params | u64 FNV-1a of all
// preceding bytes.
struct Checkpoint {
  Network network;
  nlohmann::json metadata;
};

void save_checkpoint(const std::filesystem::path& path, const Network& net, nlohmann::json metadata = {});
Checkpoint load_checkpoint(const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path, const NetworkSpec& expected);

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t h = 0xcbf29ce484222325ull);

}  // namespace birdtl

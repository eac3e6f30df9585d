#include "birdtl/network.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "birdtl/error.hpp"
#include "birdtl/rng.hpp"

namespace birdtl {
namespace {

using nlohmann::json;

LayerKind parse_kind(std::string_view s) {
  if (s == "conv") return LayerKind::kConv;
  if (s == "relu") return LayerKind::kRelu;
  if (s == "maxpool") return LayerKind::kMaxPool;
  if (s == "avgpool") return LayerKind::kAvgPool;
  if (s == "scale") return LayerKind::kScale;
  if (s == "gap") return LayerKind::kGlobalAvgPool;
  if (s == "patch_flatten") return LayerKind::kPatchFlatten;
  if (s == "dense") return LayerKind::kDense;
  throw ConfigError("unknown layer type '" + std::string(s) + "'");
}

// ---- per-layer kernels ------------------------------------------------------

template <class T>
void pad_input(const T* in, const Shape& s, int p, std::vector<T>& padded) {
  const int hp = s.h + 2 * p, wp = s.w + 2 * p;
  padded.assign(static_cast<std::size_t>(s.c) * hp * wp, T(0));
  for (int c = 0; c < s.c; ++c) {
    for (int y = 0; y < s.h; ++y) {
      const T* src = in + (static_cast<std::size_t>(c) * s.h + y) * s.w;
      T* dst = padded.data() + (static_cast<std::size_t>(c) * hp + y + p) * wp + p;
      std::copy(src, src + s.w, dst);
    }
  }
}

template <class T>
void conv_forward(const LayerPlan& L, const T* params, const T* in, T* out) {
  const int k = L.spec.k, p = k / 2;
  const Shape& is = L.in;
  const Shape& os = L.out;
  const int hp = is.h + 2 * p, wp = is.w + 2 * p;
  thread_local std::vector<T> padded;
  pad_input(in, is, p, padded);
  const T* W = params + L.weight_offset;
  const T* B = params + L.bias_offset;
  const std::size_t plane = static_cast<std::size_t>(os.h) * os.w;
  for (int oc = 0; oc < os.c; ++oc) {
    T* o = out + oc * plane;
    std::fill(o, o + plane, B[oc]);
    for (int ic = 0; ic < is.c; ++ic) {
      const T* src_c = padded.data() + static_cast<std::size_t>(ic) * hp * wp;
      for (int kh = 0; kh < k; ++kh) {
        for (int kw = 0; kw < k; ++kw) {
          const T w = W[((static_cast<std::size_t>(oc) * is.c + ic) * k + kh) * k + kw];
          for (int y = 0; y < os.h; ++y) {
            const T* src = src_c + static_cast<std::size_t>(y + kh) * wp + kw;
            T* dst = o + static_cast<std::size_t>(y) * os.w;
            for (int x = 0; x < os.w; ++x) dst[x] += w * src[x];
          }
        }
      }
    }
  }
}

template <class T>
void conv_backward(const LayerPlan& L, const T* params, const T* in, const T* dout, T* grad, T* din) {
  const int k = L.spec.k, p = k / 2;
  const Shape& is = L.in;
  const Shape& os = L.out;
  const int hp = is.h + 2 * p, wp = is.w + 2 * p;
  thread_local std::vector<T> padded;
  thread_local std::vector<T> dpadded;
  pad_input(in, is, p, padded);
  if (din) dpadded.assign(padded.size(), T(0));
  const T* W = params + L.weight_offset;
  T* dW = grad + L.weight_offset;
  T* dB = grad + L.bias_offset;
  const std::size_t plane = static_cast<std::size_t>(os.h) * os.w;
  for (int oc = 0; oc < os.c; ++oc) {
    const T* g = dout + oc * plane;
    T bsum = 0;
    for (std::size_t i = 0; i < plane; ++i) bsum += g[i];
    dB[oc] += bsum;
    for (int ic = 0; ic < is.c; ++ic) {
      const T* src_c = padded.data() + static_cast<std::size_t>(ic) * hp * wp;
      T* dsrc_c = din ? dpadded.data() + static_cast<std::size_t>(ic) * hp * wp : nullptr;
      for (int kh = 0; kh < k; ++kh) {
        for (int kw = 0; kw < k; ++kw) {
          const std::size_t widx = ((static_cast<std::size_t>(oc) * is.c + ic) * k + kh) * k + kw;
          const T w = W[widx];
          T acc = 0;
          for (int y = 0; y < os.h; ++y) {
            const T* src = src_c + static_cast<std::size_t>(y + kh) * wp + kw;
            const T* gr = g + static_cast<std::size_t>(y) * os.w;
            for (int x = 0; x < os.w; ++x) acc += gr[x] * src[x];
            if (dsrc_c) {
              T* dsrc = dsrc_c + static_cast<std::size_t>(y + kh) * wp + kw;
              for (int x = 0; x < os.w; ++x) dsrc[x] += w * gr[x];
            }
          }
          dW[widx] += acc;
        }
      }
    }
  }
  if (din) {
    for (int c = 0; c < is.c; ++c) {
      for (int y = 0; y < is.h; ++y) {
        const T* src = dpadded.data() + (static_cast<std::size_t>(c) * hp + y + p) * wp + p;
        std::copy(src, src + is.w, din + (static_cast<std::size_t>(c) * is.h + y) * is.w);
      }
    }
  }
}

template <class T>
void pool_forward(const LayerPlan& L, const T* in, T* out, std::uint32_t* argmax) {
  const int k = L.spec.k;
  const Shape& is = L.in;
  const Shape& os = L.out;
  const bool is_max = L.spec.kind == LayerKind::kMaxPool;
  const T inv = T(1) / static_cast<T>(k * k);
  for (int c = 0; c < os.c; ++c) {
    for (int y = 0; y < os.h; ++y) {
      for (int x = 0; x < os.w; ++x) {
        T best = 0;
        std::uint32_t best_idx = 0;
        T sum = 0;
        bool first = true;
        for (int dy = 0; dy < k; ++dy) {
          for (int dx = 0; dx < k; ++dx) {
            const auto idx = static_cast<std::uint32_t>((static_cast<std::size_t>(c) * is.h + y * k + dy) * is.w +
                                                        x * k + dx);
            const T v = in[idx];
            sum += v;
            if (first || v > best) {
              best = v;
              best_idx = idx;
              first = false;
            }
          }
        }
        const std::size_t o = (static_cast<std::size_t>(c) * os.h + y) * os.w + x;
        if (is_max) {
          out[o] = best;
          argmax[o] = best_idx;
        } else {
          out[o] = sum * inv;
        }
      }
    }
  }
}

template <class T>
void pool_backward(const LayerPlan& L, const T* dout, const std::uint32_t* argmax, T* din) {
  const int k = L.spec.k;
  const Shape& is = L.in;
  const Shape& os = L.out;
  std::fill(din, din + is.size(), T(0));
  if (L.spec.kind == LayerKind::kMaxPool) {
    for (std::size_t o = 0; o < os.size(); ++o) din[argmax[o]] += dout[o];
    return;
  }
  const T inv = T(1) / static_cast<T>(k * k);
  for (int c = 0; c < os.c; ++c) {
    for (int y = 0; y < os.h; ++y) {
      for (int x = 0; x < os.w; ++x) {
        const T g = dout[(static_cast<std::size_t>(c) * os.h + y) * os.w + x] * inv;
        for (int dy = 0; dy < k; ++dy) {
          for (int dx = 0; dx < k; ++dx) {
            din[(static_cast<std::size_t>(c) * is.h + y * k + dy) * is.w + x * k + dx] += g;
          }
        }
      }
    }
  }
}

// Patch-major ordering: [patch][channel][dy][dx].
template <class F>
void for_each_patch_element(const LayerPlan& L, F&& f) {
  const Shape& is = L.in;
  const int ph = L.spec.patch_h, pw = L.spec.patch_w;
  const int nph = is.h / ph, npw = is.w / pw;
  std::size_t o = 0;
  for (int py = 0; py < nph; ++py) {
    for (int px = 0; px < npw; ++px) {
      for (int c = 0; c < is.c; ++c) {
        for (int dy = 0; dy < ph; ++dy) {
          for (int dx = 0; dx < pw; ++dx) {
            f(o++, (static_cast<std::size_t>(c) * is.h + py * ph + dy) * is.w + px * pw + dx);
          }
        }
      }
    }
  }
}

template <class T>
void layer_forward(const LayerPlan& L, const T* params, const T* in, T* out, std::uint32_t* argmax) {
  switch (L.spec.kind) {
    case LayerKind::kConv:
      conv_forward(L, params, in, out);
      break;
    case LayerKind::kRelu:
      for (std::size_t i = 0; i < L.out.size(); ++i) out[i] = in[i] > T(0) ? in[i] : T(0);
      break;
    case LayerKind::kMaxPool:
    case LayerKind::kAvgPool:
      pool_forward(L, in, out, argmax);
      break;
    case LayerKind::kScale: {
      const T s = static_cast<T>(L.spec.scale), b = static_cast<T>(L.spec.shift);
      for (std::size_t i = 0; i < L.out.size(); ++i) out[i] = s * in[i] + b;
      break;
    }
    case LayerKind::kGlobalAvgPool: {
      const std::size_t plane = static_cast<std::size_t>(L.in.h) * L.in.w;
      for (int c = 0; c < L.in.c; ++c) {
        T acc = 0;
        for (std::size_t i = 0; i < plane; ++i) acc += in[c * plane + i];
        out[c] = acc / static_cast<T>(plane);
      }
      break;
    }
    case LayerKind::kPatchFlatten:
      for_each_patch_element(L, [&](std::size_t o, std::size_t i) { out[o] = in[i]; });
      break;
    case LayerKind::kDense: {
      const std::size_t n_in = L.in.size();
      const T* W = params + L.weight_offset;
      const T* B = params + L.bias_offset;
      for (int j = 0; j < L.out.c; ++j) {
        const T* w = W + static_cast<std::size_t>(j) * n_in;
        T acc = 0;
        for (std::size_t i = 0; i < n_in; ++i) acc += w[i] * in[i];
        out[j] = acc + B[j];
      }
      break;
    }
  }
}

// din may be null when the input gradient is not needed.
template <class T>
void layer_backward(const LayerPlan& L, const T* params, const T* in, const T* out, const std::uint32_t* argmax,
                    const T* dout, T* grad, T* din) {
  switch (L.spec.kind) {
    case LayerKind::kConv:
      conv_backward(L, params, in, dout, grad, din);
      break;
    case LayerKind::kRelu:
      if (din) {
        for (std::size_t i = 0; i < L.out.size(); ++i) din[i] = out[i] > T(0) ? dout[i] : T(0);
      }
      break;
    case LayerKind::kMaxPool:
    case LayerKind::kAvgPool:
      if (din) pool_backward(L, dout, argmax, din);
      break;
    case LayerKind::kScale:
      if (din) {
        const T s = static_cast<T>(L.spec.scale);
        for (std::size_t i = 0; i < L.out.size(); ++i) din[i] = s * dout[i];
      }
      break;
    case LayerKind::kGlobalAvgPool:
      if (din) {
        const std::size_t plane = static_cast<std::size_t>(L.in.h) * L.in.w;
        for (int c = 0; c < L.in.c; ++c) {
          const T g = dout[c] / static_cast<T>(plane);
          std::fill(din + c * plane, din + (c + 1) * plane, g);
        }
      }
      break;
    case LayerKind::kPatchFlatten:
      if (din) {
        std::fill(din, din + L.in.size(), T(0));
        for_each_patch_element(L, [&](std::size_t o, std::size_t i) { din[i] = dout[o]; });
      }
      break;
    case LayerKind::kDense: {
      const std::size_t n_in = L.in.size();
      const T* W = params + L.weight_offset;
      T* dW = grad + L.weight_offset;
      T* dB = grad + L.bias_offset;
      if (din) std::fill(din, din + n_in, T(0));
      for (int j = 0; j < L.out.c; ++j) {
        const T g = dout[j];
        dB[j] += g;
        T* dw = dW + static_cast<std::size_t>(j) * n_in;
        for (std::size_t i = 0; i < n_in; ++i) dw[i] += g * in[i];
        if (din) {
          const T* w = W + static_cast<std::size_t>(j) * n_in;
          for (std::size_t i = 0; i < n_in; ++i) din[i] += g * w[i];
        }
      }
      break;
    }
  }
}

void write_bytes(std::vector<std::uint8_t>& out, const void* p, std::size_t n) {
  const auto* b = static_cast<const std::uint8_t*>(p);
  out.insert(out.end(), b, b + n);
}

template <class U>
void write_le(std::vector<std::uint8_t>& out, U v) {
  static_assert(std::endian::native == std::endian::little, "checkpoint writer assumes little-endian host");
  write_bytes(out, &v, sizeof v);
}

}  // namespace

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::kConv: return "conv";
    case LayerKind::kRelu: return "relu";
    case LayerKind::kMaxPool: return "maxpool";
    case LayerKind::kAvgPool: return "avgpool";
    case LayerKind::kScale: return "scale";
    case LayerKind::kGlobalAvgPool: return "gap";
    case LayerKind::kPatchFlatten: return "patch_flatten";
    case LayerKind::kDense: return "dense";
  }
  return "relu";
}

std::string_view to_string(Activation a) { return a == Activation::kSoftmax ? "softmax" : "sigmoid"; }

Activation parse_activation(std::string_view text) {
  if (text == "softmax") return Activation::kSoftmax;
  if (text == "sigmoid") return Activation::kSigmoid;
  throw ConfigError("unknown activation '" + std::string(text) + "'");
}

json NetworkSpec::to_json() const {
  json layers = json::array();
  for (const auto& l : backbone) {
    json j = {{"type", to_string(l.kind)}};
    switch (l.kind) {
      case LayerKind::kConv: j["out"] = l.out; j["k"] = l.k; break;
      case LayerKind::kMaxPool:
      case LayerKind::kAvgPool: j["k"] = l.k; break;
      case LayerKind::kScale: j["scale"] = l.scale; j["shift"] = l.shift; break;
      case LayerKind::kPatchFlatten: j["patch_h"] = l.patch_h; j["patch_w"] = l.patch_w; break;
      case LayerKind::kDense: j["out"] = l.out; break;
      default: break;
    }
    layers.push_back(std::move(j));
  }
  return {{"name", name},
          {"input", {input_height, input_width}},
          {"backbone", layers},
          {"embedding_dim", embedding_dim},
          {"n_classes", n_classes},
          {"activation", to_string(activation)}};
}

NetworkSpec NetworkSpec::from_json(const json& j) {
  try {
    NetworkSpec s;
    s.name = j.at("name").get<std::string>();
    s.input_height = j.at("input").at(0).get<int>();
    s.input_width = j.at("input").at(1).get<int>();
    for (const auto& l : j.at("backbone")) {
      LayerSpec ls;
      ls.kind = parse_kind(l.at("type").get<std::string>());
      ls.out = l.value("out", 0);
      ls.k = l.value("k", 0);
      ls.scale = l.value("scale", 1.0);
      ls.shift = l.value("shift", 0.0);
      ls.patch_h = l.value("patch_h", 0);
      ls.patch_w = l.value("patch_w", 0);
      s.backbone.push_back(ls);
    }
    s.embedding_dim = j.at("embedding_dim").get<int>();
    s.n_classes = j.at("n_classes").get<int>();
    s.activation = parse_activation(j.at("activation").get<std::string>());
    return s;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid network spec: ") + e.what());
  }
}

NetworkSpec architecture(std::string_view name, int n_classes, Activation activation,
                         const ArchitectureOptions& o) {
  NetworkSpec s;
  s.name = std::string(name);
  s.input_height = o.input_height;
  s.input_width = o.input_width;
  s.n_classes = n_classes;
  s.activation = activation;
  if (o.stem_pool > 1) s.backbone.push_back({.kind = LayerKind::kAvgPool, .k = o.stem_pool});
  s.backbone.push_back({.kind = LayerKind::kScale, .scale = o.input_scale, .shift = o.input_shift});

  const auto conv_block = [&](int channels) {
    s.backbone.push_back({.kind = LayerKind::kConv, .out = channels, .k = 3});
    s.backbone.push_back({.kind = LayerKind::kRelu});
    s.backbone.push_back({.kind = LayerKind::kMaxPool, .k = 2});
  };
  for (int w : o.widths) {
    if (w < 1) throw ConfigError("architecture widths must be positive");
  }
  const auto widths = [&](std::vector<int> defaults) { return o.widths.empty() ? defaults : o.widths; };
  if (name == "teacher" || name == "student_a") {
    const auto channels = widths(name == "teacher" ? std::vector<int>{16, 32, 64, 64} : std::vector<int>{8, 16});
    for (int c : channels) conv_block(c);
    s.backbone.push_back({.kind = LayerKind::kGlobalAvgPool});
    s.embedding_dim = channels.back();
  } else if (name == "student_b") {
    const auto hidden = widths({64, 32});
    s.backbone.push_back({.kind = LayerKind::kPatchFlatten, .patch_h = 8, .patch_w = 8});
    for (int h : hidden) {
      s.backbone.push_back({.kind = LayerKind::kDense, .out = h});
      s.backbone.push_back({.kind = LayerKind::kRelu});
    }
    s.embedding_dim = hidden.back();
  } else {
    throw ConfigError("unknown architecture '" + std::string(name) +
                      "' (expected teacher, student_a or student_b)");
  }
  return s;
}

NetworkLayout::NetworkLayout(const NetworkSpec& spec) {
  if (spec.input_height < 1 || spec.input_width < 1) throw ShapeError("network input shape must be positive");
  if (spec.n_classes < 1) throw ShapeError("network needs at least one class");
  Shape cur{1, spec.input_height, spec.input_width};
  std::size_t offset = 0;
  const auto add = [&](const LayerSpec& ls, bool head) {
    LayerPlan p;
    p.spec = ls;
    p.in = cur;
    p.head = head;
    const std::string where = "layer " + std::to_string(layers_.size()) + " (" + std::string(to_string(ls.kind)) + ")";
    switch (ls.kind) {
      case LayerKind::kConv:
        if (ls.k < 1 || ls.k % 2 == 0 || ls.out < 1) throw ShapeError(where + ": conv needs odd k and out >= 1");
        p.out = {ls.out, cur.h, cur.w};
        p.weight_count = static_cast<std::size_t>(ls.out) * cur.c * ls.k * ls.k;
        p.bias_count = static_cast<std::size_t>(ls.out);
        break;
      case LayerKind::kMaxPool:
      case LayerKind::kAvgPool:
        if (ls.k < 1 || cur.h / ls.k < 1 || cur.w / ls.k < 1) throw ShapeError(where + ": pool larger than input");
        p.out = {cur.c, cur.h / ls.k, cur.w / ls.k};
        break;
      case LayerKind::kRelu:
      case LayerKind::kScale:
        p.out = cur;
        break;
      case LayerKind::kGlobalAvgPool:
        p.out = {cur.c, 1, 1};
        break;
      case LayerKind::kPatchFlatten: {
        if (ls.patch_h < 1 || ls.patch_w < 1 || cur.h / ls.patch_h < 1 || cur.w / ls.patch_w < 1) {
          throw ShapeError(where + ": patch larger than input");
        }
        const int count = (cur.h / ls.patch_h) * (cur.w / ls.patch_w);
        p.out = {cur.c * count * ls.patch_h * ls.patch_w, 1, 1};
        break;
      }
      case LayerKind::kDense:
        if (ls.out < 1) throw ShapeError(where + ": dense needs out >= 1");
        p.out = {ls.out, 1, 1};
        p.weight_count = static_cast<std::size_t>(ls.out) * cur.size();
        p.bias_count = static_cast<std::size_t>(ls.out);
        break;
    }
    p.weight_offset = offset;
    p.bias_offset = offset + p.weight_count;
    offset += p.weight_count + p.bias_count;
    cur = p.out;
    layers_.push_back(p);
  };
  for (const auto& ls : spec.backbone) add(ls, false);
  if (cur.size() != static_cast<std::size_t>(spec.embedding_dim)) {
    throw ShapeError("backbone output has " + std::to_string(cur.size()) + " values but embedding_dim is " +
                     std::to_string(spec.embedding_dim));
  }
  add({.kind = LayerKind::kDense, .out = spec.n_classes}, true);
  param_count_ = offset;
}

template <class T>
std::vector<std::vector<T>> run_layers(const NetworkLayout& layout, std::span<const T> params,
                                       const std::vector<std::vector<T>>& inputs, std::size_t first,
                                       std::size_t last, BatchCache<T>* cache) {
  const auto& layers = layout.layers();
  if (first >= last || last > layers.size()) throw ShapeError("run_layers: bad layer range");
  if (params.size() != layout.param_count()) throw ShapeError("run_layers: parameter count mismatch");
  const std::size_t in_size = layers[first].in.size();
  if (cache) {
    cache->first = first;
    cache->last = last;
    cache->inputs = inputs;
    cache->outputs.assign(inputs.size(), {});
    cache->argmax.assign(inputs.size(), {});
  }
  std::vector<std::vector<T>> results(inputs.size());
  for (std::size_t b = 0; b < inputs.size(); ++b) {
    if (inputs[b].size() != in_size) {
      throw ShapeError("input " + std::to_string(b) + " has " + std::to_string(inputs[b].size()) +
                       " values, expected " + std::to_string(in_size));
    }
    std::vector<T> current = inputs[b];
    for (std::size_t l = first; l < last; ++l) {
      const auto& L = layers[l];
      std::vector<T> out(L.out.size());
      std::vector<std::uint32_t> am;
      if (L.spec.kind == LayerKind::kMaxPool) am.resize(L.out.size());
      layer_forward(L, params.data(), current.data(), out.data(), am.data());
      if (cache) {
        cache->outputs[b].push_back(out);
        cache->argmax[b].push_back(std::move(am));
      }
      current = std::move(out);
    }
    results[b] = std::move(current);
  }
  return results;
}

template <class T>
void backprop_layers(const NetworkLayout& layout, std::span<const T> params, const BatchCache<T>& cache,
                     const std::vector<std::vector<T>>& grad_out, std::span<T> grad, std::size_t stop) {
  const auto& layers = layout.layers();
  if (grad.size() != layout.param_count()) throw ShapeError("backprop: gradient buffer has wrong size");
  if (grad_out.size() != cache.outputs.size()) throw ShapeError("backprop: batch size mismatch");
  const std::size_t lowest = std::max(stop, cache.first);
  if (lowest >= cache.last) return;
  for (std::size_t b = 0; b < grad_out.size(); ++b) {
    std::vector<T> dout = grad_out[b];
    for (std::size_t l = cache.last; l-- > lowest;) {
      const auto& L = layers[l];
      const std::size_t rel = l - cache.first;
      const T* in = rel == 0 ? cache.inputs[b].data() : cache.outputs[b][rel - 1].data();
      const T* out = cache.outputs[b][rel].data();
      const std::uint32_t* am = cache.argmax[b][rel].data();
      std::vector<T> din;
      if (l > lowest) din.resize(L.in.size());
      layer_backward(L, params.data(), in, out, am, dout.data(), grad.data(), din.empty() ? nullptr : din.data());
      dout = std::move(din);
    }
  }
}

template std::vector<std::vector<float>> run_layers<float>(const NetworkLayout&, std::span<const float>,
                                                           const std::vector<std::vector<float>>&, std::size_t,
                                                           std::size_t, BatchCache<float>*);
template std::vector<std::vector<double>> run_layers<double>(const NetworkLayout&, std::span<const double>,
                                                             const std::vector<std::vector<double>>&, std::size_t,
                                                             std::size_t, BatchCache<double>*);
template void backprop_layers<float>(const NetworkLayout&, std::span<const float>, const BatchCache<float>&,
                                     const std::vector<std::vector<float>>&, std::span<float>, std::size_t);
template void backprop_layers<double>(const NetworkLayout&, std::span<const double>, const BatchCache<double>&,
                                      const std::vector<std::vector<double>>&, std::span<double>, std::size_t);

Network::Network(NetworkSpec spec, std::uint64_t seed)
    : spec_(std::move(spec)), layout_(spec_), params_(layout_.param_count(), 0.0f), frozen_(params_.size(), 0) {
  Rng rng = derive_rng(seed, {0x1417});
  for (const auto& L : layout_.layers()) {
    if (L.weight_count == 0) continue;
    const std::size_t fan_in = L.weight_count / L.bias_count;
    const double bound = L.head ? std::sqrt(1.0 / fan_in) : std::sqrt(6.0 / fan_in);
    for (std::size_t i = 0; i < L.weight_count; ++i) {
      params_[L.weight_offset + i] = static_cast<float>(uniform(rng, -bound, bound));
    }
  }
}

Network::Network(NetworkSpec spec, std::vector<float> params)
    : spec_(std::move(spec)), layout_(spec_), params_(std::move(params)), frozen_(params_.size(), 0) {
  if (params_.size() != layout_.param_count()) {
    throw ShapeError("network needs " + std::to_string(layout_.param_count()) + " parameters, got " +
                     std::to_string(params_.size()));
  }
}

void Network::set_frozen(FreezeSelector selector) {
  const std::size_t boundary = selector == FreezeSelector::kBackbone ? layout_.backbone_param_count() : 0;
  for (std::size_t i = 0; i < frozen_.size(); ++i) frozen_[i] = i < boundary ? 1 : 0;
}

std::size_t Network::trainable_count() const {
  return static_cast<std::size_t>(std::count(frozen_.begin(), frozen_.end(), std::uint8_t{0}));
}

std::size_t Network::first_trainable_layer() const {
  const auto& layers = layout_.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& L = layers[l];
    const std::size_t n = L.weight_count + L.bias_count;
    for (std::size_t i = 0; i < n; ++i) {
      if (!frozen_[L.weight_offset + i]) return l;
    }
  }
  return layers.size();
}

namespace {
Logits to_logits(const std::vector<std::vector<float>>& rows, std::size_t n_classes) {
  Logits out(rows.size(), n_classes);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < n_classes; ++c) out(r, c) = rows[r][c];
  }
  return out;
}
}  // namespace

ForwardResult Network::forward(const std::vector<std::vector<float>>& inputs) const {
  ForwardResult r;
  const auto out = run_layers<float>(layout_, params_, inputs, 0, layout_.layers().size(), &r.cache);
  r.logits = to_logits(out, static_cast<std::size_t>(spec_.n_classes));
  return r;
}

ForwardResult Network::forward(std::span<const MelSpectrogram> batch) const {
  std::vector<std::vector<float>> inputs;
  inputs.reserve(batch.size());
  for (const auto& s : batch) inputs.push_back(flatten_input(s));
  return forward(inputs);
}

ForwardResult Network::forward_head(const std::vector<std::vector<float>>& embeddings) const {
  ForwardResult r;
  const auto out =
      run_layers<float>(layout_, params_, embeddings, layout_.head_index(), layout_.layers().size(), &r.cache);
  r.logits = to_logits(out, static_cast<std::size_t>(spec_.n_classes));
  return r;
}

std::vector<std::vector<float>> Network::embed(const std::vector<std::vector<float>>& inputs) const {
  return run_layers<float>(layout_, params_, inputs, 0, layout_.head_index(), nullptr);
}

Logits Network::infer(const std::vector<std::vector<float>>& inputs) const {
  const auto out = run_layers<float>(layout_, params_, inputs, 0, layout_.layers().size(), nullptr);
  return to_logits(out, static_cast<std::size_t>(spec_.n_classes));
}

std::vector<float> Network::backward(const ForwardResult& fwd, const Logits& dlogits) const {
  std::vector<float> grad(params_.size(), 0.0f);
  if (dlogits.rows != fwd.logits.rows || dlogits.cols != fwd.logits.cols) {
    throw ShapeError("backward: logit gradient shape does not match forward pass");
  }
  const std::size_t stop = first_trainable_layer();
  if (stop >= layout_.layers().size()) return grad;
  std::vector<std::vector<float>> gout(dlogits.rows, std::vector<float>(dlogits.cols));
  for (std::size_t r = 0; r < dlogits.rows; ++r) {
    for (std::size_t c = 0; c < dlogits.cols; ++c) gout[r][c] = static_cast<float>(dlogits(r, c));
  }
  backprop_layers<float>(layout_, params_, fwd.cache, gout, grad, stop);
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (frozen_[i]) grad[i] = 0.0f;
  }
  return grad;
}

void Network::load_backbone(const Network& other) {
  if (other.spec_.backbone != spec_.backbone || other.spec_.input_height != spec_.input_height ||
      other.spec_.input_width != spec_.input_width) {
    throw ShapeError("load_backbone: backbone specs differ");
  }
  const std::size_t n = layout_.backbone_param_count();
  std::copy(other.params_.begin(), other.params_.begin() + static_cast<std::ptrdiff_t>(n), params_.begin());
}

Network freeze(Network net, FreezeSelector selector) {
  net.set_frozen(selector);
  return net;
}

Logits activate(const Logits& logits, Activation kind) {
  Logits out(logits.rows, logits.cols);
  for (std::size_t r = 0; r < logits.rows; ++r) {
    if (kind == Activation::kSoftmax) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < logits.cols; ++c) mx = std::max(mx, logits(r, c));
      double sum = 0.0;
      for (std::size_t c = 0; c < logits.cols; ++c) sum += (out(r, c) = std::exp(logits(r, c) - mx));
      for (std::size_t c = 0; c < logits.cols; ++c) out(r, c) /= sum;
    } else {
      for (std::size_t c = 0; c < logits.cols; ++c) {
        const double z = logits(r, c);
        if (z >= 0) {
          out(r, c) = 1.0 / (1.0 + std::exp(-z));
        } else {
          const double e = std::exp(z);
          out(r, c) = e / (1.0 + e);
        }
      }
    }
  }
  return out;
}

std::vector<float> flatten_input(const MelSpectrogram& spec) { return spec.values; }

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t h) {
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
  return h;
}

void save_checkpoint(const std::filesystem::path& path, const Network& net, nlohmann::json metadata) {
  if (metadata.is_null()) metadata = nlohmann::json::object();
  metadata["spec"] = net.spec().to_json();
  const std::string meta = metadata.dump();
  std::vector<std::uint8_t> out;
  write_bytes(out, "BIRDTLCK", 8);
  write_le<std::uint32_t>(out, 1);
  write_le<std::uint64_t>(out, meta.size());
  write_bytes(out, meta.data(), meta.size());
  write_le<std::uint64_t>(out, net.params().size());
  write_bytes(out, net.params().data(), net.params().size_bytes());
  write_le<std::uint64_t>(out, fnv1a64(out));
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw Error("cannot write checkpoint " + path.string());
  file.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw ConfigError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());
  const std::string where = "checkpoint " + path.string();
  if (bytes.size() < 8 + 4 + 8 + 8 + 8 || std::memcmp(bytes.data(), "BIRDTLCK", 8) != 0) {
    throw DecodeError(where + ": bad magic");
  }
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + bytes.size() - 8, 8);
  if (fnv1a64(std::span(bytes.data(), bytes.size() - 8)) != stored) {
    throw DecodeError(where + ": checksum mismatch");
  }
  std::size_t pos = 8;
  const auto read = [&](void* dst, std::size_t n) {
    if (pos + n > bytes.size() - 8) throw DecodeError(where + ": truncated");
    std::memcpy(dst, bytes.data() + pos, n);
    pos += n;
  };
  std::uint32_t version;
  read(&version, 4);
  if (version != 1) throw DecodeError(where + ": unsupported version " + std::to_string(version));
  std::uint64_t meta_len;
  read(&meta_len, 8);
  std::string meta(meta_len, '\0');
  read(meta.data(), meta_len);
  std::uint64_t count;
  read(&count, 8);
  std::vector<float> params(count);
  read(params.data(), count * sizeof(float));
  auto metadata = nlohmann::json::parse(meta);
  auto spec = NetworkSpec::from_json(metadata.at("spec"));
  return {Network(std::move(spec), std::move(params)), std::move(metadata)};
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const NetworkSpec& expected) {
  auto ck = load_checkpoint(path);
  if (!(ck.network.spec() == expected)) {
    throw ConfigError("checkpoint " + path.string() + " spec does not match the requested network");
  }
  return ck;
}

}  // namespace birdtl

#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "pcnn/error.hpp"
#include "pcnn/layers.hpp"
#include "pcnn/rng.hpp"
#include "pcnn/tensor.hpp"

namespace pcnn {

using ScoreMatrix = Tensor;  // [N,2], row i = (s_i1, s_i2)

enum class LayerKind { conv, relu, maxpool, lrn, fc };

inline std::string_view to_string(LayerKind k) {
  switch (k) {
    case LayerKind::conv: return "conv";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::lrn: return "lrn";
    case LayerKind::fc: return "fc";
  }
  return "?";
}

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::size_t outputs = 0;  // conv kernels or fc units
  std::size_t size = 0;     // conv kernel side or pool window
  std::size_t stride = 1;
  std::size_t padding = 0;
  LrnParams lrn;

  static LayerSpec conv(std::size_t kernels, std::size_t size, std::size_t stride,
                        std::size_t padding = 0) {
    return {LayerKind::conv, kernels, size, stride, padding, {}};
  }
  static LayerSpec relu() { return {LayerKind::relu, 0, 0, 1, 0, {}}; }
  static LayerSpec maxpool(std::size_t window, std::size_t stride) {
    return {LayerKind::maxpool, 0, window, stride, 0, {}};
  }
  static LayerSpec lrn_layer(LrnParams p = {}) { return {LayerKind::lrn, 0, 0, 1, 0, p}; }
  static LayerSpec fc(std::size_t units) { return {LayerKind::fc, units, 0, 1, 0, {}}; }

  bool has_params() const { return kind == LayerKind::conv || kind == LayerKind::fc; }
};

struct NetworkSpec {
  std::string family = "custom";
  std::string profile = "custom";
  std::size_t channels = 3;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t class_count = 2;
  std::vector<LayerSpec> layers;

  Shape input_shape() const { return {channels, height, width}; }
};

// ---------------------------------------------------------------------------
// Architecture families

enum class Profile { paper, desk };

inline std::string_view to_string(Profile p) { return p == Profile::paper ? "paper" : "desk"; }

inline Profile parse_profile(std::string_view s) {
  if (s == "paper") return Profile::paper;
  if (s == "desk") return Profile::desk;
  fail(ErrorKind::config, "unknown profile '" + std::string(s) + "' (expected paper|desk)");
}

inline const std::vector<std::string>& known_families() {
  static const std::vector<std::string> names = {"3CONV-4FC", "3CONV-2FC", "2CONV-3FC", "2CONV-4FC"};
  return names;
}

/// Layer stack for one of the four iCONV-jFC families. Each of the first two
/// conv layers is followed by ReLU, max-pooling and LRN; the optional third
/// conv keeps its spatial size. FC stacks end in ...->24->2.
inline NetworkSpec family_spec(const std::string& family, Profile profile) {
  const auto& names = known_families();
  if (std::find(names.begin(), names.end(), family) == names.end()) {
    fail(ErrorKind::config, "unknown architecture family '" + family + "'");
  }
  const std::size_t convs = family[0] == '3' ? 3 : 2;
  const std::size_t fcs = static_cast<std::size_t>(family[6] - '0');

  NetworkSpec s;
  s.family = family;
  s.profile = std::string(to_string(profile));
  const bool paper = profile == Profile::paper;
  s.height = s.width = paper ? 256 : 32;

  const std::size_t pool_window = paper ? 3 : 2;
  if (paper) {
    s.layers.push_back(LayerSpec::conv(96, 11, 4));
  } else {
    s.layers.push_back(LayerSpec::conv(16, 5, 1));
  }
  s.layers.push_back(LayerSpec::relu());
  s.layers.push_back(LayerSpec::maxpool(pool_window, 2));
  s.layers.push_back(LayerSpec::lrn_layer());
  if (paper) {
    s.layers.push_back(LayerSpec::conv(256, 5, 2));
  } else {
    s.layers.push_back(LayerSpec::conv(32, 5, 1));
  }
  s.layers.push_back(LayerSpec::relu());
  s.layers.push_back(LayerSpec::maxpool(pool_window, 2));
  s.layers.push_back(LayerSpec::lrn_layer());
  if (convs == 3) {
    s.layers.push_back(LayerSpec::conv(paper ? 256 : 32, 3, 1, 1));
    s.layers.push_back(LayerSpec::relu());
  }

  const std::size_t hidden = paper ? 512 : 64;
  std::vector<std::size_t> widths;
  for (std::size_t i = 0; i + 2 < fcs; ++i) widths.push_back(hidden);
  widths.push_back(24);
  widths.push_back(s.class_count);
  for (std::size_t i = 0; i < widths.size(); ++i) {
    s.layers.push_back(LayerSpec::fc(widths[i]));
    if (i + 1 < widths.size()) s.layers.push_back(LayerSpec::relu());
  }
  return s;
}

// ---------------------------------------------------------------------------
// Shape inference

/// Per-sample output shape after every layer. Throws a shape error naming
/// the first layer that does not compose.
inline std::vector<Shape> infer_shapes(const NetworkSpec& spec) {
  if (spec.channels == 0 || spec.height == 0 || spec.width == 0) {
    fail(ErrorKind::shape, "input geometry must be positive");
  }
  if (spec.layers.empty()) fail(ErrorKind::config, "network has no layers");
  std::vector<Shape> shapes;
  Shape cur = spec.input_shape();
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    const std::string where = "layer " + std::to_string(i) + " (" + std::string(to_string(l.kind)) + "): ";
    try {
      switch (l.kind) {
        case LayerKind::conv: {
          if (cur.size() != 3) fail(ErrorKind::shape, "convolution after a flattening layer");
          if (l.outputs == 0 || l.size == 0 || l.stride == 0) {
            fail(ErrorKind::shape, "conv needs positive kernels, size and stride");
          }
          cur = {l.outputs, conv_output_size(cur[1], l.size, l.stride, l.padding),
                 conv_output_size(cur[2], l.size, l.stride, l.padding)};
          break;
        }
        case LayerKind::maxpool: {
          if (cur.size() != 3) fail(ErrorKind::shape, "pooling after a flattening layer");
          if (l.size == 0 || l.stride == 0 || l.size > cur[1] || l.size > cur[2]) {
            fail(ErrorKind::shape, "pool window does not fit " + shape_string(cur));
          }
          cur = {cur[0], (cur[1] - l.size) / l.stride + 1, (cur[2] - l.size) / l.stride + 1};
          break;
        }
        case LayerKind::lrn:
          if (cur.size() != 3) fail(ErrorKind::shape, "LRN after a flattening layer");
          l.lrn.validate();
          break;
        case LayerKind::relu:
          break;
        case LayerKind::fc:
          if (l.outputs == 0) fail(ErrorKind::shape, "fc needs positive units");
          cur = {l.outputs};
          break;
      }
    } catch (const Error& e) {
      fail(e.kind(), where + e.what());
    }
    shapes.push_back(cur);
  }
  return shapes;
}

inline void validate(const NetworkSpec& spec) {
  infer_shapes(spec);
  const auto& layers = spec.layers;
  if (spec.class_count != 2) fail(ErrorKind::config, "class_count must be 2");
  if (layers.back().kind != LayerKind::fc || layers.back().outputs != spec.class_count) {
    fail(ErrorKind::config, "last layer must be fc with " + std::to_string(spec.class_count) + " units");
  }
  std::vector<std::size_t> fc_widths;
  for (const auto& l : layers) {
    if (l.kind == LayerKind::fc) fc_widths.push_back(l.outputs);
  }
  if (spec.profile == "paper" && (fc_widths.size() < 2 || fc_widths[fc_widths.size() - 2] != 24)) {
    fail(ErrorKind::config, "paper profile requires the second-to-last fc layer to have 24 units");
  }
}

/// Parameter prefix ("conv1", "fc3", ...) for each layer; empty for
/// parameter-free layers.
inline std::vector<std::string> layer_names(const NetworkSpec& spec) {
  std::vector<std::string> names;
  std::size_t convs = 0, fcs = 0;
  for (const auto& l : spec.layers) {
    if (l.kind == LayerKind::conv) {
      names.push_back("conv" + std::to_string(++convs));
    } else if (l.kind == LayerKind::fc) {
      names.push_back("fc" + std::to_string(++fcs));
    } else {
      names.emplace_back();
    }
  }
  return names;
}

struct ParamSlot {
  std::string name;
  Shape shape;
  std::size_t fan_in;
  bool is_bias;
  std::size_t layer;
};

inline std::vector<ParamSlot> parameter_slots(const NetworkSpec& spec) {
  const auto shapes = infer_shapes(spec);
  const auto names = layer_names(spec);
  std::vector<ParamSlot> slots;
  Shape in = spec.input_shape();
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& l = spec.layers[i];
    if (l.kind == LayerKind::conv) {
      const std::size_t fan_in = in[0] * l.size * l.size;
      slots.push_back({names[i] + ".weight", {l.outputs, in[0], l.size, l.size}, fan_in, false, i});
      slots.push_back({names[i] + ".bias", {l.outputs}, fan_in, true, i});
    } else if (l.kind == LayerKind::fc) {
      const std::size_t fan_in = element_count(in);
      slots.push_back({names[i] + ".weight", {fan_in, l.outputs}, fan_in, false, i});
      slots.push_back({names[i] + ".bias", {l.outputs}, fan_in, true, i});
    }
    in = shapes[i];
  }
  return slots;
}

// ---------------------------------------------------------------------------
// Human-readable spec text: "key = value" lines, one "layer = ..." per layer.

namespace detail {

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::size_t parse_count(std::string_view s, const std::string& context) {
  std::size_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) {
    fail(ErrorKind::parse, context + ": expected a non-negative integer, got '" + std::string(s) + "'");
  }
  return v;
}

inline double parse_real(std::string_view s, const std::string& context) {
  std::string tmp(s);
  char* end = nullptr;
  const double v = std::strtod(tmp.c_str(), &end);
  if (tmp.empty() || end != tmp.c_str() + tmp.size() || !std::isfinite(v)) {
    fail(ErrorKind::parse, context + ": expected a real number, got '" + tmp + "'");
  }
  return v;
}

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace detail

inline std::string to_text(const NetworkSpec& spec) {
  std::ostringstream os;
  os << "family = " << spec.family << '\n';
  os << "profile = " << spec.profile << '\n';
  os << "input = " << spec.channels << 'x' << spec.height << 'x' << spec.width << '\n';
  os << "classes = " << spec.class_count << '\n';
  for (const auto& l : spec.layers) {
    os << "layer = " << to_string(l.kind);
    switch (l.kind) {
      case LayerKind::conv:
        os << " kernels=" << l.outputs << " size=" << l.size << " stride=" << l.stride
           << " pad=" << l.padding;
        break;
      case LayerKind::maxpool:
        os << " window=" << l.size << " stride=" << l.stride;
        break;
      case LayerKind::lrn:
        os << " size=" << l.lrn.local_size << " alpha=" << detail::format_double(l.lrn.alpha)
           << " beta=" << detail::format_double(l.lrn.beta)
           << " k=" << detail::format_double(l.lrn.k_offset);
        break;
      case LayerKind::fc:
        os << " units=" << l.outputs;
        break;
      case LayerKind::relu:
        break;
    }
    os << '\n';
  }
  return os.str();
}

inline LayerSpec parse_layer(const std::string& text, const std::string& context) {
  std::istringstream is(text);
  std::string kind;
  is >> kind;
  LayerSpec l;
  if (kind == "conv") {
    l = LayerSpec::conv(0, 0, 1);
  } else if (kind == "relu") {
    l = LayerSpec::relu();
  } else if (kind == "maxpool") {
    l = LayerSpec::maxpool(3, 2);
  } else if (kind == "lrn") {
    l = LayerSpec::lrn_layer();
  } else if (kind == "fc") {
    l = LayerSpec::fc(0);
  } else {
    fail(ErrorKind::parse, context + ": unknown layer kind '" + kind + "'");
  }
  std::string token;
  while (is >> token) {
    const auto eq = token.find('=');
    if (eq == std::string::npos) fail(ErrorKind::parse, context + ": expected key=value, got '" + token + "'");
    const std::string key = token.substr(0, eq);
    const std::string val = token.substr(eq + 1);
    const std::string ctx = context + " key '" + key + "'";
    if (kind == "conv" && key == "kernels") l.outputs = detail::parse_count(val, ctx);
    else if (kind == "conv" && key == "size") l.size = detail::parse_count(val, ctx);
    else if ((kind == "conv" || kind == "maxpool") && key == "stride") l.stride = detail::parse_count(val, ctx);
    else if (kind == "conv" && key == "pad") l.padding = detail::parse_count(val, ctx);
    else if (kind == "maxpool" && key == "window") l.size = detail::parse_count(val, ctx);
    else if (kind == "lrn" && key == "size") l.lrn.local_size = detail::parse_count(val, ctx);
    else if (kind == "lrn" && key == "alpha") l.lrn.alpha = detail::parse_real(val, ctx);
    else if (kind == "lrn" && key == "beta") l.lrn.beta = detail::parse_real(val, ctx);
    else if (kind == "lrn" && key == "k") l.lrn.k_offset = detail::parse_real(val, ctx);
    else if (kind == "fc" && key == "units") l.outputs = detail::parse_count(val, ctx);
    else fail(ErrorKind::parse, context + ": unknown key '" + key + "' for " + kind);
  }
  return l;
}

/// Parses spec text; a "family" line with no "layer" lines expands to the
/// named family at the given profile.
inline NetworkSpec parse_network_spec(const std::string& text) {
  NetworkSpec spec;
  spec.layers.clear();
  bool saw_input = false;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const std::string t = detail::trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    const std::string context = "network spec line " + std::to_string(lineno);
    if (eq == std::string::npos) fail(ErrorKind::parse, context + ": expected key = value");
    const std::string key = detail::trim(t.substr(0, eq));
    const std::string val = detail::trim(t.substr(eq + 1));
    if (key == "family") {
      spec.family = val;
    } else if (key == "profile") {
      spec.profile = val;
    } else if (key == "classes") {
      spec.class_count = detail::parse_count(val, context);
    } else if (key == "input") {
      const auto x1 = val.find('x'), x2 = val.rfind('x');
      if (x1 == std::string::npos || x1 == x2) fail(ErrorKind::parse, context + ": input must be CxHxW");
      spec.channels = detail::parse_count(val.substr(0, x1), context);
      spec.height = detail::parse_count(val.substr(x1 + 1, x2 - x1 - 1), context);
      spec.width = detail::parse_count(val.substr(x2 + 1), context);
      saw_input = true;
    } else if (key == "layer") {
      spec.layers.push_back(parse_layer(val, context));
    } else {
      fail(ErrorKind::parse, context + ": unknown key '" + key + "'");
    }
  }
  if (spec.layers.empty()) {
    if (spec.family == "custom") fail(ErrorKind::parse, "network spec has no layers and no family");
    const Profile p = parse_profile(spec.profile == "custom" ? "desk" : spec.profile);
    NetworkSpec expanded = family_spec(spec.family, p);
    if (saw_input) fail(ErrorKind::parse, "input geometry of a named family cannot be overridden");
    return expanded;
  }
  return spec;
}

// ---------------------------------------------------------------------------
// Checkpoint, initialization and the forward/backward passes

struct Checkpoint {
  NetworkSpec spec;
  std::map<std::string, Tensor> params;
  std::map<std::string, Tensor> velocity;  // momentum buffers, same keys
  Rng::State rng_state{};
  std::uint64_t iteration = 0;

  const Tensor& param(const std::string& name) const {
    auto it = params.find(name);
    if (it == params.end()) fail(ErrorKind::config, "no parameter '" + name + "'");
    return it->second;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : params) n += t.size();
    return n;
  }

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

inline bool operator==(const LrnParams& a, const LrnParams& b) {
  return a.local_size == b.local_size && a.alpha == b.alpha && a.beta == b.beta &&
         a.k_offset == b.k_offset;
}
inline bool operator==(const LayerSpec& a, const LayerSpec& b) {
  return a.kind == b.kind && a.outputs == b.outputs && a.size == b.size && a.stride == b.stride &&
         a.padding == b.padding && a.lrn == b.lrn;
}
inline bool operator==(const NetworkSpec& a, const NetworkSpec& b) {
  return a.family == b.family && a.profile == b.profile && a.channels == b.channels &&
         a.height == b.height && a.width == b.width && a.class_count == b.class_count &&
         a.layers == b.layers;
}

/// Weights ~ N(0, sqrt(2/fan_in)) stored at float32 precision, biases and
/// momentum buffers zero.
inline Checkpoint build_network(const NetworkSpec& spec, Rng& rng) {
  validate(spec);
  Checkpoint c;
  c.spec = spec;
  for (const auto& slot : parameter_slots(spec)) {
    Tensor t(slot.shape);
    if (!slot.is_bias) {
      const double stddev = std::sqrt(2.0 / static_cast<double>(slot.fan_in));
      for (auto& v : t.values()) v = rng.normal(0.0, stddev);
      round_to_storage(t);
    }
    c.velocity.emplace(slot.name, Tensor(slot.shape));
    c.params.emplace(slot.name, std::move(t));
  }
  c.rng_state = rng.state();
  return c;
}

inline Checkpoint build_architecture(const std::string& family, Profile profile, Rng& rng) {
  return build_network(family_spec(family, profile), rng);
}

/// Two-class softmax with max subtraction; equals the logistic sigmoid of
/// the logit difference.
inline ScoreMatrix class_probabilities(const Tensor& logits) {
  if (logits.rank() != 2) fail(ErrorKind::shape, "logits must be [N,C]");
  ScoreMatrix p(logits.shape());
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  for (std::size_t i = 0; i < n; ++i) {
    double m = logits.at(i, 0);
    for (std::size_t j = 1; j < k; ++j) m = std::max(m, logits.at(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      p.at(i, j) = std::exp(logits.at(i, j) - m);
      z += p.at(i, j);
    }
    for (std::size_t j = 0; j < k; ++j) p.at(i, j) /= z;
  }
  return p;
}

/// Layer inputs and pooling indices retained for the backward pass.
struct ForwardTrace {
  std::vector<Tensor> inputs;
  std::vector<PoolIndices> pools;
};

inline Tensor forward_logits(const Checkpoint& c, const Tensor& batch, ForwardTrace* trace = nullptr) {
  const NetworkSpec& spec = c.spec;
  if (batch.rank() != 4 || batch.dim(1) != spec.channels || batch.dim(2) != spec.height ||
      batch.dim(3) != spec.width) {
    fail(ErrorKind::shape, "batch shape " + shape_string(batch.shape()) + " does not match network input " +
                               shape_string(spec.input_shape()));
  }
  const auto names = layer_names(spec);
  if (trace) {
    trace->inputs.clear();
    trace->pools.clear();
  }
  Tensor x = batch;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    if (trace) trace->inputs.push_back(x);
    switch (l.kind) {
      case LayerKind::conv: {
        ConvParams p{l.stride, l.padding, c.param(names[i] + ".weight"), c.param(names[i] + ".bias")};
        x = conv2d_forward(x, p);
        break;
      }
      case LayerKind::relu:
        x = relu_forward(x);
        break;
      case LayerKind::maxpool: {
        PoolResult r = maxpool_forward(x, l.size, l.stride);
        if (trace) trace->pools.push_back(std::move(r.indices));
        x = std::move(r.output);
        break;
      }
      case LayerKind::lrn:
        x = lrn_forward(x, l.lrn);
        break;
      case LayerKind::fc: {
        const std::size_t n = x.dim(0);
        if (x.rank() != 2) x = x.reshape({n, x.size() / n});
        x = fc_forward(x, c.param(names[i] + ".weight"), c.param(names[i] + ".bias"));
        break;
      }
    }
  }
  return x;
}

/// Class scores for a batch; each row is a distribution over the 2 classes.
inline ScoreMatrix forward(const Checkpoint& c, const Tensor& batch) {
  return class_probabilities(forward_logits(c, batch));
}

using Gradients = std::map<std::string, Tensor>;

/// Back-propagates d(loss)/d(logits) through a recorded forward pass.
inline Gradients backward(const Checkpoint& c, const ForwardTrace& trace, const Tensor& logits_grad) {
  const NetworkSpec& spec = c.spec;
  if (trace.inputs.size() != spec.layers.size()) fail(ErrorKind::shape, "trace does not match network");
  const auto names = layer_names(spec);
  Gradients grads;
  Tensor g = logits_grad;
  std::size_t pool_index = trace.pools.size();
  for (std::size_t i = spec.layers.size(); i-- > 0;) {
    const LayerSpec& l = spec.layers[i];
    const Tensor& in = trace.inputs[i];
    const bool need_input_grad = i > 0;
    switch (l.kind) {
      case LayerKind::conv: {
        ConvParams p{l.stride, l.padding, c.param(names[i] + ".weight"), c.param(names[i] + ".bias")};
        LayerGrad lg = conv2d_backward(in, p, g, need_input_grad);
        grads[names[i] + ".weight"] = std::move(lg.parameter_grads.at("weight"));
        grads[names[i] + ".bias"] = std::move(lg.parameter_grads.at("bias"));
        g = std::move(lg.input_grad);
        break;
      }
      case LayerKind::relu:
        g = relu_backward(in, g);
        break;
      case LayerKind::maxpool:
        g = maxpool_backward(trace.pools[--pool_index], g);
        break;
      case LayerKind::lrn:
        g = lrn_backward(in, l.lrn, g);
        break;
      case LayerKind::fc: {
        const std::size_t n = in.dim(0);
        const Tensor flat = in.rank() == 2 ? in : in.reshape({n, in.size() / n});
        LayerGrad lg = fc_backward(flat, c.param(names[i] + ".weight"), g);
        grads[names[i] + ".weight"] = std::move(lg.parameter_grads.at("weight"));
        grads[names[i] + ".bias"] = std::move(lg.parameter_grads.at("bias"));
        g = need_input_grad && in.rank() != 2 ? lg.input_grad.reshape(in.shape()) : std::move(lg.input_grad);
        break;
      }
    }
  }
  return grads;
}

}  // namespace pcnn

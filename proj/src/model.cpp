#include "plfp/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "plfp/error.hpp"
#include "plfp/rng.hpp"

namespace plfp {

const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::conv: return "conv";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::global_maxpool: return "gpool";
    case LayerKind::linear: return "linear";
  }
  return "?";
}

void validate_model(const ToyModel& m) {
  check(!m.layers.empty(), "model: no layers");
  check(m.params.size() == m.layers.size(), "model: params list does not match layer list");
  int cur_c = -1;  // unknown until the first parameterized layer
  bool spatial = true;
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    const LayerSpec& l = m.layers[i];
    const Tensor& w = m.params[i];
    switch (l.kind) {
      case LayerKind::conv: {
        check(spatial, "model: conv at layer ", i, " after global pooling");
        check(l.k >= 1 && l.k % 2 == 1, "model: conv kernel must be odd, got ", l.k);
        check(l.c_out >= 1 && l.c_in >= 1, "model: conv channels must be positive");
        if (cur_c >= 0)
          check(l.c_in == cur_c, "model: conv at layer ", i, " expects ", l.c_in,
                " input channels but the previous layer produces ", cur_c);
        check(w.shape == std::vector<int>({l.c_out, l.c_in, l.k, l.k}),
              "model: conv weights at layer ", i, " have shape ", shape_str(w),
              " instead of [", l.c_out, "x", l.c_in, "x", l.k, "x", l.k, "]");
        cur_c = l.c_out;
        break;
      }
      case LayerKind::linear: {
        check(!spatial, "model: linear at layer ", i, " requires global pooling first");
        check(l.c_out >= 1 && l.c_in >= 1, "model: linear dims must be positive");
        if (cur_c >= 0)
          check(l.c_in == cur_c, "model: linear at layer ", i, " expects ", l.c_in,
                " inputs but the previous layer produces ", cur_c);
        check(w.shape == std::vector<int>({l.c_out, l.c_in}), "model: linear weights at layer ", i,
              " have shape ", shape_str(w), " instead of [", l.c_out, "x", l.c_in, "]");
        cur_c = l.c_out;
        break;
      }
      case LayerKind::relu:
        check(w.empty(), "model: relu carries weights");
        break;
      case LayerKind::maxpool:
        check(spatial, "model: maxpool after global pooling");
        check(w.empty(), "model: maxpool carries weights");
        break;
      case LayerKind::global_maxpool:
        check(spatial, "model: repeated global pooling");
        check(w.empty(), "model: global pooling carries weights");
        spatial = false;
        break;
    }
  }
  check(!spatial, "model: must end with global pooling (optionally followed by linear layers)");
}

ToyModel make_model(std::vector<LayerSpec> layers, std::uint64_t seed) {
  ToyModel m;
  m.layers = std::move(layers);
  m.params.resize(m.layers.size());
  m.seed = seed;
  Rng rng(seed);
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    const LayerSpec& l = m.layers[i];
    if (l.kind == LayerKind::conv) {
      Tensor w({l.c_out, l.c_in, l.k, l.k});
      const double bound = 1.0 / std::sqrt(static_cast<double>(l.c_in) * l.k * l.k);
      for (double& v : w.data) v = rng.uniform(-bound, bound);
      m.params[i] = std::move(w);
    } else if (l.kind == LayerKind::linear) {
      Tensor w({l.c_out, l.c_in});
      const double bound = 1.0 / std::sqrt(static_cast<double>(l.c_in));
      for (double& v : w.data) v = rng.uniform(-bound, bound);
      m.params[i] = std::move(w);
    }
  }
  validate_model(m);
  return m;
}

std::vector<LayerSpec> parse_model_spec(const std::string& text, int input_channels) {
  std::vector<LayerSpec> specs;
  int cur_c = input_channels;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t comma = text.find(',', pos);
    if (comma == std::string::npos) comma = text.size();
    std::string tok = text.substr(pos, comma - pos);
    pos = comma + 1;
    if (tok.empty()) continue;
    auto split_ints = [&tok](std::vector<int>& out) {
      std::size_t p = tok.find(':');
      while (p != std::string::npos) {
        std::size_t q = tok.find(':', p + 1);
        std::string num = tok.substr(p + 1, (q == std::string::npos ? tok.size() : q) - p - 1);
        try {
          out.push_back(std::stoi(num));
        } catch (const std::exception&) {
          fail("model spec: bad number in token '", tok, "'");
        }
        p = q;
      }
    };
    if (tok.rfind("conv", 0) == 0) {
      std::vector<int> args;
      split_ints(args);
      check(args.size() == 2, "model spec: conv token needs conv:<c_out>:<k>, got '", tok, "'");
      specs.push_back({LayerKind::conv, args[0], cur_c, args[1]});
      cur_c = args[0];
    } else if (tok == "relu") {
      specs.push_back({LayerKind::relu, 0, 0, 0});
    } else if (tok == "pool" || tok == "maxpool") {
      specs.push_back({LayerKind::maxpool, 0, 0, 0});
    } else if (tok == "gpool" || tok == "global-maxpool") {
      specs.push_back({LayerKind::global_maxpool, 0, 0, 0});
    } else if (tok.rfind("linear", 0) == 0) {
      std::vector<int> args;
      split_ints(args);
      check(args.size() == 1, "model spec: linear token needs linear:<out>, got '", tok, "'");
      specs.push_back({LayerKind::linear, args[0], cur_c, 0});
      cur_c = args[0];
    } else {
      fail("model spec: unknown token '", tok, "'");
    }
  }
  return specs;
}

std::string model_spec_string(const ToyModel& m) {
  std::string s;
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    if (i) s += ",";
    const LayerSpec& l = m.layers[i];
    switch (l.kind) {
      case LayerKind::conv:
        s += "conv:" + std::to_string(l.c_out) + ":" + std::to_string(l.k);
        break;
      case LayerKind::relu: s += "relu"; break;
      case LayerKind::maxpool: s += "pool"; break;
      case LayerKind::global_maxpool: s += "gpool"; break;
      case LayerKind::linear: s += "linear:" + std::to_string(l.c_out); break;
    }
  }
  return s;
}

int embedding_layer(const ToyModel& m) {
  for (int i = static_cast<int>(m.layers.size()) - 1; i >= 0; --i) {
    if (!m.params[static_cast<std::size_t>(i)].empty()) return i;
  }
  fail("model: no parameterized layers");
}

int embedding_dim(const ToyModel& m) {
  return m.layers[static_cast<std::size_t>(embedding_layer(m))].c_out;
}

std::vector<int> prunable_conv_layers(const ToyModel& m) {
  std::vector<int> out;
  const int emb = embedding_layer(m);
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    if (m.layers[i].kind == LayerKind::conv && static_cast<int>(i) != emb)
      out.push_back(static_cast<int>(i));
  }
  return out;
}

Tensor conv2d_forward(const Tensor& input, const Tensor& weights) {
  check(input.rank() == 4, "conv2d: input must be [N,C,H,W], got ", shape_str(input));
  check(weights.rank() == 4, "conv2d: weights must be [C_out,C_in,K,K], got ", shape_str(weights));
  const int n = input.dim(0), ci = input.dim(1), h = input.dim(2), w = input.dim(3);
  const int co = weights.dim(0), wci = weights.dim(1), k = weights.dim(2);
  check(weights.dim(3) == k, "conv2d: non-square kernel in weights ", shape_str(weights));
  check(k % 2 == 1, "conv2d: kernel size must be odd, got ", k);
  check(ci == wci, "conv2d: input shape ", shape_str(input), " does not match weight shape ",
        shape_str(weights));
  const int pad = k / 2;

  Tensor out({n, co, h, w});
  const double* x = input.data.data();
  const double* wt = weights.data.data();
  double* y = out.data.data();
  const std::size_t x_img = static_cast<std::size_t>(h) * w;
  for (int b = 0; b < n; ++b) {
    for (int oc = 0; oc < co; ++oc) {
      double* yp = y + (static_cast<std::size_t>(b) * co + oc) * x_img;
      for (int c = 0; c < ci; ++c) {
        const double* xp = x + (static_cast<std::size_t>(b) * ci + c) * x_img;
        const double* wp = wt + (static_cast<std::size_t>(oc) * ci + c) * k * k;
        for (int u = 0; u < k; ++u) {
          for (int v = 0; v < k; ++v) {
            const double wv = wp[u * k + v];
            if (wv == 0.0) continue;
            const int di = u - pad, dj = v - pad;
            const int i0 = std::max(0, -di), i1 = std::min(h, h - di);
            const int j0 = std::max(0, -dj), j1 = std::min(w, w - dj);
            for (int i = i0; i < i1; ++i) {
              const double* xr = xp + static_cast<std::size_t>(i + di) * w + dj;
              double* yr = yp + static_cast<std::size_t>(i) * w;
              for (int j = j0; j < j1; ++j) yr[j] += wv * xr[j];
            }
          }
        }
      }
    }
  }
  return out;
}

namespace {

void conv2d_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_out,
                     Tensor& grad_in, Tensor& grad_w) {
  const int n = input.dim(0), ci = input.dim(1), h = input.dim(2), w = input.dim(3);
  const int co = weights.dim(0), k = weights.dim(2);
  const int pad = k / 2;
  const std::size_t img = static_cast<std::size_t>(h) * w;
  const double* x = input.data.data();
  const double* wt = weights.data.data();
  const double* gy = grad_out.data.data();
  double* gx = grad_in.data.data();
  double* gw = grad_w.data.data();
  for (int b = 0; b < n; ++b) {
    for (int oc = 0; oc < co; ++oc) {
      const double* gyp = gy + (static_cast<std::size_t>(b) * co + oc) * img;
      for (int c = 0; c < ci; ++c) {
        const double* xp = x + (static_cast<std::size_t>(b) * ci + c) * img;
        double* gxp = gx + (static_cast<std::size_t>(b) * ci + c) * img;
        const double* wp = wt + (static_cast<std::size_t>(oc) * ci + c) * k * k;
        double* gwp = gw + (static_cast<std::size_t>(oc) * ci + c) * k * k;
        for (int u = 0; u < k; ++u) {
          for (int v = 0; v < k; ++v) {
            const int di = u - pad, dj = v - pad;
            const int i0 = std::max(0, -di), i1 = std::min(h, h - di);
            const int j0 = std::max(0, -dj), j1 = std::min(w, w - dj);
            const double wv = wp[u * k + v];
            double acc = 0.0;
            for (int i = i0; i < i1; ++i) {
              const double* gyr = gyp + static_cast<std::size_t>(i) * w;
              const double* xr = xp + static_cast<std::size_t>(i + di) * w + dj;
              double* gxr = gxp + static_cast<std::size_t>(i + di) * w + dj;
              for (int j = j0; j < j1; ++j) {
                const double g = gyr[j];
                acc += g * xr[j];
                gxr[j] += g * wv;
              }
            }
            gwp[u * k + v] += acc;
          }
        }
      }
    }
  }
}

Tensor maxpool_forward(const Tensor& input) {
  const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  check(h >= 2 && w >= 2, "maxpool: spatial size ", h, "x", w, " too small");
  const int ho = h / 2, wo = w / 2;
  Tensor out({n, c, ho, wo});
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t in_base = (static_cast<std::size_t>(b) * c + ch) * h * w;
      const std::size_t out_base = (static_cast<std::size_t>(b) * c + ch) * ho * wo;
      for (int i = 0; i < ho; ++i)
        for (int j = 0; j < wo; ++j) {
          const double* p = input.data.data() + in_base + static_cast<std::size_t>(2 * i) * w + 2 * j;
          double m = p[0];
          if (p[1] > m) m = p[1];
          if (p[w] > m) m = p[w];
          if (p[w + 1] > m) m = p[w + 1];
          out.data[out_base + static_cast<std::size_t>(i) * wo + j] = m;
        }
    }
  return out;
}

void maxpool_backward(const Tensor& input, const Tensor& grad_out, Tensor& grad_in) {
  const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const int ho = h / 2, wo = w / 2;
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t in_base = (static_cast<std::size_t>(b) * c + ch) * h * w;
      const std::size_t out_base = (static_cast<std::size_t>(b) * c + ch) * ho * wo;
      for (int i = 0; i < ho; ++i)
        for (int j = 0; j < wo; ++j) {
          const std::size_t o = in_base + static_cast<std::size_t>(2 * i) * w + 2 * j;
          // gradient goes to the first maximum in row-major window order
          const std::size_t cand[4] = {o, o + 1, o + static_cast<std::size_t>(w),
                                       o + static_cast<std::size_t>(w) + 1};
          std::size_t best = cand[0];
          for (int t = 1; t < 4; ++t)
            if (input.data[cand[t]] > input.data[best]) best = cand[t];
          grad_in.data[best] += grad_out.data[out_base + static_cast<std::size_t>(i) * wo + j];
        }
    }
}

Tensor gpool_forward(const Tensor& input) {
  const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  Tensor out({n, c});
  const std::size_t img = static_cast<std::size_t>(h) * w;
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch) {
      const double* p = input.data.data() + (static_cast<std::size_t>(b) * c + ch) * img;
      double m = p[0];
      for (std::size_t t = 1; t < img; ++t)
        if (p[t] > m) m = p[t];
      out.data[static_cast<std::size_t>(b) * c + ch] = m;
    }
  return out;
}

void gpool_backward(const Tensor& input, const Tensor& grad_out, Tensor& grad_in) {
  const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t img = static_cast<std::size_t>(h) * w;
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t base = (static_cast<std::size_t>(b) * c + ch) * img;
      std::size_t best = base;
      for (std::size_t t = 1; t < img; ++t)
        if (input.data[base + t] > input.data[best]) best = base + t;
      grad_in.data[best] += grad_out.data[static_cast<std::size_t>(b) * c + ch];
    }
}

Tensor linear_forward(const Tensor& input, const Tensor& weights) {
  const int n = input.dim(0), ci = input.dim(1);
  const int co = weights.dim(0);
  check(weights.dim(1) == ci, "linear: input shape ", shape_str(input),
        " does not match weight shape ", shape_str(weights));
  Tensor out({n, co});
  for (int b = 0; b < n; ++b)
    for (int o = 0; o < co; ++o) {
      const double* wp = weights.data.data() + static_cast<std::size_t>(o) * ci;
      const double* xp = input.data.data() + static_cast<std::size_t>(b) * ci;
      double acc = 0.0;
      for (int i = 0; i < ci; ++i) acc += wp[i] * xp[i];
      out.data[static_cast<std::size_t>(b) * co + o] = acc;
    }
  return out;
}

void linear_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_out,
                     Tensor& grad_in, Tensor& grad_w) {
  const int n = input.dim(0), ci = input.dim(1), co = weights.dim(0);
  for (int b = 0; b < n; ++b) {
    const double* xp = input.data.data() + static_cast<std::size_t>(b) * ci;
    double* gxp = grad_in.data.data() + static_cast<std::size_t>(b) * ci;
    for (int o = 0; o < co; ++o) {
      const double g = grad_out.data[static_cast<std::size_t>(b) * co + o];
      if (g == 0.0) continue;
      const double* wp = weights.data.data() + static_cast<std::size_t>(o) * ci;
      double* gwp = grad_w.data.data() + static_cast<std::size_t>(o) * ci;
      for (int i = 0; i < ci; ++i) {
        gwp[i] += g * xp[i];
        gxp[i] += g * wp[i];
      }
    }
  }
}

struct ForwardTrace {
  std::vector<Tensor> acts;  // acts[0] = input, acts[i+1] = output of layer i
};

Tensor forward_all(const ToyModel& m, Tensor input, ForwardTrace* trace) {
  check(input.rank() == 4, "forward: input must be [N,C,H,W], got ", shape_str(input));
  if (trace) {
    trace->acts.clear();
    trace->acts.reserve(m.layers.size() + 1);
    trace->acts.push_back(input);
  }
  Tensor cur = std::move(input);
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    const LayerSpec& l = m.layers[i];
    Tensor next;
    switch (l.kind) {
      case LayerKind::conv: next = conv2d_forward(cur, m.params[i]); break;
      case LayerKind::relu: {
        next = cur;
        for (double& v : next.data)
          if (v < 0.0) v = 0.0;
        break;
      }
      case LayerKind::maxpool: next = maxpool_forward(cur); break;
      case LayerKind::global_maxpool: next = gpool_forward(cur); break;
      case LayerKind::linear: next = linear_forward(cur, m.params[i]); break;
    }
    cur = std::move(next);
    if (trace) trace->acts.push_back(cur);
  }
  return cur;
}

void backward_all(const ToyModel& m, const ForwardTrace& trace, const Tensor& grad_final,
                  std::vector<Tensor>& grads) {
  Tensor grad = grad_final;
  for (int i = static_cast<int>(m.layers.size()) - 1; i >= 0; --i) {
    const std::size_t li = static_cast<std::size_t>(i);
    const LayerSpec& l = m.layers[li];
    const Tensor& in = trace.acts[li];
    Tensor grad_in(in.shape);
    switch (l.kind) {
      case LayerKind::conv: conv2d_backward(in, m.params[li], grad, grad_in, grads[li]); break;
      case LayerKind::relu: {
        for (std::size_t t = 0; t < in.numel(); ++t)
          grad_in.data[t] = in.data[t] > 0.0 ? grad.data[t] : 0.0;
        break;
      }
      case LayerKind::maxpool: maxpool_backward(in, grad, grad_in); break;
      case LayerKind::global_maxpool: gpool_backward(in, grad, grad_in); break;
      case LayerKind::linear: linear_backward(in, m.params[li], grad, grad_in, grads[li]); break;
    }
    grad = std::move(grad_in);
  }
}

}  // namespace

ToyModel scale_filter(const ToyModel& m, int layer, int filter, double gamma) {
  ToyModel out = m;
  scale_filter_inplace(out, layer, filter, gamma);
  return out;
}

void scale_filter_inplace(ToyModel& m, int layer, int filter, double gamma) {
  check(layer >= 0 && layer < static_cast<int>(m.layers.size()), "scale_filter: layer ", layer,
        " out of range");
  const std::size_t li = static_cast<std::size_t>(layer);
  check(!m.params[li].empty(), "scale_filter: layer ", layer, " (",
        layer_kind_name(m.layers[li].kind), ") has no weights");
  check(gamma >= 0.0 && gamma <= 1.0, "scale_filter: gamma ", gamma, " outside [0,1]");
  const int c_out = m.layers[li].c_out;
  check(filter >= 0 && filter < c_out, "scale_filter: filter ", filter, " out of range [0,", c_out,
        ") at layer ", layer);
  const std::size_t row_len = m.params[li].numel() / static_cast<std::size_t>(c_out);
  double* row = m.params[li].data.data() + static_cast<std::size_t>(filter) * row_len;
  for (std::size_t t = 0; t < row_len; ++t) row[t] *= gamma;
}

Tensor embed(const ToyModel& m, const Tensor& input) {
  check(input.rank() == 3, "embed: input must be [C,H,W], got ", shape_str(input));
  Tensor batched({1, input.dim(0), input.dim(1), input.dim(2)}, input.data);
  Tensor out = forward_all(m, std::move(batched), nullptr);
  check(out.rank() == 2 && out.dim(0) == 1, "embed: model output is not a single vector");
  return Tensor({out.dim(1)}, std::move(out.data));
}

LossSpec parse_loss(const std::string& name, double margin) {
  check(margin >= 0.0, "loss: margin must be nonnegative, got ", margin);
  if (name == "triplet") return {LossKind::triplet, margin};
  if (name == "contrastive") return {LossKind::contrastive, margin};
  fail("loss: unknown kind '", name, "' (expected triplet|contrastive)");
}

double contrastive_loss(const Tensor& a, const Tensor& b, int label, double margin,
                        Tensor* grad_a, Tensor* grad_b) {
  check(same_shape(a, b), "contrastive: embedding shapes ", shape_str(a), " vs ", shape_str(b));
  const std::size_t n = a.numel();
  double d2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a.data[i] - b.data[i];
    d2 += d * d;
  }
  const double dist = std::sqrt(d2);
  if (grad_a) *grad_a = Tensor(a.shape);
  if (grad_b) *grad_b = Tensor(b.shape);
  if (label != 0) {
    if (grad_a && grad_b) {
      for (std::size_t i = 0; i < n; ++i) {
        const double g = 2.0 * (a.data[i] - b.data[i]);
        grad_a->data[i] = g;
        grad_b->data[i] = -g;
      }
    }
    return d2;
  }
  const double slack = margin - dist;
  if (slack <= 0.0) return 0.0;
  if (grad_a && grad_b && dist > 0.0) {
    const double scale = -2.0 * slack / dist;
    for (std::size_t i = 0; i < n; ++i) {
      const double g = scale * (a.data[i] - b.data[i]);
      grad_a->data[i] = g;
      grad_b->data[i] = -g;
    }
  }
  return slack * slack;
}

double triplet_loss(const Tensor& a, const Tensor& p, const Tensor& n, double margin,
                    Tensor* grad_a, Tensor* grad_p, Tensor* grad_n) {
  check(same_shape(a, p) && same_shape(a, n), "triplet: embedding shapes ", shape_str(a), ", ",
        shape_str(p), ", ", shape_str(n));
  const std::size_t len = a.numel();
  const double d_ap = l2_dist(a.data.data(), p.data.data(), len);
  const double d_an = l2_dist(a.data.data(), n.data.data(), len);
  if (grad_a) *grad_a = Tensor(a.shape);
  if (grad_p) *grad_p = Tensor(p.shape);
  if (grad_n) *grad_n = Tensor(n.shape);
  const double loss = d_ap - d_an + margin;
  if (loss <= 0.0) return 0.0;
  if (grad_a && grad_p && grad_n) {
    for (std::size_t i = 0; i < len; ++i) {
      double ga = 0.0;
      if (d_ap > 0.0) {
        const double g = (a.data[i] - p.data[i]) / d_ap;
        ga += g;
        grad_p->data[i] = -g;
      }
      if (d_an > 0.0) {
        const double g = (a.data[i] - n.data[i]) / d_an;
        ga -= g;
        grad_n->data[i] = g;
      }
      grad_a->data[i] = ga;
    }
  }
  return loss;
}

namespace {

// Stacks batch members into one [M,C,H,W] input; member order is
// (anchor, positive, negative) per triplet or (a, b) per pair.
Tensor stack_batch(const Batch& batch, const LossSpec& loss, int* per_item) {
  const bool triplet = loss.kind == LossKind::triplet;
  check(!batch.empty(), "train_step: empty batch");
  check(triplet ? !batch.triplets.empty() : !batch.pairs.empty(),
        "train_step: batch does not carry items for the ", triplet ? "triplet" : "contrastive",
        " loss");
  *per_item = triplet ? 3 : 2;
  const Tensor& first = triplet ? batch.triplets[0].anchor : batch.pairs[0].a;
  check(first.rank() == 3, "train_step: samples must be [C,H,W], got ", shape_str(first));
  const int members = *per_item * static_cast<int>(triplet ? batch.triplets.size() : batch.pairs.size());
  Tensor input({members, first.dim(0), first.dim(1), first.dim(2)});
  const std::size_t sample = first.numel();
  std::size_t off = 0;
  auto append = [&](const Tensor& t) {
    check(t.shape == first.shape, "train_step: mixed sample shapes ", shape_str(t), " vs ",
          shape_str(first));
    std::copy(t.data.begin(), t.data.end(), input.data.begin() + static_cast<std::ptrdiff_t>(off));
    off += sample;
  };
  if (triplet) {
    for (const TripletItem& it : batch.triplets) {
      append(it.anchor);
      append(it.positive);
      append(it.negative);
    }
  } else {
    for (const PairItem& it : batch.pairs) {
      append(it.a);
      append(it.b);
    }
  }
  return input;
}

Tensor row_of(const Tensor& mat, int r) {
  const int d = mat.dim(1);
  Tensor out({d});
  std::copy(mat.data.begin() + static_cast<std::ptrdiff_t>(r) * d,
            mat.data.begin() + static_cast<std::ptrdiff_t>(r + 1) * d, out.data.begin());
  return out;
}

[[noreturn]] void report_divergence(const ToyModel& m, const ForwardTrace& trace) {
  for (std::size_t i = 1; i < trace.acts.size(); ++i) {
    if (!all_finite(trace.acts[i]))
      fail("train_step: non-finite loss; first non-finite activation at layer ", i - 1, " (",
           layer_kind_name(m.layers[i - 1].kind), ")");
  }
  fail("train_step: non-finite loss with finite activations (check margin and inputs)");
}

}  // namespace

double batch_gradients(const ToyModel& m, const Batch& batch, const LossSpec& loss,
                       std::vector<Tensor>& grads) {
  validate_model(m);
  check(loss.margin >= 0.0, "loss: margin must be nonnegative, got ", loss.margin);
  grads.assign(m.params.size(), Tensor());
  for (std::size_t i = 0; i < m.params.size(); ++i)
    if (!m.params[i].empty()) grads[i] = Tensor(m.params[i].shape);

  int per_item = 0;
  Tensor input = stack_batch(batch, loss, &per_item);
  ForwardTrace trace;
  const Tensor emb = forward_all(m, std::move(input), &trace);

  const int items = emb.dim(0) / per_item;
  const double inv = 1.0 / items;
  Tensor grad_emb(emb.shape);
  double total = 0.0;
  for (int it = 0; it < items; ++it) {
    const int base = it * per_item;
    if (loss.kind == LossKind::triplet) {
      Tensor ga, gp, gn;
      total += triplet_loss(row_of(emb, base), row_of(emb, base + 1), row_of(emb, base + 2),
                            loss.margin, &ga, &gp, &gn);
      const int d = emb.dim(1);
      for (int i = 0; i < d; ++i) {
        grad_emb.data[static_cast<std::size_t>(base) * d + i] = ga.data[static_cast<std::size_t>(i)] * inv;
        grad_emb.data[(static_cast<std::size_t>(base) + 1) * d + i] = gp.data[static_cast<std::size_t>(i)] * inv;
        grad_emb.data[(static_cast<std::size_t>(base) + 2) * d + i] = gn.data[static_cast<std::size_t>(i)] * inv;
      }
    } else {
      Tensor ga, gb;
      total += contrastive_loss(row_of(emb, base), row_of(emb, base + 1),
                                batch.pairs[static_cast<std::size_t>(it)].label, loss.margin, &ga, &gb);
      const int d = emb.dim(1);
      for (int i = 0; i < d; ++i) {
        grad_emb.data[static_cast<std::size_t>(base) * d + i] = ga.data[static_cast<std::size_t>(i)] * inv;
        grad_emb.data[(static_cast<std::size_t>(base) + 1) * d + i] = gb.data[static_cast<std::size_t>(i)] * inv;
      }
    }
  }
  const double mean_loss = total * inv;
  if (!std::isfinite(mean_loss)) report_divergence(m, trace);
  backward_all(m, trace, grad_emb, grads);
  return mean_loss;
}

void sgd_update(ToyModel& m, const std::vector<Tensor>& grads, double lr) {
  check(grads.size() == m.params.size(), "sgd: gradient list size mismatch");
  for (std::size_t i = 0; i < m.params.size(); ++i) {
    if (m.params[i].empty()) continue;
    check(same_shape(grads[i], m.params[i]), "sgd: gradient shape mismatch at layer ", i);
    for (std::size_t t = 0; t < m.params[i].numel(); ++t)
      m.params[i].data[t] -= lr * grads[i].data[t];
  }
}

double train_step(ToyModel& m, const Batch& batch, const LossSpec& loss, double lr) {
  check(lr >= 0.0, "train_step: negative learning rate ", lr);
  std::vector<Tensor> grads;
  const double loss_value = batch_gradients(m, batch, loss, grads);
  sgd_update(m, grads, lr);
  return loss_value;
}

}  // namespace plfp

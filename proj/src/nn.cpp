#include "das/nn.hpp"

#include "das/errors.hpp"
#include "das/hash.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>

namespace das {
namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

std::string at_node(int id, const std::string& msg) { return "node " + std::to_string(id) + ": " + msg; }

std::size_t pooled_extent(std::size_t in, int kernel, int stride, int padding, int id) {
  const long span = static_cast<long>(in) + 2L * padding - kernel;
  if (kernel <= 0 || stride <= 0 || padding < 0 || span < 0)
    throw ConfigError(at_node(id, "window " + std::to_string(kernel) + " does not fit extent " +
                                      std::to_string(in)));
  return static_cast<std::size_t>(span / stride + 1);
}

Shape infer_layer(const Layer& layer, const std::vector<const Shape*>& in) {
  const int id = layer.id;
  auto need_inputs = [&](std::size_t n) {
    if (in.size() != n)
      throw ConfigError(at_node(id, std::string(kind_name(layer.kind)) + " expects " + std::to_string(n) +
                                        " input(s), got " + std::to_string(in.size())));
  };
  auto need_spatial = [&](const Shape& s) {
    if (s.size() != 3) throw ConfigError(at_node(id, "expects (C, H, W) input, got " + shape_str(s)));
  };
  return std::visit(
      overloaded{
          [&](const Conv2D& c) -> Shape {
            need_inputs(1);
            const Shape& s = *in[0];
            need_spatial(s);
            if (s[0] != static_cast<std::size_t>(c.cin))
              throw ConfigError(at_node(id, "conv expects " + std::to_string(c.cin) + " channels, got " +
                                                std::to_string(s[0])));
            return {static_cast<std::size_t>(c.cout), pooled_extent(s[1], c.kernel, c.stride, c.padding, id),
                    pooled_extent(s[2], c.kernel, c.stride, c.padding, id)};
          },
          [&](const Linear& l) -> Shape {
            need_inputs(1);
            const Shape& s = *in[0];
            if (s.size() != 1 || s[0] != static_cast<std::size_t>(l.fin))
              throw ConfigError(at_node(id, "linear expects (" + std::to_string(l.fin) + "), got " + shape_str(s)));
            return {static_cast<std::size_t>(l.fout)};
          },
          [&](const ReLU&) -> Shape {
            need_inputs(1);
            return *in[0];
          },
          [&](const MaxPool2D& p) -> Shape {
            need_inputs(1);
            const Shape& s = *in[0];
            need_spatial(s);
            if (p.padding * 2 >= p.kernel) throw ConfigError(at_node(id, "pool padding must be < kernel / 2"));
            return {s[0], pooled_extent(s[1], p.kernel, p.stride, p.padding, id),
                    pooled_extent(s[2], p.kernel, p.stride, p.padding, id)};
          },
          [&](const GlobalAvgPool&) -> Shape {
            need_inputs(1);
            need_spatial(*in[0]);
            return {(*in[0])[0]};
          },
          [&](const Add&) -> Shape {
            if (in.empty()) throw ConfigError(at_node(id, "add needs at least one input"));
            for (const Shape* s : in)
              if (*s != *in[0])
                throw ConfigError(at_node(id, "add shape mismatch " + shape_str(*in[0]) + " vs " + shape_str(*s)));
            return *in[0];
          },
          [&](const Concat&) -> Shape {
            if (in.empty()) throw ConfigError(at_node(id, "concat needs at least one input"));
            Shape out = *in[0];
            for (std::size_t i = 1; i < in.size(); ++i) {
              const Shape& s = *in[i];
              if (s.size() != out.size() || !std::equal(s.begin() + 1, s.end(), out.begin() + 1))
                throw ConfigError(at_node(id, "concat shape mismatch " + shape_str(out) + " vs " + shape_str(s)));
              out[0] += s[0];
            }
            return out;
          },
      },
      layer.kind);
}

// ---- convolution helpers -------------------------------------------------

struct ConvGeom {
  std::size_t n, c, h, w, ho, wo, k, kk, p;  // kk = c*k*k, p = ho*wo
  int stride, pad;
  bool direct;  // 1x1, stride 1, no padding: columns are the input itself
};

ConvGeom conv_geom(const Conv2D& conv, const Shape& in) {
  ConvGeom g{};
  g.n = in[0];
  g.c = in[1];
  g.h = in[2];
  g.w = in[3];
  g.k = static_cast<std::size_t>(conv.kernel);
  g.stride = conv.stride;
  g.pad = conv.padding;
  g.ho = (g.h + 2 * g.pad - g.k) / g.stride + 1;
  g.wo = (g.w + 2 * g.pad - g.k) / g.stride + 1;
  g.kk = g.c * g.k * g.k;
  g.p = g.ho * g.wo;
  g.direct = g.k == 1 && g.stride == 1 && g.pad == 0;
  return g;
}

void im2col(const ConvGeom& g, const double* src, double* cols) {
  for (std::size_t c = 0; c < g.c; ++c) {
    const double* plane = src + c * g.h * g.w;
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        double* dst = cols + ((c * g.k + ki) * g.k + kj) * g.p;
        for (std::size_t oh = 0; oh < g.ho; ++oh) {
          const long ih = static_cast<long>(oh) * g.stride - g.pad + static_cast<long>(ki);
          double* row = dst + oh * g.wo;
          if (ih < 0 || ih >= static_cast<long>(g.h)) {
            std::fill_n(row, g.wo, 0.0);
            continue;
          }
          const double* line = plane + ih * g.w;
          for (std::size_t ow = 0; ow < g.wo; ++ow) {
            const long iw = static_cast<long>(ow) * g.stride - g.pad + static_cast<long>(kj);
            row[ow] = (iw < 0 || iw >= static_cast<long>(g.w)) ? 0.0 : line[iw];
          }
        }
      }
    }
  }
}

void col2im_add(const ConvGeom& g, const double* cols, double* dst) {
  for (std::size_t c = 0; c < g.c; ++c) {
    double* plane = dst + c * g.h * g.w;
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        const double* src = cols + ((c * g.k + ki) * g.k + kj) * g.p;
        for (std::size_t oh = 0; oh < g.ho; ++oh) {
          const long ih = static_cast<long>(oh) * g.stride - g.pad + static_cast<long>(ki);
          if (ih < 0 || ih >= static_cast<long>(g.h)) continue;
          double* line = plane + ih * g.w;
          const double* row = src + oh * g.wo;
          for (std::size_t ow = 0; ow < g.wo; ++ow) {
            const long iw = static_cast<long>(ow) * g.stride - g.pad + static_cast<long>(kj);
            if (iw >= 0 && iw < static_cast<long>(g.w)) line[iw] += row[ow];
          }
        }
      }
    }
  }
}

Tensor conv_forward(const Conv2D& conv, const Tensor& x, Buffer& cols) {
  const ConvGeom g = conv_geom(conv, x.shape());
  Tensor y({g.n, static_cast<std::size_t>(conv.cout), g.ho, g.wo});
  ConstRowMatrixMap w(conv.weight.raw(), conv.cout, static_cast<Eigen::Index>(g.kk));
  ConstVectorMap b(conv.bias.raw(), conv.cout);
  if (g.direct)
    cols.clear();
  else
    cols.resize(g.n * g.kk * g.p);
  for (std::size_t n = 0; n < g.n; ++n) {
    RowMatrixMap out(y.raw() + n * conv.cout * g.p, conv.cout, static_cast<Eigen::Index>(g.p));
    const double* src = x.raw() + n * g.c * g.h * g.w;
    if (!g.direct) {
      double* cn = cols.data() + n * g.kk * g.p;
      im2col(g, src, cn);
      src = cn;
    }
    out.noalias() = w * ConstRowMatrixMap(src, static_cast<Eigen::Index>(g.kk), static_cast<Eigen::Index>(g.p));
    out.colwise() += b;
  }
  return y;
}

void conv_backward(const Conv2D& conv, const Tensor& x, const Buffer& cols, const Tensor& dy,
                   Tensor& dw, Tensor& db, Tensor* dx) {
  const ConvGeom g = conv_geom(conv, x.shape());
  ConstRowMatrixMap w(conv.weight.raw(), conv.cout, static_cast<Eigen::Index>(g.kk));
  RowMatrixMap dwm(dw.raw(), conv.cout, static_cast<Eigen::Index>(g.kk));
  VectorMap dbv(db.raw(), conv.cout);
  RowMatrix scratch;
  for (std::size_t n = 0; n < g.n; ++n) {
    ConstRowMatrixMap gy(dy.raw() + n * conv.cout * g.p, conv.cout, static_cast<Eigen::Index>(g.p));
    const double* src = g.direct ? x.raw() + n * g.c * g.p : cols.data() + n * g.kk * g.p;
    ConstRowMatrixMap in(src, static_cast<Eigen::Index>(g.kk), static_cast<Eigen::Index>(g.p));
    dwm.noalias() += gy * in.transpose();
    dbv += gy.rowwise().sum();
    if (!dx) continue;
    double* dxn = dx->raw() + n * g.c * g.h * g.w;
    if (g.direct) {
      RowMatrixMap(dxn, static_cast<Eigen::Index>(g.c), static_cast<Eigen::Index>(g.p)).noalias() +=
          w.transpose() * gy;
    } else {
      scratch.noalias() = w.transpose() * gy;
      col2im_add(g, scratch.data(), dxn);
    }
  }
}

// ---- pooling helpers ------------------------------------------------------

Tensor maxpool_forward(const MaxPool2D& pool, const Tensor& x, std::vector<std::uint32_t>& route) {
  const std::size_t n = x.extent(0), c = x.extent(1), h = x.extent(2), w = x.extent(3);
  const std::size_t ho = (h + 2 * pool.padding - pool.kernel) / pool.stride + 1;
  const std::size_t wo = (w + 2 * pool.padding - pool.kernel) / pool.stride + 1;
  Tensor y({n, c, ho, wo});
  route.resize(y.size());
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const double* src = x.raw() + plane * h * w;
    double* dst = y.raw() + plane * ho * wo;
    std::uint32_t* rt = route.data() + plane * ho * wo;
    for (std::size_t oh = 0; oh < ho; ++oh) {
      for (std::size_t ow = 0; ow < wo; ++ow) {
        double best = -std::numeric_limits<double>::infinity();
        std::uint32_t arg = 0;
        for (int ki = 0; ki < pool.kernel; ++ki) {
          const long ih = static_cast<long>(oh) * pool.stride - pool.padding + ki;
          if (ih < 0 || ih >= static_cast<long>(h)) continue;
          for (int kj = 0; kj < pool.kernel; ++kj) {
            const long iw = static_cast<long>(ow) * pool.stride - pool.padding + kj;
            if (iw < 0 || iw >= static_cast<long>(w)) continue;
            const double v = src[ih * w + iw];
            if (v > best) {
              best = v;
              arg = static_cast<std::uint32_t>(ih * w + iw);
            }
          }
        }
        dst[oh * wo + ow] = best;
        rt[oh * wo + ow] = arg;
      }
    }
  }
  return y;
}

// ---- loss -----------------------------------------------------------------

void check_labels(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2) throw ConfigError("logits must be (N, classes), got " + shape_str(logits.shape()));
  if (labels.size() != logits.extent(0))
    throw ConfigError("label count " + std::to_string(labels.size()) + " != batch size " +
                      std::to_string(logits.extent(0)));
  const int classes = static_cast<int>(logits.extent(1));
  for (int y : labels)
    if (y < 0 || y >= classes) throw ConfigError("label " + std::to_string(y) + " outside [0, " +
                                                 std::to_string(classes) + ")");
}

// Row-wise softmax; returns mean negative log-likelihood.
double softmax_xent(const Tensor& logits, std::span<const int> labels, RowMatrix* probs) {
  const auto z = logits.matrix(logits.extent(0));
  double loss = 0.0;
  if (probs) probs->resize(z.rows(), z.cols());
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const double m = z.row(i).maxCoeff();
    const double lse = m + std::log((z.row(i).array() - m).exp().sum());
    loss += lse - z(i, labels[i]);
    if (probs) probs->row(i) = (z.row(i).array() - lse).exp();
  }
  return loss / static_cast<double>(z.rows());
}

void add_into(Tensor& acc, const Tensor& g) {
  if (acc.empty())
    acc = g;
  else
    acc.vec() += g.vec();
}

Tensor& grad_slot(std::vector<Tensor>& grads, int id, const Shape& shape) {
  Tensor& t = grads[id];
  if (t.empty()) t = Tensor(shape);
  return t;
}

}  // namespace

// ---- construction ---------------------------------------------------------

Conv2D make_conv(int kernel, int cin, int cout, int stride, int padding) {
  Conv2D c{kernel, cin, cout, stride, padding, {}, {}};
  c.weight = Tensor({static_cast<std::size_t>(cout), static_cast<std::size_t>(cin),
                     static_cast<std::size_t>(kernel), static_cast<std::size_t>(kernel)});
  c.bias = Tensor({static_cast<std::size_t>(cout)});
  return c;
}

Linear make_linear(int fin, int fout) {
  Linear l{fin, fout, {}, {}};
  l.weight = Tensor({static_cast<std::size_t>(fout), static_cast<std::size_t>(fin)});
  l.bias = Tensor({static_cast<std::size_t>(fout)});
  return l;
}

const char* kind_name(const LayerKind& kind) noexcept {
  static constexpr const char* names[] = {"Conv2D", "Linear", "ReLU", "MaxPool2D", "GlobalAvgPool", "Add", "Concat"};
  return names[kind.index()];
}

Network::Network(Shape input_shape) : input_shape_(std::move(input_shape)), position_{-1} {
  if (input_shape_.empty() || shape_size(input_shape_) == 0) throw ConfigError("network input shape must be non-empty");
}

Network::Network(Shape input_shape, std::vector<Layer> layers) : Network(std::move(input_shape)) {
  int max_id = 0;
  for (const Layer& l : layers) max_id = std::max(max_id, l.id);
  position_.assign(max_id + 1, -2);
  position_[kInputId] = -1;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const Layer& l = layers[i];
    if (l.id <= 0 || position_[l.id] != -2) throw ConfigError(at_node(l.id, "duplicate or reserved id"));
    for (int in : l.inputs)
      if (in < 0 || in > max_id || position_[in] == -2)
        throw ConfigError(at_node(l.id, "input " + std::to_string(in) + " is not defined before use"));
    position_[l.id] = static_cast<int>(i);
  }
  layers_ = std::move(layers);
  next_id_ = max_id + 1;
  check_topology();
}

int Network::add(LayerKind kind, std::vector<int> inputs) {
  const int id = next_id_;
  for (int in : inputs)
    if (in < 0 || in >= id || (in != kInputId && position_[in] < 0))
      throw ConfigError(at_node(id, "input " + std::to_string(in) + " is not defined"));
  auto check_params = [&](const Tensor& w, const Shape& ws, const Tensor& b, std::size_t bs) {
    if (w.shape() != ws || b.shape() != Shape{bs})
      throw ConfigError(at_node(id, "parameter shapes do not match layer dimensions"));
  };
  if (auto* c = std::get_if<Conv2D>(&kind))
    check_params(c->weight,
                 {static_cast<std::size_t>(c->cout), static_cast<std::size_t>(c->cin),
                  static_cast<std::size_t>(c->kernel), static_cast<std::size_t>(c->kernel)},
                 c->bias, static_cast<std::size_t>(c->cout));
  if (auto* l = std::get_if<Linear>(&kind))
    check_params(l->weight, {static_cast<std::size_t>(l->fout), static_cast<std::size_t>(l->fin)}, l->bias,
                 static_cast<std::size_t>(l->fout));
  layers_.push_back(Layer{id, std::move(kind), std::move(inputs)});
  position_.push_back(static_cast<int>(layers_.size() - 1));
  ++next_id_;
  has_forward_ = false;
  return id;
}

const Layer& Network::layer(int id) const {
  if (id <= 0 || id >= next_id_ || position_[id] < 0) throw ConfigError(at_node(id, "no such layer"));
  return layers_[position_[id]];
}

int Network::sink() const {
  if (layers_.empty()) throw ConfigError("network has no layers");
  std::vector<char> consumed(next_id_, 0);
  for (const Layer& l : layers_)
    for (int in : l.inputs) consumed[in] = 1;
  int sink = -1;
  for (const Layer& l : layers_) {
    if (consumed[l.id]) continue;
    if (sink != -1)
      throw ConfigError("network has multiple sinks (nodes " + std::to_string(sink) + " and " +
                        std::to_string(l.id) + ")");
    sink = l.id;
  }
  if (sink == -1) throw InternalError("network has no sink");
  return sink;
}

void Network::check_topology() const { (void)sink(); }

std::vector<Shape> Network::infer_shapes() const {
  std::vector<Shape> shapes(next_id_);
  shapes[kInputId] = input_shape_;
  std::vector<const Shape*> in;
  for (const Layer& l : layers_) {
    in.clear();
    for (int i : l.inputs) in.push_back(&shapes[i]);
    shapes[l.id] = infer_layer(l, in);
  }
  return shapes;
}

std::size_t Network::param_count() const {
  std::size_t total = 0;
  for (const Tensor* t : parameters()) total += t->size();
  return total;
}

std::size_t Network::activation_units() const {
  const auto shapes = infer_shapes();
  std::size_t total = 0;
  for (const Layer& l : layers_)
    if (std::holds_alternative<ReLU>(l.kind)) total += shape_size(shapes[l.id]);
  return total;
}

std::vector<ParamRef> Network::parameters() {
  std::vector<ParamRef> out;
  for (int id = 1; id < next_id_; ++id) {
    if (position_[id] < 0) continue;
    Layer& l = layers_[position_[id]];
    if (auto* c = std::get_if<Conv2D>(&l.kind)) {
      out.push_back({id, &c->weight});
      out.push_back({id, &c->bias});
    } else if (auto* f = std::get_if<Linear>(&l.kind)) {
      out.push_back({id, &f->weight});
      out.push_back({id, &f->bias});
    }
  }
  return out;
}

std::vector<const Tensor*> Network::parameters() const {
  std::vector<const Tensor*> out;
  for (ParamRef p : const_cast<Network*>(this)->parameters()) out.push_back(p.tensor);
  return out;
}

// ---- forward / backward ---------------------------------------------------

Tensor forward(Network& net, const Tensor& batch) {
  const Shape& in = net.input_shape_;
  if (batch.rank() != in.size() + 1 || !std::equal(in.begin(), in.end(), batch.shape().begin() + 1) ||
      batch.extent(0) == 0)
    throw ConfigError(at_node(Network::kInputId, "batch shape " + shape_str(batch.shape()) +
                                                     " does not match input " + shape_str(in)));
  const int sink = net.sink();
  // Shape validation up front gives node-scoped errors before any math runs.
  (void)net.infer_shapes();

  net.has_forward_ = false;
  net.acts_.assign(net.next_id_, Tensor{});
  net.cols_.resize(net.next_id_);
  net.argmax_.resize(net.next_id_);
  net.acts_[Network::kInputId] = batch;
  const std::size_t n = batch.extent(0);

  for (const Layer& l : net.layers_) {
    const auto input = [&](std::size_t i) -> const Tensor& { return net.acts_[l.inputs[i]]; };
    net.acts_[l.id] = std::visit(
        overloaded{
            [&](const Conv2D& c) { return conv_forward(c, input(0), net.cols_[l.id]); },
            [&](const Linear& f) {
              const Tensor& x = input(0);
              Tensor y({n, static_cast<std::size_t>(f.fout)});
              auto ym = y.matrix(n);
              ym.noalias() = x.matrix(n) * f.weight.matrix(f.fout).transpose();
              ym.rowwise() += f.bias.vec().transpose();
              return y;
            },
            [&](const ReLU&) {
              Tensor y = input(0);
              y.vec() = y.vec().cwiseMax(0.0);
              return y;
            },
            [&](const MaxPool2D& p) { return maxpool_forward(p, input(0), net.argmax_[l.id]); },
            [&](const GlobalAvgPool&) {
              const Tensor& x = input(0);
              const std::size_t c = x.extent(1), hw = x.extent(2) * x.extent(3);
              Tensor y({n, c});
              y.vec() = ConstRowMatrixMap(x.raw(), n * c, hw).rowwise().mean();
              return y;
            },
            [&](const Add& a) {
              Tensor y = input(0);
              for (std::size_t i = 1; i < l.inputs.size(); ++i) y.vec() += input(i).vec();
              if (a.scale != 1.0) y.vec() *= a.scale;
              return y;
            },
            [&](const Concat&) {
              Shape s = input(0).shape();
              s[1] = 0;
              for (std::size_t i = 0; i < l.inputs.size(); ++i) s[1] += input(i).extent(1);
              Tensor y(s);
              const std::size_t out_row = y.size() / n;
              std::size_t offset = 0;
              for (std::size_t i = 0; i < l.inputs.size(); ++i) {
                const Tensor& x = input(i);
                const std::size_t row = x.size() / n;
                for (std::size_t s_ = 0; s_ < n; ++s_)
                  std::copy_n(x.raw() + s_ * row, row, y.raw() + s_ * out_row + offset);
                offset += row;
              }
              return y;
            },
        },
        l.kind);
  }

  net.masks_.clear();
  for (int id = 1; id < net.next_id_; ++id) {
    if (net.position_[id] < 0 || !std::holds_alternative<ReLU>(net.layers_[net.position_[id]].kind)) continue;
    const Tensor& y = net.acts_[id];
    ReluMask m{id, y.shape(), std::vector<std::uint8_t>(y.size())};
    for (std::size_t i = 0; i < y.size(); ++i) m.active[i] = y[i] > 0.0 ? 1 : 0;
    net.masks_.push_back(std::move(m));
  }
  net.input_ = batch;
  net.has_forward_ = true;
  return net.acts_[sink];
}

Gradients backward(Network& net, const Tensor& logits, std::span<const int> labels, bool want_input_grad) {
  if (!net.has_forward_) throw StateError("backward called without a preceding forward pass");
  const int sink = net.sink();
  if (logits.shape() != net.acts_[sink].shape())
    throw StateError("logits do not come from the last forward pass");
  check_labels(logits, labels);

  const std::size_t n = logits.extent(0);
  Gradients out;
  RowMatrix probs;
  out.loss = softmax_xent(logits, labels, &probs);
  for (std::size_t i = 0; i < n; ++i) probs(i, labels[i]) -= 1.0;
  probs /= static_cast<double>(n);

  std::vector<Tensor> grads(net.next_id_);
  grads[sink] = Tensor(logits.shape());
  std::copy(probs.data(), probs.data() + probs.size(), grads[sink].raw());

  std::vector<std::pair<Tensor, Tensor>> pgrads(net.next_id_);
  auto wants = [&](int id) { return id != Network::kInputId || want_input_grad; };

  for (auto it = net.layers_.rbegin(); it != net.layers_.rend(); ++it) {
    const Layer& l = *it;
    if (grads[l.id].empty()) grads[l.id] = Tensor(net.acts_[l.id].shape());
    const Tensor& g = grads[l.id];
    const auto in = [&](std::size_t i) { return l.inputs[i]; };
    std::visit(
        overloaded{
            [&](const Conv2D& c) {
              auto& [dw, db] = pgrads[l.id];
              dw = Tensor(c.weight.shape());
              db = Tensor(c.bias.shape());
              const Tensor& x = net.acts_[in(0)];
              Tensor* dx = wants(in(0)) ? &grad_slot(grads, in(0), x.shape()) : nullptr;
              conv_backward(c, x, net.cols_[l.id], g, dw, db, dx);
            },
            [&](const Linear& f) {
              auto& [dw, db] = pgrads[l.id];
              const Tensor& x = net.acts_[in(0)];
              const auto gm = g.matrix(n);
              dw = Tensor(f.weight.shape());
              db = Tensor(f.bias.shape());
              dw.matrix(f.fout).noalias() = gm.transpose() * x.matrix(n);
              db.vec() = gm.colwise().sum().transpose();
              if (wants(in(0))) grad_slot(grads, in(0), x.shape()).matrix(n).noalias() += gm * f.weight.matrix(f.fout);
            },
            [&](const ReLU&) {
              if (!wants(in(0))) return;
              const Tensor& y = net.acts_[l.id];
              Tensor& dx = grad_slot(grads, in(0), y.shape());
              for (std::size_t i = 0; i < y.size(); ++i)
                if (y[i] > 0.0) dx[i] += g[i];
            },
            [&](const MaxPool2D&) {
              if (!wants(in(0))) return;
              const Tensor& x = net.acts_[in(0)];
              Tensor& dx = grad_slot(grads, in(0), x.shape());
              const std::size_t planes = x.extent(0) * x.extent(1);
              const std::size_t plane_in = x.extent(2) * x.extent(3), plane_out = g.size() / planes;
              const auto& route = net.argmax_[l.id];
              for (std::size_t p = 0; p < planes; ++p)
                for (std::size_t j = 0; j < plane_out; ++j)
                  dx[p * plane_in + route[p * plane_out + j]] += g[p * plane_out + j];
            },
            [&](const GlobalAvgPool&) {
              if (!wants(in(0))) return;
              const Tensor& x = net.acts_[in(0)];
              Tensor& dx = grad_slot(grads, in(0), x.shape());
              const std::size_t hw = x.extent(2) * x.extent(3);
              const double scale = 1.0 / static_cast<double>(hw);
              for (std::size_t r = 0; r < g.size(); ++r)
                for (std::size_t j = 0; j < hw; ++j) dx[r * hw + j] += g[r] * scale;
            },
            [&](const Add& a) {
              Tensor scaled;
              const Tensor* src = &g;
              if (a.scale != 1.0) {
                scaled = g;
                scaled.vec() *= a.scale;
                src = &scaled;
              }
              for (int i : l.inputs)
                if (wants(i)) add_into(grads[i], *src);
            },
            [&](const Concat&) {
              const std::size_t out_row = g.size() / n;
              std::size_t offset = 0;
              for (int i : l.inputs) {
                const Tensor& x = net.acts_[i];
                const std::size_t row = x.size() / n;
                if (wants(i)) {
                  Tensor& dx = grad_slot(grads, i, x.shape());
                  for (std::size_t s = 0; s < n; ++s) {
                    VectorMap(dx.raw() + s * row, static_cast<Eigen::Index>(row)) +=
                        ConstVectorMap(g.raw() + s * out_row + offset, static_cast<Eigen::Index>(row));
                  }
                }
                offset += row;
              }
            },
        },
        l.kind);
  }

  for (int id = 1; id < net.next_id_; ++id) {
    if (net.position_[id] < 0) continue;
    const LayerKind& k = net.layers_[net.position_[id]].kind;
    if (!std::holds_alternative<Conv2D>(k) && !std::holds_alternative<Linear>(k)) continue;
    out.params.push_back(std::move(pgrads[id].first));
    out.params.push_back(std::move(pgrads[id].second));
  }
  if (want_input_grad) out.input = grads[Network::kInputId].empty() ? Tensor(net.input_.shape())
                                                                     : std::move(grads[Network::kInputId]);
  return out;
}

void sgd_step(Network& net, const Gradients& grads, double lr, double momentum) {
  auto params = net.parameters();
  if (grads.params.size() != params.size())
    throw ConfigError("gradient count " + std::to_string(grads.params.size()) + " != parameter count " +
                      std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads.params[i].shape() != params[i].tensor->shape())
      throw ConfigError(at_node(params[i].node_id, "gradient shape mismatch"));
    if (!grads.params[i].all_finite())
      throw DivergenceError(at_node(params[i].node_id, "non-finite gradient"), params[i].node_id);
  }
  if (net.momentum_.size() != params.size()) {
    net.momentum_.clear();
    for (const ParamRef& p : params) net.momentum_.emplace_back(p.tensor->shape());
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto v = net.momentum_[i].vec();
    v = momentum * v + grads.params[i].vec();
    params[i].tensor->vec() -= lr * v;
  }
  net.has_forward_ = false;
}

void init_params(Network& net, std::uint64_t seed) {
  for (Layer& l : net.layers()) {
    auto fill = [&](Tensor& w, Tensor& b, std::size_t fan_in) {
      std::mt19937_64 rng(derive_seed(seed, "param", {static_cast<std::uint64_t>(l.id)}));
      std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
      for (double& v : w.data()) v = dist(rng);
      b.fill(0.0);
    };
    if (auto* c = std::get_if<Conv2D>(&l.kind))
      fill(c->weight, c->bias, static_cast<std::size_t>(c->cin * c->kernel * c->kernel));
    else if (auto* f = std::get_if<Linear>(&l.kind))
      fill(f->weight, f->bias, static_cast<std::size_t>(f->fin));
  }
}

double cross_entropy(const Tensor& logits, std::span<const int> labels) {
  check_labels(logits, labels);
  return softmax_xent(logits, labels, nullptr);
}

std::vector<int> argmax_rows(const Tensor& logits) {
  const auto z = logits.matrix(logits.extent(0));
  std::vector<int> out(static_cast<std::size_t>(z.rows()));
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    Eigen::Index j;
    z.row(i).maxCoeff(&j);
    out[i] = static_cast<int>(j);
  }
  return out;
}

std::uint64_t param_checksum(const Network& net) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const Tensor* t : net.parameters())
    h = fnv1a64({reinterpret_cast<const unsigned char*>(t->raw()), t->size() * sizeof(double)}, h);
  return h;
}

}  // namespace das

// Copyright 2026 The EvSign Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "evsign/sparse_conv.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace evsign::sparse {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using MutMap = Eigen::Map<RowMat<T>>;

}  // namespace

SparseLayout::SparseLayout(std::size_t batches, std::size_t height, std::size_t width, std::vector<Site> coords)
    : batches_(batches), height_(height), width_(width), coords_(std::move(coords)),
      index_(batches * height * width, -1) {
  for (std::size_t i = 0; i < coords_.size(); ++i) {
    const Site& s = coords_[i];
    if (s.batch >= batches_ || s.y >= height_ || s.x >= width_)
      throw std::invalid_argument("sparse site outside the spatial shape");
    auto& slot = index_[(s.batch * height_ + s.y) * width_ + s.x];
    if (slot != -1) throw std::invalid_argument("duplicate sparse site");
    slot = static_cast<std::int32_t>(i);
  }
}

template <typename T>
SparseTensor<T> sparsify(std::span<const float> dense, std::size_t batches, std::size_t channels, std::size_t height,
                         std::size_t width, float threshold) {
  const std::size_t plane = height * width;
  if (dense.size() != batches * channels * plane) throw std::invalid_argument("sparsify: size mismatch");
  std::vector<Site> coords;
  std::vector<T> feats;
  for (std::size_t b = 0; b < batches; ++b) {
    const float* base = dense.data() + b * channels * plane;
    for (std::size_t p = 0; p < plane; ++p) {
      bool active = false;
      for (std::size_t c = 0; c < channels && !active; ++c) active = std::abs(base[c * plane + p]) > threshold;
      if (!active) continue;
      coords.push_back({static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(p / width),
                        static_cast<std::uint32_t>(p % width)});
      for (std::size_t c = 0; c < channels; ++c) feats.push_back(static_cast<T>(base[c * plane + p]));
    }
  }
  const std::size_t n = coords.size();
  SparseTensor<T> out;
  out.layout = std::make_shared<SparseLayout>(batches, height, width, std::move(coords));
  out.features = Tensor<T>::from({n, channels}, std::move(feats));
  return out;
}

template <typename T>
SparseTensor<T> sparsify(const VoxelGrid& grid, float threshold) {
  return sparsify<T>(grid.data, grid.segments, grid.bins, grid.height, grid.width, threshold);
}

template <typename T>
std::vector<T> densify(const SparseTensor<T>& x) {
  const auto& L = *x.layout;
  const std::size_t c = x.channels(), plane = L.height() * L.width();
  std::vector<T> out(L.batches() * c * plane, T(0));
  auto f = x.features.data();
  for (std::size_t i = 0; i < L.size(); ++i) {
    const Site& s = L.coords()[i];
    for (std::size_t ch = 0; ch < c; ++ch) out[(s.batch * c + ch) * plane + s.y * L.width() + s.x] = f[i * c + ch];
  }
  return out;
}

std::size_t Rulebook::pair_count() const {
  std::size_t n = 0;
  for (const auto& v : in_rows) n += v.size();
  return n;
}

Rulebook build_rulebook(const std::shared_ptr<const SparseLayout>& input, std::size_t kernel, std::size_t stride,
                        bool submanifold) {
  if (stride < 1) throw std::invalid_argument("stride must be at least 1");
  if (kernel % 2 == 0) throw std::invalid_argument("kernel size must be odd");
  if (submanifold && stride != 1) throw std::invalid_argument("submanifold convolution requires stride 1");
  const auto& in = *input;
  const auto r = static_cast<std::int64_t>(kernel / 2);
  const auto s = static_cast<std::int64_t>(stride);
  Rulebook rb;
  rb.kernel = kernel;
  rb.stride = stride;
  rb.submanifold = submanifold;
  rb.in_rows.resize(kernel * kernel);
  rb.out_rows.resize(kernel * kernel);

  if (submanifold) {
    rb.output = input;
  } else {
    const std::size_t oh = (in.height() + stride - 1) / stride, ow = (in.width() + stride - 1) / stride;
    std::vector<char> hit(in.batches() * oh * ow, 0);
    for (const Site& site : in.coords())
      for (std::int64_t dy = -r; dy <= r; ++dy)
        for (std::int64_t dx = -r; dx <= r; ++dx) {
          const std::int64_t ny = static_cast<std::int64_t>(site.y) - dy, nx = static_cast<std::int64_t>(site.x) - dx;
          if (ny < 0 || nx < 0 || ny % s != 0 || nx % s != 0) continue;
          const std::int64_t oy = ny / s, ox = nx / s;
          if (oy >= static_cast<std::int64_t>(oh) || ox >= static_cast<std::int64_t>(ow)) continue;
          hit[(site.batch * oh + static_cast<std::size_t>(oy)) * ow + static_cast<std::size_t>(ox)] = 1;
        }
    std::vector<Site> coords;
    for (std::size_t i = 0; i < hit.size(); ++i)
      if (hit[i])
        coords.push_back({static_cast<std::uint32_t>(i / (oh * ow)), static_cast<std::uint32_t>((i / ow) % oh),
                          static_cast<std::uint32_t>(i % ow)});
    rb.output = std::make_shared<SparseLayout>(in.batches(), oh, ow, std::move(coords));
  }

  const auto& out = *rb.output;
  for (std::size_t j = 0; j < out.size(); ++j) {
    const Site& o = out.coords()[j];
    std::size_t k = 0;
    for (std::int64_t dy = -r; dy <= r; ++dy)
      for (std::int64_t dx = -r; dx <= r; ++dx, ++k) {
        const std::int64_t y = static_cast<std::int64_t>(o.y) * s + dy, x = static_cast<std::int64_t>(o.x) * s + dx;
        if (y < 0 || x < 0 || y >= static_cast<std::int64_t>(in.height()) || x >= static_cast<std::int64_t>(in.width()))
          continue;
        const std::int32_t i = in.row(o.batch, static_cast<std::size_t>(y), static_cast<std::size_t>(x));
        if (i < 0) continue;
        rb.in_rows[k].push_back(i);
        rb.out_rows[k].push_back(static_cast<std::int32_t>(j));
      }
  }
  return rb;
}

template <typename T>
Tensor<T> sparse_conv(const Tensor<T>& features, const Tensor<T>& weight, const Tensor<T>& bias,
                      const Rulebook& rb) {
  const std::size_t offsets = rb.kernel * rb.kernel;
  if (weight.rank() != 3 || weight.dim(0) != offsets) throw TensorError("sparse_conv: weight must be K*K x Cin x Cout");
  const std::size_t cin = weight.dim(1), cout = weight.dim(2);
  if (features.rank() != 2 || features.dim(1) != cin)
    throw TensorError("sparse_conv: channel mismatch, features " + shape_str(features.shape()) + " vs weight " +
                      shape_str(weight.shape()));
  if (bias.size() != cout) throw TensorError("sparse_conv: bias size mismatch");
  const std::size_t n_out = rb.output->size();
  const auto ci = static_cast<Eigen::Index>(cin), co = static_cast<Eigen::Index>(cout);

  std::vector<T> out(n_out * cout);
  auto bd = bias.data();
  for (std::size_t j = 0; j < n_out; ++j) std::copy(bd.begin(), bd.end(), out.begin() + j * cout);
  auto x = features.data();
  RowMat<T> gathered, product;
  for (std::size_t k = 0; k < offsets; ++k) {
    const auto& ins = rb.in_rows[k];
    const auto& outs = rb.out_rows[k];
    if (ins.empty()) continue;
    const auto n = static_cast<Eigen::Index>(ins.size());
    gathered.resize(n, ci);
    for (Eigen::Index p = 0; p < n; ++p)
      gathered.row(p) = ConstMap<T>(x.data() + static_cast<std::size_t>(ins[p]) * cin, 1, ci);
    product.noalias() = gathered * ConstMap<T>(weight.data().data() + k * cin * cout, ci, co);
    for (Eigen::Index p = 0; p < n; ++p)
      MutMap<T>(out.data() + static_cast<std::size_t>(outs[p]) * cout, 1, co) += product.row(p);
  }

  return Tensor<T>::make(
      "sparse_conv", {n_out, cout}, std::move(out), {features, weight, bias},
      [rb_in = rb.in_rows, rb_out = rb.out_rows, cin, cout, n_out](
          const Node<T>& self, std::span<const T> g, std::vector<std::span<T>>& pg) {
        const auto ci = static_cast<Eigen::Index>(cin), co = static_cast<Eigen::Index>(cout);
        const auto& x = self.parents[0]->data;
        const auto& w = self.parents[1]->data;
        RowMat<T> gx, gg;
        for (std::size_t k = 0; k < rb_in.size(); ++k) {
          const auto& ins = rb_in[k];
          const auto& outs = rb_out[k];
          if (ins.empty()) continue;
          const auto n = static_cast<Eigen::Index>(ins.size());
          gg.resize(n, co);
          for (Eigen::Index p = 0; p < n; ++p)
            gg.row(p) = ConstMap<T>(g.data() + static_cast<std::size_t>(outs[p]) * cout, 1, co);
          if (!pg[1].empty()) {
            gx.resize(n, ci);
            for (Eigen::Index p = 0; p < n; ++p)
              gx.row(p) = ConstMap<T>(x.data() + static_cast<std::size_t>(ins[p]) * cin, 1, ci);
            MutMap<T>(pg[1].data() + k * cin * cout, ci, co).noalias() += gx.transpose() * gg;
          }
          if (!pg[0].empty()) {
            RowMat<T> dx = gg * ConstMap<T>(w.data() + k * cin * cout, ci, co).transpose();
            for (Eigen::Index p = 0; p < n; ++p)
              MutMap<T>(pg[0].data() + static_cast<std::size_t>(ins[p]) * cin, 1, ci) += dx.row(p);
          }
        }
        if (!pg[2].empty())
          for (std::size_t j = 0; j < n_out; ++j)
            for (std::size_t c = 0; c < cout; ++c) pg[2][c] += g[j * cout + c];
      });
}

template <typename T>
std::vector<T> dense_conv_reference(std::span<const T> input, std::size_t cin, std::size_t height, std::size_t width,
                                    std::span<const T> weight, std::span<const T> bias, std::size_t cout,
                                    std::size_t kernel) {
  const auto r = static_cast<std::int64_t>(kernel / 2);
  std::vector<T> out(cout * height * width);
  for (std::size_t co = 0; co < cout; ++co)
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x) {
        T acc = bias[co];
        std::size_t k = 0;
        for (std::int64_t dy = -r; dy <= r; ++dy)
          for (std::int64_t dx = -r; dx <= r; ++dx, ++k) {
            const std::int64_t iy = static_cast<std::int64_t>(y) + dy, ix = static_cast<std::int64_t>(x) + dx;
            if (iy < 0 || ix < 0 || iy >= static_cast<std::int64_t>(height) || ix >= static_cast<std::int64_t>(width))
              continue;
            for (std::size_t c = 0; c < cin; ++c)
              acc += input[(c * height + static_cast<std::size_t>(iy)) * width + static_cast<std::size_t>(ix)] *
                     weight[(k * cin + c) * cout + co];
          }
        out[(co * height + y) * width + x] = acc;
      }
  return out;
}

template <typename T>
Tensor<T> site_norm_train(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, NormStats* stats,
                          T eps) {
  const std::size_t n = x.dim(0), c = x.dim(1);
  if (gain.size() != c || bias.size() != c) throw TensorError("site_norm: gain/bias size mismatch");
  std::vector<double> mu(c, 0.0), var(c, 0.0);
  auto d = x.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) mu[j] += d[i * c + j];
  for (auto& m : mu) m /= std::max<std::size_t>(n, 1);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      const double e = d[i * c + j] - mu[j];
      var[j] += e * e;
    }
  if (stats) {
    stats->count = n;
    stats->mean = mu;
    stats->var.resize(c);
    for (std::size_t j = 0; j < c; ++j) stats->var[j] = n > 1 ? var[j] / static_cast<double>(n - 1) : 0.0;
  }
  std::vector<T> inv_std(c), xhat(n * c), out(n * c);
  auto gd = gain.data();
  auto bd = bias.data();
  for (std::size_t j = 0; j < c; ++j)
    inv_std[j] = static_cast<T>(1.0 / std::sqrt(var[j] / static_cast<double>(std::max<std::size_t>(n, 1)) + eps));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      const std::size_t k = i * c + j;
      xhat[k] = (d[k] - static_cast<T>(mu[j])) * inv_std[j];
      out[k] = xhat[k] * gd[j] + bd[j];
    }
  return Tensor<T>::make(
      "site_norm", x.shape(), std::move(out), {x, gain, bias},
      [n, c, inv_std = std::move(inv_std), xhat = std::move(xhat)](const Node<T>& self, std::span<const T> g,
                                                                    std::vector<std::span<T>>& pg) {
        const auto& gd = self.parents[1]->data;
        std::vector<T> sum_d(c, T(0)), sum_dx(c, T(0));
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < c; ++j) {
            const std::size_t k = i * c + j;
            const T dxh = g[k] * gd[j];
            sum_d[j] += dxh;
            sum_dx[j] += dxh * xhat[k];
            if (!pg[1].empty()) pg[1][j] += g[k] * xhat[k];
            if (!pg[2].empty()) pg[2][j] += g[k];
          }
        if (pg[0].empty()) return;
        const T nn = static_cast<T>(n);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < c; ++j) {
            const std::size_t k = i * c + j;
            pg[0][k] += inv_std[j] / nn * (nn * g[k] * gd[j] - sum_d[j] - xhat[k] * sum_dx[j]);
          }
      });
}

template <typename T>
Tensor<T> site_norm_eval(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                         const Tensor<T>& running_mean, const Tensor<T>& running_var, T eps) {
  const std::size_t c = x.dim(1);
  auto rm = running_mean.data();
  auto rv = running_var.data();
  // Gain and bias stay differentiable: y = (x - m) / s * gain + bias.
  std::vector<T> inv(c), neg_mean(c);
  for (std::size_t j = 0; j < c; ++j) {
    inv[j] = T(1) / std::sqrt(rv[j] + eps);
    neg_mean[j] = -rm[j];
  }
  auto xhat = mul(add(x, Tensor<T>::from({c}, std::move(neg_mean))), Tensor<T>::from({c}, std::move(inv)));
  return add(mul(xhat, gain), bias);
}

template <typename T>
Tensor<T> batch_mean_pool(const Tensor<T>& features, const SparseLayout& layout) {
  const std::size_t n = features.dim(0), c = features.dim(1), batches = layout.batches();
  if (n != layout.size()) throw TensorError("batch_mean_pool: feature rows != sites");
  std::vector<std::size_t> counts(batches, 0);
  for (const Site& s : layout.coords()) ++counts[s.batch];
  std::vector<T> out(batches * c, T(0));
  auto d = features.data();
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t b = layout.coords()[i].batch;
    for (std::size_t j = 0; j < c; ++j) out[b * c + j] += d[i * c + j];
  }
  for (std::size_t b = 0; b < batches; ++b)
    if (counts[b] > 0)
      for (std::size_t j = 0; j < c; ++j) out[b * c + j] /= static_cast<T>(counts[b]);
  std::vector<std::uint32_t> owner(n);
  for (std::size_t i = 0; i < n; ++i) owner[i] = layout.coords()[i].batch;
  return Tensor<T>::make("batch_mean_pool", {batches, c}, std::move(out), {features},
                         [owner = std::move(owner), counts = std::move(counts), c](
                             const Node<T>&, std::span<const T> g, std::vector<std::span<T>>& pg) {
                           for (std::size_t i = 0; i < owner.size(); ++i) {
                             const T inv = T(1) / static_cast<T>(counts[owner[i]]);
                             for (std::size_t j = 0; j < c; ++j) pg[0][i * c + j] += g[owner[i] * c + j] * inv;
                           }
                         });
}

// ---------------------------------------------------------------------------
// Backbone

template <typename T>
typename Backbone<T>::ConvUnit Backbone<T>::make_unit(nn::ParamStore<T>& store, const std::string& name,
                                                      std::size_t cin, std::size_t cout, nn::Rng& rng) {
  ConvUnit u;
  u.cin = cin;
  u.cout = cout;
  const std::size_t taps = config_.kernel * config_.kernel;
  // He init over the full receptive field (taps * cin).
  std::vector<T> w(taps * cin * cout);
  const double s = std::sqrt(2.0 / static_cast<double>(taps * cin));
  for (T& v : w) v = static_cast<T>(s * rng.normal());
  u.weight = store.add(name + ".weight", {taps, cin, cout}, nn::Init::kZeros, rng);
  u.weight.assign(w);
  u.bias = store.add(name + ".bias", {cout}, nn::Init::kZeros, rng);
  u.gain = store.add(name + ".norm.gain", {cout}, nn::Init::kOnes, rng);
  u.beta = store.add(name + ".norm.bias", {cout}, nn::Init::kZeros, rng);
  u.running_mean = store.add_buffer(name + ".norm.running_mean", {cout}, T(0));
  u.running_var = store.add_buffer(name + ".norm.running_var", {cout}, T(1));
  return u;
}

template <typename T>
Backbone<T>::Backbone(nn::ParamStore<T>& store, const BackboneConfig& config, nn::Rng& rng) : config_(config) {
  if (config_.channels.empty()) throw std::invalid_argument("backbone needs at least one stage");
  stem_ = make_unit(store, "backbone.stem.conv", config_.in_channels, config_.channels[0], rng);
  for (std::size_t k = 0; k < config_.channels.size(); ++k) {
    const std::string stage = "backbone.stage" + std::to_string(k + 1);
    const std::size_t c = config_.channels[k];
    if (k > 0) down_.push_back(make_unit(store, stage + ".down", config_.channels[k - 1], c, rng));
    auto a = make_unit(store, stage + ".conv1", c, c, rng);
    auto b = make_unit(store, stage + ".conv2", c, c, rng);
    res_.emplace_back(std::move(a), std::move(b));
  }
}

template <typename T>
Tensor<T> Backbone<T>::run_unit(const ConvUnit& u, const Tensor<T>& x, const Rulebook& rb, bool training,
                                NormUpdates* updates) const {
  auto y = sparse_conv(x, u.weight, u.bias, rb);
  if (training) {
    NormStats stats;
    y = site_norm_train(y, u.gain, u.beta, &stats);
    if (updates) updates->per_layer.push_back(std::move(stats));
  } else {
    y = site_norm_eval(y, u.gain, u.beta, u.running_mean, u.running_var);
  }
  return y;
}

template <typename T>
Tensor<T> Backbone<T>::forward(const SparseTensor<T>& input, bool training, NormUpdates* updates) const {
  if (input.channels() != config_.in_channels)
    throw TensorError("backbone: expected " + std::to_string(config_.in_channels) + " input channels");
  auto layout = input.layout;
  if (layout->size() == 0) return Tensor<T>::zeros({layout->batches(), config_.out_channels()});

  Rulebook rb = build_rulebook(layout, config_.kernel, 1, true);
  auto x = relu(run_unit(stem_, input.features, rb, training, updates));
  for (std::size_t k = 0; k < res_.size(); ++k) {
    if (k > 0) {
      Rulebook down = build_rulebook(layout, config_.kernel, config_.downsample_stride, false);
      layout = down.output;
      x = relu(run_unit(down_[k - 1], x, down, training, updates));
      rb = build_rulebook(layout, config_.kernel, 1, true);
    }
    auto h = relu(run_unit(res_[k].first, x, rb, training, updates));
    h = run_unit(res_[k].second, h, rb, training, updates);
    x = relu(add(h, x));
  }
  return batch_mean_pool(x, *layout);
}

template <typename T>
Tensor<T> Backbone<T>::forward(const VoxelGrid& grid, bool training, NormUpdates* updates) const {
  return forward(sparsify<T>(grid, config_.site_threshold), training, updates);
}

template <typename T>
void Backbone<T>::apply_updates(const NormUpdates& updates) const {
  std::vector<const ConvUnit*> order{&stem_};
  for (std::size_t k = 0; k < res_.size(); ++k) {
    if (k > 0) order.push_back(&down_[k - 1]);
    order.push_back(&res_[k].first);
    order.push_back(&res_[k].second);
  }
  if (updates.per_layer.empty()) return;
  if (updates.per_layer.size() % order.size() != 0) throw std::logic_error("norm update count mismatch");
  const double m = config_.norm_momentum;
  for (std::size_t i = 0; i < updates.per_layer.size(); ++i) {
    const ConvUnit& u = *order[i % order.size()];
    const NormStats& s = updates.per_layer[i];
    if (s.count == 0) continue;
    std::vector<T> rm(u.running_mean.data().begin(), u.running_mean.data().end());
    std::vector<T> rv(u.running_var.data().begin(), u.running_var.data().end());
    for (std::size_t j = 0; j < rm.size(); ++j) {
      rm[j] = static_cast<T>((1 - m) * rm[j] + m * s.mean[j]);
      if (s.count > 1) rv[j] = static_cast<T>((1 - m) * rv[j] + m * s.var[j]);
    }
    u.running_mean.assign(rm);
    u.running_var.assign(rv);
  }
}

template <typename T>
FlopsReport Backbone<T>::flops(const std::shared_ptr<const SparseLayout>& input) const {
  FlopsReport rep;
  const std::size_t taps_r = config_.kernel / 2;
  // In-bounds taps of a dense same-padded conv over the full output grid.
  auto dense_taps = [&](std::size_t in_h, std::size_t in_w, std::size_t stride) {
    const std::size_t oh = (in_h + stride - 1) / stride, ow = (in_w + stride - 1) / stride;
    double taps = 0;
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox)
        for (std::int64_t dy = -static_cast<std::int64_t>(taps_r); dy <= static_cast<std::int64_t>(taps_r); ++dy)
          for (std::int64_t dx = -static_cast<std::int64_t>(taps_r); dx <= static_cast<std::int64_t>(taps_r); ++dx) {
            const std::int64_t y = static_cast<std::int64_t>(oy * stride) + dy;
            const std::int64_t x = static_cast<std::int64_t>(ox * stride) + dx;
            if (y >= 0 && x >= 0 && y < static_cast<std::int64_t>(in_h) && x < static_cast<std::int64_t>(in_w))
              taps += 1;
          }
    return taps * static_cast<double>(input->batches());
  };
  auto count = [&](const Rulebook& rb, const ConvUnit& u, std::size_t in_h, std::size_t in_w) {
    const double cc = static_cast<double>(u.cin * u.cout);
    rep.sparse_macs += static_cast<double>(rb.pair_count()) * cc;
    rep.dense_macs += dense_taps(in_h, in_w, rb.stride) * cc;
  };
  auto layout = input;
  Rulebook rb = build_rulebook(layout, config_.kernel, 1, true);
  count(rb, stem_, layout->height(), layout->width());
  for (std::size_t k = 0; k < res_.size(); ++k) {
    if (k > 0) {
      Rulebook down = build_rulebook(layout, config_.kernel, config_.downsample_stride, false);
      count(down, down_[k - 1], layout->height(), layout->width());
      layout = down.output;
      rb = build_rulebook(layout, config_.kernel, 1, true);
    }
    count(rb, res_[k].first, layout->height(), layout->width());
    count(rb, res_[k].second, layout->height(), layout->width());
  }
  return rep;
}

#define EVSIGN_INSTANTIATE(T)                                                                                  \
  template SparseTensor<T> sparsify<T>(std::span<const float>, std::size_t, std::size_t, std::size_t,          \
                                       std::size_t, float);                                                    \
  template SparseTensor<T> sparsify<T>(const VoxelGrid&, float);                                               \
  template std::vector<T> densify(const SparseTensor<T>&);                                                     \
  template Tensor<T> sparse_conv(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Rulebook&);       \
  template std::vector<T> dense_conv_reference(std::span<const T>, std::size_t, std::size_t, std::size_t,      \
                                               std::span<const T>, std::span<const T>, std::size_t,            \
                                               std::size_t);                                                   \
  template Tensor<T> site_norm_train(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, NormStats*, T);     \
  template Tensor<T> site_norm_eval(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,    \
                                    const Tensor<T>&, T);                                                      \
  template Tensor<T> batch_mean_pool(const Tensor<T>&, const SparseLayout&);                                   \
  template class Backbone<T>;

EVSIGN_INSTANTIATE(float)
EVSIGN_INSTANTIATE(double)

#undef EVSIGN_INSTANTIATE

}  // namespace evsign::sparse

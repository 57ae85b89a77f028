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

#pragma once

// Rulebook-driven sparse 2-D convolution.
//
// A clip is processed as one sparse tensor whose sites carry a batch index
// (the temporal segment), so all segments share one gather/GEMM/scatter pass
// per kernel offset.

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "evsign/event_io.hpp"
#include "evsign/nn.hpp"
#include "evsign/tensor.hpp"

namespace evsign::sparse {

struct Site {
  std::uint32_t batch = 0;
  std::uint32_t y = 0;
  std::uint32_t x = 0;
  friend bool operator==(const Site&, const Site&) = default;
};

class SparseLayout {
 public:
  SparseLayout(std::size_t batches, std::size_t height, std::size_t width, std::vector<Site> coords);

  std::size_t batches() const { return batches_; }
  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t size() const { return coords_.size(); }
  const std::vector<Site>& coords() const { return coords_; }
  // Row of an active site, or -1.
  std::int32_t row(std::size_t batch, std::size_t y, std::size_t x) const {
    return index_[(batch * height_ + y) * width_ + x];
  }

 private:
  std::size_t batches_, height_, width_;
  std::vector<Site> coords_;
  std::vector<std::int32_t> index_;
};

template <typename T>
struct SparseTensor {
  std::shared_ptr<const SparseLayout> layout;
  Tensor<T> features;  // n_active x channels
  std::size_t channels() const { return features.rank() == 2 ? features.dim(1) : 0; }
};

// Active sites are pixels where any bin exceeds `threshold` in magnitude.
// `dense` holds batches x channels x H x W values.
template <typename T>
SparseTensor<T> sparsify(std::span<const float> dense, std::size_t batches, std::size_t channels, std::size_t height,
                         std::size_t width, float threshold = 0.0f);
template <typename T>
SparseTensor<T> sparsify(const VoxelGrid& grid, float threshold = 0.0f);

// batches x channels x H x W, zeros at inactive sites.
template <typename T>
std::vector<T> densify(const SparseTensor<T>& x);

struct Rulebook {
  std::size_t kernel = 3;
  std::size_t stride = 1;
  bool submanifold = true;
  // Per kernel offset (row-major over dy, dx): gather and scatter rows.
  std::vector<std::vector<std::int32_t>> in_rows;
  std::vector<std::vector<std::int32_t>> out_rows;
  std::shared_ptr<const SparseLayout> output;

  std::size_t pair_count() const;
};

// Submanifold: outputs exactly at the input sites. Strided: outputs on the
// stride grid (padding kernel/2) reachable from any active input, ordered by
// (batch, y, x).
Rulebook build_rulebook(const std::shared_ptr<const SparseLayout>& input, std::size_t kernel, std::size_t stride,
                        bool submanifold);

// out[j] = bias + sum over pairs (i, j) of x[i] * weight[offset].
// weight: kernel*kernel x Cin x Cout, bias: Cout.
template <typename T>
Tensor<T> sparse_conv(const Tensor<T>& features, const Tensor<T>& weight, const Tensor<T>& bias,
                      const Rulebook& rulebook);

// Dense same-padding convolution used as an oracle. input: C x H x W.
template <typename T>
std::vector<T> dense_conv_reference(std::span<const T> input, std::size_t cin, std::size_t height, std::size_t width,
                                    std::span<const T> weight, std::span<const T> bias, std::size_t cout,
                                    std::size_t kernel);

// Per-channel normalization over all active sites. Training mode normalizes
// with the batch statistics (and reports them); eval mode uses the running
// statistics.
struct NormStats {
  std::vector<double> mean;
  std::vector<double> var;  // unbiased
  std::size_t count = 0;
};

template <typename T>
Tensor<T> site_norm_train(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, NormStats* stats,
                          T eps = T(1e-5));
template <typename T>
Tensor<T> site_norm_eval(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                         const Tensor<T>& running_mean, const Tensor<T>& running_var, T eps = T(1e-5));

// Mean of site features per batch entry; batches without sites give zeros.
template <typename T>
Tensor<T> batch_mean_pool(const Tensor<T>& features, const SparseLayout& layout);

struct BackboneConfig {
  std::size_t in_channels = 5;
  std::vector<std::size_t> channels{16, 32, 64, 64};
  std::size_t kernel = 3;
  std::size_t downsample_stride = 2;
  float site_threshold = 0.0f;
  double norm_momentum = 0.1;

  std::size_t out_channels() const { return channels.back(); }
};

struct FlopsReport {
  double sparse_macs = 0;
  double dense_macs = 0;
  double ratio() const { return dense_macs > 0 ? sparse_macs / dense_macs : 0.0; }
};

// Collected running-statistic updates, applied after a step in a fixed order.
struct NormUpdates {
  std::vector<NormStats> per_layer;
};

// Stem conv, then one residual pair of submanifold convs per stage, with a
// strided conv opening every stage after the first; each conv is followed by
// site normalization and ReLU. Tokens are the mean over active sites of the
// final stage, one per batch entry.
template <typename T>
class Backbone {
 public:
  Backbone(nn::ParamStore<T>& store, const BackboneConfig& config, nn::Rng& rng);

  // Returns one token per segment (P x C). `updates` is filled in training
  // mode and may be null.
  Tensor<T> forward(const SparseTensor<T>& input, bool training, NormUpdates* updates) const;
  Tensor<T> forward(const VoxelGrid& grid, bool training, NormUpdates* updates) const;

  // Folds batch statistics into the running buffers.
  void apply_updates(const NormUpdates& updates) const;

  FlopsReport flops(const std::shared_ptr<const SparseLayout>& input) const;
  const BackboneConfig& config() const { return config_; }

 private:
  struct ConvUnit {
    Tensor<T> weight, bias, gain, beta, running_mean, running_var;
    std::size_t cin = 0, cout = 0;
  };
  ConvUnit make_unit(nn::ParamStore<T>& store, const std::string& name, std::size_t cin, std::size_t cout,
                     nn::Rng& rng);
  Tensor<T> run_unit(const ConvUnit& unit, const Tensor<T>& x, const Rulebook& rb, bool training,
                     NormUpdates* updates) const;

  BackboneConfig config_;
  ConvUnit stem_;
  std::vector<ConvUnit> down_;                      // stages 2..n
  std::vector<std::pair<ConvUnit, ConvUnit>> res_;  // one pair per stage
};

}  // namespace evsign::sparse

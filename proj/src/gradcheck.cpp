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

#include "evsign/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "evsign/heads.hpp"
#include "evsign/nn.hpp"
#include "evsign/pipeline.hpp"
#include "evsign/sparse_conv.hpp"
#include "evsign/temporal.hpp"

namespace evsign::gradcheck {

namespace {

// Values are drawn in 64-bit and rounded through 32-bit so both precisions
// see identical inputs.
template <typename T>
std::vector<T> randn(nn::Rng& rng, std::size_t n, double scale = 1.0) {
  std::vector<T> out(n);
  for (auto& v : out) v = static_cast<T>(static_cast<float>(scale * rng.normal()));
  return out;
}

template <typename T>
Tensor<T> param(nn::Rng& rng, const Shape& shape, double scale = 1.0) {
  return Tensor<T>::parameter(shape, randn<T>(rng, numel(shape), scale));
}

// Reduces any output to a scalar with fixed random weights, so every output
// coordinate contributes a distinct gradient.
template <typename T>
Tensor<T> probe(const Tensor<T>& out) {
  if (out.rank() == 0) return out;
  nn::Rng rng(0x5eed);
  return sum(mul(out, Tensor<T>::from(out.shape(), randn<T>(rng, out.size()))));
}

template <typename T>
struct Built {
  std::function<Tensor<T>()> f;
  std::vector<Tensor<T>> params;
  std::shared_ptr<const void> keep;  // owns stores and layouts the closure refers to
};

// Random sparse input: `batches` planes of h x w with roughly `density` of
// the sites active.
template <typename T>
sparse::SparseTensor<T> random_sparse(nn::Rng& rng, std::size_t batches, std::size_t channels, std::size_t h,
                                      std::size_t w, double density) {
  std::vector<float> dense(batches * channels * h * w, 0.0f);
  for (std::size_t b = 0; b < batches; ++b)
    for (std::size_t i = 0; i < h * w; ++i) {
      const bool on = rng.uniform() < density;
      for (std::size_t c = 0; c < channels; ++c) {
        const float v = static_cast<float>(rng.normal());
        if (on) dense[(b * channels + c) * h * w + i] = v == 0.0f ? 0.5f : v;
      }
    }
  auto st = sparse::sparsify<T>(dense, batches, channels, h, w);
  st.features = Tensor<T>::parameter(st.features.shape(), std::vector<T>(st.features.data().begin(), st.features.data().end()));
  return st;
}

template <typename T>
using Setup = std::function<Built<T>()>;

struct Case {
  std::string name;
  Setup<double> f64;
  Setup<float> f32;  // empty for primitive-only cases
};

// ---------------------------------------------------------------------------
// Primitive cases.

template <typename T>
Built<T> unary(const std::string& op) {
  nn::Rng rng(11);
  Built<T> b;
  auto x = param<T>(rng, {3, 4});
  if (op == "relu") {
    // Keep every coordinate away from the kink.
    std::vector<T> v(x.data().begin(), x.data().end());
    for (auto& e : v) e = e >= 0 ? e + T(0.1) : e - T(0.1);
    x.assign(v);
  }
  if (op == "log") {
    std::vector<T> v(x.data().begin(), x.data().end());
    for (auto& e : v) e = std::abs(e) + T(0.2);
    x.assign(v);
  }
  b.params = {x};
  b.f = [x, op] {
    if (op == "relu") return probe(relu(x));
    if (op == "exp") return probe(exp(x));
    if (op == "log") return probe(log(x));
    if (op == "softmax0") return probe(softmax(x, 0));
    if (op == "softmax1") return probe(softmax(x, 1));
    if (op == "log_softmax") return probe(log_softmax(x, 1));
    if (op == "mean") return scalar_mul(mean(x), T(3));
    if (op == "sum") return scalar_mul(sum(x), T(0.5));
    if (op == "transpose") return probe(transpose(x));
    if (op == "reshape") return probe(reshape(x, {2, 6}));
    if (op == "slice") return probe(slice(x, 1, 1, 3));
    if (op == "scalar_mul") return probe(scalar_mul(x, T(-1.7)));
    if (op == "max_pool_1d") return probe(max_pool_1d(concat<T>({x, scalar_mul(x, T(0.3))}, 0)));
    if (op == "row_minmax_normalize") return probe(row_minmax_normalize(x));
    if (op == "masked_fill") {
      std::vector<bool> mask(12, false);
      mask[1] = mask[5] = mask[10] = true;
      return probe(masked_fill(x, mask, T(-2)));
    }
    if (op == "gather_2d") {
      const std::vector<std::size_t> rows{0, 2, 1, 2}, cols{3, 0, 1, 0};
      return probe(gather_2d(x, rows, cols));
    }
    throw std::logic_error("unknown unary case " + op);
  };
  return b;
}

template <typename T>
Built<T> binary(const std::string& op) {
  nn::Rng rng(12);
  Built<T> b;
  auto x = param<T>(rng, {3, 4});
  auto y = param<T>(rng, op == "matmul" ? Shape{4, 2} : op == "add_bias" || op == "mul_bias" ? Shape{4} : Shape{3, 4});
  b.params = {x, y};
  b.f = [x, y, op] {
    if (op == "add" || op == "add_bias") return probe(add(x, y));
    if (op == "sub") return probe(sub(x, y));
    if (op == "mul" || op == "mul_bias") return probe(mul(x, y));
    if (op == "matmul") return probe(matmul(x, y));
    if (op == "concat0") return probe(concat<T>({x, y}, 0));
    if (op == "concat1") return probe(concat<T>({x, y}, 1));
    throw std::logic_error("unknown binary case " + op);
  };
  return b;
}

template <typename T>
Built<T> layer_norm_case() {
  nn::Rng rng(13);
  auto x = param<T>(rng, {3, 5}), g = param<T>(rng, {5}), bias = param<T>(rng, {5});
  return {[=] { return probe(layer_norm(x, g, bias, 1)); }, {x, g, bias}, nullptr};
}

template <typename T>
Built<T> linear_case() {
  nn::Rng rng(14);
  auto x = param<T>(rng, {3, 5}), w = param<T>(rng, {5, 2}), bias = param<T>(rng, {2});
  return {[=] { return probe(linear(x, w, bias)); }, {x, w, bias}, nullptr};
}

template <typename T>
Built<T> embedding_case() {
  nn::Rng rng(15);
  auto table = param<T>(rng, {6, 4});
  return {[=] {
            const std::vector<std::int64_t> ids{2, 0, 2, 5};
            return probe(embedding_lookup(table, std::span<const std::int64_t>(ids)));
          },
          {table},
          nullptr};
}

template <typename T>
Built<T> attention_case(bool gated, bool causal) {
  nn::Rng rng(16);
  auto q = param<T>(rng, {3, 4}), k = param<T>(rng, {causal ? 3u : 5u, 4}), v = param<T>(rng, {causal ? 3u : 5u, 4});
  auto gate = param<T>(rng, {3, causal ? 3u : 5u});
  Built<T> b;
  b.params = {q, k, v};
  if (gated) b.params.push_back(gate);
  b.f = [=] {
    nn::AttentionOptions<T> o;
    if (gated) o.score_gate = gate;
    o.causal = causal;
    return probe(nn::attend(q, k, v, 2, o).out);
  };
  return b;
}

template <typename T>
Built<T> sparse_conv_case(bool submanifold) {
  nn::Rng rng(17);
  auto x = random_sparse<T>(rng, 2, 3, 6, 6, 0.4);
  auto rb = std::make_shared<sparse::Rulebook>(sparse::build_rulebook(x.layout, 3, submanifold ? 1 : 2, submanifold));
  auto w = param<T>(rng, {9, 3, 4}, 0.5), bias = param<T>(rng, {4});
  auto feats = x.features;
  return {[=] { return probe(sparse::sparse_conv(feats, w, bias, *rb)); }, {feats, w, bias}, rb};
}

template <typename T>
Built<T> site_norm_case(bool train) {
  nn::Rng rng(18);
  auto x = param<T>(rng, {7, 3}), g = param<T>(rng, {3}), bias = param<T>(rng, {3});
  auto rm = Tensor<T>::from({3}, randn<T>(rng, 3, 0.3));
  std::vector<T> var = randn<T>(rng, 3);
  for (auto& e : var) e = std::abs(e) + T(0.5);
  auto rv = Tensor<T>::from({3}, var);
  if (train) return {[=] { return probe(sparse::site_norm_train(x, g, bias, nullptr)); }, {x, g, bias}, nullptr};
  return {[=] { return probe(sparse::site_norm_eval(x, g, bias, rm, rv)); }, {x, g, bias}, nullptr};
}

template <typename T>
Built<T> mean_pool_case() {
  nn::Rng rng(19);
  auto x = random_sparse<T>(rng, 3, 2, 5, 5, 0.3);
  auto layout = x.layout;
  auto feats = x.features;
  return {[=] { return probe(sparse::batch_mean_pool(feats, *layout)); }, {feats}, layout};
}

// ---------------------------------------------------------------------------
// Composite cases.

template <typename T>
Built<T> ctc_case() {
  nn::Rng rng(20);
  auto logits = param<T>(rng, {7, 5});
  return {[=] {
            const std::vector<std::int64_t> target{1, 3, 3, 2};
            return heads::ctc_loss(log_softmax(logits, 1), target).loss;
          },
          {logits},
          nullptr};
}

template <typename T>
Built<T> cross_entropy_case() {
  nn::Rng rng(21);
  auto logits = param<T>(rng, {4, 6});
  return {[=] {
            const std::vector<std::int64_t> target{4, 2, 5, 1};  // position 1 is padding
            return heads::cross_entropy(logits, target);
          },
          {logits},
          nullptr};
}

template <typename T>
Built<T> backbone_case() {
  auto store = std::make_shared<nn::ParamStore<T>>();
  nn::Rng rng(22);
  sparse::BackboneConfig cfg;
  cfg.in_channels = 2;
  cfg.channels = {4, 6};
  auto bb = std::make_shared<sparse::Backbone<T>>(*store, cfg, rng);
  auto x = random_sparse<T>(rng, 3, 2, 8, 8, 0.3);
  Built<T> b;
  b.params = store->tensors();
  b.params.push_back(x.features);
  b.f = [bb, x] { return probe(bb->forward(x, true, nullptr)); };
  b.keep = std::make_shared<std::pair<decltype(store), decltype(bb)>>(store, bb);
  return b;
}

template <typename T>
Built<T> gata_case() {
  auto store = std::make_shared<nn::ParamStore<T>>();
  nn::Rng rng(23);
  temporal::TemporalConfig cfg;
  cfg.dim = 8;
  cfg.heads = 2;
  cfg.window = 4;
  cfg.sigma = 3.0;
  cfg.ffn_hidden = 12;
  auto model = std::make_shared<temporal::TemporalModel<T>>(*store, cfg, rng);
  auto visual = param<T>(rng, {10, 8});
  Built<T> b;
  b.params = store->tensors();
  b.params.push_back(visual);
  b.f = [model, visual] { return probe(model->forward(visual).out); };
  b.keep = std::make_shared<std::pair<decltype(store), decltype(model)>>(store, model);
  return b;
}

template <typename T>
Built<T> decoder_case() {
  auto store = std::make_shared<nn::ParamStore<T>>();
  nn::Rng rng(24);
  heads::DecoderConfig cfg;
  cfg.dim = 8;
  cfg.heads = 2;
  cfg.ffn_hidden = 12;
  cfg.vocab_size = 9;
  auto dec = std::make_shared<heads::TranslationDecoder<T>>(*store, cfg, rng);
  auto memory = param<T>(rng, {3, 8});
  Built<T> b;
  b.params = store->tensors();
  b.params.push_back(memory);
  b.f = [dec, memory] {
    const std::vector<std::int64_t> words{4, 7, 5};
    const auto [in, target] = heads::teacher_forcing_pair(words);
    return heads::cross_entropy((*dec)(memory, in), target);
  };
  b.keep = std::make_shared<std::pair<decltype(store), decltype(dec)>>(store, dec);
  return b;
}

template <typename T>
Built<T> full_model_case() {
  pipeline::ModelConfig cfg;
  cfg.protocol = pipeline::Protocol::kS2GT;
  cfg.bins = 2;
  cfg.dim = 8;
  cfg.heads = 2;
  cfg.window = 4;
  cfg.sigma = 3.0;
  cfg.ffn_hidden = 12;
  cfg.backbone_channels = {4, 8};
  cfg.decoder_blocks = 4;
  auto model = std::make_shared<pipeline::Model<T>>(cfg, 4, 9, 25);
  nn::Rng rng(26);
  pipeline::ClipData<T> clip;
  clip.id = "probe";
  clip.input = random_sparse<T>(rng, 12, 2, 8, 8, 0.25);
  clip.glosses = {2, 1, 3};
  clip.words = {5, 4, 8, 6};
  Built<T> b;
  b.params = model->store.tensors();
  b.f = [model, clip] { return pipeline::forward_s2gt(*model, clip, {}, true, nullptr).objective(); };
  b.keep = model;
  return b;
}

template <typename T>
Setup<T> primitive_setup(const std::string& name) {
  static const std::vector<std::string> unary_ops{
      "relu", "exp", "log", "softmax0", "softmax1", "log_softmax", "mean", "sum", "transpose", "reshape", "slice",
      "scalar_mul", "max_pool_1d", "row_minmax_normalize", "masked_fill", "gather_2d"};
  if (std::find(unary_ops.begin(), unary_ops.end(), name) != unary_ops.end()) return [name] { return unary<T>(name); };
  if (name == "layer_norm") return layer_norm_case<T>;
  if (name == "linear") return linear_case<T>;
  if (name == "embedding_lookup") return embedding_case<T>;
  if (name == "attend") return [] { return attention_case<T>(false, false); };
  if (name == "attend_gated") return [] { return attention_case<T>(true, false); };
  if (name == "attend_causal") return [] { return attention_case<T>(false, true); };
  if (name == "sparse_conv_submanifold") return [] { return sparse_conv_case<T>(true); };
  if (name == "sparse_conv_strided") return [] { return sparse_conv_case<T>(false); };
  if (name == "site_norm_train") return [] { return site_norm_case<T>(true); };
  if (name == "site_norm_eval") return [] { return site_norm_case<T>(false); };
  if (name == "batch_mean_pool") return mean_pool_case<T>;
  return [name] { return binary<T>(name); };
}

std::vector<Case> all_cases() {
  std::vector<Case> cases;
  for (const char* n :
       {"add", "add_bias", "sub", "mul", "mul_bias", "scalar_mul", "matmul", "transpose", "reshape", "concat0",
        "concat1", "slice", "relu", "softmax0", "softmax1", "log_softmax", "exp", "log", "mean", "sum", "max_pool_1d",
        "embedding_lookup", "layer_norm", "masked_fill", "gather_2d", "row_minmax_normalize", "linear", "attend",
        "attend_gated", "attend_causal", "sparse_conv_submanifold", "sparse_conv_strided", "site_norm_train",
        "site_norm_eval", "batch_mean_pool"})
    cases.push_back({n, primitive_setup<double>(n), {}});
  cases.push_back({"ctc_loss", ctc_case<double>, ctc_case<float>});
  cases.push_back({"cross_entropy", cross_entropy_case<double>, cross_entropy_case<float>});
  cases.push_back({"sparse_conv_stack", backbone_case<double>, backbone_case<float>});
  cases.push_back({"gata_block", gata_case<double>, gata_case<float>});
  cases.push_back({"translation_decoder", decoder_case<double>, decoder_case<float>});
  cases.push_back({"full_model_s2gt", full_model_case<double>, full_model_case<float>});
  return cases;
}

}  // namespace

FdOptions primitive_fd_options() { return {1e-6, 1e-8, 0, 0.0}; }
// Composite blocks contain many coordinates whose true gradient is exactly
// zero (biases feeding a normalization, key biases under softmax). There the
// central difference returns pure cancellation noise, so the floor tracks the
// largest gradient of the case: such coordinates must agree to within
// tolerance * scale_floor * max|grad| in absolute terms.
FdOptions composite64_fd_options() { return {1e-6, 1e-8, 8, 1e-5}; }
// float32 backward carries rounding of about 1e-6 of the gradient scale.
FdOptions composite32_fd_options() { return {1e-6, 1e-8, 8, 1e-3}; }

FdReport mixed_precision_check(const std::function<Tensor<float>()>& f32, const std::vector<Tensor<float>>& p32,
                               const std::function<Tensor<double>()>& f64, const std::vector<Tensor<double>>& p64,
                               const FdOptions& options) {
  if (p32.size() != p64.size()) throw TensorError("mixed_precision_check: parameter lists differ in length");
  for (std::size_t i = 0; i < p32.size(); ++i) {
    if (p32[i].shape() != p64[i].shape()) throw TensorError("mixed_precision_check: parameter shapes differ");
    const auto src = p32[i].data();
    p64[i].assign(std::vector<double>(src.begin(), src.end()));
  }
  const auto loss = f32();
  if (!std::isfinite(loss.item())) throw TensorError("mixed_precision_check: f is not finite");
  const auto grads = backward(loss);
  std::vector<double> analytic, numeric;
  for (std::size_t pi = 0; pi < p64.size(); ++pi) {
    const auto& p = p64[pi];
    const auto g = grads.of(p32[pi]);
    for (const std::size_t i : fd_coords(p.size(), options)) {
      const double original = p.at(i);
      {
        NoGradGuard guard;
        numeric.push_back(fd_derivative(
            [&](double x) {
              p.set(i, x);
              return f64().item();
            },
            original, options));
        p.set(i, original);
      }
      analytic.push_back(g.empty() ? 0.0 : static_cast<double>(g[i]));
    }
  }
  return fd_score(analytic, numeric, options);
}

std::vector<CaseResult> run_all(const SuiteOptions& options) {
  std::vector<CaseResult> out;
  for (const auto& c : all_cases()) {
    if (!options.filter.empty() && c.name.find(options.filter) == std::string::npos) continue;
    const bool composite = static_cast<bool>(c.f32);
    {
      const auto b = c.f64();
      const auto rep = finite_diff_check<double>(b.f, b.params, composite ? composite64_fd_options()
                                                                            : primitive_fd_options());
      CaseResult r{composite ? "composite" : "primitive", c.name, 64, rep.max_rel_err, rep.max_abs_err,
                   composite ? options.tol.composite64 : options.tol.primitive, rep.coords_checked,
                   rep.worst_analytic, rep.worst_numeric, rep.max_abs_grad, false};
      r.passed = r.max_rel_err < r.tolerance;
      out.push_back(r);
    }
    if (composite) {
      const auto b32 = c.f32();
      const auto b64 = c.f64();
      const auto rep = mixed_precision_check(b32.f, b32.params, b64.f, b64.params, composite32_fd_options());
      CaseResult r{"composite", c.name, 32, rep.max_rel_err, rep.max_abs_err, options.tol.composite32,
                   rep.coords_checked, rep.worst_analytic, rep.worst_numeric, rep.max_abs_grad, false};
      r.passed = r.max_rel_err < r.tolerance;
      out.push_back(r);
    }
  }
  return out;
}

bool all_passed(const std::vector<CaseResult>& results) {
  return !results.empty() && std::all_of(results.begin(), results.end(), [](const auto& r) { return r.passed; });
}

nlohmann::json to_json(const std::vector<CaseResult>& results) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : results)
    arr.push_back({{"suite", r.suite},
                   {"name", r.name},
                   {"bits", r.bits},
                   {"max_rel_err", r.max_rel_err},
                   {"max_abs_err", r.max_abs_err},
                   {"tolerance", r.tolerance},
                   {"coords", r.coords},
                   {"worst_analytic", r.worst_analytic},
                   {"worst_numeric", r.worst_numeric},
                   {"max_abs_grad", r.max_abs_grad},
                   {"passed", r.passed}});
  return {{"cases", arr}, {"all_passed", all_passed(results)}};
}

}  // namespace evsign::gradcheck

#pragma once

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "jat/model.hpp"
#include "jat/rng.hpp"

namespace jat::testutil {

// Small vocabulary over synthetic token names, enough for hand-built inputs.
inline Vocabulary tiny_vocab(std::size_t max_len, std::size_t extra_tokens = 12) {
  std::vector<std::string> tokens;
  for (std::size_t i = 0; i < extra_tokens; ++i) tokens.push_back("tok" + std::to_string(i));
  return Vocabulary(std::move(tokens), max_len);
}

inline ModelConfig tiny_model_config(int max_len, int vocab_size, std::uint64_t seed = 1) {
  ModelConfig cfg;
  cfg.num_layers = 2;
  cfg.d_model = 16;
  cfg.num_heads = 2;
  cfg.d_ff = 32;
  cfg.d_f = 8;
  cfg.max_len = max_len;
  cfg.vocab_size = vocab_size;
  cfg.seed = seed;
  return cfg;
}

// Hand-built encoded function: CLS, a few regular tokens, one jump pair.
inline EncodedFunction tiny_encoded(const Vocabulary& vocab, std::size_t max_len,
                                    std::uint64_t seed = 3, int real_tokens = 9) {
  EncodedFunction ef;
  ef.ids.assign(max_len, Vocabulary::Pad);
  ef.ids[0] = Vocabulary::Cls;
  Rng rng(seed);
  const std::int32_t first_regular =
      Vocabulary::kNumSpecials + static_cast<std::int32_t>(max_len);
  const std::int32_t regular_count = static_cast<std::int32_t>(vocab.size()) - first_regular;
  for (int p = 1; p <= real_tokens; ++p)
    ef.ids[static_cast<std::size_t>(p)] =
        first_regular + static_cast<std::int32_t>(rng.below(static_cast<std::uint64_t>(regular_count)));
  ef.length = real_tokens + 1;
  // Jump at position 2 targeting position 5.
  if (real_tokens >= 5) {
    ef.ids[2] = vocab.jump_id(5);
    ef.jump_pairs.emplace_back(2, 5);
  }
  ef.identity = FunctionRef{"p", "b", "f" + std::to_string(seed), OptLevel::O0};
  return ef;
}

// Central finite differences over every coefficient of every tensor.
// Returns the maximum relative error against the analytic gradients. The
// denominator carries a 1e-5 absolute floor: components below it are smaller
// than the O(h^2) truncation error of the difference quotient itself and are
// compared absolutely.
template <class LossFn>
double max_grad_relative_error(ModelParamsT<double>& params, LossFn&& loss_fn, double h) {
  GradientsT<double> grads = zero_like(params);
  loss_fn(params, &grads);

  std::vector<MatT<double>*> grad_tensors;
  for_each_tensor(grads, [&](const std::string&, MatT<double>& m) { grad_tensors.push_back(&m); });

  double max_rel = 0.0;
  std::size_t ti = 0;
  for_each_tensor(params, [&](const std::string&, MatT<double>& w) {
    MatT<double>& g = *grad_tensors[ti++];
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      const double saved = w.data()[i];
      w.data()[i] = saved + h;
      const double up = loss_fn(params, nullptr);
      w.data()[i] = saved - h;
      const double down = loss_fn(params, nullptr);
      w.data()[i] = saved;
      const double numeric = (up - down) / (2 * h);
      const double analytic = g.data()[i];
      const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-5});
      max_rel = std::max(max_rel, std::abs(numeric - analytic) / denom);
    }
  });
  return max_rel;
}

inline std::filesystem::path temp_dir(const std::string& tag) {
  const auto dir = std::filesystem::temp_directory_path() /
                   ("jat_test_" + tag + "_" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace jat::testutil

// Copyright 2026 xmodal authors
// Licensed under the Apache License, Version 2.0

#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "xmodal/autograd.hpp"
#include "xmodal/binio.hpp"
#include "xmodal/config.hpp"
#include "xmodal/error.hpp"
#include "xmodal/manifest.hpp"
#include "xmodal/matrix.hpp"

namespace xmodal {

/// Multi-layer frame features for one utterance: l matrices of shape (k, D).
template <typename Real>
struct FeatureStack {
  std::vector<Matrix<Real>> layers;
  int frame_rate = 50;

  std::size_t layer_count() const { return layers.size(); }
  std::size_t frame_count() const { return layers.empty() ? 0 : layers.front().rows(); }
  std::size_t feature_dim() const { return layers.empty() ? 0 : layers.front().cols(); }

  void validate() const {
    if (layers.empty()) throw DimensionError("FeatureStack: no layers");
    for (std::size_t h = 0; h < layers.size(); ++h) {
      if (!layers[h].same_shape(layers.front()) || layers[h].rows() < 1 ||
          layers[h].cols() < 1) {
        throw DimensionError("FeatureStack: layer " + std::to_string(h) +
                             " has shape " + layers[h].shape_str());
      }
      if (!layers[h].all_finite()) {
        throw ValidationError("FeatureStack: non-finite entry in layer " + std::to_string(h));
      }
    }
  }
};

/// Raw (unnormalized) layer-weight vectors; the softmax-normalized view is
/// what enters the weighted sum, so stored weights are scale-free.
template <typename Real>
struct LayerWeights {
  Var<Real> shared;                             // used when !language_aware
  std::map<LanguageId, Var<Real>> per_language; // used when language_aware

  static LayerWeights zeros(const RunConfig& cfg) {
    LayerWeights w;
    if (cfg.language_aware) {
      for (const auto& lang : cfg.language_set) {
        w.per_language.emplace(lang,
            Var<Real>::leaf(Matrix<Real>(1, cfg.layer_count, Real(0)), true));
      }
    } else {
      w.shared = Var<Real>::leaf(Matrix<Real>(1, cfg.layer_count, Real(0)), true);
    }
    return w;
  }
};

/// Softmax over the raw weights: positive, sums to 1, invariant to adding a
/// constant to every entry.
template <typename Real>
std::vector<Real> normalize_layer_weights(const std::vector<Real>& raw) {
  if (raw.empty()) throw DimensionError("normalize_layer_weights: empty vector");
  auto v = Var<Real>::constant(Matrix<Real>::row(raw));
  auto sm = softmax_rows(v);
  return sm.value().storage();
}

/// Picks the raw weight vector for a language and returns its normalized
/// (softmax) view as a graph node, so gradients reach the raw weights.
template <typename Real>
Var<Real> select_weights(const LayerWeights<Real>& weights, const LanguageId& language,
                         bool language_aware) {
  if (language_aware) {
    auto it = weights.per_language.find(language);
    if (it == weights.per_language.end()) {
      throw ValidationError("select_weights: no layer weights for language '" +
                            language.code + "'");
    }
    return softmax_rows(it->second);
  }
  if (!weights.shared.valid()) {
    throw ValidationError("select_weights: shared layer weights not initialized");
  }
  return softmax_rows(weights.shared);
}

/// frames[t] = sum_h weights[h] * stack[h][t].
template <typename Real>
Matrix<Real> aggregate_layers(const FeatureStack<Real>& stack,
                              const std::vector<Real>& weights) {
  if (weights.size() != stack.layer_count()) {
    throw DimensionError("aggregate_layers: " + std::to_string(weights.size()) +
                         " weights for " + std::to_string(stack.layer_count()) + " layers");
  }
  std::vector<Var<Real>> mats;
  for (const auto& layer : stack.layers) mats.push_back(Var<Real>::constant(layer));
  auto out = linear_combination(Var<Real>::constant(Matrix<Real>::row(weights)), mats);
  return out.value();
}

template <typename Real>
struct PaddedFrames {
  Matrix<Real> frames;             // exactly max_frames rows
  std::vector<std::uint8_t> mask;  // true for real frames, false for padding
};

inline std::vector<std::uint8_t> make_frame_mask(std::size_t frame_count,
                                                 std::size_t max_frames) {
  std::vector<std::uint8_t> mask(max_frames, 0);
  for (std::size_t t = 0; t < std::min(frame_count, max_frames); ++t) mask[t] = 1;
  return mask;
}

/// Zero-pads or truncates to exactly max_frames rows and records which rows
/// are real. Idempotent.
template <typename Real>
PaddedFrames<Real> pad_or_truncate(const Matrix<Real>& frames, std::size_t max_frames) {
  if (max_frames < 1) throw DimensionError("pad_or_truncate: max_frames must be >= 1");
  PaddedFrames<Real> out;
  out.frames = pad_rows(Var<Real>::constant(frames), max_frames).value();
  out.mask = make_frame_mask(frames.rows(), max_frames);
  return out;
}

// ---------------------------------------------------------------------------
// Feature providers
// ---------------------------------------------------------------------------

enum class ProviderKind { precomputed_file, synthetic_deterministic };

/// Stand-in for the frozen pretrained speech encoder: maps an utterance_ref
/// to an (l, k, D) stack. Frozen providers are pure functions of the ref.
template <typename Real>
class FeatureProvider {
 public:
  virtual ~FeatureProvider() = default;
  virtual ProviderKind kind() const = 0;
  virtual bool trainable() const { return false; }
  virtual int layer_count() const = 0;
  virtual int feature_dim() const = 0;

  virtual FeatureStack<Real> features(const std::string& utterance_ref) = 0;

  /// Graph view of the stack; frozen providers return constant leaves.
  virtual std::vector<Var<Real>> feature_vars(const std::string& utterance_ref) {
    FeatureStack<Real> stack = features(utterance_ref);
    std::vector<Var<Real>> vars;
    vars.reserve(stack.layers.size());
    for (auto& layer : stack.layers) vars.push_back(Var<Real>::constant(std::move(layer)));
    return vars;
  }

  /// Learnable provider parameters; empty for frozen providers.
  virtual std::vector<std::pair<std::string, Var<Real>>> trainable_params() { return {}; }
};

/// Reads one XMFS file per utterance, relative to the manifest directory.
/// Always frozen.
template <typename Real>
class PrecomputedFileProvider final : public FeatureProvider<Real> {
 public:
  PrecomputedFileProvider(std::filesystem::path root, int layer_count, int feature_dim,
                          int frame_rate)
      : root_(std::move(root)), layer_count_(layer_count), feature_dim_(feature_dim),
        frame_rate_(frame_rate) {}

  ProviderKind kind() const override { return ProviderKind::precomputed_file; }
  int layer_count() const override { return layer_count_; }
  int feature_dim() const override { return feature_dim_; }

  FeatureStack<Real> features(const std::string& utterance_ref) override {
    if (is_synthetic_ref(utterance_ref)) {
      throw IoError("precomputed provider cannot resolve synthetic ref: " + utterance_ref);
    }
    const auto path = resolve_ref(root_, utterance_ref);
    FeatureFileHeader header;
    std::vector<Matrix<float>> raw = read_feature_file(path.string(), &header);
    if (static_cast<int>(header.layer_count) != layer_count_ ||
        static_cast<int>(header.feature_dim) != feature_dim_) {
      throw FormatError(path.string() + ": stored shape (l=" +
                        std::to_string(header.layer_count) + ", D=" +
                        std::to_string(header.feature_dim) +
                        ") does not match provider (l=" + std::to_string(layer_count_) +
                        ", D=" + std::to_string(feature_dim_) + ")");
    }
    FeatureStack<Real> stack;
    stack.frame_rate = frame_rate_;
    for (auto& layer : raw) {
      if constexpr (std::is_same_v<Real, float>) {
        stack.layers.push_back(std::move(layer));
      } else {
        stack.layers.push_back(layer.template cast<Real>());
      }
    }
    stack.validate();
    return stack;
  }

 private:
  std::filesystem::path root_;
  int layer_count_;
  int feature_dim_;
  int frame_rate_;
};

}  // namespace xmodal

// Copyright 2026 xmodal authors
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "xmodal/autograd.hpp"
#include "xmodal/config.hpp"
#include "xmodal/error.hpp"
#include "xmodal/features.hpp"
#include "xmodal/rng.hpp"

namespace xmodal {

/// Parameters of the trainable speech encoder: a [CLS] token (plus one
/// [LangID] token per language when language-aware), a small pre-norm
/// transformer stack, and an affine projection into the target space.
template <typename Real>
struct EncoderParams {
  struct Layer {
    Var<Real> ln1_gain, ln1_bias;
    Var<Real> wq, bq, wk, bk, wv, bv, wo, bo;
    Var<Real> ln2_gain, ln2_bias;
    Var<Real> ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  };

  int num_layers = 1;
  int num_heads = 8;
  int model_dim = 0;
  int embed_dim = 0;

  Var<Real> cls;                             // 1 x D
  std::map<LanguageId, Var<Real>> langid;    // present iff language_aware
  std::vector<Layer> layers;
  Var<Real> final_gain, final_bias;          // pre-norm stacks end with a norm
  Var<Real> proj_weight;                     // D x E
  Var<Real> proj_bias;                       // 1 x E

  /// Visits every parameter in a fixed order; the order defines checkpoint
  /// and optimizer traversal.
  void for_each(const std::function<void(const std::string&, Var<Real>&)>& fn) {
    fn("encoder.cls", cls);
    for (auto& [lang, tok] : langid) fn("encoder.langid." + lang.code, tok);
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const std::string p = "encoder.layer" + std::to_string(i) + ".";
      auto& L = layers[i];
      fn(p + "ln1.gain", L.ln1_gain);
      fn(p + "ln1.bias", L.ln1_bias);
      fn(p + "attn.wq", L.wq);
      fn(p + "attn.bq", L.bq);
      fn(p + "attn.wk", L.wk);
      fn(p + "attn.bk", L.bk);
      fn(p + "attn.wv", L.wv);
      fn(p + "attn.bv", L.bv);
      fn(p + "attn.wo", L.wo);
      fn(p + "attn.bo", L.bo);
      fn(p + "ln2.gain", L.ln2_gain);
      fn(p + "ln2.bias", L.ln2_bias);
      fn(p + "ffn.w1", L.ffn_w1);
      fn(p + "ffn.b1", L.ffn_b1);
      fn(p + "ffn.w2", L.ffn_w2);
      fn(p + "ffn.b2", L.ffn_b2);
    }
    fn("encoder.final_norm.gain", final_gain);
    fn("encoder.final_norm.bias", final_bias);
    fn("encoder.proj.weight", proj_weight);
    fn("encoder.proj.bias", proj_bias);
  }
};

namespace detail {

template <typename Real>
Matrix<Real> gaussian_matrix(std::size_t rows, std::size_t cols, Real stddev, SeededRng& rng) {
  Matrix<Real> m(rows, cols);
  for (auto& v : m.storage()) v = stddev * static_cast<Real>(rng.normal());
  return m;
}

}  // namespace detail

/// Gaussian(0, 0.02) init for tokens, attention, FFN, and projection; unit
/// gains and zero biases for the norms. Deterministic given the rng stream.
template <typename Real>
EncoderParams<Real> init_params(const RunConfig& config, SeededRng rng) {
  const int D = config.feature_dim;
  const int E = config.embedding_dim;
  if (D < 1) throw ConfigError("init_params: feature_dim must be set");
  if (D % config.num_heads != 0) {
    throw ConfigError("init_params: feature_dim " + std::to_string(D) +
                      " not divisible by num_heads " + std::to_string(config.num_heads));
  }
  const Real sd = Real(0.02);
  EncoderParams<Real> p;
  p.num_layers = config.num_layers;
  p.num_heads = config.num_heads;
  p.model_dim = D;
  p.embed_dim = E;

  auto leaf = [](Matrix<Real> m) { return Var<Real>::leaf(std::move(m), true); };
  p.cls = leaf(detail::gaussian_matrix<Real>(1, D, sd, rng));
  if (config.language_aware) {
    for (const auto& lang : config.language_set) {
      p.langid.emplace(lang, leaf(detail::gaussian_matrix<Real>(1, D, sd, rng)));
    }
  }
  const int ffn_dim = 4 * D;
  for (int i = 0; i < config.num_layers; ++i) {
    typename EncoderParams<Real>::Layer L;
    L.ln1_gain = leaf(Matrix<Real>(1, D, Real(1)));
    L.ln1_bias = leaf(Matrix<Real>(1, D, Real(0)));
    L.wq = leaf(detail::gaussian_matrix<Real>(D, D, sd, rng));
    L.bq = leaf(Matrix<Real>(1, D, Real(0)));
    L.wk = leaf(detail::gaussian_matrix<Real>(D, D, sd, rng));
    L.bk = leaf(Matrix<Real>(1, D, Real(0)));
    L.wv = leaf(detail::gaussian_matrix<Real>(D, D, sd, rng));
    L.bv = leaf(Matrix<Real>(1, D, Real(0)));
    L.wo = leaf(detail::gaussian_matrix<Real>(D, D, sd, rng));
    L.bo = leaf(Matrix<Real>(1, D, Real(0)));
    L.ln2_gain = leaf(Matrix<Real>(1, D, Real(1)));
    L.ln2_bias = leaf(Matrix<Real>(1, D, Real(0)));
    L.ffn_w1 = leaf(detail::gaussian_matrix<Real>(D, ffn_dim, sd, rng));
    L.ffn_b1 = leaf(Matrix<Real>(1, ffn_dim, Real(0)));
    L.ffn_w2 = leaf(detail::gaussian_matrix<Real>(ffn_dim, D, sd, rng));
    L.ffn_b2 = leaf(Matrix<Real>(1, D, Real(0)));
    p.layers.push_back(std::move(L));
  }
  p.final_gain = leaf(Matrix<Real>(1, D, Real(1)));
  p.final_bias = leaf(Matrix<Real>(1, D, Real(0)));
  p.proj_weight = leaf(detail::gaussian_matrix<Real>(D, E, sd, rng));
  p.proj_bias = leaf(Matrix<Real>(1, E, Real(0)));
  return p;
}

/// Fixed sinusoidal positional encodings for frame tokens.
template <typename Real>
Matrix<Real> sinusoidal_positions(std::size_t n_positions, std::size_t dim) {
  Matrix<Real> pe(n_positions, dim);
  for (std::size_t t = 0; t < n_positions; ++t) {
    for (std::size_t d = 0; d < dim; ++d) {
      const double exponent = static_cast<double>(2 * (d / 2)) / static_cast<double>(dim);
      const double rate = std::pow(10000.0, exponent);
      const double angle = static_cast<double>(t) / rate;
      pe.at(t, d) = static_cast<Real>((d % 2 == 0) ? std::sin(angle) : std::cos(angle));
    }
  }
  return pe;
}

template <typename Real>
struct TokenSequence {
  Var<Real> tokens;                // (k + 1 [+1], D)
  std::vector<std::uint8_t> mask;  // attention validity per token
  std::size_t prefix = 1;          // number of prepended control tokens
};

/// Prepends [CLS] (and [LangID] right after it when language-aware) to the
/// frame sequence and extends the validity mask accordingly.
template <typename Real>
TokenSequence<Real> prepend_tokens(const Var<Real>& frames,
                                   const std::vector<std::uint8_t>& frame_mask,
                                   const LanguageId& language,
                                   EncoderParams<Real>& params,
                                   bool language_aware) {
  if (frame_mask.size() != frames.value().rows()) {
    throw DimensionError("prepend_tokens: mask length " + std::to_string(frame_mask.size()) +
                         " != frame count " + std::to_string(frames.value().rows()));
  }
  if (frames.value().cols() != static_cast<std::size_t>(params.model_dim)) {
    throw DimensionError("prepend_tokens: frame dim " + std::to_string(frames.value().cols()) +
                         " != model dim " + std::to_string(params.model_dim));
  }
  TokenSequence<Real> out;
  std::vector<Var<Real>> parts{params.cls};
  if (language_aware) {
    auto it = params.langid.find(language);
    if (it == params.langid.end()) {
      throw ValidationError("prepend_tokens: no [LangID] token for language '" +
                            language.code + "'");
    }
    parts.push_back(it->second);
  }
  parts.push_back(frames);
  out.tokens = concat_rows(parts);
  out.prefix = language_aware ? 2 : 1;
  out.mask.assign(out.prefix, 1);
  out.mask.insert(out.mask.end(), frame_mask.begin(), frame_mask.end());
  return out;
}

namespace detail {

template <typename Real>
Var<Real> attention_block(const Var<Real>& x, const std::vector<std::uint8_t>& mask,
                          typename EncoderParams<Real>::Layer& L, int num_heads) {
  const std::size_t D = x.value().cols();
  const std::size_t dh = D / num_heads;
  auto q = add_rowvec(matmul(x, L.wq), L.bq);
  auto k = add_rowvec(matmul(x, L.wk), L.bk);
  auto v = add_rowvec(matmul(x, L.wv), L.bv);
  std::vector<Var<Real>> heads;
  for (int h = 0; h < num_heads; ++h) {
    auto qh = slice_cols(q, h * dh, dh);
    auto kh = slice_cols(k, h * dh, dh);
    auto vh = slice_cols(v, h * dh, dh);
    auto scores = scale(matmul_nt(qh, kh), Real(1) / static_cast<Real>(std::sqrt(double(dh))));
    auto attn = masked_softmax_rows(scores, mask);
    heads.push_back(matmul(attn, vh));
  }
  auto ctx = concat_cols(heads);
  return add_rowvec(matmul(ctx, L.wo), L.bo);
}

template <typename Real>
Var<Real> ffn_block(const Var<Real>& x, typename EncoderParams<Real>::Layer& L) {
  auto h = gelu(add_rowvec(matmul(x, L.ffn_w1), L.ffn_b1));
  return add_rowvec(matmul(h, L.ffn_w2), L.ffn_b2);
}

}  // namespace detail

/// Pre-norm transformer over the token sequence; padding positions are
/// excluded from attention via the key mask.
template <typename Real>
Var<Real> transformer_forward(const TokenSequence<Real>& seq, EncoderParams<Real>& params) {
  Var<Real> x = seq.tokens;
  for (auto& L : params.layers) {
    auto normed = layer_norm(x, L.ln1_gain, L.ln1_bias);
    x = add(x, detail::attention_block<Real>(normed, seq.mask, L, params.num_heads));
    auto normed2 = layer_norm(x, L.ln2_gain, L.ln2_bias);
    x = add(x, detail::ffn_block<Real>(normed2, L));
  }
  return layer_norm(x, params.final_gain, params.final_bias);
}

/// Graph forward: layer selection -> weighted layer sum -> pad/truncate ->
/// positional encoding -> [CLS]/[LangID] -> transformer -> projection of the
/// [CLS] state. Returns a 1xE node.
template <typename Real>
Var<Real> encode_utterance_graph(const std::vector<Var<Real>>& stack_layers,
                                 const LanguageId& language,
                                 LayerWeights<Real>& weights,
                                 EncoderParams<Real>& params,
                                 const RunConfig& config) {
  if (stack_layers.empty() ||
      stack_layers.size() != static_cast<std::size_t>(config.layer_count)) {
    throw DimensionError("encode_utterance: stack has " +
                         std::to_string(stack_layers.size()) + " layers, config expects " +
                         std::to_string(config.layer_count));
  }
  const std::size_t k = stack_layers.front().value().rows();
  const std::size_t D = stack_layers.front().value().cols();
  if (D != static_cast<std::size_t>(params.model_dim)) {
    throw DimensionError("encode_utterance: feature dim " + std::to_string(D) +
                         " != encoder model dim " + std::to_string(params.model_dim));
  }
  if (config.language_aware && !config.has_language(language)) {
    throw ValidationError("encode_utterance: language '" + language.code +
                          "' not in configured set");
  }

  auto w = select_weights(weights, language, config.language_aware);
  auto frames = linear_combination(w, stack_layers);

  const std::size_t max_frames = static_cast<std::size_t>(config.max_frames());
  auto padded = pad_rows(frames, max_frames);
  auto frame_mask = make_frame_mask(k, max_frames);

  auto pos = sinusoidal_positions<Real>(max_frames, D);
  auto with_pos = add_const(padded, pos);

  auto seq = prepend_tokens(with_pos, frame_mask, language, params, config.language_aware);
  auto hidden = transformer_forward(seq, params);
  auto cls_state = slice_rows(hidden, 0, 1);
  return add_rowvec(matmul(cls_state, params.proj_weight), params.proj_bias);
}

/// Value-level convenience wrapper over the graph forward.
template <typename Real>
std::vector<Real> encode_utterance(const FeatureStack<Real>& stack,
                                   const LanguageId& language,
                                   LayerWeights<Real>& weights,
                                   EncoderParams<Real>& params,
                                   const RunConfig& config) {
  std::vector<Var<Real>> vars;
  vars.reserve(stack.layers.size());
  for (const auto& layer : stack.layers) vars.push_back(Var<Real>::constant(layer));
  auto out = encode_utterance_graph(vars, language, weights, params, config);
  return out.value().storage();
}

}  // namespace xmodal

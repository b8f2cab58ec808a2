// Copyright 2026 xmodal authors
// Licensed under the Apache License, Version 2.0

#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "xmodal/error.hpp"

namespace xmodal {

struct LanguageId {
  std::string code;

  bool operator==(const LanguageId&) const = default;
  auto operator<=>(const LanguageId&) const = default;
};

enum class Split { train, dev, test };

enum class BatchStrategy { monolingual, multilingual };

enum class SimilarityKind { cosine, dot };

enum class XllMissing { skip, error };

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& key, const std::string& s) {
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected a number, got '" + s + "'");
  }
}

inline long long parse_int(const std::string& key, const std::string& s) {
  try {
    std::size_t pos = 0;
    long long v = std::stoll(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected an integer, got '" + s + "'");
  }
}

inline bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError("config key '" + key + "': expected a boolean, got '" + s + "'");
}

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  std::stringstream ss(s);
  while (std::getline(ss, cur, ',')) {
    cur = trim(cur);
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

}  // namespace detail

inline std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::dev: return "dev";
    case Split::test: return "test";
  }
  return "?";
}

inline Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "dev") return Split::dev;
  if (s == "test") return Split::test;
  throw ValidationError("unknown split '" + s + "' (expected train/dev/test)");
}

/// Fully resolved run configuration. Defaults follow the training recipe
/// this toolkit targets at desk scale; every field is overridable.
struct RunConfig {
  std::vector<LanguageId> language_set;
  int embedding_dim = 768;
  int layer_count = 0;  // required
  int feature_dim = 0;  // required
  int frame_rate = 50;
  double max_seconds = 15.0;
  double margin = 0.001;
  int batch_size = 32;
  BatchStrategy batch_strategy = BatchStrategy::multilingual;
  bool language_aware = false;
  bool use_xll = false;
  bool trainable_extractor = false;
  double peak_lr = 0.001;
  int epochs = 10;
  long long seed = 0;
  int num_layers = 1;
  int num_heads = 8;
  SimilarityKind similarity = SimilarityKind::cosine;
  double warmup_fraction = 0.1;
  double grad_clip = 1.0;
  bool drop_last = false;
  XllMissing xll_missing = XllMissing::skip;

  int max_frames() const {
    const double f = frame_rate * max_seconds;
    return static_cast<int>(std::llround(f));
  }

  bool has_language(const LanguageId& lang) const {
    return std::find(language_set.begin(), language_set.end(), lang) !=
           language_set.end();
  }

  std::map<std::string, std::string> to_map() const {
    std::map<std::string, std::string> m;
    std::string langs;
    for (std::size_t i = 0; i < language_set.size(); ++i) {
      if (i) langs += ",";
      langs += language_set[i].code;
    }
    m["language_set"] = langs;
    m["embedding_dim"] = std::to_string(embedding_dim);
    m["layer_count"] = std::to_string(layer_count);
    m["feature_dim"] = std::to_string(feature_dim);
    m["frame_rate"] = std::to_string(frame_rate);
    m["max_seconds"] = detail::format_double(max_seconds);
    m["margin"] = detail::format_double(margin);
    m["batch_size"] = std::to_string(batch_size);
    m["batch_strategy"] =
        batch_strategy == BatchStrategy::monolingual ? "monolingual" : "multilingual";
    m["language_aware"] = language_aware ? "true" : "false";
    m["use_xll"] = use_xll ? "true" : "false";
    m["trainable_extractor"] = trainable_extractor ? "true" : "false";
    m["peak_lr"] = detail::format_double(peak_lr);
    m["epochs"] = std::to_string(epochs);
    m["seed"] = std::to_string(seed);
    m["num_layers"] = std::to_string(num_layers);
    m["num_heads"] = std::to_string(num_heads);
    m["similarity"] = similarity == SimilarityKind::cosine ? "cosine" : "dot";
    m["warmup_fraction"] = detail::format_double(warmup_fraction);
    m["grad_clip"] = detail::format_double(grad_clip);
    m["drop_last"] = drop_last ? "true" : "false";
    m["xll_missing"] = xll_missing == XllMissing::skip ? "skip" : "error";
    return m;
  }
};

/// Builds a RunConfig from a raw key-value map, applying defaults and
/// rejecting out-of-range or contradictory settings. Idempotent:
/// validate_config(cfg.to_map()) == cfg.
inline RunConfig validate_config(const std::map<std::string, std::string>& raw) {
  static const std::vector<std::string> known = {
      "language_set", "embedding_dim", "layer_count", "feature_dim",
      "frame_rate", "max_seconds", "margin", "batch_size", "batch_strategy",
      "language_aware", "use_xll", "trainable_extractor", "peak_lr", "epochs",
      "seed", "num_layers", "num_heads", "similarity", "warmup_fraction",
      "grad_clip", "drop_last", "xll_missing"};
  for (const auto& [k, _] : raw) {
    if (std::find(known.begin(), known.end(), k) == known.end()) {
      throw ConfigError("unknown config key '" + k + "'");
    }
  }

  RunConfig cfg;
  auto get = [&](const std::string& key) -> const std::string* {
    auto it = raw.find(key);
    return it == raw.end() ? nullptr : &it->second;
  };

  const std::string* langs = get("language_set");
  if (!langs || detail::split_csv(*langs).empty()) {
    throw ConfigError("missing required config key 'language_set'");
  }
  for (const auto& code : detail::split_csv(*langs)) {
    cfg.language_set.push_back(LanguageId{code});
  }
  for (std::size_t i = 0; i < cfg.language_set.size(); ++i) {
    for (std::size_t j = i + 1; j < cfg.language_set.size(); ++j) {
      if (cfg.language_set[i] == cfg.language_set[j]) {
        throw ConfigError("duplicate language '" + cfg.language_set[i].code +
                          "' in language_set");
      }
    }
  }

  auto require_int = [&](const std::string& key) {
    const std::string* v = get(key);
    if (!v) throw ConfigError("missing required config key '" + key + "'");
    return detail::parse_int(key, *v);
  };
  cfg.layer_count = static_cast<int>(require_int("layer_count"));
  cfg.feature_dim = static_cast<int>(require_int("feature_dim"));

  if (const auto* v = get("embedding_dim")) cfg.embedding_dim = static_cast<int>(detail::parse_int("embedding_dim", *v));
  if (const auto* v = get("frame_rate")) cfg.frame_rate = static_cast<int>(detail::parse_int("frame_rate", *v));
  if (const auto* v = get("max_seconds")) cfg.max_seconds = detail::parse_double("max_seconds", *v);
  if (const auto* v = get("margin")) cfg.margin = detail::parse_double("margin", *v);
  if (const auto* v = get("batch_size")) cfg.batch_size = static_cast<int>(detail::parse_int("batch_size", *v));
  if (const auto* v = get("batch_strategy")) {
    if (*v == "monolingual") cfg.batch_strategy = BatchStrategy::monolingual;
    else if (*v == "multilingual") cfg.batch_strategy = BatchStrategy::multilingual;
    else throw ConfigError("config key 'batch_strategy': expected monolingual|multilingual, got '" + *v + "'");
  }
  if (const auto* v = get("language_aware")) cfg.language_aware = detail::parse_bool("language_aware", *v);
  if (const auto* v = get("use_xll")) cfg.use_xll = detail::parse_bool("use_xll", *v);
  if (const auto* v = get("trainable_extractor")) cfg.trainable_extractor = detail::parse_bool("trainable_extractor", *v);
  if (const auto* v = get("peak_lr")) cfg.peak_lr = detail::parse_double("peak_lr", *v);
  if (const auto* v = get("epochs")) cfg.epochs = static_cast<int>(detail::parse_int("epochs", *v));
  if (const auto* v = get("seed")) cfg.seed = detail::parse_int("seed", *v);
  if (const auto* v = get("num_layers")) cfg.num_layers = static_cast<int>(detail::parse_int("num_layers", *v));
  if (const auto* v = get("num_heads")) cfg.num_heads = static_cast<int>(detail::parse_int("num_heads", *v));
  if (const auto* v = get("similarity")) {
    if (*v == "cosine") cfg.similarity = SimilarityKind::cosine;
    else if (*v == "dot") cfg.similarity = SimilarityKind::dot;
    else throw ConfigError("config key 'similarity': expected cosine|dot, got '" + *v + "'");
  }
  if (const auto* v = get("warmup_fraction")) cfg.warmup_fraction = detail::parse_double("warmup_fraction", *v);
  if (const auto* v = get("grad_clip")) cfg.grad_clip = detail::parse_double("grad_clip", *v);
  if (const auto* v = get("drop_last")) cfg.drop_last = detail::parse_bool("drop_last", *v);
  if (const auto* v = get("xll_missing")) {
    if (*v == "skip") cfg.xll_missing = XllMissing::skip;
    else if (*v == "error") cfg.xll_missing = XllMissing::error;
    else throw ConfigError("config key 'xll_missing': expected skip|error, got '" + *v + "'");
  }

  auto positive = [](const std::string& key, long long v) {
    if (v < 1) throw ConfigError("config key '" + key + "' must be >= 1, got " + std::to_string(v));
  };
  positive("embedding_dim", cfg.embedding_dim);
  positive("layer_count", cfg.layer_count);
  positive("feature_dim", cfg.feature_dim);
  positive("frame_rate", cfg.frame_rate);
  positive("batch_size", cfg.batch_size);
  positive("epochs", cfg.epochs);
  positive("num_layers", cfg.num_layers);
  positive("num_heads", cfg.num_heads);
  if (!(cfg.max_seconds > 0)) throw ConfigError("config key 'max_seconds' must be positive");
  if (cfg.margin < 0) throw ConfigError("config key 'margin' must be nonnegative");
  if (!(cfg.peak_lr > 0)) throw ConfigError("config key 'peak_lr' must be positive");
  if (!(cfg.warmup_fraction > 0 && cfg.warmup_fraction < 1)) {
    throw ConfigError("config key 'warmup_fraction' must lie in (0, 1)");
  }
  if (cfg.grad_clip < 0) throw ConfigError("config key 'grad_clip' must be nonnegative");

  const double frames = cfg.frame_rate * cfg.max_seconds;
  if (std::abs(frames - std::llround(frames)) > 1e-9 || std::llround(frames) < 1) {
    throw ConfigError("frame_rate * max_seconds must be a positive integer, got " +
                      detail::format_double(frames));
  }
  if (cfg.feature_dim % cfg.num_heads != 0) {
    throw ConfigError("feature_dim " + std::to_string(cfg.feature_dim) +
                      " is not divisible by num_heads " + std::to_string(cfg.num_heads));
  }
  if (cfg.use_xll && cfg.language_set.size() < 2) {
    throw ConfigError("use_xll requires at least 2 languages, got " +
                      std::to_string(cfg.language_set.size()));
  }
  return cfg;
}

/// Parses a flat "key = value" file; '#' starts a comment line.
inline std::map<std::string, std::string> parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  std::map<std::string, std::string> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const std::size_t eq = t.find('=');
    if (eq == std::string::npos) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = detail::trim(t.substr(0, eq));
    const std::string val = detail::trim(t.substr(eq + 1));
    if (key.empty()) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": empty key");
    }
    out[key] = val;
  }
  return out;
}

inline std::string config_snapshot(const RunConfig& cfg) {
  std::string out;
  for (const auto& [k, v] : cfg.to_map()) {
    out += k + " = " + v + "\n";
  }
  return out;
}

/// FNV-1a over the canonical snapshot; stamped into reports so a result can
/// be traced back to the exact configuration that produced it.
inline std::string config_hash(const RunConfig& cfg) {
  const std::string snap = config_snapshot(cfg);
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : snap) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

}  // namespace xmodal

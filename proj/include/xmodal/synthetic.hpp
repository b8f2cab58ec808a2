// Copyright 2026 xmodal authors
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "xmodal/binio.hpp"
#include "xmodal/config.hpp"
#include "xmodal/error.hpp"
#include "xmodal/features.hpp"
#include "xmodal/manifest.hpp"
#include "xmodal/rng.hpp"

namespace xmodal {

/// Recipe for a deterministic synthetic corpus.
///
/// Every image m gets a unit target vector z_m in the embedding space. The
/// spoken caption of image m in language L carries a language-specific linear
/// rendering of z_m on exactly one feature layer:
///
///   signal frame  = M_L z_m + b_L + N u_{m,L} + frame noise
///   other layers  = pure noise at higher variance
///
/// M_L is a per-language mixing matrix (each language "pronounces" the target
/// differently), b_L a language bias, and N u_{m,L} a nuisance component drawn
/// independently per (image, language). The nuisance is uninformative for
/// image retrieval but makes captions of the same image in two languages
/// disagree unless training explicitly ties them together, which is what the
/// cross-lingual objective is for. Layer weights must single out the signal
/// layer, so the weighting is learnable and inspectable.
struct SyntheticSpec {
  std::vector<std::string> languages;
  int n_images = 200;
  int layer_count = 4;
  int feature_dim = 32;
  int embedding_dim = 16;
  int frames_min = 12;
  int frames_max = 28;
  int informative_layer = 2;
  int frame_rate = 50;
  long long seed = 0;
  double frame_noise = 0.4;
  double distractor_noise = 1.5;
  int nuisance_dim = 6;
  double nuisance_scale = 1.2;
  double language_bias_scale = 0.5;
  double text_noise = 0.1;

  void validate() const {
    if (languages.empty()) throw ValidationError("synthetic spec: no languages");
    if (n_images < 1) throw ValidationError("synthetic spec: n_images must be >= 1");
    if (layer_count < 1 || feature_dim < 1 || embedding_dim < 1) {
      throw ValidationError("synthetic spec: dimensions must be >= 1");
    }
    if (frames_min < 1 || frames_max < frames_min) {
      throw ValidationError("synthetic spec: need 1 <= frames_min <= frames_max");
    }
    if (informative_layer < 0 || informative_layer >= layer_count) {
      throw ValidationError("synthetic spec: informative_layer out of range");
    }
    if (nuisance_dim < 0) throw ValidationError("synthetic spec: nuisance_dim must be >= 0");
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["languages"] = languages;
    j["n_images"] = n_images;
    j["layer_count"] = layer_count;
    j["feature_dim"] = feature_dim;
    j["embedding_dim"] = embedding_dim;
    j["frames_min"] = frames_min;
    j["frames_max"] = frames_max;
    j["informative_layer"] = informative_layer;
    j["frame_rate"] = frame_rate;
    j["seed"] = seed;
    j["frame_noise"] = frame_noise;
    j["distractor_noise"] = distractor_noise;
    j["nuisance_dim"] = nuisance_dim;
    j["nuisance_scale"] = nuisance_scale;
    j["language_bias_scale"] = language_bias_scale;
    j["text_noise"] = text_noise;
    return j;
  }

  static SyntheticSpec from_json(const nlohmann::json& j) {
    SyntheticSpec s;
    try {
      s.languages = j.at("languages").get<std::vector<std::string>>();
      s.n_images = j.at("n_images").get<int>();
      s.layer_count = j.at("layer_count").get<int>();
      s.feature_dim = j.at("feature_dim").get<int>();
      s.embedding_dim = j.at("embedding_dim").get<int>();
      s.frames_min = j.at("frames_min").get<int>();
      s.frames_max = j.at("frames_max").get<int>();
      s.informative_layer = j.at("informative_layer").get<int>();
      s.frame_rate = j.at("frame_rate").get<int>();
      s.seed = j.at("seed").get<long long>();
      s.frame_noise = j.at("frame_noise").get<double>();
      s.distractor_noise = j.at("distractor_noise").get<double>();
      s.nuisance_dim = j.at("nuisance_dim").get<int>();
      s.nuisance_scale = j.at("nuisance_scale").get<double>();
      s.language_bias_scale = j.at("language_bias_scale").get<double>();
      s.text_noise = j.at("text_noise").get<double>();
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("synthetic spec: ") + e.what());
    }
    s.validate();
    return s;
  }
};

namespace synth {

inline std::vector<double> draw_normal(SeededRng& rng, std::size_t n, double scale = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = scale * rng.normal();
  return v;
}

inline void normalize_inplace(std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x * x;
  const double n = std::sqrt(s);
  if (n > 0) {
    for (double& x : v) x /= n;
  }
}

/// Unit target vector for image m.
inline std::vector<double> image_embedding(const SyntheticSpec& spec, int m) {
  SeededRng rng(spec.seed, "syn/image/" + std::to_string(m));
  auto z = draw_normal(rng, spec.embedding_dim);
  normalize_inplace(z);
  return z;
}

/// Text embedding for image m: the target plus a small perturbation, like a
/// caption encoder aligned with but not equal to the image encoder.
inline std::vector<double> text_embedding(const SyntheticSpec& spec, int m) {
  auto z = image_embedding(spec, m);
  SeededRng rng(spec.seed, "syn/text/" + std::to_string(m));
  for (auto& x : z) x += spec.text_noise * rng.normal();
  normalize_inplace(z);
  return z;
}

struct LanguageMixer {
  std::vector<double> mixing;  // D x E, row-major
  std::vector<double> bias;    // D
};

inline LanguageMixer language_mixer(const SyntheticSpec& spec, const std::string& lang) {
  SeededRng rng(spec.seed, "syn/mixer/" + lang);
  LanguageMixer mx;
  mx.mixing = draw_normal(rng, static_cast<std::size_t>(spec.feature_dim) * spec.embedding_dim,
                          1.0 / std::sqrt(static_cast<double>(spec.embedding_dim)));
  mx.bias = draw_normal(rng, spec.feature_dim, spec.language_bias_scale);
  return mx;
}

inline std::vector<double> nuisance_basis(const SyntheticSpec& spec) {
  SeededRng rng(spec.seed, "syn/nuisance");
  if (spec.nuisance_dim == 0) return {};
  return draw_normal(rng, static_cast<std::size_t>(spec.feature_dim) * spec.nuisance_dim,
                     1.0 / std::sqrt(static_cast<double>(spec.nuisance_dim)));
}

inline int frame_count(const SyntheticSpec& spec, const std::string& lang, int m) {
  SeededRng rng(spec.seed, "syn/frames/" + lang + "/" + std::to_string(m));
  return spec.frames_min +
         static_cast<int>(rng.uniform_index(spec.frames_max - spec.frames_min + 1));
}

/// Full (l, k, D) stack for the caption of image m in `lang`, in double
/// precision. Pure function of (spec, lang, m).
inline std::vector<Matrix<double>> utterance_stack(const SyntheticSpec& spec,
                                                   const std::string& lang, int m) {
  const int D = spec.feature_dim;
  const auto z = image_embedding(spec, m);
  const auto mixer = language_mixer(spec, lang);
  const auto basis = nuisance_basis(spec);

  SeededRng rng(spec.seed, "syn/utt/" + lang + "/" + std::to_string(m));
  const int k = frame_count(spec, lang, m);

  std::vector<double> nuisance_coef = draw_normal(rng, spec.nuisance_dim, spec.nuisance_scale);
  std::vector<double> signal(D, 0.0);
  for (int d = 0; d < D; ++d) {
    double s = mixer.bias[d];
    for (int e = 0; e < spec.embedding_dim; ++e) {
      s += mixer.mixing[static_cast<std::size_t>(d) * spec.embedding_dim + e] * z[e];
    }
    for (int r = 0; r < spec.nuisance_dim; ++r) {
      s += basis[static_cast<std::size_t>(d) * spec.nuisance_dim + r] * nuisance_coef[r];
    }
    signal[d] = s;
  }

  std::vector<Matrix<double>> layers;
  layers.reserve(spec.layer_count);
  for (int h = 0; h < spec.layer_count; ++h) {
    Matrix<double> layer(k, D);
    if (h == spec.informative_layer) {
      for (int t = 0; t < k; ++t) {
        for (int d = 0; d < D; ++d) {
          layer.at(t, d) = signal[d] + spec.frame_noise * rng.normal();
        }
      }
    } else {
      for (int t = 0; t < k; ++t) {
        for (int d = 0; d < D; ++d) {
          layer.at(t, d) = spec.distractor_noise * rng.normal();
        }
      }
    }
    layers.push_back(std::move(layer));
  }
  return layers;
}

inline std::string live_ref(const std::string& lang, int m) {
  return "syn://" + lang + "/" + std::to_string(m);
}

/// Parses "syn://<lang>/<image index>".
inline std::pair<std::string, int> parse_live_ref(const std::string& ref) {
  if (!is_synthetic_ref(ref)) throw IoError("not a synthetic ref: " + ref);
  const std::string body = ref.substr(6);
  const std::size_t slash = body.find('/');
  if (slash == std::string::npos || slash == 0 || slash + 1 >= body.size()) {
    throw IoError("malformed synthetic ref: " + ref);
  }
  const std::string lang = body.substr(0, slash);
  int m = 0;
  try {
    std::size_t pos = 0;
    m = std::stoi(body.substr(slash + 1), &pos);
    if (pos != body.size() - slash - 1) throw std::invalid_argument("trailing");
  } catch (const std::exception&) {
    throw IoError("malformed synthetic ref: " + ref);
  }
  return {lang, m};
}

}  // namespace synth

/// Deterministic feature provider backed by the synthetic recipe. When
/// trainable, a per-layer elementwise affine (gain, bias) sits on top of the
/// frozen generator; it is the identity at initialization.
template <typename Real>
class SyntheticProvider final : public FeatureProvider<Real> {
 public:
  explicit SyntheticProvider(SyntheticSpec spec, bool trainable = false)
      : spec_(std::move(spec)), trainable_(trainable) {
    spec_.validate();
    if (trainable_) {
      for (int h = 0; h < spec_.layer_count; ++h) {
        gains_.push_back(Var<Real>::leaf(Matrix<Real>(1, spec_.feature_dim, Real(1)), true));
        biases_.push_back(Var<Real>::leaf(Matrix<Real>(1, spec_.feature_dim, Real(0)), true));
      }
    }
  }

  const SyntheticSpec& spec() const { return spec_; }
  ProviderKind kind() const override { return ProviderKind::synthetic_deterministic; }
  bool trainable() const override { return trainable_; }
  int layer_count() const override { return spec_.layer_count; }
  int feature_dim() const override { return spec_.feature_dim; }

  FeatureStack<Real> features(const std::string& utterance_ref) override {
    const auto base = base_layers(utterance_ref);
    FeatureStack<Real> stack;
    stack.frame_rate = spec_.frame_rate;
    for (int h = 0; h < spec_.layer_count; ++h) {
      Matrix<Real> layer = base[h].template cast<Real>();
      if (trainable_) {
        for (std::size_t t = 0; t < layer.rows(); ++t) {
          for (std::size_t d = 0; d < layer.cols(); ++d) {
            layer.at(t, d) = layer.at(t, d) * gains_[h].value().at(0, d) +
                             biases_[h].value().at(0, d);
          }
        }
      }
      stack.layers.push_back(std::move(layer));
    }
    stack.validate();
    return stack;
  }

  std::vector<Var<Real>> feature_vars(const std::string& utterance_ref) override {
    if (!trainable_) return FeatureProvider<Real>::feature_vars(utterance_ref);
    const auto base = base_layers(utterance_ref);
    std::vector<Var<Real>> vars;
    for (int h = 0; h < spec_.layer_count; ++h) {
      vars.push_back(row_affine(base[h].template cast<Real>(), gains_[h], biases_[h]));
    }
    return vars;
  }

  std::vector<std::pair<std::string, Var<Real>>> trainable_params() override {
    std::vector<std::pair<std::string, Var<Real>>> out;
    for (int h = 0; h < spec_.layer_count; ++h) {
      out.emplace_back("provider.layer" + std::to_string(h) + ".gain", gains_[h]);
      out.emplace_back("provider.layer" + std::to_string(h) + ".bias", biases_[h]);
    }
    return out;
  }

 private:
  std::vector<Matrix<double>> base_layers(const std::string& ref) const {
    auto [lang, m] = synth::parse_live_ref(ref);
    bool known = false;
    for (const auto& l : spec_.languages) known = known || l == lang;
    if (!known || m < 0 || m >= spec_.n_images) {
      throw IoError("synthetic ref out of range: " + ref);
    }
    return synth::utterance_stack(spec_, lang, m);
  }

  SyntheticSpec spec_;
  bool trainable_;
  std::vector<Var<Real>> gains_;
  std::vector<Var<Real>> biases_;
};

struct SyntheticDatasetPaths {
  std::filesystem::path manifest;
  std::filesystem::path sidecar;
  int n_train = 0;
  int n_dev = 0;
  int n_test = 0;
};

/// Writes a complete synthetic dataset: manifest, image/text embedding files,
/// feature files (or live syn:// refs), and the generation sidecar. Splits
/// are assigned per image, 80/10/10.
inline SyntheticDatasetPaths write_synthetic_dataset(const SyntheticSpec& spec,
                                                     const std::filesystem::path& out_dir,
                                                     bool live_features = false) {
  spec.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "images", ec);
  std::filesystem::create_directories(out_dir / "text", ec);
  if (!live_features) std::filesystem::create_directories(out_dir / "feats", ec);
  if (!std::filesystem::exists(out_dir / "images")) {
    throw IoError("cannot create dataset directory: " + out_dir.string());
  }

  // Per-image split assignment.
  std::vector<int> order(spec.n_images);
  for (int i = 0; i < spec.n_images; ++i) order[i] = i;
  SeededRng split_rng(spec.seed, "syn/split");
  split_rng.shuffle(order);
  const int n_train = static_cast<int>(0.8 * spec.n_images);
  const int n_dev = static_cast<int>(0.1 * spec.n_images);
  std::vector<Split> split_of(spec.n_images, Split::test);
  for (int i = 0; i < spec.n_images; ++i) {
    if (i < n_train) split_of[order[i]] = Split::train;
    else if (i < n_train + n_dev) split_of[order[i]] = Split::dev;
  }

  char buf[64];
  std::vector<PairedExample> examples;
  for (int m = 0; m < spec.n_images; ++m) {
    std::snprintf(buf, sizeof(buf), "img%05d", m);
    const std::string img_name = buf;
    const auto z = synth::image_embedding(spec, m);
    std::vector<float> zf(z.begin(), z.end());
    write_embedding_file((out_dir / "images" / (img_name + ".xmev")).string(), zf);
    const auto t = synth::text_embedding(spec, m);
    std::vector<float> tf(t.begin(), t.end());
    write_embedding_file((out_dir / "text" / (img_name + ".xmev")).string(), tf);

    for (const auto& lang : spec.languages) {
      PairedExample ex;
      ex.example_id = lang + "-" + img_name;
      ex.language = LanguageId{lang};
      ex.split = split_of[m];
      ex.image_embedding_ref = "images/" + img_name + ".xmev";
      ex.text_embedding_ref = "text/" + img_name + ".xmev";
      if (live_features) {
        ex.utterance_ref = synth::live_ref(lang, m);
      } else {
        const auto stack = synth::utterance_stack(spec, lang, m);
        std::vector<Matrix<float>> layers32;
        for (const auto& layer : stack) layers32.push_back(layer.cast<float>());
        const std::string feat_name = lang + "_" + img_name + ".xmfs";
        write_feature_file((out_dir / "feats" / feat_name).string(), layers32);
        ex.utterance_ref = "feats/" + feat_name;
      }
      examples.push_back(std::move(ex));
    }
  }

  SyntheticDatasetPaths paths;
  paths.manifest = out_dir / "manifest.jsonl";
  paths.sidecar = out_dir / "synthetic.json";
  write_manifest(paths.manifest.string(), examples);
  std::ofstream sidecar(paths.sidecar);
  if (!sidecar) throw IoError("cannot write sidecar: " + paths.sidecar.string());
  sidecar << spec.to_json().dump(2) << "\n";
  const int langs = static_cast<int>(spec.languages.size());
  paths.n_train = n_train * langs;
  paths.n_dev = n_dev * langs;
  paths.n_test = (spec.n_images - n_train - n_dev) * langs;
  return paths;
}

inline SyntheticSpec load_synthetic_sidecar(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open synthetic sidecar: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return SyntheticSpec::from_json(j);
}

}  // namespace xmodal

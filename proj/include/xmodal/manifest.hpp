// Copyright 2026 xmodal authors
// Licensed under the Apache License, Version 2.0

#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "xmodal/config.hpp"
#include "xmodal/error.hpp"

namespace xmodal {

/// One (image embedding, utterance, language) training triple.
struct PairedExample {
  std::string example_id;
  LanguageId language;
  std::string image_embedding_ref;
  std::string utterance_ref;
  bool utterance_is_audio = false;
  std::string text_embedding_ref;  // empty when absent
  Split split = Split::train;
};

inline bool is_synthetic_ref(const std::string& ref) {
  return ref.rfind("syn://", 0) == 0;
}

/// Resolves a storage key relative to the manifest directory. syn:// refs
/// resolve through the synthetic provider, not the filesystem.
inline std::filesystem::path resolve_ref(const std::filesystem::path& base_dir,
                                         const std::string& ref) {
  std::filesystem::path p(ref);
  if (p.is_absolute()) return p;
  return base_dir / p;
}

namespace detail {

inline std::string require_string(const nlohmann::json& rec, const char* key,
                                  const std::string& where) {
  if (!rec.contains(key)) {
    throw ParseError(where + ": missing key '" + std::string(key) + "'");
  }
  if (!rec[key].is_string()) {
    throw ParseError(where + ": key '" + std::string(key) + "' must be a string");
  }
  return rec[key].get<std::string>();
}

}  // namespace detail

/// Loads a JSON-lines manifest. Per-record keys: id, lang, split, image_emb,
/// and one of features/audio; optional text_emb. When `languages` is given,
/// every record's language must belong to it. When `check_refs` is set,
/// file-backed storage keys must exist on disk (syn:// keys must have the
/// synthetic sidecar next to the manifest).
inline std::vector<PairedExample> load_manifest(
    const std::string& path,
    const std::vector<LanguageId>* languages = nullptr,
    bool check_refs = true) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest: " + path);
  const std::filesystem::path base_dir = std::filesystem::path(path).parent_path();

  std::vector<PairedExample> out;
  std::set<std::string> seen_ids;
  bool synthetic_sidecar_checked = false;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = path + ":" + std::to_string(lineno);
    std::string trimmed = detail::trim(line);
    if (trimmed.empty()) continue;

    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(trimmed);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(where + ": invalid JSON: " + e.what());
    }
    if (!rec.is_object()) throw ParseError(where + ": record must be an object");

    PairedExample ex;
    ex.example_id = detail::require_string(rec, "id", where);
    ex.language = LanguageId{detail::require_string(rec, "lang", where)};
    ex.split = split_from_string(detail::require_string(rec, "split", where));
    ex.image_embedding_ref = detail::require_string(rec, "image_emb", where);
    if (rec.contains("features") && rec.contains("audio")) {
      throw ParseError(where + ": record has both 'features' and 'audio'");
    }
    if (rec.contains("features")) {
      ex.utterance_ref = detail::require_string(rec, "features", where);
    } else if (rec.contains("audio")) {
      ex.utterance_ref = detail::require_string(rec, "audio", where);
      ex.utterance_is_audio = true;
    } else {
      throw ParseError(where + ": record needs 'features' or 'audio'");
    }
    if (rec.contains("text_emb")) {
      ex.text_embedding_ref = detail::require_string(rec, "text_emb", where);
    }

    if (ex.example_id.empty()) throw ValidationError(where + ": empty id");
    if (ex.language.code.empty()) throw ValidationError(where + ": empty lang");
    if (!seen_ids.insert(ex.example_id).second) {
      throw ValidationError(where + ": duplicate example_id '" + ex.example_id + "'");
    }
    if (languages) {
      bool known = false;
      for (const auto& l : *languages) known = known || l == ex.language;
      if (!known) {
        throw ValidationError(where + ": unknown language code '" + ex.language.code + "'");
      }
    }

    if (check_refs) {
      auto check = [&](const std::string& ref, const char* what) {
        if (ref.empty()) return;
        if (is_synthetic_ref(ref)) {
          if (!synthetic_sidecar_checked) {
            const auto sidecar = base_dir / "synthetic.json";
            if (!std::filesystem::exists(sidecar)) {
              throw IoError(where + ": syn:// ref requires sidecar " + sidecar.string());
            }
            synthetic_sidecar_checked = true;
          }
          return;
        }
        const auto p = resolve_ref(base_dir, ref);
        if (!std::filesystem::exists(p)) {
          throw IoError(where + ": " + std::string(what) + " ref does not resolve: " + p.string());
        }
      };
      check(ex.image_embedding_ref, "image_emb");
      check(ex.utterance_ref, ex.utterance_is_audio ? "audio" : "features");
      check(ex.text_embedding_ref, "text_emb");
    }
    out.push_back(std::move(ex));
  }
  return out;
}

/// Canonical JSON-lines serialization (alphabetical keys, one record per
/// line). load_manifest round-trips files written by this function.
inline std::string serialize_manifest(const std::vector<PairedExample>& examples) {
  std::string out;
  for (const auto& ex : examples) {
    nlohmann::json rec;
    rec["id"] = ex.example_id;
    rec["lang"] = ex.language.code;
    rec["split"] = to_string(ex.split);
    rec["image_emb"] = ex.image_embedding_ref;
    rec[ex.utterance_is_audio ? "audio" : "features"] = ex.utterance_ref;
    if (!ex.text_embedding_ref.empty()) rec["text_emb"] = ex.text_embedding_ref;
    out += rec.dump();
    out += "\n";
  }
  return out;
}

inline void write_manifest(const std::string& path,
                           const std::vector<PairedExample>& examples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write manifest: " + path);
  out << serialize_manifest(examples);
  if (!out) throw IoError("failed writing manifest: " + path);
}

}  // namespace xmodal

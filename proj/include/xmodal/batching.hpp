// Copyright 2026 xmodal authors
// Licensed under the Apache License, Version 2.0

#pragma once

#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "xmodal/config.hpp"
#include "xmodal/error.hpp"
#include "xmodal/manifest.hpp"
#include "xmodal/rng.hpp"

namespace xmodal {

struct Batch {
  std::vector<std::size_t> indices;       // into the example list the plan was built from
  std::vector<std::string> example_ids;
  std::map<std::string, int> language_counts;

  bool single_language() const { return language_counts.size() == 1; }
};

/// One epoch of batches. Every train example appears exactly once per epoch
/// (the final short batch is kept unless drop_last).
struct BatchPlan {
  std::vector<Batch> batches;
};

/// Monolingual strategy: shuffle within each language, emit single-language
/// batches, then shuffle the batch order so language blocks interleave.
/// Multilingual strategy: shuffle the pooled list and cut consecutive
/// batches; mixed composition arises naturally.
inline BatchPlan compose_batches(const std::vector<PairedExample>& examples,
                                 BatchStrategy strategy, int batch_size, SeededRng& rng,
                                 bool drop_last = false) {
  if (examples.empty()) throw ValidationError("compose_batches: empty example list");
  if (batch_size < 1) throw ValidationError("compose_batches: batch_size must be >= 1");
  if (batch_size == 1) {
    std::cerr << "[xmodal] warning: batch_size=1 leaves no in-batch negatives\n";
  }

  auto cut = [&](const std::vector<std::size_t>& order, std::vector<Batch>& out) {
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(batch_size)) {
      const std::size_t end = std::min(order.size(), start + batch_size);
      if (drop_last && end - start < static_cast<std::size_t>(batch_size)) break;
      Batch b;
      for (std::size_t i = start; i < end; ++i) {
        b.indices.push_back(order[i]);
        b.example_ids.push_back(examples[order[i]].example_id);
        b.language_counts[examples[order[i]].language.code]++;
      }
      out.push_back(std::move(b));
    }
  };

  BatchPlan plan;
  if (strategy == BatchStrategy::multilingual) {
    std::vector<std::size_t> order(examples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    cut(order, plan.batches);
  } else {
    std::map<std::string, std::vector<std::size_t>> by_lang;
    for (std::size_t i = 0; i < examples.size(); ++i) {
      by_lang[examples[i].language.code].push_back(i);
    }
    for (auto& [_, order] : by_lang) {
      rng.shuffle(order);
      cut(order, plan.batches);
    }
    rng.shuffle(plan.batches);
  }
  return plan;
}

/// Image-keyed view of a manifest: image ref -> language -> example index.
/// The cross-lingual objective trains over these groups.
inline std::map<std::string, std::map<LanguageId, std::size_t>> group_by_image(
    const std::vector<PairedExample>& examples) {
  std::map<std::string, std::map<LanguageId, std::size_t>> groups;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& ex = examples[i];
    auto [it, inserted] = groups[ex.image_embedding_ref].emplace(ex.language, i);
    if (!inserted) {
      throw ValidationError("group_by_image: image '" + ex.image_embedding_ref +
                            "' has two captions in language '" + ex.language.code + "'");
    }
  }
  return groups;
}

struct ImageBatch {
  std::vector<std::string> image_refs;
};

/// One epoch of image batches for cross-lingual training: every image once,
/// shuffled, cut into consecutive batches.
inline std::vector<ImageBatch> compose_image_batches(
    const std::map<std::string, std::map<LanguageId, std::size_t>>& groups, int batch_size,
    SeededRng& rng, bool drop_last = false) {
  if (groups.empty()) throw ValidationError("compose_image_batches: no image groups");
  if (batch_size < 1) throw ValidationError("compose_image_batches: batch_size must be >= 1");
  std::vector<std::string> refs;
  refs.reserve(groups.size());
  for (const auto& [ref, _] : groups) refs.push_back(ref);
  rng.shuffle(refs);
  std::vector<ImageBatch> out;
  for (std::size_t start = 0; start < refs.size();
       start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(refs.size(), start + batch_size);
    if (drop_last && end - start < static_cast<std::size_t>(batch_size)) break;
    ImageBatch b;
    b.image_refs.assign(refs.begin() + start, refs.begin() + end);
    out.push_back(std::move(b));
  }
  return out;
}

}  // namespace xmodal

#pragma once

#include <cstdint>
#include <string>

#include "textshift/corpus.hpp"

namespace textshift {

/// Synthetic paired corpus for desk-scale runs. Every GPT paragraph restates
/// the content of one human paragraph (linked by source_id) in a formal,
/// verbose register; human paragraphs use a casual register. Each sentence
/// is rendered in the other register with probability `style_mix`.
struct ToyCorpusSpec {
  std::size_t per_class = 200;
  double style_mix = 0.2;
  std::uint64_t seed = 0;
  std::string id_prefix = "toy";
};

Corpus make_toy_corpus(const ToyCorpusSpec& spec);

}  // namespace textshift

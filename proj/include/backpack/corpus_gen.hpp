#pragma once
// Deterministic synthetic text generator. Sentences draw nouns and verbs from
// per-topic pools, sprinkle in shared function words, and reuse a small set of
// polysemous nouns across every topic, so a word's neighbours depend strongly
// on the active topic. Models with more senses per word have more room to
// separate those roles, which is exactly what the scaled ablation measures.

#include <cstdint>
#include <string>
#include <vector>

#include "backpack/common.hpp"
#include "backpack/control_data.hpp"

namespace backpack {

struct CorpusSpec {
  uint64_t seed = 0;
  std::size_t min_chars = 1 << 20;  // finish the sentence that crosses this
  int topics = 8;
  int nouns_per_topic = 16;
  int verbs_per_topic = 8;
  int shared_nouns = 16;              // appear in every topic
  double shared_noun_rate = 0.3;      // chance a noun slot uses a shared noun
  double bigram_verb_rate = 0.25;     // chance a verb is keyed to its noun
  double pronoun_sentence_rate = 0.05;

  void validate() const {
    if (min_chars < 1) throw UsageError("corpus spec: min_chars must be >= 1");
    if (topics < 2) throw UsageError("corpus spec: need at least two topics");
    if (nouns_per_topic < 1 || verbs_per_topic < 1 || shared_nouns < 1)
      throw UsageError("corpus spec: word pools must be non-empty");
    if (shared_noun_rate < 0.0 || shared_noun_rate > 1.0 || bigram_verb_rate < 0.0 ||
        bigram_verb_rate > 1.0 || pronoun_sentence_rate < 0.0 || pronoun_sentence_rate > 1.0)
      throw UsageError("corpus spec: rates must lie in [0, 1]");
  }
};

namespace detail {

// Injective id -> pronounceable string; distinct ids never collide.
inline std::string spell(int id) {
  static const char* kSyllables[] = {"ba", "de", "ki", "lo", "mu", "na", "pe", "ri", "so", "tu",
                                     "va", "ze", "ga", "hi", "jo", "fu", "wa", "che", "dri", "plo"};
  if (id < 0) throw UsageError("spell: id must be non-negative");
  std::string s;
  int n = id;
  do {
    s += kSyllables[n % 20];
    n /= 20;
  } while (n > 0);
  return s;
}

}  // namespace detail

// Closed word pools for a CorpusSpec; exposed so callers can build topic bags
// that match the generated text.
struct CorpusPools {
  std::vector<std::vector<std::string>> nouns;  // per topic
  std::vector<std::vector<std::string>> verbs;  // per topic
  std::vector<std::string> shared;              // polysemous nouns

  static CorpusPools build(const CorpusSpec& spec) {
    spec.validate();
    CorpusPools p;
    int next = 0;
    p.nouns.resize(static_cast<size_t>(spec.topics));
    p.verbs.resize(static_cast<size_t>(spec.topics));
    for (int t = 0; t < spec.topics; ++t) {
      for (int i = 0; i < spec.nouns_per_topic; ++i)
        p.nouns[static_cast<size_t>(t)].push_back(detail::spell(next++));
      for (int i = 0; i < spec.verbs_per_topic; ++i)
        p.verbs[static_cast<size_t>(t)].push_back(detail::spell(next++) + "t");
    }
    for (int i = 0; i < spec.shared_nouns; ++i) p.shared.push_back("zu" + detail::spell(i));
    return p;
  }
};

// One newline-terminated sentence in topic `t`, or a profession/pronoun line.
// Each noun owns a two-verb successor set (shared nouns own one per topic),
// so predicting the word after a noun requires word- and topic-specific
// state, not just the sentence topic.
namespace detail {

inline void append_sentence(std::string& out, const CorpusSpec& spec, const CorpusPools& pools,
                            Rng& rng) {
  if (rng.uniform() < spec.pronoun_sentence_rate) {
    const auto& prof = profession_words();
    const std::string& p = prof[rng.below(prof.size())];
    const char* pronoun = rng.below(2) == 0 ? "he" : "she";
    out += "the ";
    out += p;
    out += " said ";
    out += pronoun;
    out += rng.below(2) == 0 ? " was busy\n" : " was done\n";
    return;
  }
  size_t t = rng.below(static_cast<uint64_t>(spec.topics));
  const auto& nouns = pools.nouns[t];
  const auto& verbs = pools.verbs[t];
  // returns the noun string and a stable id that picks its successor verbs
  auto noun = [&](size_t& id) -> const std::string& {
    if (rng.uniform() < spec.shared_noun_rate) {
      size_t i = rng.below(pools.shared.size());
      id = (t + 1) * 1000 + i;  // a shared noun behaves differently per topic
      return pools.shared[i];
    }
    size_t i = rng.below(nouns.size());
    id = i;
    return nouns[i];
  };
  auto verb_for = [&](size_t noun_id) -> const std::string& {
    if (rng.uniform() < spec.bigram_verb_rate) {
      size_t pick = rng.below(2);
      return verbs[(noun_id * 7 + 3 * pick + 1) % verbs.size()];
    }
    return verbs[rng.below(verbs.size())];
  };
  int clauses = 2 + static_cast<int>(rng.below(3));
  for (int c = 0; c < clauses; ++c) {
    if (c > 0) out += rng.below(2) == 0 ? " and " : " then ";
    size_t id = 0;
    out += "the ";
    out += noun(id);
    out += ' ';
    out += verb_for(id);
    if (rng.below(2) == 0) {
      out += " the ";
      out += noun(id);
    }
  }
  out += '\n';
}

}  // namespace detail

inline std::string generate_corpus(const CorpusSpec& spec) {
  spec.validate();
  CorpusPools pools = CorpusPools::build(spec);
  Rng rng(spec.seed);
  std::string out;
  out.reserve(spec.min_chars + 256);
  while (out.size() < spec.min_chars) detail::append_sentence(out, spec, pools, rng);
  return out;
}

}  // namespace backpack

#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "capsan/data.hpp"
#include "capsan/errors.hpp"
#include "capsan/model.hpp"

namespace capsan {

struct EvalMetrics {
  double token_accuracy = 0.0;
  double sequence_accuracy = 0.0;
  double bleu = 0.0;
  std::size_t examples = 0;
};

// Corpus-level unsmoothed BLEU in [0, 100]: geometric mean of modified n-gram
// precisions (n = 1..max_n) times the brevity penalty. Any n with zero matches
// or zero candidate n-grams sends the score to 0, per the classic definition.
// Token equality is exact, so string tokens compare case-sensitively.
template <typename Tok>
double corpus_bleu(const std::vector<std::vector<Tok>>& hyps,
                   const std::vector<std::vector<Tok>>& refs, int max_n = 4) {
  if (hyps.empty()) throw InputError("bleu: empty corpus");
  if (hyps.size() != refs.size())
    throw InputError("bleu: " + std::to_string(hyps.size()) + " hypotheses vs " +
                     std::to_string(refs.size()) + " references");
  if (max_n < 1) throw InputError("bleu: max_n must be positive");

  std::vector<long long> matched(static_cast<std::size_t>(max_n), 0);
  std::vector<long long> possible(static_cast<std::size_t>(max_n), 0);
  long long hyp_len = 0, ref_len = 0;

  using Gram = std::vector<Tok>;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    const auto& hyp = hyps[i];
    const auto& ref = refs[i];
    hyp_len += static_cast<long long>(hyp.size());
    ref_len += static_cast<long long>(ref.size());
    for (int n = 1; n <= max_n; ++n) {
      std::map<Gram, long long> ref_counts;
      for (std::size_t s = 0; s + n <= ref.size(); ++s)
        ++ref_counts[Gram(ref.begin() + s, ref.begin() + s + n)];
      std::map<Gram, long long> hyp_counts;
      for (std::size_t s = 0; s + n <= hyp.size(); ++s)
        ++hyp_counts[Gram(hyp.begin() + s, hyp.begin() + s + n)];
      for (const auto& [gram, count] : hyp_counts) {
        const auto it = ref_counts.find(gram);
        matched[n - 1] += std::min(count, it == ref_counts.end() ? 0LL : it->second);
      }
      if (hyp.size() >= static_cast<std::size_t>(n))
        possible[n - 1] += static_cast<long long>(hyp.size()) - n + 1;
    }
  }

  double log_precision = 0.0;
  for (int n = 0; n < max_n; ++n) {
    if (matched[n] == 0 || possible[n] == 0) return 0.0;
    log_precision += std::log(static_cast<double>(matched[n]) / possible[n]) / max_n;
  }
  const double bp =
      hyp_len >= ref_len ? 1.0 : std::exp(1.0 - static_cast<double>(ref_len) / hyp_len);
  return 100.0 * bp * std::exp(log_precision);
}

// Greedy-decodes every example; token accuracy is position-wise against the
// reference and sequence accuracy is exact match.
EvalMetrics evaluate(const Seq2SeqModel& model, const Dataset& ds);

}  // namespace capsan

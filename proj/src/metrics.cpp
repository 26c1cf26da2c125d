#include "capsan/metrics.hpp"

namespace capsan {

EvalMetrics evaluate(const Seq2SeqModel& model, const Dataset& ds) {
  if (ds.examples.empty()) throw InputError("evaluate: empty dataset");
  EvalMetrics m;
  m.examples = ds.size();
  std::size_t matched = 0, total = 0, exact = 0;
  std::vector<std::vector<int>> hyps, refs;
  hyps.reserve(ds.size());
  refs.reserve(ds.size());
  for (const auto& [src, tgt] : ds.examples) {
    std::vector<int> hyp = model.greedy_decode(src);
    total += tgt.size();
    for (std::size_t i = 0; i < tgt.size() && i < hyp.size(); ++i)
      if (hyp[i] == tgt[i]) ++matched;
    if (hyp == tgt) ++exact;
    hyps.push_back(std::move(hyp));
    refs.push_back(tgt);
  }
  m.token_accuracy = total == 0 ? 0.0 : static_cast<double>(matched) / total;
  m.sequence_accuracy = static_cast<double>(exact) / ds.size();
  m.bleu = corpus_bleu(hyps, refs);
  return m;
}

}  // namespace capsan

#pragma once

#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "autojudge/collection.hpp"

namespace autojudge::metrics {

struct TopicScore {
  std::string qid;
  std::string metric_name;
  double value = 0.0;
};

struct RunEvaluation {
  std::string run_tag;
  std::vector<TopicScore> per_topic;  // ordered by (qid, metric)
  std::map<std::string, double, std::less<>> mean;
};

struct EvalSettings {
  int k = 10;
  Grade binarize_at = 1;

  std::string ndcg_name() const { return "ndcg@" + std::to_string(k); }
  static constexpr std::string_view map_name() { return "map"; }
};

/// Graded NDCG@k with gain 2^g - 1 and discount log2(rank + 1). Unjudged
/// documents have grade 0; the ideal ordering uses every judged document of
/// the topic. Returns 0 when the ideal DCG is 0.
double ndcg_at_k(std::span<const std::string> ranked_docids, const Qrels& qrels,
                 std::string_view qid, int k);

/// Average precision where grade >= binarize_at is relevant. Divides by the
/// number of relevant documents in the qrels; 0 if there are none.
double average_precision(std::span<const std::string> ranked_docids, const Qrels& qrels,
                         std::string_view qid, Grade binarize_at = 1);

/// Both measures for every topic in `qrels`. NDCG is averaged over all qrels
/// topics, MAP over topics with at least one relevant document. Run topics
/// absent from the qrels are skipped and reported in `warnings`.
RunEvaluation evaluate_run(const Run& run, const Qrels& qrels, const EvalSettings& settings = {},
                           Warnings* warnings = nullptr);

/// CSV with header run_tag,qid,metric,value. Per-topic rows first, then the
/// "all" rows, for each evaluation in order.
std::string write_evaluations_csv(std::span<const RunEvaluation> evals);

}  // namespace autojudge::metrics

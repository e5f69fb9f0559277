#include "autojudge/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

#include "autojudge/text.hpp"

namespace autojudge::metrics {

namespace {

double gain(Grade g) { return std::ldexp(1.0, g) - 1.0; }
double discount(std::size_t rank) { return std::log2(static_cast<double>(rank) + 1.0); }

}  // namespace

double ndcg_at_k(std::span<const std::string> ranked_docids, const Qrels& qrels,
                 std::string_view qid, int k) {
  if (k < 1) throw std::invalid_argument("k must be at least 1");
  const auto* judged = qrels.topic(qid);
  if (judged == nullptr) return 0.0;

  std::vector<Grade> ideal;
  ideal.reserve(judged->size());
  for (const auto& [docid, g] : *judged) ideal.push_back(g);
  std::sort(ideal.begin(), ideal.end(), std::greater<>());

  const auto cutoff = static_cast<std::size_t>(k);
  double idcg = 0.0;
  for (std::size_t i = 0; i < std::min(cutoff, ideal.size()); ++i)
    idcg += gain(ideal[i]) / discount(i + 1);
  if (idcg == 0.0) return 0.0;

  double dcg = 0.0;
  for (std::size_t i = 0; i < std::min(cutoff, ranked_docids.size()); ++i) {
    auto it = judged->find(ranked_docids[i]);
    if (it != judged->end() && it->second > 0) dcg += gain(it->second) / discount(i + 1);
  }
  return std::min(dcg / idcg, 1.0);
}

double average_precision(std::span<const std::string> ranked_docids, const Qrels& qrels,
                         std::string_view qid, Grade binarize_at) {
  const auto* judged = qrels.topic(qid);
  if (judged == nullptr) return 0.0;
  std::size_t total_relevant = 0;
  for (const auto& [docid, g] : *judged)
    if (g >= binarize_at) ++total_relevant;
  if (total_relevant == 0) return 0.0;

  double sum = 0.0;
  std::size_t seen = 0;
  for (std::size_t i = 0; i < ranked_docids.size(); ++i) {
    auto it = judged->find(ranked_docids[i]);
    if (it != judged->end() && it->second >= binarize_at) {
      ++seen;
      sum += static_cast<double>(seen) / static_cast<double>(i + 1);
    }
  }
  return sum / static_cast<double>(total_relevant);
}

RunEvaluation evaluate_run(const Run& run, const Qrels& qrels, const EvalSettings& settings,
                           Warnings* warnings) {
  RunEvaluation ev;
  ev.run_tag = run.tag;
  const std::string ndcg_name = settings.ndcg_name();
  const std::string map_name{EvalSettings::map_name()};

  if (warnings) {
    for (const auto& qid : run.qids())
      if (qrels.topic(qid) == nullptr)
        warnings->push_back("run " + run.tag + ": topic " + qid + " has no judgments; ignored");
  }

  double ndcg_sum = 0.0, ap_sum = 0.0;
  std::size_t ndcg_n = 0, ap_n = 0;
  for (const auto& [qid, judged] : qrels.judgments()) {
    std::vector<std::string> ranking;
    for (const auto* e : run.ranked(qid)) ranking.push_back(e->docid);

    const double ndcg = ndcg_at_k(ranking, qrels, qid, settings.k);
    ev.per_topic.push_back({qid, ndcg_name, ndcg});
    ndcg_sum += ndcg;
    ++ndcg_n;

    const bool has_relevant = std::any_of(judged.begin(), judged.end(), [&](const auto& kv) {
      return kv.second >= settings.binarize_at;
    });
    if (has_relevant) {
      const double ap = average_precision(ranking, qrels, qid, settings.binarize_at);
      ev.per_topic.push_back({qid, map_name, ap});
      ap_sum += ap;
      ++ap_n;
    }
  }
  std::sort(ev.per_topic.begin(), ev.per_topic.end(), [](const auto& a, const auto& b) {
    return a.qid != b.qid ? a.qid < b.qid : a.metric_name < b.metric_name;
  });
  ev.mean[ndcg_name] = ndcg_n ? ndcg_sum / static_cast<double>(ndcg_n) : 0.0;
  ev.mean[map_name] = ap_n ? ap_sum / static_cast<double>(ap_n) : 0.0;
  return ev;
}

std::string write_evaluations_csv(std::span<const RunEvaluation> evals) {
  std::string out = "run_tag,qid,metric,value\n";
  for (const auto& ev : evals) {
    for (const auto& ts : ev.per_topic)
      out += ev.run_tag + ',' + ts.qid + ',' + ts.metric_name + ',' +
             text::format_fixed(ts.value, 6) + '\n';
    for (const auto& [name, value] : ev.mean)
      out += ev.run_tag + ",all," + name + ',' + text::format_fixed(value, 6) + '\n';
  }
  return out;
}

}  // namespace autojudge::metrics

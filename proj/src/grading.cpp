#include "autojudge/grading.hpp"

#include <algorithm>
#include <cmath>

#include "autojudge/error.hpp"

namespace autojudge::grading {

std::string_view to_string(Scope s) { return s == Scope::kGlobal ? "global" : "per_topic"; }

Scope scope_from_string(std::string_view s) {
  if (s == "global") return Scope::kGlobal;
  if (s == "per_topic") return Scope::kPerTopic;
  throw ConfigError("unknown grading scope \"" + std::string(s) + "\"");
}

double quantile(std::vector<double> values, double p) {
  if (values.empty()) throw DegenerateInputError("", "quantile of an empty list");
  std::sort(values.begin(), values.end());
  const double h = p * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= values.size()) return values.back();
  const double frac = h - static_cast<double>(lo);
  return values[lo] + frac * (values[lo + 1] - values[lo]);
}

GradeThresholds quantile_thresholds(std::span<const double> scores, Scope scope,
                                    std::string_view group) {
  if (scores.size() < kMinScoresPerGroup)
    throw DegenerateInputError(std::string(group),
                               "scope group \"" + std::string(group) + "\" has " +
                                   std::to_string(scores.size()) +
                                   " scores; at least 4 are needed for quantile grading");
  std::vector<double> v(scores.begin(), scores.end());
  GradeThresholds t;
  t.median = quantile(v, 0.5);
  t.p75 = quantile(std::move(v), 0.75);
  t.scope = scope;
  return t;
}

namespace {
std::string_view group_of(const scoring::ScoreRecord& r, Scope scope) {
  return scope == Scope::kGlobal ? std::string_view{} : std::string_view{r.qid};
}
}  // namespace

ThresholdTable compute_thresholds(std::span<const scoring::ScoreRecord> records, Scope scope) {
  std::map<std::string, std::vector<double>, std::less<>> groups;
  for (const auto& r : records) {
    auto& g = groups[std::string(group_of(r, scope))];
    if (r.scored()) g.push_back(*r.raw_score);
  }
  if (groups.empty() && scope == Scope::kGlobal) groups[""];
  ThresholdTable table;
  for (const auto& [name, scores] : groups)
    table.emplace(name, quantile_thresholds(scores, scope, name.empty() ? "global" : name));
  return table;
}

Grade grade_for(double score, const GradeThresholds& t) {
  if (score < t.median) return 0;
  if (score <= t.p75) return 1;
  return 2;
}

Qrels map_to_grades(std::span<const scoring::ScoreRecord> records, const ThresholdTable& thresholds) {
  Qrels qrels(records.empty() ? std::string("model") : records.front().model_id);
  for (const auto& r : records) {
    Grade g = 0;
    if (r.scored()) {
      auto scope = thresholds.empty() ? Scope::kGlobal : thresholds.begin()->second.scope;
      auto it = thresholds.find(group_of(r, scope));
      if (it == thresholds.end())
        throw std::logic_error("no grade thresholds for scope group of (" + r.qid + ", " +
                               r.docid + ")");
      g = grade_for(*r.raw_score, it->second);
    }
    qrels.add(r.qid, r.docid, g);
  }
  return qrels;
}

Qrels grade_records(std::span<const scoring::ScoreRecord> records, Scope scope) {
  return map_to_grades(records, compute_thresholds(records, scope));
}

}  // namespace autojudge::grading

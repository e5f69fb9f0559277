#pragma once

#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "autojudge/collection.hpp"
#include "autojudge/scoring.hpp"

namespace autojudge::grading {

enum class Scope { kGlobal, kPerTopic };

std::string_view to_string(Scope s);
Scope scope_from_string(std::string_view s);

struct GradeThresholds {
  double median = 0.0;
  double p75 = 0.0;
  Scope scope = Scope::kGlobal;
};

inline constexpr std::size_t kMinScoresPerGroup = 4;

/// Quantile by linear interpolation at index p * (n - 1) of the sorted values.
double quantile(std::vector<double> values, double p);

/// Median and 75th percentile of one scope group. `group` names the group in
/// the DegenerateInputError raised for fewer than four scores.
GradeThresholds quantile_thresholds(std::span<const double> scores, Scope scope = Scope::kGlobal,
                                    std::string_view group = "global");

/// Thresholds keyed by scope group: "" for global, otherwise the qid.
/// Unscored records are ignored.
using ThresholdTable = std::map<std::string, GradeThresholds, std::less<>>;
ThresholdTable compute_thresholds(std::span<const scoring::ScoreRecord> records, Scope scope);

/// 0 below the median, 1 inside [median, p75], 2 above p75.
Grade grade_for(double score, const GradeThresholds& t);

/// Model qrels for `records`; unscored records get grade 0. The qrels
/// source is the records' model id.
Qrels map_to_grades(std::span<const scoring::ScoreRecord> records, const ThresholdTable& thresholds);

/// compute_thresholds followed by map_to_grades.
Qrels grade_records(std::span<const scoring::ScoreRecord> records, Scope scope = Scope::kGlobal);

}  // namespace autojudge::grading

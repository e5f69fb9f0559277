#pragma once

#include <array>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "autojudge/collection.hpp"
#include "autojudge/metrics.hpp"
#include "autojudge/scoring.hpp"

namespace autojudge::metaeval {

// ---------------------------------------------------------------------------
// Correlation. All three throw UndefinedStatisticError when either side is
// constant or shorter than two values, and ValidationError on a length
// mismatch.

/// Kendall's tau-b, counted in O(n log n) with a merge sort over y.
double kendall_tau(std::span<const double> x, std::span<const double> y);
/// Pearson correlation of fractional ranks (ties share their average rank).
double spearman_rho(std::span<const double> x, std::span<const double> y);
double pearson_rho(std::span<const double> x, std::span<const double> y);

/// Fractional ranks, 1-based.
std::vector<double> fractional_ranks(std::span<const double> v);

// ---------------------------------------------------------------------------
// Label agreement

/// Rows are reference grades, columns model grades.
struct ConfusionMatrix3 {
  std::array<std::array<long, 3>, 3> counts{};

  long total() const noexcept;
  bool diagonal() const noexcept;
  bool operator==(const ConfusionMatrix3&) const = default;
};

enum class KappaWeighting { kNone, kLinear, kQuadratic };

struct AgreementOptions {
  KappaWeighting weighting = KappaWeighting::kNone;
  // Count every reference pair, treating a missing model judgment as grade 0,
  // instead of only the pairs both qrels judged.
  bool missing_as_zero = false;
};

/// Throws ValidationError when no pair is judged by both.
ConfusionMatrix3 confusion_matrix(const Qrels& ref, const Qrels& model,
                                  const AgreementOptions& options = {});

double cohen_kappa(const ConfusionMatrix3& m, KappaWeighting weighting = KappaWeighting::kNone);
double cohen_kappa(const Qrels& ref, const Qrels& model, const AgreementOptions& options = {});

// ---------------------------------------------------------------------------
// Evaluation bias

using ClassMap = std::map<std::string, SystemClass, std::less<>>;

/// 2 (M_clip - M_other) / (M_clip + M_other) * 100 over per-run mean values
/// of `metric`. Positive values favor CLIP-based runs.
double relative_delta(std::span<const metrics::RunEvaluation> evals, const ClassMap& classes,
                      std::string_view metric);

// ---------------------------------------------------------------------------
// Score distribution

struct CdfPoint {
  double score;
  double fraction;  // share of values <= score
};

std::vector<CdfPoint> score_cdf(std::span<const double> values);
/// CDF of the scored records. Throws DataError when none are scored.
std::vector<CdfPoint> score_cdf(std::span<const scoring::ScoreRecord> records);

// ---------------------------------------------------------------------------
// Full comparison

struct SystemRanking {
  std::string metric;
  std::vector<std::pair<std::string, double>> entries;  // (run_tag, mean), run order
};

/// Empty optionals are undefined statistics.
struct Correlations {
  std::optional<double> tau;
  std::optional<double> rho_s;
  std::optional<double> rho_p;
};

struct MetaReport {
  std::string model_id;
  std::vector<std::string> metrics;  // e.g. {"ndcg@10", "map"}
  std::map<std::string, Correlations, std::less<>> correlations;
  std::map<std::string, SystemRanking, std::less<>> reference_rankings;
  std::map<std::string, SystemRanking, std::less<>> model_rankings;
  double kappa = 0.0;
  ConfusionMatrix3 confusion;
  // Absent when no system classes were supplied.
  std::optional<std::map<std::string, double, std::less<>>> relative_delta;
  std::optional<std::map<std::string, double, std::less<>>> relative_delta_reference;
  std::vector<CdfPoint> cdf;
  std::map<std::string, SystemClass, std::less<>> classes;
  Warnings warnings;
};

struct CompareOptions {
  metrics::EvalSettings eval;
  AgreementOptions agreement;
};

/// Evaluates `runs` under both qrels and compares the system rankings, the
/// labels, and the class bias. `classes` may be null, in which case Relative
/// Delta is omitted with a warning. `records` feeds the score CDF and may be
/// empty.
MetaReport compare(std::span<const Run> runs, const Qrels& ref_qrels, const Qrels& model_qrels,
                   const ClassMap* classes, const CompareOptions& options = {},
                   std::span<const scoring::ScoreRecord> records = {});

/// Same, reusing precomputed evaluations (one per run, same order).
MetaReport compare_evaluations(std::span<const metrics::RunEvaluation> ref_evals,
                               std::span<const metrics::RunEvaluation> model_evals,
                               const Qrels& ref_qrels, const Qrels& model_qrels,
                               const ClassMap* classes, const CompareOptions& options = {},
                               std::span<const scoring::ScoreRecord> records = {});

// Serializations. Reals are written with six decimals; undefined statistics
// are null in JSON and "undefined" in CSV.
std::string report_json(const MetaReport& report);
std::string correlation_table_csv(const MetaReport& report);
std::string bias_table_csv(const MetaReport& report);
std::string cdf_csv(const MetaReport& report);
std::string confusion_csv(const MetaReport& report);
/// Reference vs. model mean effectiveness per run for the first metric,
/// CLIP-based runs drawn in red.
std::string scatter_svg(const MetaReport& report);

}  // namespace autojudge::metaeval

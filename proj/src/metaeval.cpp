#include "autojudge/metaeval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>

#include <nlohmann/json.hpp>

#include "autojudge/error.hpp"
#include "autojudge/text.hpp"

namespace autojudge::metaeval {

using ordered_json = nlohmann::ordered_json;

namespace {

void check_pair(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size())
    throw ValidationError("correlation inputs differ in length: " + std::to_string(x.size()) +
                          " vs " + std::to_string(y.size()));
  if (x.size() < 2) throw UndefinedStatisticError("correlation needs at least two values");
}

// Sum of t(t-1)/2 over runs of equal adjacent values in a sorted range.
template <typename It, typename Eq>
std::int64_t tied_pairs(It first, It last, Eq eq) {
  std::int64_t total = 0;
  while (first != last) {
    It run_end = std::next(first);
    while (run_end != last && eq(*first, *run_end)) ++run_end;
    const auto t = static_cast<std::int64_t>(std::distance(first, run_end));
    total += t * (t - 1) / 2;
    first = run_end;
  }
  return total;
}

// Stable merge sort of `v` counting strict inversions.
std::int64_t count_inversions(std::vector<double>& v, std::vector<double>& buf, std::size_t lo,
                              std::size_t hi) {
  if (hi - lo < 2) return 0;
  const std::size_t mid = lo + (hi - lo) / 2;
  std::int64_t inv = count_inversions(v, buf, lo, mid) + count_inversions(v, buf, mid, hi);
  std::size_t i = lo, j = mid, k = lo;
  while (i < mid && j < hi) {
    if (v[j] < v[i]) {
      inv += static_cast<std::int64_t>(mid - i);
      buf[k++] = v[j++];
    } else {
      buf[k++] = v[i++];
    }
  }
  while (i < mid) buf[k++] = v[i++];
  while (j < hi) buf[k++] = v[j++];
  std::copy(buf.begin() + static_cast<std::ptrdiff_t>(lo),
            buf.begin() + static_cast<std::ptrdiff_t>(hi), v.begin() + static_cast<std::ptrdiff_t>(lo));
  return inv;
}

double clamp_unit(double r) { return std::clamp(r, -1.0, 1.0); }

}  // namespace

double kendall_tau(std::span<const double> x, std::span<const double> y) {
  check_pair(x, y);
  const std::size_t n = x.size();
  std::vector<std::pair<double, double>> xy(n);
  for (std::size_t i = 0; i < n; ++i) xy[i] = {x[i], y[i]};
  std::sort(xy.begin(), xy.end());

  const auto n0 = static_cast<std::int64_t>(n) * static_cast<std::int64_t>(n - 1) / 2;
  const std::int64_t ties_x =
      tied_pairs(xy.begin(), xy.end(), [](const auto& a, const auto& b) { return a.first == b.first; });
  const std::int64_t ties_xy = tied_pairs(xy.begin(), xy.end(), [](const auto& a, const auto& b) {
    return a.first == b.first && a.second == b.second;
  });

  std::vector<double> ys(n), buf(n);
  for (std::size_t i = 0; i < n; ++i) ys[i] = xy[i].second;
  const std::int64_t discordant = count_inversions(ys, buf, 0, n);
  const std::int64_t ties_y =
      tied_pairs(ys.begin(), ys.end(), [](double a, double b) { return a == b; });

  const std::int64_t not_tied_x = n0 - ties_x;  // C + D + ties only in y
  const std::int64_t not_tied_y = n0 - ties_y;  // C + D + ties only in x
  if (not_tied_x == 0 || not_tied_y == 0)
    throw UndefinedStatisticError("Kendall's tau is undefined for a constant ranking");
  const std::int64_t c_minus_d = n0 - ties_x - ties_y + ties_xy - 2 * discordant;
  return clamp_unit(static_cast<double>(c_minus_d) /
                    std::sqrt(static_cast<double>(not_tied_x) * static_cast<double>(not_tied_y)));
}

std::vector<double> fractional_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i + 1;
    while (j < order.size() && v[order[j]] == v[order[i]]) ++j;
    const double avg = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = avg;
    i = j;
  }
  return ranks;
}

double pearson_rho(std::span<const double> x, std::span<const double> y) {
  check_pair(x, y);
  const auto n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0)
    throw UndefinedStatisticError("Pearson correlation is undefined for zero variance");
  return clamp_unit(sxy / std::sqrt(sxx * syy));
}

double spearman_rho(std::span<const double> x, std::span<const double> y) {
  check_pair(x, y);
  auto rx = fractional_ranks(x);
  auto ry = fractional_ranks(y);
  try {
    return pearson_rho(rx, ry);
  } catch (const UndefinedStatisticError&) {
    throw UndefinedStatisticError("Spearman correlation is undefined for a constant ranking");
  }
}

// ---------------------------------------------------------------------------

long ConfusionMatrix3::total() const noexcept {
  long t = 0;
  for (const auto& row : counts)
    for (long c : row) t += c;
  return t;
}

bool ConfusionMatrix3::diagonal() const noexcept {
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      if (i != j && counts[i][j] != 0) return false;
  return true;
}

ConfusionMatrix3 confusion_matrix(const Qrels& ref, const Qrels& model,
                                  const AgreementOptions& options) {
  ConfusionMatrix3 m;
  for (const auto& [qid, docs] : ref.judgments()) {
    for (const auto& [docid, g] : docs) {
      auto mg = model.grade(qid, docid);
      if (!mg && !options.missing_as_zero) continue;
      ++m.counts[static_cast<std::size_t>(g)][static_cast<std::size_t>(mg.value_or(0))];
    }
  }
  if (m.total() == 0) throw ValidationError("reference and model qrels share no judged pairs");
  return m;
}

double cohen_kappa(const ConfusionMatrix3& m, KappaWeighting weighting) {
  const double n = static_cast<double>(m.total());
  if (n == 0.0) throw ValidationError("kappa of an empty confusion matrix");
  std::array<double, 3> rows{}, cols{};
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      rows[i] += static_cast<double>(m.counts[i][j]);
      cols[j] += static_cast<double>(m.counts[i][j]);
    }

  if (weighting == KappaWeighting::kNone) {
    double agree = 0.0, chance = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
      agree += static_cast<double>(m.counts[i][i]);
      chance += rows[i] * cols[i];
    }
    const double p_o = agree / n;
    const double p_e = chance / (n * n);
    if (p_e == 1.0) return 1.0;  // both labelings constant and equal
    return (p_o - p_e) / (1.0 - p_e);
  }

  // Weighted: 1 - sum(w * observed) / sum(w * expected), w = disagreement weight.
  double observed = 0.0, expected = 0.0;
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      const double d = std::abs(static_cast<double>(i) - static_cast<double>(j)) / 2.0;
      const double w = weighting == KappaWeighting::kLinear ? d : d * d;
      observed += w * static_cast<double>(m.counts[i][j]) / n;
      expected += w * rows[i] * cols[j] / (n * n);
    }
  if (expected == 0.0) return 1.0;
  return 1.0 - observed / expected;
}

double cohen_kappa(const Qrels& ref, const Qrels& model, const AgreementOptions& options) {
  return cohen_kappa(confusion_matrix(ref, model, options), options.weighting);
}

// ---------------------------------------------------------------------------

double relative_delta(std::span<const metrics::RunEvaluation> evals, const ClassMap& classes,
                      std::string_view metric) {
  double clip_sum = 0.0, other_sum = 0.0;
  std::size_t clip_n = 0, other_n = 0;
  for (const auto& ev : evals) {
    auto cls = classes.find(ev.run_tag);
    if (cls == classes.end())
      throw ValidationError("run " + ev.run_tag + " has no system class");
    auto value = ev.mean.find(metric);
    if (value == ev.mean.end())
      throw ValidationError("run " + ev.run_tag + " has no mean " + std::string(metric));
    if (cls->second == SystemClass::kClipBased) {
      clip_sum += value->second;
      ++clip_n;
    } else {
      other_sum += value->second;
      ++other_n;
    }
  }
  if (clip_n == 0 || other_n == 0)
    throw ValidationError("relative delta needs at least one clip_based and one other run");
  const double m_clip = clip_sum / static_cast<double>(clip_n);
  const double m_other = other_sum / static_cast<double>(other_n);
  if (m_clip + m_other == 0.0)
    throw UndefinedStatisticError("relative delta is undefined when both class means are 0");
  return 2.0 * (m_clip - m_other) / (m_clip + m_other) * 100.0;
}

// ---------------------------------------------------------------------------

std::vector<CdfPoint> score_cdf(std::span<const double> values) {
  if (values.empty()) throw DataError("CDF of an empty score list");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<CdfPoint> cdf;
  const auto n = sorted.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (i + 1 < n && sorted[i + 1] == sorted[i]) continue;
    cdf.push_back({sorted[i], static_cast<double>(i + 1) / static_cast<double>(n)});
  }
  return cdf;
}

std::vector<CdfPoint> score_cdf(std::span<const scoring::ScoreRecord> records) {
  std::vector<double> values;
  values.reserve(records.size());
  for (const auto& r : records)
    if (r.scored()) values.push_back(*r.raw_score);
  if (values.empty()) throw DataError("no scored records for the CDF");
  return score_cdf(values);
}

// ---------------------------------------------------------------------------

namespace {

std::optional<double> defined(double (*fn)(std::span<const double>, std::span<const double>),
                              std::span<const double> x, std::span<const double> y) {
  try {
    return fn(x, y);
  } catch (const UndefinedStatisticError&) {
    return std::nullopt;
  }
}

}  // namespace

MetaReport compare(std::span<const Run> runs, const Qrels& ref_qrels, const Qrels& model_qrels,
                   const ClassMap* classes, const CompareOptions& options,
                   std::span<const scoring::ScoreRecord> records) {
  std::vector<metrics::RunEvaluation> ref_evals, model_evals;
  ref_evals.reserve(runs.size());
  model_evals.reserve(runs.size());
  for (const auto& run : runs) {
    ref_evals.push_back(metrics::evaluate_run(run, ref_qrels, options.eval));
    model_evals.push_back(metrics::evaluate_run(run, model_qrels, options.eval));
  }
  return compare_evaluations(ref_evals, model_evals, ref_qrels, model_qrels, classes, options,
                             records);
}

MetaReport compare_evaluations(std::span<const metrics::RunEvaluation> ref_evals,
                               std::span<const metrics::RunEvaluation> model_evals,
                               const Qrels& ref_qrels, const Qrels& model_qrels,
                               const ClassMap* classes, const CompareOptions& options,
                               std::span<const scoring::ScoreRecord> records) {
  if (ref_evals.size() != model_evals.size())
    throw ValidationError("reference and model evaluations cover different runs");
  MetaReport report;
  report.model_id = model_qrels.source();
  report.metrics = {options.eval.ndcg_name(), std::string(metrics::EvalSettings::map_name())};

  for (const auto& metric : report.metrics) {
    SystemRanking ref_rank{metric, {}}, model_rank{metric, {}};
    std::vector<double> xs, ys;
    for (std::size_t i = 0; i < ref_evals.size(); ++i) {
      if (ref_evals[i].run_tag != model_evals[i].run_tag)
        throw ValidationError("evaluation order differs between qrels");
      const double x = ref_evals[i].mean.at(metric);
      const double y = model_evals[i].mean.at(metric);
      ref_rank.entries.emplace_back(ref_evals[i].run_tag, x);
      model_rank.entries.emplace_back(model_evals[i].run_tag, y);
      xs.push_back(x);
      ys.push_back(y);
    }
    Correlations c;
    if (xs.size() >= 2) {
      c.tau = defined(&kendall_tau, xs, ys);
      c.rho_s = defined(&spearman_rho, xs, ys);
      c.rho_p = defined(&pearson_rho, xs, ys);
    }
    if (!c.tau || !c.rho_s || !c.rho_p)
      report.warnings.push_back("correlation for " + metric + " is undefined (constant ranking)");
    report.correlations.emplace(metric, c);
    report.reference_rankings.emplace(metric, std::move(ref_rank));
    report.model_rankings.emplace(metric, std::move(model_rank));
  }

  report.confusion = confusion_matrix(ref_qrels, model_qrels, options.agreement);
  report.kappa = cohen_kappa(report.confusion, options.agreement.weighting);

  if (classes == nullptr) {
    report.warnings.push_back("no system classes supplied; relative delta omitted");
  } else {
    report.classes = *classes;
    try {
      std::map<std::string, double, std::less<>> model_delta, ref_delta;
      for (const auto& metric : report.metrics) {
        model_delta[metric] = relative_delta(model_evals, *classes, metric);
        ref_delta[metric] = relative_delta(ref_evals, *classes, metric);
      }
      report.relative_delta = std::move(model_delta);
      report.relative_delta_reference = std::move(ref_delta);
    } catch (const DataError& e) {
      report.warnings.push_back(std::string("relative delta omitted: ") + e.what());
    }
  }

  bool any_scored = std::any_of(records.begin(), records.end(),
                                [](const auto& r) { return r.scored(); });
  if (any_scored) report.cdf = score_cdf(records);
  return report;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

double round6(double v) {
  double r = std::round(v * 1e6) / 1e6;
  return r == 0.0 ? 0.0 : r;
}

ordered_json num(const std::optional<double>& v) {
  return v ? ordered_json(round6(*v)) : ordered_json(nullptr);
}

std::string cell(const std::optional<double>& v) {
  return v ? text::format_fixed(*v, 6) : std::string("undefined");
}

const Correlations& corr_for(const MetaReport& r, const std::string& metric) {
  static const Correlations kNone;
  auto it = r.correlations.find(metric);
  return it == r.correlations.end() ? kNone : it->second;
}

}  // namespace

std::string report_json(const MetaReport& report) {
  ordered_json j;
  j["model_id"] = report.model_id;
  j["metrics"] = report.metrics;

  ordered_json corr = ordered_json::object();
  for (const auto& metric : report.metrics) {
    const auto& c = corr_for(report, metric);
    corr[metric] = {{"tau", num(c.tau)}, {"rho_s", num(c.rho_s)}, {"rho_p", num(c.rho_p)}};
  }
  j["correlations"] = corr;
  j["kappa"] = round6(report.kappa);
  j["co_judged"] = report.confusion.total();
  j["confusion"] = report.confusion.counts;

  if (report.relative_delta) {
    ordered_json model = ordered_json::object(), ref = ordered_json::object();
    for (const auto& metric : report.metrics) {
      model[metric] = round6(report.relative_delta->at(metric));
      ref[metric] = round6(report.relative_delta_reference->at(metric));
    }
    j["relative_delta"] = {{"model", model}, {"reference", ref}};
  } else {
    j["relative_delta"] = nullptr;
  }

  ordered_json runs = ordered_json::array();
  if (!report.metrics.empty()) {
    const auto& first = report.reference_rankings.at(report.metrics.front());
    for (std::size_t i = 0; i < first.entries.size(); ++i) {
      const auto& tag = first.entries[i].first;
      ordered_json run;
      run["tag"] = tag;
      auto cls = report.classes.find(tag);
      run["class"] = cls == report.classes.end() ? ordered_json(nullptr)
                                                 : ordered_json(std::string(to_string(cls->second)));
      ordered_json ref = ordered_json::object(), model = ordered_json::object();
      for (const auto& metric : report.metrics) {
        ref[metric] = round6(report.reference_rankings.at(metric).entries[i].second);
        model[metric] = round6(report.model_rankings.at(metric).entries[i].second);
      }
      run["reference"] = ref;
      run["model"] = model;
      runs.push_back(std::move(run));
    }
  }
  j["runs"] = runs;

  ordered_json cdf = ordered_json::array();
  for (const auto& p : report.cdf) cdf.push_back({round6(p.score), round6(p.fraction)});
  j["cdf"] = cdf;
  j["warnings"] = report.warnings;
  return j.dump(2) + "\n";
}

std::string correlation_table_csv(const MetaReport& report) {
  std::string out = "model";
  for (const auto& metric : report.metrics)
    out += ',' + metric + "_tau," + metric + "_rho_s," + metric + "_rho_p";
  out += ",kappa\n";
  out += report.model_id;
  for (const auto& metric : report.metrics) {
    const auto& c = corr_for(report, metric);
    out += ',' + cell(c.tau) + ',' + cell(c.rho_s) + ',' + cell(c.rho_p);
  }
  out += ',' + text::format_fixed(report.kappa, 6) + '\n';
  return out;
}

std::string bias_table_csv(const MetaReport& report) {
  std::string out = "model";
  for (const auto& metric : report.metrics) out += ",delta_" + metric;
  out += '\n';
  if (!report.relative_delta) return out;
  auto row = [&](const std::string& name, const auto& deltas) {
    out += name;
    for (const auto& metric : report.metrics) out += ',' + text::format_fixed(deltas.at(metric), 6);
    out += '\n';
  };
  row(report.model_id, *report.relative_delta);
  row("human", *report.relative_delta_reference);
  return out;
}

std::string cdf_csv(const MetaReport& report) {
  std::string out = "score,fraction\n";
  for (const auto& p : report.cdf)
    out += text::format_fixed(p.score, 6) + ',' + text::format_fixed(p.fraction, 6) + '\n';
  return out;
}

std::string confusion_csv(const MetaReport& report) {
  std::string out = "reference_grade,model_0,model_1,model_2\n";
  for (std::size_t i = 0; i < 3; ++i) {
    out += std::to_string(i);
    for (long c : report.confusion.counts[i]) out += ',' + std::to_string(c);
    out += '\n';
  }
  return out;
}

namespace {

std::string xml_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string scatter_svg(const MetaReport& report) {
  constexpr double kSize = 400.0, kMargin = 50.0;
  const double plot = kSize - 2 * kMargin;
  auto fx = [&](double v) { return text::format_fixed(kMargin + v * plot, 2); };
  auto fy = [&](double v) { return text::format_fixed(kSize - kMargin - v * plot, 2); };

  std::string metric = report.metrics.empty() ? std::string("ndcg@10") : report.metrics.front();
  std::string out =
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"400\" height=\"400\" "
      "viewBox=\"0 0 400 400\">\n"
      "<rect width=\"400\" height=\"400\" fill=\"white\"/>\n";
  out += "<line x1=\"" + fx(0) + "\" y1=\"" + fy(0) + "\" x2=\"" + fx(1) + "\" y2=\"" + fy(0) +
         "\" stroke=\"black\"/>\n";
  out += "<line x1=\"" + fx(0) + "\" y1=\"" + fy(0) + "\" x2=\"" + fx(0) + "\" y2=\"" + fy(1) +
         "\" stroke=\"black\"/>\n";
  out += "<line x1=\"" + fx(0) + "\" y1=\"" + fy(0) + "\" x2=\"" + fx(1) + "\" y2=\"" + fy(1) +
         "\" stroke=\"#bbbbbb\" stroke-dasharray=\"4 4\"/>\n";
  out += "<text x=\"200\" y=\"385\" text-anchor=\"middle\" font-size=\"12\">reference " + xml_escape(metric) +
         "</text>\n";
  out += "<text x=\"15\" y=\"200\" text-anchor=\"middle\" font-size=\"12\" "
         "transform=\"rotate(-90 15 200)\">" + xml_escape(report.model_id) + " " + xml_escape(metric) + "</text>\n";

  auto ref_it = report.reference_rankings.find(metric);
  auto model_it = report.model_rankings.find(metric);
  if (ref_it != report.reference_rankings.end() && model_it != report.model_rankings.end()) {
    for (std::size_t i = 0; i < ref_it->second.entries.size(); ++i) {
      const auto& [tag, x] = ref_it->second.entries[i];
      const double y = model_it->second.entries[i].second;
      auto cls = report.classes.find(tag);
      const bool clip = cls != report.classes.end() && cls->second == SystemClass::kClipBased;
      out += "<circle cx=\"" + fx(std::clamp(x, 0.0, 1.0)) + "\" cy=\"" +
             fy(std::clamp(y, 0.0, 1.0)) + "\" r=\"4\" fill=\"" + (clip ? "red" : "#1f77b4") +
             "\"><title>" + xml_escape(tag) + "</title></circle>\n";
    }
  }
  out += "</svg>\n";
  return out;
}

}  // namespace autojudge::metaeval

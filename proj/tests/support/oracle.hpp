// Straightforward reference implementations used as test oracles. They
// share no code with the library and favor obviousness over speed.
#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

namespace oracle {

// Grades of the ranked docs (unjudged = 0) and all judged grades of the topic.
inline double dcg(const std::vector<int>& grades, int k) {
  double s = 0;
  for (int i = 0; i < k && i < static_cast<int>(grades.size()); ++i)
    s += (std::pow(2.0, grades[i]) - 1.0) / std::log2(i + 2.0);
  return s;
}

// Maximum DCG over every ordering of the judged grades. Exhaustive for small
// sets, sorted otherwise (the maximum of a sum of gains times decreasing
// discounts is reached by the descending order).
inline double ideal_dcg(std::vector<int> judged, int k) {
  if (judged.size() <= 7) {
    std::sort(judged.begin(), judged.end());
    double best = 0;
    do best = std::max(best, dcg(judged, k));
    while (std::next_permutation(judged.begin(), judged.end()));
    return best;
  }
  std::sort(judged.rbegin(), judged.rend());
  return dcg(judged, k);
}

inline double ndcg(const std::vector<std::string>& ranking,
                   const std::map<std::string, int>& judged, int k) {
  std::vector<int> grades, all;
  for (const auto& d : ranking) {
    auto it = judged.find(d);
    grades.push_back(it == judged.end() ? 0 : it->second);
  }
  for (const auto& [d, g] : judged) all.push_back(g);
  const double idcg = ideal_dcg(all, k);
  return idcg == 0 ? 0.0 : dcg(grades, k) / idcg;
}

inline double ap(const std::vector<std::string>& ranking, const std::map<std::string, int>& judged,
                 int binarize_at) {
  auto rel = [&](const std::string& d) {
    auto it = judged.find(d);
    return it != judged.end() && it->second >= binarize_at;
  };
  int R = 0;
  for (const auto& [d, g] : judged) R += g >= binarize_at;
  if (R == 0) return 0.0;
  double sum = 0;
  for (std::size_t i = 0; i < ranking.size(); ++i) {
    if (!rel(ranking[i])) continue;
    int hits = 0;
    for (std::size_t j = 0; j <= i; ++j) hits += rel(ranking[j]);
    sum += static_cast<double>(hits) / static_cast<double>(i + 1);
  }
  return sum / R;
}

// Kendall tau-b by enumerating all pairs.
inline double kendall_tau_b(const std::vector<double>& x, const std::vector<double>& y) {
  long c = 0, d = 0, tx = 0, ty = 0;
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = i + 1; j < x.size(); ++j) {
      const double dx = x[i] - x[j], dy = y[i] - y[j];
      if (dx == 0 && dy == 0) continue;
      if (dx == 0) ++tx;
      else if (dy == 0) ++ty;
      else if ((dx > 0) == (dy > 0)) ++c;
      else ++d;
    }
  return (c - d) / std::sqrt(static_cast<double>(c + d + tx) * static_cast<double>(c + d + ty));
}

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) mx += x[i], my += y[i];
  mx /= n, my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

// Average rank by counting smaller and equal values.
inline std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<double> r;
  for (double a : v) {
    int less = 0, equal = 0;
    for (double b : v) less += b < a, equal += b == a;
    r.push_back(less + (equal + 1) / 2.0);
  }
  return r;
}

inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  return pearson(ranks(x), ranks(y));
}

// Unweighted kappa from two label vectors over {0,1,2}.
inline double kappa(const std::vector<int>& a, const std::vector<int>& b) {
  double m[3][3] = {};
  for (std::size_t i = 0; i < a.size(); ++i) m[a[i]][b[i]] += 1;
  const double n = static_cast<double>(a.size());
  double po = 0, pe = 0;
  for (int i = 0; i < 3; ++i) {
    po += m[i][i] / n;
    double row = 0, col = 0;
    for (int j = 0; j < 3; ++j) row += m[i][j], col += m[j][i];
    pe += (row / n) * (col / n);
  }
  return pe == 1 ? 1.0 : (po - pe) / (1 - pe);
}

// Linear interpolation quantile at p*(n-1).
inline double quantile(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const double h = p * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace oracle
